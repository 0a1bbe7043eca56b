#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "adapt/corpus.hpp"
#include "adapt/gateway.hpp"
#include "adapt/reasoning.hpp"
#include "adapt/templates.hpp"

namespace adapt {

enum class ChainModeKind { adapt, adapt_wo_ask, adapt_wo_disc, adapt_refine, direct, cot };

inline const char* to_string(ChainModeKind k) {
  switch (k) {
    case ChainModeKind::adapt: return "adapt";
    case ChainModeKind::adapt_wo_ask: return "adapt_wo_ask";
    case ChainModeKind::adapt_wo_disc: return "adapt_wo_disc";
    case ChainModeKind::adapt_refine: return "adapt_refine";
    case ChainModeKind::direct: return "direct";
    case ChainModeKind::cot: return "cot";
  }
  return "adapt";
}

inline ChainModeKind chain_mode_from_string(std::string_view s) {
  for (auto k : {ChainModeKind::adapt, ChainModeKind::adapt_wo_ask, ChainModeKind::adapt_wo_disc,
                 ChainModeKind::adapt_refine, ChainModeKind::direct, ChainModeKind::cot})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown chain mode '" + std::string(s) + "'");
}

// Externally supplied candidates for the refine mode (e.g. a classifier's top-k).
struct RefineCandidates {
  std::vector<std::string> charges;
  std::vector<int> articles;
};

struct ChainMode {
  ChainModeKind kind = ChainModeKind::adapt;
  RefineCandidates refine;  // adapt_refine only

  static ChainMode of(ChainModeKind k) { return ChainMode{k, {}}; }
  static ChainMode refine_with(RefineCandidates c) { return ChainMode{ChainModeKind::adapt_refine, std::move(c)}; }

  bool uses_ask() const { return kind == ChainModeKind::adapt || kind == ChainModeKind::adapt_wo_disc; }
  bool uses_discriminate() const { return kind == ChainModeKind::adapt || kind == ChainModeKind::adapt_wo_ask; }

  // Generator calls one chain makes in this mode.
  std::size_t step_count(bool sentencing_turn) const {
    std::size_t n = 1 + (uses_ask() ? 1 : 0) + (uses_discriminate() ? 1 : 0);
    return n + (sentencing_turn ? 1 : 0);
  }
};

struct ChainConfig {
  TemplateSet templates = TemplateSet::defaults();
  IntervalScheme scheme = IntervalScheme::default_scheme();
  std::string model_id = "generator";
  int max_output_tokens = 2048;
  std::size_t k = 5;
  bool predict_term = true;
  // Ask for sentencing in a follow-up turn instead of inside Predict.
  bool sentencing_turn = false;
  // Let Discriminate also propose candidate law articles.
  bool propose_articles = false;
  // Head+tail truncation budget in characters; 0 passes facts whole.
  std::size_t fact_char_budget = 0;
};

struct ChainLogEntry {
  std::string step;
  std::vector<Message> messages;
  std::optional<std::string> response;
  FinishReason finish_reason = FinishReason::stop;
  std::string detail;
  bool from_cache = false;
  int retries = 0;
  double elapsed_ms = 0;
};

using ChainLog = std::vector<ChainLogEntry>;

enum class StepFailure { parse, refusal, backend };

inline const char* to_string(StepFailure f) {
  switch (f) {
    case StepFailure::parse: return "parse";
    case StepFailure::refusal: return "refusal";
    case StepFailure::backend: return "backend";
  }
  return "backend";
}

// A chain step that could not produce its structure. Carries the raw model
// text (when any) and the log of calls made so far.
class ChainStepError : public Error {
 public:
  ChainStepError(std::string step, StepFailure kind, const std::string& msg, std::string raw = {})
      : Error(step + " step failed (" + to_string(kind) + "): " + msg),
        step_(std::move(step)),
        kind_(kind),
        raw_(std::move(raw)) {}

  const std::string& step() const noexcept { return step_; }
  StepFailure kind() const noexcept { return kind_; }
  const std::string& raw() const noexcept { return raw_; }
  const ChainLog& log() const noexcept { return log_; }
  void set_log(ChainLog log) { log_ = std::move(log); }

 private:
  std::string step_;
  StepFailure kind_;
  std::string raw_;
  ChainLog log_;
};

// Keeps the head and tail of an over-long fact, cutting on code-point
// boundaries.
inline std::string truncate_fact(std::string_view fact, std::size_t budget) {
  if (budget == 0 || utf8_length(fact) <= budget) return std::string(fact);
  auto byte_offset = [&](std::size_t cps) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < fact.size(); ++i) {
      if ((static_cast<unsigned char>(fact[i]) & 0xC0) != 0x80) {
        if (n == cps) return i;
        ++n;
      }
    }
    return fact.size();
  };
  std::size_t total = utf8_length(fact);
  std::size_t head = budget - budget / 2, tail = budget / 2;
  return std::string(fact.substr(0, byte_offset(head))) + "\n...\n" +
         std::string(fact.substr(byte_offset(total - tail)));
}

namespace detail {

inline ChatResponse call_step(Gateway& gw, const ChainConfig& cfg, const std::string& step,
                              std::vector<Message> messages, ChainLog* log) {
  ChatRequest req{cfg.model_id, std::move(messages), Decoding{true, cfg.max_output_tokens, 0.0}};
  auto t0 = std::chrono::steady_clock::now();
  ChatResponse r;
  try {
    r = gw.complete(req);
  } catch (const BackendError& e) {
    if (log) log->push_back({step, req.messages, std::nullopt, FinishReason::error, e.what(), false, 0, 0});
    throw ChainStepError(step, StepFailure::backend, e.what());
  }
  double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (log) log->push_back({step, req.messages, r.content, r.finish_reason, r.detail, r.from_cache, r.retries, ms});
  return r;
}

inline std::string require_content(const ChatResponse& r, const std::string& step) {
  if (r.finish_reason == FinishReason::refusal) throw ChainStepError(step, StepFailure::refusal, r.detail);
  if (!r.content) throw ChainStepError(step, StepFailure::backend, r.detail.empty() ? "no content" : r.detail);
  return *r.content;
}

inline TemplateVars base_vars(std::string_view fact, std::string_view defendant, const ChainConfig& cfg) {
  TemplateVars v;
  v["fact"] = truncate_fact(fact, cfg.fact_char_budget);
  v["defendant"] = std::string(defendant);
  v["k"] = std::to_string(cfg.k);
  v["predict_term"] = (cfg.predict_term && !cfg.sentencing_turn) ? "1" : "";
  v["propose_articles"] = cfg.propose_articles ? "1" : "";
  return v;
}

}  // namespace detail

inline AskSummary run_ask(std::string_view fact, std::string_view defendant, Gateway& gw, const ChainConfig& cfg,
                          ChainLog* log = nullptr) {
  if (util::trim(fact).empty()) throw ValidationError("fact is empty");
  auto prompt = cfg.templates.get("ask").render(detail::base_vars(fact, defendant, cfg));
  auto text = detail::require_content(detail::call_step(gw, cfg, "ask", {{Role::user, prompt}}, log), "ask");
  try {
    return parse_ask(text);
  } catch (const OutputParseError& e) {
    throw ChainStepError("ask", StepFailure::parse, e.what(), e.raw());
  }
}

// Ask over many (fact, defendant) pairs; results in input order.
inline std::vector<AskSummary> run_ask_batch(std::span<const std::pair<std::string, std::string>> inputs, Gateway& gw,
                                             const ChainConfig& cfg) {
  return parallel_map(inputs.size(), gw.concurrency(),
                      [&](std::size_t i) { return run_ask(inputs[i].first, inputs[i].second, gw, cfg); });
}

// `ask` may be null (the w/o-Ask ablation); the prompt then has no Ask section.
inline DiscriminationRecord run_discriminate(std::string_view fact, std::string_view defendant, const AskSummary* ask,
                                             std::size_t k, Gateway& gw, const ChainConfig& cfg,
                                             ChainLog* log = nullptr) {
  if (k == 0) throw ValidationError("k must be >= 1");
  auto vars = detail::base_vars(fact, defendant, cfg);
  vars["k"] = std::to_string(k);
  std::string tmpl = "discriminate_wo_ask";
  if (ask) {
    vars["ask"] = serialize(*ask);
    tmpl = "discriminate";
  }
  auto prompt = cfg.templates.get(tmpl).render(vars);
  auto text = detail::require_content(detail::call_step(gw, cfg, "discriminate", {{Role::user, prompt}}, log),
                                      "discriminate");
  try {
    return parse_discrimination(text, k);
  } catch (const OutputParseError& e) {
    throw ChainStepError("discriminate", StepFailure::parse, e.what(), e.raw());
  }
}

inline Prediction run_predict(std::string_view fact, std::string_view defendant, const AskSummary* ask,
                              const DiscriminationRecord* disc, const ChainMode& mode, Gateway& gw,
                              const ChainConfig& cfg, ChainLog* log = nullptr) {
  if ((ask != nullptr) != mode.uses_ask() || (disc != nullptr) != mode.uses_discriminate())
    throw ValidationError(std::string("ask/discriminate inputs do not match mode ") + to_string(mode.kind));
  auto vars = detail::base_vars(fact, defendant, cfg);
  std::string tmpl;
  switch (mode.kind) {
    case ChainModeKind::adapt: tmpl = "predict"; break;
    case ChainModeKind::adapt_wo_ask: tmpl = "predict_wo_ask"; break;
    case ChainModeKind::adapt_wo_disc: tmpl = "predict_wo_disc"; break;
    case ChainModeKind::adapt_refine: tmpl = "predict_refine"; break;
    case ChainModeKind::direct: tmpl = "direct"; break;
    case ChainModeKind::cot: tmpl = "cot"; break;
  }
  if (ask) vars["ask"] = serialize(*ask);
  if (disc) vars["discrimination"] = serialize(*disc);
  if (mode.kind == ChainModeKind::adapt_refine) {
    if (mode.refine.charges.empty()) throw ValidationError("refine mode needs candidate charges");
    std::string c;
    for (std::size_t i = 0; i < mode.refine.charges.size(); ++i)
      c += std::to_string(i + 1) + ". " + mode.refine.charges[i] + (i + 1 < mode.refine.charges.size() ? "\n" : "");
    vars["candidates"] = c;
    vars["article_candidates"] = util::join(mode.refine.articles, "\n");
  }
  std::vector<Message> convo = {{Role::user, cfg.templates.get(tmpl).render(vars)}};
  auto text = detail::require_content(detail::call_step(gw, cfg, "predict", convo, log), "predict");
  Prediction p;
  try {
    p = parse_prediction(text, cfg.predict_term && !cfg.sentencing_turn, cfg.scheme);
  } catch (const OutputParseError& e) {
    throw ChainStepError("predict", StepFailure::parse, e.what(), e.raw());
  }
  if (cfg.predict_term && cfg.sentencing_turn) {
    convo.push_back({Role::assistant, text});
    convo.push_back({Role::user, cfg.templates.get("sentencing_turn").render(vars)});
    ChatResponse r = detail::call_step(gw, cfg, "sentencing", convo, log);
    if (r.finish_reason == FinishReason::refusal) {
      p.term_status = TermStatus::refused;
      p.term_text = r.detail;
    } else if (r.content) {
      auto ans = find_final_answer(*r.content);
      apply_term(p, ans.term ? *ans.term : *r.content, cfg.scheme);
      p.raw_trace += "\n\n" + *r.content;
    } else {
      p.term_status = TermStatus::missing;
    }
  }
  return p;
}

struct ChainResult {
  std::string case_id;
  std::string defendant;
  ChainMode mode;
  std::optional<AskSummary> ask;
  std::optional<DiscriminationRecord> discrimination;
  Prediction prediction;
  ChainLog log;
};

// Runs exactly the steps the mode prescribes. Step failures propagate as
// ChainStepError carrying the log so far.
inline ChainResult run_chain(const Case& c, std::string_view defendant, const ChainMode& mode, Gateway& gw,
                             const ChainConfig& cfg) {
  if (!c.find_defendant(defendant))
    throw ValidationError("defendant '" + std::string(defendant) + "' is not part of case " + c.case_id);
  ChainResult r;
  r.case_id = c.case_id;
  r.defendant = std::string(defendant);
  r.mode = mode;
  try {
    if (mode.uses_ask()) r.ask = run_ask(c.fact, defendant, gw, cfg, &r.log);
    if (mode.uses_discriminate())
      r.discrimination = run_discriminate(c.fact, defendant, r.ask ? &*r.ask : nullptr, cfg.k, gw, cfg, &r.log);
    r.prediction = run_predict(c.fact, defendant, r.ask ? &*r.ask : nullptr,
                               r.discrimination ? &*r.discrimination : nullptr, mode, gw, cfg, &r.log);
  } catch (ChainStepError& e) {
    e.set_log(r.log);
    throw;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Serialization

inline json to_json(const AskSummary& a) {
  return {{"subject", a.subject},
          {"behaviors_and_consequences", a.behaviors_and_consequences},
          {"object", a.object},
          {"subjective_aspect", a.subjective_aspect},
          {"degraded", a.degraded}};
}

inline json to_json(const DiscriminationRecord& d) {
  json cands = json::array();
  for (const auto& c : d.candidates)
    cands.push_back({{"charge", c.charge}, {"verdict", to_string(c.verdict)}, {"rationale", c.consistency_rationale}});
  return {{"candidates", cands},
          {"candidate_articles", d.candidate_articles},
          {"differences", d.pairwise_differences},
          {"degraded", d.degraded}};
}

inline json to_json(const Prediction& p) {
  return {{"charges", p.charges},
          {"articles", std::vector<int>(p.articles.begin(), p.articles.end())},
          {"term_interval", p.term_interval ? json(*p.term_interval) : json(nullptr)},
          {"term_status", to_string(p.term_status)},
          {"term_text", p.term_text},
          {"degraded", p.degraded}};
}

inline json to_json(const ChainLog& log, bool with_timings) {
  json arr = json::array();
  for (const auto& e : log) {
    json j = {{"step", e.step},
              {"messages", messages_to_json(e.messages)},
              {"response", e.response ? json(*e.response) : json(nullptr)},
              {"finish_reason", to_string(e.finish_reason)}};
    if (!e.detail.empty()) j["detail"] = e.detail;
    if (with_timings) {
      j["from_cache"] = e.from_cache;
      j["retries"] = e.retries;
      j["elapsed_ms"] = e.elapsed_ms;
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

// `with_timings` = false gives a deterministic form for golden comparisons.
inline json to_json(const ChainResult& r, bool with_timings = true) {
  return {{"case_id", r.case_id},
          {"defendant", r.defendant},
          {"mode", to_string(r.mode.kind)},
          {"ask", r.ask ? to_json(*r.ask) : json(nullptr)},
          {"discrimination", r.discrimination ? to_json(*r.discrimination) : json(nullptr)},
          {"prediction", to_json(r.prediction)},
          {"calls", to_json(r.log, with_timings)}};
}

}  // namespace adapt
