#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "adapt/chain.hpp"
#include "adapt/corpus.hpp"
#include "adapt/gateway.hpp"
#include "adapt/label_mapper.hpp"
#include "adapt/reasoning.hpp"
#include "adapt/templates.hpp"

namespace adapt {

enum class TaskKind { ask, discriminate, sentencing, article, predict_all };

inline constexpr std::array<TaskKind, 5> kAllTasks = {TaskKind::ask, TaskKind::discriminate, TaskKind::sentencing,
                                                      TaskKind::article, TaskKind::predict_all};

inline const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::ask: return "ask";
    case TaskKind::discriminate: return "discriminate";
    case TaskKind::sentencing: return "sentencing";
    case TaskKind::article: return "article";
    case TaskKind::predict_all: return "predict_all";
  }
  return "ask";
}

inline TaskKind task_from_string(std::string_view s) {
  for (auto t : kAllTasks)
    if (s == to_string(t)) return t;
  throw ValidationError("unknown task '" + std::string(s) + "'");
}

struct Provenance {
  std::string teacher_model;  // empty for templated targets
  json context_labels = json::object();
  int reprompts = 0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct TrajectorySample {
  TaskKind task = TaskKind::ask;
  std::string case_id;
  std::string defendant;
  std::string instruction;
  std::string target;
  Provenance provenance;

  friend bool operator==(const TrajectorySample&, const TrajectorySample&) = default;
};

inline json to_json(const TrajectorySample& s) {
  return {{"task", to_string(s.task)},
          {"case_id", s.case_id},
          {"defendant", s.defendant},
          {"instruction", s.instruction},
          {"target", s.target},
          {"provenance",
           {{"teacher_model", s.provenance.teacher_model},
            {"context_labels", s.provenance.context_labels},
            {"reprompts", s.provenance.reprompts}}}};
}

inline TrajectorySample sample_from_json(const json& j) {
  try {
    TrajectorySample s;
    s.task = task_from_string(j.at("task").get<std::string>());
    s.case_id = j.at("case_id").get<std::string>();
    s.defendant = j.at("defendant").get<std::string>();
    s.instruction = j.at("instruction").get<std::string>();
    s.target = j.at("target").get<std::string>();
    const auto& p = j.at("provenance");
    s.provenance.teacher_model = p.value("teacher_model", std::string{});
    s.provenance.context_labels = p.value("context_labels", json::object());
    s.provenance.reprompts = p.value("reprompts", 0);
    if (s.instruction.empty() || s.target.empty()) throw ValidationError("empty instruction or target");
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(e.what());
  }
}

// Why a sample could not be produced.
enum class SkipReason { refusal, parse, leakage, consistency, recitation, missing_article_text, backend, prerequisite };

inline const char* to_string(SkipReason r) {
  switch (r) {
    case SkipReason::refusal: return "refusal";
    case SkipReason::parse: return "parse";
    case SkipReason::leakage: return "leakage";
    case SkipReason::consistency: return "consistency";
    case SkipReason::recitation: return "recitation";
    case SkipReason::missing_article_text: return "missing_article_text";
    case SkipReason::backend: return "backend";
    case SkipReason::prerequisite: return "prerequisite";
  }
  return "backend";
}

class SynthesisError : public Error {
 public:
  SynthesisError(TaskKind task, SkipReason reason, const std::string& msg)
      : Error(std::string(to_string(task)) + " sample rejected (" + to_string(reason) + "): " + msg),
        task_(task),
        reason_(reason) {}
  TaskKind task() const noexcept { return task_; }
  SkipReason reason() const noexcept { return reason_; }

 private:
  TaskKind task_;
  SkipReason reason_;
};

struct Skip {
  std::string case_id;
  std::string defendant;
  TaskKind task;
  SkipReason reason;
  std::string message;
};

inline json to_json(const Skip& s) {
  return {{"case_id", s.case_id},
          {"defendant", s.defendant},
          {"task", to_string(s.task)},
          {"reason", to_string(s.reason)},
          {"message", s.message}};
}

// ---------------------------------------------------------------------------
// Leakage: gold charge names (case-insensitive substrings) and gold article
// numbers (whole digit runs).

inline bool contains_number(std::string_view text, int n) {
  const std::string digits = std::to_string(n);
  std::size_t pos = 0;
  while ((pos = text.find(digits, pos)) != std::string_view::npos) {
    std::size_t end = pos + digits.size();
    bool left = pos == 0 || !std::isdigit(static_cast<unsigned char>(text[pos - 1]));
    bool right = end >= text.size() || !std::isdigit(static_cast<unsigned char>(text[end]));
    if (left && right) return true;
    pos = end;
  }
  return false;
}

inline std::vector<std::string> find_leaks(std::string_view text, const std::set<std::string>& charges,
                                           const std::set<int>& articles) {
  std::vector<std::string> hits;
  for (const auto& c : charges)
    if (util::contains_ci(text, c)) hits.push_back(c);
  for (int a : articles)
    if (contains_number(text, a)) hits.push_back(std::to_string(a));
  return hits;
}

// ---------------------------------------------------------------------------

struct SynthConfig {
  TemplateSet templates = TemplateSet::defaults();
  IntervalScheme scheme = IntervalScheme::default_scheme();
  std::string teacher_model = "teacher";
  int max_output_tokens = 2048;
  std::size_t k = 5;
  // Literal reading: the sentencing instruction carries the charges only.
  bool fact_free_sentencing = false;
  int reprompt_budget = 1;
  std::size_t fact_char_budget = 0;
};

class Synthesizer {
 public:
  Synthesizer(Gateway teacher, const LabelPool& pool, SynthConfig cfg = {})
      : gw_(std::move(teacher)), pool_(pool), cfg_(std::move(cfg)) {}

  TrajectorySample synth_ask(const Case& c, const DefendantJudgment& d) {
    auto vars = base_vars(c, d);
    vars["gold_charges"] = util::join(d.charges, "; ");
    vars["gold_articles"] = util::join(d.articles, ", ");
    auto prompt = cfg_.templates.get("teacher_ask").render(vars);
    auto [target, reprompts] = ask_teacher(TaskKind::ask, prompt, [&](const std::string& raw) {
      AskSummary a = parse_or_reject(TaskKind::ask, [&] { return parse_ask(raw); });
      if (a.degraded) throw SynthesisError(TaskKind::ask, SkipReason::parse, "missing element sections");
      std::string s = serialize(a);
      check_no_leak(TaskKind::ask, s, c, d);
      return s;
    });
    TrajectorySample out = sample(TaskKind::ask, c, d, cfg_.templates.get("ask").render(vars), target, reprompts);
    out.provenance.context_labels = {{"charges", d.charges}, {"articles", d.articles}};
    return out;
  }

  // `ask_target` is the target of this defendant's ask sample; null when it
  // does not exist.
  TrajectorySample synth_discriminate(const Case& c, const DefendantJudgment& d, const std::string* ask_target) {
    if (!ask_target) throw ValidationError("discriminate sample needs the ask target of " + c.case_id + "/" + d.name);
    std::size_t k = std::max(cfg_.k, d.charges.size());
    auto vars = base_vars(c, d);
    vars["ask"] = *ask_target;
    vars["k"] = std::to_string(k);
    vars["gold_charges"] = util::join(d.charges, "; ");
    auto prompt = cfg_.templates.get("teacher_discriminate").render(vars);
    auto [target, reprompts] = ask_teacher(TaskKind::discriminate, prompt, [&](const std::string& raw) {
      DiscriminationRecord r = parse_or_reject(TaskKind::discriminate, [&] { return parse_discrimination(raw, k); });
      r.candidate_articles.clear();
      for (const auto& g : d.charges) {
        auto it = std::find_if(r.candidates.begin(), r.candidates.end(), [&](const CandidateAssessment& a) {
          return normalize_label(a.charge) == normalize_label(g);
        });
        if (it == r.candidates.end())
          throw SynthesisError(TaskKind::discriminate, SkipReason::consistency,
                               "gold charge '" + g + "' is not among the candidates");
        if (it->verdict != Verdict::consistent)
          throw SynthesisError(TaskKind::discriminate, SkipReason::consistency,
                               "gold charge '" + g + "' is not assessed as consistent");
      }
      return serialize(r);
    });
    // The student sees the plain discrimination prompt, without article proposals.
    vars["propose_articles"] = "";
    TrajectorySample out =
        sample(TaskKind::discriminate, c, d, cfg_.templates.get("discriminate").render(vars), target, reprompts);
    out.provenance.context_labels = {{"charges", d.charges}};
    return out;
  }

  TrajectorySample synth_sentencing(const Case& c, const DefendantJudgment& d) {
    const int gold = bucket_term(d.term, cfg_.scheme);
    auto vars = base_vars(c, d);
    vars["charges"] = util::join(d.charges, "; ");
    vars["gold_term"] = cfg_.scheme.label(gold);
    auto prompt = cfg_.templates.get("teacher_sentencing").render(vars);
    auto [target, reprompts] = ask_teacher(TaskKind::sentencing, prompt, [&](const std::string& raw) {
      check_range_statement(TaskKind::sentencing, raw, gold);
      return std::string(util::trim(raw));
    });
    TemplateVars student = vars;
    if (cfg_.fact_free_sentencing) student["fact"] = "";
    TrajectorySample out =
        sample(TaskKind::sentencing, c, d, cfg_.templates.get("sentencing").render(student), target, reprompts);
    out.provenance.context_labels = {{"charges", d.charges}, {"term_interval", gold}};
    return out;
  }

  TrajectorySample synth_article(const Case& c, const DefendantJudgment& d, int article) {
    if (!d.articles.count(article))
      throw ValidationError("article " + std::to_string(article) + " is not a gold article of " + c.case_id + "/" +
                            d.name);
    const std::string& text = pool_.article_text(article);
    if (util::trim(text).empty())
      throw SynthesisError(TaskKind::article, SkipReason::missing_article_text,
                           "pool has no text for article " + std::to_string(article));
    auto vars = base_vars(c, d);
    vars["article_number"] = std::to_string(article);
    vars["article_text"] = text;
    auto prompt = cfg_.templates.get("teacher_article").render(vars);
    const std::string wanted = util::collapse_whitespace(text);
    auto [target, reprompts] = ask_teacher(TaskKind::article, prompt, [&](const std::string& raw) {
      if (util::collapse_whitespace(raw).find(wanted) == std::string::npos)
        throw SynthesisError(TaskKind::article, SkipReason::recitation, "the article text is not recited verbatim");
      return std::string(util::trim(raw));
    });
    TrajectorySample out =
        sample(TaskKind::article, c, d, cfg_.templates.get("article").render(vars), target, reprompts);
    out.provenance.context_labels = {{"article", article}};
    return out;
  }

  // Templated from gold labels; no teacher call.
  TrajectorySample assemble_predict_all(const Case& c, const DefendantJudgment& d, const std::string* ask_target,
                                        const std::string* disc_target) const {
    if (!ask_target || !disc_target)
      throw ValidationError("predict_all sample needs the ask and discriminate targets of " + c.case_id + "/" +
                            d.name);
    const int gold = bucket_term(d.term, cfg_.scheme);
    std::string target = *ask_target + "\n\n" + *disc_target + "\n\n" + final_section(d, gold);
    TrajectorySample out;
    out.task = TaskKind::predict_all;
    out.case_id = c.case_id;
    out.defendant = d.name;
    out.instruction = cfg_.templates.get("predict_all").render(base_vars(c, d));
    out.target = std::move(target);
    out.provenance.context_labels = {{"charges", d.charges}, {"articles", d.articles}, {"term_interval", gold}};
    return out;
  }

  std::string final_section(const DefendantJudgment& d, int interval) const {
    return "[Charges]\n" + util::join(d.charges, "\n") + "\n[Articles]\n" + util::join(d.articles, "\n") +
           "\n[Term]\n" + cfg_.scheme.label(interval);
  }

  struct DefendantOutput {
    std::vector<TrajectorySample> samples;
    std::vector<Skip> skips;
  };

  // All five tasks for one defendant. Failures are recorded as skips; a
  // failed ask also skips discriminate and predict_all.
  DefendantOutput synthesize_defendant(const Case& c, const DefendantJudgment& d) {
    DefendantOutput out;
    auto attempt = [&](TaskKind task, auto&& fn) -> std::optional<TrajectorySample> {
      try {
        auto s = fn();
        out.samples.push_back(s);
        return s;
      } catch (const SynthesisError& e) {
        out.skips.push_back({c.case_id, d.name, task, e.reason(), e.what()});
      }
      return std::nullopt;
    };
    auto ask = attempt(TaskKind::ask, [&] { return synth_ask(c, d); });
    std::optional<TrajectorySample> disc;
    if (ask) disc = attempt(TaskKind::discriminate, [&] { return synth_discriminate(c, d, &ask->target); });
    else out.skips.push_back({c.case_id, d.name, TaskKind::discriminate, SkipReason::prerequisite, "no ask sample"});
    attempt(TaskKind::sentencing, [&] { return synth_sentencing(c, d); });
    for (int a : d.articles) attempt(TaskKind::article, [&] { return synth_article(c, d, a); });
    if (ask && disc) out.samples.push_back(assemble_predict_all(c, d, &ask->target, &disc->target));
    else out.skips.push_back({c.case_id, d.name, TaskKind::predict_all, SkipReason::prerequisite,
                              "missing ask or discriminate sample"});
    return out;
  }

  // Every defendant of every case, in parallel under the gateway limit.
  // Output order follows the input order.
  DefendantOutput synthesize(std::span<const Case> cases) {
    std::vector<std::pair<const Case*, const DefendantJudgment*>> work;
    for (const auto& c : cases)
      for (const auto& d : c.defendants) work.emplace_back(&c, &d);
    auto parts = parallel_map(work.size(), gw_.concurrency(),
                              [&](std::size_t i) { return synthesize_defendant(*work[i].first, *work[i].second); });
    DefendantOutput all;
    for (auto& p : parts) {
      std::move(p.samples.begin(), p.samples.end(), std::back_inserter(all.samples));
      std::move(p.skips.begin(), p.skips.end(), std::back_inserter(all.skips));
    }
    return all;
  }

  const SynthConfig& config() const { return cfg_; }
  Gateway& gateway() { return gw_; }

 private:
  TemplateVars base_vars(const Case& c, const DefendantJudgment& d) const {
    TemplateVars v;
    v["fact"] = truncate_fact(c.fact, cfg_.fact_char_budget);
    v["defendant"] = d.name;
    v["k"] = std::to_string(cfg_.k);
    v["propose_articles"] = "";
    return v;
  }

  TrajectorySample sample(TaskKind task, const Case& c, const DefendantJudgment& d, std::string instruction,
                          std::string target, int reprompts) const {
    TrajectorySample s;
    s.task = task;
    s.case_id = c.case_id;
    s.defendant = d.name;
    s.instruction = std::move(instruction);
    s.target = std::move(target);
    s.provenance.teacher_model = cfg_.teacher_model;
    s.provenance.reprompts = reprompts;
    return s;
  }

  template <class Fn>
  static std::invoke_result_t<Fn&> parse_or_reject(TaskKind task, Fn&& fn) {
    try {
      return fn();
    } catch (const OutputParseError& e) {
      throw SynthesisError(task, SkipReason::parse, e.what());
    }
  }

  // A charge name already present in the fact text is fact-derived, not leaked.
  static void check_no_leak(TaskKind task, const std::string& text, const Case& c, const DefendantJudgment& d) {
    std::set<std::string> charges;
    for (const auto& g : d.charges)
      if (!util::contains_ci(c.fact, g)) charges.insert(g);
    std::set<int> articles;
    for (int a : d.articles)
      if (!contains_number(c.fact, a)) articles.insert(a);
    auto hits = find_leaks(text, charges, articles);
    if (!hits.empty()) throw SynthesisError(task, SkipReason::leakage, "target names gold label '" + hits.front() + "'");
  }

  void check_range_statement(TaskKind task, const std::string& raw, int gold) const {
    auto ans = find_final_answer(raw);
    if (!ans.term) throw SynthesisError(task, SkipReason::parse, "no sentencing range statement");
    auto reading = read_sentencing(*ans.term, cfg_.scheme);
    if (!reading.interval)
      throw SynthesisError(task, SkipReason::parse, "sentencing range statement is unreadable");
    if (*reading.interval != gold)
      throw SynthesisError(task, SkipReason::consistency,
                           "sentencing range maps to interval " + std::to_string(*reading.interval) +
                               ", gold is " + std::to_string(gold));
  }

  // Calls the teacher and validates the answer. A refusal or a rejected
  // answer earns one corrective follow-up turn (per the budget).
  template <class Validate>
  std::pair<std::string, int> ask_teacher(TaskKind task, const std::string& prompt, Validate&& validate) {
    std::vector<Message> convo = {{Role::user, prompt}};
    for (int attempt = 0;; ++attempt) {
      ChatResponse r;
      try {
        r = gw_.complete({cfg_.teacher_model, convo, Decoding{true, cfg_.max_output_tokens, 0.0}});
      } catch (const BackendError& e) {
        throw SynthesisError(task, SkipReason::backend, e.what());
      }
      std::optional<SynthesisError> failure;
      if (r.finish_reason == FinishReason::refusal) {
        failure.emplace(task, SkipReason::refusal, r.detail.empty() ? "teacher refused" : r.detail);
      } else if (!r.content) {
        failure.emplace(task, SkipReason::backend, r.detail.empty() ? "no content" : r.detail);
      } else {
        try {
          return {validate(*r.content), attempt};
        } catch (const SynthesisError& e) {
          failure.emplace(e);
        }
      }
      if (attempt >= cfg_.reprompt_budget) throw *failure;
      if (r.content) convo.push_back({Role::assistant, *r.content});
      convo.push_back({Role::user, cfg_.templates.get("reprompt").render({{"reason", failure->what()}})});
    }
  }

  Gateway gw_;
  const LabelPool& pool_;
  SynthConfig cfg_;
};

// ---------------------------------------------------------------------------
// Mixture

struct TrainingMixture {
  std::vector<TrajectorySample> samples;
  std::uint64_t seed = 0;

  std::map<TaskKind, std::size_t> counts() const {
    std::map<TaskKind, std::size_t> c;
    for (auto t : kAllTasks) c[t] = 0;
    for (const auto& s : samples) ++c[s.task];
    return c;
  }
};

inline json counts_to_json(const std::map<TaskKind, std::size_t>& counts) {
  json j = json::object();
  for (const auto& [t, n] : counts) j[to_string(t)] = n;
  return j;
}

inline std::map<TaskKind, std::size_t> task_counts(std::span<const TrajectorySample> samples) {
  std::map<TaskKind, std::size_t> c;
  for (auto t : kAllTasks) c[t] = 0;
  for (const auto& s : samples) ++c[s.task];
  return c;
}

// Equalizes per-task counts by downsampling to the smallest task, then
// shuffles with `seed`. Which samples survive depends on their content
// hash only, so changing the seed changes the order but not the multiset.
inline TrainingMixture build_mixture(std::span<const TrajectorySample> samples, std::uint64_t seed) {
  std::map<TaskKind, std::vector<std::pair<std::string, std::size_t>>> by_task;
  for (std::size_t i = 0; i < samples.size(); ++i)
    by_task[samples[i].task].emplace_back(util::sha256_hex(util::dump_compact(to_json(samples[i]))), i);
  std::size_t min_count = std::numeric_limits<std::size_t>::max();
  for (auto t : kAllTasks) {
    auto it = by_task.find(t);
    if (it == by_task.end() || it->second.empty())
      throw ValidationError(std::string("no samples for task ") + to_string(t));
    min_count = std::min(min_count, it->second.size());
  }
  TrainingMixture m;
  m.seed = seed;
  for (auto t : kAllTasks) {
    auto& group = by_task[t];
    std::sort(group.begin(), group.end());
    for (std::size_t i = 0; i < min_count; ++i) m.samples.push_back(samples[group[i].second]);
  }
  util::Rng rng(seed);
  rng.shuffle(m.samples);
  return m;
}

inline void emit_jsonl(const TrainingMixture& m, const std::filesystem::path& path) {
  std::vector<json> rows;
  rows.reserve(m.samples.size());
  for (const auto& s : m.samples) rows.push_back(to_json(s));
  util::write_jsonl(path, rows);
}

inline std::vector<TrajectorySample> load_mixture(const std::filesystem::path& path) {
  std::vector<TrajectorySample> out;
  util::for_each_jsonl(path, [&](const json& j, std::size_t lineno) {
    try {
      out.push_back(sample_from_json(j));
    } catch (const Error& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  });
  return out;
}

struct LeakHit {
  std::string case_id;
  std::string defendant;
  TaskKind task;
  std::string label;
};

// Grep-style scan of ask/discriminate instructions for their own gold labels.
inline std::vector<LeakHit> scan_leakage(std::span<const TrajectorySample> samples, std::span<const Case> cases) {
  std::map<std::pair<std::string, std::string>, const DefendantJudgment*> gold;
  for (const auto& c : cases)
    for (const auto& d : c.defendants) gold[{c.case_id, d.name}] = &d;
  std::vector<LeakHit> hits;
  for (const auto& s : samples) {
    if (s.task != TaskKind::ask && s.task != TaskKind::discriminate) continue;
    auto it = gold.find({s.case_id, s.defendant});
    if (it == gold.end()) continue;
    for (auto& label : find_leaks(s.instruction, it->second->charges, it->second->articles))
      hits.push_back({s.case_id, s.defendant, s.task, label});
  }
  return hits;
}

}  // namespace adapt
