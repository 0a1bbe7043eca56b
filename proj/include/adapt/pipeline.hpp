#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "adapt/chain.hpp"
#include "adapt/corpus.hpp"
#include "adapt/evaluator.hpp"
#include "adapt/gateway.hpp"
#include "adapt/http_backend.hpp"
#include "adapt/label_mapper.hpp"
#include "adapt/scripted_backend.hpp"
#include "adapt/synthesizer.hpp"
#include "adapt/templates.hpp"

namespace adapt {

namespace fs = std::filesystem;

// Exit statuses of the command-line entry point.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitErrorRate = 2;

// "scripted" reads fixture rules from `path`; "openai" talks to an
// OpenAI-compatible endpoint with the key taken from `api_key_env`.
struct BackendSpec {
  std::string type = "scripted";
  fs::path path;
  std::string base_url;
  std::string api_key_env;
  std::string model;
  int timeout_seconds = 120;
};

struct RunConfig {
  fs::path dataset;
  fs::path label_pool;
  std::optional<fs::path> interval_scheme;
  std::optional<fs::path> templates_dir;
  std::optional<fs::path> refine_candidates;
  std::optional<fs::path> predictions;
  std::optional<fs::path> reference_scores;
  fs::path output_dir = "out";
  std::optional<fs::path> cache_dir;  // defaults to <output_dir>/cache

  std::string mode = "adapt";
  std::size_t k = 5;
  bool predict_term = true;
  bool sentencing_turn = false;
  bool propose_articles = false;
  std::size_t fact_char_budget = 0;
  int max_output_tokens = 2048;

  std::optional<BackendSpec> generator;
  std::optional<BackendSpec> teacher;
  std::optional<BackendSpec> embedder;
  std::size_t concurrency = 4;
  int max_retries = 4;
  long min_request_interval_ms = 0;

  std::uint64_t seed = 0;
  double error_threshold = 0.1;  // fraction of failed records tolerated by infer
  std::string universe = "gold";
  std::optional<double> similarity_floor;

  std::size_t sample_count = 0;  // cases used by synthesize; 0 = all
  bool fact_free_sentencing = false;
  int reprompt_budget = 1;
};

namespace detail {

inline fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline BackendSpec backend_spec_from_json(const json& j, const fs::path& base) {
  BackendSpec b;
  b.type = j.value("type", std::string("scripted"));
  if (b.type != "scripted" && b.type != "openai") throw ConfigError("unknown backend type '" + b.type + "'");
  if (j.contains("path")) b.path = resolve(base, j["path"].get<std::string>());
  b.base_url = j.value("base_url", std::string{});
  b.api_key_env = j.value("api_key_env", std::string{});
  b.model = j.value("model", std::string{});
  b.timeout_seconds = j.value("timeout_seconds", 120);
  if (j.contains("api_key")) throw ConfigError("credentials must come from an environment variable (api_key_env)");
  return b;
}

inline json backend_spec_to_json(const BackendSpec& b) {
  json j = {{"type", b.type}, {"model", b.model}};
  if (b.type == "scripted") {
    j["path"] = b.path.string();
  } else {
    j["base_url"] = b.base_url;
    j["api_key_env"] = b.api_key_env;
  }
  return j;
}

}  // namespace detail

// Relative paths are resolved against `base` (the config file's directory).
inline RunConfig run_config_from_json(const json& j, const fs::path& base) {
  RunConfig c;
  try {
    auto path = [&](const char* key) { return detail::resolve(base, j.at(key).get<std::string>()); };
    auto opt_path = [&](const char* key) -> std::optional<fs::path> {
      if (!j.contains(key) || j[key].is_null()) return std::nullopt;
      return path(key);
    };
    if (j.contains("dataset")) c.dataset = path("dataset");
    if (j.contains("label_pool")) c.label_pool = path("label_pool");
    c.interval_scheme = opt_path("interval_scheme");
    c.templates_dir = opt_path("templates_dir");
    c.refine_candidates = opt_path("refine_candidates");
    c.predictions = opt_path("predictions");
    c.reference_scores = opt_path("reference_scores");
    if (j.contains("output_dir")) c.output_dir = path("output_dir");
    c.cache_dir = opt_path("cache_dir");
    c.mode = j.value("mode", c.mode);
    c.k = j.value("k", c.k);
    c.predict_term = j.value("predict_term", c.predict_term);
    c.sentencing_turn = j.value("sentencing_turn", c.sentencing_turn);
    c.propose_articles = j.value("propose_articles", c.propose_articles);
    c.fact_char_budget = j.value("fact_char_budget", c.fact_char_budget);
    c.max_output_tokens = j.value("max_output_tokens", c.max_output_tokens);
    if (j.contains("backends")) {
      const auto& b = j["backends"];
      if (b.contains("generator")) c.generator = detail::backend_spec_from_json(b["generator"], base);
      if (b.contains("teacher")) c.teacher = detail::backend_spec_from_json(b["teacher"], base);
      if (b.contains("embedder")) c.embedder = detail::backend_spec_from_json(b["embedder"], base);
    }
    c.concurrency = j.value("concurrency", c.concurrency);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.min_request_interval_ms = j.value("min_request_interval_ms", c.min_request_interval_ms);
    c.seed = j.value("seed", c.seed);
    c.error_threshold = j.value("error_threshold", c.error_threshold);
    c.universe = j.value("universe", c.universe);
    if (j.contains("similarity_floor") && !j["similarity_floor"].is_null())
      c.similarity_floor = j["similarity_floor"].get<double>();
    if (j.contains("synthesis")) {
      const auto& s = j["synthesis"];
      c.sample_count = s.value("sample_count", c.sample_count);
      c.fact_free_sentencing = s.value("fact_free_sentencing", c.fact_free_sentencing);
      c.reprompt_budget = s.value("reprompt_budget", c.reprompt_budget);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(util::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("run config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j, fs::absolute(path).parent_path());
}

inline json to_json(const RunConfig& c) {
  auto opt = [](const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); };
  json backends = json::object();
  if (c.generator) backends["generator"] = detail::backend_spec_to_json(*c.generator);
  if (c.teacher) backends["teacher"] = detail::backend_spec_to_json(*c.teacher);
  if (c.embedder) backends["embedder"] = detail::backend_spec_to_json(*c.embedder);
  return {{"dataset", c.dataset.string()},
          {"label_pool", c.label_pool.string()},
          {"interval_scheme", opt(c.interval_scheme)},
          {"templates_dir", opt(c.templates_dir)},
          {"refine_candidates", opt(c.refine_candidates)},
          {"mode", c.mode},
          {"k", c.k},
          {"predict_term", c.predict_term},
          {"sentencing_turn", c.sentencing_turn},
          {"propose_articles", c.propose_articles},
          {"fact_char_budget", c.fact_char_budget},
          {"max_output_tokens", c.max_output_tokens},
          {"backends", backends},
          {"seed", c.seed},
          {"universe", c.universe},
          {"similarity_floor", c.similarity_floor ? json(*c.similarity_floor) : json(nullptr)},
          {"synthesis",
           {{"sample_count", c.sample_count}, {"fact_free_sentencing", c.fact_free_sentencing}, {"reprompt_budget", c.reprompt_budget}}}};
}

// Hash of the settings that shape outputs. Concurrency, retries and paths of
// output/cache directories are excluded: they do not change results.
inline std::string config_hash(const RunConfig& c) { return util::sha256_hex(util::dump_compact(to_json(c))); }

// Backends supplied by the caller instead of built from the config.
struct BackendOverrides {
  std::shared_ptr<Backend> generator;
  std::shared_ptr<Backend> teacher;
  std::shared_ptr<Backend> embedder;
};

inline std::shared_ptr<Backend> make_backend(const BackendSpec& spec) {
  if (spec.type == "scripted") return ScriptedBackend::from_directory(spec.path);
  HttpBackendConfig h;
  if (!spec.base_url.empty()) h.base_url = spec.base_url;
  h.api_key = api_key_from_env(spec.api_key_env);
  if (!spec.api_key_env.empty() && h.api_key.empty())
    throw ConfigError("environment variable " + spec.api_key_env + " is not set");
  h.timeout_seconds = spec.timeout_seconds;
  return std::make_shared<HttpBackend>(h);
}

// Loaded inputs shared by the commands.
struct RunContext {
  RunConfig config;
  LabelPool pool;
  IntervalScheme scheme = IntervalScheme::default_scheme();
  TemplateSet templates = TemplateSet::defaults();
  std::shared_ptr<ResponseCache> cache;

  static RunContext open(const RunConfig& c) {
    auto must_exist = [](const fs::path& p, const char* what) {
      if (p.empty()) throw ConfigError(std::string(what) + " is not configured");
      if (!fs::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
    };
    must_exist(c.label_pool, "label pool");
    if (c.interval_scheme) must_exist(*c.interval_scheme, "interval scheme");
    if (c.templates_dir) must_exist(*c.templates_dir, "template directory");
    RunContext ctx;
    ctx.config = c;
    ctx.pool = LabelPool::load(c.label_pool);
    if (c.interval_scheme) ctx.scheme = IntervalScheme::load(*c.interval_scheme);
    if (c.templates_dir) ctx.templates = TemplateSet::load_directory(*c.templates_dir);
    return ctx;
  }

  std::vector<Case> load_cases() const {
    if (config.dataset.empty()) throw ConfigError("dataset is not configured");
    if (!fs::exists(config.dataset)) throw ConfigError("dataset not found: " + config.dataset.string());
    return load_dataset(config.dataset, pool);
  }

  std::shared_ptr<ResponseCache> response_cache() {
    if (!cache) cache = std::make_shared<ResponseCache>(config.cache_dir ? *config.cache_dir : config.output_dir / "cache");
    return cache;
  }

  Gateway gateway(const std::optional<BackendSpec>& spec, const std::shared_ptr<Backend>& override_backend,
                  const char* role) {
    std::shared_ptr<Backend> backend = override_backend;
    if (!backend) {
      if (!spec) throw ConfigError(std::string("no ") + role + " backend configured");
      backend = make_backend(*spec);
    }
    GatewayOptions o;
    o.concurrency = config.concurrency;
    o.max_retries = config.max_retries;
    o.min_request_interval = std::chrono::milliseconds(config.min_request_interval_ms);
    o.embedding_model = spec && !spec->model.empty() ? spec->model : role;
    return Gateway(std::move(backend), response_cache(), o);
  }

  std::string model_id(const std::optional<BackendSpec>& spec, const char* role) const {
    return spec && !spec->model.empty() ? spec->model : role;
  }
};

// ---------------------------------------------------------------------------
// infer

struct InferResult {
  std::vector<PredictionRecord> predictions;
  std::size_t failed = 0;
  double error_rate = 0;
  GatewayStats generator_stats;
  GatewayStats embedder_stats;
  int exit_code = kExitOk;
};

// {case_id, defendant, charges:[...], articles:[...]} per line.
inline std::map<std::pair<std::string, std::string>, RefineCandidates> load_refine_candidates(const fs::path& path) {
  std::map<std::pair<std::string, std::string>, RefineCandidates> out;
  util::for_each_jsonl(path, [&](const json& j, std::size_t lineno) {
    try {
      RefineCandidates rc;
      rc.charges = j.at("charges").get<std::vector<std::string>>();
      if (j.contains("articles")) rc.articles = j["articles"].get<std::vector<int>>();
      out[{j.at("case_id").get<std::string>(), j.at("defendant").get<std::string>()}] = std::move(rc);
    } catch (const json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  });
  return out;
}

inline json run_manifest(const RunContext& ctx, const std::string& command) {
  const auto& c = ctx.config;
  return {{"command", command},
          {"config_hash", config_hash(c)},
          {"config", to_json(c)},
          {"seed", c.seed},
          {"template_versions", ctx.templates.versions()},
          {"interval_scheme", ctx.scheme.to_json()},
          {"models",
           {{"generator", ctx.model_id(c.generator, "generator")},
            {"teacher", ctx.model_id(c.teacher, "teacher")},
            {"embedder", ctx.model_id(c.embedder, "embedder")}}}};
}

// Writes predictions.jsonl, chain_logs.jsonl, mapping_audit.jsonl,
// manifest.json and run_stats.json into the output directory.
inline InferResult cmd_infer(const RunConfig& config, const BackendOverrides& overrides = {}) {
  RunContext ctx = RunContext::open(config);
  auto cases = ctx.load_cases();
  ChainModeKind kind = chain_mode_from_string(config.mode);
  std::map<std::pair<std::string, std::string>, RefineCandidates> refine;
  if (kind == ChainModeKind::adapt_refine) {
    if (!config.refine_candidates) throw ConfigError("mode adapt_refine needs refine_candidates");
    if (!fs::exists(*config.refine_candidates))
      throw ConfigError("refine candidates not found: " + config.refine_candidates->string());
    refine = load_refine_candidates(*config.refine_candidates);
  }
  fs::create_directories(config.output_dir);

  ChainConfig cc;
  cc.templates = ctx.templates;
  cc.scheme = ctx.scheme;
  cc.model_id = ctx.model_id(config.generator, "generator");
  cc.max_output_tokens = config.max_output_tokens;
  cc.k = config.k;
  cc.predict_term = config.predict_term;
  cc.sentencing_turn = config.sentencing_turn;
  cc.propose_articles = config.propose_articles;
  cc.fact_char_budget = config.fact_char_budget;

  Gateway gen = ctx.gateway(config.generator, overrides.generator, "generator");
  Gateway emb = ctx.gateway(config.embedder, overrides.embedder, "embedder");
  LabelMapper mapper(ctx.pool, emb);
  mapper.set_similarity_floor(config.similarity_floor);

  std::vector<std::pair<const Case*, const DefendantJudgment*>> work;
  for (const auto& c : cases)
    for (const auto& d : c.defendants) work.emplace_back(&c, &d);

  struct Item {
    PredictionRecord record;
    json log;
    std::vector<json> audit;
  };
  auto items = parallel_map(work.size(), gen.concurrency(), [&](std::size_t i) {
    const Case& c = *work[i].first;
    const std::string& name = work[i].second->name;
    Item it;
    it.record.case_id = c.case_id;
    it.record.defendant = name;
    ChainMode mode = ChainMode::of(kind);
    if (kind == ChainModeKind::adapt_refine) {
      auto rc = refine.find({c.case_id, name});
      if (rc != refine.end()) mode = ChainMode::refine_with(rc->second);
    }
    try {
      ChainResult r = run_chain(c, name, mode, gen, cc);
      it.log = to_json(r, false);
      for (const auto& ch : r.prediction.charges) {
        MappingOutcome m = mapper.map_charge(ch);
        if (m.method != MappingMethod::exact) {
          json a = m.to_json();
          a["case_id"] = c.case_id;
          a["defendant"] = name;
          it.audit.push_back(std::move(a));
        }
        it.record.charges.insert(m.mapped);
      }
      json dropped = json::array();
      for (int a : r.prediction.articles) {
        if (ctx.pool.has_article(a)) it.record.articles.insert(a);
        else dropped.push_back(a);
      }
      if (!dropped.empty()) it.log["dropped_articles"] = dropped;
      it.record.term_interval = r.prediction.term_interval;
    } catch (const ChainStepError& e) {
      it.record = PredictionRecord{c.case_id, name, {}, {}, std::nullopt, e.what()};
      it.log = {{"case_id", c.case_id}, {"defendant", name}, {"mode", to_string(kind)},
                {"error", e.what()},    {"raw", e.raw()},     {"calls", to_json(e.log(), false)}};
    } catch (const Error& e) {
      it.record = PredictionRecord{c.case_id, name, {}, {}, std::nullopt, e.what()};
      it.log = {{"case_id", c.case_id}, {"defendant", name}, {"mode", to_string(kind)}, {"error", e.what()}};
    }
    return it;
  });

  InferResult res;
  std::vector<json> logs, audit;
  for (auto& it : items) {
    if (!it.record.error.empty()) ++res.failed;
    res.predictions.push_back(std::move(it.record));
    logs.push_back(std::move(it.log));
    std::move(it.audit.begin(), it.audit.end(), std::back_inserter(audit));
  }
  res.error_rate = work.empty() ? 0.0 : static_cast<double>(res.failed) / static_cast<double>(work.size());
  res.generator_stats = gen.stats();
  res.embedder_stats = emb.stats();
  if (res.error_rate > config.error_threshold) res.exit_code = kExitErrorRate;

  write_predictions(config.output_dir / "predictions.jsonl", res.predictions);
  util::write_jsonl(config.output_dir / "chain_logs.jsonl", logs);
  util::write_jsonl(config.output_dir / "mapping_audit.jsonl", audit);
  json manifest = run_manifest(ctx, "infer");
  manifest["records"] = work.size();
  manifest["failed_records"] = res.failed;
  util::write_file_atomic(config.output_dir / "manifest.json", util::dump_pretty(manifest) + "\n");
  json stats = {{"generator", res.generator_stats.to_json()},
                {"embedder", res.embedder_stats.to_json()},
                {"error_rate", res.error_rate}};
  util::write_file_atomic(config.output_dir / "run_stats.json", util::dump_pretty(stats) + "\n");
  return res;
}

// ---------------------------------------------------------------------------
// synthesize

struct SynthesizeResult {
  TrainingMixture mixture;
  std::vector<TrajectorySample> samples;  // before equal mixing
  std::vector<Skip> skips;
  std::vector<std::string> case_ids;
  std::vector<LeakHit> leaks;
};

// Seeded choice of `count` cases, returned in corpus order. 0 keeps all.
inline std::vector<Case> sample_cases(const std::vector<Case>& cases, std::size_t count, std::uint64_t seed) {
  if (count == 0 || count >= cases.size()) return cases;
  std::vector<std::size_t> idx(cases.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  util::Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  std::vector<Case> out;
  for (auto i : idx) out.push_back(cases[i]);
  return out;
}

// Writes mixture.jsonl, samples.jsonl and synthesis_manifest.json.
inline SynthesizeResult cmd_synthesize(const RunConfig& config, const BackendOverrides& overrides = {}) {
  RunContext ctx = RunContext::open(config);
  auto cases = sample_cases(ctx.load_cases(), config.sample_count, config.seed);
  fs::create_directories(config.output_dir);

  SynthConfig sc;
  sc.templates = ctx.templates;
  sc.scheme = ctx.scheme;
  sc.teacher_model = ctx.model_id(config.teacher, "teacher");
  sc.max_output_tokens = config.max_output_tokens;
  sc.k = config.k;
  sc.fact_free_sentencing = config.fact_free_sentencing;
  sc.reprompt_budget = config.reprompt_budget;
  sc.fact_char_budget = config.fact_char_budget;
  Synthesizer synth(ctx.gateway(config.teacher, overrides.teacher, "teacher"), ctx.pool, sc);

  SynthesizeResult res;
  for (const auto& c : cases) res.case_ids.push_back(c.case_id);
  auto out = synth.synthesize(cases);
  res.samples = std::move(out.samples);
  res.skips = std::move(out.skips);
  res.mixture = build_mixture(res.samples, config.seed);
  res.leaks = scan_leakage(res.mixture.samples, cases);

  emit_jsonl(res.mixture, config.output_dir / "mixture.jsonl");
  std::vector<json> rows;
  for (const auto& s : res.samples) rows.push_back(to_json(s));
  util::write_jsonl(config.output_dir / "samples.jsonl", rows);

  json manifest = run_manifest(ctx, "synthesize");
  manifest["teacher_model"] = sc.teacher_model;
  manifest["case_ids"] = res.case_ids;
  manifest["sample_counts"] = counts_to_json(task_counts(res.samples));
  manifest["mixture_counts"] = counts_to_json(res.mixture.counts());
  json skips = json::array();
  for (const auto& s : res.skips) skips.push_back(to_json(s));
  manifest["skips"] = skips;
  manifest["leakage_hits"] = res.leaks.size();
  util::write_file_atomic(config.output_dir / "synthesis_manifest.json", util::dump_pretty(manifest) + "\n");
  return res;
}

// ---------------------------------------------------------------------------
// evaluate / quartiles / stats / ingest

struct EvaluateResult {
  MetricsReport metrics;
  std::optional<QuartileReport> quartiles;
};

// Writes metrics.json and metrics.txt, plus quartiles.json when a
// reference-score file is configured.
inline EvaluateResult cmd_evaluate(const RunConfig& config) {
  RunContext ctx = RunContext::open(config);
  if (!config.predictions) throw ConfigError("no predictions file given");
  if (!fs::exists(*config.predictions)) throw ConfigError("predictions not found: " + config.predictions->string());
  auto cases = ctx.load_cases();
  auto golds = gold_records(cases, ctx.scheme);
  auto preds = align(load_predictions(*config.predictions, &ctx.pool), golds);
  EvaluateResult res;
  res.metrics = evaluate(preds, golds, ctx.pool, universe_policy_from_string(config.universe));
  fs::create_directories(config.output_dir);
  util::write_file_atomic(config.output_dir / "metrics.json", util::dump_pretty(to_json(res.metrics)) + "\n");
  util::write_file_atomic(config.output_dir / "metrics.txt", format_table(res.metrics));
  if (config.reference_scores) {
    if (!fs::exists(*config.reference_scores))
      throw ConfigError("reference scores not found: " + config.reference_scores->string());
    std::vector<std::set<std::string>> pc, gc;
    for (std::size_t i = 0; i < golds.size(); ++i) {
      pc.push_back(preds[i].charges);
      gc.push_back(golds[i].charges);
    }
    res.quartiles = difficulty_quartiles(load_reference_scores(*config.reference_scores), pc, gc);
    util::write_file_atomic(config.output_dir / "quartiles.json", util::dump_pretty(to_json(*res.quartiles)) + "\n");
  }
  return res;
}

inline QuartileReport cmd_quartiles(const RunConfig& config) {
  if (!config.reference_scores) throw ConfigError("quartiles needs reference_scores");
  auto res = cmd_evaluate(config);
  return *res.quartiles;
}

inline StatsReport cmd_stats(const RunConfig& config) {
  RunContext ctx = RunContext::open(config);
  auto cases = ctx.load_cases();
  auto stats = dataset_stats(cases, ctx.pool);
  fs::create_directories(config.output_dir);
  util::write_file_atomic(config.output_dir / "stats.json", util::dump_pretty(stats.to_json()) + "\n");
  return stats;
}

// Validates the corpus and writes its normalized form to cases.jsonl.
inline std::size_t cmd_ingest(const RunConfig& config) {
  RunContext ctx = RunContext::open(config);
  auto cases = ctx.load_cases();
  fs::create_directories(config.output_dir);
  write_dataset(config.output_dir / "cases.jsonl", cases);
  return cases.size();
}

}  // namespace adapt
