#include <gtest/gtest.h>

#include <filesystem>

#include "adapt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace adapt;

namespace {

const fs::path kData = ADAPT_TEST_DATA;

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("adapt_pipe_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig fixture(const fs::path& out) {
  RunConfig c = load_run_config(kData / "run_config.json");
  c.output_dir = out;
  return c;
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> rows;
  util::for_each_jsonl(p, [&](const json& j, std::size_t) { rows.push_back(j); });
  return rows;
}

}  // namespace

TEST(Config, ResolvesRelativePaths) {
  auto c = load_run_config(kData / "run_config.json");
  EXPECT_EQ(c.dataset, fs::absolute(kData) / "cases.jsonl");
  ASSERT_TRUE(c.generator);
  EXPECT_EQ(c.generator->path, fs::absolute(kData) / "scripted/generator");
  EXPECT_EQ(c.concurrency, 2u);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.reprompt_budget, 1);
}

TEST(Config, RejectsInlineCredentialsAndUnknownBackend) {
  json j = {{"backends", {{"generator", {{"type", "openai"}, {"api_key", "sk-x"}}}}}};
  EXPECT_THROW(run_config_from_json(j, "/"), ConfigError);
  json k = {{"backends", {{"generator", {{"type", "magic"}}}}}};
  EXPECT_THROW(run_config_from_json(k, "/"), ConfigError);
  json bad = {{"k", "five"}};
  EXPECT_THROW(run_config_from_json(bad, "/"), ConfigError);
}

TEST(Config, MissingEnvironmentKeyIsConfigError) {
  BackendSpec s{"openai", {}, "http://127.0.0.1:1/v1", "ADAPT_SURELY_UNSET_VAR", "m", 1};
  ::unsetenv("ADAPT_SURELY_UNSET_VAR");
  EXPECT_THROW(make_backend(s), ConfigError);
}

TEST(Config, HashIgnoresConcurrencyButNotSeed) {
  auto a = load_run_config(kData / "run_config.json");
  auto b = a;
  b.concurrency = 9;
  b.output_dir = "/elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 8;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Infer, WritesArtifactsAndAudit) {
  fs::path out = scratch("infer");
  auto r = cmd_infer(fixture(out));
  EXPECT_EQ(r.exit_code, kExitOk);
  EXPECT_EQ(r.predictions.size(), 12u);
  EXPECT_EQ(r.failed, 1u);
  for (const char* f : {"predictions.jsonl", "chain_logs.jsonl", "mapping_audit.jsonl", "manifest.json", "run_stats.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  auto audit = read_jsonl(out / "mapping_audit.jsonl");
  ASSERT_EQ(audit.size(), 4u);
  EXPECT_EQ(audit[1]["input"], "misuse of entrusted property");
  EXPECT_EQ(audit[1]["mapped"], "embezzlement");
  EXPECT_EQ(audit[1]["method"], "embedding");
  auto manifest = json::parse(util::read_file(out / "manifest.json"));
  EXPECT_EQ(manifest["failed_records"], 1);
  EXPECT_EQ(manifest["config_hash"], config_hash(fixture(out)));
  EXPECT_EQ(manifest["models"]["generator"], "generator");
  bool dropped = false;
  for (const auto& l : read_jsonl(out / "chain_logs.jsonl")) dropped = dropped || l.contains("dropped_articles");
  EXPECT_TRUE(dropped);
}

TEST(Infer, ErrorThresholdGivesExitCode) {
  fs::path out = scratch("threshold");
  auto c = fixture(out);
  c.error_threshold = 0.05;
  EXPECT_EQ(cmd_infer(c).exit_code, kExitErrorRate);
  c.error_threshold = 1.0 / 12;
  EXPECT_EQ(cmd_infer(c).exit_code, kExitOk);
}

TEST(Infer, ConcurrencyDoesNotChangeOutputs) {
  fs::path a = scratch("c1"), b = scratch("c4");
  auto ca = fixture(a);
  ca.concurrency = 1;
  auto cb = fixture(b);
  cb.concurrency = 4;
  cmd_infer(ca);
  cmd_infer(cb);
  for (const char* f : {"predictions.jsonl", "chain_logs.jsonl", "mapping_audit.jsonl"})
    EXPECT_EQ(util::read_file(a / f), util::read_file(b / f)) << f;
}

TEST(Infer, RefineNeedsCandidateFile) {
  fs::path out = scratch("refine");
  auto c = fixture(out);
  c.mode = "adapt_refine";
  c.refine_candidates.reset();
  EXPECT_THROW(cmd_infer(c), ConfigError);
}

TEST(Infer, MissingInputsAreConfigErrors) {
  fs::path out = scratch("missing");
  auto c = fixture(out);
  c.dataset = out / "nope.jsonl";
  EXPECT_THROW(cmd_infer(c), ConfigError);
  c = fixture(out);
  c.label_pool.clear();
  EXPECT_THROW(cmd_infer(c), ConfigError);
  c = fixture(out);
  c.mode = "bogus";
  EXPECT_THROW(cmd_infer(c), Error);
}

TEST(Evaluate, GoldenMetricsFile) {
  fs::path out = scratch("eval");
  auto c = fixture(out);
  c.predictions = kData / "golden" / "predictions.jsonl";
  auto r = cmd_evaluate(c);
  EXPECT_EQ(util::read_file(out / "metrics.json"), util::read_file(kData / "golden" / "metrics.json"));
  EXPECT_TRUE(fs::exists(out / "metrics.txt"));
  EXPECT_FALSE(r.quartiles);
  c.predictions = out / "none.jsonl";
  EXPECT_THROW(cmd_evaluate(c), ConfigError);
}

TEST(Evaluate, QuartilesWithReferenceScores) {
  fs::path out = scratch("quart");
  auto c = fixture(out);
  c.predictions = kData / "golden" / "predictions.jsonl";
  json ref = json::object();
  auto pool = LabelPool::load(c.label_pool);
  for (std::size_t i = 0; i < pool.charges().size(); ++i) ref[pool.charges()[i]] = 0.1 * static_cast<double>(i);
  util::write_file_atomic(out / "ref.json", ref.dump());
  c.reference_scores = out / "ref.json";
  auto q = cmd_quartiles(c);
  EXPECT_EQ(q.ranking.size(), 10u);
  EXPECT_EQ(q.ranking.front(), pool.charges().back());
  EXPECT_TRUE(fs::exists(out / "quartiles.json"));
}

TEST(Synthesize, MixtureArtifacts) {
  fs::path out = scratch("synth");
  auto c = fixture(out);
  c.dataset = kData / "synth_cases.jsonl";
  auto r = cmd_synthesize(c);
  EXPECT_EQ(r.mixture.samples.size(), 30u);
  EXPECT_TRUE(r.leaks.empty());
  EXPECT_EQ(load_mixture(out / "mixture.jsonl"), r.mixture.samples);
  auto m = json::parse(util::read_file(out / "synthesis_manifest.json"));
  EXPECT_EQ(m["mixture_counts"]["ask"], 6);
  EXPECT_EQ(m["sample_counts"]["article"], 7);
  EXPECT_EQ(m["leakage_hits"], 0);
}

TEST(Synthesize, SeedChangesOrderNotContent) {
  fs::path a = scratch("s1"), b = scratch("s2");
  auto ca = fixture(a), cb = fixture(b);
  ca.dataset = cb.dataset = kData / "synth_cases.jsonl";
  cb.seed = 99;
  auto ra = cmd_synthesize(ca), rb = cmd_synthesize(cb);
  auto key = [](const TrajectorySample& s) { return util::dump_compact(to_json(s)); };
  std::multiset<std::string> ka, kb;
  for (const auto& s : ra.mixture.samples) ka.insert(key(s));
  for (const auto& s : rb.mixture.samples) kb.insert(key(s));
  EXPECT_EQ(ka, kb);
  EXPECT_NE(ra.mixture.samples, rb.mixture.samples);
}

TEST(SampleCases, SeededAndInCorpusOrder) {
  auto pool = LabelPool::load(kData / "label_pool.json");
  auto cases = load_dataset(kData / "cases.jsonl", pool);
  auto a = sample_cases(cases, 4, 1), b = sample_cases(cases, 4, 1);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_LT(a[i - 1].case_id, a[i].case_id);
  EXPECT_EQ(sample_cases(cases, 0, 1).size(), cases.size());
}

TEST(StatsAndIngest, WriteFiles) {
  fs::path out = scratch("stats");
  auto c = fixture(out);
  EXPECT_EQ(cmd_stats(c).defendant_count, 12u);
  EXPECT_TRUE(fs::exists(out / "stats.json"));
  EXPECT_EQ(cmd_ingest(c), 10u);
  auto pool = LabelPool::load(c.label_pool);
  EXPECT_EQ(load_dataset(out / "cases.jsonl", pool), load_dataset(c.dataset, pool));
}
