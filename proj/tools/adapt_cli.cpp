// Command-line entry point: ingest, infer, synthesize, evaluate, quartiles, stats.

#include <iostream>

#include "CLI11.hpp"
#include "adapt/pipeline.hpp"

namespace {

using adapt::RunConfig;

struct Flags {
  std::string config;
  std::string dataset, label_pool, interval_scheme, templates_dir, refine_candidates;
  std::string predictions, reference_scores, output_dir, cache_dir;
  std::string mode, universe;
  std::optional<std::size_t> k, concurrency, sample_count;
  std::optional<std::uint64_t> seed;
  std::optional<double> error_threshold;
  bool fact_free_sentencing = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("-c,--config", f.config, "run config (JSON)");
  cmd->add_option("--dataset", f.dataset, "case file (JSONL)");
  cmd->add_option("--label-pool", f.label_pool, "label pool (JSON)");
  cmd->add_option("--interval-scheme", f.interval_scheme, "interval scheme (JSON)");
  cmd->add_option("--templates", f.templates_dir, "directory of prompt template overrides");
  cmd->add_option("-o,--output-dir", f.output_dir, "output directory");
  cmd->add_option("--seed", f.seed, "seed for sampling and shuffling");
}

RunConfig resolve(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : adapt::load_run_config(f.config);
  auto set_path = [](std::filesystem::path& dst, const std::string& v) {
    if (!v.empty()) dst = std::filesystem::absolute(v);
  };
  auto set_opt = [](std::optional<std::filesystem::path>& dst, const std::string& v) {
    if (!v.empty()) dst = std::filesystem::absolute(v);
  };
  set_path(c.dataset, f.dataset);
  set_path(c.label_pool, f.label_pool);
  set_opt(c.interval_scheme, f.interval_scheme);
  set_opt(c.templates_dir, f.templates_dir);
  set_opt(c.refine_candidates, f.refine_candidates);
  set_opt(c.predictions, f.predictions);
  set_opt(c.reference_scores, f.reference_scores);
  set_path(c.output_dir, f.output_dir);
  set_opt(c.cache_dir, f.cache_dir);
  if (!f.mode.empty()) c.mode = f.mode;
  if (!f.universe.empty()) c.universe = f.universe;
  if (f.k) c.k = *f.k;
  if (f.concurrency) c.concurrency = *f.concurrency;
  if (f.sample_count) c.sample_count = *f.sample_count;
  if (f.seed) c.seed = *f.seed;
  if (f.error_threshold) c.error_threshold = *f.error_threshold;
  if (f.fact_free_sentencing) c.fact_free_sentencing = true;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ADAPT pipeline: ask, discriminate, predict"};
  app.require_subcommand(1);
  Flags f;

  auto* ingest = app.add_subcommand("ingest", "validate a corpus and write its normalized form");
  add_common(ingest, f);

  auto* stats = app.add_subcommand("stats", "corpus statistics");
  add_common(stats, f);

  auto* infer = app.add_subcommand("infer", "run the reasoning chain over a corpus");
  add_common(infer, f);
  infer->add_option("--mode", f.mode, "adapt|adapt_wo_ask|adapt_wo_disc|adapt_refine|direct|cot");
  infer->add_option("-k", f.k, "number of candidate charges");
  infer->add_option("--refine-candidates", f.refine_candidates, "candidates for adapt_refine (JSONL)");
  infer->add_option("--cache-dir", f.cache_dir, "response cache directory");
  infer->add_option("--concurrency", f.concurrency, "in-flight request limit");
  infer->add_option("--error-threshold", f.error_threshold, "tolerated fraction of failed records");

  auto* synth = app.add_subcommand("synthesize", "build the five-task training mixture");
  add_common(synth, f);
  synth->add_option("--sample-count", f.sample_count, "number of cases to use (0 = all)");
  synth->add_option("--cache-dir", f.cache_dir, "response cache directory");
  synth->add_option("--concurrency", f.concurrency, "in-flight request limit");
  synth->add_flag("--fact-free-sentencing", f.fact_free_sentencing, "sentencing instruction without the fact");

  auto* eval = app.add_subcommand("evaluate", "score predictions against gold labels");
  add_common(eval, f);
  eval->add_option("-p,--predictions", f.predictions, "predictions (JSONL)");
  eval->add_option("--reference-scores", f.reference_scores, "per-charge reference F1 (JSON)");
  eval->add_option("--universe", f.universe, "gold|pool");

  auto* quart = app.add_subcommand("quartiles", "difficulty-quartile breakdown");
  add_common(quart, f);
  quart->add_option("-p,--predictions", f.predictions, "predictions (JSONL)");
  quart->add_option("--reference-scores", f.reference_scores, "per-charge reference F1 (JSON)");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig c = resolve(f);
    if (*ingest) {
      std::cout << adapt::cmd_ingest(c) << " cases written to " << (c.output_dir / "cases.jsonl").string() << "\n";
    } else if (*stats) {
      std::cout << adapt::util::dump_pretty(adapt::cmd_stats(c).to_json()) << "\n";
    } else if (*infer) {
      auto r = adapt::cmd_infer(c);
      std::cout << r.predictions.size() << " records, " << r.failed << " failed, "
                << r.generator_stats.chat_network_calls << " backend calls\n";
      if (r.exit_code != adapt::kExitOk)
        std::cerr << "error rate " << r.error_rate << " exceeds threshold " << c.error_threshold << "\n";
      return r.exit_code;
    } else if (*synth) {
      auto r = adapt::cmd_synthesize(c);
      std::cout << adapt::util::dump_pretty(adapt::counts_to_json(r.mixture.counts())) << "\n"
                << r.skips.size() << " skipped, " << r.leaks.size() << " leakage hits\n";
    } else if (*eval) {
      auto r = adapt::cmd_evaluate(c);
      std::cout << adapt::format_table(r.metrics);
      if (r.quartiles) std::cout << adapt::util::dump_pretty(adapt::to_json(*r.quartiles)) << "\n";
    } else if (*quart) {
      std::cout << adapt::util::dump_pretty(adapt::to_json(adapt::cmd_quartiles(c))) << "\n";
    }
  } catch (const adapt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return adapt::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return adapt::kExitConfig;
  }
  return adapt::kExitOk;
}
