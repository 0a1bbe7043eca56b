#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "adapt/corpus.hpp"
#include "adapt/error.hpp"
#include "adapt/util.hpp"

namespace adapt {

class EvaluationError : public Error {
 public:
  using Error::Error;
};

struct PredictionRecord {
  std::string case_id;
  std::string defendant;
  std::set<std::string> charges;
  std::set<int> articles;
  std::optional<int> term_interval;
  std::string error;  // non-empty when the chain failed for this record

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

inline json to_json(const PredictionRecord& r) {
  json j = {{"case_id", r.case_id},
            {"defendant", r.defendant},
            {"charges", std::vector<std::string>(r.charges.begin(), r.charges.end())},
            {"articles", std::vector<int>(r.articles.begin(), r.articles.end())}};
  j["term_interval"] = r.term_interval ? json(*r.term_interval) : json(nullptr);
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline PredictionRecord prediction_record_from_json(const json& j) {
  PredictionRecord r;
  try {
    r.case_id = j.at("case_id").get<std::string>();
    r.defendant = j.at("defendant").get<std::string>();
    for (const auto& c : j.at("charges")) r.charges.insert(c.get<std::string>());
    for (const auto& a : j.at("articles")) r.articles.insert(a.get<int>());
    if (j.contains("term_interval") && !j["term_interval"].is_null()) {
      int t = j["term_interval"].get<int>();
      if (t < 0 || t >= kIntervalCount) throw ValidationError("term_interval out of range");
      r.term_interval = t;
    }
    r.error = j.value("error", std::string{});
  } catch (const json::exception& e) {
    throw ValidationError(e.what());
  }
  return r;
}

// With a pool, every label must be canonical.
inline std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path,
                                                      const LabelPool* pool = nullptr) {
  std::vector<PredictionRecord> out;
  util::for_each_jsonl(path, [&](const json& j, std::size_t lineno) {
    try {
      auto r = prediction_record_from_json(j);
      if (pool) {
        for (const auto& c : r.charges)
          if (!pool->has_charge(c)) throw UnknownLabelError(c, "predicted charges");
        for (int a : r.articles)
          if (!pool->has_article(a)) throw UnknownLabelError(std::to_string(a), "predicted articles");
      }
      out.push_back(std::move(r));
    } catch (const Error& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  });
  return out;
}

inline void write_predictions(const std::filesystem::path& path, std::span<const PredictionRecord> records) {
  std::vector<json> rows;
  for (const auto& r : records) rows.push_back(to_json(r));
  util::write_jsonl(path, rows);
}

// One gold record per (case, defendant), in corpus order.
inline std::vector<PredictionRecord> gold_records(std::span<const Case> cases, const IntervalScheme& scheme) {
  std::vector<PredictionRecord> out;
  for (const auto& c : cases)
    for (const auto& d : c.defendants)
      out.push_back({c.case_id, d.name, d.charges, d.articles, bucket_term(d.term, scheme), {}});
  return out;
}

// Reorders predictions to match gold order. Keys must match one-to-one.
inline std::vector<PredictionRecord> align(std::span<const PredictionRecord> preds,
                                           std::span<const PredictionRecord> golds) {
  std::map<std::pair<std::string, std::string>, const PredictionRecord*> by_key;
  for (const auto& p : preds)
    if (!by_key.emplace(std::make_pair(p.case_id, p.defendant), &p).second)
      throw EvaluationError("duplicate prediction for " + p.case_id + "/" + p.defendant);
  std::vector<PredictionRecord> out;
  out.reserve(golds.size());
  std::set<std::pair<std::string, std::string>> gold_keys;
  for (const auto& g : golds) {
    auto key = std::make_pair(g.case_id, g.defendant);
    if (!gold_keys.insert(key).second) throw EvaluationError("duplicate gold record for " + g.case_id + "/" + g.defendant);
    auto it = by_key.find(key);
    if (it == by_key.end()) throw EvaluationError("no prediction for " + g.case_id + "/" + g.defendant);
    out.push_back(*it->second);
  }
  if (preds.size() != golds.size()) throw EvaluationError("predictions contain keys absent from the gold set");
  return out;
}

// ---------------------------------------------------------------------------
// Multi-label metrics over aligned label sets.

struct PRF {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

template <class L>
struct LabelScore {
  L label;
  long tp = 0, fp = 0, fn = 0;
  PRF prf;
};

inline double safe_div(double num, double den) { return den == 0 ? 0.0 : num / den; }

inline PRF prf_from_counts(long tp, long fp, long fn) {
  PRF s;
  s.precision = safe_div(static_cast<double>(tp), static_cast<double>(tp + fp));
  s.recall = safe_div(static_cast<double>(tp), static_cast<double>(tp + fn));
  s.f1 = safe_div(2 * s.precision * s.recall, s.precision + s.recall);
  return s;
}

template <class L>
void check_aligned(std::span<const std::set<L>> preds, std::span<const std::set<L>> golds) {
  if (preds.size() != golds.size()) throw EvaluationError("prediction and gold record counts differ");
}

// Fraction of records whose predicted set equals the gold set exactly.
template <class L>
double subset_accuracy(std::span<const std::set<L>> preds, std::span<const std::set<L>> golds) {
  check_aligned(preds, golds);
  if (golds.empty()) throw EvaluationError("subset accuracy is undefined on an empty record set");
  long hits = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) hits += preds[i] == golds[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(golds.size());
}

template <class L>
std::vector<L> gold_universe(std::span<const std::set<L>> golds) {
  std::set<L> u;
  for (const auto& g : golds) u.insert(g.begin(), g.end());
  return {u.begin(), u.end()};
}

template <class L>
std::vector<LabelScore<L>> per_label_scores(std::span<const std::set<L>> preds, std::span<const std::set<L>> golds,
                                            const std::vector<L>& universe) {
  check_aligned(preds, golds);
  std::vector<LabelScore<L>> out;
  out.reserve(universe.size());
  for (const auto& label : universe) {
    LabelScore<L> s;
    s.label = label;
    for (std::size_t i = 0; i < golds.size(); ++i) {
      bool p = preds[i].count(label) > 0, g = golds[i].count(label) > 0;
      if (p && g) ++s.tp;
      else if (p) ++s.fp;
      else if (g) ++s.fn;
    }
    s.prf = prf_from_counts(s.tp, s.fp, s.fn);
    out.push_back(std::move(s));
  }
  return out;
}

// Unweighted means over the universe; Ma-F averages per-label F1.
template <class L>
PRF macro_prf(std::span<const std::set<L>> preds, std::span<const std::set<L>> golds, const std::vector<L>& universe) {
  if (universe.empty()) throw EvaluationError("macro metrics need a non-empty label universe");
  PRF m;
  for (const auto& s : per_label_scores(preds, golds, universe)) {
    m.precision += s.prf.precision;
    m.recall += s.prf.recall;
    m.f1 += s.prf.f1;
  }
  double n = static_cast<double>(universe.size());
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  return m;
}

// ---------------------------------------------------------------------------
// Term intervals: single-label multi-class. An absent prediction is wrong
// and counts as a false negative for its gold class only.

struct TermMetrics {
  double accuracy = 0;
  PRF macro;
  long refusals = 0;
  long support = 0;
};

inline TermMetrics term_metrics(std::span<const std::optional<int>> preds, std::span<const int> golds,
                                const std::vector<int>& universe) {
  if (preds.size() != golds.size()) throw EvaluationError("prediction and gold record counts differ");
  if (golds.empty()) throw EvaluationError("term metrics are undefined on an empty record set");
  if (universe.empty()) throw EvaluationError("term metrics need a non-empty class universe");
  TermMetrics t;
  t.support = static_cast<long>(golds.size());
  long hits = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (!preds[i]) ++t.refusals;
    else if (*preds[i] == golds[i]) ++hits;
  }
  t.accuracy = static_cast<double>(hits) / static_cast<double>(golds.size());
  for (int c : universe) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) {
      bool p = preds[i] && *preds[i] == c, g = golds[i] == c;
      if (p && g) ++tp;
      else if (p) ++fp;
      else if (g) ++fn;
    }
    PRF s = prf_from_counts(tp, fp, fn);
    t.macro.precision += s.precision;
    t.macro.recall += s.recall;
    t.macro.f1 += s.f1;
  }
  double n = static_cast<double>(universe.size());
  t.macro.precision /= n;
  t.macro.recall /= n;
  t.macro.f1 /= n;
  return t;
}

// ---------------------------------------------------------------------------
// Report

enum class UniversePolicy { gold_occurring, full_pool };

inline UniversePolicy universe_policy_from_string(std::string_view s) {
  if (s == "gold") return UniversePolicy::gold_occurring;
  if (s == "pool") return UniversePolicy::full_pool;
  throw ConfigError("universe must be 'gold' or 'pool'");
}

struct SubtaskMetrics {
  double accuracy = 0;
  PRF macro;
  std::size_t universe_size = 0;
  long support = 0;
};

struct MetricsReport {
  SubtaskMetrics charges;
  SubtaskMetrics articles;
  SubtaskMetrics term;
  long term_refusals = 0;
  long failed_records = 0;
  UniversePolicy universe = UniversePolicy::gold_occurring;
};

inline json to_json(const SubtaskMetrics& m) {
  return {{"accuracy", m.accuracy},         {"macro_precision", m.macro.precision},
          {"macro_recall", m.macro.recall}, {"macro_f1", m.macro.f1},
          {"universe_size", m.universe_size}, {"support", m.support}};
}

inline json to_json(const MetricsReport& r) {
  json term = to_json(r.term);
  term["refusals"] = r.term_refusals;
  return {{"universe", r.universe == UniversePolicy::gold_occurring ? "gold" : "pool"},
          {"records", r.charges.support},
          {"failed_records", r.failed_records},
          {"charges", to_json(r.charges)},
          {"articles", to_json(r.articles)},
          {"term", term}};
}

// `preds` must already be aligned with `golds`.
inline MetricsReport evaluate(std::span<const PredictionRecord> preds, std::span<const PredictionRecord> golds,
                              const LabelPool& pool, UniversePolicy policy = UniversePolicy::gold_occurring) {
  if (preds.size() != golds.size()) throw EvaluationError("prediction and gold record counts differ");
  std::vector<std::set<std::string>> pc, gc;
  std::vector<std::set<int>> pa, ga;
  std::vector<std::optional<int>> pt;
  std::vector<int> gt;
  MetricsReport r;
  r.universe = policy;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (preds[i].case_id != golds[i].case_id || preds[i].defendant != golds[i].defendant)
      throw EvaluationError("records are not aligned at position " + std::to_string(i));
    if (!golds[i].term_interval) throw EvaluationError("gold term missing for " + golds[i].case_id);
    pc.push_back(preds[i].charges);
    gc.push_back(golds[i].charges);
    pa.push_back(preds[i].articles);
    ga.push_back(golds[i].articles);
    pt.push_back(preds[i].term_interval);
    gt.push_back(*golds[i].term_interval);
    if (!preds[i].error.empty()) ++r.failed_records;
  }
  std::vector<std::string> cu;
  std::vector<int> au, tu;
  if (policy == UniversePolicy::gold_occurring) {
    cu = gold_universe<std::string>(gc);
    au = gold_universe<int>(ga);
    std::set<int> s(gt.begin(), gt.end());
    tu.assign(s.begin(), s.end());
  } else {
    cu = pool.charges();
    for (const auto& [n, _] : pool.articles()) au.push_back(n);
    for (int i = 0; i < kIntervalCount; ++i) tu.push_back(i);
  }
  long n = static_cast<long>(golds.size());
  r.charges = {subset_accuracy<std::string>(pc, gc), macro_prf<std::string>(pc, gc, cu), cu.size(), n};
  r.articles = {subset_accuracy<int>(pa, ga), macro_prf<int>(pa, ga, au), au.size(), n};
  auto tm = term_metrics(pt, gt, tu);
  r.term = {tm.accuracy, tm.macro, tu.size(), n};
  r.term_refusals = tm.refusals;
  return r;
}

inline std::string format_table(const MetricsReport& r) {
  std::string out = "subtask    Acc.    Ma-P    Ma-R    Ma-F   labels\n";
  auto row = [&](const char* name, const SubtaskMetrics& m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-8s %6.2f  %6.2f  %6.2f  %6.2f   %zu\n", name, 100 * m.accuracy,
                  100 * m.macro.precision, 100 * m.macro.recall, 100 * m.macro.f1, m.universe_size);
    out += buf;
  };
  row("charge", r.charges);
  row("article", r.articles);
  row("term", r.term);
  out += "records: " + std::to_string(r.charges.support) + ", term refusals: " + std::to_string(r.term_refusals) +
         ", failed records: " + std::to_string(r.failed_records) +
         ", universe: " + (r.universe == UniversePolicy::gold_occurring ? "gold" : "pool") + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Difficulty quartiles: rank charges by a reference system's per-charge F1
// (descending, ties by name) and score the evaluated system on each quarter.

struct QuartileReport {
  std::vector<std::string> ranking;
  std::array<std::vector<std::string>, 4> sets;
  std::array<std::optional<double>, 4> macro_f1;  // empty for an empty set
};

// Sizes of the four contiguous sets; earlier sets take the remainder.
inline std::array<std::size_t, 4> quartile_sizes(std::size_t n) {
  std::array<std::size_t, 4> s{};
  for (std::size_t i = 0; i < 4; ++i) s[i] = n / 4 + (i < n % 4 ? 1 : 0);
  return s;
}

inline std::vector<std::string> rank_by_reference(const std::map<std::string, double>& reference,
                                                  const std::vector<std::string>& charges) {
  std::vector<std::string> ranked = charges;
  for (const auto& c : ranked)
    if (!reference.count(c)) throw EvaluationError("no reference score for charge '" + c + "'");
  std::sort(ranked.begin(), ranked.end(), [&](const std::string& a, const std::string& b) {
    double sa = reference.at(a), sb = reference.at(b);
    return sa != sb ? sa > sb : a < b;
  });
  return ranked;
}

inline QuartileReport difficulty_quartiles(const std::map<std::string, double>& reference,
                                           std::span<const std::set<std::string>> preds,
                                           std::span<const std::set<std::string>> golds) {
  QuartileReport q;
  q.ranking = rank_by_reference(reference, gold_universe<std::string>(golds));
  auto scores = per_label_scores<std::string>(preds, golds, q.ranking);
  auto sizes = quartile_sizes(q.ranking.size());
  std::size_t at = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    double sum = 0;
    for (std::size_t i = 0; i < sizes[s]; ++i, ++at) {
      q.sets[s].push_back(q.ranking[at]);
      sum += scores[at].prf.f1;
    }
    if (sizes[s] > 0) q.macro_f1[s] = sum / static_cast<double>(sizes[s]);
  }
  return q;
}

inline json to_json(const QuartileReport& q) {
  json sets = json::array();
  static const char* kNames[] = {"0-25%", "25-50%", "50-75%", "75-100%"};
  for (std::size_t s = 0; s < 4; ++s)
    sets.push_back({{"range", kNames[s]},
                    {"charges", q.sets[s]},
                    {"macro_f1", q.macro_f1[s] ? json(*q.macro_f1[s]) : json(nullptr)}});
  return {{"ranking", q.ranking}, {"sets", sets}};
}

inline std::map<std::string, double> load_reference_scores(const std::filesystem::path& path) {
  try {
    return json::parse(util::read_file(path)).get<std::map<std::string, double>>();
  } catch (const json::exception& e) {
    throw ConfigError("reference scores " + path.string() + ": " + e.what());
  }
}

}  // namespace adapt
