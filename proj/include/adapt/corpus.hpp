#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include "adapt/error.hpp"
#include "adapt/util.hpp"

namespace adapt {

// ---------------------------------------------------------------------------
// Term of imprisonment

struct MonthsTerm {
  std::int64_t months = 0;
  friend bool operator==(const MonthsTerm&, const MonthsTerm&) = default;
};
struct LifeImprisonment {
  friend bool operator==(const LifeImprisonment&, const LifeImprisonment&) = default;
};
struct DeathPenalty {
  friend bool operator==(const DeathPenalty&, const DeathPenalty&) = default;
};
struct NoCustody {
  friend bool operator==(const NoCustody&, const NoCustody&) = default;
};

using TermValue = std::variant<MonthsTerm, LifeImprisonment, DeathPenalty, NoCustody>;

enum class TermMarker { none, life, death };

inline const char* to_string(TermMarker m) {
  switch (m) {
    case TermMarker::none: return "none";
    case TermMarker::life: return "life";
    case TermMarker::death: return "death";
  }
  return "none";
}

inline json term_to_json(const TermValue& t) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, MonthsTerm>) return {{"months", v.months}};
        else if constexpr (std::is_same_v<T, LifeImprisonment>) return {{"special", "life"}};
        else if constexpr (std::is_same_v<T, DeathPenalty>) return {{"special", "death"}};
        else return {{"special", "none"}};
      },
      t);
}

inline TermValue term_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("term must be an object");
  if (j.contains("months") && j.contains("special"))
    throw ValidationError("term must carry exactly one of 'months' or 'special'");
  if (j.contains("months")) {
    const auto& m = j.at("months");
    if (!m.is_number_integer() || m.get<std::int64_t>() < 0)
      throw ValidationError("term.months must be a non-negative integer");
    return MonthsTerm{m.get<std::int64_t>()};
  }
  if (j.contains("special")) {
    const auto& s = j.at("special");
    if (s == "life") return LifeImprisonment{};
    if (s == "death") return DeathPenalty{};
    if (s == "none") return NoCustody{};
    throw ValidationError("term.special must be one of life, death, none");
  }
  throw ValidationError("term must carry 'months' or 'special'");
}

// ---------------------------------------------------------------------------
// Interval scheme

inline constexpr int kIntervalCount = 11;

// Months in (min_exclusive, max_inclusive]; max_inclusive empty means unbounded.
struct MonthRange {
  std::int64_t min_exclusive = -1;
  std::optional<std::int64_t> max_inclusive;

  bool contains(std::int64_t months) const {
    return months > min_exclusive && (!max_inclusive || months <= *max_inclusive);
  }
};

struct TermInterval {
  int index = 0;
  std::optional<MonthRange> months;  // empty for marker-only classes
  std::string label;
};

class IntervalScheme {
 public:
  IntervalScheme(std::vector<TermInterval> intervals, std::map<TermMarker, int> markers)
      : intervals_(std::move(intervals)), markers_(std::move(markers)) {
    validate();
  }

  // 0 = no custody, 1 = (0,6], 2 = (6,9], 3 = (9,12], 4 = (12,24], 5 = (24,36],
  // 6 = (36,60], 7 = (60,84], 8 = (84,120], 9 = >120 months, 10 = life or death.
  static IntervalScheme default_scheme() {
    std::vector<TermInterval> iv = {
        {0, MonthRange{-1, 0}, "no imprisonment"},
        {1, MonthRange{0, 6}, "up to 6 months"},
        {2, MonthRange{6, 9}, "over 6 months up to 9 months"},
        {3, MonthRange{9, 12}, "over 9 months up to 1 year"},
        {4, MonthRange{12, 24}, "over 1 year up to 2 years"},
        {5, MonthRange{24, 36}, "over 2 years up to 3 years"},
        {6, MonthRange{36, 60}, "over 3 years up to 5 years"},
        {7, MonthRange{60, 84}, "over 5 years up to 7 years"},
        {8, MonthRange{84, 120}, "over 7 years up to 10 years"},
        {9, MonthRange{120, std::nullopt}, "over 10 years"},
        {10, std::nullopt, "life imprisonment or death penalty"},
    };
    return IntervalScheme(std::move(iv), {{TermMarker::none, 0}, {TermMarker::life, 10}, {TermMarker::death, 10}});
  }

  // {"intervals":[{index, min_months_exclusive, max_months_inclusive, label}],
  //  "special":{"none":i, "life":j, "death":k}}
  // An interval with neither month field is reachable only through markers.
  static IntervalScheme from_json(const json& j) {
    try {
      std::vector<TermInterval> iv;
      for (const auto& e : j.at("intervals")) {
        TermInterval t;
        t.index = e.at("index").get<int>();
        bool has_min = e.contains("min_months_exclusive") && !e["min_months_exclusive"].is_null();
        bool has_max = e.contains("max_months_inclusive") && !e["max_months_inclusive"].is_null();
        if (has_min) {
          MonthRange r;
          r.min_exclusive = e["min_months_exclusive"].get<std::int64_t>();
          if (has_max) r.max_inclusive = e["max_months_inclusive"].get<std::int64_t>();
          t.months = r;
        } else if (has_max) {
          throw ValidationError("interval " + std::to_string(t.index) +
                                ": max_months_inclusive without min_months_exclusive");
        }
        t.label = e.value("label", std::string{});
        iv.push_back(std::move(t));
      }
      std::map<TermMarker, int> markers;
      const auto& sp = j.at("special");
      for (auto m : {TermMarker::none, TermMarker::life, TermMarker::death})
        markers[m] = sp.at(to_string(m)).get<int>();
      return IntervalScheme(std::move(iv), std::move(markers));
    } catch (const json::exception& e) {
      throw ValidationError(std::string("interval scheme: ") + e.what());
    }
  }

  static IntervalScheme load(const std::filesystem::path& path) {
    json j;
    try {
      j = json::parse(util::read_file(path));
    } catch (const json::parse_error& e) {
      throw ConfigError("interval scheme " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  json to_json() const {
    json arr = json::array();
    for (const auto& t : intervals_) {
      json e = {{"index", t.index}, {"label", t.label}};
      if (t.months) {
        e["min_months_exclusive"] = t.months->min_exclusive;
        e["max_months_inclusive"] = t.months->max_inclusive ? json(*t.months->max_inclusive) : json(nullptr);
      }
      arr.push_back(std::move(e));
    }
    json sp = json::object();
    for (const auto& [m, i] : markers_) sp[to_string(m)] = i;
    return {{"intervals", arr}, {"special", sp}};
  }

  int index_for_months(std::int64_t months) const {
    if (months < 0) throw ValidationError("negative month count");
    for (const auto& t : intervals_)
      if (t.months && t.months->contains(months)) return t.index;
    throw ValidationError("month count not covered by scheme");  // unreachable after validate()
  }

  int index_for(TermMarker m) const { return markers_.at(m); }

  const std::vector<TermInterval>& intervals() const { return intervals_; }

  const TermInterval& interval(int index) const {
    for (const auto& t : intervals_)
      if (t.index == index) return t;
    throw ValidationError("no interval with index " + std::to_string(index));
  }

  const std::string& label(int index) const { return interval(index).label; }

 private:
  void validate() {
    if (intervals_.size() != kIntervalCount)
      throw ValidationError("interval scheme must have exactly 11 intervals, got " +
                            std::to_string(intervals_.size()));
    std::vector<bool> seen(kIntervalCount, false);
    for (const auto& t : intervals_) {
      if (t.index < 0 || t.index >= kIntervalCount || seen[t.index])
        throw ValidationError("interval indices must be a permutation of 0..10");
      seen[t.index] = true;
    }
    std::vector<const MonthRange*> ranges;
    for (const auto& t : intervals_)
      if (t.months) {
        if (t.months->max_inclusive && *t.months->max_inclusive <= t.months->min_exclusive)
          throw ValidationError("interval " + std::to_string(t.index) + " is empty");
        ranges.push_back(&*t.months);
      }
    if (ranges.empty()) throw ValidationError("scheme has no month ranges");
    std::sort(ranges.begin(), ranges.end(),
              [](const MonthRange* a, const MonthRange* b) { return a->min_exclusive < b->min_exclusive; });
    if (ranges.front()->min_exclusive >= 0)
      throw ValidationError("month ranges must cover 0 months");
    for (std::size_t i = 0; i + 1 < ranges.size(); ++i) {
      if (!ranges[i]->max_inclusive || *ranges[i]->max_inclusive != ranges[i + 1]->min_exclusive)
        throw ValidationError("month ranges must be contiguous and disjoint");
    }
    if (ranges.back()->max_inclusive) throw ValidationError("last month range must be unbounded");
    for (auto m : {TermMarker::none, TermMarker::life, TermMarker::death}) {
      auto it = markers_.find(m);
      if (it == markers_.end() || it->second < 0 || it->second >= kIntervalCount)
        throw ValidationError(std::string("special marker '") + to_string(m) + "' needs a valid index");
    }
    for (const auto& t : intervals_) {
      if (t.months) continue;
      bool reachable = std::any_of(markers_.begin(), markers_.end(),
                                   [&](const auto& kv) { return kv.second == t.index; });
      if (!reachable)
        throw ValidationError("interval " + std::to_string(t.index) + " has no months and no marker");
    }
    for (auto& t : intervals_)
      if (t.label.empty()) t.label = "interval " + std::to_string(t.index);
  }

  std::vector<TermInterval> intervals_;
  std::map<TermMarker, int> markers_;
};

// Total over every TermValue variant.
inline int bucket_term(const TermValue& term, const IntervalScheme& scheme) {
  return std::visit(
      [&](const auto& v) -> int {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, MonthsTerm>) return scheme.index_for_months(v.months);
        else if constexpr (std::is_same_v<T, LifeImprisonment>) return scheme.index_for(TermMarker::life);
        else if constexpr (std::is_same_v<T, DeathPenalty>) return scheme.index_for(TermMarker::death);
        else return scheme.index_for(TermMarker::none);
      },
      term);
}

// ---------------------------------------------------------------------------
// Label pool

class LabelPool {
 public:
  LabelPool() = default;

  LabelPool(std::vector<std::string> charges, std::map<int, std::string> articles)
      : charges_(std::move(charges)), articles_(std::move(articles)) {
    for (std::size_t i = 0; i < charges_.size(); ++i) {
      if (charges_[i].empty()) throw ValidationError("empty charge name in label pool");
      if (!charge_index_.emplace(charges_[i], i).second)
        throw ValidationError("duplicate charge in label pool: " + charges_[i]);
    }
    for (const auto& [num, text] : articles_) {
      if (num <= 0) throw ValidationError("article numbers must be positive");
      if (text.empty()) missing_article_text_ = true;
    }
  }

  // {"charges":[string], "articles":[{number, text}]}
  static LabelPool from_json(const json& j) {
    try {
      std::vector<std::string> charges = j.at("charges").get<std::vector<std::string>>();
      std::map<int, std::string> articles;
      for (const auto& a : j.at("articles")) {
        int num = a.at("number").get<int>();
        if (!articles.emplace(num, a.value("text", std::string{})).second)
          throw ValidationError("duplicate article number " + std::to_string(num));
      }
      return LabelPool(std::move(charges), std::move(articles));
    } catch (const json::exception& e) {
      throw ValidationError(std::string("label pool: ") + e.what());
    }
  }

  static LabelPool load(const std::filesystem::path& path) {
    json j;
    try {
      j = json::parse(util::read_file(path));
    } catch (const json::parse_error& e) {
      throw ConfigError("label pool " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  json to_json() const {
    json arts = json::array();
    for (const auto& [n, t] : articles_) arts.push_back({{"number", n}, {"text", t}});
    return {{"charges", charges_}, {"articles", arts}};
  }

  const std::vector<std::string>& charges() const { return charges_; }
  const std::map<int, std::string>& articles() const { return articles_; }

  bool has_charge(const std::string& c) const { return charge_index_.count(c) > 0; }
  bool has_article(int n) const { return articles_.count(n) > 0; }
  std::size_t charge_position(const std::string& c) const { return charge_index_.at(c); }

  // Empty when the source corpus carried no statute text for this article.
  const std::string& article_text(int n) const { return articles_.at(n); }

  bool missing_article_text() const { return missing_article_text_; }
  bool empty() const { return charges_.empty(); }

 private:
  std::vector<std::string> charges_;
  std::unordered_map<std::string, std::size_t> charge_index_;
  std::map<int, std::string> articles_;
  bool missing_article_text_ = false;
};

// ---------------------------------------------------------------------------
// Cases

struct DefendantJudgment {
  std::string name;
  std::set<std::string> charges;
  std::set<int> articles;
  TermValue term = NoCustody{};

  friend bool operator==(const DefendantJudgment&, const DefendantJudgment&) = default;
};

struct Case {
  std::string case_id;
  std::string fact;
  std::vector<DefendantJudgment> defendants;

  const DefendantJudgment* find_defendant(std::string_view name) const {
    for (const auto& d : defendants)
      if (d.name == name) return &d;
    return nullptr;
  }

  friend bool operator==(const Case&, const Case&) = default;
};

inline json case_to_json(const Case& c) {
  json defs = json::array();
  for (const auto& d : c.defendants) {
    defs.push_back({{"name", d.name},
                    {"charges", std::vector<std::string>(d.charges.begin(), d.charges.end())},
                    {"articles", std::vector<int>(d.articles.begin(), d.articles.end())},
                    {"term", term_to_json(d.term)}});
  }
  return {{"case_id", c.case_id}, {"fact", c.fact}, {"defendants", defs}};
}

// Validates one record against the pool. Throws ValidationError or
// UnknownLabelError; the caller attaches the line number.
inline Case case_from_json(const json& j, const LabelPool& pool) {
  Case c;
  try {
    c.case_id = j.at("case_id").get<std::string>();
    c.fact = j.at("fact").get<std::string>();
    const auto& defs = j.at("defendants");
    if (!defs.is_array()) throw ValidationError("defendants must be an array");
    for (const auto& dj : defs) {
      DefendantJudgment d;
      d.name = dj.at("name").get<std::string>();
      for (const auto& ch : dj.at("charges")) {
        auto name = ch.get<std::string>();
        if (!pool.has_charge(name)) throw UnknownLabelError(name, "charges of " + d.name);
        d.charges.insert(std::move(name));
      }
      for (const auto& a : dj.at("articles")) {
        int n = a.get<int>();
        if (!pool.has_article(n)) throw UnknownLabelError(std::to_string(n), "articles of " + d.name);
        d.articles.insert(n);
      }
      d.term = term_from_json(dj.at("term"));
      c.defendants.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw ValidationError(e.what());
  }
  if (c.case_id.empty()) throw ValidationError("case_id is empty");
  if (util::trim(c.fact).empty()) throw ValidationError("fact is empty");
  if (c.defendants.empty()) throw ValidationError("case has no defendants");
  std::unordered_set<std::string> names;
  for (const auto& d : c.defendants) {
    if (d.name.empty()) throw ValidationError("defendant name is empty");
    if (!names.insert(d.name).second) throw ValidationError("duplicate defendant name: " + d.name);
    if (d.charges.empty()) throw ValidationError("defendant " + d.name + " has no gold charges");
    if (d.articles.empty()) throw ValidationError("defendant " + d.name + " has no gold articles");
  }
  return c;
}

inline std::vector<Case> load_dataset(const std::filesystem::path& path, const LabelPool& pool) {
  std::vector<Case> cases;
  std::unordered_set<std::string> ids;
  util::for_each_jsonl(path, [&](const json& j, std::size_t lineno) {
    Case c;
    try {
      c = case_from_json(j, pool);
    } catch (const UnknownLabelError& e) {
      throw UnknownLabelError(e.label(), path.string() + ":" + std::to_string(lineno));
    } catch (const Error& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
    if (!ids.insert(c.case_id).second)
      throw ParseError(path.string(), lineno, "duplicate case_id " + c.case_id);
    cases.push_back(std::move(c));
  });
  return cases;
}

inline void write_dataset(const std::filesystem::path& path, std::span<const Case> cases) {
  std::vector<json> rows;
  rows.reserve(cases.size());
  for (const auto& c : cases) rows.push_back(case_to_json(c));
  util::write_jsonl(path, rows);
}

// Code points, so CJK text is counted per character rather than per byte.
inline std::size_t utf8_length(std::string_view s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

struct StatsReport {
  std::size_t case_count = 0;
  std::size_t defendant_count = 0;
  std::size_t distinct_charges = 0;
  std::size_t distinct_articles = 0;
  double avg_defendants_per_case = 0.0;
  double avg_fact_length = 0.0;
  std::size_t pool_charges = 0;
  std::size_t pool_articles = 0;

  json to_json() const {
    return {{"cases", case_count},
            {"defendants", defendant_count},
            {"distinct_charges", distinct_charges},
            {"distinct_articles", distinct_articles},
            {"avg_defendants_per_case", avg_defendants_per_case},
            {"avg_fact_length", avg_fact_length},
            {"pool_charges", pool_charges},
            {"pool_articles", pool_articles}};
  }
};

inline StatsReport dataset_stats(std::span<const Case> cases, const LabelPool& pool) {
  StatsReport r;
  r.case_count = cases.size();
  r.pool_charges = pool.charges().size();
  r.pool_articles = pool.articles().size();
  std::set<std::string> charges;
  std::set<int> articles;
  std::size_t total_len = 0;
  for (const auto& c : cases) {
    total_len += utf8_length(c.fact);
    r.defendant_count += c.defendants.size();
    for (const auto& d : c.defendants) {
      charges.insert(d.charges.begin(), d.charges.end());
      articles.insert(d.articles.begin(), d.articles.end());
    }
  }
  r.distinct_charges = charges.size();
  r.distinct_articles = articles.size();
  if (!cases.empty()) {
    r.avg_defendants_per_case = static_cast<double>(r.defendant_count) / static_cast<double>(cases.size());
    r.avg_fact_length = static_cast<double>(total_len) / static_cast<double>(cases.size());
  }
  return r;
}

}  // namespace adapt
