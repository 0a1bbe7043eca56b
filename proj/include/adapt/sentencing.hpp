#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adapt/corpus.hpp"
#include "adapt/util.hpp"

namespace adapt {

// Result of reading a free-text sentencing statement such as
// "1-2 years", "over 3 years up to 5 years", "life imprisonment" or
// "有期徒刑三年".
struct SentencingReading {
  std::optional<int> interval;
  bool refused = false;           // model declined to give a range
  std::optional<double> months;   // representative month value, when numeric
};

namespace detail {

// Converts a run of CJK numerals (up to 99, plus 两/半) into a value.
inline std::optional<double> cjk_number(std::string_view s) {
  static const std::pair<std::string_view, int> kDigits[] = {
      {"零", 0}, {"一", 1}, {"二", 2}, {"两", 2}, {"三", 3}, {"四", 4},
      {"五", 5}, {"六", 6}, {"七", 7}, {"八", 8}, {"九", 9}};
  double total = 0;
  int pending = -1;
  bool any = false;
  std::size_t i = 0;
  while (i < s.size()) {
    bool matched = false;
    for (const auto& [glyph, v] : kDigits) {
      if (s.substr(i, glyph.size()) == glyph) {
        pending = v;
        i += glyph.size();
        matched = any = true;
        break;
      }
    }
    if (matched) continue;
    if (s.substr(i, 3) == "十") {
      total += (pending < 0 ? 1 : pending) * 10;
      pending = -1;
      i += 3;
      any = true;
      continue;
    }
    if (s.substr(i, 3) == "半") {
      total += (pending < 0 ? 0 : pending) + 0.5;
      pending = -1;
      i += 3;
      any = true;
      continue;
    }
    return std::nullopt;
  }
  if (!any) return std::nullopt;
  if (pending >= 0) total += pending;
  return total;
}

struct Quantity {
  double value = 0;
  std::optional<double> unit_months;  // 12 for years, 1 for months
  std::size_t start = 0;
  std::size_t end = 0;  // past the unit, or past the number when unitless
};

inline bool is_cjk_numeral_at(std::string_view s, std::size_t i, std::size_t* width) {
  static const std::string_view kGlyphs[] = {"零", "一", "二", "两", "三", "四", "五",
                                             "六", "七", "八", "九", "十", "半"};
  for (auto g : kGlyphs)
    if (s.substr(i, g.size()) == g) {
      *width = g.size();
      return true;
    }
  return false;
}

inline std::optional<std::pair<double, std::size_t>> read_unit(std::string_view s, std::size_t pos) {
  std::size_t p = pos;
  while (p < s.size() && (s[p] == ' ' || s[p] == '\t')) ++p;
  std::string_view rest = s.substr(p);
  static const std::pair<std::string_view, double> kUnits[] = {
      {"years", 12}, {"year", 12}, {"yrs", 12}, {"yr", 12}, {"个月", 1}, {"months", 1},
      {"month", 1},  {"mos", 1},   {"mo", 1},   {"年", 12}, {"月", 1}};
  for (const auto& [word, months] : kUnits) {
    if (util::starts_with_ci(rest, word)) {
      std::size_t after = p + word.size();
      bool ascii_word = static_cast<unsigned char>(word[0]) < 0x80;
      if (ascii_word && after < s.size() && std::isalpha(static_cast<unsigned char>(s[after]))) continue;
      return std::make_pair(months, after);
    }
  }
  return std::nullopt;
}

inline std::vector<Quantity> scan_quantities(std::string_view s) {
  std::vector<Quantity> out;
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    Quantity q;
    std::size_t num_end = i;
    bool found = false;
    if (std::isdigit(c)) {
      std::size_t j = i;
      while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
      if (j + 1 < s.size() && s[j] == '.' && std::isdigit(static_cast<unsigned char>(s[j + 1]))) {
        ++j;
        while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
      }
      q.value = std::stod(std::string(s.substr(i, j - i)));
      num_end = j;
      found = true;
    } else {
      std::size_t j = i, w = 0;
      while (j < s.size() && is_cjk_numeral_at(s, j, &w)) j += w;
      if (j > i) {
        if (auto v = cjk_number(s.substr(i, j - i))) {
          q.value = *v;
          num_end = j;
          found = true;
        }
      }
    }
    if (!found) {
      ++i;
      continue;
    }
    q.start = i;
    q.end = num_end;
    if (auto u = read_unit(s, num_end)) {
      q.unit_months = u->first;
      q.end = u->second;
    }
    out.push_back(q);
    i = std::max(q.end, i + 1);
  }
  return out;
}

inline std::string between(std::string_view s, const Quantity& a, const Quantity& b) {
  return util::to_lower_ascii(util::trim(s.substr(a.end, b.start - a.end)));
}

inline bool is_range_connector(const std::string& gap) {
  static const char* kConnectors[] = {"-", "–", "—", "~", "～", "to", "至", "到", "-to-", "－"};
  for (auto c : kConnectors)
    if (gap == c) return true;
  return false;
}

inline bool is_compound_connector(const std::string& gap) {
  return gap.empty() || gap == "and" || gap == "," || gap == "零" || gap == "又";
}

inline bool preceded_by(std::string_view s, std::size_t from, std::size_t to,
                        std::initializer_list<std::string_view> words) {
  std::string window = util::to_lower_ascii(s.substr(from, to - from));
  for (auto w : words)
    if (window.find(w) != std::string::npos) return true;
  return false;
}

inline bool followed_by(std::string_view s, std::size_t pos, std::string_view word) {
  std::size_t p = pos;
  while (p < s.size() && s[p] == ' ') ++p;
  return s.substr(p, word.size()) == word;
}

}  // namespace detail

// Maps a fractional month value into the interval whose range contains it.
inline int interval_for_month_value(double months, const IntervalScheme& scheme) {
  for (const auto& t : scheme.intervals()) {
    if (!t.months) continue;
    const auto& r = *t.months;
    if (months > static_cast<double>(r.min_exclusive) &&
        (!r.max_inclusive || months <= static_cast<double>(*r.max_inclusive)))
      return t.index;
  }
  return scheme.index_for_months(0);
}

// A range "lo to hi" is represented by its midpoint; a lower bound alone
// ("over 10 years") by one month past the bound; an upper bound alone
// ("up to 6 months") by half the bound. Scheme labels read back to their
// own interval under these rules.
inline SentencingReading read_sentencing(std::string_view text, const IntervalScheme& scheme) {
  SentencingReading out;
  std::string lower = util::to_lower_ascii(text);
  auto has = [&](std::string_view w) { return lower.find(w) != std::string::npos; };

  // Explicit class index, e.g. "interval 5".
  for (std::string_view key : {"interval ", "class ", "interval index "}) {
    std::size_t p = lower.find(key);
    if (p != std::string::npos) {
      std::size_t q = p + key.size();
      if (q < lower.size() && std::isdigit(static_cast<unsigned char>(lower[q]))) {
        int idx = 0;
        while (q < lower.size() && std::isdigit(static_cast<unsigned char>(lower[q])))
          idx = idx * 10 + (lower[q++] - '0');
        if (idx >= 0 && idx < kIntervalCount) {
          out.interval = idx;
          return out;
        }
      }
    }
  }

  if (has("death penalty") || has("sentenced to death") || has("death sentence") || has("死刑")) {
    out.interval = scheme.index_for(TermMarker::death);
    return out;
  }
  if (has("life imprisonment") || has("imprisonment for life") || has("life sentence") || has("无期徒刑")) {
    out.interval = scheme.index_for(TermMarker::life);
    return out;
  }
  if (has("no imprisonment") || has("no custody") || has("non-custodial") || has("exempt from") ||
      has("no criminal punishment") || has("免予刑事处罚") || has("免于刑事处罚") || has("不判处")) {
    out.interval = scheme.index_for(TermMarker::none);
    return out;
  }

  auto qs = detail::scan_quantities(text);
  // Unitless numbers borrow the unit of a range partner: "1-2 years".
  for (std::size_t i = 0; i + 1 < qs.size(); ++i)
    if (!qs[i].unit_months && qs[i + 1].unit_months &&
        detail::is_range_connector(detail::between(text, qs[i], qs[i + 1])))
      qs[i].unit_months = qs[i + 1].unit_months;
  // Fold "3 years and 6 months" into one quantity.
  std::vector<detail::Quantity> merged;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    if (!qs[i].unit_months) continue;
    detail::Quantity q = qs[i];
    q.value *= *q.unit_months;
    q.unit_months = 1;
    if (*qs[i].unit_months == 12 && i + 1 < qs.size() && qs[i + 1].unit_months == 1.0 &&
        detail::is_compound_connector(detail::between(text, qs[i], qs[i + 1]))) {
      q.value += qs[i + 1].value;
      q.end = qs[i + 1].end;
      ++i;
    }
    merged.push_back(q);
  }

  if (merged.empty()) {
    for (std::string_view w : {"cannot", "can't", "unable", "decline", "not able to", "not appropriate",
                               "i'm sorry", "i am sorry", "refuse", "无法", "不能", "抱歉"}) {
      if (has(w)) {
        out.refused = true;
        break;
      }
    }
    return out;
  }

  static const std::initializer_list<std::string_view> kLower = {"over", "more than", "above", "exceeding",
                                                                  "beyond", "at least", "超过", "不少于"};
  static const std::initializer_list<std::string_view> kUpper = {"up to", "not more than", "no more than",
                                                                  "at most", "under", "below", "within",
                                                                  "less than", "不超过", "不满"};
  // Qualifiers must sit just before the quantity, not anywhere earlier.
  auto window_start = [&](std::size_t i) {
    std::size_t near = merged[i].start > 24 ? merged[i].start - 24 : 0;
    return i == 0 ? near : std::max(near, merged[i - 1].end);
  };
  auto is_lower = [&](std::size_t i) {
    return detail::preceded_by(text, window_start(i), merged[i].start, kLower) ||
           detail::followed_by(text, merged[i].end, "以上");
  };
  auto is_upper = [&](std::size_t i) {
    return detail::preceded_by(text, window_start(i), merged[i].start, kUpper) ||
           detail::followed_by(text, merged[i].end, "以下");
  };

  double value;
  const auto& q0 = merged[0];
  if (is_lower(0)) {
    if (merged.size() > 1 &&
        (is_upper(1) || detail::is_range_connector(detail::between(text, q0, merged[1]))))
      value = (q0.value + merged[1].value) / 2.0;
    else
      value = q0.value + 1.0;
  } else if (is_upper(0)) {
    value = q0.value / 2.0;
  } else if (merged.size() > 1 && detail::is_range_connector(detail::between(text, q0, merged[1]))) {
    value = (q0.value + merged[1].value) / 2.0;
  } else {
    value = q0.value;
  }
  out.months = value;
  out.interval = interval_for_month_value(value, scheme);
  return out;
}

}  // namespace adapt
