#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "adapt/corpus.hpp"
#include "adapt/error.hpp"
#include "adapt/sentencing.hpp"
#include "adapt/util.hpp"

namespace adapt {

// Model output that neither the strict nor the lenient grammar could read.
class OutputParseError : public Error {
 public:
  OutputParseError(std::string what_failed, std::string raw)
      : Error(std::move(what_failed)), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

// ---------------------------------------------------------------------------
// Labeled-section extraction shared by every parser.

namespace sections {

struct Found {
  std::string key;        // canonical section key
  std::string header;     // the label text as written (for "[Assessment: X]" the X part)
  std::size_t start = 0;  // where the label begins
  std::size_t body = 0;   // where the content begins
};

struct Spec {
  std::string key;
  std::vector<std::string> aliases;
};

// Strict grammar: a header line "[Label]", "【Label】" or "[Label: arg]" alone on its line.
inline std::vector<Found> bracket_headers(std::string_view text) {
  std::vector<Found> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = util::trim(text.substr(pos, eol - pos));
    std::size_t open = 0, close = 0;
    if (line.size() >= 3 && line.front() == '[' && line.back() == ']') open = close = 1;
    // fullwidth 【】, three bytes each
    else if (line.size() >= 7 && line.substr(0, 3) == "【" && line.substr(line.size() - 3) == "】") open = close = 3;
    if (open) {
      Found f;
      f.header = std::string(util::trim(line.substr(open, line.size() - open - close)));
      f.start = pos;
      f.body = std::min(eol + 1, text.size());
      out.push_back(std::move(f));
    }
    pos = eol + 1;
  }
  return out;
}

inline std::string body_of(std::string_view text, const std::vector<Found>& all, std::size_t i) {
  std::size_t end = i + 1 < all.size() ? all[i + 1].start : text.size();
  if (all[i].body >= end) return {};
  return std::string(util::trim(text.substr(all[i].body, end - all[i].body)));
}

inline bool is_ascii_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

// Lenient grammar: "Label:", "**Label**:", "# Label", "1. Label:", "[Label]"
// anywhere a label is preceded by a non-letter and followed (after optional
// closing marks) by a colon or end of line.
inline std::vector<Found> lenient_labels(std::string_view text, const std::vector<Spec>& specs) {
  struct Cand {
    Found f;
    std::size_t end;
  };
  std::vector<std::pair<std::string, std::string>> aliases;
  for (const auto& s : specs)
    for (const auto& a : s.aliases) aliases.emplace_back(a, s.key);
  std::stable_sort(aliases.begin(), aliases.end(),
                   [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });

  std::string lower = util::to_lower_ascii(text);
  std::vector<Cand> cands;
  for (const auto& [alias, key] : aliases) {
    std::string la = util::to_lower_ascii(alias);
    std::size_t pos = 0;
    while ((pos = lower.find(la, pos)) != std::string::npos) {
      std::size_t after = pos + la.size();
      bool left_ok = pos == 0 || !is_ascii_alpha(text[pos - 1]);
      if (is_ascii_alpha(la.front()) == false) left_ok = true;  // CJK labels have no word boundary
      std::size_t p = after;
      while (p < text.size() && (text[p] == '*' || text[p] == ')' || text[p] == ']' || text[p] == ' ' ||
                                 text[p] == '\t' || text[p] == '#'))
        ++p;
      bool right_ok = false;
      std::size_t body = p;
      if (p < text.size() && text[p] == ':') {
        right_ok = true;
        body = p + 1;
      } else if (text.substr(p, 3) == "：") {
        right_ok = true;
        body = p + 3;
      } else if (p >= text.size() || text[p] == '\n' || text[p] == '\r') {
        // A bare label must start its line to count.
        std::size_t ls = text.rfind('\n', pos == 0 ? 0 : pos - 1);
        ls = (ls == std::string_view::npos || pos == 0) ? 0 : ls + 1;
        std::string_view prefix = text.substr(ls, pos - ls);
        right_ok = std::all_of(prefix.begin(), prefix.end(), [](char c) {
          return c == ' ' || c == '\t' || c == '#' || c == '*' || c == '[' || c == '(' || c == '.' ||
                 (c >= '0' && c <= '9');
        });
        body = p;
      }
      if (left_ok && right_ok) {
        bool in_word = after < text.size() && is_ascii_alpha(text[after]) && is_ascii_alpha(la.back());
        if (!in_word) cands.push_back({Found{key, alias, pos, body}, after});
      }
      pos = after;
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    return a.f.start != b.f.start ? a.f.start < b.f.start : a.end > b.end;
  });
  std::vector<Found> out;
  std::size_t covered = 0;
  for (auto& c : cands) {
    if (!out.empty() && c.f.start < covered) continue;
    covered = c.f.body;
    out.push_back(std::move(c.f));
  }
  return out;
}

inline const Spec* spec_for_header(const std::vector<Spec>& specs, std::string_view header) {
  for (const auto& s : specs)
    for (const auto& a : s.aliases)
      if (util::to_lower_ascii(header) == util::to_lower_ascii(a)) return &s;
  return nullptr;
}

}  // namespace sections

// Trims whitespace, list markers, quotes and surrounding punctuation from one
// list item, e.g. "2. 《theft》." -> "theft".
inline std::string clean_item(std::string_view raw) {
  std::string_view s = util::trim(raw);
  // list markers
  std::size_t i = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) s = util::trim(s.substr(i + 1));
  else if (i > 0 && s.substr(i, 3) == "、") s = util::trim(s.substr(i + 3));
  while (!s.empty() && (s.front() == '-' || s.front() == '*' || s.front() == '+')) s = util::trim(s.substr(1));
  if (s.substr(0, 3) == "•") s = util::trim(s.substr(3));
  static const std::string_view kWrap[] = {"《", "》", "“", "”", "「", "」", "【", "】", "。", "；", "，"};
  bool changed = true;
  while (changed && !s.empty()) {
    changed = false;
    for (auto w : kWrap) {
      if (s.size() >= w.size() && s.substr(0, w.size()) == w) {
        s = util::trim(s.substr(w.size()));
        changed = true;
      }
      if (s.size() >= w.size() && s.substr(s.size() - w.size()) == w) {
        s = util::trim(s.substr(0, s.size() - w.size()));
        changed = true;
      }
    }
    static const std::string_view kAscii = "\"'`*.,;:!?[]";
    while (!s.empty() && kAscii.find(s.front()) != std::string_view::npos) {
      s = util::trim(s.substr(1));
      changed = true;
    }
    while (!s.empty() && kAscii.find(s.back()) != std::string_view::npos) {
      s = util::trim(s.substr(0, s.size() - 1));
      changed = true;
    }
  }
  // drop a trailing parenthetical remark: "theft (most likely)"
  if (!s.empty() && s.back() == ')') {
    auto open = s.rfind(" (");
    if (open != std::string_view::npos && open > 0) s = util::trim(s.substr(0, open));
  }
  return std::string(s);
}

// Splits a list body on newlines and list separators (; ； 、). Commas are
// kept because translated charge names may contain them.
inline std::vector<std::string> split_items(std::string_view body) {
  std::string s(body);
  util::replace_all(s, "；", "\n");
  util::replace_all(s, "、", "\n");
  util::replace_all(s, ";", "\n");
  std::vector<std::string> out;
  for (const auto& line : util::split_lines(s)) {
    std::string item = clean_item(line);
    bool numeral = std::all_of(item.begin(), item.end(), [](char c) { return c >= '0' && c <= '9'; });
    if (!item.empty() && !numeral) out.push_back(std::move(item));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Step 1: Ask

struct AskSummary {
  std::string subject;
  std::string behaviors_and_consequences;
  std::string object;
  std::string subjective_aspect;
  bool degraded = false;  // at least one section missing from the model output

  friend bool operator==(const AskSummary&, const AskSummary&) = default;
};

inline const std::vector<sections::Spec>& ask_section_specs() {
  static const std::vector<sections::Spec> kSpecs = {
      {"subject", {"Subject", "犯罪主体", "主体"}},
      {"behaviors",
       {"Criminal behaviors and consequences", "Criminal behaviours and consequences", "Criminal behavior and consequences",
        "Behaviors and consequences", "Criminal behaviors", "Objective aspect", "犯罪客观方面", "客观方面"}},
      {"object", {"Object", "犯罪客体", "客体"}},
      {"subjective", {"Subjective aspect", "犯罪主观方面", "主观方面"}},
  };
  return kSpecs;
}

// Canonical strict-grammar form; also the text threaded into later prompts.
inline std::string serialize(const AskSummary& a) {
  return "[Subject]\n" + a.subject + "\n[Criminal behaviors and consequences]\n" + a.behaviors_and_consequences +
         "\n[Object]\n" + a.object + "\n[Subjective aspect]\n" + a.subjective_aspect;
}

inline AskSummary parse_ask(std::string_view raw) {
  const auto& specs = ask_section_specs();
  auto fill = [&](const std::vector<sections::Found>& found, AskSummary& out) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < found.size(); ++i) {
      const sections::Spec* spec = sections::spec_for_header(specs, found[i].header);
      if (!spec || seen.count(spec->key)) continue;
      seen.insert(spec->key);
      std::string body = sections::body_of(raw, found, i);
      if (spec->key == "subject") out.subject = body;
      else if (spec->key == "behaviors") out.behaviors_and_consequences = body;
      else if (spec->key == "object") out.object = body;
      else out.subjective_aspect = body;
    }
    return seen.size();
  };

  AskSummary strict;
  auto headers = sections::bracket_headers(raw);
  // Only keep headers that name an Ask section; others end the previous body.
  std::size_t strict_count = fill(headers, strict);
  if (strict_count == 4) return strict;

  AskSummary lenient;
  std::size_t lenient_count = fill(sections::lenient_labels(raw, specs), lenient);
  AskSummary& best = lenient_count > strict_count ? lenient : strict;
  std::size_t count = std::max(lenient_count, strict_count);
  if (count == 0) throw OutputParseError("ask output has none of the four element sections", std::string(raw));
  best.degraded = count < 4;
  return best;
}

// ---------------------------------------------------------------------------
// Step 2: Discriminate

enum class Verdict { consistent, inconsistent, partial };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::consistent: return "consistent";
    case Verdict::inconsistent: return "inconsistent";
    case Verdict::partial: return "partially consistent";
  }
  return "partially consistent";
}

inline std::optional<Verdict> read_verdict(std::string_view text) {
  std::string l = util::to_lower_ascii(text);
  auto has = [&](std::string_view w) { return l.find(w) != std::string::npos; };
  if (has("inconsistent") || has("not consistent") || has("不符合") || has("不一致")) return Verdict::inconsistent;
  if (has("partial") || has("部分")) return Verdict::partial;
  if (has("consistent") || has("符合") || has("一致")) return Verdict::consistent;
  return std::nullopt;
}

struct CandidateAssessment {
  std::string charge;
  std::string consistency_rationale;
  Verdict verdict = Verdict::partial;
  friend bool operator==(const CandidateAssessment&, const CandidateAssessment&) = default;
};

struct DiscriminationRecord {
  std::vector<CandidateAssessment> candidates;
  std::vector<int> candidate_articles;  // only when article proposals are enabled
  std::string pairwise_differences;
  bool degraded = false;  // some candidate had no readable assessment

  std::vector<std::string> charges() const {
    std::vector<std::string> out;
    for (const auto& c : candidates) out.push_back(c.charge);
    return out;
  }

  friend bool operator==(const DiscriminationRecord&, const DiscriminationRecord&) = default;
};

inline std::string serialize(const DiscriminationRecord& d) {
  std::string s = "[Candidates]\n";
  for (std::size_t i = 0; i < d.candidates.size(); ++i)
    s += std::to_string(i + 1) + ". " + d.candidates[i].charge + "\n";
  if (!d.candidate_articles.empty()) {
    s += "[Candidate articles]\n";
    for (int a : d.candidate_articles) s += std::to_string(a) + "\n";
  }
  for (const auto& c : d.candidates) {
    s += "[Assessment: " + c.charge + "]\nVerdict: " + to_string(c.verdict) + "\n";
    if (!c.consistency_rationale.empty()) s += c.consistency_rationale + "\n";
  }
  s += "[Differences]\n" + d.pairwise_differences;
  return s;
}

namespace detail {

inline bool same_charge(std::string_view a, std::string_view b) {
  return util::to_lower_ascii(util::trim(a)) == util::to_lower_ascii(util::trim(b));
}

// Verdict line first, remaining lines become the rationale. Returns false
// in `.second` when no verdict could be read.
inline std::pair<CandidateAssessment, bool> read_assessment(std::string charge, std::string_view body) {
  CandidateAssessment a;
  a.charge = std::move(charge);
  std::vector<std::string> rest;
  bool got = false;
  for (const auto& line : util::split_lines(body)) {
    std::string_view t = util::trim(line);
    if (!got && (util::starts_with_ci(t, "verdict") || util::starts_with_ci(t, "结论"))) {
      if (auto v = read_verdict(t)) {
        a.verdict = *v;
        got = true;
        continue;
      }
    }
    rest.emplace_back(line);
  }
  a.consistency_rationale = std::string(util::trim(util::join(rest, "\n")));
  if (!got) {
    if (auto v = read_verdict(a.consistency_rationale)) {
      a.verdict = *v;
      got = true;
    }
  }
  return {std::move(a), got};
}

}  // namespace detail

inline const std::vector<sections::Spec>& disc_section_specs() {
  static const std::vector<sections::Spec> kSpecs = {
      {"candidates", {"Candidates", "Candidate charges", "候选罪名"}},
      {"articles", {"Candidate articles", "候选法条"}},
      {"differences", {"Differences", "Main differences", "区别", "主要区别"}},
  };
  return kSpecs;
}

// Candidates are deduplicated (first occurrence wins, case-insensitive)
// and truncated to `k`.
inline DiscriminationRecord parse_discrimination(std::string_view raw, std::size_t k) {
  const auto& specs = disc_section_specs();
  DiscriminationRecord rec;
  std::vector<std::string> names;
  std::vector<std::pair<std::string, std::string>> assessments;  // header arg, body

  auto headers = sections::bracket_headers(raw);
  bool strict = false;
  for (std::size_t i = 0; i < headers.size(); ++i) {
    const auto& h = headers[i].header;
    std::string body = sections::body_of(raw, headers, i);
    if (util::starts_with_ci(h, "assessment")) {
      auto colon = h.find(':');
      if (colon == std::string::npos) colon = h.find("：");
      if (colon != std::string::npos) {
        std::size_t skip = h.compare(colon, 3, "：") == 0 ? 3 : 1;
        assessments.emplace_back(clean_item(h.substr(colon + skip)), body);
      }
      continue;
    }
    const auto* spec = sections::spec_for_header(specs, h);
    if (!spec) continue;
    if (spec->key == "candidates") {
      names = split_items(body);
      strict = true;
    } else if (spec->key == "articles") {
      for (auto n : util::extract_integers(body)) rec.candidate_articles.push_back(static_cast<int>(n));
    } else {
      rec.pairwise_differences = body;
    }
  }

  if (!strict) {
    auto found = sections::lenient_labels(raw, specs);
    for (std::size_t i = 0; i < found.size(); ++i) {
      std::string body = sections::body_of(raw, found, i);
      if (found[i].key == "candidates" && names.empty()) {
        // Inline lists end at the first blank line.
        auto blank = body.find("\n\n");
        names = split_items(blank == std::string::npos ? body : body.substr(0, blank));
      } else if (found[i].key == "articles" && rec.candidate_articles.empty()) {
        for (auto n : util::extract_integers(body)) rec.candidate_articles.push_back(static_cast<int>(n));
      } else if (found[i].key == "differences" && rec.pairwise_differences.empty()) {
        rec.pairwise_differences = body;
      }
    }
  }

  // Dedupe, then truncate.
  std::vector<std::string> unique;
  for (auto& n : names) {
    if (n.empty()) continue;
    bool dup = std::any_of(unique.begin(), unique.end(), [&](const std::string& u) { return detail::same_charge(u, n); });
    if (!dup) unique.push_back(n);
  }
  if (unique.size() > k) unique.resize(k);
  if (unique.empty()) throw OutputParseError("discrimination output lists no candidate charges", std::string(raw));

  for (const auto& name : unique) {
    auto it = std::find_if(assessments.begin(), assessments.end(),
                           [&](const auto& a) { return detail::same_charge(a.first, name); });
    std::pair<CandidateAssessment, bool> read;
    if (it != assessments.end()) {
      read = detail::read_assessment(name, it->second);
    } else {
      // Lenient: a line starting with the candidate name carries its verdict.
      std::string body;
      for (const auto& line : util::split_lines(raw)) {
        std::string t = clean_item(line);
        if (util::starts_with_ci(t, name) && t.size() > name.size()) {
          body = std::string(util::trim(std::string_view(t).substr(name.size())));
          if (!body.empty() && (body[0] == ':' || body[0] == '-')) body = std::string(util::trim(body.substr(1)));
          break;
        }
      }
      read = detail::read_assessment(name, body);
    }
    if (!read.second) rec.degraded = true;
    rec.candidates.push_back(std::move(read.first));
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Step 3: Predict

enum class TermStatus { not_requested, parsed, refused, missing };

inline const char* to_string(TermStatus s) {
  switch (s) {
    case TermStatus::not_requested: return "not_requested";
    case TermStatus::parsed: return "parsed";
    case TermStatus::refused: return "refused";
    case TermStatus::missing: return "missing";
  }
  return "missing";
}

struct Prediction {
  std::vector<std::string> charges;  // pre-mapping, distinct, in answer order
  std::set<int> articles;
  std::optional<int> term_interval;
  TermStatus term_status = TermStatus::not_requested;
  std::string term_text;
  std::string raw_trace;
  bool degraded = false;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

inline const std::vector<sections::Spec>& predict_section_specs() {
  static const std::vector<sections::Spec> kSpecs = {
      {"charges", {"Charges", "Charge", "Final charges", "Final charge", "罪名"}},
      {"articles", {"Articles", "Article", "Law articles", "Relevant articles", "Relevant law articles", "法条", "相关法条"}},
      {"term", {"Term", "Prison term", "Sentencing range", "Sentence", "刑期"}},
  };
  return kSpecs;
}

struct FinalAnswerSections {
  std::optional<std::string> charges, articles, term;
};

// The last occurrence of each answer section wins, so reasoning that
// mentions "Charges:" earlier does not shadow the final answer.
inline FinalAnswerSections find_final_answer(std::string_view raw) {
  const auto& specs = predict_section_specs();
  FinalAnswerSections out;
  auto take = [&](const std::vector<sections::Found>& found) {
    for (std::size_t i = 0; i < found.size(); ++i) {
      const sections::Spec* spec = sections::spec_for_header(specs, found[i].header);
      if (!spec) continue;
      std::string body = sections::body_of(raw, found, i);
      if (spec->key == "charges") out.charges = body;
      else if (spec->key == "articles") out.articles = body;
      else out.term = body;
    }
  };
  take(sections::bracket_headers(raw));
  if (!out.charges) take(sections::lenient_labels(raw, specs));
  return out;
}

inline void apply_term(Prediction& p, std::string_view term_body, const IntervalScheme& scheme) {
  p.term_text = std::string(util::trim(term_body));
  auto reading = read_sentencing(term_body, scheme);
  if (reading.interval) {
    p.term_interval = reading.interval;
    p.term_status = TermStatus::parsed;
  } else {
    p.term_status = reading.refused ? TermStatus::refused : TermStatus::missing;
  }
}

inline Prediction parse_prediction(std::string_view raw, bool want_term, const IntervalScheme& scheme) {
  Prediction p;
  p.raw_trace = std::string(raw);
  auto ans = find_final_answer(raw);
  std::vector<std::string> charges;
  if (ans.charges) {
    charges = split_items(*ans.charges);
  } else {
    // Last resort for plain one-line answers: first non-empty line.
    for (const auto& line : util::split_lines(raw)) {
      if (!util::trim(line).empty()) {
        charges = split_items(line);
        break;
      }
    }
    p.degraded = true;
  }
  for (auto& c : charges) {
    bool dup = std::any_of(p.charges.begin(), p.charges.end(), [&](const std::string& x) { return x == c; });
    if (!dup) p.charges.push_back(std::move(c));
  }
  if (p.charges.empty()) throw OutputParseError("final answer names no charges", std::string(raw));
  if (ans.articles)
    for (auto n : util::extract_integers(*ans.articles))
      if (n > 0 && n < 100000) p.articles.insert(static_cast<int>(n));
  if (want_term) {
    if (ans.term) apply_term(p, *ans.term, scheme);
    else p.term_status = read_sentencing(raw, scheme).refused ? TermStatus::refused : TermStatus::missing;
  }
  return p;
}

}  // namespace adapt
