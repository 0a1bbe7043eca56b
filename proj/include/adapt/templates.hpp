#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "adapt/error.hpp"
#include "adapt/util.hpp"

namespace adapt {

class TemplateError : public Error {
 public:
  using Error::Error;
};

// Placeholder values. A missing key is an error when referenced as
// {{name}}; {{#name}}...{{/name}} blocks render only when the key is
// present and non-empty.
using TemplateVars = std::map<std::string, std::string, std::less<>>;

class PromptTemplate {
 public:
  PromptTemplate() = default;
  PromptTemplate(std::string name, std::string text) : name_(std::move(name)), text_(std::move(text)) {
    check_balanced();
  }

  std::string render(const TemplateVars& vars) const {
    std::string out;
    render_range(text_, vars, out);
    return out;
  }

  // Every {{name}} and {{#name}} referenced by the template.
  std::set<std::string> placeholders() const {
    std::set<std::string> names;
    std::size_t pos = 0;
    while ((pos = text_.find("{{", pos)) != std::string::npos) {
      auto end = text_.find("}}", pos);
      if (end == std::string::npos) break;
      std::string tag = text_.substr(pos + 2, end - pos - 2);
      if (!tag.empty() && (tag[0] == '#' || tag[0] == '/')) tag.erase(0, 1);
      names.insert(tag);
      pos = end + 2;
    }
    return names;
  }

  const std::string& name() const { return name_; }
  const std::string& text() const { return text_; }
  std::string version() const { return util::sha256_hex(text_).substr(0, 12); }

 private:
  void check_balanced() const {
    std::vector<std::string> stack;
    std::size_t pos = 0;
    while ((pos = text_.find("{{", pos)) != std::string::npos) {
      auto end = text_.find("}}", pos);
      if (end == std::string::npos) throw TemplateError(name_ + ": unterminated placeholder");
      std::string tag = text_.substr(pos + 2, end - pos - 2);
      if (!tag.empty() && tag[0] == '#') stack.push_back(tag.substr(1));
      if (!tag.empty() && tag[0] == '/') {
        if (stack.empty() || stack.back() != tag.substr(1))
          throw TemplateError(name_ + ": unbalanced block {{" + tag + "}}");
        stack.pop_back();
      }
      pos = end + 2;
    }
    if (!stack.empty()) throw TemplateError(name_ + ": unclosed block {{#" + stack.back() + "}}");
  }

  void render_range(std::string_view text, const TemplateVars& vars, std::string& out) const {
    std::size_t pos = 0;
    while (pos < text.size()) {
      auto open = text.find("{{", pos);
      if (open == std::string_view::npos) {
        out.append(text.substr(pos));
        return;
      }
      out.append(text.substr(pos, open - pos));
      auto close = text.find("}}", open);
      std::string tag(text.substr(open + 2, close - open - 2));
      if (!tag.empty() && tag[0] == '#') {
        std::string key = tag.substr(1);
        std::string end_tag = "{{/" + key + "}}";
        auto block_end = find_matching(text, close + 2, key);
        auto it = vars.find(key);
        if (it != vars.end() && !it->second.empty())
          render_range(text.substr(close + 2, block_end - close - 2), vars, out);
        pos = block_end + end_tag.size();
        // A block occupying whole lines leaves no blank line behind.
        if (pos < text.size() && text[pos] == '\n' && (out.empty() || out.back() == '\n')) ++pos;
        continue;
      }
      auto it = vars.find(tag);
      if (it == vars.end()) throw TemplateError(name_ + ": no value for placeholder {{" + tag + "}}");
      out.append(it->second);
      pos = close + 2;
    }
  }

  static std::size_t find_matching(std::string_view text, std::size_t from, const std::string& key) {
    const std::string open = "{{#" + key + "}}", close = "{{/" + key + "}}";
    int depth = 1;
    std::size_t pos = from;
    for (;;) {
      auto c = text.find(close, pos);
      auto o = text.find(open, pos);
      if (o != std::string_view::npos && o < c) {
        ++depth;
        pos = o + open.size();
        continue;
      }
      if (--depth == 0) return c;
      pos = c + close.size();
    }
  }

  std::string name_;
  std::string text_;
};

namespace builtin_templates {

// Step 1: Ask. Question-answering decomposition into the four elements.
inline constexpr std::string_view kAsk = R"(You are assisting a criminal court judge. Step 1 (Ask): identify the key elements that constitute a crime for the defendant {{defendant}}.

Criminal facts:
{{fact}}

Answer the following questions about defendant {{defendant}} based only on the facts above.
Q1 (Subject): What are the defendant's occupation and identity characteristics (for example, whether the defendant is a state official)?
Q2 (Criminal behaviors and consequences): What specific acts did the defendant commit, and what harm resulted?
Q3 (Object): Which entities or legal interests were violated by these acts?
Q4 (Subjective aspect): What was the defendant's psychological state (direct intent, indirect intent, negligence, and so on)?

Write your answer in exactly these four sections, each header on its own line:
[Subject]
[Criminal behaviors and consequences]
[Object]
[Subjective aspect]
)";

// Step 2: Discriminate, using the Ask summary.
inline constexpr std::string_view kDiscriminate = R"(You are assisting a criminal court judge. Step 2 (Discriminate): distinguish the candidate charges for the defendant {{defendant}}.

Criminal facts:
{{fact}}

Key elements established in Step 1:
{{ask}}

First list at most {{k}} most likely candidate charges, most likely first. Then assess whether each candidate is consistent with the key elements, and finally explain the main differences between the candidates.
{{#propose_articles}}Also list the law articles that the candidate charges would apply.
{{/propose_articles}}
Write your answer in exactly this format:
[Candidates]
1. <charge>
2. <charge>
{{#propose_articles}}[Candidate articles]
<article number per line>
{{/propose_articles}}[Assessment: <charge>]
Verdict: consistent | partially consistent | inconsistent
<reasoning>
(repeat the Assessment section for every candidate)
[Differences]
<main differences between the candidates>
)";

// Step 2 without Step 1 (w/o Ask ablation).
inline constexpr std::string_view kDiscriminateWoAsk = R"(You are assisting a criminal court judge. Step 2 (Discriminate): distinguish the candidate charges for the defendant {{defendant}}.

Criminal facts:
{{fact}}

First list at most {{k}} most likely candidate charges, most likely first. Then assess whether each candidate is consistent with the facts, and finally explain the main differences between the candidates.
{{#propose_articles}}Also list the law articles that the candidate charges would apply.
{{/propose_articles}}
Write your answer in exactly this format:
[Candidates]
1. <charge>
2. <charge>
{{#propose_articles}}[Candidate articles]
<article number per line>
{{/propose_articles}}[Assessment: <charge>]
Verdict: consistent | partially consistent | inconsistent
<reasoning>
(repeat the Assessment section for every candidate)
[Differences]
<main differences between the candidates>
)";

inline constexpr std::string_view kAnswerFormat = R"(Write your final answer in exactly this format:
[Charges]
<one charge per line>
[Articles]
<one article number per line>
{{#predict_term}}[Term]
<sentencing range, e.g. "over 1 year up to 2 years", "life imprisonment" or "no imprisonment">
{{/predict_term}})";

// Step 3: Predict with both prior trajectories.
inline const std::string kPredict = std::string(R"(You are assisting a criminal court judge. Step 3 (Predict): decide the final judgment for the defendant {{defendant}}.

Criminal facts:
{{fact}}

Key elements established in Step 1:
{{ask}}

Candidate discrimination from Step 2:
{{discrimination}}

Using the reasoning above, determine the applicable charges and law articles{{#predict_term}} and the sentencing range{{/predict_term}}.
)") + std::string(kAnswerFormat);

inline const std::string kPredictWoAsk = std::string(R"(You are assisting a criminal court judge. Step 3 (Predict): decide the final judgment for the defendant {{defendant}}.

Criminal facts:
{{fact}}

Candidate discrimination from Step 2:
{{discrimination}}

Using the reasoning above, determine the applicable charges and law articles{{#predict_term}} and the sentencing range{{/predict_term}}.
)") + std::string(kAnswerFormat);

inline const std::string kPredictWoDisc = std::string(R"(You are assisting a criminal court judge. Step 3 (Predict): decide the final judgment for the defendant {{defendant}}.

Criminal facts:
{{fact}}

Key elements established in Step 1:
{{ask}}

Using the key elements above, directly determine the applicable charges and law articles{{#predict_term}} and the sentencing range{{/predict_term}}.
)") + std::string(kAnswerFormat);

inline const std::string kPredictRefine = std::string(R"(You are assisting a criminal court judge. Decide the final judgment for the defendant {{defendant}}.

Criminal facts:
{{fact}}

Candidate charges proposed by a reference model:
{{candidates}}
{{#article_candidates}}
Candidate law articles proposed by a reference model:
{{article_candidates}}
{{/article_candidates}}
Refine these candidates: keep the ones that fit the facts, discard the rest, and determine the final charges and law articles{{#predict_term}} and the sentencing range{{/predict_term}}.
)") + std::string(kAnswerFormat);

inline const std::string kDirect = std::string(R"(You are assisting a criminal court judge. Read the criminal facts and give the judgment for the defendant {{defendant}}.

Criminal facts:
{{fact}}

Answer directly with the applicable charges and law articles{{#predict_term}} and the sentencing range{{/predict_term}}.
)") + std::string(kAnswerFormat);

// Legal syllogism / chain-of-thought baseline.
inline const std::string kCot = std::string(R"(You are assisting a criminal court judge. Reason with a legal syllogism to give the judgment for the defendant {{defendant}}.

Criminal facts:
{{fact}}

Major premise: state the legal provisions that may apply.
Minor premise: state the facts of the defendant's conduct that matter under those provisions.
Conclusion: derive the applicable charges and law articles{{#predict_term}} and the sentencing range{{/predict_term}}.
Think step by step, then end with your final answer.
)") + std::string(kAnswerFormat);

// Follow-up turn asking for sentencing separately.
inline constexpr std::string_view kSentencingTurn = R"(Based on the facts and your answer above, give the sentencing range for the defendant {{defendant}}.
Write it in exactly this format:
[Term]
<sentencing range, e.g. "over 1 year up to 2 years", "life imprisonment" or "no imprisonment">
)";

// Student-facing instruction of the sentencing task.
inline constexpr std::string_view kSentencing = R"(You are assisting a criminal court judge. Analyse the sentencing factors for the defendant {{defendant}} and give the sentencing range.

Charges against the defendant:
{{charges}}
{{#fact}}
Criminal facts:
{{fact}}
{{/fact}}
Discuss the aggravating and mitigating factors, then end with:
[Sentencing range]
<sentencing range>
)";

// Student-facing instruction of the article task.
inline constexpr std::string_view kArticle = R"(You are assisting a criminal court judge. Recite Article {{article_number}} of the Criminal Law and explain in detail how the conduct of the defendant {{defendant}} aligns with it.

Criminal facts:
{{fact}}

Write your answer in exactly this format:
[Article]
<full text of the article>
[Alignment]
<how the defendant's conduct meets each element of the article>
)";

// Student-facing instruction of the predict_all task.
inline constexpr std::string_view kPredictAll = R"(You are assisting a criminal court judge. Reason step by step for the defendant {{defendant}}: identify the key elements of the crime, distinguish the candidate charges, and give the final judgment including charges, law articles and the sentencing range.

Criminal facts:
{{fact}}
)";

inline constexpr std::string_view kTeacherAsk = R"(You are an expert criminal judge preparing a reference analysis. The defendant {{defendant}} was convicted of: {{gold_charges}} (articles {{gold_articles}}). Use this only to make the analysis accurate; do not name any charge or article number in your answer.

Criminal facts:
{{fact}}

Summarize the key elements that constitute the crime for defendant {{defendant}}:
Subject: the defendant's occupation and identity characteristics.
Criminal behaviors and consequences: the specific acts and the resulting harm.
Object: the entities or legal interests violated.
Subjective aspect: the defendant's psychological state.

Write your answer in exactly these four sections, each header on its own line:
[Subject]
[Criminal behaviors and consequences]
[Object]
[Subjective aspect]
)";

inline constexpr std::string_view kTeacherDiscriminate = R"(You are an expert criminal judge preparing a reference analysis. The correct charges for the defendant {{defendant}} are: {{gold_charges}}.

Criminal facts:
{{fact}}

Key elements:
{{ask}}

List at most {{k}} plausible candidate charges, including every correct charge together with the most confusable alternatives. Assess each candidate against the key elements so that the correct charges are shown to be consistent and the others are not, then explain the main differences.

Write your answer in exactly this format:
[Candidates]
1. <charge>
[Assessment: <charge>]
Verdict: consistent | partially consistent | inconsistent
<reasoning>
(repeat the Assessment section for every candidate)
[Differences]
<main differences between the candidates>
)";

inline constexpr std::string_view kTeacherSentencing = R"(You are an expert criminal judge preparing a reference analysis. The defendant {{defendant}} was convicted of {{charges}} and the court imposed a sentence in the range: {{gold_term}}.

Criminal facts:
{{fact}}

Explain the sentencing factors (aggravating and mitigating circumstances) that justify this range. End with:
[Sentencing range]
{{gold_term}}
)";

inline constexpr std::string_view kTeacherArticle = R"(You are an expert criminal judge preparing a reference analysis. Article {{article_number}} of the Criminal Law reads:
{{article_text}}

Criminal facts:
{{fact}}

Recite the article verbatim, then explain in detail how the conduct of the defendant {{defendant}} aligns with each of its elements.

Write your answer in exactly this format:
[Article]
<verbatim text of the article>
[Alignment]
<explanation>
)";

inline constexpr std::string_view kReprompt = R"(Your previous answer could not be used: {{reason}}
Answer again, following the required format exactly.
)";

}  // namespace builtin_templates

// Named prompt templates. Built-in defaults can be overridden per file
// from a directory of <name>.txt files.
class TemplateSet {
 public:
  static const std::vector<std::string>& names() {
    static const std::vector<std::string> kNames = {
        "ask",      "discriminate",     "discriminate_wo_ask",  "predict",        "predict_wo_ask",
        "predict_wo_disc", "predict_refine", "direct",          "cot",            "sentencing_turn",
        "sentencing",      "article",        "predict_all",     "teacher_ask",    "teacher_discriminate",
        "teacher_sentencing", "teacher_article", "reprompt"};
    return kNames;
  }

  static TemplateSet defaults() {
    namespace b = builtin_templates;
    TemplateSet s;
    s.put("ask", b::kAsk);
    s.put("discriminate", b::kDiscriminate);
    s.put("discriminate_wo_ask", b::kDiscriminateWoAsk);
    s.put("predict", b::kPredict);
    s.put("predict_wo_ask", b::kPredictWoAsk);
    s.put("predict_wo_disc", b::kPredictWoDisc);
    s.put("predict_refine", b::kPredictRefine);
    s.put("direct", b::kDirect);
    s.put("cot", b::kCot);
    s.put("sentencing_turn", b::kSentencingTurn);
    s.put("sentencing", b::kSentencing);
    s.put("article", b::kArticle);
    s.put("predict_all", b::kPredictAll);
    s.put("teacher_ask", b::kTeacherAsk);
    s.put("teacher_discriminate", b::kTeacherDiscriminate);
    s.put("teacher_sentencing", b::kTeacherSentencing);
    s.put("teacher_article", b::kTeacherArticle);
    s.put("reprompt", b::kReprompt);
    return s;
  }

  // Defaults overlaid with every known <name>.txt found in `dir`.
  static TemplateSet load_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw ConfigError("template directory not found: " + dir.string());
    TemplateSet s = defaults();
    for (const auto& n : names()) {
      auto p = dir / (n + ".txt");
      if (std::filesystem::exists(p)) s.put(n, util::read_file(p));
    }
    return s;
  }

  void put(const std::string& name, std::string_view text) { templates_[name] = PromptTemplate(name, std::string(text)); }

  const PromptTemplate& get(const std::string& name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw TemplateError("no template named '" + name + "'");
    return it->second;
  }

  json versions() const {
    json j = json::object();
    for (const auto& [n, t] : templates_) j[n] = t.version();
    return j;
  }

  void write_directory(const std::filesystem::path& dir) const {
    for (const auto& [n, t] : templates_) util::write_file_atomic(dir / (n + ".txt"), t.text());
  }

 private:
  std::map<std::string, PromptTemplate> templates_;
};

}  // namespace adapt
