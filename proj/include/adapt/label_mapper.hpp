#pragma once

#include <cmath>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "adapt/corpus.hpp"
#include "adapt/gateway.hpp"
#include "adapt/reasoning.hpp"

namespace adapt {

enum class MappingMethod { exact, normalized, embedding };

inline const char* to_string(MappingMethod m) {
  switch (m) {
    case MappingMethod::exact: return "exact";
    case MappingMethod::normalized: return "normalized";
    case MappingMethod::embedding: return "embedding";
  }
  return "exact";
}

struct MappingOutcome {
  std::string input;
  std::string mapped;
  MappingMethod method = MappingMethod::exact;
  std::optional<double> similarity;  // embedding method only

  json to_json() const {
    json j = {{"input", input}, {"mapped", mapped}, {"method", to_string(method)}};
    j["similarity"] = similarity ? json(*similarity) : json(nullptr);
    return j;
  }
};

class MappingError : public Error {
 public:
  using Error::Error;
};

// Affix rules stripped by normalize_label, applied repeatedly until stable.
struct NormalizeRules {
  std::vector<std::string> prefixes = {"the crime of ", "crime of ", "the offence of ", "offence of ",
                                       "the offense of ", "offense of "};
  std::vector<std::string> suffixes = {" crime", " offence", " offense", "罪"};
  bool lowercase = true;
};

// Trims whitespace and surrounding punctuation/brackets, strips the
// configured affixes and lowercases ASCII letters. Idempotent.
inline std::string normalize_label(std::string_view s, const NormalizeRules& rules = {}) {
  std::string cur = clean_item(s);
  for (;;) {
    std::string prev = cur;
    for (const auto& p : rules.prefixes)
      if (cur.size() > p.size() && util::starts_with_ci(cur, p)) cur = std::string(util::trim(cur.substr(p.size())));
    for (const auto& x : rules.suffixes)
      if (cur.size() > x.size() && util::ends_with_ci(cur, x))
        cur = std::string(util::trim(cur.substr(0, cur.size() - x.size())));
    cur = clean_item(cur);
    if (cur == prev) break;
  }
  return rules.lowercase ? util::to_lower_ascii(cur) : cur;
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw MappingError("cosine over vectors of different dimension");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Maps free-text charge names onto the pool. Pool embeddings are computed
// once, on first use, and reused for every mapping.
class LabelMapper {
 public:
  LabelMapper(const LabelPool& pool, Gateway gateway, NormalizeRules rules = {})
      : pool_(pool), gateway_(std::move(gateway)), rules_(std::move(rules)) {
    if (pool_.empty()) throw ValidationError("label pool has no charges");
    for (const auto& c : pool_.charges()) normalized_.emplace(normalize_label(c, rules_), c);
  }

  // With a floor set, embedding matches below it raise MappingError.
  void set_similarity_floor(std::optional<double> floor) { floor_ = floor; }

  MappingOutcome map_charge(const std::string& s) {
    MappingOutcome out;
    out.input = s;
    if (pool_.has_charge(s)) {
      out.mapped = s;
      out.method = MappingMethod::exact;
      return out;
    }
    auto norm = normalize_label(s, rules_);
    if (auto it = normalized_.find(norm); it != normalized_.end()) {
      out.mapped = it->second;
      out.method = MappingMethod::normalized;
      record(out);
      return out;
    }
    warm_up();
    std::vector<std::string> one = {s};
    auto vec = gateway_.embed(one).front();
    const auto& charges = pool_.charges();
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t i = 0; i < charges.size(); ++i) {
      double sim = cosine_similarity(vec.values, pool_vectors_[i].values);
      if (sim > best_sim) {  // strict: ties keep the earlier pool label
        best_sim = sim;
        best = i;
      }
    }
    out.mapped = charges[best];
    out.method = MappingMethod::embedding;
    out.similarity = best_sim;
    if (floor_ && best_sim < *floor_) {
      record(out);
      throw MappingError("'" + s + "' is below the similarity floor (best '" + out.mapped + "' at " +
                         std::to_string(best_sim) + ")");
    }
    record(out);
    return out;
  }

  // Non-exact mappings seen so far, in call order.
  std::vector<MappingOutcome> audit_log() const {
    std::lock_guard lk(audit_mu_);
    return audit_;
  }

  const LabelPool& pool() const { return pool_; }

 private:
  void warm_up() {
    std::call_once(warm_, [&] {
      pool_vectors_ = gateway_.embed(pool_.charges());
    });
  }

  void record(const MappingOutcome& o) {
    std::lock_guard lk(audit_mu_);
    audit_.push_back(o);
  }

  const LabelPool& pool_;
  Gateway gateway_;
  NormalizeRules rules_;
  std::unordered_map<std::string, std::string> normalized_;
  std::once_flag warm_;
  std::vector<EmbeddingVector> pool_vectors_;
  std::optional<double> floor_;
  mutable std::mutex audit_mu_;
  std::vector<MappingOutcome> audit_;
};

// First integer in the text; it must be a pool article.
inline int map_article(std::string_view s, const LabelPool& pool) {
  auto nums = util::extract_integers(s);
  if (nums.empty()) throw MappingError("no article number in '" + std::string(s) + "'");
  long long n = nums.front();
  if (n <= 0 || n > std::numeric_limits<int>::max() || !pool.has_article(static_cast<int>(n)))
    throw MappingError("article " + std::to_string(n) + " is not in the label pool");
  return static_cast<int>(n);
}

}  // namespace adapt
