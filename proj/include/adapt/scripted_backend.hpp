#pragma once

#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "adapt/gateway.hpp"

namespace adapt {

// Test and offline backend driven by request-pattern -> response rules.
//
// A fixture directory holds *.json files, read in filename order. Each file
// is one rule, an array of rules, or {"rules": [...]}. Chat rules:
//
//   {"id": "c01-ask", "contains": ["Step 1", "Zhang San"], "excludes": [...],
//    "model": "optional-model-id",
//    "responses": [{"transient": true}, {"refusal": "..."},
//                  {"content": "...", "finish_reason": "length"}]}
//
// "response": "text" is shorthand for a single stop response. `contains`
// and `excludes` are matched against all message contents joined by
// newlines. The first matching rule wins; its responses are consumed in
// order and the last one repeats. {"auth_error": true} and {"error": "..."}
// raise authentication and permanent backend errors.
//
// Embedding rules: {"embed": "text", "vector": [...]} for exact texts, and
// {"embed_fallback": {"dimension": 8}} for a deterministic hash-derived
// vector for anything else.
class ScriptedBackend : public Backend {
 public:
  struct CallRecord {
    std::string kind;  // "chat" or "embed"
    std::string model;
    std::string prompt;
    std::string rule_id;
    std::size_t message_count = 0;
  };

  ScriptedBackend() = default;

  static std::shared_ptr<ScriptedBackend> from_directory(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ConfigError("scripted backend directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    auto b = std::make_shared<ScriptedBackend>();
    for (const auto& f : files) {
      json j;
      try {
        j = json::parse(util::read_file(f));
      } catch (const json::parse_error& e) {
        throw ConfigError("scripted fixture " + f.string() + ": " + e.what());
      }
      b->add_rules(j, f.filename().string());
    }
    return b;
  }

  void add_rules(const json& j, const std::string& origin = "inline") {
    if (j.is_array()) {
      for (const auto& r : j) add_rule(r, origin);
    } else if (j.is_object() && j.contains("rules")) {
      for (const auto& r : j["rules"]) add_rule(r, origin);
    } else {
      add_rule(j, origin);
    }
  }

  void add_rule(const json& r, const std::string& origin = "inline") {
    std::lock_guard lk(mu_);
    try {
      if (r.contains("embed")) {
        embeddings_.push_back({r.at("embed").get<std::string>(), r.at("vector").get<std::vector<double>>()});
        return;
      }
      if (r.contains("embed_fallback")) {
        fallback_dimension_ = r["embed_fallback"].at("dimension").get<std::size_t>();
        return;
      }
      ChatRule rule;
      rule.id = r.value("id", origin + "#" + std::to_string(rules_.size()));
      if (r.contains("contains")) rule.contains = r["contains"].get<std::vector<std::string>>();
      if (r.contains("excludes")) rule.excludes = r["excludes"].get<std::vector<std::string>>();
      rule.model = r.value("model", std::string{});
      if (r.contains("response")) {
        rule.responses.push_back(json{{"content", r["response"]}});
      } else {
        for (const auto& x : r.at("responses")) rule.responses.push_back(x);
      }
      if (rule.responses.empty()) throw ConfigError("rule " + rule.id + " has no responses");
      rules_.push_back(std::move(rule));
    } catch (const json::exception& e) {
      throw ConfigError("scripted rule from " + origin + ": " + e.what());
    }
  }

  // Convenience for tests: a single-response rule.
  void on(std::vector<std::string> contains, std::string response, std::string id = {}) {
    json r = {{"contains", std::move(contains)}, {"response", std::move(response)}};
    if (!id.empty()) r["id"] = id;
    add_rule(r);
  }

  void on_embed(std::string text, std::vector<double> vec) {
    add_rule(json{{"embed", std::move(text)}, {"vector", std::move(vec)}});
  }

  ChatResponse chat(const ChatRequest& req) override {
    std::string prompt;
    for (const auto& m : req.messages) {
      if (!prompt.empty()) prompt += '\n';
      prompt += m.content;
    }
    json step;
    std::string rule_id;
    {
      std::lock_guard lk(mu_);
      ChatRule* hit = nullptr;
      for (auto& r : rules_) {
        if (!r.model.empty() && r.model != req.model_id) continue;
        bool ok = std::all_of(r.contains.begin(), r.contains.end(),
                              [&](const std::string& s) { return prompt.find(s) != std::string::npos; }) &&
                  std::none_of(r.excludes.begin(), r.excludes.end(),
                               [&](const std::string& s) { return prompt.find(s) != std::string::npos; });
        if (ok) {
          hit = &r;
          break;
        }
      }
      log_.push_back({"chat", req.model_id, prompt, hit ? hit->id : "", req.messages.size()});
      ++chat_calls_;
      if (!hit) throw BackendError("scripted backend: no rule matches request to model '" + req.model_id + "'");
      step = hit->responses[std::min(hit->cursor, hit->responses.size() - 1)];
      ++hit->cursor;
      rule_id = hit->id;
    }
    if (step.value("transient", false)) throw TransientBackendError("scripted transient failure (" + rule_id + ")");
    if (step.value("auth_error", false)) throw AuthenticationError("scripted authentication failure");
    if (step.contains("error")) throw BackendError(step["error"].get<std::string>());
    if (step.contains("refusal")) return ChatResponse::refusal(step["refusal"].get<std::string>());
    ChatResponse r = ChatResponse::text(step.at("content").get<std::string>(),
                                        finish_reason_from_string(step.value("finish_reason", "stop")));
    r.usage.prompt_tokens = static_cast<long>(prompt.size() / 4);
    r.usage.completion_tokens = static_cast<long>(r.content->size() / 4);
    return r;
  }

  std::vector<EmbeddingVector> embed(const std::string& model_id, std::span<const std::string> texts) override {
    std::lock_guard lk(mu_);
    ++embed_calls_;
    std::vector<EmbeddingVector> out;
    for (const auto& t : texts) {
      log_.push_back({"embed", model_id, t, "", 0});
      ++embedded_texts_;
      auto it = std::find_if(embeddings_.begin(), embeddings_.end(), [&](const auto& e) { return e.first == t; });
      if (it != embeddings_.end()) {
        out.push_back(EmbeddingVector{it->second});
      } else if (fallback_dimension_ > 0) {
        out.push_back(hash_vector(t, fallback_dimension_));
      } else {
        throw BackendError("scripted backend: no embedding for '" + t + "'");
      }
    }
    return out;
  }

  std::vector<CallRecord> calls() const {
    std::lock_guard lk(mu_);
    return log_;
  }
  long chat_calls() const {
    std::lock_guard lk(mu_);
    return chat_calls_;
  }
  long embed_calls() const {
    std::lock_guard lk(mu_);
    return embed_calls_;
  }
  long embedded_texts() const {
    std::lock_guard lk(mu_);
    return embedded_texts_;
  }
  void clear_log() {
    std::lock_guard lk(mu_);
    log_.clear();
  }

  // Deterministic unit-free vector in [-1, 1]^dim derived from SHA-256.
  static EmbeddingVector hash_vector(const std::string& text, std::size_t dim) {
    EmbeddingVector v;
    std::string h;
    for (std::size_t i = 0; v.values.size() < dim; ++i) {
      h = util::sha256_hex(text + "#" + std::to_string(i));
      for (std::size_t k = 0; k + 4 <= h.size() && v.values.size() < dim; k += 4) {
        int x = std::stoi(h.substr(k, 4), nullptr, 16);
        v.values.push_back(x / 32767.5 - 1.0);
      }
    }
    return v;
  }

 private:
  struct ChatRule {
    std::string id;
    std::vector<std::string> contains;
    std::vector<std::string> excludes;
    std::string model;
    std::vector<json> responses;
    std::size_t cursor = 0;
  };

  mutable std::mutex mu_;
  std::vector<ChatRule> rules_;
  std::vector<std::pair<std::string, std::vector<double>>> embeddings_;
  std::size_t fallback_dimension_ = 0;
  std::vector<CallRecord> log_;
  long chat_calls_ = 0;
  long embed_calls_ = 0;
  long embedded_texts_ = 0;
};

// Backend delegating to callables; used for instrumented mocks.
class CallbackBackend : public Backend {
 public:
  using ChatFn = std::function<ChatResponse(const ChatRequest&)>;
  using EmbedFn = std::function<std::vector<EmbeddingVector>(const std::string&, std::span<const std::string>)>;

  explicit CallbackBackend(ChatFn chat, EmbedFn embed = {}) : chat_(std::move(chat)), embed_(std::move(embed)) {}

  ChatResponse chat(const ChatRequest& req) override { return chat_(req); }
  std::vector<EmbeddingVector> embed(const std::string& model, std::span<const std::string> texts) override {
    if (!embed_) throw BackendError("callback backend has no embedding function");
    return embed_(model, texts);
  }

 private:
  ChatFn chat_;
  EmbedFn embed_;
};

}  // namespace adapt
