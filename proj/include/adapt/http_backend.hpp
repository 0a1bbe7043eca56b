#pragma once

#include <cstdlib>
#include <string>

#include "adapt/gateway.hpp"
#include "httplib.h"

namespace adapt {

struct HttpBackendConfig {
  std::string base_url = "https://api.openai.com/v1";  // scheme://host[:port][/prefix]
  std::string api_key;
  int timeout_seconds = 120;
};

// Reads the credential from the named environment variable; empty when unset.
inline std::string api_key_from_env(const std::string& var) {
  if (var.empty()) return {};
  const char* v = std::getenv(var.c_str());
  return v ? std::string(v) : std::string{};
}

// OpenAI-compatible chat-completions and embeddings over HTTP(S).
// 408/429/5xx and connection failures are transient; 401/403 are
// authentication errors; other non-2xx statuses are permanent.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
    auto sep = cfg_.base_url.find("://");
    if (sep == std::string::npos) throw ConfigError("endpoint URL needs a scheme: " + cfg_.base_url);
    auto path_start = cfg_.base_url.find('/', sep + 3);
    origin_ = cfg_.base_url.substr(0, path_start);
    prefix_ = path_start == std::string::npos ? "" : cfg_.base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  ChatResponse chat(const ChatRequest& req) override {
    json body = {{"model", req.model_id},
                 {"messages", messages_to_json(req.messages)},
                 {"max_tokens", req.decoding.max_output_tokens}};
    if (req.decoding.greedy) {
      body["temperature"] = 0;
      body["top_p"] = 1;
    } else {
      body["temperature"] = req.decoding.temperature;
    }
    json resp = post("/chat/completions", body);
    try {
      const auto& choice = resp.at("choices").at(0);
      const auto& msg = choice.at("message");
      std::string finish = choice.value("finish_reason", std::string("stop"));
      ChatResponse r;
      if (msg.contains("refusal") && msg["refusal"].is_string() && !msg["refusal"].get<std::string>().empty()) {
        r = ChatResponse::refusal(msg["refusal"].get<std::string>());
      } else if (finish == "content_filter") {
        r = ChatResponse::refusal("content_filter");
      } else if (msg.contains("content") && msg["content"].is_string()) {
        r = ChatResponse::text(msg["content"].get<std::string>(),
                               finish == "length" ? FinishReason::length : FinishReason::stop);
      } else {
        r.finish_reason = FinishReason::error;
        r.detail = "response carried no content";
      }
      if (resp.contains("usage")) {
        r.usage.prompt_tokens = resp["usage"].value("prompt_tokens", 0L);
        r.usage.completion_tokens = resp["usage"].value("completion_tokens", 0L);
      }
      return r;
    } catch (const json::exception& e) {
      throw BackendError(std::string("malformed chat response: ") + e.what());
    }
  }

  std::vector<EmbeddingVector> embed(const std::string& model_id, std::span<const std::string> texts) override {
    json body = {{"model", model_id}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
    json resp = post("/embeddings", body);
    try {
      std::vector<EmbeddingVector> out(texts.size());
      std::size_t seen = 0;
      for (const auto& d : resp.at("data")) {
        std::size_t idx = d.value("index", seen);
        if (idx >= out.size()) throw BackendError("embedding index out of range");
        out[idx].values = d.at("embedding").get<std::vector<double>>();
        ++seen;
      }
      if (seen != texts.size()) throw BackendError("embedding count mismatch");
      return out;
    } catch (const json::exception& e) {
      throw BackendError(std::string("malformed embedding response: ") + e.what());
    }
  }

 private:
  json post(const std::string& path, const json& body) {
    httplib::Client cli(origin_);
    cli.set_connection_timeout(cfg_.timeout_seconds, 0);
    cli.set_read_timeout(cfg_.timeout_seconds, 0);
    cli.set_write_timeout(cfg_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
    auto res = cli.Post(prefix_ + path, headers, util::dump_compact(body), "application/json");
    if (!res) throw TransientBackendError("HTTP request failed: " + httplib::to_string(res.error()));
    int status = res->status;
    if (status == 401 || status == 403) throw AuthenticationError("HTTP " + std::to_string(status) + ": " + res->body);
    if (status == 408 || status == 429 || status >= 500)
      throw TransientBackendError("HTTP " + std::to_string(status));
    if (status < 200 || status >= 300) throw BackendError("HTTP " + std::to_string(status) + ": " + res->body);
    try {
      return json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw BackendError(std::string("response is not JSON: ") + e.what());
    }
  }

  HttpBackendConfig cfg_;
  std::string origin_;
  std::string prefix_;
};

}  // namespace adapt
