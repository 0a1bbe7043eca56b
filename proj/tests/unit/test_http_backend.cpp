#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "adapt/gateway.hpp"
#include "adapt/http_backend.hpp"

using namespace adapt;
using namespace std::chrono_literals;

namespace {

// Local OpenAI-shaped server on an ephemeral port.
class MockServer {
 public:
  MockServer() {
    port_ = srv_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { srv_.listen_after_bind(); });
    srv_.wait_until_ready();
  }
  ~MockServer() {
    srv_.stop();
    thread_.join();
  }
  httplib::Server& srv() { return srv_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

 private:
  httplib::Server srv_;
  int port_ = 0;
  std::thread thread_;
};

json chat_body(const std::string& content, const std::string& finish = "stop") {
  return {{"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}, {"finish_reason", finish}}}},
          {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 3}}}};
}

ChatRequest req(const std::string& text) {
  ChatRequest r;
  r.model_id = "gen";
  r.messages = {{Role::user, text}};
  return r;
}

GatewayOptions fast() {
  GatewayOptions o;
  o.initial_backoff = 1ms;
  o.max_backoff = 2ms;
  return o;
}

}  // namespace

TEST(HttpBackend, ServiceUnavailableTwiceThenSuccess) {
  MockServer m;
  std::atomic<int> hits{0};
  std::string auth, model;
  m.srv().Post("/v1/chat/completions", [&](const httplib::Request& rq, httplib::Response& rs) {
    if (++hits <= 2) {
      rs.status = 503;
      return;
    }
    auth = rq.get_header_value("Authorization");
    model = json::parse(rq.body).at("model");
    rs.set_content(util::dump_compact(chat_body("fine")), "application/json");
  });
  Gateway gw(std::make_shared<HttpBackend>(HttpBackendConfig{m.url(), "sk-test", 5}), nullptr, fast());
  auto r = gw.complete(req("hi"));
  EXPECT_EQ(*r.content, "fine");
  EXPECT_EQ(r.retries, 2);
  EXPECT_EQ(hits.load(), 3);
  EXPECT_EQ(auth, "Bearer sk-test");
  EXPECT_EQ(model, "gen");
  EXPECT_EQ(r.usage.prompt_tokens, 11);
}

TEST(HttpBackend, GreedyRequestBody) {
  MockServer m;
  json seen;
  m.srv().Post("/v1/chat/completions", [&](const httplib::Request& rq, httplib::Response& rs) {
    seen = json::parse(rq.body);
    rs.set_content(util::dump_compact(chat_body("x")), "application/json");
  });
  HttpBackend b({m.url(), "", 5});
  b.chat(req("q"));
  EXPECT_EQ(seen["temperature"], 0);
  EXPECT_EQ(seen["messages"][0]["content"], "q");
  EXPECT_EQ(seen["max_tokens"], 2048);
}

TEST(HttpBackend, StatusClassification) {
  MockServer m;
  int status = 401;
  m.srv().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& rs) { rs.status = status; });
  HttpBackend b({m.url(), "", 5});
  EXPECT_THROW(b.chat(req("q")), AuthenticationError);
  status = 429;
  EXPECT_THROW(b.chat(req("q")), TransientBackendError);
  status = 400;
  try {
    b.chat(req("q"));
    FAIL();
  } catch (const TransientBackendError&) {
    FAIL() << "400 must not be transient";
  } catch (const BackendError&) {
  }
}

TEST(HttpBackend, RefusalAndLength) {
  MockServer m;
  json body;
  m.srv().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& rs) {
    rs.set_content(util::dump_compact(body), "application/json");
  });
  HttpBackend b({m.url(), "", 5});
  body = {{"choices", {{{"message", {{"role", "assistant"}, {"content", nullptr}, {"refusal", "not allowed"}}},
                        {"finish_reason", "stop"}}}}};
  auto r = b.chat(req("q"));
  EXPECT_EQ(r.finish_reason, FinishReason::refusal);
  EXPECT_EQ(r.detail, "not allowed");
  body = chat_body("trunc", "length");
  EXPECT_EQ(b.chat(req("q")).finish_reason, FinishReason::length);
  body = chat_body("", "content_filter");
  EXPECT_EQ(b.chat(req("q")).finish_reason, FinishReason::refusal);
}

TEST(HttpBackend, EmbeddingsInIndexOrder) {
  MockServer m;
  m.srv().Post("/v1/embeddings", [&](const httplib::Request&, httplib::Response& rs) {
    json d = {{"data", {{{"index", 1}, {"embedding", {0.0, 1.0}}}, {{"index", 0}, {"embedding", {1.0, 0.0}}}}}};
    rs.set_content(util::dump_compact(d), "application/json");
  });
  HttpBackend b({m.url(), "", 5});
  std::vector<std::string> texts = {"a", "b"};
  auto v = b.embed("e", texts);
  EXPECT_EQ(v[0].values, (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(v[1].values, (std::vector<double>{0.0, 1.0}));
}

TEST(HttpBackend, ConnectionFailureIsTransient) {
  HttpBackend b({"http://127.0.0.1:1/v1", "", 1});
  EXPECT_THROW(b.chat(req("q")), TransientBackendError);
}

TEST(HttpBackend, KeyFromEnvironment) {
  ::setenv("ADAPT_TEST_KEY", "abc", 1);
  EXPECT_EQ(api_key_from_env("ADAPT_TEST_KEY"), "abc");
  ::unsetenv("ADAPT_TEST_KEY");
  EXPECT_EQ(api_key_from_env("ADAPT_TEST_KEY"), "");
  EXPECT_THROW(HttpBackend({"localhost:80", "", 1}), ConfigError);
}
