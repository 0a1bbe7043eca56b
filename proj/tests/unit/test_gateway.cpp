#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <thread>

#include "adapt/gateway.hpp"
#include "adapt/scripted_backend.hpp"

namespace fs = std::filesystem;
using namespace adapt;
using namespace std::chrono_literals;

namespace {

ChatRequest ask(std::string text, std::string model = "m") {
  ChatRequest r;
  r.model_id = std::move(model);
  r.messages = {{Role::user, std::move(text)}};
  return r;
}

GatewayOptions fast(std::size_t concurrency = 4) {
  GatewayOptions o;
  o.initial_backoff = 1ms;
  o.max_backoff = 2ms;
  o.concurrency = concurrency;
  return o;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("adapt_gw_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Gateway, CacheHitSkipsBackend) {
  auto b = std::make_shared<ScriptedBackend>();
  b->on({"hello"}, "world");
  Gateway gw(b, nullptr, fast());
  auto r1 = gw.complete(ask("hello"));
  auto r2 = gw.complete(ask("hello"));
  EXPECT_EQ(*r1.content, "world");
  EXPECT_FALSE(r1.from_cache);
  EXPECT_TRUE(r2.from_cache);
  EXPECT_EQ(*r2.content, "world");
  EXPECT_EQ(b->chat_calls(), 1);
  EXPECT_EQ(gw.stats().chat_cache_hits, 1);
}

TEST(Gateway, CacheKeyDistinguishesModelMessagesAndBudget) {
  auto base = ask("x");
  auto other_model = ask("x", "n");
  auto other_text = ask("y");
  auto other_budget = ask("x");
  other_budget.decoding.max_output_tokens = 17;
  auto other_role = ask("x");
  other_role.messages[0].role = Role::system;
  std::set<std::string> keys = {chat_cache_key(base), chat_cache_key(other_model), chat_cache_key(other_text),
                                chat_cache_key(other_budget), chat_cache_key(other_role)};
  EXPECT_EQ(keys.size(), 5u);
  EXPECT_EQ(chat_cache_key(base), chat_cache_key(ask("x")));
}

TEST(Gateway, CacheSoundnessProperty) {
  // A warm cache answers exactly what the backend answered, for any order of requests.
  std::mt19937_64 rng(17);
  fs::path dir = scratch("sound");
  auto b = std::make_shared<ScriptedBackend>();
  for (int i = 0; i < 20; ++i) b->on({"q" + std::to_string(i) + "."}, "answer " + std::to_string(i * 7));
  std::map<std::string, std::string> first;
  {
    Gateway gw(b, std::make_shared<ResponseCache>(dir), fast());
    for (int i = 0; i < 20; ++i) first["q" + std::to_string(i) + "."] = *gw.complete(ask("q" + std::to_string(i) + ".")).content;
  }
  auto calls = b->chat_calls();
  Gateway warm(b, std::make_shared<ResponseCache>(dir), fast());
  for (int k = 0; k < 200; ++k) {
    std::string q = "q" + std::to_string(rng() % 20) + ".";
    auto r = warm.complete(ask(q));
    ASSERT_TRUE(r.from_cache);
    ASSERT_EQ(*r.content, first[q]);
  }
  EXPECT_EQ(b->chat_calls(), calls);
  fs::remove_all(dir);
}

TEST(Gateway, RefusalsAreCachedErrorsAreNot) {
  auto b = std::make_shared<ScriptedBackend>();
  b->add_rule(json{{"contains", {"decline"}}, {"responses", {{{"refusal", "no"}}}}});
  Gateway gw(b, nullptr, fast());
  auto r = gw.complete(ask("decline"));
  EXPECT_EQ(r.finish_reason, FinishReason::refusal);
  EXPECT_FALSE(r.ok());
  EXPECT_TRUE(gw.complete(ask("decline")).from_cache);
  EXPECT_EQ(b->chat_calls(), 1);
  EXPECT_EQ(gw.stats().refusals, 2);

  auto bad = std::make_shared<CallbackBackend>([](const ChatRequest&) {
    ChatResponse r;
    r.finish_reason = FinishReason::error;
    return r;
  });
  Gateway g2(bad, nullptr, fast());
  g2.complete(ask("a"));
  EXPECT_FALSE(g2.complete(ask("a")).from_cache);
}

TEST(Gateway, RetriesTransientThenSucceeds) {
  auto b = std::make_shared<ScriptedBackend>();
  b->add_rule(json{{"contains", {"flaky"}},
                   {"responses", {{{"transient", true}}, {{"transient", true}}, {{"content", "ok"}}}}});
  Gateway gw(b, nullptr, fast());
  auto r = gw.complete(ask("flaky"));
  EXPECT_EQ(*r.content, "ok");
  EXPECT_EQ(r.retries, 2);
  EXPECT_EQ(gw.stats().retries, 2);
  EXPECT_EQ(b->chat_calls(), 3);
}

TEST(Gateway, RetriesExhausted) {
  auto b = std::make_shared<ScriptedBackend>();
  b->add_rule(json{{"contains", {"down"}}, {"responses", {{{"transient", true}}}}});
  auto o = fast();
  o.max_retries = 2;
  Gateway gw(b, nullptr, o);
  try {
    gw.complete(ask("down"));
    FAIL();
  } catch (const RetriesExhaustedError& e) {
    EXPECT_EQ(e.attempts(), 3);
  }
  EXPECT_EQ(b->chat_calls(), 3);
}

TEST(Gateway, AuthErrorIsNotRetried) {
  auto b = std::make_shared<ScriptedBackend>();
  b->add_rule(json{{"contains", {"x"}}, {"responses", {{{"auth_error", true}}}}});
  Gateway gw(b, nullptr, fast());
  EXPECT_THROW(gw.complete(ask("x")), AuthenticationError);
  EXPECT_EQ(b->chat_calls(), 1);
}

TEST(Gateway, BoundedConcurrency) {
  for (std::size_t limit : {1u, 2u, 3u}) {
    std::atomic<int> now{0}, peak{0};
    auto b = std::make_shared<CallbackBackend>([&](const ChatRequest& req) {
      int n = ++now;
      int p = peak.load();
      while (n > p && !peak.compare_exchange_weak(p, n)) {
      }
      std::this_thread::sleep_for(2ms);
      --now;
      return ChatResponse::text(req.messages[0].content);
    });
    Gateway gw(b, nullptr, fast(limit));
    auto out = parallel_map(24, 8, [&](std::size_t i) { return *gw.complete(ask(std::to_string(i))).content; });
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], std::to_string(i));
    EXPECT_LE(peak.load(), static_cast<int>(limit));
    EXPECT_LE(gw.stats().max_in_flight, static_cast<long>(limit));
  }
}

TEST(Gateway, ConcurrentIdenticalRequestsCallOnce) {
  std::atomic<int> calls{0};
  auto b = std::make_shared<CallbackBackend>([&](const ChatRequest&) {
    ++calls;
    std::this_thread::sleep_for(5ms);
    return ChatResponse::text("same");
  });
  Gateway gw(b, nullptr, fast(8));
  parallel_map(16, 8, [&](std::size_t) { return *gw.complete(ask("dup")).content; });
  EXPECT_EQ(calls.load(), 1);
}

TEST(Gateway, EmbedCachesPerTextAndDeduplicates) {
  auto b = std::make_shared<ScriptedBackend>();
  b->on_embed("a", {1, 0});
  b->on_embed("b", {0, 1});
  auto o = fast();
  o.embedding_model = "e";
  Gateway gw(b, nullptr, o);
  std::vector<std::string> in = {"a", "b", "a"};
  auto v = gw.embed(in);
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v[0], v[2]);
  EXPECT_EQ(b->embedded_texts(), 2);
  std::vector<std::string> again = {"b"};
  gw.embed(again);
  EXPECT_EQ(b->embed_calls(), 1);
  EXPECT_EQ(gw.stats().embed_cache_hits, 1);
}

TEST(Gateway, EmbedDimensionMismatch) {
  auto b = std::make_shared<ScriptedBackend>();
  b->on_embed("a", {1, 0});
  b->on_embed("b", {0, 1, 0});
  Gateway gw(b, nullptr, fast());
  std::vector<std::string> a = {"a"}, bb = {"b"};
  gw.embed(a);
  EXPECT_THROW(gw.embed(bb), BackendError);
}

TEST(Gateway, RateLimitSpacesRequests) {
  auto b = std::make_shared<CallbackBackend>([](const ChatRequest& r) { return ChatResponse::text(r.messages[0].content); });
  auto o = fast(4);
  o.min_request_interval = 20ms;
  Gateway gw(b, nullptr, o);
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 4; ++i) gw.complete(ask(std::to_string(i)));
  EXPECT_GE(std::chrono::steady_clock::now() - t0, 60ms);
}

TEST(ParallelMap, KeepsOrderAndPropagatesErrors) {
  auto out = parallel_map(100, 7, [](std::size_t i) { return i * i; });
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(out[i], i * i);
  EXPECT_THROW(parallel_map(10, 3,
                            [](std::size_t i) {
                              if (i == 5) throw std::runtime_error("boom");
                              return i;
                            }),
               std::runtime_error);
  EXPECT_TRUE(parallel_map(0, 4, [](std::size_t i) { return i; }).empty());
}

TEST(ScriptedBackend, FirstMatchAndSequence) {
  auto b = std::make_shared<ScriptedBackend>();
  b->add_rule(json{{"contains", {"a"}}, {"excludes", {"skip"}}, {"responses", {{{"content", "1"}}, {{"content", "2"}}}}});
  b->on({"a"}, "fallback");
  EXPECT_EQ(*b->chat(ask("a")).content, "1");
  EXPECT_EQ(*b->chat(ask("a")).content, "2");
  EXPECT_EQ(*b->chat(ask("a")).content, "2");
  EXPECT_EQ(*b->chat(ask("a skip")).content, "fallback");
  EXPECT_THROW(b->chat(ask("zzz")), BackendError);
}
