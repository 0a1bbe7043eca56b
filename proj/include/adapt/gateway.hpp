#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "adapt/error.hpp"
#include "adapt/util.hpp"

namespace adapt {

enum class Role { system, user, assistant };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

inline Role role_from_string(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "assistant") return Role::assistant;
  if (s == "user") return Role::user;
  throw ValidationError("unknown role '" + std::string(s) + "'");
}

struct Message {
  Role role = Role::user;
  std::string content;
  friend bool operator==(const Message&, const Message&) = default;
};

struct Decoding {
  bool greedy = true;
  int max_output_tokens = 2048;
  double temperature = 0.7;  // ignored when greedy
};

struct ChatRequest {
  std::string model_id;
  std::vector<Message> messages;
  Decoding decoding;
};

enum class FinishReason { stop, length, refusal, error };

inline const char* to_string(FinishReason f) {
  switch (f) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::refusal: return "refusal";
    case FinishReason::error: return "error";
  }
  return "error";
}

inline FinishReason finish_reason_from_string(std::string_view s) {
  if (s == "stop") return FinishReason::stop;
  if (s == "length") return FinishReason::length;
  if (s == "refusal") return FinishReason::refusal;
  return FinishReason::error;
}

struct Usage {
  long prompt_tokens = 0;
  long completion_tokens = 0;
};

struct ChatResponse {
  // Present iff finish_reason is stop or length.
  std::optional<std::string> content;
  FinishReason finish_reason = FinishReason::stop;
  Usage usage;
  std::string detail;  // refusal text or backend error message

  // Per-call metadata, never cached.
  bool from_cache = false;
  int retries = 0;

  static ChatResponse text(std::string s, FinishReason f = FinishReason::stop) {
    ChatResponse r;
    r.content = std::move(s);
    r.finish_reason = f;
    return r;
  }
  static ChatResponse refusal(std::string why) {
    ChatResponse r;
    r.finish_reason = FinishReason::refusal;
    r.detail = std::move(why);
    return r;
  }

  bool ok() const { return content.has_value(); }
};

inline json response_to_json(const ChatResponse& r) {
  json j = {{"finish_reason", to_string(r.finish_reason)},
            {"usage", {{"prompt_tokens", r.usage.prompt_tokens}, {"completion_tokens", r.usage.completion_tokens}}}};
  j["content"] = r.content ? json(*r.content) : json(nullptr);
  if (!r.detail.empty()) j["detail"] = r.detail;
  return j;
}

inline ChatResponse response_from_json(const json& j) {
  ChatResponse r;
  r.finish_reason = finish_reason_from_string(j.at("finish_reason").get<std::string>());
  if (j.contains("content") && !j["content"].is_null()) r.content = j["content"].get<std::string>();
  if (j.contains("usage")) {
    r.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0L);
    r.usage.completion_tokens = j["usage"].value("completion_tokens", 0L);
  }
  r.detail = j.value("detail", std::string{});
  return r;
}

inline json messages_to_json(std::span<const Message> msgs) {
  json arr = json::array();
  for (const auto& m : msgs) arr.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  return arr;
}

struct EmbeddingVector {
  std::vector<double> values;
  std::size_t dimension() const { return values.size(); }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

// ---------------------------------------------------------------------------
// Backend errors. Transient ones are retried by the gateway.

class BackendError : public Error {
 public:
  using Error::Error;
};
class TransientBackendError : public BackendError {
 public:
  using BackendError::BackendError;
};
class AuthenticationError : public BackendError {
 public:
  using BackendError::BackendError;
};
class RetriesExhaustedError : public BackendError {
 public:
  RetriesExhaustedError(int attempts, const std::string& last)
      : BackendError("giving up after " + std::to_string(attempts) + " attempts: " + last), attempts_(attempts) {}
  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

// A text-generation / embedding service. Implementations must be safe to
// call from several threads at once.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual ChatResponse chat(const ChatRequest& req) = 0;
  virtual std::vector<EmbeddingVector> embed(const std::string& model_id, std::span<const std::string> texts) = 0;
};

// ---------------------------------------------------------------------------
// Content-addressed response cache: <dir>/<aa>/<sha256>.json, one entry per
// file, written atomically. Without a directory it is memory-only.

class ResponseCache {
 public:
  ResponseCache() = default;
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(*dir_);
  }

  std::optional<json> get(const std::string& key) const {
    {
      std::lock_guard lk(mu_);
      auto it = memory_.find(key);
      if (it != memory_.end()) return it->second;
    }
    if (!dir_) return std::nullopt;
    auto p = path_for(key);
    std::error_code ec;
    if (!std::filesystem::exists(p, ec)) return std::nullopt;
    try {
      json j = json::parse(util::read_file(p));
      std::lock_guard lk(mu_);
      memory_.emplace(key, j);
      return j;
    } catch (const std::exception&) {
      return std::nullopt;  // torn or foreign file: treat as a miss
    }
  }

  void put(const std::string& key, const json& value) {
    if (dir_) util::write_file_atomic(path_for(key), util::dump_compact(value));
    std::lock_guard lk(mu_);
    memory_[key] = value;
  }

  const std::optional<std::filesystem::path>& directory() const { return dir_; }

 private:
  std::filesystem::path path_for(const std::string& key) const {
    return *dir_ / key.substr(0, 2) / (key + ".json");
  }

  std::optional<std::filesystem::path> dir_;
  mutable std::mutex mu_;
  mutable std::unordered_map<std::string, json> memory_;
};

inline std::string chat_cache_key(const ChatRequest& req) {
  json k = {{"kind", "chat"},
            {"model", req.model_id},
            {"messages", messages_to_json(req.messages)},
            {"max_output_tokens", req.decoding.max_output_tokens}};
  return util::sha256_hex(util::dump_compact(k));
}

inline std::string embed_cache_key(const std::string& model, const std::string& text) {
  json k = {{"kind", "embed"}, {"model", model}, {"text", text}};
  return util::sha256_hex(util::dump_compact(k));
}

// ---------------------------------------------------------------------------

struct GatewayOptions {
  int max_retries = 4;
  std::chrono::milliseconds initial_backoff{500};
  double backoff_multiplier = 2.0;
  std::chrono::milliseconds max_backoff{30000};
  std::size_t concurrency = 4;
  // Minimum spacing between request starts; zero disables rate limiting.
  std::chrono::milliseconds min_request_interval{0};
  std::string embedding_model;
  std::size_t embed_batch_size = 64;
};

struct GatewayStats {
  long chat_network_calls = 0;
  long chat_cache_hits = 0;
  long embed_network_calls = 0;
  long embed_texts_computed = 0;
  long embed_cache_hits = 0;
  long retries = 0;
  long refusals = 0;
  long max_in_flight = 0;

  json to_json() const {
    return {{"chat_network_calls", chat_network_calls}, {"chat_cache_hits", chat_cache_hits},
            {"embed_network_calls", embed_network_calls}, {"embed_texts_computed", embed_texts_computed},
            {"embed_cache_hits", embed_cache_hits},     {"retries", retries},
            {"refusals", refusals},                     {"max_in_flight", max_in_flight}};
  }
};

namespace detail {

class Semaphore {
 public:
  explicit Semaphore(std::size_t n) : free_(n) {}
  void acquire() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return free_ > 0; });
    --free_;
  }
  void release() {
    {
      std::lock_guard lk(mu_);
      ++free_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t free_;
};

// One mutex per live key, so concurrent identical requests resolve to a
// single backend call while distinct keys proceed in parallel.
class KeyedMutex {
 public:
  class Guard {
   public:
    Guard(KeyedMutex& owner, std::string key) : owner_(owner), key_(std::move(key)) {
      std::shared_ptr<std::mutex> m;
      {
        std::lock_guard lk(owner_.mu_);
        auto& slot = owner_.locks_[key_];
        if (!slot.first) slot.first = std::make_shared<std::mutex>();
        ++slot.second;
        m = slot.first;
      }
      m->lock();
      held_ = std::move(m);
    }
    ~Guard() {
      held_->unlock();
      std::lock_guard lk(owner_.mu_);
      auto it = owner_.locks_.find(key_);
      if (--it->second.second == 0) owner_.locks_.erase(it);
    }
    Guard(const Guard&) = delete;
    Guard& operator=(const Guard&) = delete;

   private:
    KeyedMutex& owner_;
    std::string key_;
    std::shared_ptr<std::mutex> held_;
  };

  Guard lock(std::string key) { return Guard(*this, std::move(key)); }

 private:
  std::mutex mu_;
  std::unordered_map<std::string, std::pair<std::shared_ptr<std::mutex>, int>> locks_;
};

}  // namespace detail

// Shared, thread-safe front door to a Backend. Copies share the backend,
// cache, limiter and counters.
class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, std::shared_ptr<ResponseCache> cache, GatewayOptions options = {})
      : backend_(std::move(backend)), cache_(std::move(cache)), options_(std::move(options)) {
    if (!backend_) throw ConfigError("gateway needs a backend");
    if (!cache_) cache_ = std::make_shared<ResponseCache>();
    if (options_.concurrency == 0) throw ConfigError("concurrency limit must be >= 1");
    state_ = std::make_shared<State>(options_.concurrency);
  }

  // Same backend and cache, fresh limiter of `limit` in-flight requests.
  Gateway with_concurrency(std::size_t limit) const {
    if (limit == 0) throw ConfigError("concurrency limit must be >= 1");
    GatewayOptions o = options_;
    o.concurrency = limit;
    Gateway g(backend_, cache_, o);
    g.dimension_ = dimension_;
    return g;
  }

  ChatResponse complete(const ChatRequest& req) {
    if (req.messages.empty()) throw ValidationError("chat request needs at least one message");
    if (!req.decoding.greedy) return call_chat(req);

    const std::string key = chat_cache_key(req);
    auto guard = state_->key_locks.lock(key);
    if (auto hit = cache_->get(key)) {
      ChatResponse r = response_from_json(*hit);
      r.from_cache = true;
      state_->cache_hits.fetch_add(1);
      if (r.finish_reason == FinishReason::refusal) state_->refusals.fetch_add(1);
      return r;
    }
    ChatResponse r = call_chat(req);
    if (r.finish_reason != FinishReason::error) cache_->put(key, response_to_json(r));
    return r;
  }

  // One vector per input, in input order. Cached per (model, text).
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) {
    if (texts.empty()) throw ValidationError("embed needs at least one text");
    const std::string& model = options_.embedding_model;
    std::vector<std::optional<EmbeddingVector>> out(texts.size());
    std::vector<std::string> missing;
    std::unordered_map<std::string, std::vector<std::size_t>> slots;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (auto hit = cache_->get(embed_cache_key(model, texts[i]))) {
        out[i] = EmbeddingVector{hit->at("values").get<std::vector<double>>()};
        state_->embed_cache_hits.fetch_add(1);
        continue;
      }
      auto& s = slots[texts[i]];
      if (s.empty()) missing.push_back(texts[i]);
      s.push_back(i);
    }
    for (std::size_t start = 0; start < missing.size(); start += options_.embed_batch_size) {
      std::size_t n = std::min(options_.embed_batch_size, missing.size() - start);
      std::span<const std::string> batch(missing.data() + start, n);
      auto vecs = with_retry([&] { return backend_->embed(model, batch); }, state_->embed_calls);
      if (vecs.size() != batch.size())
        throw BackendError("embedding backend returned " + std::to_string(vecs.size()) + " vectors for " +
                           std::to_string(batch.size()) + " texts");
      for (std::size_t i = 0; i < n; ++i) {
        check_dimension(vecs[i]);
        cache_->put(embed_cache_key(model, batch[i]), json{{"values", vecs[i].values}});
        for (auto slot : slots[batch[i]]) out[slot] = vecs[i];
      }
      state_->embed_texts.fetch_add(static_cast<long>(n));
    }
    std::vector<EmbeddingVector> result;
    result.reserve(out.size());
    for (auto& v : out) {
      check_dimension(*v);
      result.push_back(std::move(*v));
    }
    return result;
  }

  GatewayStats stats() const {
    GatewayStats s;
    s.chat_network_calls = state_->chat_calls.load();
    s.chat_cache_hits = state_->cache_hits.load();
    s.embed_network_calls = state_->embed_calls.load();
    s.embed_texts_computed = state_->embed_texts.load();
    s.embed_cache_hits = state_->embed_cache_hits.load();
    s.retries = state_->retries.load();
    s.refusals = state_->refusals.load();
    s.max_in_flight = state_->max_in_flight.load();
    return s;
  }

  const GatewayOptions& options() const { return options_; }
  std::size_t concurrency() const { return options_.concurrency; }

 private:
  struct State {
    explicit State(std::size_t limit) : limiter(limit) {}
    detail::Semaphore limiter;
    detail::KeyedMutex key_locks;
    std::mutex pace_mu;
    std::chrono::steady_clock::time_point next_start{};
    std::atomic<long> chat_calls{0}, cache_hits{0}, embed_calls{0}, embed_texts{0}, embed_cache_hits{0};
    std::atomic<long> retries{0}, refusals{0}, in_flight{0}, max_in_flight{0};
  };

  ChatResponse call_chat(const ChatRequest& req) {
    int retries = 0;
    ChatResponse r = with_retry([&] { return backend_->chat(req); }, state_->chat_calls, &retries);
    r.retries = retries;
    r.from_cache = false;
    if (r.finish_reason == FinishReason::refusal) state_->refusals.fetch_add(1);
    if (r.ok() != (r.finish_reason == FinishReason::stop || r.finish_reason == FinishReason::length)) {
      // Normalize backends that violate the content/finish_reason pairing.
      if (r.ok()) r.content.reset();
      else r.finish_reason = FinishReason::error;
    }
    return r;
  }

  void pace() {
    if (options_.min_request_interval.count() <= 0) return;
    std::chrono::steady_clock::time_point start;
    {
      std::lock_guard lk(state_->pace_mu);
      auto now = std::chrono::steady_clock::now();
      start = std::max(now, state_->next_start);
      state_->next_start = start + options_.min_request_interval;
    }
    std::this_thread::sleep_until(start);
  }

  template <class Fn>
  std::invoke_result_t<Fn&> with_retry(Fn&& fn, std::atomic<long>& counter, int* retries_out = nullptr) {
    auto delay = options_.initial_backoff;
    for (int attempt = 0;; ++attempt) {
      try {
        pace();
        state_->limiter.acquire();
        long now = state_->in_flight.fetch_add(1) + 1;
        long prev = state_->max_in_flight.load();
        while (now > prev && !state_->max_in_flight.compare_exchange_weak(prev, now)) {
        }
        counter.fetch_add(1);
        struct Release {
          State& s;
          ~Release() {
            s.in_flight.fetch_sub(1);
            s.limiter.release();
          }
        } release{*state_};
        return fn();
      } catch (const TransientBackendError& e) {
        if (attempt >= options_.max_retries) throw RetriesExhaustedError(attempt + 1, e.what());
        state_->retries.fetch_add(1);
        if (retries_out) ++*retries_out;
        std::this_thread::sleep_for(delay);
        delay = std::min(options_.max_backoff, std::chrono::duration_cast<std::chrono::milliseconds>(
                                                   delay * options_.backoff_multiplier));
      }
    }
  }

  void check_dimension(const EmbeddingVector& v) {
    if (v.dimension() == 0) throw BackendError("embedding backend returned an empty vector");
    std::size_t expected = 0;
    if (!dimension_->compare_exchange_strong(expected, v.dimension()) && expected != v.dimension())
      throw BackendError("embedding dimension mismatch: expected " + std::to_string(expected) + ", got " +
                         std::to_string(v.dimension()));
  }

  std::shared_ptr<Backend> backend_;
  std::shared_ptr<ResponseCache> cache_;
  GatewayOptions options_;
  std::shared_ptr<State> state_;
  std::shared_ptr<std::atomic<std::size_t>> dimension_ = std::make_shared<std::atomic<std::size_t>>(0);
};

// Runs fn(i) for i in [0, n) on up to `workers` threads. Results are
// returned in index order regardless of completion order.
template <class Fn>
auto parallel_map(std::size_t n, std::size_t workers, Fn&& fn) {
  using R = std::invoke_result_t<Fn&, std::size_t>;
  std::vector<std::optional<R>> slots(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        std::lock_guard lk(failure_mu);
        if (!failure) failure = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace adapt
