#pragma once

/**
 * Backend abstraction over model endpoints.
 *
 * Two implementations share one contract:
 *  - HttpBackend: OpenAI-compatible POST /v1/chat/completions with bounded
 *    retries (429/5xx/transport) and non-decreasing backoff.
 *  - MockBackend: deterministic scripted playbook keyed on a stable request
 *    digest, with optional per-key response sequences so multi-sampling
 *    loops can be scripted (call 1 -> A, call 2 -> B, ...; the final entry
 *    repeats once the sequence is exhausted).
 *
 * Every backend enforces its own max_concurrency with a semaphore, so
 * callers may fire requests from any number of workers.
 */

#include "synthkit/core.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

namespace synthkit {

// ============================================================================
// Chat messages and requests
// ============================================================================

enum class Role { System, User, Assistant };

inline std::string to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  throw Error("unknown Role");
}

inline Role role_from_string(const std::string& s) {
  if (s == "system") return Role::System;
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  throw Error("unknown role: " + s);
}

struct ChatMessage {
  Role role = Role::User;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct CompletionRequest {
  std::vector<ChatMessage> messages;  // non-empty; last message has role User
  DecodingParams decoding;
  std::string backend_id;

  bool operator==(const CompletionRequest&) const = default;

  void validate() const {
    if (messages.empty()) throw ConfigError("request has no messages");
    if (messages.back().role != Role::User)
      throw ConfigError("last message must have role user");
    for (const auto& m : messages)
      if (m.role == Role::User && m.content.empty())
        throw ConfigError("user message content must be non-empty");
    decoding.validate();
  }
};

inline void to_json(json& j, const ChatMessage& m) {
  j = json{{"role", to_string(m.role)}, {"content", m.content}};
}

inline void from_json(const json& j, ChatMessage& m) {
  m.role = role_from_string(j.at("role").get<std::string>());
  j.at("content").get_to(m.content);
}

inline void to_json(json& j, const CompletionRequest& r) {
  j = json{{"messages", r.messages},
           {"decoding", r.decoding},
           {"backend_id", r.backend_id}};
}

inline void from_json(const json& j, CompletionRequest& r) {
  j.at("messages").get_to(r.messages);
  j.at("decoding").get_to(r.decoding);
  j.at("backend_id").get_to(r.backend_id);
}

// ============================================================================
// Request digest
// ============================================================================

namespace detail {

inline void fnv_update(std::uint64_t& h, const char* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ULL;
  }
}

inline void fnv_update(std::uint64_t& h, const std::string& s) {
  fnv_update(h, s.data(), s.size());
}

// Shortest round-trip formatting; identical for identical doubles on any
// IEEE-754 platform.
inline std::string canonical_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string fnv_hex(std::uint64_t h) {
  static const char* hexdigits = "0123456789abcdef";
  std::string hex(16, '0');
  for (int i = 15; i >= 0; --i) {
    hex[static_cast<std::size_t>(i)] = hexdigits[h & 0xF];
    h >>= 4;
  }
  return hex;
}

}  // namespace detail

/// Stable 64-bit digest of (messages, decoding incl. seed). Identical
/// requests digest identically across processes and platforms; backend_id is
/// deliberately excluded so one playbook serves any backend name.
inline std::string request_digest(const CompletionRequest& req) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const auto& m : req.messages) {
    detail::fnv_update(h, to_string(m.role));
    detail::fnv_update(h, "\x1f", 1);
    detail::fnv_update(h, m.content);
    detail::fnv_update(h, "\x1e", 1);
  }
  const auto& d = req.decoding;
  std::string dec = detail::canonical_double(d.temperature) + "|" +
                    detail::canonical_double(d.top_p) + "|" +
                    std::to_string(d.max_tokens) + "|" +
                    detail::canonical_double(d.frequency_penalty) + "|" +
                    detail::canonical_double(d.presence_penalty) + "|" +
                    (d.seed ? std::to_string(*d.seed) : "-");
  detail::fnv_update(h, "\x1d", 1);
  detail::fnv_update(h, dec);
  return detail::fnv_hex(h);
}

// ============================================================================
// Backend specification
// ============================================================================

enum class BackendKind { Http, Mock };

inline std::string to_string(BackendKind k) {
  return k == BackendKind::Http ? "http" : "mock";
}

inline BackendKind backend_kind_from_string(const std::string& s) {
  if (s == "http") return BackendKind::Http;
  if (s == "mock") return BackendKind::Mock;
  throw Error("unknown backend kind: " + s);
}

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_backoff{250};

  bool operator==(const RetryPolicy&) const = default;
};

/// Backoff before retry attempt `next_attempt` (2..max_attempts). Linear in
/// the attempt number, so the schedule is non-decreasing.
inline std::chrono::milliseconds backoff_for_attempt(const RetryPolicy& p, int next_attempt) {
  return p.base_backoff * std::max(0, next_attempt - 1);
}

struct BackendSpec {
  std::string id;
  BackendKind kind = BackendKind::Mock;
  std::optional<std::string> base_url;     // required for Http
  std::string model_name;
  std::optional<std::string> api_key_env;  // env var holding the API key
  int max_concurrency = 4;
  RetryPolicy retry;
  std::optional<std::string> playbook;     // Mock: JSONL playbook file
  std::chrono::milliseconds timeout{120000};

  bool operator==(const BackendSpec&) const = default;

  void validate() const {
    if (kind == BackendKind::Http && (!base_url || base_url->empty()))
      throw ConfigError("backend '" + id + "': http kind requires base_url");
    if (max_concurrency < 1)
      throw ConfigError("backend '" + id + "': max_concurrency must be >= 1");
    if (retry.max_attempts < 1)
      throw ConfigError("backend '" + id + "': retry.max_attempts must be >= 1");
  }
};

inline void to_json(json& j, const BackendSpec& s) {
  j = json{{"kind", to_string(s.kind)},
           {"model_name", s.model_name},
           {"max_concurrency", s.max_concurrency},
           {"retry", {{"max_attempts", s.retry.max_attempts},
                      {"base_backoff_ms", s.retry.base_backoff.count()}}},
           {"timeout_ms", s.timeout.count()}};
  detail::put_opt(j, "base_url", s.base_url);
  detail::put_opt(j, "api_key_env", s.api_key_env);
  detail::put_opt(j, "playbook", s.playbook);
}

inline void from_json(const json& j, BackendSpec& s) {
  s.kind = backend_kind_from_string(j.at("kind").get<std::string>());
  s.model_name = j.value("model_name", "");
  s.max_concurrency = j.value("max_concurrency", 4);
  if (auto it = j.find("retry"); it != j.end()) {
    s.retry.max_attempts = it->value("max_attempts", 3);
    s.retry.base_backoff = std::chrono::milliseconds(it->value("base_backoff_ms", 250));
  }
  s.timeout = std::chrono::milliseconds(j.value("timeout_ms", 120000));
  detail::get_opt(j, "base_url", s.base_url);
  detail::get_opt(j, "api_key_env", s.api_key_env);
  detail::get_opt(j, "playbook", s.playbook);
}

// ============================================================================
// Backend interface
// ============================================================================

struct CompletionResult {
  std::string text;
  int attempts = 1;  // transport attempts spent on this call
};

class BackendError : public Error {
 public:
  BackendError(const std::string& backend_id, const std::string& digest,
               const std::string& what)
      : Error("backend '" + backend_id + "' [req " + digest + "]: " + what),
        backend_id_(backend_id),
        digest_(digest) {}

  const std::string& backend_id() const { return backend_id_; }
  const std::string& digest() const { return digest_; }

 private:
  std::string backend_id_;
  std::string digest_;
};

class Backend {
 public:
  explicit Backend(BackendSpec spec)
      : spec_(std::move(spec)),
        slots_(std::max(1, spec_.max_concurrency)) {}
  virtual ~Backend() = default;

  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;

  const BackendSpec& spec() const { return spec_; }

  /// One completion call. Never returns empty text; failures throw
  /// BackendError carrying the backend id and request digest. In-flight
  /// calls are capped at spec().max_concurrency.
  CompletionResult complete(const CompletionRequest& request) {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};
    total_calls_.fetch_add(1, std::memory_order_relaxed);
    CompletionResult result = do_complete(request);
    total_attempts_.fetch_add(result.attempts, std::memory_order_relaxed);
    if (result.text.empty())
      throw BackendError(spec_.id, request_digest(request), "empty completion");
    return result;
  }

  std::int64_t total_calls() const { return total_calls_.load(); }
  std::int64_t total_attempts() const { return total_attempts_.load(); }

 protected:
  virtual CompletionResult do_complete(const CompletionRequest& request) = 0;

  BackendSpec spec_;

 private:
  std::counting_semaphore<> slots_;
  std::atomic<std::int64_t> total_calls_{0};
  std::atomic<std::int64_t> total_attempts_{0};
};

// ============================================================================
// Mock backend
// ============================================================================

/// Playbook-driven test double. A playbook maps request digests to response
/// sequences; a scripted null response raises a backend error for that call.
/// Instrumented with per-digest call counts and a peak in-flight gauge.
class MockBackend : public Backend {
 public:
  using Fallback = std::function<std::string(const CompletionRequest&, const std::string& digest)>;

  explicit MockBackend(BackendSpec spec) : Backend(std::move(spec)) {
    if (spec_.playbook) load_playbook(*spec_.playbook);
  }

  /// Playbook JSONL: {"digest": "...", "responses": ["a", null, "b"]}.
  void load_playbook(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open playbook " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const std::exception& e) {
        throw IoError(path + ":" + std::to_string(line_no) + ": " + e.what());
      }
      std::vector<std::optional<std::string>> seq;
      for (const auto& r : j.at("responses")) {
        if (r.is_null()) {
          seq.push_back(std::nullopt);
        } else {
          seq.push_back(r.get<std::string>());
        }
      }
      script_digest(j.at("digest").get<std::string>(), std::move(seq));
    }
  }

  void script_digest(const std::string& digest,
                     std::vector<std::optional<std::string>> responses) {
    std::lock_guard lock(mu_);
    entries_[digest] = Entry{std::move(responses), 0};
  }

  void script(const CompletionRequest& req,
              std::vector<std::optional<std::string>> responses) {
    script_digest(request_digest(req), std::move(responses));
  }

  /// Generator used when no playbook entry matches; without one a miss is a
  /// hard error. Handy for property tests over randomized prompts.
  void set_fallback(Fallback fn) {
    std::lock_guard lock(mu_);
    fallback_ = std::move(fn);
  }

  /// Artificial per-call latency; lets tests observe call overlap.
  void set_latency(std::chrono::milliseconds d) { latency_ = d; }

  int peak_in_flight() const { return peak_in_flight_.load(); }

  std::int64_t calls_for_digest(const std::string& digest) const {
    std::lock_guard lock(mu_);
    auto it = call_counts_.find(digest);
    return it == call_counts_.end() ? 0 : it->second;
  }

 protected:
  CompletionResult do_complete(const CompletionRequest& request) override {
    const std::string digest = request_digest(request);

    int now = in_flight_.fetch_add(1, std::memory_order_acq_rel) + 1;
    int peak = peak_in_flight_.load(std::memory_order_relaxed);
    while (now > peak &&
           !peak_in_flight_.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
    }
    struct Depart {
      std::atomic<int>& c;
      ~Depart() { c.fetch_sub(1, std::memory_order_acq_rel); }
    } depart{in_flight_};

    if (latency_.count() > 0) std::this_thread::sleep_for(latency_);

    std::optional<std::string> scripted;
    bool found = false;
    {
      std::lock_guard lock(mu_);
      ++call_counts_[digest];
      auto it = entries_.find(digest);
      if (it != entries_.end() && !it->second.responses.empty()) {
        found = true;
        auto& entry = it->second;
        scripted = entry.responses[entry.cursor];
        if (entry.cursor + 1 < entry.responses.size()) ++entry.cursor;
      }
    }

    if (!found) {
      if (fallback_) return CompletionResult{fallback_(request, digest), 1};
      throw BackendError(spec_.id, digest, "mock miss: no playbook entry");
    }
    if (!scripted) throw BackendError(spec_.id, digest, "scripted failure");
    return CompletionResult{*scripted, 1};
  }

 private:
  struct Entry {
    std::vector<std::optional<std::string>> responses;
    std::size_t cursor = 0;
  };

  mutable std::mutex mu_;
  std::unordered_map<std::string, Entry> entries_;
  std::unordered_map<std::string, std::int64_t> call_counts_;
  Fallback fallback_;
  std::chrono::milliseconds latency_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_in_flight_{0};
};

// ============================================================================
// Backend registry and batching
// ============================================================================

class BackendSet {
 public:
  BackendSet() = default;

  void add(std::shared_ptr<Backend> backend) {
    backends_[backend->spec().id] = std::move(backend);
  }

  Backend& get(const std::string& id) const {
    auto it = backends_.find(id);
    if (it == backends_.end())
      throw ConfigError("unknown backend id: '" + id + "'");
    return *it->second;
  }

  bool has(const std::string& id) const { return backends_.count(id) > 0; }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : backends_) out.push_back(id);
    return out;
  }

  std::int64_t total_calls() const {
    std::int64_t n = 0;
    for (const auto& [_, b] : backends_) n += b->total_calls();
    return n;
  }

  struct Counters {
    std::int64_t calls = 0;
    std::int64_t attempts = 0;  // includes retries
  };

  std::map<std::string, Counters> counters() const {
    std::map<std::string, Counters> out;
    for (const auto& [id, b] : backends_)
      out[id] = {b->total_calls(), b->total_attempts()};
    return out;
  }

 private:
  std::map<std::string, std::shared_ptr<Backend>> backends_;
};

struct BatchItem {
  std::size_t index = 0;
  std::optional<CompletionResult> result;
  std::string error;  // non-empty iff the call failed

  bool ok() const { return result.has_value(); }
};

/// Runs every request, isolating failures to their index. Output order
/// matches input order; per-backend concurrency caps are enforced by the
/// backends themselves.
inline std::vector<BatchItem> complete_many(const BackendSet& backends,
                                            const std::vector<CompletionRequest>& requests,
                                            int workers = 0) {
  std::vector<BatchItem> out(requests.size());
  if (requests.empty()) return out;
  if (workers <= 0) workers = static_cast<int>(std::min<std::size_t>(requests.size(), 16));

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= requests.size()) return;
      out[i].index = i;
      try {
        out[i].result = backends.get(requests[i].backend_id).complete(requests[i]);
      } catch (const std::exception& e) {
        out[i].error = e.what();
      }
    }
  };

  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return out;
}

/// Same contract, all requests routed to one backend.
inline std::vector<BatchItem> complete_many(Backend& backend,
                                            const std::vector<CompletionRequest>& requests,
                                            int workers = 0) {
  std::vector<BatchItem> out(requests.size());
  if (requests.empty()) return out;
  if (workers <= 0)
    workers = static_cast<int>(std::min<std::size_t>(
        requests.size(), static_cast<std::size_t>(std::max(1, backend.spec().max_concurrency))));

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= requests.size()) return;
      out[i].index = i;
      try {
        out[i].result = backend.complete(requests[i]);
      } catch (const std::exception& e) {
        out[i].error = e.what();
      }
    }
  };

  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return out;
}

}  // namespace synthkit
