#pragma once

/**
 * OpenAI-compatible HTTP backend.
 *
 * Wire format: POST {base_url}/v1/chat/completions with fields
 *   model, messages[{role,content}], temperature, top_p, max_tokens,
 *   frequency_penalty, presence_penalty (+ seed when set).
 * The API key is read from the environment variable named in the spec and
 * sent as a Bearer token. Retries cover transport failures, 429 and 5xx;
 * other statuses fail immediately with the body captured.
 */

#include "synthkit/backend.hpp"

#include <httplib.h>

#include <cstdlib>
#include <memory>
#include <string>
#include <thread>

namespace synthkit {

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(BackendSpec spec) : Backend(std::move(spec)) {
    spec_.validate();
    split_base_url(*spec_.base_url, origin_, path_prefix_);
  }

 protected:
  CompletionResult do_complete(const CompletionRequest& request) override {
    const std::string digest = request_digest(request);
    const std::string body = wire_body(request).dump();
    const std::string path = path_prefix_ + "/v1/chat/completions";

    httplib::Headers headers = {{"Authorization", "Bearer " + api_key()}};

    std::string last_error;
    const int max_attempts = spec_.retry.max_attempts;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
      if (attempt > 1)
        std::this_thread::sleep_for(backoff_for_attempt(spec_.retry, attempt));

      // httplib clients are not safe for concurrent requests; one per call.
      httplib::Client client(origin_);
      client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(spec_.timeout));
      client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(spec_.timeout));
      client.set_write_timeout(std::chrono::duration_cast<std::chrono::seconds>(spec_.timeout));

      auto res = client.Post(path, headers, body, "application/json");
      if (!res) {
        last_error = "transport: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "http " + std::to_string(res->status) + ": " + res->body;
        continue;
      }
      if (res->status >= 400) {
        throw BackendError(spec_.id, digest,
                           "http " + std::to_string(res->status) + ": " + res->body);
      }
      return CompletionResult{parse_content(res->body, digest), attempt};
    }
    throw BackendError(spec_.id, digest,
                       "retries exhausted after " + std::to_string(max_attempts) +
                           " attempts; last: " + last_error);
  }

 private:
  json wire_body(const CompletionRequest& request) const {
    json messages = json::array();
    for (const auto& m : request.messages)
      messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    json body = {{"model", spec_.model_name},
                 {"messages", messages},
                 {"temperature", request.decoding.temperature},
                 {"top_p", request.decoding.top_p},
                 {"max_tokens", request.decoding.max_tokens},
                 {"frequency_penalty", request.decoding.frequency_penalty},
                 {"presence_penalty", request.decoding.presence_penalty}};
    if (request.decoding.seed) body["seed"] = *request.decoding.seed;
    return body;
  }

  std::string parse_content(const std::string& body, const std::string& digest) const {
    json j;
    try {
      j = json::parse(body);
    } catch (const std::exception& e) {
      throw BackendError(spec_.id, digest, std::string("bad response json: ") + e.what());
    }
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
      throw BackendError(spec_.id, digest, "response has no choices");
    const auto& choice = j["choices"][0];
    if (!choice.contains("message") || !choice["message"].contains("content"))
      throw BackendError(spec_.id, digest, "response choice has no message content");
    std::string content = choice["message"]["content"].get<std::string>();
    if (content.empty())
      throw BackendError(spec_.id, digest, "empty completion content");
    return content;
  }

  std::string api_key() const {
    if (!spec_.api_key_env) return "";
    const char* v = std::getenv(spec_.api_key_env->c_str());
    if (!v)
      throw ConfigError("backend '" + spec_.id + "': environment variable " +
                        *spec_.api_key_env + " is not set");
    return v;
  }

  // "http://host:8080/extra" -> origin "http://host:8080", prefix "/extra".
  static void split_base_url(const std::string& url, std::string& origin,
                             std::string& prefix) {
    auto scheme_end = url.find("://");
    std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    auto slash = url.find('/', host_start);
    if (slash == std::string::npos) {
      origin = url;
      prefix = "";
    } else {
      origin = url.substr(0, slash);
      prefix = url.substr(slash);
      while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    }
  }

  std::string origin_;
  std::string path_prefix_;
};

/// Builds the backend named by the spec. Http requires base_url; Mock loads
/// its playbook when one is configured.
inline std::shared_ptr<Backend> make_backend(const BackendSpec& spec) {
  spec.validate();
  if (spec.kind == BackendKind::Http) return std::make_shared<HttpBackend>(spec);
  return std::make_shared<MockBackend>(spec);
}

inline BackendSet make_backend_set(const std::map<std::string, BackendSpec>& specs) {
  BackendSet set;
  for (const auto& [id, spec] : specs) {
    BackendSpec s = spec;
    s.id = id;
    set.add(make_backend(s));
  }
  return set;
}

}  // namespace synthkit
