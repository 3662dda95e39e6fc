#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "semcache/embedding.hpp"
#include "semcache/error.hpp"
#include "semcache/http_util.hpp"

namespace semcache {

struct ChatMessage {
  std::string role;
  std::string content;
};

enum class ServedFrom { Cache, Upstream };

struct UpstreamResponse {
  std::string text;
  double latency_ms = 0.0;
  ServedFrom served_from = ServedFrom::Upstream;
};

/// The LLM web service behind the cache. "mock" answers locally with a
/// deterministic function of the messages; anything else is an
/// OpenAI-compatible base URL (e.g. http://host:port/v1).
class UpstreamClient {
 public:
  explicit UpstreamClient(std::string base_url = "mock", std::chrono::milliseconds mock_latency = {},
                          std::chrono::milliseconds timeout = std::chrono::seconds(60))
      : base_url_(std::move(base_url)), mock_latency_(mock_latency), timeout_(timeout) {
    if (!is_mock()) target_ = split_url(base_url_);
  }

  bool is_mock() const noexcept { return base_url_ == "mock"; }
  const std::string& base_url() const noexcept { return base_url_; }
  std::uint64_t call_count() const noexcept { return calls_.load(); }

  /// Forwards `original_body` unchanged in URL mode; mock mode only looks at
  /// `messages`.
  UpstreamResponse query(const std::vector<ChatMessage>& messages, const std::string& original_body = {}) const {
    calls_.fetch_add(1);
    const auto t0 = std::chrono::steady_clock::now();
    UpstreamResponse r;
    r.text = is_mock() ? mock_answer_with_latency(messages) : forward(messages, original_body);
    r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    r.served_from = ServedFrom::Upstream;
    return r;
  }

  static std::string mock_answer(const std::vector<ChatMessage>& messages) {
    std::string joined;
    std::string last_user;
    for (const auto& m : messages) {
      joined += m.role;
      joined.push_back('\x1f');
      joined += m.content;
      joined.push_back('\x1e');
      if (m.role == "user") last_user = m.content;
    }
    char tag[17];
    std::snprintf(tag, sizeof tag, "%016llx", static_cast<unsigned long long>(fnv1a64(joined)));
    return std::string("[mock ") + tag + "] " + last_user;
  }

 private:
  std::string mock_answer_with_latency(const std::vector<ChatMessage>& messages) const {
    if (mock_latency_.count() > 0) std::this_thread::sleep_for(mock_latency_);
    return mock_answer(messages);
  }

  std::string forward(const std::vector<ChatMessage>& messages, const std::string& original_body) const {
    std::string body = original_body;
    if (body.empty()) {
      nlohmann::json j;
      j["model"] = "default";
      j["messages"] = nlohmann::json::array();
      for (const auto& m : messages) j["messages"].push_back({{"role", m.role}, {"content", m.content}});
      body = j.dump();
    }
    httplib::Client client(target_.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    client.set_connection_timeout(secs.count(), 0);
    client.set_read_timeout(secs.count(), 0);
    httplib::Headers headers;
    if (const char* key = std::getenv("SEMCACHE_UPSTREAM_API_KEY")) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    auto res = client.Post(join_path(target_.path, "chat/completions"), headers, body, "application/json");
    if (!res) {
      throw Error(ErrorCode::UpstreamUnreachable, target_.origin + ": " + httplib::to_string(res.error()));
    }
    if (res->status < 200 || res->status >= 300) throw UpstreamStatusError(res->status, res->body.substr(0, 200));
    try {
      const auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw UpstreamStatusError(res->status, std::string("unparseable completion: ") + e.what());
    }
  }

  std::string base_url_;
  std::chrono::milliseconds mock_latency_;
  std::chrono::milliseconds timeout_;
  HttpTarget target_;
  mutable std::atomic<std::uint64_t> calls_{0};
};

}  // namespace semcache
