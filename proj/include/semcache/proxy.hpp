#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "semcache/semantic_cache.hpp"
#include "semcache/upstream.hpp"

namespace semcache {

struct ProxyConfig {
  std::string listen_addr = "127.0.0.1:8080";
  std::string upstream_base_url = "mock";
  std::filesystem::path cache_path;  // empty = in-memory only
  LookupConfig lookup;
  std::uint32_t session_ttl_s = 3600;
  std::uint32_t mock_latency_ms = 0;
  std::uint32_t autosave_every = 50;  // inserts between saves; 0 = only on shutdown

  void validate() const {
    parse_listen_addr();
    if (session_ttl_s == 0) throw Error(ErrorCode::InvalidArgument, "session_ttl_s must be positive");
    lookup.validate();
  }

  std::pair<std::string, int> parse_listen_addr() const {
    const auto colon = listen_addr.rfind(':');
    if (colon == std::string::npos || colon == 0) {
      throw Error(ErrorCode::InvalidArgument, "listen_addr must be host:port, got '" + listen_addr + "'");
    }
    int port = -1;
    try {
      port = std::stoi(listen_addr.substr(colon + 1));
    } catch (const std::exception&) {
    }
    if (port < 0 || port > 65535) throw Error(ErrorCode::InvalidArgument, "bad port in '" + listen_addr + "'");
    return {listen_addr.substr(0, colon), port};
  }
};

struct ProxyCounters {
  std::atomic<std::uint64_t> lookups{0};
  std::atomic<std::uint64_t> hits{0};
  std::atomic<std::uint64_t> misses{0};
  std::atomic<std::uint64_t> inserts{0};
  std::atomic<std::uint64_t> upstream_errors{0};
};

struct HttpReply {
  int status = 200;
  std::string body;
  std::map<std::string, std::string> headers;
};

/// Request handling for the caching proxy, independent of the HTTP server so
/// it can be driven directly.
class ProxyService {
 public:
  ProxyService(SemanticCache& cache, const UpstreamClient& upstream, ProxyConfig cfg)
      : cache_(cache), upstream_(upstream), cfg_(std::move(cfg)) {
    cfg_.validate();
  }

  const ProxyConfig& config() const noexcept { return cfg_; }
  double current_tau() const {
    std::lock_guard lock(cfg_mu_);
    return cfg_.lookup.tau;
  }

  /// POST /v1/chat/completions. The last user message is the query; earlier
  /// user messages are its conversation history. A request carrying a single
  /// user message plus X-Session-Id takes its history from that session.
  HttpReply handle_chat_completion(const std::string& body, const std::optional<std::string>& session_id = {}) {
    nlohmann::json req;
    std::vector<ChatMessage> messages;
    try {
      req = nlohmann::json::parse(body);
      const auto& arr = req.at("messages");
      if (!arr.is_array() || arr.empty()) return error_reply(400, "messages must be a non-empty array");
      for (const auto& m : arr) messages.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      return error_reply(400, std::string("malformed request: ") + e.what());
    }
    std::vector<std::string> user_turns;
    for (const auto& m : messages) {
      if (m.role == "user") user_turns.push_back(m.content);
    }
    if (user_turns.empty() || trim(user_turns.back()).empty()) return error_reply(400, "no user message to answer");
    const std::string query = user_turns.back();
    user_turns.pop_back();
    std::vector<std::string> history = std::move(user_turns);
    if (history.empty() && session_id) history = session_history(*session_id);

    LookupConfig lookup_cfg;
    {
      std::lock_guard lock(cfg_mu_);
      lookup_cfg = cfg_.lookup;
    }
    const std::string model = req.value("model", std::string("semcache"));

    std::optional<EmbeddingVector> query_emb;
    counters_.lookups.fetch_add(1);
    try {
      query_emb = cache_.encode(query);
      auto outcome = cache_.lookup_embedded(query, *query_emb, history, lookup_cfg);
      if (outcome.hit()) {
        counters_.hits.fetch_add(1);
        if (session_id) remember_turn(*session_id, history, query);
        HttpReply r = completion_reply(model, outcome.entry->response_text, true);
        r.headers["X-Cache"] = "HIT";
        r.headers["X-Cache-Entry"] = std::to_string(outcome.entry->id);
        char sim[32];
        std::snprintf(sim, sizeof sim, "%.6f", *outcome.similarity);
        r.headers["X-Cache-Similarity"] = sim;
        return r;
      }
    } catch (const Error&) {
      // A broken cache must not take the service down; answer from upstream.
    }
    counters_.misses.fetch_add(1);

    UpstreamResponse upstream;
    try {
      upstream = upstream_.query(messages, body);
    } catch (const Error& e) {
      counters_.upstream_errors.fetch_add(1);
      return error_reply(502, e.what());
    }

    HttpReply r = completion_reply(model, upstream.text, false);
    r.headers["X-Cache"] = "MISS";
    if (!upstream.text.empty()) {
      try {
        const auto id = cache_.insert(query, upstream.text, history, query_emb);
        counters_.inserts.fetch_add(1);
        r.headers["X-Cache-Entry"] = std::to_string(id);
        maybe_autosave();
      } catch (const Error&) {
        // Caching is best effort on the miss path.
      }
    }
    if (session_id) remember_turn(*session_id, history, query);
    return r;
  }

  /// POST /feedback {"entry_id": n, "judgment": "accepted"|"rejected"}.
  /// Once the log holds both kinds of judgment the threshold is retuned.
  HttpReply handle_feedback(const std::string& body) {
    std::uint64_t id = 0;
    Judgment judgment;
    try {
      const auto j = nlohmann::json::parse(body);
      id = j.at("entry_id").get<std::uint64_t>();
      const auto s = j.at("judgment").get<std::string>();
      if (s == "accepted") {
        judgment = Judgment::Accepted;
      } else if (s == "rejected") {
        judgment = Judgment::Rejected;
      } else {
        return error_reply(400, "judgment must be 'accepted' or 'rejected'");
      }
    } catch (const nlohmann::json::exception& e) {
      return error_reply(400, std::string("malformed feedback: ") + e.what());
    }
    try {
      const auto pair = cache_.record_feedback(id, judgment);
      const auto log = cache_.feedback_log();
      const bool both = std::any_of(log.begin(), log.end(), [](const LabeledPair& p) { return p.duplicate; }) &&
                        std::any_of(log.begin(), log.end(), [](const LabeledPair& p) { return !p.duplicate; });
      if (both) {
        const auto profile = cache_.retune();
        std::lock_guard lock(cfg_mu_);
        cfg_.lookup.tau = profile.tau;
      }
      nlohmann::json out{{"recorded", {{"q1", pair.q1}, {"q2", pair.q2}, {"duplicate", pair.duplicate}}},
                         {"tau", current_tau()}};
      return {200, out.dump(), {{"Content-Type", "application/json"}}};
    } catch (const Error& e) {
      return error_reply(e.code() == ErrorCode::UnknownEntry ? 404 : 400, e.what());
    }
  }

  nlohmann::json metrics_json() const {
    return {{"lookups", counters_.lookups.load()},   {"hits", counters_.hits.load()},
            {"misses", counters_.misses.load()},     {"inserts", counters_.inserts.load()},
            {"upstream_errors", counters_.upstream_errors.load()}};
  }

  const ProxyCounters& counters() const noexcept { return counters_; }

  void save() {
    if (!cfg_.cache_path.empty()) cache_.save(cfg_.cache_path);
  }

 private:
  struct Session {
    std::vector<std::string> turns;
    std::chrono::steady_clock::time_point last_seen;
  };

  static HttpReply error_reply(int status, const std::string& message) {
    nlohmann::json j{{"error", {{"message", message}, {"type", status >= 500 ? "upstream_error" : "invalid_request_error"}}}};
    return {status, j.dump(), {{"Content-Type", "application/json"}}};
  }

  static std::uint64_t word_count(const std::string& s) { return tokenize(s).size(); }

  static HttpReply completion_reply(const std::string& model, const std::string& text, bool from_cache) {
    const auto now = std::chrono::duration_cast<std::chrono::seconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    const std::uint64_t completion_tokens = from_cache ? 0 : word_count(text);
    nlohmann::json j{
        {"id", std::string(from_cache ? "chatcmpl-cache-" : "chatcmpl-") + std::to_string(now)},
        {"object", "chat.completion"},
        {"created", now},
        {"model", model},
        {"choices",
         nlohmann::json::array({{{"index", 0},
                                 {"message", {{"role", "assistant"}, {"content", text}}},
                                 {"finish_reason", "stop"}}})},
        {"usage", {{"prompt_tokens", 0}, {"completion_tokens", completion_tokens}, {"total_tokens", completion_tokens}}}};
    return {200, j.dump(), {{"Content-Type", "application/json"}}};
  }

  std::vector<std::string> session_history(const std::string& id) {
    std::lock_guard lock(session_mu_);
    expire_sessions_locked();
    auto it = sessions_.find(id);
    return it == sessions_.end() ? std::vector<std::string>{} : it->second.turns;
  }

  void remember_turn(const std::string& id, const std::vector<std::string>& history, const std::string& query) {
    std::lock_guard lock(session_mu_);
    auto& s = sessions_[id];
    s.turns = history;
    s.turns.push_back(query);
    s.last_seen = std::chrono::steady_clock::now();
  }

  void expire_sessions_locked() {
    const auto cutoff = std::chrono::steady_clock::now() - std::chrono::seconds(cfg_.session_ttl_s);
    std::erase_if(sessions_, [&](const auto& kv) { return kv.second.last_seen < cutoff; });
  }

  void maybe_autosave() {
    if (cfg_.cache_path.empty() || cfg_.autosave_every == 0) return;
    if (++inserts_since_save_ % cfg_.autosave_every == 0) {
      try {
        save();
      } catch (const Error&) {
      }
    }
  }

  SemanticCache& cache_;
  const UpstreamClient& upstream_;
  ProxyConfig cfg_;
  mutable std::mutex cfg_mu_;
  ProxyCounters counters_;
  std::mutex session_mu_;
  std::unordered_map<std::string, Session> sessions_;
  std::atomic<std::uint64_t> inserts_since_save_{0};
};

/// httplib front end for ProxyService.
class ProxyServer {
 public:
  explicit ProxyServer(ProxyService& service) : service_(service) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      std::optional<std::string> session;
      if (req.has_header("X-Session-Id")) session = req.get_header_value("X-Session-Id");
      apply(service_.handle_chat_completion(req.body, session), res);
    });
    server_.Post("/feedback", [this](const httplib::Request& req, httplib::Response& res) {
      apply(service_.handle_feedback(req.body), res);
    });
    server_.Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(service_.metrics_json().dump(), "application/json");
    });
    server_.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
  }

  ~ProxyServer() { stop(); }

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(ErrorCode::IoFailure, "cannot bind " + host + ":" + std::to_string(port));
    return bound;
  }

  /// Blocks until stop().
  void serve() { server_.listen_after_bind(); }

  void start_background() {
    thread_ = std::thread([this] { serve(); });
    server_.wait_until_ready();
  }

  void stop() {
    if (server_.is_running()) server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  static void apply(const HttpReply& reply, httplib::Response& res) {
    res.status = reply.status;
    for (const auto& [k, v] : reply.headers) {
      if (k != "Content-Type") res.set_header(k, v);
    }
    auto ct = reply.headers.find("Content-Type");
    res.set_content(reply.body, ct == reply.headers.end() ? "application/json" : ct->second);
  }

  ProxyService& service_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace semcache
