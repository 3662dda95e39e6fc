#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <httplib.h>

#include <json.hpp>
#include <thread>

#include "semcache/proxy.hpp"
#include "test_util.hpp"

using namespace semcache;
using testutil::code_of;
using nlohmann::json;

namespace {

std::string chat(std::initializer_list<std::pair<std::string, std::string>> msgs) {
  json j{{"model", "gpt-test"}, {"messages", json::array()}};
  for (const auto& [role, content] : msgs) j["messages"].push_back({{"role", role}, {"content", content}});
  return j.dump();
}

std::string content_of(const std::string& body) {
  return json::parse(body).at("choices").at(0).at("message").at("content").get<std::string>();
}

// A port that was free a moment ago and has nothing listening on it.
int dead_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

struct Fixture {
  explicit Fixture(ProxyConfig cfg = {}, std::string upstream = "mock", std::chrono::milliseconds latency = {})
      : cache(EmbeddingPipeline(std::make_shared<StubProvider>())),
        client(std::move(upstream), latency, std::chrono::seconds(2)),
        service(cache, client, cfg) {}
  SemanticCache cache;
  UpstreamClient client;
  ProxyService service;
};

}  // namespace

TEST(ProxyConfig, ListenAddr) {
  ProxyConfig c;
  EXPECT_EQ(c.parse_listen_addr(), (std::pair<std::string, int>{"127.0.0.1", 8080}));
  c.listen_addr = "0.0.0.0:0";
  EXPECT_EQ(c.parse_listen_addr().second, 0);
  for (const char* bad : {"nohost", ":80", "host:abc", "host:70000"}) {
    c.listen_addr = bad;
    EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::InvalidArgument) << bad;
  }
}

TEST(MockUpstream, DeterministicAndCounted) {
  UpstreamClient u;
  const std::vector<ChatMessage> m{{"user", "hello there"}};
  const auto a = u.query(m), b = u.query(m);
  EXPECT_EQ(a.text, b.text);
  EXPECT_EQ(a.text, UpstreamClient::mock_answer(m));
  EXPECT_NE(a.text, UpstreamClient::mock_answer({{"user", "hello here"}}));
  EXPECT_EQ(u.call_count(), 2u);
  EXPECT_EQ(a.served_from, ServedFrom::Upstream);
}

TEST(MockUpstream, Latency) {
  UpstreamClient u("mock", std::chrono::milliseconds(50));
  const auto r = u.query({{"user", "slow"}});
  EXPECT_GE(r.latency_ms, 50.0);
}

TEST(UrlUpstream, DeadPortIsUnreachable) {
  UpstreamClient u("http://127.0.0.1:" + std::to_string(dead_port()) + "/v1", {}, std::chrono::seconds(2));
  EXPECT_EQ(code_of([&] { u.query({{"user", "hi"}}); }), ErrorCode::UpstreamUnreachable);
}

TEST(Proxy, MissThenHitWithOneUpstreamCall) {
  Fixture f;
  const auto body = chat({{"user", "Draw a line in Python?"}});
  const auto first = f.service.handle_chat_completion(body);
  ASSERT_EQ(first.status, 200);
  EXPECT_EQ(first.headers.at("X-Cache"), "MISS");
  const auto second = f.service.handle_chat_completion(body);
  ASSERT_EQ(second.status, 200);
  EXPECT_EQ(second.headers.at("X-Cache"), "HIT");
  EXPECT_EQ(content_of(first.body), content_of(second.body));
  EXPECT_EQ(f.client.call_count(), 1u);

  const auto j = json::parse(second.body);
  EXPECT_EQ(j["object"], "chat.completion");
  EXPECT_EQ(j["model"], "gpt-test");
  EXPECT_EQ(j["usage"]["total_tokens"], 0);
  EXPECT_EQ(second.headers.at("X-Cache-Entry"), first.headers.at("X-Cache-Entry"));
  EXPECT_EQ(second.headers.at("X-Cache-Similarity"), "1.000000");
}

TEST(Proxy, ContextFromMessagesArray) {
  Fixture f;
  const auto conv1 = chat({{"user", "Draw a line in Python?"},
                           {"assistant", "..."},
                           {"user", "Change the color to red"}});
  const auto conv2 = chat({{"user", "Draw a circle?"}, {"assistant", "..."}, {"user", "Change the color to red"}});
  EXPECT_EQ(f.service.handle_chat_completion(conv1).headers.at("X-Cache"), "MISS");
  EXPECT_EQ(f.service.handle_chat_completion(conv2).headers.at("X-Cache"), "MISS");
  EXPECT_EQ(f.service.handle_chat_completion(conv1).headers.at("X-Cache"), "HIT");
  EXPECT_EQ(f.client.call_count(), 2u);
  // follow-up without any history does not match a contextual entry
  EXPECT_EQ(f.service.handle_chat_completion(chat({{"user", "Change the color to red"}})).headers.at("X-Cache"),
            "MISS");
}

TEST(Proxy, SessionHeaderSuppliesHistory) {
  Fixture f;
  f.service.handle_chat_completion(chat({{"user", "Draw a line in Python?"}}), "s1");
  const auto follow = f.service.handle_chat_completion(chat({{"user", "Change the color to red"}}), "s1");
  EXPECT_EQ(follow.headers.at("X-Cache"), "MISS");
  const auto id = std::stoull(follow.headers.at("X-Cache-Entry"));
  EXPECT_EQ(f.cache.ancestor_queries(id), std::vector<std::string>{"Draw a line in Python?"});
  // the same follow-up in the same kind of conversation, sent as a full array
  const auto full = f.service.handle_chat_completion(
      chat({{"user", "Draw a line in Python?"}, {"assistant", "x"}, {"user", "Change the color to red"}}));
  EXPECT_EQ(full.headers.at("X-Cache"), "HIT");
}

TEST(Proxy, BadRequests) {
  Fixture f;
  for (const std::string body : {std::string("not json"), std::string("{}"), std::string(R"({"messages": []})"),
                                 std::string(R"({"messages": [{"role": "system", "content": "x"}]})"),
                                 std::string(R"({"messages": [{"role": "user"}]})"),
                                 std::string(R"({"messages": [{"role": "user", "content": "  "}]})")}) {
    const auto r = f.service.handle_chat_completion(body);
    EXPECT_EQ(r.status, 400) << body;
    EXPECT_TRUE(json::parse(r.body).contains("error"));
  }
  EXPECT_EQ(f.client.call_count(), 0u);
}

TEST(Proxy, UpstreamFailureIs502AndNotCached) {
  Fixture f({}, "http://127.0.0.1:" + std::to_string(dead_port()) + "/v1");
  const auto r = f.service.handle_chat_completion(chat({{"user", "anything"}}));
  EXPECT_EQ(r.status, 502);
  EXPECT_EQ(f.cache.size(), 0u);
  EXPECT_EQ(f.service.metrics_json()["upstream_errors"], 1);
}

TEST(Proxy, MetricsInvariants) {
  Fixture f;
  std::uint64_t prev_lookups = 0, prev_hits = 0;
  for (int i = 0; i < 20; ++i) {
    f.service.handle_chat_completion(chat({{"user", "question number " + std::to_string(i % 7)}}));
    const auto m = f.service.metrics_json();
    EXPECT_EQ(m["hits"].get<std::uint64_t>() + m["misses"].get<std::uint64_t>(), m["lookups"].get<std::uint64_t>());
    EXPECT_GE(m["lookups"].get<std::uint64_t>(), prev_lookups);
    EXPECT_GE(m["hits"].get<std::uint64_t>(), prev_hits);
    prev_lookups = m["lookups"];
    prev_hits = m["hits"];
  }
  const auto m = f.service.metrics_json();
  EXPECT_EQ(m["lookups"], 20);
  EXPECT_EQ(m["misses"], 7);
  EXPECT_EQ(m["inserts"], 7);
  EXPECT_EQ(f.client.call_count(), 7u);
}

TEST(Proxy, FeedbackRetunes) {
  Fixture f;
  f.service.handle_chat_completion(chat({{"user", "draw a red line in python"}}));
  const auto near = f.service.handle_chat_completion(chat({{"user", "draw a red line in python please"}}));
  ASSERT_EQ(near.headers.at("X-Cache"), "HIT");
  const auto id = near.headers.at("X-Cache-Entry");

  auto r = f.service.handle_feedback(R"({"entry_id": )" + id + R"(, "judgment": "rejected"})");
  ASSERT_EQ(r.status, 200) << r.body;
  EXPECT_FALSE(json::parse(r.body)["recorded"]["duplicate"].get<bool>());
  EXPECT_DOUBLE_EQ(f.service.current_tau(), 0.83);  // one label kind only: no retune yet

  f.service.handle_chat_completion(chat({{"user", "draw a red line in python"}}));
  r = f.service.handle_feedback(R"({"entry_id": )" + id + R"(, "judgment": "accepted"})");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(r.body)["tau"].get<double>(), f.service.current_tau());

  EXPECT_EQ(f.service.handle_feedback(R"({"entry_id": 999, "judgment": "rejected"})").status, 404);
  EXPECT_EQ(f.service.handle_feedback(R"({"entry_id": 1, "judgment": "meh"})").status, 400);
  EXPECT_EQ(f.service.handle_feedback("nope").status, 400);
}

TEST(Proxy, AutosaveAndSave) {
  testutil::TempDir dir;
  ProxyConfig cfg;
  cfg.cache_path = dir / "proxy.mcch";
  cfg.autosave_every = 2;
  Fixture f(cfg);
  f.service.handle_chat_completion(chat({{"user", "first question"}}));
  EXPECT_FALSE(std::filesystem::exists(cfg.cache_path));
  f.service.handle_chat_completion(chat({{"user", "second question"}}));
  ASSERT_TRUE(std::filesystem::exists(cfg.cache_path));
  const auto loaded = SemanticCache::load(cfg.cache_path, std::make_shared<StubProvider>());
  EXPECT_EQ(loaded->size(), 2u);
}

TEST(ProxyServer, HttpRoundTrip) {
  Fixture f;
  ProxyServer server(f.service);
  const int port = server.bind("127.0.0.1", 0);
  server.start_background();
  httplib::Client c("127.0.0.1", port);

  auto health = c.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body)["status"], "ok");

  const auto body = chat({{"user", "How do I reverse a list in Python?"}});
  auto a = c.Post("/v1/chat/completions", body, "application/json");
  auto b = c.Post("/v1/chat/completions", body, "application/json");
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->get_header_value("X-Cache"), "MISS");
  EXPECT_EQ(b->get_header_value("X-Cache"), "HIT");
  EXPECT_EQ(content_of(a->body), content_of(b->body));
  EXPECT_EQ(f.client.call_count(), 1u);

  auto bad = c.Post("/v1/chat/completions", "{", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);

  auto m = c.Get("/metrics");
  ASSERT_TRUE(m);
  const auto mj = json::parse(m->body);
  EXPECT_EQ(mj["lookups"], 2);
  EXPECT_EQ(mj["hits"], 1);
  EXPECT_EQ(mj["misses"], 1);

  auto fb = c.Post("/feedback", R"({"entry_id": 42, "judgment": "rejected"})", "application/json");
  ASSERT_TRUE(fb);
  EXPECT_EQ(fb->status, 404);
  server.stop();
}

TEST(ProxyServer, SessionHeaderOverHttp) {
  Fixture f;
  ProxyServer server(f.service);
  const int port = server.bind("127.0.0.1", 0);
  server.start_background();
  httplib::Client c("127.0.0.1", port);
  httplib::Headers h{{"X-Session-Id", "abc"}};
  c.Post("/v1/chat/completions", h, chat({{"user", "Draw a circle?"}}), "application/json");
  auto r = c.Post("/v1/chat/completions", h, chat({{"user", "Change the color to red"}}), "application/json");
  ASSERT_TRUE(r);
  const auto id = std::stoull(r->get_header_value("X-Cache-Entry"));
  EXPECT_EQ(f.cache.ancestor_queries(id), std::vector<std::string>{"Draw a circle?"});
}

TEST(ProxyServer, ForwardsToUrlUpstreamUnchanged) {
  httplib::Server fake;
  std::string seen_body;
  std::atomic<int> calls{0};
  fake.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    seen_body = req.body;
    if (req.body.find("explode") != std::string::npos) {
      res.status = 503;
      res.set_content("down", "text/plain");
      return;
    }
    json j{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", "real answer"}}}}})}};
    res.set_content(j.dump(), "application/json");
  });
  const int up_port = fake.bind_to_any_port("127.0.0.1");
  std::thread t([&] { fake.listen_after_bind(); });
  fake.wait_until_ready();

  Fixture f({}, "http://127.0.0.1:" + std::to_string(up_port) + "/v1");
  const auto body = chat({{"user", "what is a monad"}});
  const auto r = f.service.handle_chat_completion(body);
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(content_of(r.body), "real answer");
  EXPECT_EQ(seen_body, body);
  EXPECT_EQ(f.service.handle_chat_completion(body).headers.at("X-Cache"), "HIT");
  EXPECT_EQ(calls.load(), 1);

  const auto err = f.service.handle_chat_completion(chat({{"user", "explode please"}}));
  EXPECT_EQ(err.status, 502);
  UpstreamClient direct("http://127.0.0.1:" + std::to_string(up_port) + "/v1");
  EXPECT_EQ(code_of([&] { direct.query({{"user", "explode"}}); }), ErrorCode::UpstreamBadStatus);

  fake.stop();
  t.join();
}
