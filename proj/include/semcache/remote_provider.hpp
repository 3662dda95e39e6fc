#pragma once

#include <chrono>
#include <string>
#include <string_view>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "semcache/embedding.hpp"
#include "semcache/http_util.hpp"

namespace semcache {

/// Embedding service reached over HTTP. Posts {"input": text} to the
/// configured URL and expects {"embedding": [...]} back.
class RemoteProvider final : public EmbeddingProvider {
 public:
  RemoteProvider(std::string url, std::size_t output_dim,
                 std::chrono::milliseconds timeout = std::chrono::seconds(10))
      : target_(split_url(url)), timeout_(timeout), desc_{"remote", output_dim, false} {}

  const EmbeddingProviderDescriptor& descriptor() const noexcept override { return desc_; }

  EmbeddingVector embed_raw(std::string_view text) const override {
    httplib::Client client(target_.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());

    const nlohmann::json body = {{"input", std::string(text)}};
    auto res = client.Post(target_.path, body.dump(), "application/json");
    if (!res) {
      throw Error(ErrorCode::ProviderFailure,
                  "cannot reach " + target_.origin + ": " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw Error(ErrorCode::ProviderFailure, "embedding service returned " + std::to_string(res->status));
    }
    try {
      auto parsed = nlohmann::json::parse(res->body);
      auto values = parsed.at("embedding").get<std::vector<float>>();
      return EmbeddingVector(std::move(values));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ProviderFailure, std::string("malformed embedding response: ") + e.what());
    }
  }

 private:
  HttpTarget target_;
  std::chrono::milliseconds timeout_;
  EmbeddingProviderDescriptor desc_;
};

}  // namespace semcache
