#pragma once

#include <memory>
#include <optional>
#include <string_view>
#include <utility>

#include "semcache/adapter.hpp"
#include "semcache/compression.hpp"
#include "semcache/embedding.hpp"

namespace semcache {

/// provider -> optional adapter -> optional PCA. Immutable once built.
class EmbeddingPipeline {
 public:
  explicit EmbeddingPipeline(std::shared_ptr<const EmbeddingProvider> provider,
                             std::optional<AdapterModel> adapter = std::nullopt,
                             std::optional<PcaModel> pca = std::nullopt)
      : provider_(std::move(provider)), adapter_(std::move(adapter)), pca_(std::move(pca)) {
    if (!provider_) throw Error(ErrorCode::InvalidArgument, "pipeline needs a provider");
    std::size_t dim = provider_->descriptor().output_dim;
    if (adapter_) {
      if (adapter_->in_dim() != dim) throw Error(ErrorCode::DimensionMismatch, "adapter in_dim != provider dim");
      dim = adapter_->out_dim();
    }
    if (pca_) {
      if (pca_->in_dim != dim) throw Error(ErrorCode::DimensionMismatch, "PCA in_dim != upstream dim");
      dim = pca_->k;
    }
    output_dim_ = dim;
  }

  /// Embedding before PCA, i.e. what a PCA model would be fit on.
  EmbeddingVector encode_uncompressed(std::string_view text) const {
    auto e = embed(*provider_, text);
    if (adapter_) e = apply_adapter(*adapter_, e);
    return e;
  }

  EmbeddingVector encode(std::string_view text) const {
    auto e = encode_uncompressed(text);
    if (pca_) e = project(*pca_, e);
    return e;
  }

  std::size_t output_dim() const noexcept { return output_dim_; }
  const EmbeddingProvider& provider() const noexcept { return *provider_; }
  std::shared_ptr<const EmbeddingProvider> provider_ptr() const noexcept { return provider_; }
  const std::optional<AdapterModel>& adapter() const noexcept { return adapter_; }
  const std::optional<PcaModel>& pca() const noexcept { return pca_; }

 private:
  std::shared_ptr<const EmbeddingProvider> provider_;
  std::optional<AdapterModel> adapter_;
  std::optional<PcaModel> pca_;
  std::size_t output_dim_ = 0;
};

}  // namespace semcache
