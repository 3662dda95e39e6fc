#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "semcache/error.hpp"

namespace semcache {

/// Fixed-dimension float vector. Stored in 32-bit, compared in 64-bit.
///
/// A vector may carry the "compressed zero" flag: PCA projection of a point
/// sitting exactly on the mean has no direction, and its similarity to
/// anything is defined as 0 instead of being an error.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  explicit EmbeddingVector(std::vector<float> values, bool normalized = false)
      : values_(std::move(values)), normalized_(normalized) {
    for (float v : values_) {
      if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite embedding component");
    }
  }

  static EmbeddingVector compressed_zero(std::size_t dim) {
    EmbeddingVector v(std::vector<float>(dim, 0.0f));
    v.compressed_zero_ = true;
    return v;
  }

  std::size_t dim() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  bool normalized() const noexcept { return normalized_; }
  bool is_compressed_zero() const noexcept { return compressed_zero_; }

  std::span<const float> values() const noexcept { return values_; }
  const float* data() const noexcept { return values_.data(); }
  float operator[](std::size_t i) const { return values_[i]; }

  double norm() const noexcept {
    double acc = 0.0;
    for (float v : values_) acc += static_cast<double>(v) * v;
    return std::sqrt(acc);
  }

  friend bool operator==(const EmbeddingVector& a, const EmbeddingVector& b) {
    return a.values_ == b.values_ && a.compressed_zero_ == b.compressed_zero_;
  }

 private:
  std::vector<float> values_;
  bool normalized_ = false;
  bool compressed_zero_ = false;
};

inline double dot(std::span<const float> a, std::span<const float> b) noexcept {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

/// Scales to unit L2 norm. Already-normalized input is returned as is, which
/// makes normalize(normalize(v)) bit-identical to normalize(v).
inline EmbeddingVector normalize(const EmbeddingVector& v) {
  if (v.normalized()) return v;
  const double n = v.norm();
  if (n < 1e-12) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
  std::vector<float> out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = static_cast<float>(v[i] / n);
  return EmbeddingVector(std::move(out), true);
}

/// (a.b) / (|a||b|), clamped to [-1, 1].
inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    throw Error(ErrorCode::DimensionMismatch,
                std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  }
  if (a.is_compressed_zero() || b.is_compressed_zero()) return 0.0;
  const double na = a.norm();
  const double nb = b.norm();
  if (na < 1e-12 || nb < 1e-12) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
  // Multiply the norms in a fixed order so cos(a,b) and cos(b,a) share one float path.
  const double denom = std::min(na, nb) * std::max(na, nb);
  return std::clamp(dot(a.values(), b.values()) / denom, -1.0, 1.0);
}

struct EmbeddingProviderDescriptor {
  std::string name;
  std::size_t output_dim = 0;
  bool deterministic = false;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual const EmbeddingProviderDescriptor& descriptor() const noexcept = 0;
  /// Raw (not necessarily normalized) embedding of already-validated text.
  virtual EmbeddingVector embed_raw(std::string_view text) const = 0;
};

inline std::string_view trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

/// Validated, normalized embedding of `text`.
inline EmbeddingVector embed(const EmbeddingProvider& provider, std::string_view text) {
  if (trim(text).empty()) throw Error(ErrorCode::EmptyQuery, "query is empty");
  EmbeddingVector raw = provider.embed_raw(text);
  if (raw.dim() != provider.descriptor().output_dim) {
    throw Error(ErrorCode::DimensionMismatch, "provider '" + provider.descriptor().name +
                                                  "' emitted dim " + std::to_string(raw.dim()));
  }
  return normalize(raw);
}

// ---------------------------------------------------------------------------
// Deterministic bag-of-tokens provider

/// Word-level synonym pairs (variant, canonical). The stub provider folds
/// variants onto the canonical form before hashing; the workload paraphraser
/// goes the other way.
inline const std::vector<std::pair<std::string, std::string>>& synonym_table() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"sketch", "draw"},      {"plot", "draw"},         {"render", "draw"},
      {"colour", "color"},     {"hue", "color"},         {"shade", "color"},
      {"crimson", "red"},      {"scarlet", "red"},       {"modify", "change"},
      {"alter", "change"},     {"adjust", "change"},     {"generate", "create"},
      {"build", "create"},     {"produce", "create"},    {"function", "method"},
      {"routine", "method"},   {"program", "code"},      {"script", "code"},
      {"fast", "quick"},       {"speedy", "quick"},      {"rapid", "quick"},
      {"big", "large"},        {"huge", "large"},        {"small", "tiny"},
      {"little", "tiny"},      {"explain", "describe"},  {"clarify", "describe"},
      {"illustrate", "describe"}, {"fix", "repair"},     {"mend", "repair"},
      {"error", "bug"},        {"fault", "bug"},         {"defect", "bug"},
      {"list", "array"},       {"sequence", "array"},    {"show", "display"},
      {"print", "display"},    {"output", "display"},    {"delete", "remove"},
      {"erase", "remove"},     {"begin", "start"},       {"launch", "start"},
      {"find", "search"},      {"locate", "search"},     {"quickest", "fastest"},
      {"biggest", "largest"},  {"car", "automobile"},    {"vehicle", "automobile"},
      {"movie", "film"},       {"picture", "image"},     {"photo", "image"},
      {"buy", "purchase"},     {"cheap", "inexpensive"}, {"doctor", "physician"},
  };
  return table;
}

inline const std::unordered_map<std::string, std::string>& synonym_canonical_map() {
  static const std::unordered_map<std::string, std::string> map = [] {
    std::unordered_map<std::string, std::string> m;
    for (const auto& [variant, canonical] : synonym_table()) m.emplace(variant, canonical);
    return m;
  }();
  return map;
}

/// Lowercase, split on anything that is not [a-z0-9].
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

inline std::string canonical_token(const std::string& token) {
  const auto& map = synonym_canonical_map();
  auto it = map.find(token);
  return it == map.end() ? token : it->second;
}

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Feature hashing over canonicalized tokens: bucket = hash mod dim, sign from
/// the top hash bit. Output depends only on the token multiset.
class StubProvider final : public EmbeddingProvider {
 public:
  static constexpr std::size_t kDefaultDim = 768;

  explicit StubProvider(std::size_t dim = kDefaultDim) : desc_{"stub", dim, true} {
    if (dim == 0) throw Error(ErrorCode::InvalidArgument, "stub dimension must be positive");
  }

  const EmbeddingProviderDescriptor& descriptor() const noexcept override { return desc_; }

  EmbeddingVector embed_raw(std::string_view text) const override {
    std::vector<double> acc(desc_.output_dim, 0.0);
    auto tokens = tokenize(text);
    // Punctuation-only input still needs a direction.
    if (tokens.empty()) tokens.emplace_back(trim(text));
    for (const auto& token : tokens) {
      const std::uint64_t h = fnv1a64(canonical_token(token));
      const double sign = (h >> 63) ? -1.0 : 1.0;
      acc[h % desc_.output_dim] += sign;
    }
    std::vector<float> out(acc.begin(), acc.end());
    bool all_zero = std::all_of(out.begin(), out.end(), [](float v) { return v == 0.0f; });
    if (all_zero) {
      // Every token cancelled against a colliding opposite-sign token.
      out[fnv1a64(trim(text)) % desc_.output_dim] = 1.0f;
    }
    return EmbeddingVector(std::move(out));
  }

 private:
  EmbeddingProviderDescriptor desc_;
};

}  // namespace semcache
