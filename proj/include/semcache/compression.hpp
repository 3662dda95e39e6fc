#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "semcache/binary_io.hpp"
#include "semcache/embedding.hpp"
#include "semcache/error.hpp"

namespace semcache {

/// Fitted PCA projection in_dim -> k. Parameters live in 32-bit floats so the
/// in-memory model and its serialized form are the same thing.
struct PcaModel {
  std::uint32_t in_dim = 0;
  std::uint32_t k = 0;
  std::vector<float> mean;                // in_dim
  std::vector<float> components;          // k x in_dim, row-major, orthonormal rows
  std::vector<float> explained_variance;  // k, non-increasing

  std::span<const float> component(std::size_t i) const {
    return std::span<const float>(components).subspan(i * in_dim, in_dim);
  }

  /// Embedding payload per cached entry, before and after compression.
  std::size_t uncompressed_bytes() const noexcept { return std::size_t{in_dim} * sizeof(float); }
  std::size_t compressed_bytes() const noexcept { return std::size_t{k} * sizeof(float); }

  friend bool operator==(const PcaModel&, const PcaModel&) = default;
};

namespace detail {

// Householder tridiagonalization followed by implicit QL, after the
// EISPACK tred2/tql2 pair. `v` is n x n row-major; on return its columns are
// eigenvectors and `d` holds eigenvalues (unsorted).
inline void symmetric_eigen(std::vector<double>& v, std::vector<double>& d, int n) {
  std::vector<double> e(n, 0.0);
  d.assign(n, 0.0);
  auto V = [&](int r, int c) -> double& { return v[static_cast<std::size_t>(r) * n + c]; };

  for (int j = 0; j < n; ++j) d[j] = V(n - 1, j);
  for (int i = n - 1; i > 0; --i) {
    double scale = 0.0, h = 0.0;
    for (int k = 0; k < i; ++k) scale += std::abs(d[k]);
    if (scale == 0.0) {
      e[i] = d[i - 1];
      for (int j = 0; j < i; ++j) {
        d[j] = V(i - 1, j);
        V(i, j) = 0.0;
        V(j, i) = 0.0;
      }
    } else {
      for (int k = 0; k < i; ++k) {
        d[k] /= scale;
        h += d[k] * d[k];
      }
      double f = d[i - 1];
      double g = std::sqrt(h);
      if (f > 0) g = -g;
      e[i] = scale * g;
      h -= f * g;
      d[i - 1] = f - g;
      for (int j = 0; j < i; ++j) e[j] = 0.0;
      for (int j = 0; j < i; ++j) {
        f = d[j];
        V(j, i) = f;
        g = e[j] + V(j, j) * f;
        for (int k = j + 1; k <= i - 1; ++k) {
          g += V(k, j) * d[k];
          e[k] += V(k, j) * f;
        }
        e[j] = g;
      }
      f = 0.0;
      for (int j = 0; j < i; ++j) {
        e[j] /= h;
        f += e[j] * d[j];
      }
      const double hh = f / (h + h);
      for (int j = 0; j < i; ++j) e[j] -= hh * d[j];
      for (int j = 0; j < i; ++j) {
        f = d[j];
        g = e[j];
        for (int k = j; k <= i - 1; ++k) V(k, j) -= (f * e[k] + g * d[k]);
        d[j] = V(i - 1, j);
        V(i, j) = 0.0;
      }
    }
    d[i] = h;
  }
  for (int i = 0; i < n - 1; ++i) {
    V(n - 1, i) = V(i, i);
    V(i, i) = 1.0;
    const double h = d[i + 1];
    if (h != 0.0) {
      for (int k = 0; k <= i; ++k) d[k] = V(k, i + 1) / h;
      for (int j = 0; j <= i; ++j) {
        double g = 0.0;
        for (int k = 0; k <= i; ++k) g += V(k, i + 1) * V(k, j);
        for (int k = 0; k <= i; ++k) V(k, j) -= g * d[k];
      }
    }
    for (int k = 0; k <= i; ++k) V(k, i + 1) = 0.0;
  }
  for (int j = 0; j < n; ++j) {
    d[j] = V(n - 1, j);
    V(n - 1, j) = 0.0;
  }
  V(n - 1, n - 1) = 1.0;
  e[0] = 0.0;

  for (int i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;
  double f = 0.0, tst1 = 0.0;
  const double eps = std::ldexp(1.0, -52);
  for (int l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    int m = l;
    while (m < n - 1 && std::abs(e[m]) > eps * tst1) ++m;
    if (m > l) {
      int iter = 0;
      do {
        if (++iter > 100 * n) throw Error(ErrorCode::DegenerateData, "eigensolver did not converge");
        double g = d[l];
        double p = (d[l + 1] - g) / (2.0 * e[l]);
        double r = std::hypot(p, 1.0);
        if (p < 0) r = -r;
        d[l] = e[l] / (p + r);
        d[l + 1] = e[l] * (p + r);
        const double dl1 = d[l + 1];
        double h = g - d[l];
        for (int i = l + 2; i < n; ++i) d[i] -= h;
        f += h;
        p = d[m];
        double c = 1.0, c2 = c, c3 = c;
        const double el1 = e[l + 1];
        double s = 0.0, s2 = 0.0;
        for (int i = m - 1; i >= l; --i) {
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[i];
          h = c * p;
          r = std::hypot(p, e[i]);
          e[i + 1] = s * r;
          s = e[i] / r;
          c = p / r;
          p = c * d[i] - s * g;
          d[i + 1] = h + s * (c * g + s * d[i]);
          for (int k = 0; k < n; ++k) {
            h = V(k, i + 1);
            V(k, i + 1) = s * V(k, i) + c * h;
            V(k, i) = c * V(k, i) - s * h;
          }
        }
        p = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * p;
        d[l] = c * p;
      } while (std::abs(e[l]) > eps * tst1);
    }
    d[l] += f;
    e[l] = 0.0;
  }
}

}  // namespace detail

/// Top-k principal components of `samples` (sample covariance, n-1
/// denominator). Each component is sign-fixed so its largest-magnitude
/// coordinate is positive, lowest index winning ties.
inline PcaModel fit_pca(std::span<const EmbeddingVector> samples, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  if (samples.empty()) throw Error(ErrorCode::TooFewSamples, "no samples");
  const std::size_t dim = samples.front().dim();
  for (const auto& s : samples) {
    if (s.dim() != dim) throw Error(ErrorCode::DimensionMismatch, "samples have differing dimensions");
  }
  if (k > dim) throw Error(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " exceeds dim " + std::to_string(dim));
  if (samples.size() < 2 || samples.size() < k) {
    throw Error(ErrorCode::TooFewSamples, std::to_string(samples.size()) + " samples for k=" + std::to_string(k));
  }

  const double n = static_cast<double>(samples.size());
  std::vector<double> mean(dim, 0.0);
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < dim; ++i) mean[i] += s[i];
  }
  for (auto& m : mean) m /= n;

  std::vector<double> cov(dim * dim, 0.0);
  std::vector<double> centered(dim);
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < dim; ++i) centered[i] = s[i] - mean[i];
    for (std::size_t i = 0; i < dim; ++i) {
      const double ci = centered[i];
      if (ci == 0.0) continue;
      double* row = cov.data() + i * dim;
      for (std::size_t j = i; j < dim; ++j) row[j] += ci * centered[j];
    }
  }
  bool all_zero = true;
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = i; j < dim; ++j) {
      cov[i * dim + j] /= (n - 1.0);
      cov[j * dim + i] = cov[i * dim + j];
      if (cov[i * dim + j] != 0.0) all_zero = false;
    }
  }
  if (all_zero) throw Error(ErrorCode::DegenerateData, "sample covariance is zero");

  std::vector<double> eigval;
  detail::symmetric_eigen(cov, eigval, static_cast<int>(dim));

  std::vector<std::size_t> order(dim);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return eigval[a] > eigval[b]; });

  PcaModel model;
  model.in_dim = static_cast<std::uint32_t>(dim);
  model.k = static_cast<std::uint32_t>(k);
  model.mean.assign(mean.begin(), mean.end());
  model.components.resize(k * dim);
  model.explained_variance.resize(k);
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t col = order[r];
    std::size_t pivot = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double mag = std::abs(cov[i * dim + col]);
      if (mag > best) {
        best = mag;
        pivot = i;
      }
    }
    const double sign = cov[pivot * dim + col] < 0.0 ? -1.0 : 1.0;
    double norm = 0.0;
    for (std::size_t i = 0; i < dim; ++i) norm += cov[i * dim + col] * cov[i * dim + col];
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < dim; ++i) {
      model.components[r * dim + i] = static_cast<float>(sign * cov[i * dim + col] / norm);
    }
    model.explained_variance[r] = static_cast<float>(std::max(0.0, eigval[col]));
  }
  return model;
}

/// components . (e - mean), before normalization.
inline std::vector<double> project_raw(const PcaModel& model, const EmbeddingVector& e) {
  if (e.dim() != model.in_dim) {
    throw Error(ErrorCode::DimensionMismatch, "PCA in_dim " + std::to_string(model.in_dim) + ", input dim " +
                                                  std::to_string(e.dim()));
  }
  std::vector<double> centered(model.in_dim);
  for (std::size_t i = 0; i < model.in_dim; ++i) centered[i] = static_cast<double>(e[i]) - model.mean[i];
  std::vector<double> out(model.k, 0.0);
  for (std::size_t r = 0; r < model.k; ++r) {
    const float* row = model.components.data() + r * model.in_dim;
    double acc = 0.0;
    for (std::size_t i = 0; i < model.in_dim; ++i) acc += row[i] * centered[i];
    out[r] = acc;
  }
  return out;
}

/// Compressed, re-normalized embedding. A point on the mean has no direction
/// and comes back as the compressed-zero vector.
inline EmbeddingVector project(const PcaModel& model, const EmbeddingVector& e) {
  const auto raw = project_raw(model, e);
  double n = 0.0;
  for (double x : raw) n += x * x;
  n = std::sqrt(n);
  if (n < 1e-12) return EmbeddingVector::compressed_zero(model.k);
  std::vector<float> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<float>(raw[i] / n);
  return EmbeddingVector(std::move(out), true);
}

/// mean + components^T . coords
inline std::vector<double> reconstruct(const PcaModel& model, std::span<const double> coords) {
  if (coords.size() != model.k) throw Error(ErrorCode::DimensionMismatch, "coordinate count differs from k");
  std::vector<double> out(model.mean.begin(), model.mean.end());
  for (std::size_t r = 0; r < model.k; ++r) {
    const float* row = model.components.data() + r * model.in_dim;
    for (std::size_t i = 0; i < model.in_dim; ++i) out[i] += coords[r] * row[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// MPCA block: "MPCA" u16 version, u32 in_dim, u32 k, then mean, components
// (row-major) and explained_variance as little-endian f32.

inline constexpr std::uint16_t kPcaFormatVersion = 1;

inline void write_pca(ByteWriter& w, const PcaModel& m) {
  w.raw("MPCA");
  w.u16(kPcaFormatVersion);
  w.u32(m.in_dim);
  w.u32(m.k);
  w.f32s(m.mean);
  w.f32s(m.components);
  w.f32s(m.explained_variance);
}

inline PcaModel read_pca(ByteReader& r) {
  if (r.raw(4) != "MPCA") throw Error(ErrorCode::CorruptFile, "bad PCA block magic");
  const auto version = r.u16();
  if (version != kPcaFormatVersion) {
    throw Error(ErrorCode::VersionUnsupported, "PCA block version " + std::to_string(version));
  }
  PcaModel m;
  m.in_dim = r.u32();
  m.k = r.u32();
  if (m.in_dim == 0 || m.k == 0 || m.k > m.in_dim) throw Error(ErrorCode::CorruptFile, "bad PCA dimensions");
  m.mean = r.f32s(m.in_dim);
  m.components = r.f32s(std::size_t{m.k} * m.in_dim);
  m.explained_variance = r.f32s(m.k);
  return m;
}

inline std::vector<std::uint8_t> serialize_pca(const PcaModel& m) {
  ByteWriter w;
  write_pca(w, m);
  return std::move(w).take();
}

inline PcaModel deserialize_pca(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto m = read_pca(r);
  if (r.remaining() != 0) throw Error(ErrorCode::CorruptFile, "trailing bytes after PCA block");
  return m;
}

inline void save_pca(const PcaModel& m, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_pca(m));
}

inline PcaModel load_pca(const std::filesystem::path& path) { return deserialize_pca(read_file(path)); }

}  // namespace semcache
