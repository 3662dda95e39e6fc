#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "semcache/embedding.hpp"
#include "semcache/error.hpp"
#include "semcache/rng.hpp"

namespace semcache {

/// Linear map applied on top of frozen provider embeddings. Weights are
/// out_dim x in_dim, row-major, which is also the layout shipped to the
/// federated server.
class AdapterModel {
 public:
  AdapterModel() = default;

  AdapterModel(std::size_t in_dim, std::size_t out_dim, std::vector<double> weights)
      : in_dim_(in_dim), out_dim_(out_dim), weights_(std::move(weights)) {
    if (in_dim_ == 0 || out_dim_ == 0) throw Error(ErrorCode::InvalidArgument, "adapter dims must be positive");
    if (weights_.size() != in_dim_ * out_dim_) {
      throw Error(ErrorCode::LengthMismatch, "adapter expects " + std::to_string(in_dim_ * out_dim_) +
                                                 " weights, got " + std::to_string(weights_.size()));
    }
    for (double w : weights_) {
      if (!std::isfinite(w)) throw Error(ErrorCode::InvalidArgument, "non-finite adapter weight");
    }
  }

  /// Ones on the leading diagonal; the identity matrix when square.
  static AdapterModel identity(std::size_t in_dim, std::size_t out_dim) {
    std::vector<double> w(in_dim * out_dim, 0.0);
    for (std::size_t i = 0; i < std::min(in_dim, out_dim); ++i) w[i * in_dim + i] = 1.0;
    return AdapterModel(in_dim, out_dim, std::move(w));
  }
  static AdapterModel identity(std::size_t dim) { return identity(dim, dim); }

  std::size_t in_dim() const noexcept { return in_dim_; }
  std::size_t out_dim() const noexcept { return out_dim_; }
  std::span<const double> weights() const noexcept { return weights_; }
  std::span<double> mutable_weights() noexcept { return weights_; }
  double at(std::size_t row, std::size_t col) const { return weights_[row * in_dim_ + col]; }

  friend bool operator==(const AdapterModel&, const AdapterModel&) = default;

 private:
  std::size_t in_dim_ = 0;
  std::size_t out_dim_ = 0;
  std::vector<double> weights_;
};

struct TrainingHyperparams {
  std::uint32_t epochs = 6;
  std::uint32_t batch_size = 128;
  double learning_rate = 1e-3;
  double margin = 0.5;
  double mnr_scale = 20.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be positive");
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning_rate must be positive");
    if (!(margin > 0.0 && margin <= 2.0)) throw Error(ErrorCode::InvalidArgument, "margin must be in (0, 2]");
    if (!(mnr_scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "mnr_scale must be positive");
  }
};

struct LabeledPair {
  std::string q1;
  std::string q2;
  bool duplicate = false;

  friend bool operator==(const LabeledPair&, const LabeledPair&) = default;
};

struct EmbeddedPair {
  EmbeddingVector u;
  EmbeddingVector v;
  bool duplicate = false;
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // same layout as AdapterModel::weights()
};

namespace detail {

/// Nonzero coordinates of an input; stub embeddings are very sparse.
struct SparseInput {
  std::vector<std::uint32_t> index;
  std::vector<double> value;

  explicit SparseInput(const EmbeddingVector& e) {
    for (std::size_t i = 0; i < e.dim(); ++i) {
      if (e[i] != 0.0f) {
        index.push_back(static_cast<std::uint32_t>(i));
        value.push_back(e[i]);
      }
    }
  }
};

inline std::vector<double> forward(const AdapterModel& m, const SparseInput& x) {
  std::vector<double> y(m.out_dim(), 0.0);
  const auto w = m.weights();
  const std::size_t in = m.in_dim();
  for (std::size_t r = 0; r < m.out_dim(); ++r) {
    double acc = 0.0;
    for (std::size_t k = 0; k < x.index.size(); ++k) acc += w[r * in + x.index[k]] * x.value[k];
    y[r] = acc;
  }
  return y;
}

inline double norm2(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

inline double dot2(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

/// A forward-projected input: y = W x plus its norm.
struct Projected {
  std::vector<double> y;
  double norm = 0.0;
};

inline Projected project_input(const AdapterModel& m, const SparseInput& x) {
  Projected p{forward(m, x), 0.0};
  p.norm = norm2(p.y);
  if (p.norm < 1e-12) throw Error(ErrorCode::ZeroVector, "adapter output is zero");
  return p;
}

inline double cosine(const Projected& a, const Projected& b) { return dot2(a.y, b.y) / (a.norm * b.norm); }

/// out += coeff * dcos(a,b)/da, where cos = a.b/(|a||b|).
inline void add_cosine_grad(std::vector<double>& out, const Projected& a, const Projected& b, double cos,
                            double coeff) {
  const double inv = 1.0 / (a.norm * b.norm);
  const double self = cos / (a.norm * a.norm);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += coeff * (b.y[i] * inv - a.y[i] * self);
}

/// grad += g (out_dim) outer x (sparse in_dim).
inline void add_outer(std::vector<double>& grad, std::size_t in_dim, const std::vector<double>& g,
                      const SparseInput& x) {
  for (std::size_t r = 0; r < g.size(); ++r) {
    if (g[r] == 0.0) continue;
    double* row = grad.data() + r * in_dim;
    for (std::size_t k = 0; k < x.index.size(); ++k) row[x.index[k]] += g[r] * x.value[k];
  }
}

inline void check_dim(const AdapterModel& m, const EmbeddingVector& e) {
  if (e.dim() != m.in_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "adapter in_dim " + std::to_string(m.in_dim()) +
                                                  ", input dim " + std::to_string(e.dim()));
  }
}

}  // namespace detail

/// normalize(W e).
inline EmbeddingVector apply_adapter(const AdapterModel& model, const EmbeddingVector& e) {
  detail::check_dim(model, e);
  auto y = detail::forward(model, detail::SparseInput(e));
  const double n = detail::norm2(y);
  if (n < 1e-12) throw Error(ErrorCode::ZeroVector, "adapter output is zero");
  std::vector<float> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = static_cast<float>(y[i] / n);
  return EmbeddingVector(std::move(out), true);
}

/// Mean over pairs of  y*d^2 + (1-y)*max(0, margin-d)^2  with cosine distance
/// d = 1 - cos(W u, W v), plus the gradient with respect to W.
inline LossResult contrastive_loss(const AdapterModel& model, std::span<const EmbeddedPair> batch,
                                   double margin) {
  if (batch.empty()) throw Error(ErrorCode::EmptyBatch, "contrastive batch is empty");
  LossResult out{0.0, std::vector<double>(model.weights().size(), 0.0)};
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<double> ga(model.out_dim());
  std::vector<double> gb(model.out_dim());
  for (const auto& pair : batch) {
    detail::check_dim(model, pair.u);
    detail::check_dim(model, pair.v);
    const detail::SparseInput xu(pair.u), xv(pair.v);
    const auto a = detail::project_input(model, xu);
    const auto b = detail::project_input(model, xv);
    const double c = detail::cosine(a, b);
    const double d = 1.0 - c;
    double dl_dd;
    if (pair.duplicate) {
      out.loss += d * d;
      dl_dd = 2.0 * d;
    } else {
      const double hinge = std::max(0.0, margin - d);
      out.loss += hinge * hinge;
      dl_dd = -2.0 * hinge;
    }
    const double dl_dc = -dl_dd * inv_n;
    if (dl_dc == 0.0) continue;
    std::fill(ga.begin(), ga.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    detail::add_cosine_grad(ga, a, b, c, dl_dc);
    detail::add_cosine_grad(gb, b, a, c, dl_dc);
    detail::add_outer(out.grad, model.in_dim(), ga, xu);
    detail::add_outer(out.grad, model.in_dim(), gb, xv);
  }
  out.loss *= inv_n;
  return out;
}

/// Multiple-negatives ranking loss: row i scores anchor i against every
/// positive in the batch (s_ij = scale * cos), and the loss is the mean
/// softmax cross-entropy with the diagonal as target.
inline LossResult mnr_loss(const AdapterModel& model,
                           std::span<const std::pair<EmbeddingVector, EmbeddingVector>> batch,
                           double scale) {
  if (batch.empty()) throw Error(ErrorCode::EmptyBatch, "MNR batch is empty");
  if (batch.size() < 2) throw Error(ErrorCode::BatchTooSmall, "MNR needs at least two pairs");
  const std::size_t n = batch.size();
  std::vector<detail::SparseInput> xa, xp;
  std::vector<detail::Projected> a, p;
  xa.reserve(n);
  xp.reserve(n);
  for (const auto& [anchor, positive] : batch) {
    detail::check_dim(model, anchor);
    detail::check_dim(model, positive);
    xa.emplace_back(anchor);
    xp.emplace_back(positive);
    a.push_back(detail::project_input(model, xa.back()));
    p.push_back(detail::project_input(model, xp.back()));
  }

  LossResult out{0.0, std::vector<double>(model.weights().size(), 0.0)};
  std::vector<std::vector<double>> ga(n, std::vector<double>(model.out_dim(), 0.0));
  std::vector<std::vector<double>> gp(n, std::vector<double>(model.out_dim(), 0.0));
  std::vector<double> cos(n), s(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double max_s = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      cos[j] = detail::cosine(a[i], p[j]);
      s[j] = scale * cos[j];
      max_s = std::max(max_s, s[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(s[j] - max_s);
    const double lse = max_s + std::log(sum);
    out.loss += lse - s[i];
    for (std::size_t j = 0; j < n; ++j) {
      const double softmax = std::exp(s[j] - lse);
      const double coeff = (softmax - (i == j ? 1.0 : 0.0)) * scale * inv_n;
      if (coeff == 0.0) continue;
      detail::add_cosine_grad(ga[i], a[i], p[j], cos[j], coeff);
      detail::add_cosine_grad(gp[j], p[j], a[i], cos[j], coeff);
    }
  }
  out.loss = std::max(0.0, out.loss * inv_n);
  for (std::size_t i = 0; i < n; ++i) {
    detail::add_outer(out.grad, model.in_dim(), ga[i], xa[i]);
    detail::add_outer(out.grad, model.in_dim(), gp[i], xp[i]);
  }
  return out;
}

struct LocalMetrics {
  double contrastive_loss = 0.0;  // mean over the final epoch's contrastive batches
  double mnr_loss = 0.0;          // mean over the final epoch's MNR batches
  std::size_t contrastive_batches = 0;
  std::size_t mnr_batches = 0;
};

struct LocalTrainingResult {
  AdapterModel model;
  LocalMetrics metrics;
};

inline std::vector<EmbeddedPair> embed_pairs(const EmbeddingProvider& provider, std::span<const LabeledPair> pairs) {
  std::vector<EmbeddedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({embed(provider, p.q1), embed(provider, p.q2), p.duplicate});
  return out;
}

inline void sgd_step(AdapterModel& model, std::span<const double> grad, double lr) {
  auto w = model.mutable_weights();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * grad[i];
}

/// Multitask SGD: each epoch shuffles, cuts contrastive batches from all pairs
/// and MNR batches from the duplicates, then alternates contrastive, MNR,
/// contrastive, ... until both are exhausted.
inline LocalTrainingResult train_local(AdapterModel model, std::span<const EmbeddedPair> pairs,
                                       const TrainingHyperparams& hp) {
  hp.validate();
  if (pairs.empty()) throw Error(ErrorCode::InsufficientData, "no training pairs");
  LocalMetrics metrics;
  Rng rng(hp.seed);

  std::vector<std::size_t> all(pairs.size());
  std::vector<std::size_t> dups;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    all[i] = i;
    if (pairs[i].duplicate) dups.push_back(i);
  }

  for (std::uint32_t epoch = 0; epoch < hp.epochs; ++epoch) {
    fisher_yates(all, rng);
    fisher_yates(dups, rng);

    std::vector<std::vector<EmbeddedPair>> c_batches;
    for (std::size_t start = 0; start < all.size(); start += hp.batch_size) {
      auto& b = c_batches.emplace_back();
      for (std::size_t i = start; i < std::min(all.size(), start + hp.batch_size); ++i) b.push_back(pairs[all[i]]);
    }
    std::vector<std::vector<std::pair<EmbeddingVector, EmbeddingVector>>> m_batches;
    for (std::size_t start = 0; start < dups.size(); start += hp.batch_size) {
      const std::size_t end = std::min(dups.size(), start + hp.batch_size);
      // In-batch negatives need a second row; a lone trailing duplicate is skipped.
      if (end - start < 2) break;
      auto& b = m_batches.emplace_back();
      for (std::size_t i = start; i < end; ++i) b.emplace_back(pairs[dups[i]].u, pairs[dups[i]].v);
    }

    double c_sum = 0.0, m_sum = 0.0;
    const std::size_t rounds = std::max(c_batches.size(), m_batches.size());
    for (std::size_t r = 0; r < rounds; ++r) {
      if (r < c_batches.size()) {
        auto res = contrastive_loss(model, c_batches[r], hp.margin);
        c_sum += res.loss;
        sgd_step(model, res.grad, hp.learning_rate);
      }
      if (r < m_batches.size()) {
        auto res = mnr_loss(model, m_batches[r], hp.mnr_scale);
        m_sum += res.loss;
        sgd_step(model, res.grad, hp.learning_rate);
      }
    }
    metrics.contrastive_batches = c_batches.size();
    metrics.mnr_batches = m_batches.size();
    metrics.contrastive_loss = c_batches.empty() ? 0.0 : c_sum / static_cast<double>(c_batches.size());
    metrics.mnr_loss = m_batches.empty() ? 0.0 : m_sum / static_cast<double>(m_batches.size());
  }

  for (double w : model.weights()) {
    if (!std::isfinite(w)) throw Error(ErrorCode::InvalidArgument, "training diverged: non-finite weight");
  }
  return {std::move(model), metrics};
}

inline LocalTrainingResult train_local(AdapterModel model, std::span<const LabeledPair> pairs,
                                       const EmbeddingProvider& provider, const TrainingHyperparams& hp) {
  if (pairs.empty()) throw Error(ErrorCode::InsufficientData, "no training pairs");
  const auto embedded = embed_pairs(provider, pairs);
  return train_local(std::move(model), std::span<const EmbeddedPair>(embedded), hp);
}

}  // namespace semcache
