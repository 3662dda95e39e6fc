#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <future>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "semcache/adapter.hpp"
#include "semcache/error.hpp"
#include "semcache/metrics.hpp"
#include "semcache/rng.hpp"
#include "semcache/threshold.hpp"

namespace semcache {

struct ClientUpdate {
  std::uint32_t client_id = 0;
  std::vector<double> weights;
  std::uint64_t sample_count = 0;
  double tau_local = 0.0;
};

struct GlobalModel {
  std::uint32_t round = 0;
  std::vector<double> weights;
  double tau_global = 0.83;

  friend bool operator==(const GlobalModel&, const GlobalModel&) = default;
};

struct FlConfig {
  std::uint32_t num_clients = 20;
  std::uint32_t clients_per_round = 4;
  std::uint32_t rounds = 50;
  std::uint64_t seed = 0;
  TrainingHyperparams hyperparams;
  double beta = kDefaultBeta;
  double grid_step = 0.01;
  double validation_fraction = 0.2;
  double initial_tau = 0.83;
  bool parallel = false;

  void validate() const {
    if (num_clients == 0 || clients_per_round == 0) {
      throw Error(ErrorCode::InvalidArgument, "client counts must be positive");
    }
    if (clients_per_round > num_clients) {
      throw Error(ErrorCode::InvalidArgument, "clients_per_round exceeds num_clients");
    }
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "validation_fraction must be in (0, 1)");
    }
    hyperparams.validate();
  }
};

/// sum_k (n_k / n) w_k, reduced in client_id order so the result does not
/// depend on the order updates arrived in.
inline std::vector<double> fed_avg(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw Error(ErrorCode::EmptyUpdates, "no client updates");
  const std::size_t len = updates.front().weights.size();
  std::vector<const ClientUpdate*> ordered;
  ordered.reserve(updates.size());
  std::uint64_t total = 0;
  for (const auto& u : updates) {
    if (u.weights.size() != len) throw Error(ErrorCode::LengthMismatch, "client weight vectors differ in length");
    total += u.sample_count;
    ordered.push_back(&u);
  }
  if (total == 0) throw Error(ErrorCode::InvalidArgument, "total sample count is zero");
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });

  std::vector<double> out(len, 0.0);
  const auto n = static_cast<double>(total);
  for (const auto* u : ordered) {
    const double share = static_cast<double>(u->sample_count) / n;
    for (std::size_t i = 0; i < len; ++i) out[i] += share * u->weights[i];
  }
  return out;
}

/// Unweighted mean of the clients' optimal thresholds.
inline double aggregate_tau(std::span<const double> taus) {
  if (taus.empty()) throw Error(ErrorCode::EmptyInput, "no thresholds to aggregate");
  double sum = 0.0;
  for (double t : taus) {
    if (!(t >= 0.0 && t <= 1.0)) throw Error(ErrorCode::InvalidArgument, "threshold outside [0, 1]");
    sum += t;
  }
  return sum / static_cast<double>(taus.size());
}

struct ClientDataset {
  std::uint32_t client_id = 0;
  std::vector<LabeledPair> pairs;
};

/// Deals a seeded shuffle of `pairs` round-robin onto `num_clients` clients
/// with ids 0..num_clients-1.
inline std::vector<ClientDataset> partition_pairs(std::vector<LabeledPair> pairs, std::uint32_t num_clients,
                                                  std::uint64_t seed) {
  if (num_clients == 0) throw Error(ErrorCode::InvalidArgument, "num_clients must be positive");
  Rng rng(seed);
  fisher_yates(pairs, rng);
  std::vector<ClientDataset> out(num_clients);
  for (std::uint32_t c = 0; c < num_clients; ++c) out[c].client_id = c;
  for (std::size_t i = 0; i < pairs.size(); ++i) out[i % num_clients].pairs.push_back(std::move(pairs[i]));
  return out;
}

/// One client's data after embedding and the train/validation split.
struct PreparedClient {
  std::uint32_t client_id = 0;
  std::vector<EmbeddedPair> train;
  std::vector<EmbeddedPair> validation;
};

struct RoundReport {
  std::uint32_t round = 0;  // index of the round that produced `model`
  std::vector<std::uint32_t> sampled;
  std::vector<std::uint32_t> skipped;  // sampled but had no training data
  std::vector<ClientUpdate> updates;
  GlobalModel model;
  std::optional<MetricsReport> heldout;  // only when a held-out set was supplied
};

inline std::uint64_t mix_seed(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Scores pairs with an adapter (identity when `adapter` is null).
inline std::vector<ScoredPair> score_pairs(const AdapterModel* adapter, std::span<const EmbeddedPair> pairs) {
  std::vector<ScoredPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const double sim = adapter ? cosine_similarity(apply_adapter(*adapter, p.u), apply_adapter(*adapter, p.v))
                               : cosine_similarity(p.u, p.v);
    out.push_back({sim, p.duplicate});
  }
  return out;
}

/// Single-process federated training of the embedding adapter and the
/// similarity threshold.
class FederatedSimulation {
 public:
  /// Embeds every client's pairs once (the provider is frozen) and fixes each
  /// client's validation split: the last `validation_fraction` of its pairs.
  /// partition_pairs has already shuffled them.
  FederatedSimulation(const EmbeddingProvider& provider, std::span<const ClientDataset> clients, FlConfig cfg,
                      std::size_t adapter_out_dim = 0)
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (clients.size() != cfg_.num_clients) {
      throw Error(ErrorCode::InvalidArgument, "expected " + std::to_string(cfg_.num_clients) + " client datasets, got " +
                                                  std::to_string(clients.size()));
    }
    in_dim_ = provider.descriptor().output_dim;
    out_dim_ = adapter_out_dim == 0 ? in_dim_ : adapter_out_dim;
    clients_.reserve(clients.size());
    for (const auto& c : clients) {
      PreparedClient pc;
      pc.client_id = c.client_id;
      const auto& pairs = c.pairs;
      std::size_t n_val = static_cast<std::size_t>(static_cast<double>(pairs.size()) * cfg_.validation_fraction);
      if (n_val == 0 && pairs.size() >= 2) n_val = 1;
      const std::size_t n_train = pairs.size() - n_val;
      auto embedded = embed_pairs(provider, pairs);
      pc.train.assign(embedded.begin(), embedded.begin() + static_cast<std::ptrdiff_t>(n_train));
      pc.validation.assign(embedded.begin() + static_cast<std::ptrdiff_t>(n_train), embedded.end());
      clients_.push_back(std::move(pc));
    }
  }

  const FlConfig& config() const noexcept { return cfg_; }
  std::span<const PreparedClient> clients() const noexcept { return clients_; }
  std::size_t in_dim() const noexcept { return in_dim_; }
  std::size_t out_dim() const noexcept { return out_dim_; }

  GlobalModel initial_model() const {
    auto id = AdapterModel::identity(in_dim_, out_dim_);
    return GlobalModel{0, std::vector<double>(id.weights().begin(), id.weights().end()), cfg_.initial_tau};
  }

  AdapterModel adapter_of(const GlobalModel& g) const { return AdapterModel(in_dim_, out_dim_, g.weights); }

  /// Clients sampled for round `round_index`: uniform without replacement,
  /// seeded by seed xor round_index.
  std::vector<std::uint32_t> sample_clients(std::uint32_t round_index) const {
    Rng rng(cfg_.seed ^ round_index);
    std::vector<std::uint32_t> out;
    for (auto i : sample_without_replacement(rng, clients_.size(), cfg_.clients_per_round)) out.push_back(clients_[i].client_id);
    return out;
  }

  /// Local training plus threshold tuning on the client's validation split.
  /// A client whose validation split lacks one of the labels keeps the
  /// global threshold.
  ClientUpdate train_client(const PreparedClient& client, const GlobalModel& global, std::uint32_t round_index) const {
    auto hp = cfg_.hyperparams;
    hp.seed = mix_seed(cfg_.hyperparams.seed ^ (std::uint64_t{round_index} << 32) ^ client.client_id);
    auto trained = train_local(adapter_of(global), std::span<const EmbeddedPair>(client.train), hp);
    double tau = global.tau_global;
    const auto scored = score_pairs(&trained.model, client.validation);
    const bool has_dup = std::any_of(scored.begin(), scored.end(), [](const ScoredPair& p) { return p.duplicate; });
    const bool has_non = std::any_of(scored.begin(), scored.end(), [](const ScoredPair& p) { return !p.duplicate; });
    if (has_dup && has_non) tau = tune(scored, cfg_.beta, cfg_.grid_step).tau;
    return ClientUpdate{client.client_id,
                        std::vector<double>(trained.model.weights().begin(), trained.model.weights().end()),
                        client.train.size(), tau};
  }

  RoundReport run_round(const GlobalModel& global, std::uint32_t round_index) const {
    if (round_index >= cfg_.rounds) throw Error(ErrorCode::InvalidArgument, "round index beyond configured rounds");
    RoundReport report;
    report.round = round_index;
    report.sampled = sample_clients(round_index);

    std::vector<const PreparedClient*> active;
    for (auto id : report.sampled) {
      const auto& c = client_by_id(id);
      if (c.train.empty()) {
        report.skipped.push_back(id);
      } else {
        active.push_back(&c);
      }
    }
    if (cfg_.parallel && active.size() > 1) {
      std::vector<std::future<ClientUpdate>> futures;
      for (const auto* c : active) {
        futures.push_back(std::async(std::launch::async, [this, c, &global, round_index] {
          return train_client(*c, global, round_index);
        }));
      }
      for (auto& f : futures) report.updates.push_back(f.get());
    } else {
      for (const auto* c : active) report.updates.push_back(train_client(*c, global, round_index));
    }
    std::sort(report.updates.begin(), report.updates.end(),
              [](const ClientUpdate& a, const ClientUpdate& b) { return a.client_id < b.client_id; });

    report.model = global;
    report.model.round = global.round + 1;
    if (!report.updates.empty()) {
      report.model.weights = fed_avg(report.updates);
      std::vector<double> taus;
      for (const auto& u : report.updates) taus.push_back(u.tau_local);
      report.model.tau_global = aggregate_tau(taus);
    }
    return report;
  }

  /// F_beta etc. of a global model on held-out pairs at its own tau_global.
  MetricsReport evaluate(const GlobalModel& g, std::span<const EmbeddedPair> heldout) const {
    const auto adapter = adapter_of(g);
    const auto scored = score_pairs(&adapter, heldout);
    return evaluate_at(scored, g.tau_global, cfg_.beta).metrics;
  }

  /// Runs every configured round from `start`, invoking `on_round` after each.
  GlobalModel run(GlobalModel start, std::span<const EmbeddedPair> heldout = {},
                  const std::function<void(const RoundReport&)>& on_round = {}) const {
    GlobalModel g = std::move(start);
    for (std::uint32_t r = 0; r < cfg_.rounds; ++r) {
      auto report = run_round(g, r);
      if (!heldout.empty()) report.heldout = evaluate(report.model, heldout);
      if (on_round) on_round(report);
      g = std::move(report.model);
    }
    return g;
  }

 private:
  const PreparedClient& client_by_id(std::uint32_t id) const {
    for (const auto& c : clients_) {
      if (c.client_id == id) return c;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown client " + std::to_string(id));
  }

  FlConfig cfg_;
  std::size_t in_dim_ = 0;
  std::size_t out_dim_ = 0;
  std::vector<PreparedClient> clients_;
};

}  // namespace semcache
