#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "../replay_oracle.hpp"
#include "semcache/semcache.hpp"

using namespace semcache;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int number;
  const char* name;
  std::function<Verdict()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- 1

Verdict fbeta_rows() {
  struct Row {
    double p, r, want;
    ConfusionCounts counts;
  };
  // counts chosen so precision and recall come out exactly
  const std::vector<Row> rows{
      {0.52, 0.85, 0.56, {4420, 4080, 1000, 780}},
      {0.72, 0.78, 0.73, {5616, 2184, 1000, 1584}},
      {0.98, 0.79, 0.93, {7742, 158, 1000, 2058}},
  };
  constexpr double tol = 0.005;
  Verdict v{true, ""};
  for (const auto& row : rows) {
    const auto m = compute_metrics(row.counts, 0.5);
    const bool exact_inputs = std::abs(m.precision - row.p) < 1e-12 && std::abs(m.recall - row.r) < 1e-12;
    const bool ok = exact_inputs && std::abs(m.f_beta - row.want) <= tol;
    v.pass = v.pass && ok;
    v.detail += fmt("P=%.2f R=%.2f F=%.6f want %.2f+-%.3f %s; ", m.precision, m.recall, m.f_beta, row.want, tol,
                    ok ? "ok" : "OUT");
  }
  return v;
}

// ---- 2

Verdict fedavg_oracle() {
  std::mt19937_64 rng(20240);
  std::uniform_real_distribution<double> w(-5.0, 5.0);
  double worst = 0.0;
  bool perm_ok = true;
  for (int t = 0; t < 500; ++t) {
    const std::size_t clients = 1 + rng() % 8;
    const std::size_t dim = 1 + rng() % 64;
    std::vector<ClientUpdate> ups;
    for (std::size_t c = 0; c < clients; ++c) {
      ClientUpdate u;
      u.client_id = static_cast<std::uint32_t>(c * 3 + rng() % 3);
      u.sample_count = 1 + rng() % 500;
      u.weights.resize(dim);
      for (auto& x : u.weights) x = w(rng);
      ups.push_back(std::move(u));
    }
    double n = 0;
    for (const auto& u : ups) n += static_cast<double>(u.sample_count);
    const auto got = fed_avg(ups);
    for (std::size_t d = 0; d < dim; ++d) {
      double direct = 0;
      for (const auto& u : ups) direct += static_cast<double>(u.sample_count) / n * u.weights[d];
      worst = std::max(worst, std::abs(got[d] - direct));
    }
    auto shuffled = ups;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    perm_ok = perm_ok && fed_avg(shuffled) == got;
  }
  return {worst <= 1e-12 && perm_ok, fmt("max |fed_avg - direct| = %.3g (tol 1e-12), permutation invariant: %s", worst,
                                         perm_ok ? "yes" : "no")};
}

// ---- 3

struct SweepResult {
  double tau;
  double f;
};

SweepResult sweep_oracle(const std::vector<ScoredPair>& pairs, double beta, int points_per_unit) {
  SweepResult best{0.0, -1.0};
  for (int i = 0; i <= points_per_unit; ++i) {
    const double tau = static_cast<double>(i) / points_per_unit;
    double th = 0, fh = 0, fm = 0;
    for (const auto& p : pairs) {
      const bool hit = p.similarity >= tau;
      if (hit && p.duplicate) th += 1;
      if (hit && !p.duplicate) fh += 1;
      if (!hit && p.duplicate) fm += 1;
    }
    double precision;
    if (th + fh > 0) {
      precision = th / (th + fh);
    } else {
      precision = th + fm > 0 ? 0.0 : 1.0;
    }
    const double recall = th + fm > 0 ? th / (th + fm) : 1.0;
    const double b2 = beta * beta;
    const double f = (b2 * precision + recall) == 0 ? 0.0 : (1 + b2) * precision * recall / (b2 * precision + recall);
    if (f >= best.f) best = {tau, f};
  }
  return best;
}

Verdict tuner_oracle() {
  std::mt19937_64 rng(777);
  std::normal_distribution<double> dup(0.8, 0.1), non(0.5, 0.2);
  int mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng() % 300;
    const bool quantized = rng() % 3 == 0;
    std::vector<ScoredPair> pairs;
    for (std::size_t i = 0; i < n; ++i) {
      const bool d = rng() % 2 == 0;
      double s = std::clamp(d ? dup(rng) : non(rng), -1.0, 1.0);
      if (quantized) s = std::round(s * 100.0) / 100.0;
      pairs.push_back({s, d});
    }
    const auto got = tune(pairs, 0.5, 0.01);
    const auto want = sweep_oracle(pairs, 0.5, 100);
    if (got.tau != want.tau || got.f_beta_at_tau != want.f) ++mismatches;
  }
  return {mismatches == 0, fmt("%d of 200 sets differ from the exhaustive sweep", mismatches)};
}

// ---- 4

EmbeddingVector random_unit(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<float> n;
  std::vector<float> v(d);
  for (auto& x : v) x = n(rng);
  return normalize(EmbeddingVector(std::move(v)));
}

template <class LossFn>
double max_fd_relative_error(AdapterModel m, const std::vector<double>& analytic, LossFn loss) {
  constexpr double h = 1e-5;
  // denominators below this are treated as this, so exact zeros compare absolutely
  constexpr double floor = 1e-6;
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double w0 = m.weights()[i];
    m.mutable_weights()[i] = w0 + h;
    const double up = loss(m);
    m.mutable_weights()[i] = w0 - h;
    const double down = loss(m);
    m.mutable_weights()[i] = w0;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), floor}));
  }
  return worst;
}

Verdict gradients() {
  std::mt19937_64 rng(4242);
  std::normal_distribution<double> n;
  double worst_c = 0, worst_m = 0;
  for (int t = 0; t < 50; ++t) {
    std::vector<double> w(64);
    for (auto& x : w) x = n(rng);
    const AdapterModel m(8, 8, w);
    std::vector<EmbeddedPair> batch;
    std::vector<std::pair<EmbeddingVector, EmbeddingVector>> pos;
    for (int i = 0; i < 4; ++i) {
      batch.push_back({random_unit(rng, 8), random_unit(rng, 8), i % 2 == 0});
      pos.emplace_back(random_unit(rng, 8), random_unit(rng, 8));
    }
    worst_c = std::max(worst_c, max_fd_relative_error(m, contrastive_loss(m, batch, 1.5).grad, [&](const AdapterModel& x) {
                         return contrastive_loss(x, batch, 1.5).loss;
                       }));
    worst_m = std::max(worst_m, max_fd_relative_error(m, mnr_loss(m, pos, 20.0).grad, [&](const AdapterModel& x) {
                         return mnr_loss(x, pos, 20.0).loss;
                       }));
  }
  return {worst_c < 1e-4 && worst_m < 1e-4,
          fmt("max relative error contrastive %.3g, mnr %.3g (tol 1e-4)", worst_c, worst_m)};
}

// ---- 5

Verdict pca_properties() {
  std::mt19937_64 rng(55);
  std::normal_distribution<double> g;
  double ortho = 0, recon = 0;
  bool sorted = true;
  for (int t = 0; t < 10; ++t) {
    const std::size_t dim = 32, k = 4, count = 60;
    std::vector<std::vector<double>> basis(k, std::vector<double>(dim));
    for (auto& b : basis)
      for (auto& x : b) x = g(rng) / std::sqrt(double(dim));
    std::vector<double> mean(dim);
    for (auto& x : mean) x = 0.1 * g(rng);
    std::vector<EmbeddingVector> data;
    for (std::size_t i = 0; i < count; ++i) {
      std::vector<double> p = mean;
      for (std::size_t j = 0; j < k; ++j) {
        const double c = g(rng) * double(k - j);
        for (std::size_t d = 0; d < dim; ++d) p[d] += c * basis[j][d];
      }
      data.emplace_back(std::vector<float>(p.begin(), p.end()));
    }
    const auto m = fit_pca(data, k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        double d = 0;
        for (std::size_t c = 0; c < dim; ++c) d += double(m.component(i)[c]) * m.component(j)[c];
        ortho = std::max(ortho, std::abs(d - (i == j ? 1.0 : 0.0)));
      }
    sorted = sorted && std::is_sorted(m.explained_variance.rbegin(), m.explained_variance.rend());
    for (const auto& p : data) {
      const auto back = reconstruct(m, project_raw(m, p));
      for (std::size_t d = 0; d < dim; ++d) recon = std::max(recon, std::abs(back[d] - double(p[d])));
    }
  }

  StubProvider provider(768);
  const auto texts = generate_base_queries(100, 5);
  std::vector<EmbeddingVector> samples;
  for (const auto& q : texts) samples.push_back(embed(provider, q));
  const auto big = fit_pca(samples, 64);
  const double saving = 1.0 - double(big.compressed_bytes()) / double(big.uncompressed_bytes());
  const bool bytes_ok = big.uncompressed_bytes() == 3072 && big.compressed_bytes() == 256 && saving >= 0.83;
  return {ortho < 1e-6 && sorted && recon < 1e-6 && bytes_ok,
          fmt("orthonormality %.3g, sorted %s, max reconstruction error %.3g (tol 1e-6), %zu->%zu bytes (%.1f%% saved)",
              ortho, sorted ? "yes" : "no", recon, big.uncompressed_bytes(), big.compressed_bytes(), 100 * saving)};
}

// ---- 6

Verdict search_speedup() {
  constexpr std::size_t entries = 10000, queries = 200;
  std::mt19937_64 rng(66);
  std::vector<EmbeddingVector> full;
  for (std::size_t i = 0; i < entries; ++i) full.push_back(random_unit(rng, 768));
  std::vector<EmbeddingVector> fit_set(full.begin(), full.begin() + 1000);
  const auto pca = fit_pca(fit_set, 64);

  auto provider = std::make_shared<StubProvider>(768);
  SemanticCache wide{EmbeddingPipeline(provider)};
  SemanticCache narrow{EmbeddingPipeline(provider, std::nullopt, pca)};
  for (std::size_t i = 0; i < entries; ++i) {
    const std::string q = "entry " + std::to_string(i);
    wide.insert(q, "r", {}, full[i]);
    narrow.insert(q, "r", {}, project(pca, full[i]));
  }
  std::vector<EmbeddingVector> qs_wide, qs_narrow;
  for (std::size_t i = 0; i < queries; ++i) {
    qs_wide.push_back(random_unit(rng, 768));
    qs_narrow.push_back(project(pca, qs_wide.back()));
  }
  LookupConfig cfg;
  cfg.tau = 0.99;
  auto time_ms = [&](const SemanticCache& cache, const std::vector<EmbeddingVector>& qs) {
    double best = 1e300;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      for (const auto& q : qs) (void)cache.lookup_embedded("probe", q, {}, cfg);
      best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    return best / double(qs.size());
  };
  const double t768 = time_ms(wide, qs_wide);
  const double t64 = time_ms(narrow, qs_narrow);
  const double ratio = t768 / t64;
  return {ratio >= 1.5, fmt("mean lookup %.4f ms at 768, %.4f ms at 64, ratio %.2f (need >= 1.5)", t768, t64, ratio)};
}

// ---- 7

Verdict contextual() {
  const auto records = build_contextual_suite(50, 7);
  std::size_t probes = 0;
  for (const auto& r : records) probes += r.role == ContextualRecord::Role::Probe ? 1 : 0;
  auto run = [&](bool verify) {
    SemanticCache cache{EmbeddingPipeline(std::make_shared<StubProvider>())};
    LookupConfig cfg;
    cfg.verify_context = verify;
    return run_contextual_benchmark(cache, records, cfg).counts;
  };
  const auto on = run(true), off = run(false);
  return {probes == 100 && on.false_hit == 0 && off.false_hit >= 1,
          fmt("%zu probes; false hits with verification %llu, without %llu", probes,
              static_cast<unsigned long long>(on.false_hit), static_cast<unsigned long long>(off.false_hit))};
}

// ---- 8

Verdict federated() {
  constexpr std::uint32_t clients = 20;
  constexpr std::size_t pairs_per_client = 100;
  StubProvider provider(768);
  FlConfig cfg;
  cfg.num_clients = clients;
  cfg.clients_per_round = 4;
  cfg.rounds = 10;
  cfg.seed = 3;
  const auto data = synthetic_fl_pairs(clients * pairs_per_client / 2, 200, cfg.seed);
  const auto parts = partition_pairs(data.train, clients, cfg.seed);
  FederatedSimulation sim(provider, parts, cfg);
  const auto heldout = embed_pairs(provider, data.heldout);
  std::vector<double> f;
  const auto final_model = sim.run(sim.initial_model(), heldout, [&](const RoundReport& r) { f.push_back(r.heldout->f_beta); });

  // per-client optimum of the final global adapter on each client's own validation split
  const auto adapter = sim.adapter_of(final_model);
  double sum = 0;
  int counted = 0;
  for (const auto& c : sim.clients()) {
    const auto scored = score_pairs(&adapter, c.validation);
    const bool dup = std::any_of(scored.begin(), scored.end(), [](const ScoredPair& p) { return p.duplicate; });
    const bool non = std::any_of(scored.begin(), scored.end(), [](const ScoredPair& p) { return !p.duplicate; });
    if (!dup || !non) continue;
    sum += sweep_oracle(scored, cfg.beta, 100).tau;
    ++counted;
  }
  const double mean_opt = sum / counted;
  const double gap = std::abs(final_model.tau_global - mean_opt);

  std::vector<double> moving;
  for (std::size_t i = 0; i + 5 <= f.size(); ++i) {
    double s = 0;
    for (std::size_t j = i; j < i + 5; ++j) s += f[j];
    moving.push_back(s / 5.0);
  }
  bool monotone = true;
  // 1e-12 absorbs summation rounding only
  for (std::size_t i = 1; i < moving.size(); ++i) monotone = monotone && moving[i] >= moving[i - 1] - 1e-12;

  std::string trace;
  for (double x : f) trace += fmt(" %.4f", x);
  return {gap <= 0.02 && monotone,
          fmt("tau_global %.4f vs mean of %d client optima %.4f (|diff| %.4f, tol 0.02); 5-round moving average "
              "non-decreasing: %s; F0.5 by round:%s",
              final_model.tau_global, counted, mean_opt, gap, monotone ? "yes" : "no", trace.c_str())};
}

// ---- 9

Verdict end_to_end() {
  constexpr std::uint64_t seed = 1;
  auto provider = std::make_shared<StubProvider>();
  SemanticCache cache{EmbeddingPipeline(provider)};
  const auto tuning = generate_labeled_pairs(generate_base_queries(300, seed ^ 0x7a11ULL), seed + 11);
  std::vector<ScoredPair> scored;
  for (const auto& p : tuning) {
    scored.push_back({stored_similarity(cache.encode(p.q1), cache.encode(p.q2)), p.duplicate});
  }
  LookupConfig cfg;
  cfg.tau = tune(scored).tau;
  const auto stream = generate_workload(generate_base_queries(1000, seed), 0.30, 1000, seed + 1);
  const auto result = run_benchmark(cache, stream, cfg);
  const auto oracle = testutil::naive_replay(*provider, stream, cfg.tau, cfg.top_k);
  const bool same = result.outcomes == oracle;
  return {result.metrics.precision >= 0.95 && result.hit_rate >= 0.25 && same,
          fmt("tau %.2f, precision %.4f (need >= 0.95), hit rate %.4f (need >= 0.25), recall %.4f, matches naive "
              "replay: %s",
              cfg.tau, result.metrics.precision, result.hit_rate, result.metrics.recall, same ? "yes" : "no")};
}

// ---- 10

Verdict persistence_and_proxy() {
  auto provider = std::make_shared<StubProvider>(128);
  const auto base = generate_base_queries(60, 10);
  std::vector<EmbeddingVector> samples;
  for (const auto& q : base) samples.push_back(embed(*provider, q));
  const auto pca = fit_pca(samples, 16);
  SemanticCache cache{EmbeddingPipeline(provider, std::nullopt, pca)};
  for (std::size_t i = 0; i < 20; ++i) cache.insert(base[i], "answer " + std::to_string(i));
  cache.insert(base[30], "follow-up", {base[20], base[21]});
  cache.set_threshold_profile({0.81, 0.5, 0.9, 0.01});
  const auto bytes = cache.serialize();
  const auto back = SemanticCache::deserialize(bytes, provider);
  const bool entries_equal = back->entries() == cache.entries();
  const bool pca_equal = back->pipeline().pca() && *back->pipeline().pca() == pca;
  const auto a = cache.threshold_profile(), b = back->threshold_profile();
  const bool profile_equal = a.tau == b.tau && a.beta == b.beta && a.f_beta_at_tau == b.f_beta_at_tau;
  const bool bytes_equal = back->serialize() == bytes;

  std::size_t accepted_corrupt = 0;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto bad = bytes;
    bad[i] ^= 0x5a;
    try {
      (void)SemanticCache::deserialize(bad, provider);
      ++accepted_corrupt;
    } catch (const Error&) {
    }
  }

  SemanticCache proxy_cache{EmbeddingPipeline(std::make_shared<StubProvider>())};
  UpstreamClient upstream;
  ProxyService service(proxy_cache, upstream, ProxyConfig{});
  const nlohmann::json req{{"model", "gpt-test"},
                           {"messages", {{{"role", "user"}, {"content", "How do I draw a line in Python?"}}}}};
  const auto first = service.handle_chat_completion(req.dump());
  const auto second = service.handle_chat_completion(req.dump());
  auto content = [](const std::string& body) {
    return nlohmann::json::parse(body).at("choices").at(0).at("message").at("content").get<std::string>();
  };
  const bool proxy_ok = first.status == 200 && second.status == 200 && first.headers.at("X-Cache") == "MISS" &&
                        second.headers.at("X-Cache") == "HIT" && content(first.body) == content(second.body) &&
                        upstream.call_count() == 1;

  return {entries_equal && pca_equal && profile_equal && bytes_equal && accepted_corrupt == 0 && proxy_ok,
          fmt("entries %s, PCA %s, profile %s, re-serialized bytes %s; %zu of %zu corrupted files accepted; proxy "
              "%s/%s, %zu upstream call(s)",
              entries_equal ? "equal" : "DIFFER", pca_equal ? "equal" : "DIFFERS", profile_equal ? "equal" : "DIFFERS",
              bytes_equal ? "identical" : "DIFFER", accepted_corrupt, bytes.size(), first.headers.at("X-Cache").c_str(),
              second.headers.at("X-Cache").c_str(), static_cast<std::size_t>(upstream.call_count()))};
}

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {1, "F_beta matches reference rows", fbeta_rows},
      {2, "FedAvg oracle equivalence", fedavg_oracle},
      {3, "threshold tuner oracle equivalence", tuner_oracle},
      {4, "loss gradients match finite differences", gradients},
      {5, "PCA properties", pca_properties},
      {6, "compressed search speedup", search_speedup},
      {7, "contextual false-hit elimination", contextual},
      {8, "federated convergence properties", federated},
      {9, "end-to-end synthetic benchmark", end_to_end},
      {10, "persistence and proxy round trips", persistence_and_proxy},
  };
  return all;
}

bool run_one(const Criterion& c) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = c.run();
  } catch (const std::exception& e) {
    v = {false, std::string("threw: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("[%s] criterion %d: %s (%.2f s) %s\n", v.pass ? "PASS" : "FAIL", c.number, c.name, s, v.detail.c_str());
  std::fflush(stdout);
  return v.pass;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--criterion N]\n", argv[0]);
      return 2;
    }
  }
  int failed = 0, ran = 0;
  for (const auto& c : criteria()) {
    if (only != 0 && c.number != only) continue;
    ++ran;
    failed += run_one(c) ? 0 : 1;
  }
  if (ran == 0) {
    std::fprintf(stderr, "no criterion %d\n", only);
    return 2;
  }
  std::printf("%d of %d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
