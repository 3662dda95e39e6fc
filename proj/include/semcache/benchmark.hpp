#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "semcache/metrics.hpp"
#include "semcache/semantic_cache.hpp"
#include "semcache/workload.hpp"

namespace semcache {

struct LatencySummary {
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
};

inline LatencySummary summarize_latency(std::vector<double> samples_ms) {
  LatencySummary s;
  if (samples_ms.empty()) return s;
  std::sort(samples_ms.begin(), samples_ms.end());
  double sum = 0.0;
  for (double x : samples_ms) sum += x;
  s.mean_ms = sum / static_cast<double>(samples_ms.size());
  auto pct = [&](double q) {
    // nearest-rank
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples_ms.size())));
    return samples_ms[std::clamp<std::size_t>(rank, 1, samples_ms.size()) - 1];
  };
  s.p50_ms = pct(0.50);
  s.p95_ms = pct(0.95);
  return s;
}

struct BenchmarkResult {
  MetricsReport metrics;
  ConfusionCounts counts;
  LatencySummary latency;
  double hit_rate = 0.0;
  std::vector<Outcome> outcomes;  // one per stream item
};

inline std::string response_for(std::size_t root, std::string_view query) {
  return "response#" + std::to_string(root) + ": " + std::string(query);
}

/// Replays `stream` through the cache the way a client would: look up, serve
/// on hit, otherwise fetch and insert. A hit is only a true hit when the
/// entry served was created for the same unique question.
inline BenchmarkResult run_benchmark(SemanticCache& cache, std::span<const StreamItem> stream, const LookupConfig& cfg,
                                     double beta = kDefaultBeta) {
  BenchmarkResult result;
  std::unordered_map<std::uint64_t, std::size_t> root_of_entry;
  std::vector<double> latency;
  latency.reserve(stream.size());
  std::uint64_t hits = 0;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const auto& item = stream[i];
    if (item.duplicate_of && *item.duplicate_of >= i) {
      throw Error(ErrorCode::InvalidArgument, "stream item " + std::to_string(i) + " repeats a later item");
    }
    const auto root = item.duplicate_of.value_or(i);

    const auto t0 = std::chrono::steady_clock::now();
    const auto emb = cache.encode(item.query);
    const auto outcome = cache.lookup_embedded(item.query, emb, item.history, cfg);
    const auto t1 = std::chrono::steady_clock::now();
    latency.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());

    Outcome o;
    if (outcome.hit()) {
      ++hits;
      auto it = root_of_entry.find(outcome.entry->id);
      const bool correct = it != root_of_entry.end() && it->second == root;
      o = classify_outcome(true, item.duplicate_of.has_value(), correct);
    } else {
      o = classify_outcome(false, item.duplicate_of.has_value());
      const auto id = cache.insert(item.query, response_for(root, item.query), item.history, emb);
      root_of_entry[id] = root;
    }
    tally(result.counts, o);
    result.outcomes.push_back(o);
  }
  if (!stream.empty()) {
    result.metrics = compute_metrics(result.counts, beta);
    result.hit_rate = static_cast<double>(hits) / static_cast<double>(stream.size());
  }
  result.latency = summarize_latency(std::move(latency));
  return result;
}

/// Inserts every seed of a contextual suite, then looks up every probe
/// without inserting. Probe hits count as true only on the labeled seed.
inline BenchmarkResult run_contextual_benchmark(SemanticCache& cache, std::span<const ContextualRecord> records,
                                                const LookupConfig& cfg, double beta = kDefaultBeta) {
  using Role = ContextualRecord::Role;
  std::unordered_map<std::uint64_t, std::uint64_t> entry_of_seed;
  for (const auto& r : records) {
    if (r.role != Role::Seed) continue;
    entry_of_seed[r.id] = cache.insert(r.query, r.response, history_of(records, r));
  }
  BenchmarkResult result;
  std::vector<double> latency;
  std::uint64_t hits = 0, probes = 0;
  for (const auto& r : records) {
    if (r.role != Role::Probe) continue;
    ++probes;
    const auto history = history_of(records, r);
    const auto t0 = std::chrono::steady_clock::now();
    const auto outcome = cache.lookup(r.query, history, cfg);
    latency.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    Outcome o;
    if (outcome.hit()) {
      ++hits;
      bool correct = false;
      if (r.duplicate_of) {
        auto it = entry_of_seed.find(*r.duplicate_of);
        correct = it != entry_of_seed.end() && it->second == outcome.entry->id;
      }
      o = classify_outcome(true, r.duplicate_of.has_value(), correct);
    } else {
      o = classify_outcome(false, r.duplicate_of.has_value());
    }
    tally(result.counts, o);
    result.outcomes.push_back(o);
  }
  if (probes > 0) {
    result.metrics = compute_metrics(result.counts, beta);
    result.hit_rate = static_cast<double>(hits) / static_cast<double>(probes);
  }
  result.latency = summarize_latency(std::move(latency));
  return result;
}

inline nlohmann::json to_json(const MetricsReport& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f_beta", m.f_beta},
          {"accuracy", m.accuracy},   {"beta", m.beta}};
}

inline nlohmann::json to_json(const ConfusionCounts& c) {
  return {{"true_hit", c.true_hit}, {"false_hit", c.false_hit}, {"true_miss", c.true_miss}, {"false_miss", c.false_miss}};
}

inline nlohmann::json to_json(const BenchmarkResult& r) {
  auto j = to_json(r.metrics);
  j["confusion"] = to_json(r.counts);
  j["latency_ms"] = {{"mean", r.latency.mean_ms}, {"p50", r.latency.p50_ms}, {"p95", r.latency.p95_ms}};
  j["hit_rate"] = r.hit_rate;
  return j;
}

inline std::string csv_header() {
  return "precision,recall,f_beta,accuracy,true_hit,false_hit,true_miss,false_miss,hit_rate,latency_mean_ms,"
         "latency_p50_ms,latency_p95_ms";
}

inline std::string to_csv_row(const BenchmarkResult& r) {
  std::string out;
  auto add = [&](const std::string& s) {
    if (!out.empty()) out.push_back(',');
    out += s;
  };
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
  };
  add(num(r.metrics.precision));
  add(num(r.metrics.recall));
  add(num(r.metrics.f_beta));
  add(num(r.metrics.accuracy));
  add(std::to_string(r.counts.true_hit));
  add(std::to_string(r.counts.false_hit));
  add(std::to_string(r.counts.true_miss));
  add(std::to_string(r.counts.false_miss));
  add(num(r.hit_rate));
  add(num(r.latency.mean_ms));
  add(num(r.latency.p50_ms));
  add(num(r.latency.p95_ms));
  return out;
}

}  // namespace semcache
