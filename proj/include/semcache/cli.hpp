#pragma once

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "semcache/benchmark.hpp"
#include "semcache/compression.hpp"
#include "semcache/config.hpp"
#include "semcache/datasets.hpp"
#include "semcache/federated.hpp"
#include "semcache/model_io.hpp"
#include "semcache/pipeline.hpp"
#include "semcache/proxy.hpp"
#include "semcache/remote_provider.hpp"
#include "semcache/semantic_cache.hpp"
#include "semcache/threshold.hpp"
#include "semcache/upstream.hpp"
#include "semcache/workload.hpp"

namespace semcache {

namespace cli {

inline std::shared_ptr<const EmbeddingProvider> make_provider(const AppConfig& c) {
  if (c.embedding.provider == "stub") return std::make_shared<StubProvider>(c.embedding.dim);
  if (c.embedding.provider == "remote") {
    if (c.embedding.url.empty()) throw Error(ErrorCode::InvalidArgument, "embedding.url is required for the remote provider");
    return std::make_shared<RemoteProvider>(c.embedding.url, c.embedding.dim,
                                            std::chrono::milliseconds(c.embedding.timeout_ms));
  }
  throw Error(ErrorCode::InvalidArgument, "embedding.provider must be 'stub' or 'remote', got '" + c.embedding.provider + "'");
}

inline std::optional<AdapterModel> load_configured_adapter(const AppConfig& c) {
  if (c.cache.adapter_path.empty()) return std::nullopt;
  return load_adapter(c.cache.adapter_path);
}

inline std::optional<PcaModel> load_configured_pca(const AppConfig& c) {
  if (c.cache.pca_path.empty()) return std::nullopt;
  return load_pca(c.cache.pca_path);
}

inline EmbeddingPipeline make_pipeline(const AppConfig& c, bool with_pca = true) {
  return EmbeddingPipeline(make_provider(c), load_configured_adapter(c),
                           with_pca ? load_configured_pca(c) : std::nullopt);
}

/// Loads the configured cache file, or starts an empty cache when it does
/// not exist yet.
inline std::unique_ptr<SemanticCache> open_cache(const AppConfig& c) {
  CacheOptions opts;
  opts.capacity = c.cache.capacity;
  if (!c.cache.path.empty() && std::filesystem::exists(c.cache.path)) {
    return SemanticCache::load(c.cache.path, make_provider(c), load_configured_adapter(c), opts);
  }
  return std::make_unique<SemanticCache>(make_pipeline(c), opts);
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::vector<ScoredPair> score_with(const EmbeddingPipeline& p, std::span<const LabeledPair> pairs) {
  std::vector<ScoredPair> out;
  out.reserve(pairs.size());
  for (const auto& pair : pairs) out.push_back({stored_similarity(p.encode(pair.q1), p.encode(pair.q2)), pair.duplicate});
  return out;
}

inline std::unique_ptr<std::ofstream> open_out(const std::string& path, std::ios::openmode mode = std::ios::trunc) {
  auto f = std::make_unique<std::ofstream>(path, std::ios::out | mode);
  if (!*f) throw Error(ErrorCode::IoFailure, "cannot open " + path + " for writing");
  return f;
}

}  // namespace cli

/// Entry point shared by the semcache binary and the tests. Returns 0 on
/// success, 1 on a usage error, 2 when the command itself fails.
inline int run_command(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"semcache: a user-side semantic cache for LLM responses", "semcache"};
  app.require_subcommand(1);
  std::string config_flag;
  app.add_option("--config", config_flag, "TOML or JSON config file (overrides SEMCACHE_CONFIG)");

  // embed
  auto* embed_cmd = app.add_subcommand("embed", "Print embeddings as JSONL");
  std::vector<std::string> embed_texts;
  std::string embed_input;
  bool embed_raw = false;
  embed_cmd->add_option("--text", embed_texts, "Text to embed (repeatable)");
  embed_cmd->add_option("--input", embed_input, "File with one text per line");
  embed_cmd->add_flag("--raw", embed_raw, "Provider output only, without adapter or PCA");

  // fit-pca
  auto* pca_cmd = app.add_subcommand("fit-pca", "Fit a PCA model on the queries of a pairs file");
  std::string pca_pairs, pca_out;
  std::size_t pca_k = 64;
  pca_cmd->add_option("--pairs", pca_pairs, "Labeled pairs JSONL")->required();
  pca_cmd->add_option("--k", pca_k, "Number of components")->capture_default_str();
  pca_cmd->add_option("--out", pca_out, "Output MPCA file")->required();

  // tune-threshold
  auto* tune_cmd = app.add_subcommand("tune-threshold", "Choose tau maximizing F_beta");
  std::string tune_pairs, tune_scored;
  std::optional<double> tune_beta, tune_step;
  bool tune_write_cache = false;
  auto* tp = tune_cmd->add_option("--pairs", tune_pairs, "Labeled pairs JSONL, scored with the configured pipeline");
  auto* ts = tune_cmd->add_option("--scored", tune_scored, "Pre-scored CSV: similarity,duplicate");
  tp->excludes(ts);
  tune_cmd->add_option("--beta", tune_beta, "F_beta weight");
  tune_cmd->add_option("--grid-step", tune_step, "Sweep step");
  tune_cmd->add_flag("--write-cache", tune_write_cache, "Store the profile in the configured cache file");

  // train-adapter
  auto* train_cmd = app.add_subcommand("train-adapter", "Train the linear embedding adapter");
  std::string train_pairs, train_out, train_init;
  std::optional<std::uint32_t> train_epochs, train_batch;
  std::optional<double> train_lr;
  std::optional<std::uint64_t> train_seed;
  std::size_t train_out_dim = 0;
  train_cmd->add_option("--pairs", train_pairs, "Labeled pairs JSONL")->required();
  train_cmd->add_option("--out", train_out, "Output adapter file")->required();
  train_cmd->add_option("--init", train_init, "Start from an existing adapter file");
  train_cmd->add_option("--epochs", train_epochs);
  train_cmd->add_option("--batch-size", train_batch);
  train_cmd->add_option("--learning-rate", train_lr);
  train_cmd->add_option("--seed", train_seed);
  train_cmd->add_option("--out-dim", train_out_dim, "Adapter output dimension (default: provider dim)");

  // fl-train
  auto* fl_cmd = app.add_subcommand("fl-train", "Run the federated training simulation");
  std::string fl_csv, fl_model_out;
  std::optional<std::uint32_t> fl_rounds;
  std::optional<std::uint64_t> fl_seed;
  fl_cmd->add_option("--csv", fl_csv, "Append per-round metrics to this CSV (default: stdout)");
  fl_cmd->add_option("--rounds", fl_rounds);
  fl_cmd->add_option("--seed", fl_seed);
  fl_cmd->add_option("--model-out", fl_model_out, "Write the final global adapter here");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score labeled data at a fixed tau");
  std::string eval_pairs, eval_contextual, eval_format = "json";
  std::optional<double> eval_tau;
  bool eval_no_verify = false;
  auto* ep = eval_cmd->add_option("--pairs", eval_pairs, "Labeled pairs JSONL");
  auto* ec = eval_cmd->add_option("--contextual", eval_contextual, "Contextual dataset JSONL");
  ep->excludes(ec);
  eval_cmd->add_option("--tau", eval_tau, "Threshold (default: lookup.tau)");
  eval_cmd->add_flag("--no-verify-context", eval_no_verify);
  eval_cmd->add_option("--format", eval_format)->check(CLI::IsMember({"json", "csv"}));

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Replay a synthetic query stream through a fresh cache");
  std::size_t bench_queries = 1000, bench_contextual = 0;
  double bench_ratio = 0.30;
  std::uint64_t bench_seed = 1;
  bool bench_tune = false, bench_no_verify = false;
  std::string bench_format = "json";
  bench_cmd->add_option("--queries", bench_queries)->capture_default_str();
  bench_cmd->add_option("--duplicate-ratio", bench_ratio)->capture_default_str();
  bench_cmd->add_option("--seed", bench_seed)->capture_default_str();
  bench_cmd->add_flag("--tune", bench_tune, "Tune tau on separately generated pairs first");
  bench_cmd->add_option("--contextual", bench_contextual, "Run the contextual suite with this many conversations instead");
  bench_cmd->add_flag("--no-verify-context", bench_no_verify);
  bench_cmd->add_option("--format", bench_format)->check(CLI::IsMember({"json", "csv"}));

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the OpenAI-compatible caching proxy");
  std::string serve_listen, serve_upstream, serve_cache;
  serve_cmd->add_option("--listen", serve_listen, "host:port");
  serve_cmd->add_option("--upstream", serve_upstream, "Upstream base URL or 'mock'");
  serve_cmd->add_option("--cache", serve_cache, "Cache file");

  // cache
  auto* cache_cmd = app.add_subcommand("cache", "Inspect or maintain a cache file");
  cache_cmd->require_subcommand(1);
  std::string cache_path_flag;
  cache_cmd->add_option("--path", cache_path_flag, "Cache file (default: cache.path)");
  auto* inspect_cmd = cache_cmd->add_subcommand("inspect", "Summarize a cache file");
  bool inspect_entries = false;
  inspect_cmd->add_flag("--entries", inspect_entries, "Also list every entry");
  auto* compact_cmd = cache_cmd->add_subcommand("compact", "Drop unreferenced context-only entries");
  auto* feedback_cmd = cache_cmd->add_subcommand("feedback", "Record a judgment on a served entry and retune");
  std::uint64_t fb_entry = 0;
  std::string fb_query, fb_judgment, fb_baseline;
  feedback_cmd->add_option("--entry-id", fb_entry)->required();
  feedback_cmd->add_option("--query", fb_query, "The query the entry was served for")->required();
  feedback_cmd->add_option("--judgment", fb_judgment)->required()->check(CLI::IsMember({"accepted", "rejected"}));
  feedback_cmd->add_option("--baseline", fb_baseline, "Scored CSV added to the feedback when retuning");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    AppConfig cfg = resolve_config(config_flag.empty() ? std::nullopt : std::optional<std::string>(config_flag));
    // flag overrides land in cfg so the printed config is what actually runs
    if (tune_beta) cfg.beta = *tune_beta;
    if (tune_step) cfg.grid_step = *tune_step;
    if (train_epochs) cfg.training.epochs = *train_epochs;
    if (train_batch) cfg.training.batch_size = *train_batch;
    if (train_lr) cfg.training.learning_rate = *train_lr;
    if (train_seed) cfg.training.seed = *train_seed;
    if (fl_rounds) cfg.fl.sim.rounds = *fl_rounds;
    if (fl_seed) cfg.fl.sim.seed = *fl_seed;
    if (!fl_csv.empty()) cfg.fl.csv_out = fl_csv;
    if (!fl_model_out.empty()) cfg.fl.model_out = fl_model_out;
    if (!serve_listen.empty()) cfg.proxy.listen_addr = serve_listen;
    if (!serve_upstream.empty()) cfg.proxy.upstream_base_url = serve_upstream;
    if (!serve_cache.empty()) cfg.cache.path = serve_cache;
    if (!cache_path_flag.empty()) cfg.cache.path = cache_path_flag;
    cfg.fl.sim.hyperparams = cfg.training;
    cfg.fl.sim.beta = cfg.beta;
    cfg.fl.sim.grid_step = cfg.grid_step;
    cfg.proxy.lookup = cfg.lookup;
    cfg.proxy.cache_path = cfg.cache.path;
    err << "config: " << to_json(cfg).dump() << "\n";

    if (embed_cmd->parsed()) {
      if (embed_texts.empty() && embed_input.empty()) throw CLI::RequiredError("--text or --input");
      std::vector<std::string> texts = embed_texts;
      if (!embed_input.empty()) {
        auto more = read_lines(embed_input);
        texts.insert(texts.end(), more.begin(), more.end());
      }
      const auto pipeline = cli::make_pipeline(cfg, !embed_raw);
      for (const auto& t : texts) {
        const auto e = embed_raw ? embed(pipeline.provider(), t) : pipeline.encode(t);
        nlohmann::json j{{"text", t}, {"dim", e.dim()}, {"embedding", e.values()}};
        out << j.dump() << "\n";
      }
      return 0;
    }

    if (pca_cmd->parsed()) {
      const auto pairs = read_pairs_jsonl(pca_pairs);
      const auto pipeline = cli::make_pipeline(cfg, false);
      std::vector<std::string> texts;
      for (const auto& p : pairs) {
        texts.push_back(p.q1);
        texts.push_back(p.q2);
      }
      std::sort(texts.begin(), texts.end());
      texts.erase(std::unique(texts.begin(), texts.end()), texts.end());
      std::vector<EmbeddingVector> samples;
      samples.reserve(texts.size());
      for (const auto& t : texts) samples.push_back(pipeline.encode_uncompressed(t));
      const auto model = fit_pca(samples, pca_k);
      save_pca(model, pca_out);
      double total = 0.0, kept = 0.0;
      for (float v : model.explained_variance) kept += v;
      // total variance is the trace of the covariance
      for (std::size_t d = 0; d < model.in_dim; ++d) {
        double s = 0.0;
        for (const auto& x : samples) {
          const double c = x.values()[d] - model.mean[d];
          s += c * c;
        }
        total += s / static_cast<double>(samples.size() - 1);
      }
      nlohmann::json j{{"in_dim", model.in_dim},
                       {"k", model.k},
                       {"samples", samples.size()},
                       {"explained_variance_ratio", total > 0 ? kept / total : 0.0},
                       {"top_explained_variance",
                        std::vector<float>(model.explained_variance.begin(),
                                           model.explained_variance.begin() + std::min<std::size_t>(5, model.k))},
                       {"bytes_per_entry", {{"before", model.uncompressed_bytes()}, {"after", model.compressed_bytes()}}},
                       {"out", pca_out}};
      out << j.dump() << "\n";
      return 0;
    }

    if (tune_cmd->parsed()) {
      std::vector<ScoredPair> scored;
      if (!tune_scored.empty()) {
        scored = read_scored_csv(tune_scored);
      } else if (!tune_pairs.empty()) {
        scored = cli::score_with(cli::make_pipeline(cfg), read_pairs_jsonl(tune_pairs));
      } else {
        throw CLI::RequiredError("--pairs or --scored");
      }
      const auto profile = tune(scored, cfg.beta, cfg.grid_step);
      if (tune_write_cache) {
        auto cache = cli::open_cache(cfg);
        cache->set_threshold_profile(profile);
        cache->save(cfg.cache.path);
      }
      out << nlohmann::json{{"tau", profile.tau}, {"f_beta", profile.f_beta_at_tau}, {"beta", profile.beta}}.dump()
          << "\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      const auto pairs = read_pairs_jsonl(train_pairs);
      const auto provider = cli::make_provider(cfg);
      const auto in_dim = provider->descriptor().output_dim;
      AdapterModel init = train_init.empty() ? AdapterModel::identity(in_dim, train_out_dim == 0 ? in_dim : train_out_dim)
                                             : load_adapter(train_init);
      const auto result = train_local(std::move(init), std::span<const LabeledPair>(pairs), *provider, cfg.training);
      save_adapter(result.model, train_out);
      out << nlohmann::json{{"pairs", pairs.size()},
                            {"in_dim", result.model.in_dim()},
                            {"out_dim", result.model.out_dim()},
                            {"contrastive_loss", result.metrics.contrastive_loss},
                            {"mnr_loss", result.metrics.mnr_loss},
                            {"out", train_out}}
                 .dump()
          << "\n";
      return 0;
    }

    if (fl_cmd->parsed()) {
      const auto provider = cli::make_provider(cfg);
      const auto& sim_cfg = cfg.fl.sim;
      const std::size_t bases = std::max<std::size_t>(2, sim_cfg.num_clients * cfg.fl.synthetic_pairs_per_client / 2);
      auto synthetic = synthetic_fl_pairs(bases, 200, sim_cfg.seed);
      auto pairs = cfg.fl.pairs.empty() ? std::move(synthetic.train) : read_pairs_jsonl(cfg.fl.pairs);
      const auto heldout_pairs = cfg.fl.heldout.empty() ? std::move(synthetic.heldout) : read_pairs_jsonl(cfg.fl.heldout);
      const auto clients = partition_pairs(std::move(pairs), sim_cfg.num_clients, sim_cfg.seed);
      FederatedSimulation sim(*provider, clients, sim_cfg, cfg.fl.adapter_out_dim);
      const auto heldout = embed_pairs(*provider, heldout_pairs);

      std::unique_ptr<std::ofstream> file;
      std::ostream* csv = &out;
      bool header = true;
      if (!cfg.fl.csv_out.empty()) {
        header = !std::filesystem::exists(cfg.fl.csv_out) || std::filesystem::file_size(cfg.fl.csv_out) == 0;
        file = cli::open_out(cfg.fl.csv_out.string(), std::ios::app);
        csv = file.get();
      }
      if (header) *csv << "round,f_beta,precision,recall,accuracy,tau_global\n";
      const auto final_model = sim.run(sim.initial_model(), heldout, [&](const RoundReport& r) {
        const auto& m = *r.heldout;
        *csv << r.model.round << ',' << cli::fmt(m.f_beta) << ',' << cli::fmt(m.precision) << ','
             << cli::fmt(m.recall) << ',' << cli::fmt(m.accuracy) << ',' << cli::fmt(r.model.tau_global) << '\n';
        csv->flush();
      });
      if (!cfg.fl.model_out.empty()) save_adapter(sim.adapter_of(final_model), cfg.fl.model_out);
      err << "fl-train: " << final_model.round << " rounds, tau_global " << cli::fmt(final_model.tau_global) << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      LookupConfig lookup = cfg.lookup;
      if (eval_tau) lookup.tau = *eval_tau;
      if (eval_no_verify) lookup.verify_context = false;
      lookup.validate();
      BenchmarkResult result;
      if (!eval_pairs.empty()) {
        const auto pipeline = cli::make_pipeline(cfg);
        const auto pairs = read_pairs_jsonl(eval_pairs);
        std::vector<double> latency;
        std::vector<ScoredPair> scored;
        for (const auto& p : pairs) {
          const auto t0 = std::chrono::steady_clock::now();
          scored.push_back({stored_similarity(pipeline.encode(p.q1), pipeline.encode(p.q2)), p.duplicate});
          latency.push_back(
              std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        }
        const auto ev = evaluate_at(scored, lookup.tau, cfg.beta);
        result.counts = ev.counts;
        result.metrics = ev.metrics;
        result.latency = summarize_latency(std::move(latency));
        result.hit_rate =
            static_cast<double>(ev.counts.true_hit + ev.counts.false_hit) / static_cast<double>(ev.counts.total());
      } else if (!eval_contextual.empty()) {
        const auto records = read_contextual_jsonl(eval_contextual);
        SemanticCache cache(cli::make_pipeline(cfg));
        result = run_contextual_benchmark(cache, records, lookup, cfg.beta);
      } else {
        throw CLI::RequiredError("--pairs or --contextual");
      }
      if (eval_format == "csv") {
        out << csv_header() << "\n" << to_csv_row(result) << "\n";
      } else {
        out << to_json(result).dump() << "\n";
      }
      return 0;
    }

    if (bench_cmd->parsed()) {
      LookupConfig lookup = cfg.lookup;
      if (bench_no_verify) lookup.verify_context = false;
      SemanticCache cache(cli::make_pipeline(cfg));
      if (bench_tune) {
        const auto tuning = generate_labeled_pairs(generate_base_queries(300, bench_seed ^ 0x7a11ULL), bench_seed + 11);
        const auto profile = tune(cli::score_with(cache.pipeline(), tuning), cfg.beta, cfg.grid_step);
        lookup.tau = profile.tau;
        err << "bench: tuned tau " << cli::fmt(profile.tau) << " (F " << cli::fmt(profile.f_beta_at_tau) << ")\n";
      }
      lookup.validate();
      BenchmarkResult result;
      if (bench_contextual > 0) {
        const auto records = build_contextual_suite(bench_contextual, bench_seed);
        result = run_contextual_benchmark(cache, records, lookup, cfg.beta);
      } else {
        const auto base = generate_base_queries(bench_queries, bench_seed);
        const auto stream = generate_workload(base, bench_ratio, bench_queries, bench_seed + 1);
        result = run_benchmark(cache, stream, lookup, cfg.beta);
      }
      if (bench_format == "csv") {
        out << csv_header() << "\n" << to_csv_row(result) << "\n";
      } else {
        auto j = to_json(result);
        j["tau"] = lookup.tau;
        out << j.dump() << "\n";
      }
      return 0;
    }

    if (serve_cmd->parsed()) {
      cfg.proxy.validate();
      auto cache = cli::open_cache(cfg);
      UpstreamClient upstream(cfg.proxy.upstream_base_url, std::chrono::milliseconds(cfg.proxy.mock_latency_ms));
      ProxyService service(*cache, upstream, cfg.proxy);
      ProxyServer server(service);
      const auto [host, port] = cfg.proxy.parse_listen_addr();

      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);

      const int bound = server.bind(host, port);
      err << "listening on " << host << ":" << bound << " (upstream " << cfg.proxy.upstream_base_url << ")\n";
      server.start_background();
      int sig = 0;
      sigwait(&signals, &sig);
      server.stop();
      service.save();
      err << "saved " << cache->size() << " entries\n";
      return 0;
    }

    if (cache_cmd->parsed()) {
      if (cfg.cache.path.empty()) throw Error(ErrorCode::InvalidArgument, "no cache path configured");
      if (!std::filesystem::exists(cfg.cache.path)) throw Error(ErrorCode::IoFailure, "no cache file at " + cfg.cache.path.string());
      auto cache = cli::open_cache(cfg);
      if (inspect_cmd->parsed()) {
        const auto entries = cache->entries();
        const auto profile = cache->threshold_profile();
        std::size_t context_only = 0;
        for (const auto& e : entries) context_only += e.context_only() ? 1 : 0;
        nlohmann::json j{{"path", cfg.cache.path.string()},
                         {"dim", cache->dim()},
                         {"entries", entries.size()},
                         {"context_only", context_only},
                         {"pca", cache->pipeline().pca().has_value()},
                         {"threshold", {{"tau", profile.tau}, {"f_beta", profile.f_beta_at_tau}, {"beta", profile.beta}}},
                         {"file_bytes", std::filesystem::file_size(cfg.cache.path)}};
        if (inspect_entries) {
          j["items"] = nlohmann::json::array();
          for (const auto& e : entries) {
            j["items"].push_back({{"id", e.id},
                                  {"parent_id", e.parent_id},
                                  {"created_at", e.created_at},
                                  {"query", e.query_text},
                                  {"response", e.response_text}});
          }
        }
        out << j.dump() << "\n";
        return 0;
      }
      if (compact_cmd->parsed()) {
        const auto removed = cache->compact();
        cache->save(cfg.cache.path);
        out << nlohmann::json{{"removed", removed}, {"entries", cache->size()}}.dump() << "\n";
        return 0;
      }
      if (feedback_cmd->parsed()) {
        const auto pair =
            cache->record_feedback(fb_entry, fb_query, fb_judgment == "accepted" ? Judgment::Accepted : Judgment::Rejected);
        std::vector<ScoredPair> baseline;
        if (!fb_baseline.empty()) baseline = read_scored_csv(fb_baseline);
        bool retuned = false;
        try {
          cache->retune(baseline, cfg.beta, cfg.grid_step);
          retuned = true;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::InsufficientLabels) throw;
        }
        if (retuned) cache->save(cfg.cache.path);
        out << nlohmann::json{{"recorded", {{"q1", pair.q1}, {"q2", pair.q2}, {"duplicate", pair.duplicate}}},
                              {"retuned", retuned},
                              {"tau", cache->threshold_profile().tau}}
                   .dump()
            << "\n";
        return 0;
      }
    }
    err << app.help();
    return 1;
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace semcache
