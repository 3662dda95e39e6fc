#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>
#include <toml.hpp>

#include "semcache/adapter.hpp"
#include "semcache/error.hpp"
#include "semcache/federated.hpp"
#include "semcache/proxy.hpp"
#include "semcache/semantic_cache.hpp"

namespace semcache {

struct EmbeddingSettings {
  std::string provider = "stub";  // stub | remote
  std::uint32_t dim = 768;
  std::string url;
  std::uint32_t timeout_ms = 10000;
};

struct CacheSettings {
  std::filesystem::path path = "semcache.mcch";
  std::size_t capacity = 0;
  std::filesystem::path adapter_path;
  std::filesystem::path pca_path;
};

struct FlSettings {
  FlConfig sim;
  std::size_t adapter_out_dim = 0;
  std::filesystem::path pairs;    // partitioned across clients; synthetic data when empty
  std::filesystem::path heldout;  // synthetic held-out set when empty
  std::size_t synthetic_pairs_per_client = 100;
  std::filesystem::path csv_out;  // per-round metrics; stdout when empty
  std::filesystem::path model_out;
};

struct AppConfig {
  EmbeddingSettings embedding;
  LookupConfig lookup;
  CacheSettings cache;
  double beta = kDefaultBeta;
  double grid_step = 0.01;
  TrainingHyperparams training;
  FlSettings fl;
  ProxyConfig proxy;
  std::optional<std::filesystem::path> source;  // file the config came from
};

namespace detail {

inline nlohmann::json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
    return j;
  }
  if (const auto* a = node.as_array()) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& v : *a) j.push_back(toml_to_json(v));
    return j;
  }
  if (const auto* v = node.as_string()) return v->get();
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  throw Error(ErrorCode::ParseError, "dates and times are not supported in config files");
}

class Section {
 public:
  Section(const nlohmann::json& root, std::string name) : name_(std::move(name)) {
    if (root.contains(name_)) {
      j_ = root.at(name_);
      if (!j_.is_object()) throw Error(ErrorCode::ParseError, "config section [" + name_ + "] must be a table");
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::ParseError, "config key " + name_ + "." + key + " has the wrong type");
    }
  }

  void get_path(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw Error(ErrorCode::ParseError, "unknown config key " + name_ + "." + k);
    }
  }

 private:
  std::string name_;
  nlohmann::json j_ = nlohmann::json::object();
  std::set<std::string> seen_;
};

}  // namespace detail

/// Builds an AppConfig from a parsed document, rejecting unknown keys.
inline AppConfig config_from_json(const nlohmann::json& root) {
  if (!root.is_object()) throw Error(ErrorCode::ParseError, "config root must be a table");
  static const std::set<std::string> sections{"embedding", "lookup", "cache", "threshold", "training", "fl", "proxy"};
  for (const auto& [k, v] : root.items()) {
    if (!sections.count(k)) throw Error(ErrorCode::ParseError, "unknown config section [" + k + "]");
  }
  AppConfig c;

  detail::Section emb(root, "embedding");
  emb.get("provider", c.embedding.provider);
  emb.get("dim", c.embedding.dim);
  emb.get("url", c.embedding.url);
  emb.get("timeout_ms", c.embedding.timeout_ms);
  emb.finish();

  detail::Section lk(root, "lookup");
  lk.get("tau", c.lookup.tau);
  lk.get("top_k", c.lookup.top_k);
  lk.get("context_depth", c.lookup.context_depth);
  lk.get("verify_context", c.lookup.verify_context);
  lk.finish();

  detail::Section cs(root, "cache");
  cs.get_path("path", c.cache.path);
  cs.get("capacity", c.cache.capacity);
  cs.get_path("adapter", c.cache.adapter_path);
  cs.get_path("pca", c.cache.pca_path);
  cs.finish();

  detail::Section th(root, "threshold");
  th.get("beta", c.beta);
  th.get("grid_step", c.grid_step);
  th.finish();

  detail::Section tr(root, "training");
  tr.get("epochs", c.training.epochs);
  tr.get("batch_size", c.training.batch_size);
  tr.get("learning_rate", c.training.learning_rate);
  tr.get("margin", c.training.margin);
  tr.get("mnr_scale", c.training.mnr_scale);
  tr.get("seed", c.training.seed);
  tr.finish();

  detail::Section fl(root, "fl");
  fl.get("num_clients", c.fl.sim.num_clients);
  fl.get("clients_per_round", c.fl.sim.clients_per_round);
  fl.get("rounds", c.fl.sim.rounds);
  fl.get("seed", c.fl.sim.seed);
  fl.get("validation_fraction", c.fl.sim.validation_fraction);
  fl.get("initial_tau", c.fl.sim.initial_tau);
  fl.get("parallel", c.fl.sim.parallel);
  fl.get("adapter_out_dim", c.fl.adapter_out_dim);
  fl.get_path("pairs", c.fl.pairs);
  fl.get_path("heldout", c.fl.heldout);
  fl.get("synthetic_pairs_per_client", c.fl.synthetic_pairs_per_client);
  fl.get_path("csv_out", c.fl.csv_out);
  fl.get_path("model_out", c.fl.model_out);
  fl.finish();

  detail::Section px(root, "proxy");
  px.get("listen_addr", c.proxy.listen_addr);
  px.get("upstream_base_url", c.proxy.upstream_base_url);
  px.get("session_ttl_s", c.proxy.session_ttl_s);
  px.get("mock_latency_ms", c.proxy.mock_latency_ms);
  px.get("autosave_every", c.proxy.autosave_every);
  px.finish();

  c.fl.sim.hyperparams = c.training;
  c.fl.sim.beta = c.beta;
  c.fl.sim.grid_step = c.grid_step;
  c.proxy.lookup = c.lookup;
  c.proxy.cache_path = c.cache.path;
  return c;
}

/// `.json` files are JSON; anything else is TOML.
inline AppConfig load_config(const std::filesystem::path& path) {
  nlohmann::json root;
  if (path.extension() == ".json") {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open config " + path.string());
    try {
      root = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
  } else {
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoFailure, "cannot open config " + path.string());
    try {
      root = detail::toml_to_json(toml::parse_file(path.string()));
    } catch (const toml::parse_error& e) {
      std::ostringstream s;
      s << path.string() << ":" << e.source().begin.line << ": " << e.description();
      throw Error(ErrorCode::ParseError, s.str());
    }
  }
  auto c = config_from_json(root);
  c.source = path;
  return c;
}

/// --config beats SEMCACHE_CONFIG, which beats built-in defaults.
inline std::optional<std::filesystem::path> resolve_config_path(const std::optional<std::string>& flag) {
  if (flag && !flag->empty()) return std::filesystem::path(*flag);
  if (const char* env = std::getenv("SEMCACHE_CONFIG"); env && *env) return std::filesystem::path(env);
  return std::nullopt;
}

inline AppConfig resolve_config(const std::optional<std::string>& flag) {
  const auto path = resolve_config_path(flag);
  return path ? load_config(*path) : AppConfig{};
}

inline nlohmann::json to_json(const AppConfig& c) {
  return {
      {"source", c.source ? c.source->string() : std::string("<defaults>")},
      {"embedding",
       {{"provider", c.embedding.provider}, {"dim", c.embedding.dim}, {"url", c.embedding.url},
        {"timeout_ms", c.embedding.timeout_ms}}},
      {"lookup",
       {{"tau", c.lookup.tau}, {"top_k", c.lookup.top_k}, {"context_depth", c.lookup.context_depth},
        {"verify_context", c.lookup.verify_context}}},
      {"cache",
       {{"path", c.cache.path.string()}, {"capacity", c.cache.capacity}, {"adapter", c.cache.adapter_path.string()},
        {"pca", c.cache.pca_path.string()}}},
      {"threshold", {{"beta", c.beta}, {"grid_step", c.grid_step}}},
      {"training",
       {{"epochs", c.training.epochs}, {"batch_size", c.training.batch_size},
        {"learning_rate", c.training.learning_rate}, {"margin", c.training.margin},
        {"mnr_scale", c.training.mnr_scale}, {"seed", c.training.seed}}},
      {"fl",
       {{"num_clients", c.fl.sim.num_clients}, {"clients_per_round", c.fl.sim.clients_per_round},
        {"rounds", c.fl.sim.rounds}, {"seed", c.fl.sim.seed}, {"validation_fraction", c.fl.sim.validation_fraction},
        {"initial_tau", c.fl.sim.initial_tau}, {"parallel", c.fl.sim.parallel},
        {"adapter_out_dim", c.fl.adapter_out_dim}, {"pairs", c.fl.pairs.string()}, {"heldout", c.fl.heldout.string()},
        {"synthetic_pairs_per_client", c.fl.synthetic_pairs_per_client}, {"csv_out", c.fl.csv_out.string()},
        {"model_out", c.fl.model_out.string()}}},
      {"proxy",
       {{"listen_addr", c.proxy.listen_addr}, {"upstream_base_url", c.proxy.upstream_base_url},
        {"session_ttl_s", c.proxy.session_ttl_s}, {"mock_latency_ms", c.proxy.mock_latency_ms},
        {"autosave_every", c.proxy.autosave_every}}},
  };
}

}  // namespace semcache
