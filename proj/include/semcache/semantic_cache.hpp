#pragma once

#include <algorithm>
#include <cassert>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <list>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "semcache/binary_io.hpp"
#include "semcache/pipeline.hpp"
#include "semcache/threshold.hpp"

namespace semcache {

struct CacheEntry {
  std::uint64_t id = 0;
  std::string query_text;
  /// Empty for context-only entries: history turns materialized so that
  /// chains stay complete. Those are never served.
  std::string response_text;
  EmbeddingVector embedding;
  std::uint64_t parent_id = 0;  // 0 = no parent
  std::uint64_t created_at = 0;  // unix milliseconds

  bool context_only() const noexcept { return response_text.empty(); }

  friend bool operator==(const CacheEntry&, const CacheEntry&) = default;
};

struct LookupConfig {
  double tau = 0.83;
  std::uint32_t top_k = 5;
  std::uint32_t context_depth = 0;  // 0 = unlimited
  /// Off reproduces a context-blind semantic cache; used for comparisons.
  bool verify_context = true;

  void validate() const {
    if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorCode::InvalidArgument, "tau must be in [0, 1]");
    if (top_k == 0) throw Error(ErrorCode::InvalidArgument, "top_k must be positive");
  }
};

struct LookupOutcome {
  enum class Kind { Hit, Miss };
  Kind kind = Kind::Miss;
  std::optional<CacheEntry> entry;
  std::optional<double> similarity;
  std::size_t candidates_examined = 0;

  bool hit() const noexcept { return kind == Kind::Hit; }
};

enum class Judgment { Accepted, Rejected };

struct CacheOptions {
  std::size_t capacity = 0;  // max entries; 0 = no eviction
  std::function<std::uint64_t()> clock;  // unix ms; system clock when empty
};

/// Both chains newest-first. Truncated to `depth` (0 = unlimited), they match
/// iff they have equal length and every aligned pair has cosine >= tau.
inline bool match_context(std::span<const EmbeddingVector> cached_chain, std::span<const EmbeddingVector> history,
                          double tau, std::uint32_t depth = 0) {
  if (depth != 0) {
    cached_chain = cached_chain.first(std::min<std::size_t>(depth, cached_chain.size()));
    history = history.first(std::min<std::size_t>(depth, history.size()));
  }
  if (cached_chain.size() != history.size()) return false;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (cosine_similarity(cached_chain[i], history[i]) < tau) return false;
  }
  return true;
}

/// Similarity of two stored embeddings. Both are unit-norm or compressed-zero,
/// so the dot product is the cosine (and 0 for compressed-zero).
inline double stored_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  return std::clamp(dot(a.values(), b.values()), -1.0, 1.0);
}

/// Semantic cache with context-chain verification.
///
/// Lookups take a shared lock and may run concurrently; insert, feedback,
/// eviction and save take the exclusive lock. Conversation history is always
/// supplied by the caller, oldest turn first.
class SemanticCache {
 public:
  explicit SemanticCache(EmbeddingPipeline pipeline, CacheOptions options = {})
      : pipeline_(std::move(pipeline)), options_(std::move(options)) {}

  SemanticCache(const SemanticCache&) = delete;
  SemanticCache& operator=(const SemanticCache&) = delete;

  const EmbeddingPipeline& pipeline() const noexcept { return pipeline_; }
  std::size_t dim() const noexcept { return pipeline_.output_dim(); }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return entries_.size();
  }

  std::vector<CacheEntry> entries() const {
    std::shared_lock lock(mu_);
    return entries_;
  }

  std::optional<CacheEntry> find(std::uint64_t id) const {
    std::shared_lock lock(mu_);
    const auto* e = find_locked(id);
    return e ? std::optional<CacheEntry>(*e) : std::nullopt;
  }

  /// Ancestor query texts of `id`, newest first.
  std::vector<std::string> ancestor_queries(std::uint64_t id) const {
    std::shared_lock lock(mu_);
    const auto* e = find_locked(id);
    if (!e) throw Error(ErrorCode::UnknownEntry, "no entry " + std::to_string(id));
    std::vector<std::string> out;
    for (const auto* a : ancestors_locked(*e, 0)) out.push_back(a->query_text);
    return out;
  }

  ThresholdProfile threshold_profile() const {
    std::shared_lock lock(mu_);
    return profile_;
  }

  /// Stored at 32-bit precision, which is how it is persisted.
  void set_threshold_profile(ThresholdProfile p) {
    std::unique_lock lock(mu_);
    profile_ = quantize(p);
  }

  LookupConfig default_lookup_config() const {
    LookupConfig cfg;
    cfg.tau = threshold_profile().tau;
    return cfg;
  }

  EmbeddingVector encode(std::string_view text) const { return pipeline_.encode(text); }

  LookupOutcome lookup(std::string_view query, std::span<const std::string> history, const LookupConfig& cfg) const {
    if (trim(query).empty()) throw Error(ErrorCode::EmptyQuery, "query is empty");
    return lookup_embedded(query, pipeline_.encode(query), history, cfg);
  }

  LookupOutcome lookup(std::string_view query, const LookupConfig& cfg) const { return lookup(query, {}, cfg); }

  /// Lookup with a precomputed query embedding; `query` is only recorded for
  /// later feedback.
  LookupOutcome lookup_embedded(std::string_view query, const EmbeddingVector& q,
                                std::span<const std::string> history, const LookupConfig& cfg) const {
    cfg.validate();
    if (q.dim() != dim()) throw Error(ErrorCode::DimensionMismatch, "query embedding has wrong dimension");

    // Newest-first history embeddings, computed on first use.
    std::vector<EmbeddingVector> history_emb;
    bool history_ready = false;
    auto history_embeddings = [&]() -> const std::vector<EmbeddingVector>& {
      if (!history_ready) {
        const std::size_t take = cfg.context_depth == 0 ? history.size()
                                                        : std::min<std::size_t>(cfg.context_depth, history.size());
        for (std::size_t i = 0; i < take; ++i) history_emb.push_back(pipeline_.encode(history[history.size() - 1 - i]));
        history_ready = true;
      }
      return history_emb;
    };

    LookupOutcome out;
    std::shared_lock lock(mu_);
    struct Candidate {
      double sim;
      std::size_t index;
    };
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (e.context_only()) continue;
      const double sim = stored_similarity(q, e.embedding);
      if (sim >= cfg.tau) candidates.push_back({sim, i});
    }
    auto better = [&](const Candidate& a, const Candidate& b) {
      if (a.sim != b.sim) return a.sim > b.sim;
      return entries_[a.index].id < entries_[b.index].id;
    };
    const std::size_t keep = std::min<std::size_t>(cfg.top_k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      better);
    candidates.resize(keep);

    for (const auto& c : candidates) {
      ++out.candidates_examined;
      const auto& entry = entries_[c.index];
      bool ok = true;
      if (cfg.verify_context) {
        const auto chain = ancestors_locked(entry, cfg.context_depth);
        std::vector<EmbeddingVector> chain_emb;
        chain_emb.reserve(chain.size());
        for (const auto* a : chain) chain_emb.push_back(a->embedding);
        ok = match_context(chain_emb, history_embeddings(), cfg.tau, cfg.context_depth);
      }
      if (ok) {
        assert(c.sim >= cfg.tau);
        out.kind = LookupOutcome::Kind::Hit;
        out.entry = entry;
        out.similarity = c.sim;
        break;
      }
    }
    lock.unlock();

    if (out.hit()) {
      std::lock_guard side(side_mu_);
      served_[out.entry->id] = std::string(query);
      touch_locked(out.entry->id);
    }
    return out;
  }

  /// Stores (query, response) under the context given by `history`, returning
  /// the new entry id. The parent is an existing entry whose own chain spells
  /// out `history` exactly; missing turns are created as context-only entries.
  std::uint64_t insert(std::string_view query, std::string_view response, std::span<const std::string> history = {},
                       std::optional<EmbeddingVector> precomputed = std::nullopt) {
    if (trim(query).empty()) throw Error(ErrorCode::EmptyQuery, "query is empty");
    if (response.empty()) throw Error(ErrorCode::EmptyResponse, "response is empty");
    for (const auto& turn : history) {
      if (trim(turn).empty()) throw Error(ErrorCode::EmptyQuery, "history contains an empty turn");
    }
    EmbeddingVector emb = precomputed ? std::move(*precomputed) : pipeline_.encode(query);
    if (emb.dim() != dim()) throw Error(ErrorCode::DimensionMismatch, "embedding has wrong dimension");

    // Embed missing history turns before taking the writer lock.
    std::vector<std::optional<EmbeddingVector>> turn_emb(history.size());
    {
      std::shared_lock lock(mu_);
      std::uint64_t parent = 0;
      std::size_t first_missing = history.size();
      for (std::size_t i = 0; i < history.size(); ++i) {
        parent = find_child_locked(parent, history[i], i == 0);
        if (parent == 0) {
          first_missing = i;
          break;
        }
      }
      for (std::size_t j = first_missing; j < history.size(); ++j) turn_emb[j] = pipeline_.encode(history[j]);
    }

    std::unique_lock lock(mu_);
    std::uint64_t parent = 0;
    bool chain_exists = true;
    for (std::size_t i = 0; i < history.size(); ++i) {
      std::uint64_t next = chain_exists ? find_child_locked(parent, history[i], i == 0) : 0;
      if (next == 0) {
        chain_exists = false;
        EmbeddingVector e = turn_emb[i] ? std::move(*turn_emb[i]) : pipeline_.encode(history[i]);
        next = append_locked(std::string(history[i]), std::string(), std::move(e), parent);
      }
      parent = next;
    }
    const auto id = append_locked(std::string(query), std::string(response), std::move(emb), parent);
    {
      std::lock_guard side(side_mu_);
      touch_locked(id);
    }
    evict_locked();
    return id;
  }

  std::uint64_t insert(std::string_view query, std::string_view response, std::initializer_list<std::string> history) {
    std::vector<std::string> h(history);
    return insert(query, response, std::span<const std::string>(h));
  }

  /// Appends (served query, cached query, accepted?) to the feedback log.
  LabeledPair record_feedback(std::uint64_t entry_id, Judgment judgment) {
    std::string cached_query;
    {
      std::shared_lock lock(mu_);
      const auto* e = find_locked(entry_id);
      if (!e) throw Error(ErrorCode::UnknownEntry, "no entry " + std::to_string(entry_id));
      cached_query = e->query_text;
    }
    std::lock_guard side(side_mu_);
    auto it = served_.find(entry_id);
    if (it == served_.end()) {
      throw Error(ErrorCode::InvalidArgument, "entry " + std::to_string(entry_id) + " has not been served");
    }
    LabeledPair pair{it->second, cached_query, judgment == Judgment::Accepted};
    feedback_.push_back(pair);
    return pair;
  }

  /// Same, for a query that was served by an earlier process.
  LabeledPair record_feedback(std::uint64_t entry_id, std::string served_query, Judgment judgment) {
    if (trim(served_query).empty()) throw Error(ErrorCode::EmptyQuery, "served query is empty");
    std::string cached_query;
    {
      std::shared_lock lock(mu_);
      const auto* e = find_locked(entry_id);
      if (!e) throw Error(ErrorCode::UnknownEntry, "no entry " + std::to_string(entry_id));
      cached_query = e->query_text;
    }
    std::lock_guard side(side_mu_);
    LabeledPair pair{std::move(served_query), cached_query, judgment == Judgment::Accepted};
    feedback_.push_back(pair);
    return pair;
  }

  std::vector<LabeledPair> feedback_log() const {
    std::lock_guard side(side_mu_);
    return feedback_;
  }

  /// Re-scores the feedback log with the current pipeline, adds `baseline`
  /// (e.g. a validation set), tunes and installs the new threshold.
  ThresholdProfile retune(std::span<const ScoredPair> baseline = {}, double beta = kDefaultBeta,
                          double grid_step = 0.01) {
    std::vector<ScoredPair> pairs(baseline.begin(), baseline.end());
    for (const auto& p : feedback_log()) {
      pairs.push_back({stored_similarity(pipeline_.encode(p.q1), pipeline_.encode(p.q2)), p.duplicate});
    }
    auto profile = tune(pairs, beta, grid_step);
    set_threshold_profile(profile);
    return threshold_profile();
  }

  /// Drops context-only entries that nothing refers to any more.
  std::size_t compact() {
    std::unique_lock lock(mu_);
    std::size_t removed = 0;
    bool changed = true;
    while (changed) {
      changed = false;
      std::unordered_map<std::uint64_t, std::size_t> child_count;
      for (const auto& e : entries_) {
        if (e.parent_id != 0) ++child_count[e.parent_id];
      }
      std::vector<CacheEntry> kept;
      kept.reserve(entries_.size());
      for (auto& e : entries_) {
        if (e.context_only() && child_count[e.id] == 0) {
          ++removed;
          changed = true;
        } else {
          kept.push_back(std::move(e));
        }
      }
      entries_ = std::move(kept);
    }
    reindex_locked();
    return removed;
  }

  // ---- persistence -------------------------------------------------------

  static constexpr std::uint16_t kFormatVersion = 1;

  std::vector<std::uint8_t> serialize() const {
    std::shared_lock lock(mu_);
    ByteWriter w;
    w.raw("MCCH");
    w.u16(kFormatVersion);
    w.u16(pipeline_.pca() ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(dim()));
    w.u64(entries_.size());
    if (pipeline_.pca()) write_pca(w, *pipeline_.pca());
    w.f32(static_cast<float>(profile_.tau));
    w.f32(static_cast<float>(profile_.f_beta_at_tau));
    w.f32(static_cast<float>(profile_.beta));
    for (const auto& e : entries_) {
      w.u64(e.id);
      w.u64(e.parent_id);
      w.u64(e.created_at);
      w.str(e.query_text);
      w.str(e.response_text);
      w.f32s(e.embedding.values());
    }
    auto bytes = std::move(w).take();
    const auto crc = crc32_of(bytes);
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
    return bytes;
  }

  void save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

  /// Rebuilds a cache from bytes. The PCA block in the file, if any, becomes
  /// the pipeline's compression stage.
  static std::unique_ptr<SemanticCache> deserialize(std::span<const std::uint8_t> bytes,
                                                    std::shared_ptr<const EmbeddingProvider> provider,
                                                    std::optional<AdapterModel> adapter = std::nullopt,
                                                    CacheOptions options = {}) {
    if (bytes.size() < 4 + 2 + 2 + 4 + 8 + 12 + 4) throw Error(ErrorCode::CorruptFile, "file too short");
    if (std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) != "MCCH") {
      throw Error(ErrorCode::CorruptFile, "bad magic");
    }
    const auto body = bytes.first(bytes.size() - 4);
    ByteReader tail(bytes.last(4));
    if (crc32_of(body) != tail.u32()) throw Error(ErrorCode::CorruptFile, "checksum mismatch");

    ByteReader r(body);
    r.raw(4);
    const auto version = r.u16();
    if (version != kFormatVersion) throw Error(ErrorCode::VersionUnsupported, "cache version " + std::to_string(version));
    const auto flags = r.u16();
    const auto file_dim = r.u32();
    const auto count = r.u64();
    std::optional<PcaModel> pca;
    if (flags & 1u) pca = read_pca(r);
    ThresholdProfile profile;
    profile.tau = r.f32();
    profile.f_beta_at_tau = r.f32();
    profile.beta = r.f32();

    auto cache = std::make_unique<SemanticCache>(
        EmbeddingPipeline(std::move(provider), std::move(adapter), std::move(pca)), std::move(options));
    if (cache->dim() != file_dim) {
      throw Error(ErrorCode::DimensionMismatch, "file dim " + std::to_string(file_dim) + " but pipeline produces " +
                                                    std::to_string(cache->dim()));
    }
    cache->profile_ = profile;
    if (count > r.remaining() / (8 * 3 + 4 + 4)) throw Error(ErrorCode::CorruptFile, "entry count exceeds file size");
    cache->entries_.reserve(count);
    std::uint64_t prev_id = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
      CacheEntry e;
      e.id = r.u64();
      e.parent_id = r.u64();
      e.created_at = r.u64();
      e.query_text = r.str();
      e.response_text = r.str();
      auto values = r.f32s(file_dim);
      const bool zero = std::all_of(values.begin(), values.end(), [](float v) { return v == 0.0f; });
      e.embedding = zero ? EmbeddingVector::compressed_zero(file_dim) : EmbeddingVector(std::move(values), true);
      if (e.id <= prev_id) throw Error(ErrorCode::CorruptFile, "entry ids not increasing");
      if (e.parent_id >= e.id || (e.parent_id != 0 && !cache->find_locked(e.parent_id))) {
        throw Error(ErrorCode::CorruptFile, "entry " + std::to_string(e.id) + " has a dangling parent");
      }
      prev_id = e.id;
      cache->index_[e.id] = cache->entries_.size();
      cache->entries_.push_back(std::move(e));
    }
    if (r.remaining() != 0) throw Error(ErrorCode::CorruptFile, "trailing bytes");
    cache->next_id_ = prev_id + 1;
    for (const auto& e : cache->entries_) cache->touch_locked(e.id);
    return cache;
  }

  static std::unique_ptr<SemanticCache> load(const std::filesystem::path& path,
                                             std::shared_ptr<const EmbeddingProvider> provider,
                                             std::optional<AdapterModel> adapter = std::nullopt,
                                             CacheOptions options = {}) {
    return deserialize(read_file(path), std::move(provider), std::move(adapter), std::move(options));
  }

 private:
  static ThresholdProfile quantize(ThresholdProfile p) {
    p.tau = static_cast<float>(p.tau);
    p.f_beta_at_tau = static_cast<float>(p.f_beta_at_tau);
    p.beta = static_cast<float>(p.beta);
    return p;
  }

  std::uint64_t now_ms() const {
    if (options_.clock) return options_.clock();
    return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                          std::chrono::system_clock::now().time_since_epoch())
                                          .count());
  }

  const CacheEntry* find_locked(std::uint64_t id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }

  /// Newest-first ancestors; `limit` 0 means walk to the root.
  std::vector<const CacheEntry*> ancestors_locked(const CacheEntry& e, std::size_t limit) const {
    std::vector<const CacheEntry*> out;
    std::uint64_t pid = e.parent_id;
    while (pid != 0 && (limit == 0 || out.size() < limit)) {
      const auto* p = find_locked(pid);
      if (!p) break;
      out.push_back(p);
      pid = p->parent_id;
    }
    return out;
  }

  /// Most recent entry with text `query` whose parent is `parent` (root-level
  /// when `root` is set). 0 if none.
  std::uint64_t find_child_locked(std::uint64_t parent, std::string_view query, bool root) const {
    if (!root && parent == 0) return 0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->parent_id == (root ? 0 : parent) && it->query_text == query) return it->id;
    }
    return 0;
  }

  std::uint64_t append_locked(std::string query, std::string response, EmbeddingVector emb, std::uint64_t parent) {
    CacheEntry e;
    e.id = next_id_++;
    e.query_text = std::move(query);
    e.response_text = std::move(response);
    e.embedding = std::move(emb);
    e.parent_id = parent;
    e.created_at = now_ms();
    index_[e.id] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.back().id;
  }

  void reindex_locked() {
    index_.clear();
    for (std::size_t i = 0; i < entries_.size(); ++i) index_[entries_[i].id] = i;
    std::lock_guard side(side_mu_);
    for (auto it = recency_.begin(); it != recency_.end();) {
      if (!index_.count(*it)) {
        recency_pos_.erase(*it);
        it = recency_.erase(it);
      } else {
        ++it;
      }
    }
  }

  // side_mu_ must be held.
  void touch_locked(std::uint64_t id) const {
    if (options_.capacity == 0) return;
    auto it = recency_pos_.find(id);
    if (it != recency_pos_.end()) recency_.erase(it->second);
    recency_.push_front(id);
    recency_pos_[id] = recency_.begin();
  }

  /// Evicts least-recently-used entries together with their descendants until
  /// within capacity. mu_ must be held exclusively.
  void evict_locked() {
    if (options_.capacity == 0 || entries_.size() <= options_.capacity) return;
    std::vector<std::uint64_t> victims;
    {
      std::lock_guard side(side_mu_);
      std::unordered_map<std::uint64_t, bool> doomed;
      std::size_t remaining = entries_.size();
      auto it = recency_.rbegin();
      while (remaining > options_.capacity && it != recency_.rend()) {
        const auto id = *it++;
        if (doomed.count(id)) continue;
        doomed[id] = true;
        --remaining;
        // Entries are id-ordered and parents precede children, so one forward
        // pass collects the whole subtree.
        for (const auto& e : entries_) {
          if (e.parent_id != 0 && doomed.count(e.parent_id) && !doomed.count(e.id)) {
            doomed[e.id] = true;
            --remaining;
          }
        }
      }
      for (const auto& [id, _] : doomed) victims.push_back(id);
    }
    std::sort(victims.begin(), victims.end());
    std::erase_if(entries_, [&](const CacheEntry& e) { return std::binary_search(victims.begin(), victims.end(), e.id); });
    {
      std::lock_guard side(side_mu_);
      for (auto id : victims) served_.erase(id);
    }
    reindex_locked();
  }

  EmbeddingPipeline pipeline_;
  CacheOptions options_;

  mutable std::shared_mutex mu_;
  std::vector<CacheEntry> entries_;  // ascending id
  std::unordered_map<std::uint64_t, std::size_t> index_;
  std::uint64_t next_id_ = 1;
  ThresholdProfile profile_ = quantize(ThresholdProfile{0.83, kDefaultBeta, 0.0, 0.01});

  // Bookkeeping that lookups may update under a shared lock.
  mutable std::mutex side_mu_;
  mutable std::unordered_map<std::uint64_t, std::string> served_;
  mutable std::list<std::uint64_t> recency_;  // front = most recent
  mutable std::unordered_map<std::uint64_t, std::list<std::uint64_t>::iterator> recency_pos_;
  std::vector<LabeledPair> feedback_;
};

}  // namespace semcache
