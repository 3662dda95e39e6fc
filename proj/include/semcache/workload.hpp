#pragma once

#include <array>
#include <cstdint>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "semcache/adapter.hpp"
#include "semcache/embedding.hpp"
#include "semcache/error.hpp"
#include "semcache/rng.hpp"

namespace semcache {

/// One query in a replayed stream. `duplicate_of` is the index of the
/// earlier unique item this query repeats (never another duplicate).
struct StreamItem {
  std::string query;
  std::vector<std::string> history;  // oldest first
  std::optional<std::size_t> duplicate_of;
};

using Paraphraser = std::function<std::string(std::string_view, Rng&)>;

namespace detail {

inline const std::map<std::string, std::vector<std::string>>& variants_by_canonical() {
  static const auto table = [] {
    std::map<std::string, std::vector<std::string>> m;
    for (const auto& [variant, canonical] : synonym_table()) m[canonical].push_back(variant);
    return m;
  }();
  return table;
}

inline std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

/// Token-multiset cosine under synonym folding; what the stub provider
/// computes, minus hash collisions.
inline double token_cosine(std::string_view a, std::string_view b) {
  std::unordered_map<std::string, double> ca, cb;
  for (const auto& t : tokenize(a)) ca[canonical_token(t)] += 1.0;
  for (const auto& t : tokenize(b)) cb[canonical_token(t)] += 1.0;
  double dotp = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [t, c] : ca) {
    na += c * c;
    auto it = cb.find(t);
    if (it != cb.end()) dotp += c * it->second;
  }
  for (const auto& [t, c] : cb) nb += c * c;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dotp / std::sqrt(na * nb);
}

}  // namespace detail

/// Default paraphraser: swaps canonical words for a synonym from the stub's
/// table and sometimes wraps the query in polite filler.
inline std::string synonym_paraphrase(std::string_view text, Rng& rng) {
  static const std::vector<std::string> prefixes = {"please", "hey", "quick question", "could you tell me"};
  static const std::vector<std::string> suffixes = {"thanks", "please", "asap"};
  const auto& variants = detail::variants_by_canonical();
  std::vector<std::string> words;
  for (auto& tok : tokenize(text)) {
    auto it = variants.find(tok);
    if (it != variants.end() && uniform_unit(rng) < 0.6) {
      words.push_back(it->second[uniform_index(rng, it->second.size())]);
    } else {
      words.push_back(std::move(tok));
    }
  }
  const double wrap = uniform_unit(rng);
  std::string out;
  if (wrap < 0.35) {
    out = prefixes[uniform_index(rng, prefixes.size())] + " " + detail::join(words);
  } else if (wrap < 0.6) {
    out = detail::join(words) + " " + suffixes[uniform_index(rng, suffixes.size())];
  } else {
    out = detail::join(words);
  }
  out.push_back('?');
  return out;
}

/// Largest count generate_base_queries can produce.
inline constexpr std::size_t kMaxBaseQueries = 37 * 37;

/// Synthetic standalone questions "<verb> <adjective> <object> <platform>?".
/// Slot words are chosen as (a, b, a+b, a+2b) mod 37 over the pairs (a, b),
/// so any two questions share at most one slot: their stub similarity stays
/// near 0.25 while paraphrases of one question stay above 0.7.
inline std::vector<std::string> generate_base_queries(std::size_t count, std::uint64_t seed) {
  constexpr std::size_t p = 37;
  static const std::array<std::string_view, p> verbs = {
      "draw",     "change",   "create",  "describe", "repair",    "display", "remove",   "start",
      "search",   "purchase", "sort",    "merge",    "parse",     "compress", "encrypt", "deploy",
      "benchmark", "profile", "serialize", "validate", "translate", "schedule", "index",  "visualize",
      "rotate",   "export",   "import",  "monitor",  "debug",     "clone",   "upload",   "download",
      "rename",   "convert",  "filter",  "format",   "install"};
  static const std::array<std::string_view, p> adjectives = {
      "red",       "large",   "tiny",     "quick",    "inexpensive", "nested",  "sparse",   "encrypted",
      "concurrent", "recursive", "immutable", "distributed", "temporary", "binary", "unicode", "hidden",
      "legacy",    "animated", "circular", "weighted", "blue",        "green",   "offline",  "shared",
      "static",    "yellow",  "purple",   "empty",    "broken",      "secure",  "public",   "private",
      "remote",    "local",   "frozen",   "mobile",   "dynamic"};
  static const std::array<std::string_view, p> objects = {
      "array",   "image",    "method",  "code",     "bug",      "film",     "automobile", "tree",
      "graph",   "matrix",   "table",   "file",     "string",   "queue",    "socket",     "database",
      "thread",  "widget",   "chart",   "circle",   "line",     "json",     "log",        "cookie",
      "token",   "histogram", "polygon", "spreadsheet", "calendar", "invoice", "playlist", "password",
      "camera",  "sensor",   "router",  "printer",  "keyboard"};
  static const std::array<std::string_view, p> platforms = {
      "python", "rust",   "java",    "linux",   "excel",      "postgres", "android",  "javascript",
      "docker", "windows", "golang", "kubernetes", "pandas",  "matlab",   "macos",    "react",
      "typescript", "kotlin", "swift", "ruby",  "perl",       "haskell",  "scala",    "bash",
      "powershell", "django", "flask", "spark", "hadoop",     "tensorflow", "pytorch", "unity",
      "arduino", "wordpress", "azure", "firebase", "blender"};
  if (count > kMaxBaseQueries) {
    throw Error(ErrorCode::InvalidArgument, "at most " + std::to_string(kMaxBaseQueries) + " base queries, asked for " +
                                                std::to_string(count));
  }
  std::vector<std::size_t> codes(p * p);
  std::iota(codes.begin(), codes.end(), std::size_t{0});
  Rng rng(seed);
  fisher_yates(codes, rng);
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t a = codes[i] / p, b = codes[i] % p;
    std::string q(verbs[a]);
    q += ' ';
    q += adjectives[b];
    q += ' ';
    q += objects[(a + b) % p];
    q += ' ';
    q += platforms[(a + 2 * b) % p];
    q.push_back('?');
    out.push_back(std::move(q));
  }
  return out;
}

/// Stream of `length` queries in which each item after the first repeats an
/// earlier unique item (as a paraphrase) with probability `duplicate_ratio`.
/// Unique items consume `base_queries` in order; once they run out, every
/// further item is a repeat.
inline std::vector<StreamItem> generate_workload(std::span<const std::string> base_queries, double duplicate_ratio,
                                                 std::size_t length, std::uint64_t seed,
                                                 const Paraphraser& paraphraser = synonym_paraphrase) {
  if (base_queries.empty()) throw Error(ErrorCode::EmptyBase, "no base queries");
  if (!(duplicate_ratio >= 0.0 && duplicate_ratio <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "duplicate_ratio must be in [0, 1]");
  }
  Rng rng(seed);
  std::vector<StreamItem> stream;
  std::vector<std::size_t> uniques;  // stream indices of unique items
  std::size_t next_base = 0;
  stream.reserve(length);
  for (std::size_t i = 0; i < length; ++i) {
    const double draw = uniform_unit(rng);
    const bool exhausted = next_base >= base_queries.size();
    const bool repeat = !uniques.empty() && (exhausted || draw < duplicate_ratio);
    if (repeat) {
      const auto root = uniques[uniform_index(rng, uniques.size())];
      stream.push_back({paraphraser(stream[root].query, rng), {}, root});
    } else {
      uniques.push_back(stream.size());
      stream.push_back({base_queries[next_base++], {}, std::nullopt});
    }
  }
  return stream;
}

/// Labeled pairs for threshold tuning or adapter training: each base query
/// against a paraphrase of itself (duplicate) and against another base
/// query (non-duplicate).
inline std::vector<LabeledPair> generate_labeled_pairs(std::span<const std::string> base_queries, std::uint64_t seed,
                                                       const Paraphraser& paraphraser = synonym_paraphrase) {
  if (base_queries.size() < 2) throw Error(ErrorCode::EmptyBase, "need at least two base queries");
  Rng rng(seed);
  std::vector<LabeledPair> out;
  for (std::size_t i = 0; i < base_queries.size(); ++i) {
    out.push_back({base_queries[i], paraphraser(base_queries[i], rng), true});
    std::size_t j = uniform_index(rng, base_queries.size() - 1);
    if (j >= i) ++j;
    out.push_back({base_queries[i], paraphraser(base_queries[j], rng), false});
  }
  return out;
}

/// Cleanly separable pairs: a duplicate is the base question with synonyms
/// swapped and one or two filler words appended, and a non-duplicate pairs
/// it with another base question sharing no token.
inline std::vector<LabeledPair> generate_separable_pairs(std::span<const std::string> base_queries,
                                                         std::uint64_t seed) {
  static const std::vector<std::string> fillers = {"please", "thanks", "now", "today", "again", "kindly"};
  if (base_queries.size() < 2) throw Error(ErrorCode::EmptyBase, "need at least two base queries");
  const auto& variants = detail::variants_by_canonical();
  std::vector<std::set<std::string>> tokens;
  for (const auto& q : base_queries) {
    std::set<std::string> t;
    for (const auto& tok : tokenize(q)) t.insert(canonical_token(tok));
    tokens.push_back(std::move(t));
  }
  auto shared = [&](std::size_t i, std::size_t j) {
    std::size_t n = 0;
    for (const auto& t : tokens[i]) n += tokens[j].count(t);
    return n;
  };

  Rng rng(seed);
  std::vector<LabeledPair> out;
  for (std::size_t i = 0; i < base_queries.size(); ++i) {
    std::vector<std::string> words;
    for (auto& tok : tokenize(base_queries[i])) {
      auto it = variants.find(tok);
      if (it != variants.end() && uniform_unit(rng) < 0.5) {
        words.push_back(it->second[uniform_index(rng, it->second.size())]);
      } else {
        words.push_back(std::move(tok));
      }
    }
    std::vector<std::string> pool = fillers;
    fisher_yates(pool, rng);
    const auto extra = 1 + uniform_index(rng, 2);
    for (std::size_t k = 0; k < extra; ++k) words.push_back(pool[k]);
    out.push_back({base_queries[i], detail::join(words) + "?", true});

    std::size_t best = 0, best_shared = SIZE_MAX;
    for (int attempt = 0; attempt < 64 && best_shared != 0; ++attempt) {
      std::size_t j = uniform_index(rng, base_queries.size() - 1);
      if (j >= i) ++j;
      if (const auto s = shared(i, j); s < best_shared) {
        best = j;
        best_shared = s;
      }
    }
    out.push_back({base_queries[i], base_queries[best], false});
  }
  return out;
}

struct SyntheticFlPairs {
  std::vector<LabeledPair> train;
  std::vector<LabeledPair> heldout;
};

/// Separable training and held-out pairs drawn from disjoint base questions.
inline SyntheticFlPairs synthetic_fl_pairs(std::size_t train_bases, std::size_t heldout_bases, std::uint64_t seed) {
  const auto base = generate_base_queries(train_bases + heldout_bases, seed);
  const std::span<const std::string> all(base);
  SyntheticFlPairs out;
  out.train = generate_separable_pairs(all.first(train_bases), seed + 1);
  out.heldout = generate_separable_pairs(all.subspan(train_bases), seed + 2);
  return out;
}

// ---------------------------------------------------------------------------
// Contextual conversations

/// Record of a contextual dataset. Seeds are inserted into the cache with
/// their parent chain as history; probes are looked up under theirs.
/// Context records only exist to be someone's parent.
struct ContextualRecord {
  enum class Role { Seed, Probe, Context };
  std::uint64_t id = 0;
  std::string query;
  std::string response;
  std::optional<std::uint64_t> parent_id;
  std::optional<std::uint64_t> duplicate_of;  // seed id the probe should hit
  Role role = Role::Seed;
};

inline std::string_view to_string(ContextualRecord::Role r) {
  switch (r) {
    case ContextualRecord::Role::Seed: return "seed";
    case ContextualRecord::Role::Probe: return "probe";
    case ContextualRecord::Role::Context: return "context";
  }
  return "?";
}

/// Parent chain of a record as query texts, oldest first.
inline std::vector<std::string> history_of(std::span<const ContextualRecord> records, const ContextualRecord& r) {
  std::unordered_map<std::uint64_t, const ContextualRecord*> by_id;
  for (const auto& x : records) by_id[x.id] = &x;
  std::vector<std::string> chain;
  auto pid = r.parent_id;
  while (pid) {
    auto it = by_id.find(*pid);
    if (it == by_id.end()) throw Error(ErrorCode::ParseError, "record " + std::to_string(r.id) + " has unknown parent");
    chain.push_back(it->second->query);
    pid = it->second->parent_id;
    if (chain.size() > records.size()) throw Error(ErrorCode::ParseError, "parent cycle");
  }
  return {chain.rbegin(), chain.rend()};
}

/// Follow-up questions that only make sense after an earlier turn.
inline const std::vector<std::string>& follow_up_templates() {
  static const std::vector<std::string> t = {
      "Change the color to red", "Make it faster", "Add comments to it", "Now do it in java",
      "Explain that again more simply", "Make it larger", "Add error handling", "Write unit tests for it",
      "Convert it to a class", "Remove the last step", "Use fewer lines", "Show the output",
      "Translate the answer to french", "Give me a shorter version", "What is the complexity of that",
      "Add a legend", "Rename the variables", "Make it thread safe", "Draw it with dashed strokes",
      "Save the result to disk", "Why does that work", "Undo the previous change", "Add logging",
      "Sort the result descending", "Format it as a table"};
  return t;
}

/// The four-query scenario: Q1/Q2 form a cached conversation; Q3/Q4 reuse
/// Q2's wording under a different first turn.
struct BackgroundScenario {
  static constexpr std::string_view q1 = "Draw a line in Python?";
  static constexpr std::string_view q2 = "Change the color to red";
  static constexpr std::string_view q3 = "Draw a circle?";
  static constexpr std::string_view q4 = "Change the color to red";
};

/// Builds `conversations` two-turn seed conversations (standalone question +
/// follow-up) and, for each, one probe reusing the follow-up under a
/// paraphrase of the right first turn and one under an unrelated first turn.
/// The Background scenario is always conversation 0 with Q3/Q4 as its
/// wrong-context probe.
inline std::vector<ContextualRecord> build_contextual_suite(std::size_t conversations, std::uint64_t seed) {
  using Role = ContextualRecord::Role;
  if (conversations == 0) throw Error(ErrorCode::InvalidArgument, "need at least one conversation");
  auto parents = generate_base_queries(2 * conversations, seed ^ 0xc0ffeeULL);
  // Keep the scenario's own questions apart from generated ones.
  parents[0] = std::string(BackgroundScenario::q1);
  parents[conversations] = std::string(BackgroundScenario::q3);
  Rng rng(seed);
  const auto& templates = follow_up_templates();

  std::vector<ContextualRecord> out;
  std::uint64_t next = 1;
  std::vector<std::uint64_t> follow_ids(conversations);
  std::vector<std::size_t> template_of(conversations);
  for (std::size_t c = 0; c < conversations; ++c) {
    template_of[c] = c == 0 ? 0 : c % templates.size();
    const auto p = next++;
    out.push_back({p, parents[c], "answer: " + parents[c], std::nullopt, std::nullopt, Role::Seed});
    const auto f = next++;
    const auto& fq = templates[template_of[c]];
    out.push_back({f, fq, "answer: " + fq + " (after: " + parents[c] + ")", p, std::nullopt, Role::Seed});
    follow_ids[c] = f;
  }
  for (std::size_t c = 0; c < conversations; ++c) {
    const auto& fq = templates[template_of[c]];
    // Right context: paraphrased first turn, same follow-up.
    const auto ctx_ok = next++;
    out.push_back({ctx_ok, c == 0 ? std::string(BackgroundScenario::q1) : synonym_paraphrase(parents[c], rng), "",
                   std::nullopt, std::nullopt, Role::Context});
    out.push_back({next++, fq, "", ctx_ok, follow_ids[c], Role::Probe});
    // Wrong context: an unrelated first turn, same follow-up.
    const auto ctx_bad = next++;
    out.push_back({ctx_bad, parents[conversations + c], "", std::nullopt, std::nullopt, Role::Context});
    out.push_back({next++, fq, "", ctx_bad, std::nullopt, Role::Probe});
  }
  return out;
}

}  // namespace semcache
