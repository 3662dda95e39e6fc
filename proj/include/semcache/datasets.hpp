#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "semcache/adapter.hpp"
#include "semcache/error.hpp"
#include "semcache/threshold.hpp"
#include "semcache/workload.hpp"

namespace semcache {

namespace detail {

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  return out;
}

inline std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

}  // namespace detail

/// JSONL, one {"q1": ..., "q2": ..., "duplicate": bool} per line. Blank
/// lines are skipped.
inline std::vector<LabeledPair> parse_pairs_jsonl(std::istream& in, const std::string& source = "<input>") {
  std::vector<LabeledPair> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      LabeledPair p{j.at("q1").get<std::string>(), j.at("q2").get<std::string>(), j.at("duplicate").get<bool>()};
      if (trim(p.q1).empty() || trim(p.q2).empty()) {
        throw Error(ErrorCode::ParseError, source + ":" + std::to_string(n) + ": empty query");
      }
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<LabeledPair> read_pairs_jsonl(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_pairs_jsonl(in, path.string());
}

inline void write_pairs_jsonl(const std::filesystem::path& path, std::span<const LabeledPair> pairs) {
  auto out = detail::open_output(path);
  for (const auto& p : pairs) out << nlohmann::json{{"q1", p.q1}, {"q2", p.q2}, {"duplicate", p.duplicate}}.dump() << '\n';
}

/// "similarity,duplicate" per line; duplicate is 1/0 or true/false. A first
/// line that does not parse as a number is taken as a header.
inline std::vector<ScoredPair> parse_scored_csv(std::istream& in, const std::string& source = "<input>") {
  std::vector<ScoredPair> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error(ErrorCode::ParseError, source + ":" + std::to_string(n) + ": expected 2 columns");
    const std::string sim_s(trim(std::string_view(line).substr(0, comma)));
    const std::string dup_s(trim(std::string_view(line).substr(comma + 1)));
    double sim;
    try {
      std::size_t used = 0;
      sim = std::stod(sim_s, &used);
      if (used != sim_s.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      if (n == 1 && out.empty()) continue;
      throw Error(ErrorCode::ParseError, source + ":" + std::to_string(n) + ": bad similarity '" + sim_s + "'");
    }
    bool dup;
    if (dup_s == "1" || dup_s == "true") {
      dup = true;
    } else if (dup_s == "0" || dup_s == "false") {
      dup = false;
    } else {
      throw Error(ErrorCode::ParseError, source + ":" + std::to_string(n) + ": bad label '" + dup_s + "'");
    }
    out.push_back({sim, dup});
  }
  return out;
}

inline std::vector<ScoredPair> read_scored_csv(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_scored_csv(in, path.string());
}

/// Plain text, one query per non-blank line.
inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) out.emplace_back(trim(line));
  }
  return out;
}

/// Contextual dataset JSONL: {"id", "query", "response", "parent_id",
/// "duplicate_of", "role"}. "role" is optional: without it, records with a
/// response are seeds and the rest are probes, unless some record names
/// them as parent and they have no response (context).
inline std::vector<ContextualRecord> parse_contextual_jsonl(std::istream& in, const std::string& source = "<input>") {
  using Role = ContextualRecord::Role;
  std::vector<ContextualRecord> out;
  std::vector<bool> explicit_role;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ContextualRecord r;
      r.id = j.at("id").get<std::uint64_t>();
      r.query = j.at("query").get<std::string>();
      r.response = j.value("response", std::string());
      if (j.contains("parent_id") && !j["parent_id"].is_null()) r.parent_id = j["parent_id"].get<std::uint64_t>();
      if (j.contains("duplicate_of") && !j["duplicate_of"].is_null()) r.duplicate_of = j["duplicate_of"].get<std::uint64_t>();
      bool has_role = j.contains("role");
      if (has_role) {
        const auto role = j["role"].get<std::string>();
        if (role == "seed") r.role = Role::Seed;
        else if (role == "probe") r.role = Role::Probe;
        else if (role == "context") r.role = Role::Context;
        else throw Error(ErrorCode::ParseError, source + ":" + std::to_string(n) + ": unknown role '" + role + "'");
      } else {
        r.role = r.response.empty() ? Role::Probe : Role::Seed;
      }
      out.push_back(std::move(r));
      explicit_role.push_back(has_role);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (explicit_role[i] || !out[i].response.empty()) continue;
    const bool is_parent = std::any_of(out.begin(), out.end(), [&](const ContextualRecord& r) {
      return r.parent_id && *r.parent_id == out[i].id;
    });
    if (is_parent) out[i].role = Role::Context;
  }
  return out;
}

inline std::vector<ContextualRecord> read_contextual_jsonl(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_contextual_jsonl(in, path.string());
}

inline void write_contextual_jsonl(const std::filesystem::path& path, std::span<const ContextualRecord> records) {
  auto out = detail::open_output(path);
  for (const auto& r : records) {
    nlohmann::json j{{"id", r.id}, {"query", r.query}, {"response", r.response}};
    j["parent_id"] = r.parent_id ? nlohmann::json(*r.parent_id) : nlohmann::json(nullptr);
    j["duplicate_of"] = r.duplicate_of ? nlohmann::json(*r.duplicate_of) : nlohmann::json(nullptr);
    j["role"] = std::string(to_string(r.role));
    out << j.dump() << '\n';
  }
}

}  // namespace semcache
