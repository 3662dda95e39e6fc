#pragma once

#include <string>
#include <string_view>

#include "semcache/error.hpp"

namespace semcache {

/// "http://host:port/base/path" split into the part httplib::Client wants and
/// the path prefix.
struct HttpTarget {
  std::string origin;  // scheme://host[:port]
  std::string path;    // always starts with '/'
};

inline HttpTarget split_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) {
    throw Error(ErrorCode::InvalidArgument, "URL has no scheme: " + std::string(url));
  }
  const auto path_start = url.find('/', scheme_end + 3);
  HttpTarget t;
  if (path_start == std::string_view::npos) {
    t.origin = std::string(url);
    t.path = "/";
  } else {
    t.origin = std::string(url.substr(0, path_start));
    t.path = std::string(url.substr(path_start));
  }
  return t;
}

/// Joins a base path and a suffix with exactly one '/' between them.
inline std::string join_path(std::string_view base, std::string_view suffix) {
  std::string out(base);
  while (!out.empty() && out.back() == '/') out.pop_back();
  if (suffix.empty() || suffix.front() != '/') out.push_back('/');
  out.append(suffix);
  return out;
}

}  // namespace semcache
