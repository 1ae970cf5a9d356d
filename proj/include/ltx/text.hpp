#pragma once

#include <charconv>
#include <string>
#include <string_view>
#include <vector>

#include "ltx/errors.hpp"

namespace ltx::text {

// Shortest decimal that round-trips the exact binary value; keeps manifests
// and CSV reports bit-faithful when re-parsed.
template <typename F>
std::string fmt_float(F v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw contract_error("float formatting failed");
  return std::string(buf, p);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' ||
                        s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  size_t start = 0;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline double parse_double(std::string_view s, const std::string& what) {
  s = trim(s);
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw config_error("not a number in " + what + ": \"" + std::string(s) +
                       "\"");
  return v;
}

inline int64_t parse_int(std::string_view s, const std::string& what) {
  s = trim(s);
  int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw config_error("not an integer in " + what + ": \"" + std::string(s) +
                       "\"");
  return v;
}

inline bool parse_bool(std::string_view s, const std::string& what) {
  s = trim(s);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw config_error("not a boolean in " + what + ": \"" + std::string(s) +
                     "\"");
}

}  // namespace ltx::text
