#pragma once

#include <charconv>
#include <cstdio>
#include <string>
#include <string_view>
#include <system_error>

namespace sdkprint::text {

// Locale-independent number formatting (to_chars never consults the locale).
inline std::string fixed(double v, int precision) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, precision);
  if (ec != std::errc{}) return "nan";
  return {buf, ptr};
}

// Shortest representation that round-trips.
inline std::string shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) return "nan";
  return {buf, ptr};
}

inline std::string csv_quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

// ".985 +- .022" style cell, leading zero dropped.
inline std::string mean_std_cell(double mean, double sd) {
  auto trim = [](std::string s) {
    if (s.starts_with("0.")) s.erase(0, 1);
    return s;
  };
  return trim(fixed(mean, 3)) + " ± " + trim(fixed(sd, 3));
}

}  // namespace sdkprint::text
