#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <system_error>

#include "culab/errors.hpp"

namespace culab::textio {

// Shortest round-trip decimal representation; parse(format(x)) == x bit-exactly.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline double parse_double(const std::string& tok, const std::string& context) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError(context + ": bad number '" + tok + "'");
  }
  return v;
}

// FNV-1a over raw bytes, for config/data/checkpoint fingerprints.
inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t seed = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

}  // namespace culab::textio
