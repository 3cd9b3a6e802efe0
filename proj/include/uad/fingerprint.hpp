#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uad {

/// 64-bit FNV-1a content hash, hex encoded. Used as an integrity tag for
/// artifacts, datasets and model parameters; not cryptographic.
class Fnv1a {
 public:
  void update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      state_ ^= static_cast<std::uint64_t>(p[i]);
      state_ *= 0x100000001b3ull;
    }
  }

  void update(std::span<const double> values) {
    update(values.data(), values.size() * sizeof(double));
  }

  void update(const std::string& s) { update(s.data(), s.size()); }

  void update(std::uint64_t v) { update(&v, sizeof v); }

  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
    return std::string(buf);
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ull;
};

inline std::string fingerprint_doubles(std::span<const double> values) {
  Fnv1a h;
  h.update(values);
  return h.hex();
}

inline std::string fingerprint_string(const std::string& s) {
  Fnv1a h;
  h.update(s);
  return h.hex();
}

inline std::string fingerprint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("fingerprint_file: cannot open " + path);
  Fnv1a h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

}  // namespace uad
