#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "normlab/common.hpp"
#include "normlab/errors.hpp"

namespace normlab {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw Error("checkpoint: truncated stream");
  return v;
}

inline void write_vec(std::ostream& os, const std::vector<real>& v) {
  write_u64(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(real)));
}

inline void read_vec(std::istream& is, std::vector<real>& v) {
  const std::uint64_t n = read_u64(is);
  if (n != v.size())
    throw Error("checkpoint: buffer size mismatch (expected " +
                std::to_string(v.size()) + ", found " + std::to_string(n) + ")");
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(real)));
  if (!is) throw Error("checkpoint: truncated stream");
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw Error("checkpoint: truncated stream");
  return s;
}

}  // namespace normlab
