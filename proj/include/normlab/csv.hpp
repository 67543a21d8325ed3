#pragma once

#include <cstdio>
#include <string>

namespace normlab {

// All floating-point CSV fields use this format: %.9g, nine significant
// digits, so identical runs produce byte-identical files.
inline std::string format_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace normlab
