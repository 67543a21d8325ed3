#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>

namespace normlab {

#ifdef NORMLAB_REAL_FLOAT
using real = float;
#else
using real = double;
#endif

// Reductions always accumulate in double, regardless of the storage scalar.
using acc_t = double;

inline constexpr double kDefaultEps = 1e-5;   // inside sqrt(var + eps)
inline constexpr double kWsEps = 1e-10;       // weight standardization norm guard
inline constexpr double kDivisorGuard = std::numeric_limits<double>::epsilon();

}  // namespace normlab
