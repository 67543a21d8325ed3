#include "normlab/gemm.hpp"

#include <cstring>

namespace normlab {

namespace {

// Register-tiled microkernel: an RT x CT accumulator block lives in
// registers across the whole k loop. Accumulation order per C element is the
// plain k sequence, so tiling never changes results.
constexpr int kRowTile = 8;
constexpr int kColTile = 16;

template <int RT, int CT>
inline void kernel_tile(int k, const real* a, int lda, const real* b, int ldb,
                        real* c, int ldc) {
  real acc[RT][CT];
  for (int r = 0; r < RT; ++r)
    for (int j = 0; j < CT; ++j) acc[r][j] = c[static_cast<std::size_t>(r) * ldc + j];
  for (int p = 0; p < k; ++p) {
    const real* brow = b + static_cast<std::size_t>(p) * ldb;
    for (int r = 0; r < RT; ++r) {
      const real w = a[static_cast<std::size_t>(r) * lda + p];
      for (int j = 0; j < CT; ++j) acc[r][j] += w * brow[j];
    }
  }
  for (int r = 0; r < RT; ++r)
    for (int j = 0; j < CT; ++j) c[static_cast<std::size_t>(r) * ldc + j] = acc[r][j];
}

// General edge tile (rows < RT or cols < CT).
inline void kernel_edge(int rows, int cols, int k, const real* a, int lda,
                        const real* b, int ldb, real* c, int ldc) {
  for (int r = 0; r < rows; ++r) {
    const real* ar = a + static_cast<std::size_t>(r) * lda;
    real* cr = c + static_cast<std::size_t>(r) * ldc;
    for (int p = 0; p < k; ++p) {
      const real w = ar[p];
      const real* brow = b + static_cast<std::size_t>(p) * ldb;
      for (int j = 0; j < cols; ++j) cr[j] += w * brow[j];
    }
  }
}

}  // namespace

void gemm(int m, int k, int n, const real* a, int lda, const real* b, int ldb,
          real* c, int ldc, bool accumulate) {
  if (!accumulate)
    for (int i = 0; i < m; ++i)
      std::memset(c + static_cast<std::size_t>(i) * ldc, 0,
                  static_cast<std::size_t>(n) * sizeof(real));

  int i = 0;
  for (; i + kRowTile <= m; i += kRowTile) {
    int j = 0;
    for (; j + kColTile <= n; j += kColTile)
      kernel_tile<kRowTile, kColTile>(k, a + static_cast<std::size_t>(i) * lda,
                                      lda, b + j, ldb,
                                      c + static_cast<std::size_t>(i) * ldc + j,
                                      ldc);
    if (j < n)
      kernel_edge(kRowTile, n - j, k, a + static_cast<std::size_t>(i) * lda,
                  lda, b + j, ldb,
                  c + static_cast<std::size_t>(i) * ldc + j, ldc);
  }
  if (i < m) {
    int j = 0;
    for (; j + kColTile <= n; j += kColTile)
      kernel_edge(m - i, kColTile, k, a + static_cast<std::size_t>(i) * lda,
                  lda, b + j, ldb,
                  c + static_cast<std::size_t>(i) * ldc + j, ldc);
    if (j < n)
      kernel_edge(m - i, n - j, k, a + static_cast<std::size_t>(i) * lda, lda,
                  b + j, ldb, c + static_cast<std::size_t>(i) * ldc + j, ldc);
  }
}

void gemm_abt(int m, int n, int p, const real* a, int lda, const real* b,
              int ldb, real* c, int ldc, bool accumulate) {
  // Each dot product runs over 8 independent accumulator lanes combined in a
  // fixed tree, so the loop vectorizes while results stay reproducible.
  for (int i = 0; i < m; ++i) {
    const real* ai = a + static_cast<std::size_t>(i) * lda;
    real* ci = c + static_cast<std::size_t>(i) * ldc;
    for (int r = 0; r < p; ++r) {
      const real* br = b + static_cast<std::size_t>(r) * ldb;
      acc_t lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
      int j = 0;
      for (; j + 8 <= n; j += 8)
        for (int l = 0; l < 8; ++l)
          lane[l] += static_cast<acc_t>(ai[j + l]) * br[j + l];
      acc_t tail = 0.0;
      for (; j < n; ++j) tail += static_cast<acc_t>(ai[j]) * br[j];
      const acc_t dot = ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
                        ((lane[4] + lane[5]) + (lane[6] + lane[7])) + tail;
      if (accumulate)
        ci[r] += static_cast<real>(dot);
      else
        ci[r] = static_cast<real>(dot);
    }
  }
}

}  // namespace normlab
