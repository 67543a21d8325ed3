#pragma once

#include "normlab/common.hpp"

namespace normlab {

// Row-major C (m x n) = A (m x k) * B (k x n), optionally accumulating into
// the existing contents of C. Each output element is a single sequential
// dot product, so results do not depend on blocking.
void gemm(int m, int k, int n, const real* a, int lda, const real* b, int ldb,
          real* c, int ldc, bool accumulate);

// Row-major C (m x p) = A (m x n) * B(p x n)^T, i.e. C[i][r] = dot of row i
// of A with row r of B. Optionally accumulates.
void gemm_abt(int m, int n, int p, const real* a, int lda, const real* b,
              int ldb, real* c, int ldc, bool accumulate);

}  // namespace normlab
