#pragma once

#include <cstddef>

namespace cloudmask::detail {

// C[i][j] = (accumulate ? C[i][j] : 0) + sum_k A(i,k) * B[k][j], with the k
// terms added strictly in increasing order for every element. A(i,k) lives
// at a[i * a_row + k * a_col]; B and C are row-major with leading dimensions
// ldb and ldc. Fixed summation order makes every output element independent
// of M, N and the blocking, which the inference equivalence relies on.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a,
          std::ptrdiff_t a_row, std::ptrdiff_t a_col, const double* b,
          std::size_t ldb, double* c, std::size_t ldc, bool accumulate);

}  // namespace cloudmask::detail
