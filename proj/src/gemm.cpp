#include "gemm.hpp"

#include <cstring>

namespace cloudmask::detail {
namespace {

// Eight doubles; one AVX-512 register, or emulated on narrower targets.
typedef double Lane8 __attribute__((vector_size(64)));

constexpr std::size_t kCols = 8;
constexpr std::size_t kRows = 8;

template <std::size_t Rows>
inline void vector_block(std::size_t k, const double* a, std::ptrdiff_t a_row,
                         std::ptrdiff_t a_col, const double* b, std::size_t ldb,
                         double* c, std::size_t ldc, bool accumulate) {
  Lane8 r[Rows];
  for (std::size_t i = 0; i < Rows; ++i) {
    if (accumulate) {
      std::memcpy(&r[i], c + i * ldc, sizeof(Lane8));
    } else {
      r[i] = Lane8{};
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    Lane8 bv;
    std::memcpy(&bv, b + p * ldb, sizeof(Lane8));
    const double* ap = a + static_cast<std::ptrdiff_t>(p) * a_col;
    for (std::size_t i = 0; i < Rows; ++i) {
      const Lane8 av = ap[static_cast<std::ptrdiff_t>(i) * a_row] - Lane8{};
      r[i] += av * bv;
    }
  }
  for (std::size_t i = 0; i < Rows; ++i) {
    std::memcpy(c + i * ldc, &r[i], sizeof(Lane8));
  }
}

inline void vector_rows(std::size_t rows, std::size_t k, const double* a,
                        std::ptrdiff_t a_row, std::ptrdiff_t a_col,
                        const double* b, std::size_t ldb, double* c,
                        std::size_t ldc, bool accumulate) {
  switch (rows) {
    case 8: return vector_block<8>(k, a, a_row, a_col, b, ldb, c, ldc, accumulate);
    case 7: return vector_block<7>(k, a, a_row, a_col, b, ldb, c, ldc, accumulate);
    case 6: return vector_block<6>(k, a, a_row, a_col, b, ldb, c, ldc, accumulate);
    case 5: return vector_block<5>(k, a, a_row, a_col, b, ldb, c, ldc, accumulate);
    case 4: return vector_block<4>(k, a, a_row, a_col, b, ldb, c, ldc, accumulate);
    case 3: return vector_block<3>(k, a, a_row, a_col, b, ldb, c, ldc, accumulate);
    case 2: return vector_block<2>(k, a, a_row, a_col, b, ldb, c, ldc, accumulate);
    default: return vector_block<1>(k, a, a_row, a_col, b, ldb, c, ldc, accumulate);
  }
}

inline void scalar_block(std::size_t rows, std::size_t cols, std::size_t k,
                         const double* a, std::ptrdiff_t a_row,
                         std::ptrdiff_t a_col, const double* b, std::size_t ldb,
                         double* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      double r = accumulate ? c[i * ldc + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        r += a[static_cast<std::ptrdiff_t>(i) * a_row +
               static_cast<std::ptrdiff_t>(p) * a_col] *
             b[p * ldb + j];
      }
      c[i * ldc + j] = r;
    }
  }
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a,
          std::ptrdiff_t a_row, std::ptrdiff_t a_col, const double* b,
          std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i0 = 0; i0 < m; i0 += kRows) {
    const std::size_t rows = (m - i0 < kRows) ? m - i0 : kRows;
    const double* ai = a + static_cast<std::ptrdiff_t>(i0) * a_row;
    std::size_t j0 = 0;
    for (; j0 + kCols <= n; j0 += kCols) {
      vector_rows(rows, k, ai, a_row, a_col, b + j0, ldb, c + i0 * ldc + j0,
                  ldc, accumulate);
    }
    if (j0 < n) {
      scalar_block(rows, n - j0, k, ai, a_row, a_col, b + j0, ldb,
                   c + i0 * ldc + j0, ldc, accumulate);
    }
  }
}

}  // namespace cloudmask::detail
