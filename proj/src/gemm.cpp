#include "gradeshi/gemm.hpp"

#include <algorithm>
#include <vector>

#include "gradeshi/parallel.hpp"

namespace gradeshi {
namespace {

constexpr std::size_t kRows = 4;

template <typename T>
constexpr std::size_t kCols = 128 / sizeof(T);

// Full kRows x kCols tile against a packed (k x kCols) panel of B.
template <typename T>
inline void tile_full(std::size_t k, const T* a, std::size_t lda, const T* panel, T* c, std::size_t ldc,
                      bool accumulate) {
    constexpr std::size_t nc = kCols<T>;
    T acc[kRows][nc] = {};
    const T* a0 = a;
    const T* a1 = a + lda;
    const T* a2 = a + 2 * lda;
    const T* a3 = a + 3 * lda;
    for (std::size_t p = 0; p < k; ++p) {
        const T* brow = panel + p * nc;
        const T v0 = a0[p];
        const T v1 = a1[p];
        const T v2 = a2[p];
        const T v3 = a3[p];
        for (std::size_t j = 0; j < nc; ++j) {
            acc[0][j] += v0 * brow[j];
            acc[1][j] += v1 * brow[j];
            acc[2][j] += v2 * brow[j];
            acc[3][j] += v3 * brow[j];
        }
    }
    for (std::size_t r = 0; r < kRows; ++r) {
        T* crow = c + r * ldc;
        if (accumulate) {
            for (std::size_t j = 0; j < nc; ++j) {
                crow[j] += acc[r][j];
            }
        } else {
            for (std::size_t j = 0; j < nc; ++j) {
                crow[j] = acc[r][j];
            }
        }
    }
}

// Any tile up to kRows x kCols; same reduction order as tile_full.
template <typename T>
inline void tile_edge(std::size_t rows, std::size_t cols, std::size_t k, const T* a, std::size_t lda, const T* panel,
                      T* c, std::size_t ldc, bool accumulate) {
    constexpr std::size_t nc = kCols<T>;
    for (std::size_t r = 0; r < rows; ++r) {
        T acc[nc] = {};
        const T* arow = a + r * lda;
        for (std::size_t p = 0; p < k; ++p) {
            const T v = arow[p];
            const T* brow = panel + p * nc;
            for (std::size_t j = 0; j < nc; ++j) {
                acc[j] += v * brow[j];
            }
        }
        T* crow = c + r * ldc;
        for (std::size_t j = 0; j < cols; ++j) {
            crow[j] = accumulate ? crow[j] + acc[j] : acc[j];
        }
    }
}

template <typename T>
void gemm_rows(std::size_t row_begin, std::size_t row_end, std::size_t n, std::size_t k, const T* a, std::size_t lda,
               const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
    constexpr std::size_t nc = kCols<T>;
    std::vector<T> panel(k * nc);
    for (std::size_t j0 = 0; j0 < n; j0 += nc) {
        const std::size_t cols = std::min(nc, n - j0);
        for (std::size_t p = 0; p < k; ++p) {
            const T* src = b + p * ldb + j0;
            T* dst = panel.data() + p * nc;
            std::copy(src, src + cols, dst);
            std::fill(dst + cols, dst + nc, T(0));
        }
        std::size_t i = row_begin;
        if (cols == nc) {
            for (; i + kRows <= row_end; i += kRows) {
                tile_full(k, a + i * lda, lda, panel.data(), c + i * ldc + j0, ldc, accumulate);
            }
        }
        for (; i < row_end; i += kRows) {
            const std::size_t rows = std::min(kRows, row_end - i);
            tile_edge(rows, cols, k, a + i * lda, lda, panel.data(), c + i * ldc + j0, ldc, accumulate);
        }
    }
}

} // namespace

template <std::floating_point T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
          T* c, std::size_t ldc, bool accumulate) {
    if (m == 0 || n == 0) {
        return;
    }
    if (k == 0) {
        if (!accumulate) {
            for (std::size_t i = 0; i < m; ++i) {
                std::fill(c + i * ldc, c + i * ldc + n, T(0));
            }
        }
        return;
    }
    // Chunks are aligned to whole tiles so the same rows take the same path
    // whatever the worker count.
    const std::size_t tiles = (m + kRows - 1) / kRows;
    const std::size_t work_per_tile = std::max<std::size_t>(1, n * k * kRows);
    const std::size_t min_tiles = std::max<std::size_t>(1, (1u << 18) / work_per_tile);
    parallel_for(tiles, min_tiles, [&](std::size_t t0, std::size_t t1) {
        gemm_rows(t0 * kRows, std::min(m, t1 * kRows), n, k, a, lda, b, ldb, c, ldc, accumulate);
    });
}

template <std::floating_point T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
    constexpr std::size_t block = 32;
    for (std::size_t i0 = 0; i0 < rows; i0 += block) {
        const std::size_t i1 = std::min(rows, i0 + block);
        for (std::size_t j0 = 0; j0 < cols; j0 += block) {
            const std::size_t j1 = std::min(cols, j0 + block);
            for (std::size_t i = i0; i < i1; ++i) {
                for (std::size_t j = j0; j < j1; ++j) {
                    dst[j * rows + i] = src[i * cols + j];
                }
            }
        }
    }
}

template void gemm<float>(std::size_t, std::size_t, std::size_t, const float*, std::size_t, const float*,
                          std::size_t, float*, std::size_t, bool);
template void gemm<double>(std::size_t, std::size_t, std::size_t, const double*, std::size_t, const double*,
                           std::size_t, double*, std::size_t, bool);
template void transpose<float>(std::size_t, std::size_t, const float*, float*);
template void transpose<double>(std::size_t, std::size_t, const double*, double*);

} // namespace gradeshi
