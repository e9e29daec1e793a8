// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma;
// nothing here may run before the dispatcher has checked the CPU.

#include "kernels_impl.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

namespace fragmix::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    __m256d acc2 = _mm256_setzero_pd();
    __m256d acc3 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
        acc2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8), _mm256_loadu_pd(b + i + 8), acc2);
        acc3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12), _mm256_loadu_pd(b + i + 12), acc3);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    }
    double s = hsum(_mm256_add_pd(_mm256_add_pd(acc0, acc1), _mm256_add_pd(acc2, acc3)));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
        _mm256_storeu_pd(y + i + 4, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
    }
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

// 4 x 8 register tile of C, k-loop innermost.
inline void tile_4x8(std::size_t k, const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                     std::size_t ldc) {
    __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
    __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
    __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
    __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
        const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
        __m256d av = _mm256_broadcast_sd(a + p);
        c00 = _mm256_fmadd_pd(av, b0, c00);
        c01 = _mm256_fmadd_pd(av, b1, c01);
        av = _mm256_broadcast_sd(a + lda + p);
        c10 = _mm256_fmadd_pd(av, b0, c10);
        c11 = _mm256_fmadd_pd(av, b1, c11);
        av = _mm256_broadcast_sd(a + 2 * lda + p);
        c20 = _mm256_fmadd_pd(av, b0, c20);
        c21 = _mm256_fmadd_pd(av, b1, c21);
        av = _mm256_broadcast_sd(a + 3 * lda + p);
        c30 = _mm256_fmadd_pd(av, b0, c30);
        c31 = _mm256_fmadd_pd(av, b1, c31);
    }
    auto acc = [](double* dst, __m256d v) { _mm256_storeu_pd(dst, _mm256_add_pd(_mm256_loadu_pd(dst), v)); };
    acc(c, c00);
    acc(c + 4, c01);
    acc(c + ldc, c10);
    acc(c + ldc + 4, c11);
    acc(c + 2 * ldc, c20);
    acc(c + 2 * ldc + 4, c21);
    acc(c + 3 * ldc, c30);
    acc(c + 3 * ldc + 4, c31);
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
    const std::size_t n8 = n - n % 8;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        for (std::size_t j = 0; j < n8; j += 8) tile_4x8(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
    }
    // Leftover rows over the tiled columns.
    for (; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) axpy(a[i * lda + p], b + p * ldb, c + i * ldc, n8);
    }
    // Leftover columns for every row.
    if (n8 < n) {
        for (std::size_t r = 0; r < m; ++r) {
            double* cr = c + r * ldc;
            for (std::size_t p = 0; p < k; ++p) {
                const double arp = a[r * lda + p];
                const double* bp = b + p * ldb;
                for (std::size_t j = n8; j < n; ++j) cr[j] += arp * bp[j];
            }
        }
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
    const std::size_t k4 = k - k % 4;
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * lda;
        double* ci = c + i * ldc;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const double* b0 = b + j * ldb;
            const double* b1 = b0 + ldb;
            const double* b2 = b1 + ldb;
            const double* b3 = b2 + ldb;
            __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
            __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
            for (std::size_t p = 0; p < k4; p += 4) {
                const __m256d av = _mm256_loadu_pd(ai + p);
                s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
                s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
                s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
                s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
            }
            double d0 = hsum(s0), d1 = hsum(s1), d2 = hsum(s2), d3 = hsum(s3);
            for (std::size_t p = k4; p < k; ++p) {
                d0 += ai[p] * b0[p];
                d1 += ai[p] * b1[p];
                d2 += ai[p] * b2[p];
                d3 += ai[p] * b3[p];
            }
            ci[j] += d0;
            ci[j + 1] += d1;
            ci[j + 2] += d2;
            ci[j + 3] += d3;
        }
        for (; j < n; ++j) ci[j] += dot(ai, b + j * ldb, k);
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * lda;
        const double* bp = b + p * ldb;
        for (std::size_t i = 0; i < m; ++i) axpy(ap[i], bp, c + i * ldc, n);
    }
}

const KernelTable kTable{Isa::avx2, &dot, &axpy, &gemm_nn, &gemm_nt, &gemm_tn};

}  // namespace

}  // namespace fragmix::kernels::avx2

namespace fragmix::kernels {
const KernelTable* avx2_table_compiled() noexcept { return &avx2::kTable; }
}  // namespace fragmix::kernels

#else

namespace fragmix::kernels {
const KernelTable* avx2_table_compiled() noexcept { return nullptr; }
}  // namespace fragmix::kernels

#endif
