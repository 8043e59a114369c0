// AVX2 + FMA variants. Compiled with -mavx2 -mfma; only reached through the
// dispatch table after a runtime CPU check.

#include "difformer/kernels.hpp"

#include <immintrin.h>

#include <algorithm>

namespace difformer::kernels::detail {

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

// exp(x) on 4 lanes: x = n ln2 + r, |r| <= ln2/2, degree-13 Taylor on r,
// 2^n assembled in the exponent field. Relative error ~1e-16 on [-708, 709].
inline __m256d exp4(__m256d x) {
    const __m256d lo_lim = _mm256_set1_pd(-708.0);
    const __m256d hi_lim = _mm256_set1_pd(709.0);
    const __m256d underflow = _mm256_cmp_pd(x, lo_lim, _CMP_LT_OQ);
    x = _mm256_min_pd(_mm256_max_pd(x, lo_lim), hi_lim);

    const __m256d log2e = _mm256_set1_pd(1.4426950408889634074);
    const __m256d ln2_hi = _mm256_set1_pd(6.93147180369123816490e-01);
    const __m256d ln2_lo = _mm256_set1_pd(1.90821492927058770002e-10);
    __m256d n = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                                _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256d r = _mm256_fnmadd_pd(n, ln2_hi, x);
    r = _mm256_fnmadd_pd(n, ln2_lo, r);

    static constexpr double kCoeff[] = {
        1.0 / 6227020800.0,  // 1/13!
        1.0 / 479001600.0,   // 1/12!
        1.0 / 39916800.0,    // 1/11!
        1.0 / 3628800.0,     // 1/10!
        1.0 / 362880.0,      // 1/9!
        1.0 / 40320.0,       // 1/8!
        1.0 / 5040.0,        // 1/7!
        1.0 / 720.0,         // 1/6!
        1.0 / 120.0,         // 1/5!
        1.0 / 24.0,          // 1/4!
        1.0 / 6.0,           // 1/3!
        0.5,                 // 1/2!
        1.0,                 // 1/1!
        1.0,                 // 1/0!
    };
    __m256d p = _mm256_set1_pd(kCoeff[0]);
    for (std::size_t i = 1; i < sizeof(kCoeff) / sizeof(kCoeff[0]); ++i) {
        p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(kCoeff[i]));
    }

    // n is integral and |n| <= 1023: adding 1.5 * 2^52 puts it in the low mantissa bits.
    const __m256d magic = _mm256_set1_pd(6755399441055744.0);
    __m256i ni = _mm256_sub_epi64(_mm256_castpd_si256(_mm256_add_pd(n, magic)),
                                  _mm256_castpd_si256(magic));
    __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(ni, _mm256_set1_epi64x(1023)), 52);
    __m256d scale = _mm256_castsi256_pd(bits);
    __m256d result = _mm256_mul_pd(p, scale);
    return _mm256_andnot_pd(underflow, result);
}

inline __m256d sigmoid4(__m256d x) {
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d neg = _mm256_sub_pd(_mm256_setzero_pd(), x);
    return _mm256_div_pd(one, _mm256_add_pd(one, exp4(neg)));
}

template <typename Op>
inline void map4(const double* x, double* y, std::size_t n, Op op) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, op(_mm256_loadu_pd(x + i)));
    if (i < n) {
        alignas(32) double buf[4] = {0.0, 0.0, 0.0, 0.0};
        std::copy(x + i, x + n, buf);
        _mm256_store_pd(buf, op(_mm256_load_pd(buf)));
        std::copy(buf, buf + (n - i), y + i);
    }
}

// C[4 x 8] += A[4 x k] * B[k x 8]
inline void micro_4x8(std::size_t k, const double* a, std::size_t lda,
                      const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    __m256d c00 = _mm256_loadu_pd(c), c01 = _mm256_loadu_pd(c + 4);
    __m256d c10 = _mm256_loadu_pd(c + ldc), c11 = _mm256_loadu_pd(c + ldc + 4);
    __m256d c20 = _mm256_loadu_pd(c + 2 * ldc), c21 = _mm256_loadu_pd(c + 2 * ldc + 4);
    __m256d c30 = _mm256_loadu_pd(c + 3 * ldc), c31 = _mm256_loadu_pd(c + 3 * ldc + 4);
    const double* a0 = a;
    const double* a1 = a + lda;
    const double* a2 = a + 2 * lda;
    const double* a3 = a + 3 * lda;
    for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * ldb;
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        __m256d av = _mm256_broadcast_sd(a0 + p);
        c00 = _mm256_fmadd_pd(av, b0, c00);
        c01 = _mm256_fmadd_pd(av, b1, c01);
        av = _mm256_broadcast_sd(a1 + p);
        c10 = _mm256_fmadd_pd(av, b0, c10);
        c11 = _mm256_fmadd_pd(av, b1, c11);
        av = _mm256_broadcast_sd(a2 + p);
        c20 = _mm256_fmadd_pd(av, b0, c20);
        c21 = _mm256_fmadd_pd(av, b1, c21);
        av = _mm256_broadcast_sd(a3 + p);
        c30 = _mm256_fmadd_pd(av, b0, c30);
        c31 = _mm256_fmadd_pd(av, b1, c31);
    }
    _mm256_storeu_pd(c, c00);
    _mm256_storeu_pd(c + 4, c01);
    _mm256_storeu_pd(c + ldc, c10);
    _mm256_storeu_pd(c + ldc + 4, c11);
    _mm256_storeu_pd(c + 2 * ldc, c20);
    _mm256_storeu_pd(c + 2 * ldc + 4, c21);
    _mm256_storeu_pd(c + 3 * ldc, c30);
    _mm256_storeu_pd(c + 3 * ldc + 4, c31);
}

// C[4 x 4] += A[4 x k] * B[k x 4]
inline void micro_4x4(std::size_t k, const double* a, std::size_t lda,
                      const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    __m256d c0 = _mm256_loadu_pd(c);
    __m256d c1 = _mm256_loadu_pd(c + ldc);
    __m256d c2 = _mm256_loadu_pd(c + 2 * ldc);
    __m256d c3 = _mm256_loadu_pd(c + 3 * ldc);
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d bv = _mm256_loadu_pd(b + p * ldb);
        c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p), bv, c0);
        c1 = _mm256_fmadd_pd(_mm256_broadcast_sd(a + lda + p), bv, c1);
        c2 = _mm256_fmadd_pd(_mm256_broadcast_sd(a + 2 * lda + p), bv, c2);
        c3 = _mm256_fmadd_pd(_mm256_broadcast_sd(a + 3 * lda + p), bv, c3);
    }
    _mm256_storeu_pd(c, c0);
    _mm256_storeu_pd(c + ldc, c1);
    _mm256_storeu_pd(c + 2 * ldc, c2);
    _mm256_storeu_pd(c + 3 * ldc, c3);
}

constexpr std::size_t kDepthBlock = 256;

}  // namespace

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
    __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
        s2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8), _mm256_loadu_pd(b + i + 8), s2);
        s3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12), _mm256_loadu_pd(b + i + 12), s3);
    }
    for (; i + 4 <= n; i += 4) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    }
    double acc = hsum(_mm256_add_pd(_mm256_add_pd(s0, s1), _mm256_add_pd(s2, s3)));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
        _mm256_storeu_pd(y + i + 4,
                         _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
    }
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a,
               std::size_t lda, const double* b, std::size_t ldb, double* c,
               std::size_t ldc) {
    for (std::size_t p0 = 0; p0 < k; p0 += kDepthBlock) {
        const std::size_t kb = std::min(kDepthBlock, k - p0);
        const double* ap = a + p0;
        const double* bp = b + p0 * ldb;
        std::size_t i = 0;
        for (; i + 4 <= m; i += 4) {
            std::size_t j = 0;
            for (; j + 8 <= n; j += 8) {
                micro_4x8(kb, ap + i * lda, lda, bp + j, ldb, c + i * ldc + j, ldc);
            }
            for (; j + 4 <= n; j += 4) {
                micro_4x4(kb, ap + i * lda, lda, bp + j, ldb, c + i * ldc + j, ldc);
            }
            for (; j < n; ++j) {
                for (std::size_t r = 0; r < 4; ++r) {
                    const double* arow = ap + (i + r) * lda;
                    double acc = c[(i + r) * ldc + j];
                    for (std::size_t p = 0; p < kb; ++p) acc += arow[p] * bp[p * ldb + j];
                    c[(i + r) * ldc + j] = acc;
                }
            }
        }
        for (; i < m; ++i) {
            const double* arow = ap + i * lda;
            for (std::size_t p = 0; p < kb; ++p) axpy_avx2(arow[p], bp + p * ldb, c + i * ldc, n);
        }
    }
}

void sigmoid_avx2(const double* x, double* y, std::size_t n) { map4(x, y, n, sigmoid4); }

void exp_avx2(const double* x, double* y, std::size_t n) { map4(x, y, n, exp4); }

}  // namespace difformer::kernels::detail
