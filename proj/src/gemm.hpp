#pragma once

// Row-major C[m][n] = init + sum_q A[m][q] * B[q][n], q ascending, one fused
// multiply-add per term. Every output element sees the same operation order
// no matter how the loops are blocked, so the vector and scalar paths agree
// bit for bit.

#include <algorithm>
#include <cmath>
#include <cstddef>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace hsicae::detail {

enum class GemmInit { Zero, RowBias, Accumulate };

template <typename T>
inline T gemm_init_value(GemmInit init, const T* c, const T* bias) {
    if (init == GemmInit::Accumulate) return *c;
    return init == GemmInit::RowBias ? *bias : T{0};
}

// Scalar kernel for one row and a column range.
template <typename T>
inline void gemm_row_scalar(std::size_t kd, const T* a, const T* b, std::size_t ldb, T* c, std::size_t nb,
                            GemmInit init, const T* bias) {
    for (std::size_t j = 0; j < nb; ++j) {
        T acc = gemm_init_value(init, c + j, bias);
        for (std::size_t q = 0; q < kd; ++q) acc = std::fma(a[q], b[q * ldb + j], acc);
        c[j] = acc;
    }
}

#if defined(__AVX512F__)

template <typename T>
struct Vec512;

template <>
struct Vec512<float> {
    using reg = __m512;
    static constexpr std::size_t lanes = 16;
    static reg load(const float* p) { return _mm512_loadu_ps(p); }
    static void store(float* p, reg v) { _mm512_storeu_ps(p, v); }
    static reg set1(float v) { return _mm512_set1_ps(v); }
    static reg fma(reg a, reg b, reg c) { return _mm512_fmadd_ps(a, b, c); }
};

template <>
struct Vec512<double> {
    using reg = __m512d;
    static constexpr std::size_t lanes = 8;
    static reg load(const double* p) { return _mm512_loadu_pd(p); }
    static void store(double* p, reg v) { _mm512_storeu_pd(p, v); }
    static reg set1(double v) { return _mm512_set1_pd(v); }
    static reg fma(reg a, reg b, reg c) { return _mm512_fmadd_pd(a, b, c); }
};

// MB rows x 2 vectors of columns held in registers across the whole q loop.
template <typename T, std::size_t MB>
inline void gemm_tile(std::size_t kd, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                      std::size_t ldc, GemmInit init, const T* bias) {
    using V = Vec512<T>;
    constexpr std::size_t L = V::lanes;
    typename V::reg acc0[MB], acc1[MB];
    for (std::size_t r = 0; r < MB; ++r) {
        if (init == GemmInit::Accumulate) {
            acc0[r] = V::load(c + r * ldc);
            acc1[r] = V::load(c + r * ldc + L);
        } else {
            acc0[r] = V::set1(init == GemmInit::RowBias ? bias[r] : T{0});
            acc1[r] = acc0[r];
        }
    }
    for (std::size_t q = 0; q < kd; ++q) {
        const typename V::reg b0 = V::load(b + q * ldb);
        const typename V::reg b1 = V::load(b + q * ldb + L);
        for (std::size_t r = 0; r < MB; ++r) {
            const typename V::reg av = V::set1(a[r * lda + q]);
            acc0[r] = V::fma(av, b0, acc0[r]);
            acc1[r] = V::fma(av, b1, acc1[r]);
        }
    }
    for (std::size_t r = 0; r < MB; ++r) {
        V::store(c + r * ldc, acc0[r]);
        V::store(c + r * ldc + L, acc1[r]);
    }
}

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t kd, const T* a, std::size_t lda, const T* b, std::size_t ldb,
          T* c, std::size_t ldc, GemmInit init, const T* bias = nullptr) {
    constexpr std::size_t NB = 2 * Vec512<T>::lanes;
    constexpr std::size_t MB = 6;
    std::size_t n0 = 0;
    for (; n0 + NB <= n; n0 += NB) {
        std::size_t m0 = 0;
        for (; m0 + MB <= m; m0 += MB)
            gemm_tile<T, MB>(kd, a + m0 * lda, lda, b + n0, ldb, c + m0 * ldc + n0, ldc, init,
                             bias ? bias + m0 : nullptr);
        for (; m0 < m; ++m0)
            gemm_tile<T, 1>(kd, a + m0 * lda, lda, b + n0, ldb, c + m0 * ldc + n0, ldc, init,
                            bias ? bias + m0 : nullptr);
    }
    if (n0 < n)
        for (std::size_t r = 0; r < m; ++r)
            gemm_row_scalar(kd, a + r * lda, b + n0, ldb, c + r * ldc + n0, n - n0, init, bias ? bias + r : nullptr);
}

#else

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t kd, const T* a, std::size_t lda, const T* b, std::size_t ldb,
          T* c, std::size_t ldc, GemmInit init, const T* bias = nullptr) {
    for (std::size_t r = 0; r < m; ++r)
        gemm_row_scalar(kd, a + r * lda, b, ldb, c + r * ldc, n, init, bias ? bias + r : nullptr);
}

#endif

} // namespace hsicae::detail
