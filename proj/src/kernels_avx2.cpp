// AVX2/FMA kernels.  Compiled with -mavx2 -mfma; only reached after the
// dispatcher has confirmed CPU support.

#include "ortho/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

namespace ortho::kern {
namespace {

void v_add(const double *x, const double *y, double *z, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_add_pd(_mm256_loadu_pd(x + i),
                                              _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) z[i] = x[i] + y[i];
}
void v_sub(const double *x, const double *y, double *z, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_sub_pd(_mm256_loadu_pd(x + i),
                                              _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) z[i] = x[i] - y[i];
}
void v_mul(const double *x, const double *y, double *z, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_mul_pd(_mm256_loadu_pd(x + i),
                                              _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) z[i] = x[i] * y[i];
}
void v_div(const double *x, const double *y, double *z, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_div_pd(_mm256_loadu_pd(x + i),
                                              _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) z[i] = x[i] / y[i];
}
void v_scale(const double *x, double a, double *z, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) z[i] = a * x[i];
}
void v_axpy(double a, const double *x, double *y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                                _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}
double v_dot(const double *x, const double *y, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    double r = lanes[0] + lanes[1] + lanes[2] + lanes[3];
    for (; i < n; ++i) r += x[i] * y[i];
    return r;
}
double v_sum(const double *x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    double r = lanes[0] + lanes[1] + lanes[2] + lanes[3];
    for (; i < n; ++i) r += x[i];
    return r;
}
void v_relu(const double *x, double *z, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_max_pd(zero, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) z[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void v_gemm_acc(const double *A, const double *B, double *C,
                std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double *c = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = A[i * k + p];
            const double *b = B + p * n;
            const __m256d va = _mm256_set1_pd(a);
            std::size_t j = 0;
            for (; j + 8 <= n; j += 8) {
                _mm256_storeu_pd(c + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j),
                                                        _mm256_loadu_pd(c + j)));
                _mm256_storeu_pd(c + j + 4,
                                 _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j + 4),
                                                 _mm256_loadu_pd(c + j + 4)));
            }
            for (; j + 4 <= n; j += 4)
                _mm256_storeu_pd(c + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j),
                                                        _mm256_loadu_pd(c + j)));
            for (; j < n; ++j) c[j] += a * b[j];
        }
    }
}

} // namespace

const Kernels *avx2_impl() {
    static const Kernels k = {"avx2", v_add, v_sub, v_mul, v_div, v_scale,
                              v_axpy, v_dot, v_sum, v_relu, v_gemm_acc};
    return &k;
}

} // namespace ortho::kern

#else

namespace ortho::kern {
const Kernels *avx2_impl() { return nullptr; }
} // namespace ortho::kern

#endif
