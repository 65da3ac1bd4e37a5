#include "ortho/kernels.hpp"

namespace ortho::kern {
namespace {

void s_add(const double *x, const double *y, double *z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] + y[i];
}
void s_sub(const double *x, const double *y, double *z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] - y[i];
}
void s_mul(const double *x, const double *y, double *z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
}
void s_div(const double *x, const double *y, double *z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] / y[i];
}
void s_scale(const double *x, double a, double *z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = a * x[i];
}
void s_axpy(double a, const double *x, double *y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}
double s_dot(const double *x, const double *y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}
double s_sum(const double *x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}
void s_relu(const double *x, double *z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] > 0.0 ? x[i] : 0.0;
}

// axpy-style update: inner loop runs over contiguous rows of B and C, so the
// accumulation order matches the AVX2 variant lane-for-lane.
void s_gemm_acc(const double *A, const double *B, double *C,
                std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double *c = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = A[i * k + p];
            const double *b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
        }
    }
}

} // namespace

const Kernels &scalar() {
    static const Kernels k = {"scalar", s_add, s_sub, s_mul, s_div, s_scale,
                              s_axpy,   s_dot, s_sum, s_relu, s_gemm_acc};
    return k;
}

} // namespace ortho::kern
