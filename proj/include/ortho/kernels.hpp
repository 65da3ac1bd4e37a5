#pragma once
// Double-precision inner-loop kernels with a scalar reference implementation
// and an AVX2 variant selected at runtime.  All higher-level code goes through
// kern::active() so the two backends stay interchangeable.

#include <cstddef>

namespace ortho::kern {

struct Kernels {
    const char *name;
    // z[i] = x[i] op y[i]
    void (*add)(const double *x, const double *y, double *z, std::size_t n);
    void (*sub)(const double *x, const double *y, double *z, std::size_t n);
    void (*mul)(const double *x, const double *y, double *z, std::size_t n);
    void (*div)(const double *x, const double *y, double *z, std::size_t n);
    // z[i] = a * x[i]
    void (*scale)(const double *x, double a, double *z, std::size_t n);
    // y[i] += a * x[i]
    void (*axpy)(double a, const double *x, double *y, std::size_t n);
    double (*dot)(const double *x, const double *y, std::size_t n);
    double (*sum)(const double *x, std::size_t n);
    void (*relu)(const double *x, double *z, std::size_t n);
    // C[m x n] += A[m x k] * B[k x n], all row-major, C pre-initialized.
    void (*gemm_acc)(const double *A, const double *B, double *C,
                     std::size_t m, std::size_t k, std::size_t n);
};

const Kernels &scalar();
const Kernels *avx2();        // nullptr when the CPU lacks AVX2/FMA
const Kernels &active();

// "scalar", "avx2" or "auto"; throws on unknown/unavailable backend.
void select(const char *name);

} // namespace ortho::kern
