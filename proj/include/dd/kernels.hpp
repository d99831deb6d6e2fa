#pragma once

#include <cstddef>
#include <string>

// Arithmetic inner loops. Every kernel has a scalar reference implementation
// and an AVX2 variant; the active set is chosen once at startup from CPUID.
// DD_SIMD=scalar|avx2 in the environment forces a specific set (the
// equivalence tests use this).
namespace dd::kern {

// Name of the active kernel set ("scalar" or "avx2").
const std::string& active_set();
bool cpu_has_avx2();

// y = a + b, y = a - b, y = a * b (elementwise, length n)
extern void (*add)(float* y, const float* a, const float* b, size_t n);
extern void (*sub)(float* y, const float* a, const float* b, size_t n);
extern void (*mul)(float* y, const float* a, const float* b, size_t n);
// y += alpha * x
extern void (*axpy)(float alpha, const float* x, float* y, size_t n);
// x *= alpha
extern void (*scale)(float alpha, float* x, size_t n);
// y = max(x, 0)
extern void (*relu)(float* y, const float* x, size_t n);
// y = g where x > 0, else 0
extern void (*relu_mask)(float* y, const float* g, const float* x, size_t n);

extern float (*sum)(const float* x, size_t n);
extern float (*dot)(const float* a, const float* b, size_t n);
// sum of (a-b)^2 and sum of |a-b|
extern float (*sqdist)(const float* a, const float* b, size_t n);
extern float (*absdist)(const float* a, const float* b, size_t n);

// C = alpha * op(A) op(B) + beta * C, row-major. Backed by BLAS.
void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
           const float* a, int lda, const float* b, int ldb, float beta, float* c, int ldc);

// Scalar reference versions, always available (oracles for equivalence tests).
namespace ref {
void add(float* y, const float* a, const float* b, size_t n);
void sub(float* y, const float* a, const float* b, size_t n);
void mul(float* y, const float* a, const float* b, size_t n);
void axpy(float alpha, const float* x, float* y, size_t n);
void scale(float alpha, float* x, size_t n);
void relu(float* y, const float* x, size_t n);
void relu_mask(float* y, const float* g, const float* x, size_t n);
float sum(const float* x, size_t n);
float dot(const float* a, const float* b, size_t n);
float sqdist(const float* a, const float* b, size_t n);
float absdist(const float* a, const float* b, size_t n);
}  // namespace ref

}  // namespace dd::kern
