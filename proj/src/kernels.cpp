#include "dd/kernels.hpp"

#include <cblas.h>
#include <immintrin.h>

#include <cmath>
#include <cstdlib>
#include <cstring>

namespace dd::kern {

namespace ref {

void add(float* y, const float* a, const float* b, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}
void sub(float* y, const float* a, const float* b, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}
void mul(float* y, const float* a, const float* b, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}
void axpy(float alpha, const float* x, float* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
void scale(float alpha, float* x, size_t n) {
  for (size_t i = 0; i < n; ++i) x[i] *= alpha;
}
void relu(float* y, const float* x, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}
void relu_mask(float* y, const float* g, const float* x, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? g[i] : 0.0f;
}
float sum(const float* x, size_t n) {
  float s = 0.0f;
  for (size_t i = 0; i < n; ++i) s += x[i];
  return s;
}
float dot(const float* a, const float* b, size_t n) {
  float s = 0.0f;
  for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}
float sqdist(const float* a, const float* b, size_t n) {
  float s = 0.0f;
  for (size_t i = 0; i < n; ++i) {
    float d = a[i] - b[i];
    s += d * d;
  }
  return s;
}
float absdist(const float* a, const float* b, size_t n) {
  float s = 0.0f;
  for (size_t i = 0; i < n; ++i) s += std::fabs(a[i] - b[i]);
  return s;
}

}  // namespace ref

namespace avx2 {

__attribute__((target("avx2,fma"))) static void add(float* y, const float* a, const float* b,
                                                    size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

__attribute__((target("avx2,fma"))) static void sub(float* y, const float* a, const float* b,
                                                    size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] - b[i];
}

__attribute__((target("avx2,fma"))) static void mul(float* y, const float* a, const float* b,
                                                    size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

__attribute__((target("avx2,fma"))) static void axpy(float alpha, const float* x, float* y,
                                                     size_t n) {
  __m256 va = _mm256_set1_ps(alpha);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

__attribute__((target("avx2,fma"))) static void scale(float alpha, float* x, size_t n) {
  __m256 va = _mm256_set1_ps(alpha);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(x + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

__attribute__((target("avx2,fma"))) static void relu(float* y, const float* x, size_t n) {
  __m256 z = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_max_ps(z, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

__attribute__((target("avx2,fma"))) static void relu_mask(float* y, const float* g, const float* x,
                                                          size_t n) {
  __m256 z = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 m = _mm256_cmp_ps(_mm256_loadu_ps(x + i), z, _CMP_GT_OQ);
    _mm256_storeu_ps(y + i, _mm256_and_ps(m, _mm256_loadu_ps(g + i)));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? g[i] : 0.0f;
}

__attribute__((target("avx2,fma"))) static float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

__attribute__((target("avx2,fma"))) static float sum(const float* x, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

__attribute__((target("avx2,fma"))) static float dot(const float* a, const float* b, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
  float s = hsum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

__attribute__((target("avx2,fma"))) static float sqdist(const float* a, const float* b, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 d = _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i));
    acc = _mm256_fmadd_ps(d, d, acc);
  }
  float s = hsum(acc);
  for (; i < n; ++i) {
    float d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

__attribute__((target("avx2,fma"))) static float absdist(const float* a, const float* b, size_t n) {
  __m256 sign = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 d = _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i));
    acc = _mm256_add_ps(acc, _mm256_and_ps(sign, d));
  }
  float s = hsum(acc);
  for (; i < n; ++i) s += std::fabs(a[i] - b[i]);
  return s;
}

}  // namespace avx2

void (*add)(float*, const float*, const float*, size_t) = ref::add;
void (*sub)(float*, const float*, const float*, size_t) = ref::sub;
void (*mul)(float*, const float*, const float*, size_t) = ref::mul;
void (*axpy)(float, const float*, float*, size_t) = ref::axpy;
void (*scale)(float, float*, size_t) = ref::scale;
void (*relu)(float*, const float*, size_t) = ref::relu;
void (*relu_mask)(float*, const float*, const float*, size_t) = ref::relu_mask;
float (*sum)(const float*, size_t) = ref::sum;
float (*dot)(const float*, const float*, size_t) = ref::dot;
float (*sqdist)(const float*, const float*, size_t) = ref::sqdist;
float (*absdist)(const float*, const float*, size_t) = ref::absdist;

bool cpu_has_avx2() { return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"); }

namespace {

std::string g_active = "scalar";

struct Init {
  Init() {
    const char* force = std::getenv("DD_SIMD");
    bool want_avx2 = cpu_has_avx2();
    if (force) {
      if (std::strcmp(force, "scalar") == 0) want_avx2 = false;
      if (std::strcmp(force, "avx2") == 0 && !cpu_has_avx2()) want_avx2 = false;
    }
    if (want_avx2) {
      kern::add = avx2::add;
      kern::sub = avx2::sub;
      kern::mul = avx2::mul;
      kern::axpy = avx2::axpy;
      kern::scale = avx2::scale;
      kern::relu = avx2::relu;
      kern::relu_mask = avx2::relu_mask;
      kern::sum = avx2::sum;
      kern::dot = avx2::dot;
      kern::sqdist = avx2::sqdist;
      kern::absdist = avx2::absdist;
      g_active = "avx2";
    }
  }
};
Init g_init;

}  // namespace

const std::string& active_set() { return g_active; }

void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
           const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace dd::kern
