#pragma once

#include <cstdint>
#include <vector>

#include "dvstn/parallel.hpp"

namespace dvstn::detail {

// C[M,N] = A[M,K] * B[K,N], all row-major. Per output element the K
// additions happen in ascending k order (saxpy form, j vectorized), so
// results are reproducible run to run and independent of thread count:
// each output row belongs to exactly one worker.
inline void gemm(const float* a, const float* b, float* c,
                 std::int64_t m, std::int64_t n, std::int64_t k) {
  parallel_for(m, [&](std::int64_t i) {
    float* crow = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) crow[j] = 0.0f;
    const float* arow = a + i * k;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const float av = arow[kk];
      const float* brow = b + kk * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  });
}

// C[M,N] = A[M,K] * B[N,K]^T. K is the contiguous axis of both operands;
// the k loop is innermost, one accumulator per output element.
inline void gemm_bt(const float* a, const float* b, float* c,
                    std::int64_t m, std::int64_t n, std::int64_t k) {
  parallel_for(m, [&](std::int64_t i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const float* brow = b + j * k;
      float acc = 0.0f;
      for (std::int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] = acc;
    }
  });
}

// Unrolls one input image (C,H,W) into columns [C*Kh*Kw, Ho*Wo].
// Out-of-range taps become explicit zeros, matching the zero-padding
// convention and the multiply-accumulate accounting.
inline void im2col(const float* src, int c, int h, int w,
                   int kh, int kw, int sh, int sw, int ph, int pw,
                   int ho, int wo, float* col) {
  const std::int64_t plane = std::int64_t(h) * w;
  const std::int64_t cols = std::int64_t(ho) * wo;
  std::int64_t row = 0;
  for (int ch = 0; ch < c; ++ch) {
    const float* s = src + ch * plane;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        float* dst = col + row * cols;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * sh - ph + ky;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < wo; ++ox) *dst++ = 0.0f;
            continue;
          }
          const float* srow = s + std::int64_t(iy) * w;
          int ix = -pw + kx;
          for (int ox = 0; ox < wo; ++ox, ix += sw)
            *dst++ = (ix >= 0 && ix < w) ? srow[ix] : 0.0f;
        }
      }
    }
  }
}

// Scatter-add transpose of im2col, used by convolution input gradients.
inline void col2im(const float* col, int c, int h, int w,
                   int kh, int kw, int sh, int sw, int ph, int pw,
                   int ho, int wo, float* dst) {
  const std::int64_t plane = std::int64_t(h) * w;
  for (std::int64_t i = 0; i < std::int64_t(c) * plane; ++i) dst[i] = 0.0f;
  const std::int64_t cols = std::int64_t(ho) * wo;
  std::int64_t row = 0;
  for (int ch = 0; ch < c; ++ch) {
    float* d = dst + ch * plane;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        const float* src = col + row * cols;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * sh - ph + ky;
          if (iy < 0 || iy >= h) { src += wo; continue; }
          float* drow = d + std::int64_t(iy) * w;
          int ix = -pw + kx;
          for (int ox = 0; ox < wo; ++ox, ix += sw) {
            if (ix >= 0 && ix < w) drow[ix] += src[ox];
          }
          src += wo;
        }
      }
    }
  }
}

}  // namespace dvstn::detail
