#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dvstn/gemm.hpp"
#include "dvstn/tensor.hpp"

namespace dvstn {

struct ConvParams {
  int out_channels = 1;
  int kh = 1, kw = 1;
  int sh = 1, sw = 1;
  int ph = 0, pw = 0;
  bool depthwise = false;

  void validate() const {
    if (kh < 1 || kw < 1 || sh < 1 || sw < 1)
      throw config_error("kernel and stride extents must be >= 1");
    if (ph < 0 || pw < 0) throw config_error("padding must be >= 0");
    if (out_channels < 1) throw config_error("out_channels must be >= 1");
  }
};

struct BatchNormParams {
  std::vector<float> gamma, beta, mean, var;
  float eps = 1e-5f;

  void validate(int channels, const std::string& context = {}) const {
    if (int(gamma.size()) != channels || int(beta.size()) != channels ||
        int(mean.size()) != channels || int(var.size()) != channels)
      throw data_error("batchnorm parameter length does not match " +
                           std::to_string(channels) + " channels",
                       context);
    if (eps <= 0.0f) throw config_error("batchnorm eps must be > 0", context);
    for (float v : var)
      if (v < 0.0f) throw data_error("negative running variance", context);
  }
};

// floor((in + 2*pad - k) / stride) + 1, rejecting non-positive results.
inline int conv_out_extent(int in, int k, int s, int p, const std::string& context = {}) {
  int out = (in + 2 * p - k) / s + 1;
  if (in + 2 * p - k < 0 || out < 1)
    throw config_error("output extent would be non-positive (in=" + std::to_string(in) +
                           " k=" + std::to_string(k) + " stride=" + std::to_string(s) +
                           " pad=" + std::to_string(p) + ")",
                       context);
  return out;
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const std::vector<float>& bias,
                     const ConvParams& p, const std::string& context = {}) {
  p.validate();
  require_finite(x, context.empty() ? "conv2d input" : context);
  if (p.depthwise)
    throw config_error("conv2d called with depthwise params; use depthwise_conv2d", context);
  if (w.n() != p.out_channels || w.c() != x.c() || w.h() != p.kh || w.w() != p.kw)
    throw data_error("weight shape " + w.shape().str() + " does not match input channels " +
                         std::to_string(x.c()) + " and conv params",
                     context);
  if (int(bias.size()) != p.out_channels)
    throw data_error("bias length does not match out_channels", context);

  const int ho = conv_out_extent(x.h(), p.kh, p.sh, p.ph, context);
  const int wo = conv_out_extent(x.w(), p.kw, p.sw, p.pw, context);
  const std::int64_t cols = std::int64_t(ho) * wo;
  const std::int64_t krows = std::int64_t(x.c()) * p.kh * p.kw;

  Tensor out({x.n(), p.out_channels, ho, wo});
  std::vector<float> col(std::size_t(krows) * cols);
  for (int n = 0; n < x.n(); ++n) {
    detail::im2col(x.plane(n, 0), x.c(), x.h(), x.w(), p.kh, p.kw, p.sh, p.sw, p.ph, p.pw,
                   ho, wo, col.data());
    detail::gemm(w.data(), col.data(), out.plane(n, 0), p.out_channels, cols, krows);
    for (int oc = 0; oc < p.out_channels; ++oc) {
      float* dst = out.plane(n, oc);
      const float b = bias[oc];
      for (std::int64_t i = 0; i < cols; ++i) dst[i] += b;
    }
  }
  return out;
}

inline Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const std::vector<float>& bias,
                               const ConvParams& p, const std::string& context = {}) {
  p.validate();
  require_finite(x, context.empty() ? "depthwise input" : context);
  if (!p.depthwise) throw config_error("depthwise_conv2d requires depthwise params", context);
  if (p.out_channels != x.c())
    throw config_error("depthwise out_channels must equal input channels", context);
  if (w.n() != x.c() || w.c() != 1 || w.h() != p.kh || w.w() != p.kw)
    throw data_error("depthwise weight shape " + w.shape().str() + " does not match input " +
                         x.shape().str(),
                     context);
  if (int(bias.size()) != x.c()) throw data_error("bias length does not match channels", context);

  const int ho = conv_out_extent(x.h(), p.kh, p.sh, p.ph, context);
  const int wo = conv_out_extent(x.w(), p.kw, p.sw, p.pw, context);
  Tensor out({x.n(), x.c(), ho, wo});
  const std::int64_t planes = std::int64_t(x.n()) * x.c();
  parallel_for(planes, [&](std::int64_t pl) {
    const int n = int(pl / x.c());
    const int c = int(pl % x.c());
    const float* src = x.plane(n, c);
    const float* ker = w.plane(c, 0);
    const float b = bias[c];
    float* dst = out.plane(n, c);
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        float acc = 0.0f;
        for (int ky = 0; ky < p.kh; ++ky) {
          const int iy = oy * p.sh - p.ph + ky;
          for (int kx = 0; kx < p.kw; ++kx) {
            const int ix = ox * p.sw - p.pw + kx;
            const float v = (iy >= 0 && iy < x.h() && ix >= 0 && ix < x.w())
                                ? src[std::int64_t(iy) * x.w() + ix]
                                : 0.0f;
            acc += ker[ky * p.kw + kx] * v;
          }
        }
        *dst++ = acc + b;
      }
    }
  });
  return out;
}

inline Tensor batchnorm_infer(const Tensor& x, const BatchNormParams& p,
                              const std::string& context = {}) {
  require_finite(x, context.empty() ? "batchnorm input" : context);
  p.validate(x.c(), context);
  Tensor out(x.shape());
  const std::int64_t plane = std::int64_t(x.h()) * x.w();
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const float scale = p.gamma[c] / std::sqrt(p.var[c] + p.eps);
      const float shift = p.beta[c] - p.mean[c] * scale;
      const float* src = x.plane(n, c);
      float* dst = out.plane(n, c);
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * scale + shift;
    }
  }
  return out;
}

enum class PoolKind { max, average };

struct PoolGeom {
  int kh = 2, kw = 2;
  int sh = 2, sw = 2;
  int ph = 0, pw = 0;
};

// Average pooling divides by the number of in-bounds samples only; a
// strided pool whose window cannot fit inside the unpadded input is
// rejected (such a "reduction" would read mostly padding).
inline Tensor pool2d(const Tensor& x, PoolKind kind, const PoolGeom& g,
                     const std::string& context = {}) {
  if (g.kh < 1 || g.kw < 1 || g.sh < 1 || g.sw < 1)
    throw config_error("pool kernel and stride must be >= 1", context);
  require_finite(x, context.empty() ? "pool input" : context);
  if ((g.sh > 1 || g.sw > 1) && (x.h() < g.kh || x.w() < g.kw))
    throw config_error("strided pool window " + std::to_string(g.kh) + "x" +
                           std::to_string(g.kw) + " exceeds input " + std::to_string(x.h()) +
                           "x" + std::to_string(x.w()),
                       context);
  const int ho = conv_out_extent(x.h(), g.kh, g.sh, g.ph, context);
  const int wo = conv_out_extent(x.w(), g.kw, g.sw, g.pw, context);
  Tensor out({x.n(), x.c(), ho, wo});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const float* src = x.plane(n, c);
      float* dst = out.plane(n, c);
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const int y0 = oy * g.sh - g.ph, x0 = ox * g.sw - g.pw;
          if (kind == PoolKind::max) {
            float m = -std::numeric_limits<float>::infinity();
            for (int ky = 0; ky < g.kh; ++ky) {
              const int iy = y0 + ky;
              if (iy < 0 || iy >= x.h()) continue;
              for (int kx = 0; kx < g.kw; ++kx) {
                const int ix = x0 + kx;
                if (ix < 0 || ix >= x.w()) continue;
                m = std::max(m, src[std::int64_t(iy) * x.w() + ix]);
              }
            }
            *dst++ = m;
          } else {
            float sum = 0.0f;
            int cnt = 0;
            for (int ky = 0; ky < g.kh; ++ky) {
              const int iy = y0 + ky;
              if (iy < 0 || iy >= x.h()) continue;
              for (int kx = 0; kx < g.kw; ++kx) {
                const int ix = x0 + kx;
                if (ix < 0 || ix >= x.w()) continue;
                sum += src[std::int64_t(iy) * x.w() + ix];
                ++cnt;
              }
            }
            *dst++ = cnt > 0 ? sum / float(cnt) : 0.0f;
          }
        }
      }
    }
  }
  return out;
}

inline Tensor global_avg_pool(const Tensor& x, const std::string& context = {}) {
  require_finite(x, context.empty() ? "global pool input" : context);
  Tensor out({x.n(), x.c(), 1, 1});
  const std::int64_t plane = std::int64_t(x.h()) * x.w();
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const float* src = x.plane(n, c);
      float sum = 0.0f;
      for (std::int64_t i = 0; i < plane; ++i) sum += src[i];
      out.at(n, c, 0, 0) = sum / float(plane);
    }
  }
  return out;
}

// y = W x + b on the flattened per-item features. w has shape (K, D, 1, 1).
inline Tensor fully_connected(const Tensor& x, const Tensor& w, const std::vector<float>& bias,
                              const std::string& context = {}) {
  require_finite(x, context.empty() ? "fc input" : context);
  const std::int64_t d = std::int64_t(x.c()) * x.h() * x.w();
  if (w.c() != d || w.h() != 1 || w.w() != 1)
    throw data_error("fc weight shape " + w.shape().str() + " does not match input length " +
                         std::to_string(d),
                     context);
  const int k = w.n();
  if (int(bias.size()) != k) throw data_error("fc bias length mismatch", context);
  Tensor out({x.n(), k, 1, 1});
  detail::gemm_bt(x.data(), w.data(), out.data(), x.n(), k, d);
  for (int n = 0; n < x.n(); ++n)
    for (int j = 0; j < k; ++j) out.at(n, j, 0, 0) += bias[j];
  return out;
}

inline Tensor relu(const Tensor& x, const std::string& context = {}) {
  require_finite(x, context.empty() ? "relu input" : context);
  Tensor out(x.shape());
  const float* src = x.data();
  float* dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
  return out;
}

// Numerically stable softmax (max subtraction). Exponentials run in double
// so heavily dominated classes still come out strictly positive; anything
// the float cast would flush to zero is clamped to the smallest positive
// value instead.
inline std::vector<float> softmax(const std::vector<float>& scores) {
  if (scores.empty()) throw data_error("softmax on empty scores");
  float mx = scores[0];
  for (float v : scores) {
    if (!std::isfinite(v)) throw data_error("non-finite value in softmax input");
    mx = std::max(mx, v);
  }
  std::vector<double> e(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    e[i] = std::exp(double(scores[i]) - double(mx));
    sum += e[i];
  }
  std::vector<float> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = float(e[i] / sum);
    if (out[i] <= 0.0f) out[i] = std::numeric_limits<float>::denorm_min();
  }
  return out;
}

inline Tensor channel_concat(const std::vector<const Tensor*>& parts,
                             const std::string& context = {}) {
  if (parts.empty()) throw config_error("concat needs at least one input", context);
  const Tensor& first = *parts[0];
  int channels = 0;
  for (const Tensor* t : parts) {
    require_finite(*t, context.empty() ? "concat input" : context);
    if (t->n() != first.n() || t->h() != first.h() || t->w() != first.w())
      throw data_error("concat spatial mismatch: " + t->shape().str() + " vs " +
                           first.shape().str(),
                       context);
    channels += t->c();
  }
  Tensor out({first.n(), channels, first.h(), first.w()});
  const std::int64_t plane = std::int64_t(first.h()) * first.w();
  for (int n = 0; n < first.n(); ++n) {
    int co = 0;
    for (const Tensor* t : parts) {
      for (int c = 0; c < t->c(); ++c, ++co)
        std::copy_n(t->plane(n, c), plane, out.plane(n, co));
    }
  }
  return out;
}

}  // namespace dvstn
