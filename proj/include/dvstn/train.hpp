#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "dvstn/model.hpp"
#include "dvstn/pipeline.hpp"
#include "dvstn/synth.hpp"

namespace dvstn {

// Gradients mirror the weight layout: gamma/beta for batchnorm, weights
// and bias everywhere else. Running statistics have no gradient.
using GradStore = WeightStore;

// Fan-in scaled Gaussian init for conv/fc, identity batchnorm.
inline WeightStore init_weights(const ModelSpec& spec, std::uint64_t seed) {
  ShapeTable table = validate_and_plan(spec);
  std::mt19937_64 rng(seed);
  auto gauss = [&rng](std::size_t n, float sigma) {
    std::normal_distribution<float> dist(0.0f, sigma);
    std::vector<float> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
  };
  WeightStore store;
  for (const auto& l : spec.layers) {
    const Shape3 in = table.by_id.at(l.inputs[0]);
    LayerWeights lw;
    switch (l.kind) {
      case LayerKind::conv: {
        std::size_t fan = std::size_t(in.c) * l.kh * l.kw;
        lw.weights = gauss(std::size_t(l.out_channels) * fan, std::sqrt(2.0f / float(fan)));
        lw.bias.assign(l.out_channels, 0.0f);
        break;
      }
      case LayerKind::depthwise_conv: {
        std::size_t fan = std::size_t(l.kh) * l.kw;
        lw.weights = gauss(std::size_t(in.c) * fan, std::sqrt(2.0f / float(fan)));
        lw.bias.assign(in.c, 0.0f);
        break;
      }
      case LayerKind::batchnorm:
        lw.gamma.assign(in.c, 1.0f);
        lw.beta.assign(in.c, 0.0f);
        lw.mean.assign(in.c, 0.0f);
        lw.var.assign(in.c, 1.0f);
        break;
      case LayerKind::fully_connected: {
        std::size_t d = std::size_t(in.c) * in.h * in.w;
        lw.weights = gauss(std::size_t(l.units) * d, std::sqrt(2.0f / float(d)));
        lw.bias.assign(l.units, 0.0f);
        break;
      }
      default:
        continue;
    }
    store.layers.emplace(l.id, std::move(lw));
  }
  return store;
}

namespace detail_train {

struct BnCache {
  std::vector<float> mean, inv_std;
};

inline Tensor& grad_for(std::unordered_map<std::string, Tensor>& grads, const std::string& id,
                        const Shape4& shape) {
  auto it = grads.find(id);
  if (it == grads.end()) it = grads.emplace(id, Tensor(shape)).first;
  return it->second;
}

// batch-statistics batchnorm; updates running stats in place
inline Tensor batchnorm_train(const Tensor& x, LayerWeights& lw, float eps, float run_momentum,
                              BnCache& cache) {
  const int channels = x.c();
  const std::int64_t plane = std::int64_t(x.h()) * x.w();
  const std::int64_t m = std::int64_t(x.n()) * plane;
  cache.mean.resize(channels);
  cache.inv_std.resize(channels);
  Tensor out(x.shape());
  for (int c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const float* src = x.plane(n, c);
      for (std::int64_t i = 0; i < plane; ++i) sum += src[i];
    }
    const float mu = float(sum / double(m));
    double sq = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const float* src = x.plane(n, c);
      for (std::int64_t i = 0; i < plane; ++i) {
        double d = src[i] - mu;
        sq += d * d;
      }
    }
    const float var = float(sq / double(m));
    const float istd = 1.0f / std::sqrt(var + eps);
    cache.mean[c] = mu;
    cache.inv_std[c] = istd;
    lw.mean[c] = run_momentum * lw.mean[c] + (1.0f - run_momentum) * mu;
    lw.var[c] = run_momentum * lw.var[c] + (1.0f - run_momentum) * var;
    const float g = lw.gamma[c], b = lw.beta[c];
    for (int n = 0; n < x.n(); ++n) {
      const float* src = x.plane(n, c);
      float* dst = out.plane(n, c);
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = g * (src[i] - mu) * istd + b;
    }
  }
  return out;
}

}  // namespace detail_train

// Mean softmax cross-entropy over the batch and its logit gradient.
inline float softmax_ce(const std::vector<float>& logits, int classes,
                        const std::vector<int>& labels, std::vector<float>& dlogits) {
  const int n = int(labels.size());
  dlogits.assign(logits.size(), 0.0f);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    std::vector<float> row(logits.begin() + std::size_t(i) * classes,
                           logits.begin() + std::size_t(i + 1) * classes);
    auto p = softmax(row);
    loss += -std::log(std::max(double(p[labels[i]]), 1e-30));
    for (int c = 0; c < classes; ++c)
      dlogits[std::size_t(i) * classes + c] = (p[c] - (c == labels[i] ? 1.0f : 0.0f)) / float(n);
  }
  return float(loss / n);
}

// One forward/backward pass over a mini-batch. Returns the mean loss and
// fills `grads` (gamma/beta for batchnorm, weights/bias otherwise).
// Running batchnorm statistics in `weights` are updated as a side effect.
inline float forward_backward(const ModelSpec& spec, WeightStore& weights, const Tensor& batch,
                              const std::vector<int>& labels, GradStore& grads,
                              float bn_run_momentum = 0.9f) {
  using detail_train::BnCache;
  if (int(labels.size()) != batch.n()) throw data_error("label count does not match batch size");
  for (int lab : labels)
    if (lab < 0 || lab >= spec.class_count) throw data_error("label out of range");

  ShapeTable table = validate_and_plan(spec);
  bind_weights(spec, weights);

  // ---- forward, keeping every activation ----
  std::unordered_map<std::string, Tensor> act;
  std::unordered_map<std::string, BnCache> bn_caches;
  act.emplace(kInputId, batch);
  for (const auto& l : spec.layers) {
    const Tensor& a = act.at(l.inputs[0]);
    Tensor y;
    switch (l.kind) {
      case LayerKind::conv: {
        const auto& lw = weights.at(l.id);
        Tensor w({l.out_channels, a.c(), l.kh, l.kw}, lw.weights);
        y = conv2d(a, w, lw.bias, {l.out_channels, l.kh, l.kw, l.sh, l.sw, l.ph, l.pw, false},
                   l.id);
        break;
      }
      case LayerKind::depthwise_conv: {
        const auto& lw = weights.at(l.id);
        Tensor w({a.c(), 1, l.kh, l.kw}, lw.weights);
        y = depthwise_conv2d(a, w, lw.bias, {a.c(), l.kh, l.kw, l.sh, l.sw, l.ph, l.pw, true},
                             l.id);
        break;
      }
      case LayerKind::batchnorm:
        y = detail_train::batchnorm_train(a, weights.at(l.id), l.bn_eps, bn_run_momentum,
                                          bn_caches[l.id]);
        break;
      case LayerKind::relu:
        y = relu(a, l.id);
        break;
      case LayerKind::pool_max:
        y = pool2d(a, PoolKind::max, {l.kh, l.kw, l.sh, l.sw, l.ph, l.pw}, l.id);
        break;
      case LayerKind::pool_avg:
        y = pool2d(a, PoolKind::average, {l.kh, l.kw, l.sh, l.sw, l.ph, l.pw}, l.id);
        break;
      case LayerKind::global_avg_pool:
        y = global_avg_pool(a, l.id);
        break;
      case LayerKind::fully_connected: {
        const auto& lw = weights.at(l.id);
        std::int64_t d = std::int64_t(a.c()) * a.h() * a.w();
        Tensor w({l.units, int(d), 1, 1}, lw.weights);
        y = fully_connected(a, w, lw.bias, l.id);
        break;
      }
      case LayerKind::softmax:
        throw config_error("softmax layers fold into the loss during training", l.id);
      case LayerKind::concat: {
        std::vector<const Tensor*> ins;
        for (const auto& in : l.inputs) ins.push_back(&act.at(in));
        y = channel_concat(ins, l.id);
        break;
      }
    }
    act.emplace(l.id, std::move(y));
  }

  // ---- loss ----
  const Tensor& out = act.at(spec.layers.back().id);
  std::vector<float> logits(std::size_t(out.n()) * spec.class_count);
  for (int n = 0; n < out.n(); ++n)
    for (int c = 0; c < spec.class_count; ++c)
      logits[std::size_t(n) * spec.class_count + c] = out.at(n, c, 0, 0);
  std::vector<float> dlogits;
  float loss = softmax_ce(logits, spec.class_count, labels, dlogits);

  // ---- backward ----
  grads.layers.clear();
  std::unordered_map<std::string, Tensor> dact;
  {
    Tensor dout(out.shape());
    for (int n = 0; n < out.n(); ++n)
      for (int c = 0; c < spec.class_count; ++c)
        dout.at(n, c, 0, 0) = dlogits[std::size_t(n) * spec.class_count + c];
    dact.emplace(spec.layers.back().id, std::move(dout));
  }

  for (auto it = spec.layers.rbegin(); it != spec.layers.rend(); ++it) {
    const LayerSpec& l = *it;
    auto dit = dact.find(l.id);
    if (dit == dact.end()) continue;  // no path to the loss
    const Tensor& dy = dit->second;
    const Tensor& x = act.at(l.inputs[0]);

    switch (l.kind) {
      case LayerKind::conv: {
        const auto& lw = weights.at(l.id);
        LayerWeights& g = grads.layers[l.id];
        g.weights.assign(lw.weights.size(), 0.0f);
        g.bias.assign(lw.bias.size(), 0.0f);
        const int ho = dy.h(), wo = dy.w();
        const std::int64_t cols = std::int64_t(ho) * wo;
        const std::int64_t krows = std::int64_t(x.c()) * l.kh * l.kw;
        std::vector<float> col(std::size_t(krows) * cols);
        std::vector<float> dcol(std::size_t(krows) * cols);
        std::vector<float> dw_item(lw.weights.size());
        std::vector<float> wt(std::size_t(krows) * l.out_channels);  // W^T
        for (std::int64_t k = 0; k < krows; ++k)
          for (int oc = 0; oc < l.out_channels; ++oc)
            wt[k * l.out_channels + oc] = lw.weights[std::size_t(oc) * krows + k];
        Tensor& dx = detail_train::grad_for(dact, l.inputs[0], x.shape());
        std::vector<float> dx_item(std::size_t(x.c()) * x.h() * x.w());
        for (int n = 0; n < x.n(); ++n) {
          detail::im2col(x.plane(n, 0), x.c(), x.h(), x.w(), l.kh, l.kw, l.sh, l.sw, l.ph, l.pw,
                         ho, wo, col.data());
          // dW += dY * col^T
          detail::gemm_bt(dy.plane(n, 0), col.data(), dw_item.data(), l.out_channels, krows,
                          cols);
          for (std::size_t i = 0; i < dw_item.size(); ++i) g.weights[i] += dw_item[i];
          // dX = col2im(W^T * dY)
          detail::gemm(wt.data(), dy.plane(n, 0), dcol.data(), krows, cols, l.out_channels);
          detail::col2im(dcol.data(), x.c(), x.h(), x.w(), l.kh, l.kw, l.sh, l.sw, l.ph, l.pw,
                         ho, wo, dx_item.data());
          float* dst = dx.plane(n, 0);
          for (std::size_t i = 0; i < dx_item.size(); ++i) dst[i] += dx_item[i];
          for (int oc = 0; oc < l.out_channels; ++oc) {
            const float* row = dy.plane(n, oc);
            float acc = 0.0f;
            for (std::int64_t i = 0; i < cols; ++i) acc += row[i];
            g.bias[oc] += acc;
          }
        }
        break;
      }
      case LayerKind::depthwise_conv: {
        const auto& lw = weights.at(l.id);
        LayerWeights& g = grads.layers[l.id];
        g.weights.assign(lw.weights.size(), 0.0f);
        g.bias.assign(lw.bias.size(), 0.0f);
        Tensor& dx = detail_train::grad_for(dact, l.inputs[0], x.shape());
        for (int n = 0; n < x.n(); ++n) {
          for (int c = 0; c < x.c(); ++c) {
            const float* src = x.plane(n, c);
            const float* dyp = dy.plane(n, c);
            float* dxp = dx.plane(n, c);
            const float* ker = lw.weights.data() + std::size_t(c) * l.kh * l.kw;
            float* gker = g.weights.data() + std::size_t(c) * l.kh * l.kw;
            float gb = 0.0f;
            for (int oy = 0; oy < dy.h(); ++oy)
              for (int ox = 0; ox < dy.w(); ++ox) {
                const float gout = dyp[std::int64_t(oy) * dy.w() + ox];
                gb += gout;
                for (int ky = 0; ky < l.kh; ++ky) {
                  const int iy = oy * l.sh - l.ph + ky;
                  if (iy < 0 || iy >= x.h()) continue;
                  for (int kx = 0; kx < l.kw; ++kx) {
                    const int ix = ox * l.sw - l.pw + kx;
                    if (ix < 0 || ix >= x.w()) continue;
                    gker[ky * l.kw + kx] += gout * src[std::int64_t(iy) * x.w() + ix];
                    dxp[std::int64_t(iy) * x.w() + ix] += gout * ker[ky * l.kw + kx];
                  }
                }
              }
            g.bias[c] += gb;
          }
        }
        break;
      }
      case LayerKind::batchnorm: {
        const auto& lw = weights.at(l.id);
        const detail_train::BnCache& cache = bn_caches.at(l.id);
        LayerWeights& g = grads.layers[l.id];
        g.gamma.assign(lw.gamma.size(), 0.0f);
        g.beta.assign(lw.beta.size(), 0.0f);
        Tensor& dx = detail_train::grad_for(dact, l.inputs[0], x.shape());
        const std::int64_t plane = std::int64_t(x.h()) * x.w();
        const std::int64_t m = std::int64_t(x.n()) * plane;
        for (int c = 0; c < x.c(); ++c) {
          const float mu = cache.mean[c], istd = cache.inv_std[c];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int n = 0; n < x.n(); ++n) {
            const float* xs = x.plane(n, c);
            const float* ds = dy.plane(n, c);
            for (std::int64_t i = 0; i < plane; ++i) {
              sum_dy += ds[i];
              sum_dy_xhat += double(ds[i]) * (xs[i] - mu) * istd;
            }
          }
          g.beta[c] = float(sum_dy);
          g.gamma[c] = float(sum_dy_xhat);
          const float mean_dy = float(sum_dy / double(m));
          const float mean_dy_xhat = float(sum_dy_xhat / double(m));
          const float scale = lw.gamma[c] * istd;
          for (int n = 0; n < x.n(); ++n) {
            const float* xs = x.plane(n, c);
            const float* ds = dy.plane(n, c);
            float* dd = dx.plane(n, c);
            for (std::int64_t i = 0; i < plane; ++i) {
              const float xhat = (xs[i] - mu) * istd;
              dd[i] += scale * (ds[i] - mean_dy - xhat * mean_dy_xhat);
            }
          }
        }
        break;
      }
      case LayerKind::relu: {
        const Tensor& y = act.at(l.id);
        Tensor& dx = detail_train::grad_for(dact, l.inputs[0], x.shape());
        for (std::size_t i = 0; i < y.size(); ++i)
          if (y.data()[i] > 0.0f) dx.data()[i] += dy.data()[i];
        break;
      }
      case LayerKind::pool_max: {
        const Tensor& y = act.at(l.id);
        Tensor& dx = detail_train::grad_for(dact, l.inputs[0], x.shape());
        for (int n = 0; n < x.n(); ++n)
          for (int c = 0; c < x.c(); ++c) {
            const float* xs = x.plane(n, c);
            float* dxp = dx.plane(n, c);
            for (int oy = 0; oy < y.h(); ++oy)
              for (int ox = 0; ox < y.w(); ++ox) {
                const float target = y.at(n, c, oy, ox);
                const float gout = dy.at(n, c, oy, ox);
                bool routed = false;
                for (int ky = 0; ky < l.kh && !routed; ++ky) {
                  const int iy = oy * l.sh - l.ph + ky;
                  if (iy < 0 || iy >= x.h()) continue;
                  for (int kx = 0; kx < l.kw; ++kx) {
                    const int ix = ox * l.sw - l.pw + kx;
                    if (ix < 0 || ix >= x.w()) continue;
                    if (xs[std::int64_t(iy) * x.w() + ix] == target) {
                      dxp[std::int64_t(iy) * x.w() + ix] += gout;
                      routed = true;
                      break;
                    }
                  }
                }
              }
          }
        break;
      }
      case LayerKind::pool_avg: {
        Tensor& dx = detail_train::grad_for(dact, l.inputs[0], x.shape());
        for (int n = 0; n < x.n(); ++n)
          for (int c = 0; c < x.c(); ++c) {
            float* dxp = dx.plane(n, c);
            for (int oy = 0; oy < dy.h(); ++oy)
              for (int ox = 0; ox < dy.w(); ++ox) {
                int cnt = 0;
                for (int ky = 0; ky < l.kh; ++ky) {
                  const int iy = oy * l.sh - l.ph + ky;
                  if (iy < 0 || iy >= x.h()) continue;
                  for (int kx = 0; kx < l.kw; ++kx) {
                    const int ix = ox * l.sw - l.pw + kx;
                    if (ix >= 0 && ix < x.w()) ++cnt;
                  }
                }
                if (cnt == 0) continue;
                const float share = dy.at(n, c, oy, ox) / float(cnt);
                for (int ky = 0; ky < l.kh; ++ky) {
                  const int iy = oy * l.sh - l.ph + ky;
                  if (iy < 0 || iy >= x.h()) continue;
                  for (int kx = 0; kx < l.kw; ++kx) {
                    const int ix = ox * l.sw - l.pw + kx;
                    if (ix >= 0 && ix < x.w()) dxp[std::int64_t(iy) * x.w() + ix] += share;
                  }
                }
              }
          }
        break;
      }
      case LayerKind::global_avg_pool: {
        Tensor& dx = detail_train::grad_for(dact, l.inputs[0], x.shape());
        const std::int64_t plane = std::int64_t(x.h()) * x.w();
        for (int n = 0; n < x.n(); ++n)
          for (int c = 0; c < x.c(); ++c) {
            const float share = dy.at(n, c, 0, 0) / float(plane);
            float* dxp = dx.plane(n, c);
            for (std::int64_t i = 0; i < plane; ++i) dxp[i] += share;
          }
        break;
      }
      case LayerKind::fully_connected: {
        const auto& lw = weights.at(l.id);
        LayerWeights& g = grads.layers[l.id];
        const std::int64_t d = std::int64_t(x.c()) * x.h() * x.w();
        g.weights.assign(lw.weights.size(), 0.0f);
        g.bias.assign(lw.bias.size(), 0.0f);
        Tensor& dx = detail_train::grad_for(dact, l.inputs[0], x.shape());
        for (int n = 0; n < x.n(); ++n) {
          const float* xs = x.plane(n, 0);
          float* dxp = dx.plane(n, 0);
          for (int u = 0; u < l.units; ++u) {
            const float gout = dy.at(n, u, 0, 0);
            g.bias[u] += gout;
            const float* wrow = lw.weights.data() + std::size_t(u) * d;
            float* grow = g.weights.data() + std::size_t(u) * d;
            for (std::int64_t i = 0; i < d; ++i) {
              grow[i] += gout * xs[i];
              dxp[i] += gout * wrow[i];
            }
          }
        }
        break;
      }
      case LayerKind::concat: {
        int offset = 0;
        for (const auto& in : l.inputs) {
          const Tensor& part = act.at(in);
          Tensor& dx = detail_train::grad_for(dact, in, part.shape());
          const std::int64_t plane = std::int64_t(part.h()) * part.w();
          for (int n = 0; n < part.n(); ++n)
            for (int c = 0; c < part.c(); ++c) {
              const float* src = dy.plane(n, offset + c);
              float* dst = dx.plane(n, c);
              for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[i];
            }
          offset += part.c();
        }
        break;
      }
      case LayerKind::softmax:
        break;  // unreachable: rejected in the forward pass
    }
  }
  return loss;
}

struct TrainHyperParams {
  float lr = 0.01f;
  float momentum = 0.9f;
  int batch = 16;
  int epochs = 30;
  std::uint64_t seed = 0;
  float bn_run_momentum = 0.9f;
  int threads = 2;  // engine-internal data parallelism
};

struct EpochRecord {
  int epoch = 0;
  float loss = 0.0f;
  float eval_f1 = -1.0f;  // negative when no eval set was given
};

struct Metrics {
  long long tp = 0, fp = 0, tn = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// precision/recall/F1 with the zero-division convention F1 = 0
inline Metrics metrics_from_counts(long long tp, long long fp, long long tn, long long fn) {
  Metrics m;
  m.tp = tp; m.fp = fp; m.tn = tn; m.fn = fn;
  m.precision = (tp + fp) ? double(tp) / double(tp + fp) : 0.0;
  m.recall = (tp + fn) ? double(tp) / double(tp + fn) : 0.0;
  m.f1 = (m.precision + m.recall > 0.0)
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

// Resized per-clip segment stacks, loaded once and reused every epoch.
struct ClipSample {
  std::array<Tensor, 3> segments;
  int label = 0;
};

inline std::vector<ClipSample> load_clip_samples(const std::string& manifest_path, int side) {
  namespace fs = std::filesystem;
  Manifest manifest = load_manifest(manifest_path);
  if (manifest.entries.empty()) throw data_error("empty dataset: " + manifest_path);
  fs::path root = fs::path(manifest_path).parent_path();
  std::vector<ClipSample> samples;
  samples.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    auto frames = load_frames((root / e.path).string());
    if (int(frames.size()) != kWindowFrames)
      throw data_error("clip '" + e.path + "' has " + std::to_string(frames.size()) +
                       " frames, expected 50");
    FrameWindow window;
    for (const auto& f : frames)
      window.push(resize_area(image_from_frame(f), side, side).image, f.t_us);
    auto stacks = extract_segments(window, side);
    ClipSample s;
    for (int i = 0; i < 3; ++i) s.segments[i] = std::move((*stacks)[i].tensor);
    s.label = e.label;
    samples.push_back(std::move(s));
  }
  return samples;
}

inline Metrics evaluate_samples(const ModelSpec& spec, const WeightStore& weights,
                                const std::vector<ClipSample>& clips, float threshold = 0.5f) {
  long long tp = 0, fp = 0, tn = 0, fn = 0;
  for (const auto& clip : clips) {
    std::array<std::array<float, 2>, 3> logits;
    for (int s = 0; s < 3; ++s) {
      auto out = forward(spec, weights, clip.segments[s]);
      logits[s] = {out[0], out[1]};
    }
    Consensus c = consensus(logits, threshold);
    if (c.fall && clip.label) ++tp;
    else if (c.fall && !clip.label) ++fp;
    else if (!c.fall && clip.label) ++fn;
    else ++tn;
  }
  return metrics_from_counts(tp, fp, tn, fn);
}

// Full evaluation through the streaming segment/consensus path.
inline Metrics evaluate(const ModelSpec& spec, const WeightStore& weights,
                        const std::string& manifest_path, float threshold = 0.5f) {
  return evaluate_samples(spec, weights, load_clip_samples(manifest_path, spec.input_shape.h),
                          threshold);
}

struct TrainResult {
  WeightStore weights;
  std::vector<EpochRecord> log;
};

// Mini-batch SGD with momentum over per-segment samples (labels inherited
// from the clip). Deterministic for a fixed seed: shuffling, init, and
// batch assembly all come from one seeded generator, and gradient
// reduction order is fixed regardless of thread count.
inline TrainResult train(const ModelSpec& spec, const std::string& manifest_path,
                         const TrainHyperParams& hp, const std::string& eval_manifest = {},
                         std::ostream* log_stream = nullptr) {
  if (spec.input_shape.h != spec.input_shape.w)
    throw config_error("training expects a square model input");
  const int side = spec.input_shape.h;
  std::vector<ClipSample> clips = load_clip_samples(manifest_path, side);
  std::vector<ClipSample> eval_clips;
  if (!eval_manifest.empty()) eval_clips = load_clip_samples(eval_manifest, side);

  int prev_threads = thread_count();
  set_threads(hp.threads);

  TrainResult result;
  result.weights = init_weights(spec, hp.seed);
  GradStore velocity;  // lazily shaped against the first gradients

  std::vector<std::pair<int, int>> order;  // (clip, segment)
  for (int c = 0; c < int(clips.size()); ++c)
    for (int s = 0; s < 3; ++s) order.push_back({c, s});

  std::mt19937_64 rng(hp.seed ^ 0x5851f42d4c957f2dull);
  auto shuffle = [&rng](std::vector<std::pair<int, int>>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
  };

  GradStore grads;
  try {
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
      shuffle(order);
      double epoch_loss = 0.0;
      long long batches = 0;
      for (std::size_t start = 0; start < order.size(); start += hp.batch) {
        const int n = int(std::min(order.size() - start, std::size_t(hp.batch)));
        Tensor batch({n, 10, side, side});
        std::vector<int> labels(n);
        const std::size_t item = std::size_t(10) * side * side;
        for (int i = 0; i < n; ++i) {
          auto [ci, si] = order[start + i];
          std::copy_n(clips[ci].segments[si].data(), item, batch.data() + std::size_t(i) * item);
          labels[i] = clips[ci].label;
        }
        float loss;
        try {
          loss = forward_backward(spec, result.weights, batch, labels, grads,
                                  hp.bn_run_momentum);
        } catch (const Error& e) {
          throw runtime_error("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batches) + ": " + e.what());
        }
        if (!std::isfinite(loss))
          throw runtime_error("training diverged (non-finite loss) at epoch " +
                              std::to_string(epoch) + ", batch " + std::to_string(batches));
        epoch_loss += loss;
        ++batches;

        // v = momentum * v - lr * g; w += v
        for (auto& [id, g] : grads.layers) {
          LayerWeights& w = result.weights.at(id);
          LayerWeights& v = velocity.layers[id];
          auto update = [&](std::vector<float>& wv, const std::vector<float>& gv,
                            std::vector<float>& vv) {
            if (vv.size() != gv.size()) vv.assign(gv.size(), 0.0f);
            for (std::size_t i = 0; i < gv.size(); ++i) {
              vv[i] = hp.momentum * vv[i] - hp.lr * gv[i];
              wv[i] += vv[i];
            }
          };
          if (!g.weights.empty()) update(w.weights, g.weights, v.weights);
          if (!g.bias.empty()) update(w.bias, g.bias, v.bias);
          if (!g.gamma.empty()) update(w.gamma, g.gamma, v.gamma);
          if (!g.beta.empty()) update(w.beta, g.beta, v.beta);
        }
      }

      EpochRecord rec;
      rec.epoch = epoch;
      rec.loss = float(epoch_loss / double(std::max(1LL, batches)));
      if (!eval_clips.empty())
        rec.eval_f1 = float(evaluate_samples(spec, result.weights, eval_clips).f1);
      result.log.push_back(rec);
      if (log_stream) {
        (*log_stream) << "epoch " << rec.epoch << " loss " << rec.loss;
        if (rec.eval_f1 >= 0.0f) (*log_stream) << " eval_f1 " << rec.eval_f1;
        (*log_stream) << "\n" << std::flush;
      }
    }
  } catch (...) {
    set_threads(prev_threads);
    throw;
  }
  set_threads(prev_threads);
  return result;
}

}  // namespace dvstn
