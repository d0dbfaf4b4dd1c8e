#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dvstn/ops.hpp"

namespace dvstn {

enum class LayerKind {
  conv,
  depthwise_conv,
  batchnorm,
  relu,
  pool_max,
  pool_avg,
  global_avg_pool,
  fully_connected,
  softmax,
  concat,
};

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::depthwise_conv: return "depthwise_conv";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::pool_max: return "pool_max";
    case LayerKind::pool_avg: return "pool_avg";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::fully_connected: return "fully_connected";
    case LayerKind::softmax: return "softmax";
    case LayerKind::concat: return "concat";
  }
  return "?";
}

inline std::optional<LayerKind> kind_from_name(const std::string& s) {
  for (LayerKind k : {LayerKind::conv, LayerKind::depthwise_conv, LayerKind::batchnorm,
                      LayerKind::relu, LayerKind::pool_max, LayerKind::pool_avg,
                      LayerKind::global_avg_pool, LayerKind::fully_connected,
                      LayerKind::softmax, LayerKind::concat})
    if (s == kind_name(k)) return k;
  return std::nullopt;
}

// The reserved predecessor id naming the model input.
inline const std::string kInputId = "input";

struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::relu;
  std::vector<std::string> inputs;  // predecessor ids, earlier layers only

  // conv / depthwise_conv
  int out_channels = 0;
  int kh = 1, kw = 1, sh = 1, sw = 1, ph = 0, pw = 0;
  bool factorize_exempt = false;  // separable pass skips this layer
  // batchnorm
  float bn_eps = 1e-5f;
  // fully_connected
  int units = 0;
};

struct Shape3 {
  int c = 0, h = 0, w = 0;
  bool operator==(const Shape3&) const = default;
  std::string str() const {
    return "(" + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

struct ModelSpec {
  std::string name;
  Shape3 input_shape;  // (C, H, W)
  int class_count = 2;
  std::vector<LayerSpec> layers;
  // one line per applied transformation pass, in order
  std::vector<std::string> provenance;

  const LayerSpec* find(const std::string& id) const {
    for (const auto& l : layers)
      if (l.id == id) return &l;
    return nullptr;
  }
};

// Propagated output shape per layer, in layer order.
struct ShapeTable {
  std::vector<std::pair<std::string, Shape3>> order;
  std::unordered_map<std::string, Shape3> by_id;

  const Shape3& at(const std::string& id) const {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw config_error("no shape for layer", id);
    return it->second;
  }
};

namespace detail_graph {

inline Shape3 propagate(const LayerSpec& l, const std::vector<Shape3>& ins) {
  const Shape3& a = ins.at(0);
  switch (l.kind) {
    case LayerKind::conv: {
      if (l.out_channels < 1) throw config_error("conv needs out_channels >= 1", l.id);
      int h = conv_out_extent(a.h, l.kh, l.sh, l.ph, l.id);
      int w = conv_out_extent(a.w, l.kw, l.sw, l.pw, l.id);
      return {l.out_channels, h, w};
    }
    case LayerKind::depthwise_conv: {
      int h = conv_out_extent(a.h, l.kh, l.sh, l.ph, l.id);
      int w = conv_out_extent(a.w, l.kw, l.sw, l.pw, l.id);
      return {a.c, h, w};
    }
    case LayerKind::pool_max:
    case LayerKind::pool_avg: {
      if ((l.sh > 1 || l.sw > 1) && (a.h < l.kh || a.w < l.kw))
        throw config_error("strided pool window " + std::to_string(l.kh) + "x" +
                               std::to_string(l.kw) + " exceeds input " + std::to_string(a.h) +
                               "x" + std::to_string(a.w),
                           l.id);
      int h = conv_out_extent(a.h, l.kh, l.sh, l.ph, l.id);
      int w = conv_out_extent(a.w, l.kw, l.sw, l.pw, l.id);
      return {a.c, h, w};
    }
    case LayerKind::batchnorm:
    case LayerKind::relu:
      return a;
    case LayerKind::softmax:
      if (a.h != 1 || a.w != 1)
        throw config_error("softmax expects a score vector, got " + a.str(), l.id);
      return a;
    case LayerKind::global_avg_pool:
      return {a.c, 1, 1};
    case LayerKind::fully_connected: {
      if (l.units < 1) throw config_error("fully_connected needs units >= 1", l.id);
      return {l.units, 1, 1};
    }
    case LayerKind::concat: {
      int c = 0;
      for (const Shape3& s : ins) {
        if (s.h != a.h || s.w != a.w)
          throw config_error("concat spatial mismatch " + s.str() + " vs " + a.str(), l.id);
        c += s.c;
      }
      return {c, a.h, a.w};
    }
  }
  throw config_error("unknown layer kind", l.id);
}

}  // namespace detail_graph

inline ShapeTable validate_and_plan(const ModelSpec& spec) {
  if (spec.input_shape.c < 1 || spec.input_shape.h < 1 || spec.input_shape.w < 1)
    throw config_error("model input shape must be positive, got " + spec.input_shape.str());
  if (spec.layers.empty()) throw config_error("model has no layers");

  ShapeTable table;
  table.by_id[kInputId] = spec.input_shape;
  std::unordered_set<std::string> seen{kInputId};
  bool input_used = false;

  for (const auto& l : spec.layers) {
    if (l.id == kInputId) throw config_error("layer id 'input' is reserved", l.id);
    if (seen.count(l.id)) throw config_error("duplicate layer id", l.id);
    if (l.inputs.empty()) throw config_error("layer has no inputs", l.id);
    std::vector<Shape3> ins;
    for (const auto& in : l.inputs) {
      if (!seen.count(in))
        throw config_error("input '" + in + "' is not an earlier layer (dangling or cycle)",
                           l.id);
      if (in == kInputId) input_used = true;
      ins.push_back(table.by_id.at(in));
    }
    Shape3 out = detail_graph::propagate(l, ins);
    table.by_id[l.id] = out;
    table.order.emplace_back(l.id, out);
    seen.insert(l.id);
  }
  if (!input_used) throw config_error("no layer consumes the model input");

  const Shape3& last = table.order.back().second;
  if (last.c != spec.class_count || last.h != 1 || last.w != 1)
    throw config_error("final layer emits " + last.str() + ", expected (" +
                           std::to_string(spec.class_count) + ",1,1)",
                       spec.layers.back().id);
  return table;
}

// Named parameter arrays for one layer.
struct LayerWeights {
  std::vector<float> weights;  // conv [Cout,Cin,Kh,Kw] | dw [C,1,Kh,Kw] | fc [K,D]
  std::vector<float> bias;
  std::vector<float> gamma, beta, mean, var;  // batchnorm
};

struct WeightStore {
  std::map<std::string, LayerWeights> layers;

  LayerWeights& at(const std::string& id) {
    auto it = layers.find(id);
    if (it == layers.end()) throw data_error("weights missing for layer", id);
    return it->second;
  }
  const LayerWeights& at(const std::string& id) const {
    auto it = layers.find(id);
    if (it == layers.end()) throw data_error("weights missing for layer", id);
    return it->second;
  }
};

// Checks that a store carries exactly the arrays the spec implies, with the
// exact extents. Throws a data error naming the first offending layer.
inline void bind_weights(const ModelSpec& spec, const WeightStore& store) {
  ShapeTable table = validate_and_plan(spec);
  for (const auto& l : spec.layers) {
    const Shape3 in = table.by_id.at(l.inputs[0]);
    switch (l.kind) {
      case LayerKind::conv: {
        const auto& lw = store.at(l.id);
        std::size_t want = std::size_t(l.out_channels) * in.c * l.kh * l.kw;
        if (lw.weights.size() != want)
          throw data_error("conv weights have " + std::to_string(lw.weights.size()) +
                               " values, expected " + std::to_string(want),
                           l.id);
        if (int(lw.bias.size()) != l.out_channels)
          throw data_error("conv bias extent mismatch", l.id);
        break;
      }
      case LayerKind::depthwise_conv: {
        const auto& lw = store.at(l.id);
        std::size_t want = std::size_t(in.c) * l.kh * l.kw;
        if (lw.weights.size() != want)
          throw data_error("depthwise weights extent mismatch", l.id);
        if (int(lw.bias.size()) != in.c) throw data_error("depthwise bias extent mismatch", l.id);
        break;
      }
      case LayerKind::batchnorm: {
        const auto& lw = store.at(l.id);
        if (int(lw.gamma.size()) != in.c || int(lw.beta.size()) != in.c ||
            int(lw.mean.size()) != in.c || int(lw.var.size()) != in.c)
          throw data_error("batchnorm parameter extent mismatch", l.id);
        break;
      }
      case LayerKind::fully_connected: {
        const auto& lw = store.at(l.id);
        std::size_t d = std::size_t(in.c) * in.h * in.w;
        if (lw.weights.size() != std::size_t(l.units) * d)
          throw data_error("fc weights extent mismatch", l.id);
        if (int(lw.bias.size()) != l.units) throw data_error("fc bias extent mismatch", l.id);
        break;
      }
      default:
        break;
    }
  }
}

// Deterministic DAG execution. Returns per-item class logits, length
// N * class_count (pre-softmax; a trailing softmax layer, if present,
// yields probabilities instead).
inline std::vector<float> forward(const ModelSpec& spec, const WeightStore& store,
                                  const Tensor& input) {
  ShapeTable table = validate_and_plan(spec);
  bind_weights(spec, store);
  if (input.c() != spec.input_shape.c || input.h() != spec.input_shape.h ||
      input.w() != spec.input_shape.w)
    throw data_error("input shape " + input.shape().str() + " does not match model input " +
                     spec.input_shape.str());
  require_finite(input, "model input");

  // Free intermediate tensors once all consumers have run.
  std::unordered_map<std::string, int> remaining;
  for (const auto& l : spec.layers)
    for (const auto& in : l.inputs) ++remaining[in];

  std::unordered_map<std::string, Tensor> live;
  live.emplace(kInputId, input);

  const Tensor* out = nullptr;
  for (const auto& l : spec.layers) {
    std::vector<const Tensor*> ins;
    for (const auto& in : l.inputs) ins.push_back(&live.at(in));
    const Tensor& a = *ins[0];
    Tensor y;
    switch (l.kind) {
      case LayerKind::conv: {
        const auto& lw = store.at(l.id);
        Tensor w({l.out_channels, a.c(), l.kh, l.kw}, lw.weights);
        y = conv2d(a, w, lw.bias,
                   {l.out_channels, l.kh, l.kw, l.sh, l.sw, l.ph, l.pw, false}, l.id);
        break;
      }
      case LayerKind::depthwise_conv: {
        const auto& lw = store.at(l.id);
        Tensor w({a.c(), 1, l.kh, l.kw}, lw.weights);
        y = depthwise_conv2d(a, w, lw.bias, {a.c(), l.kh, l.kw, l.sh, l.sw, l.ph, l.pw, true},
                             l.id);
        break;
      }
      case LayerKind::batchnorm: {
        const auto& lw = store.at(l.id);
        BatchNormParams p{lw.gamma, lw.beta, lw.mean, lw.var, l.bn_eps};
        y = batchnorm_infer(a, p, l.id);
        break;
      }
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
        const auto& lw = store.at(l.id);
        std::int64_t d = std::int64_t(a.c()) * a.h() * a.w();
        Tensor w({l.units, int(d), 1, 1}, lw.weights);
        y = fully_connected(a, w, lw.bias, l.id);
        break;
      }
      case LayerKind::softmax: {
        y = Tensor(a.shape());
        for (int n = 0; n < a.n(); ++n) {
          std::vector<float> row(a.c());
          for (int c = 0; c < a.c(); ++c) row[c] = a.at(n, c, 0, 0);
          auto sm = softmax(row);
          for (int c = 0; c < a.c(); ++c) y.at(n, c, 0, 0) = sm[c];
        }
        break;
      }
      case LayerKind::concat:
        y = channel_concat(ins, l.id);
        break;
    }
    for (const auto& in : l.inputs) {
      if (--remaining[in] == 0 && in != kInputId) live.erase(in);
    }
    auto [it, _] = live.insert_or_assign(l.id, std::move(y));
    out = &it->second;
  }

  const Tensor& logits = *out;
  std::vector<float> result(std::size_t(logits.n()) * spec.class_count);
  for (int n = 0; n < logits.n(); ++n)
    for (int c = 0; c < spec.class_count; ++c)
      result[std::size_t(n) * spec.class_count + c] = logits.at(n, c, 0, 0);
  return result;
}

// Learnable parameter count. Batchnorm contributes 4*C until folded away.
inline long long count_params(const ModelSpec& spec) {
  ShapeTable table = validate_and_plan(spec);
  long long total = 0;
  for (const auto& l : spec.layers) {
    const Shape3 in = table.by_id.at(l.inputs[0]);
    switch (l.kind) {
      case LayerKind::conv:
        total += 1LL * l.out_channels * in.c * l.kh * l.kw + l.out_channels;
        break;
      case LayerKind::depthwise_conv:
        total += 1LL * in.c * l.kh * l.kw + in.c;
        break;
      case LayerKind::batchnorm:
        total += 4LL * in.c;
        break;
      case LayerKind::fully_connected:
        total += 1LL * l.units * in.c * in.h * in.w + l.units;
        break;
      default:
        break;
    }
  }
  return total;
}

// Multiply-accumulate count for one forward pass at the given input side
// (defaults to the spec's own input shape).
inline long long count_macs(const ModelSpec& spec) {
  ShapeTable table = validate_and_plan(spec);
  long long total = 0;
  for (const auto& l : spec.layers) {
    const Shape3 in = table.by_id.at(l.inputs[0]);
    const Shape3 out = table.by_id.at(l.id);
    switch (l.kind) {
      case LayerKind::conv:
        total += 1LL * out.h * out.w * out.c * in.c * l.kh * l.kw;
        break;
      case LayerKind::depthwise_conv:
        total += 1LL * out.h * out.w * out.c * l.kh * l.kw;
        break;
      case LayerKind::batchnorm:
        total += 2LL * in.c * in.h * in.w;
        break;
      case LayerKind::fully_connected:
        total += 1LL * l.units * in.c * in.h * in.w;
        break;
      default:
        break;  // pooling, relu, softmax, concat: zero
    }
  }
  return total;
}

inline long long count_macs(const ModelSpec& spec, int side) {
  ModelSpec s = spec;
  s.input_shape.h = s.input_shape.w = side;
  return count_macs(s);
}

}  // namespace dvstn
