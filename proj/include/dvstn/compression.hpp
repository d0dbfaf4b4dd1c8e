#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "dvstn/model.hpp"

namespace dvstn {

// ---------------------------------------------------------------------------
// Model-to-model optimization passes. Each pass returns a spec that passes
// validate_and_plan and appends a provenance record describing itself.
// fold_batchnorm preserves weights; separable_factorize and scale_channels
// change the architecture, so their outputs require retraining (recorded in
// the provenance line).
// ---------------------------------------------------------------------------

// Absorbs inference-mode batchnorm into the preceding conv / depthwise /
// fully-connected layer:
//   w' = w * gamma / sqrt(var + eps)   (per output channel)
//   b' = (b - mean) * gamma / sqrt(var + eps) + beta
// The batchnorm layer is removed and its consumers rewired.
inline std::pair<ModelSpec, WeightStore> fold_batchnorm(const ModelSpec& spec,
                                                        const WeightStore& store) {
  validate_and_plan(spec);
  bind_weights(spec, store);

  // consumer counts to reject folds into layers feeding other consumers too
  std::unordered_map<std::string, int> consumers;
  for (const auto& l : spec.layers)
    for (const auto& in : l.inputs) ++consumers[in];

  ModelSpec out = spec;
  out.layers.clear();
  WeightStore wout = store;
  std::unordered_map<std::string, std::string> alias;
  auto resolve = [&](const std::string& id) {
    auto it = alias.find(id);
    return it == alias.end() ? id : it->second;
  };

  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::batchnorm) {
      const std::string pred_id = l.inputs[0];
      const LayerSpec* pred = spec.find(pred_id);
      if (!pred || (pred->kind != LayerKind::conv && pred->kind != LayerKind::depthwise_conv &&
                    pred->kind != LayerKind::fully_connected))
        throw config_error(
            "batchnorm is not immediately preceded by a conv/depthwise/fully_connected layer",
            l.id);
      if (consumers[pred_id] != 1)
        throw config_error("cannot fold: predecessor '" + pred_id + "' feeds other layers",
                           l.id);

      LayerWeights& pw = wout.at(pred_id);
      const LayerWeights& bw = store.at(l.id);
      const int channels = int(bw.gamma.size());
      const std::size_t per_channel = pw.weights.size() / channels;
      for (int c = 0; c < channels; ++c) {
        const float scale = bw.gamma[c] / std::sqrt(bw.var[c] + l.bn_eps);
        float* wp = pw.weights.data() + std::size_t(c) * per_channel;
        for (std::size_t i = 0; i < per_channel; ++i) wp[i] *= scale;
        pw.bias[c] = (pw.bias[c] - bw.mean[c]) * scale + bw.beta[c];
      }
      wout.layers.erase(l.id);
      alias[l.id] = resolve(pred_id);
      continue;
    }
    LayerSpec copy = l;
    for (auto& in : copy.inputs) in = resolve(in);
    out.layers.push_back(std::move(copy));
  }
  out.provenance.push_back("fold_batchnorm");
  validate_and_plan(out);
  return {std::move(out), std::move(wout)};
}

// Spec-level counterpart: the architecture fold_batchnorm produces,
// without touching weights. Used to materialize the folded rung of the
// canonical ladder before any weights exist.
inline ModelSpec strip_batchnorm(const ModelSpec& spec) {
  ModelSpec out = spec;
  out.layers.clear();
  std::unordered_map<std::string, std::string> alias;
  auto resolve = [&](const std::string& id) {
    auto it = alias.find(id);
    return it == alias.end() ? id : it->second;
  };
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::batchnorm) {
      alias[l.id] = resolve(l.inputs[0]);
      continue;
    }
    LayerSpec copy = l;
    for (auto& in : copy.inputs) in = resolve(in);
    out.layers.push_back(std::move(copy));
  }
  out.provenance.push_back("fold_batchnorm");
  validate_and_plan(out);
  return out;
}

// Splits every eligible conv (Kh*Kw > 1, C_in > 1, not flagged
// factorize_exempt) into a depthwise conv with the original kernel
// geometry followed by a 1x1 pointwise conv. The pointwise stage keeps
// the original layer id, so batchnorm/relu stay attached to it. Weights
// are not carried over; the provenance line records that retraining is
// required.
inline ModelSpec separable_factorize(const ModelSpec& spec) {
  ShapeTable table = validate_and_plan(spec);
  ModelSpec out = spec;
  out.layers.clear();
  for (const auto& l : spec.layers) {
    const bool eligible = l.kind == LayerKind::conv && l.kh * l.kw > 1 &&
                          table.by_id.at(l.inputs[0]).c > 1 && !l.factorize_exempt;
    if (!eligible) {
      out.layers.push_back(l);
      continue;
    }
    LayerSpec dw;
    dw.id = l.id + "_dw";
    dw.kind = LayerKind::depthwise_conv;
    dw.inputs = l.inputs;
    dw.kh = l.kh; dw.kw = l.kw;
    dw.sh = l.sh; dw.sw = l.sw;
    dw.ph = l.ph; dw.pw = l.pw;
    LayerSpec pw;
    pw.id = l.id;
    pw.kind = LayerKind::conv;
    pw.inputs = {dw.id};
    pw.out_channels = l.out_channels;
    out.layers.push_back(std::move(dw));
    out.layers.push_back(std::move(pw));
  }
  out.provenance.push_back("separable weights_invalidated=1");
  validate_and_plan(out);
  return out;
}

// Rescales every conv output width to max(1, round(factor * C)),
// round half up. The network input channels and the class head are never
// scaled; depthwise widths follow their input automatically.
inline ModelSpec scale_channels(const ModelSpec& spec, double factor) {
  if (!(factor > 0.0) || factor > 1.0)
    throw config_error("scale factor must be in (0, 1], got " + std::to_string(factor));
  validate_and_plan(spec);
  ModelSpec out = spec;
  for (auto& l : out.layers) {
    if (l.kind == LayerKind::conv) {
      l.out_channels = std::max(1, int(std::floor(factor * l.out_channels + 0.5)));
    }
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "scale factor=%g weights_invalidated=1", factor);
  out.provenance.push_back(buf);
  validate_and_plan(out);
  return out;
}

// Changes the model input to side x side and revalidates the whole plan;
// any layer whose geometry stops working names itself in the error.
inline ModelSpec set_input_resolution(const ModelSpec& spec, int side) {
  if (side < 1) throw config_error("input side must be >= 1");
  ModelSpec out = spec;
  out.input_shape.h = out.input_shape.w = side;
  validate_and_plan(out);
  if (side != spec.input_shape.h || side != spec.input_shape.w)
    out.provenance.push_back("input side=" + std::to_string(side));
  return out;
}

}  // namespace dvstn
