#pragma once

#include <string>
#include <vector>

#include "dvstn/compression.hpp"
#include "dvstn/model.hpp"

namespace dvstn {

// ---------------------------------------------------------------------------
// Canonical model ladder m1..m8. Two hand-written bases:
//   m1 — full inception-v2-style network on a 10-channel stacked-frame
//        input at 224x224, 2-class head,
//   m3 — its compact truncation (stem + inception 3a/3b/3c) with a 1x1
//        feature-expansion layer before the global pool, at 64x64.
// Every other rung is generated by the compression passes:
//   m2 = m1 @ 64, m4 = separable(m3), m5 = scale(m4, 3/4),
//   m6 = m3 @ 32, m7 = scale(separable(m6), 3/4), m8 = m7 without
//   batchnorm (the architecture fold_batchnorm produces).
// The entry conv and the grid-reduction convs carry factorize_exempt, so
// the separable pass targets the stride-1 inception bulk.
// ---------------------------------------------------------------------------

namespace detail_zoo {

class Builder {
public:
  explicit Builder(ModelSpec& spec) : spec_(spec) {}

  std::string conv(const std::string& id, const std::string& in, int out_c, int k, int s = 1,
                   int p = -1, bool exempt = false) {
    LayerSpec l;
    l.id = id;
    l.kind = LayerKind::conv;
    l.inputs = {in};
    l.out_channels = out_c;
    l.kh = l.kw = k;
    l.sh = l.sw = s;
    l.ph = l.pw = (p < 0 ? k / 2 : p);
    l.factorize_exempt = exempt;
    spec_.layers.push_back(l);
    return id;
  }

  // conv + batchnorm + relu
  std::string cbr(const std::string& id, const std::string& in, int out_c, int k, int s = 1,
                  int p = -1, bool exempt = false) {
    conv(id, in, out_c, k, s, p, exempt);
    LayerSpec bn;
    bn.id = id + "_bn";
    bn.kind = LayerKind::batchnorm;
    bn.inputs = {id};
    spec_.layers.push_back(bn);
    LayerSpec rl;
    rl.id = id + "_relu";
    rl.kind = LayerKind::relu;
    rl.inputs = {bn.id};
    spec_.layers.push_back(rl);
    return rl.id;
  }

  std::string pool(const std::string& id, const std::string& in, LayerKind kind, int k, int s,
                   int p) {
    LayerSpec l;
    l.id = id;
    l.kind = kind;
    l.inputs = {in};
    l.kh = l.kw = k;
    l.sh = l.sw = s;
    l.ph = l.pw = p;
    spec_.layers.push_back(l);
    return id;
  }

  std::string concat(const std::string& id, std::vector<std::string> ins) {
    LayerSpec l;
    l.id = id;
    l.kind = LayerKind::concat;
    l.inputs = std::move(ins);
    spec_.layers.push_back(l);
    return id;
  }

  std::string gap(const std::string& id, const std::string& in) {
    LayerSpec l;
    l.id = id;
    l.kind = LayerKind::global_avg_pool;
    l.inputs = {in};
    spec_.layers.push_back(l);
    return id;
  }

  std::string fc(const std::string& id, const std::string& in, int units) {
    LayerSpec l;
    l.id = id;
    l.kind = LayerKind::fully_connected;
    l.inputs = {in};
    l.units = units;
    spec_.layers.push_back(l);
    return id;
  }

  // standard block: 1x1 | 1x1-3x3 | 1x1-3x3-3x3 | pool-1x1
  std::string inception(const std::string& name, const std::string& in, int b1, int r3, int b3,
                        int rd, int d1, int d2, int proj, bool max_pool_branch = false) {
    std::vector<std::string> outs;
    outs.push_back(cbr(name + "_1x1", in, b1, 1));
    std::string t = cbr(name + "_3x3_reduce", in, r3, 1);
    outs.push_back(cbr(name + "_3x3", t, b3, 3));
    t = cbr(name + "_d3x3_reduce", in, rd, 1);
    t = cbr(name + "_d3x3a", t, d1, 3);
    outs.push_back(cbr(name + "_d3x3b", t, d2, 3));
    std::string pl = pool(name + "_pool", in,
                          max_pool_branch ? LayerKind::pool_max : LayerKind::pool_avg, 3, 1, 1);
    outs.push_back(cbr(name + "_pool_proj", pl, proj, 1));
    return concat(name + "_out", std::move(outs));
  }

  // grid reduction: 1x1-3x3/2 | 1x1-3x3-3x3/2 | maxpool/2 pass-through
  std::string reduction(const std::string& name, const std::string& in, int r3, int b3, int rd,
                        int d1, int d2, bool exempt = false) {
    std::vector<std::string> outs;
    std::string t = cbr(name + "_3x3_reduce", in, r3, 1);
    outs.push_back(cbr(name + "_3x3", t, b3, 3, 2, -1, exempt));
    t = cbr(name + "_d3x3_reduce", in, rd, 1);
    t = cbr(name + "_d3x3a", t, d1, 3, 1, -1, exempt);
    outs.push_back(cbr(name + "_d3x3b", t, d2, 3, 2, -1, exempt));
    outs.push_back(pool(name + "_pool", in, LayerKind::pool_max, 3, 2, 1));
    return concat(name + "_out", std::move(outs));
  }

  std::string stem(const std::string& in) {
    std::string t = cbr("conv1", in, 64, 7, 2, 3, /*exempt=*/true);
    t = pool("pool1", t, LayerKind::pool_max, 3, 2, 1);
    t = cbr("conv2_reduce", t, 64, 1);
    t = cbr("conv2", t, 192, 3);
    return pool("pool2", t, LayerKind::pool_max, 3, 2, 1);
  }

private:
  ModelSpec& spec_;
};

}  // namespace detail_zoo

inline ModelSpec full_network_base() {
  ModelSpec spec;
  spec.name = "m1";
  spec.input_shape = {10, 224, 224};
  detail_zoo::Builder b(spec);
  std::string t = b.stem(kInputId);
  t = b.inception("i3a", t, 64, 64, 64, 64, 96, 96, 32);
  t = b.inception("i3b", t, 64, 64, 96, 64, 96, 96, 64);
  t = b.reduction("i3c", t, 128, 160, 64, 96, 96);
  t = b.inception("i4a", t, 224, 64, 96, 96, 128, 128, 128);
  t = b.inception("i4b", t, 192, 96, 128, 96, 128, 128, 128);
  t = b.inception("i4c", t, 160, 128, 160, 128, 160, 160, 128);
  t = b.inception("i4d", t, 96, 128, 192, 160, 192, 192, 128);
  t = b.reduction("i4e", t, 128, 192, 192, 256, 256);
  t = b.inception("i5a", t, 352, 192, 320, 160, 224, 224, 128);
  t = b.inception("i5b", t, 352, 192, 320, 192, 224, 224, 128, /*max_pool_branch=*/true);
  t = b.gap("gap", t);
  b.fc("head", t, spec.class_count);
  return spec;
}

inline ModelSpec compact_base() {
  ModelSpec spec;
  spec.name = "m3";
  spec.input_shape = {10, 64, 64};
  detail_zoo::Builder b(spec);
  std::string t = b.stem(kInputId);
  t = b.inception("i3a", t, 64, 64, 64, 64, 96, 96, 32);
  t = b.inception("i3b", t, 64, 64, 96, 64, 96, 96, 64);
  t = b.reduction("i3c", t, 128, 160, 64, 96, 96, /*exempt=*/true);
  t = b.cbr("head_1x1", t, 1920, 1);
  t = b.gap("gap", t);
  b.fc("head", t, spec.class_count);
  return spec;
}

inline std::vector<std::string> canonical_ids() {
  return {"m1", "m2", "m3", "m4", "m5", "m6", "m7", "m8"};
}

inline ModelSpec canonical_model(const std::string& id) {
  auto rename = [](ModelSpec m, const char* name) {
    m.name = name;
    return m;
  };
  if (id == "m1") return full_network_base();
  if (id == "m2") return rename(set_input_resolution(full_network_base(), 64), "m2");
  if (id == "m3") return compact_base();
  if (id == "m4") return rename(separable_factorize(compact_base()), "m4");
  if (id == "m5")
    return rename(scale_channels(separable_factorize(compact_base()), 0.75), "m5");
  if (id == "m6") return rename(set_input_resolution(compact_base(), 32), "m6");
  if (id == "m7")
    return rename(
        scale_channels(separable_factorize(set_input_resolution(compact_base(), 32)), 0.75),
        "m7");
  if (id == "m8")
    return rename(strip_batchnorm(scale_channels(
                      separable_factorize(set_input_resolution(compact_base(), 32)), 0.75)),
                  "m8");
  throw usage_error("unknown canonical model id '" + id + "' (expected m1..m8)");
}

}  // namespace dvstn
