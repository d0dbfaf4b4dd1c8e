#pragma once

#include <array>
#include <sstream>
#include <string>

#include "dvstn/io_util.hpp"
#include "dvstn/model.hpp"

namespace dvstn {

// DVSW weight container, little-endian:
//   magic "DVSW" | version u16 | layer_count u32
//   per layer: name_len u16 + utf-8 name | array_count u8
//     per array: role u8 | rank u8 | extents u32[rank] | f32 data
// Roles: 1 weights, 2 bias, 3 gamma, 4 beta, 5 mean, 6 var.
// Round-trips are bit-exact; readers reject unknown magic or version.

inline constexpr std::uint16_t kWeightsVersion = 1;

namespace detail_w {

enum Role : std::uint8_t { kW = 1, kB = 2, kGamma = 3, kBeta = 4, kMean = 5, kVar = 6 };

inline void put_array(std::ostream& os, Role role, const std::vector<std::uint32_t>& extents,
                      const std::vector<float>& data) {
  detail::put_u8(os, role);
  detail::put_u8(os, std::uint8_t(extents.size()));
  std::size_t vol = 1;
  for (auto e : extents) {
    detail::put_u32(os, e);
    vol *= e;
  }
  if (vol != data.size())
    throw runtime_error("weight array volume does not match extents");
  for (float v : data) detail::put_f32(os, v);
}

}  // namespace detail_w

inline void save_weights(const WeightStore& store, const std::string& path) {
  auto os = detail::open_out(path);
  os.write("DVSW", 4);
  detail::put_u16(os, kWeightsVersion);
  detail::put_u32(os, std::uint32_t(store.layers.size()));
  for (const auto& [name, lw] : store.layers) {
    detail::put_u16(os, std::uint16_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    std::uint8_t count = 0;
    count += !lw.weights.empty();
    count += !lw.bias.empty();
    count += !lw.gamma.empty();
    count += !lw.beta.empty();
    count += !lw.mean.empty();
    count += !lw.var.empty();
    detail::put_u8(os, count);
    auto flat = [&](detail_w::Role r, const std::vector<float>& v) {
      if (!v.empty()) detail_w::put_array(os, r, {std::uint32_t(v.size())}, v);
    };
    flat(detail_w::kW, lw.weights);
    flat(detail_w::kB, lw.bias);
    flat(detail_w::kGamma, lw.gamma);
    flat(detail_w::kBeta, lw.beta);
    flat(detail_w::kMean, lw.mean);
    flat(detail_w::kVar, lw.var);
  }
  if (!os) throw runtime_error("write failed for '" + path + "'");
}

inline WeightStore load_weights(const std::string& path) {
  auto is = detail::open_in(path);
  char magic[4];
  is.read(magic, 4);
  detail::need(is, "weight file header");
  if (std::string(magic, 4) != "DVSW")
    throw data_error("'" + path + "' is not a DVSW weight file (bad magic)");
  std::uint16_t version = detail::get_u16(is, "version");
  if (version != kWeightsVersion)
    throw data_error("unsupported DVSW version " + std::to_string(version));
  std::uint32_t layer_count = detail::get_u32(is, "layer count");

  WeightStore store;
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    std::uint16_t len = detail::get_u16(is, "layer name length");
    std::string name(len, '\0');
    is.read(name.data(), len);
    detail::need(is, "layer name");
    LayerWeights lw;
    std::uint8_t arrays = detail::get_u8(is, "array count");
    for (std::uint8_t a = 0; a < arrays; ++a) {
      std::uint8_t role = detail::get_u8(is, "array role");
      std::uint8_t rank = detail::get_u8(is, "array rank");
      std::size_t vol = 1;
      for (std::uint8_t r = 0; r < rank; ++r) vol *= detail::get_u32(is, "array extent");
      std::vector<float> data(vol);
      for (auto& v : data) v = detail::get_f32(is, "array data");
      switch (role) {
        case detail_w::kW: lw.weights = std::move(data); break;
        case detail_w::kB: lw.bias = std::move(data); break;
        case detail_w::kGamma: lw.gamma = std::move(data); break;
        case detail_w::kBeta: lw.beta = std::move(data); break;
        case detail_w::kMean: lw.mean = std::move(data); break;
        case detail_w::kVar: lw.var = std::move(data); break;
        default:
          throw data_error("unknown array role " + std::to_string(role) + " in layer '" +
                           name + "'");
      }
    }
    store.layers.emplace(std::move(name), std::move(lw));
  }
  return store;
}

// Loads and validates against a spec in one step; mismatches name the layer.
inline WeightStore load_weights(const std::string& path, const ModelSpec& spec) {
  WeightStore store = load_weights(path);
  bind_weights(spec, store);
  return store;
}

}  // namespace dvstn
