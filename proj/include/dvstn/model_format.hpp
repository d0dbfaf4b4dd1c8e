#pragma once

#include <sstream>
#include <string>

#include "dvstn/io_util.hpp"
#include "dvstn/model.hpp"

namespace dvstn {

// Human-readable model description, one file per model:
//
//   dvstn-model v1
//   name m3
//   input 10 64 64
//   classes 2
//   layer <id> <kind> in=<id[,id...]> [out=N] [kernel=KxK] [stride=SxS]
//         [pad=PxP] [units=N] [eps=E] [exempt=1]
//   provenance <pass description>
//
// Blank lines and lines starting with '#' are ignored. Readers reject
// unknown versions and unknown keys.

inline constexpr const char* kModelFormatTag = "dvstn-model";
inline constexpr int kModelFormatVersion = 1;

namespace detail_mf {

inline std::string pair_str(int a, int b) {
  return std::to_string(a) + "x" + std::to_string(b);
}

inline std::pair<int, int> parse_pair(const std::string& v, const std::string& where) {
  auto x = v.find('x');
  if (x == std::string::npos)
    throw data_error("expected AxB value, got '" + v + "'", where);
  try {
    return {std::stoi(v.substr(0, x)), std::stoi(v.substr(x + 1))};
  } catch (const std::exception&) {
    throw data_error("bad AxB value '" + v + "'", where);
  }
}

}  // namespace detail_mf

inline std::string model_to_text(const ModelSpec& spec) {
  std::ostringstream os;
  os << kModelFormatTag << " v" << kModelFormatVersion << "\n";
  os << "name " << spec.name << "\n";
  os << "input " << spec.input_shape.c << " " << spec.input_shape.h << " "
     << spec.input_shape.w << "\n";
  os << "classes " << spec.class_count << "\n";
  for (const auto& l : spec.layers) {
    os << "layer " << l.id << " " << kind_name(l.kind) << " in=";
    for (std::size_t i = 0; i < l.inputs.size(); ++i)
      os << (i ? "," : "") << l.inputs[i];
    switch (l.kind) {
      case LayerKind::conv:
        os << " out=" << l.out_channels << " kernel=" << detail_mf::pair_str(l.kh, l.kw)
           << " stride=" << detail_mf::pair_str(l.sh, l.sw)
           << " pad=" << detail_mf::pair_str(l.ph, l.pw);
        if (l.factorize_exempt) os << " exempt=1";
        break;
      case LayerKind::depthwise_conv:
      case LayerKind::pool_max:
      case LayerKind::pool_avg:
        os << " kernel=" << detail_mf::pair_str(l.kh, l.kw)
           << " stride=" << detail_mf::pair_str(l.sh, l.sw)
           << " pad=" << detail_mf::pair_str(l.ph, l.pw);
        break;
      case LayerKind::batchnorm:
        os << " eps=" << l.bn_eps;
        break;
      case LayerKind::fully_connected:
        os << " units=" << l.units;
        break;
      default:
        break;
    }
    os << "\n";
  }
  for (const auto& p : spec.provenance) os << "provenance " << p << "\n";
  return os.str();
}

inline ModelSpec model_from_text(std::istream& is, const std::string& origin = "model file") {
  std::string line;
  if (!std::getline(is, line)) throw data_error("empty " + origin);
  {
    std::istringstream hs(line);
    std::string tag, ver;
    hs >> tag >> ver;
    if (tag != kModelFormatTag)
      throw data_error(origin + " is not a model file (bad header '" + line + "')");
    if (ver != "v" + std::to_string(kModelFormatVersion))
      throw data_error("unsupported model format version '" + ver + "' in " + origin);
  }

  ModelSpec spec;
  bool have_input = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "name") {
      ls >> spec.name;
    } else if (word == "input") {
      ls >> spec.input_shape.c >> spec.input_shape.h >> spec.input_shape.w;
      if (!ls) throw data_error("bad input line '" + line + "' in " + origin);
      have_input = true;
    } else if (word == "classes") {
      ls >> spec.class_count;
    } else if (word == "provenance") {
      std::string rest;
      std::getline(ls, rest);
      if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
      spec.provenance.push_back(rest);
    } else if (word == "layer") {
      LayerSpec l;
      std::string kind;
      ls >> l.id >> kind;
      auto k = kind_from_name(kind);
      if (!k) throw data_error("unknown layer kind '" + kind + "'", l.id);
      l.kind = *k;
      std::string kv;
      while (ls >> kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
          throw data_error("expected key=value, got '" + kv + "'", l.id);
        std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        if (key == "in") {
          std::istringstream vs(val);
          std::string id;
          while (std::getline(vs, id, ',')) l.inputs.push_back(id);
        } else if (key == "out") {
          l.out_channels = std::stoi(val);
        } else if (key == "kernel") {
          std::tie(l.kh, l.kw) = detail_mf::parse_pair(val, l.id);
        } else if (key == "stride") {
          std::tie(l.sh, l.sw) = detail_mf::parse_pair(val, l.id);
        } else if (key == "pad") {
          std::tie(l.ph, l.pw) = detail_mf::parse_pair(val, l.id);
        } else if (key == "units") {
          l.units = std::stoi(val);
        } else if (key == "eps") {
          l.bn_eps = std::stof(val);
        } else if (key == "exempt") {
          l.factorize_exempt = val == "1" || val == "true";
        } else {
          throw data_error("unknown layer attribute '" + key + "'", l.id);
        }
      }
      if (l.inputs.empty()) throw data_error("layer has no in= attribute", l.id);
      spec.layers.push_back(std::move(l));
    } else {
      throw data_error("unknown directive '" + word + "' in " + origin);
    }
  }
  if (!have_input) throw data_error("missing input line in " + origin);
  validate_and_plan(spec);
  return spec;
}

inline void save_model(const ModelSpec& spec, const std::string& path) {
  auto os = detail::open_out(path, std::ios::out);
  os << model_to_text(spec);
  if (!os) throw runtime_error("write failed for '" + path + "'");
}

inline ModelSpec load_model(const std::string& path) {
  auto is = detail::open_in(path, std::ios::in);
  return model_from_text(is, "'" + path + "'");
}

}  // namespace dvstn
