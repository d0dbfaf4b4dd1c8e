#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace dvstn {

// Error taxonomy used across the library. The CLI maps these onto exit
// codes (usage 1, data/format 2, everything else 3).
enum class ErrorKind {
  usage,    // bad arguments / bad request
  data,     // malformed or inconsistent input data
  config,   // structurally invalid configuration (shapes, geometry)
  runtime,  // everything else (I/O failures, divergence, ...)
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, std::string message, std::string layer = {})
      : std::runtime_error(layer.empty() ? message : layer + ": " + message),
        kind_(kind), layer_(std::move(layer)) {}

  ErrorKind kind() const noexcept { return kind_; }
  // Offending layer id when the error is attributable to one.
  const std::string& layer() const noexcept { return layer_; }

private:
  ErrorKind kind_;
  std::string layer_;
};

inline Error usage_error(std::string msg) { return Error(ErrorKind::usage, std::move(msg)); }
inline Error data_error(std::string msg, std::string layer = {}) {
  return Error(ErrorKind::data, std::move(msg), std::move(layer));
}
inline Error config_error(std::string msg, std::string layer = {}) {
  return Error(ErrorKind::config, std::move(msg), std::move(layer));
}
inline Error runtime_error(std::string msg) { return Error(ErrorKind::runtime, std::move(msg)); }

}  // namespace dvstn
