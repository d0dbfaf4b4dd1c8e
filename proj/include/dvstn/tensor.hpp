#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dvstn/error.hpp"

namespace dvstn {

struct Shape4 {
  int n = 1, c = 1, h = 1, w = 1;

  std::size_t volume() const {
    return std::size_t(n) * std::size_t(c) * std::size_t(h) * std::size_t(w);
  }
  bool operator==(const Shape4&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

// Dense rank-4 float32 tensor, NCHW, row-major with W innermost.
// Treated as immutable once handed to an operation; every primitive
// returns a fresh tensor.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(Shape4 shape, float fill = 0.0f)
      : shape_(shape), data_(check_extents(shape), fill) {}

  Tensor(Shape4 shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.volume())
      throw data_error("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
  }

  const Shape4& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  float at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

  // Pointer to the start of one (n, c) plane.
  float* plane(int n, int c) { return data_.data() + plane_offset(n, c); }
  const float* plane(int n, int c) const { return data_.data() + plane_offset(n, c); }

  bool all_finite() const {
    // Exponent-bits test; NaN and Inf both have an all-ones exponent.
    for (float v : data_) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      if ((bits & 0x7f800000u) == 0x7f800000u) return false;
    }
    return true;
  }

private:
  static std::size_t check_extents(const Shape4& s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
      throw config_error("tensor extents must all be >= 1, got " + s.str());
    return s.volume();
  }

  std::size_t index(int n, int c, int h, int w) const {
    return ((std::size_t(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  std::size_t plane_offset(int n, int c) const {
    return (std::size_t(n) * shape_.c + c) * shape_.h * shape_.w;
  }

  Shape4 shape_;
  std::vector<float> data_;
};

inline void require_finite(const Tensor& t, const std::string& context) {
  if (!t.all_finite())
    throw data_error("non-finite values in " + context);
}

}  // namespace dvstn
