#pragma once

#include <cmath>
#include <vector>

#include "dvstn/error.hpp"
#include "dvstn/events.hpp"

namespace dvstn {

// Single-channel float image used by the resize stage and the frame window.
struct Image {
  int width = 0, height = 0;
  std::vector<float> px;

  Image() = default;
  Image(int w, int h, float fill = 0.0f) : width(w), height(h), px(std::size_t(w) * h, fill) {}

  float& at(int x, int y) { return px[std::size_t(y) * width + x]; }
  float at(int x, int y) const { return px[std::size_t(y) * width + x]; }
};

inline Image image_from_frame(const EventFrame& f) {
  Image img(f.width, f.height);
  for (std::size_t i = 0; i < f.pixels.size(); ++i) img.px[i] = float(f.pixels[i]);
  return img;
}

// Standard bilinear resampling with half-pixel-centered source coordinates.
inline Image resize_bilinear(const Image& in, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw config_error("resize target must be positive");
  if (out_w == in.width && out_h == in.height) return in;
  Image out(out_w, out_h);
  const double sx = double(in.width) / out_w;
  const double sy = double(in.height) / out_h;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    int y0 = int(std::floor(fy));
    double wy = fy - y0;
    int ya = std::min(std::max(y0, 0), in.height - 1);
    int yb = std::min(std::max(y0 + 1, 0), in.height - 1);
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      int x0 = int(std::floor(fx));
      double wx = fx - x0;
      int xa = std::min(std::max(x0, 0), in.width - 1);
      int xb = std::min(std::max(x0 + 1, 0), in.width - 1);
      double top = in.at(xa, ya) * (1.0 - wx) + in.at(xb, ya) * wx;
      double bot = in.at(xa, yb) * (1.0 - wx) + in.at(xb, yb) * wx;
      out.at(ox, oy) = float(top * (1.0 - wy) + bot * wy);
    }
  }
  return out;
}

struct ResizeResult {
  Image image;
  bool bilinear_fallback = false;  // set when an upscale request fell back
};

// Area-weighted downscale: each output pixel is the exact mean of the
// source rectangle it covers, with fractional edge weights when the scale
// is not integral. For integral factors this is the plain block mean, and
// the global image mean is preserved exactly. Upscale requests fall back
// to bilinear and flag it.
inline ResizeResult resize_area(const Image& in, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw config_error("resize target must be positive");
  if (out_w > in.width || out_h > in.height)
    return {resize_bilinear(in, out_w, out_h), true};
  if (out_w == in.width && out_h == in.height) return {in, false};

  Image out(out_w, out_h);
  const double sx = double(in.width) / out_w;
  const double sy = double(in.height) / out_h;
  const double inv_cell = 1.0 / (sx * sy);
  for (int oy = 0; oy < out_h; ++oy) {
    const double y0 = oy * sy, y1 = (oy + 1) * sy;
    const int iy0 = int(std::floor(y0)), iy1 = std::min(int(std::ceil(y1)), in.height);
    for (int ox = 0; ox < out_w; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx;
      const int ix0 = int(std::floor(x0)), ix1 = std::min(int(std::ceil(x1)), in.width);
      double acc = 0.0;
      for (int iy = iy0; iy < iy1; ++iy) {
        const double hy = std::min(double(iy + 1), y1) - std::max(double(iy), y0);
        for (int ix = ix0; ix < ix1; ++ix) {
          const double wx = std::min(double(ix + 1), x1) - std::max(double(ix), x0);
          acc += in.at(ix, iy) * (hy * wx);
        }
      }
      out.at(ox, oy) = float(acc * inv_cell);
    }
  }
  return {std::move(out), false};
}

}  // namespace dvstn
