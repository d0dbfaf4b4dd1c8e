#pragma once

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dvstn/pipeline.hpp"

namespace dvstn {

struct BenchReport {
  std::string model;
  int input_side = 0;
  int warmup = 0;
  int iters = 0;
  int stride = 1;
  std::vector<double> samples_ms;  // one per measured iteration
  double median_ms = 0.0, p90_ms = 0.0, p99_ms = 0.0;
  double windows_per_s = 0.0;
  double fps_at_stride = 0.0;  // each window consumes `stride` fresh frames
  std::string host;
};

namespace detail_bench {

inline double percentile(const std::vector<double>& sorted, double q) {
  // nearest-rank on the sorted samples
  std::size_t rank = std::size_t(std::ceil(q * double(sorted.size())));
  if (rank == 0) rank = 1;
  if (rank > sorted.size()) rank = sorted.size();
  return sorted[rank - 1];
}

inline std::string host_descriptor() {
  std::string cpu = "unknown-cpu";
  std::ifstream info("/proc/cpuinfo");
  std::string line;
  while (std::getline(info, line)) {
    if (line.rfind("model name", 0) == 0) {
      auto colon = line.find(':');
      if (colon != std::string::npos) {
        cpu = line.substr(colon + 1);
        while (!cpu.empty() && cpu.front() == ' ') cpu.erase(cpu.begin());
      }
      break;
    }
  }
  std::replace(cpu.begin(), cpu.end(), '\t', ' ');
  return cpu + " x" + std::to_string(std::thread::hardware_concurrency());
}

}  // namespace detail_bench

// Times classify_window (three forwards plus consensus) on one fixed
// random window. The timed region contains inference only; the window is
// built and resized beforehand.
inline BenchReport bench_model(const ModelSpec& spec, const WeightStore& weights, int warmup,
                               int iters, int stride = 1) {
  if (iters < 1) throw usage_error("bench needs at least one measured iteration");
  validate_and_plan(spec);
  bind_weights(spec, weights);

  const int side = spec.input_shape.h;
  FrameWindow window;
  std::mt19937_64 rng(0xbe9c4);
  for (int i = 0; i < kWindowFrames; ++i) {
    Image img(side, side);
    for (auto& v : img.px) v = float(rng() % 256);
    window.push(std::move(img), std::uint64_t(i) * kDefaultIntervalUs);
  }

  BenchReport report;
  report.model = spec.name;
  report.input_side = side;
  report.warmup = warmup;
  report.iters = iters;
  report.stride = stride;
  report.host = detail_bench::host_descriptor();

  for (int i = 0; i < warmup; ++i) (void)classify_window(window, spec, weights);
  report.samples_ms.reserve(iters);
  for (int i = 0; i < iters; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    (void)classify_window(window, spec, weights);
    auto t1 = std::chrono::steady_clock::now();
    report.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }

  std::vector<double> sorted = report.samples_ms;
  std::sort(sorted.begin(), sorted.end());
  report.median_ms = detail_bench::percentile(sorted, 0.5);
  report.p90_ms = detail_bench::percentile(sorted, 0.9);
  report.p99_ms = detail_bench::percentile(sorted, 0.99);
  report.windows_per_s = 1000.0 / report.median_ms;
  report.fps_at_stride = report.windows_per_s * stride;
  return report;
}

inline std::string bench_human(const BenchReport& r) {
  std::ostringstream os;
  os << "model " << r.model << " @ " << r.input_side << "x" << r.input_side << "\n"
     << "  warmup " << r.warmup << ", measured " << r.iters << " iterations\n"
     << "  latency per window: median " << r.median_ms << " ms, p90 " << r.p90_ms << " ms, p99 "
     << r.p99_ms << " ms\n"
     << "  throughput: " << r.windows_per_s << " windows/s ("
     << r.fps_at_stride << " frames/s at stride " << r.stride << ")\n"
     << "  host: " << r.host << "\n";
  return os.str();
}

// One tab-separated line, stable schema:
// model side warmup iters stride median_ms p90_ms p99_ms windows_per_s fps host
inline std::string bench_machine_line(const BenchReport& r) {
  std::ostringstream os;
  os << r.model << '\t' << r.input_side << '\t' << r.warmup << '\t' << r.iters << '\t'
     << r.stride << '\t' << r.median_ms << '\t' << r.p90_ms << '\t' << r.p99_ms << '\t'
     << r.windows_per_s << '\t' << r.fps_at_stride << '\t' << r.host;
  return os.str();
}

}  // namespace dvstn
