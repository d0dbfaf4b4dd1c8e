#pragma once

#include <array>
#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <ctime>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>

#include "dvstn/model.hpp"
#include "dvstn/resize.hpp"

namespace dvstn {

inline constexpr int kWindowFrames = 50;
inline constexpr int kSegmentFrames = 10;

// Ring of the most recent frames, already resized to the model side.
class FrameWindow {
public:
  explicit FrameWindow(int capacity = kWindowFrames) : capacity_(capacity) {}

  void push(Image frame, std::uint64_t t_us) {
    if (int(frames_.size()) == capacity_) {
      frames_.pop_front();
      stamps_.pop_front();
    }
    frames_.push_back(std::move(frame));
    stamps_.push_back(t_us);
  }

  bool full() const { return int(frames_.size()) == capacity_; }
  int size() const { return int(frames_.size()); }
  int capacity() const { return capacity_; }
  const Image& frame(int i) const { return frames_[i]; }  // 0 = oldest
  std::uint64_t stamp(int i) const { return stamps_[i]; }
  std::uint64_t newest_stamp() const { return stamps_.back(); }

private:
  int capacity_;
  std::deque<Image> frames_;
  std::deque<std::uint64_t> stamps_;
};

enum class SegmentRole { front, middle, end };

struct SegmentStack {
  Tensor tensor;  // (1, 10, S, S), values in [0,1]
  SegmentRole role = SegmentRole::front;
};

struct StackOptions {
  bool center = false;  // subtract the stack mean after scaling to [0,1]
};

// Slices the full 50-frame window into the front/middle/end decades
// (frames 0-9, 20-29, 40-49 with 0 the oldest) and stacks each as the
// 10 channels of one network input, scaled by 1/255.
inline std::optional<std::array<SegmentStack, 3>> extract_segments(
    const FrameWindow& window, int side, const StackOptions& opts = {}) {
  if (!window.full()) return std::nullopt;
  if (window.capacity() != kWindowFrames)
    throw config_error("segment extraction expects a 50-frame window");

  static constexpr int kStarts[3] = {0, 20, 40};
  static constexpr SegmentRole kRoles[3] = {SegmentRole::front, SegmentRole::middle,
                                            SegmentRole::end};
  std::array<SegmentStack, 3> stacks;
  for (int s = 0; s < 3; ++s) {
    Tensor t({1, kSegmentFrames, side, side});
    for (int i = 0; i < kSegmentFrames; ++i) {
      const Image& f = window.frame(kStarts[s] + i);
      if (f.width != side || f.height != side)
        throw config_error("window frame is " + std::to_string(f.width) + "x" +
                           std::to_string(f.height) + ", model side is " + std::to_string(side));
      float* dst = t.plane(0, i);
      for (std::size_t p = 0; p < f.px.size(); ++p) dst[p] = f.px[p] / 255.0f;
    }
    if (opts.center) {
      float mean = 0.0f;
      for (std::size_t i = 0; i < t.size(); ++i) mean += t.data()[i];
      mean /= float(t.size());
      for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] -= mean;
    }
    stacks[s] = SegmentStack{std::move(t), kRoles[s]};
  }
  return stacks;
}

enum class ConsensusMode { mean_logits, mean_probabilities };

struct Consensus {
  float fall_probability = 0.0f;
  bool fall = false;
};

// Fuses the three per-segment score pairs into one window decision.
// Default: average the logit pairs, then softmax. Index 1 is the fall
// class. A probability exactly at the threshold stays non-fall, so an
// uninformative 0.5/0.5 split never raises an alert.
inline Consensus consensus(const std::array<std::array<float, 2>, 3>& logits, float threshold,
                           ConsensusMode mode = ConsensusMode::mean_logits) {
  float p;
  if (mode == ConsensusMode::mean_logits) {
    std::vector<float> mean = {(logits[0][0] + logits[1][0] + logits[2][0]) / 3.0f,
                               (logits[0][1] + logits[1][1] + logits[2][1]) / 3.0f};
    if (!std::isfinite(mean[0]) || !std::isfinite(mean[1]))
      throw data_error("non-finite consensus logits");
    p = softmax(mean)[1];
  } else {
    float acc = 0.0f;
    for (const auto& pair : logits)
      acc += softmax({pair[0], pair[1]})[1];
    p = acc / 3.0f;
  }
  return {p, p > threshold};
}

struct Detection {
  std::uint64_t t_us = 0;  // newest frame in the window
  float fall_probability = 0.0f;
  bool fall = false;
  std::array<std::array<float, 2>, 3> segment_logits{};
};

struct ClassifyOptions {
  float threshold = 0.5f;
  ConsensusMode mode = ConsensusMode::mean_logits;
  StackOptions stack;
};

// Runs the model once per segment and fuses the results. The caller's
// window must be full and hold frames at the model's input side.
inline Detection classify_window(const FrameWindow& window, const ModelSpec& spec,
                                 const WeightStore& weights, const ClassifyOptions& opts = {}) {
  if (spec.input_shape.h != spec.input_shape.w)
    throw config_error("model input must be square for segment classification");
  auto stacks = extract_segments(window, spec.input_shape.h, opts.stack);
  if (!stacks) throw config_error("window is not full yet");

  Detection det;
  det.t_us = window.newest_stamp();
  for (int s = 0; s < 3; ++s) {
    auto logits = forward(spec, weights, (*stacks)[s].tensor);
    det.segment_logits[s] = {logits[0], logits[1]};
  }
  Consensus c = consensus(det.segment_logits, opts.threshold, opts.mode);
  det.fall_probability = c.fall_probability;
  det.fall = c.fall;
  return det;
}

// "2026-01-01T00:00:01.666667Z" from microseconds since the epoch.
inline std::string iso8601_us(std::uint64_t t_us) {
  std::time_t secs = std::time_t(t_us / 1000000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[48];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%06dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                int(t_us % 1000000));
  return buf;
}

// One record per detection: timestamp, probability, label, then the three
// per-segment logit pairs.
inline std::string detection_line(const Detection& d) {
  char buf[192];
  std::snprintf(buf, sizeof buf, "%s %.4f %s %.4f,%.4f %.4f,%.4f %.4f,%.4f",
                iso8601_us(d.t_us).c_str(), d.fall_probability, d.fall ? "fall" : "non_fall",
                d.segment_logits[0][0], d.segment_logits[0][1], d.segment_logits[1][0],
                d.segment_logits[1][1], d.segment_logits[2][0], d.segment_logits[2][1]);
  return buf;
}

struct DetectorOptions {
  int stride = 1;                           // classify every k-th frame once full
  float threshold = 0.5f;
  ConsensusMode mode = ConsensusMode::mean_logits;
  StackOptions stack;
  std::uint64_t refractory_us = 2000000;    // alert quiet period
};

// Synchronous detector core: feed frames in timestamp order, get a
// Detection whenever the stride fires. Alerts are edge-triggered on the
// non-fall -> fall transition and rate-limited by the refractory period.
class StreamDetector {
public:
  StreamDetector(const ModelSpec& spec, const WeightStore& weights, DetectorOptions opts = {})
      : spec_(spec), weights_(weights), opts_(opts), window_(kWindowFrames) {
    if (opts_.stride < 1) throw config_error("stride must be >= 1");
    validate_and_plan(spec_);
    bind_weights(spec_, weights_);
    side_ = spec_.input_shape.h;
  }

  std::optional<Detection> push(const EventFrame& frame) {
    ResizeResult r = resize_area(image_from_frame(frame), side_, side_);
    window_.push(std::move(r.image), frame.t_us);
    if (!window_.full()) return std::nullopt;
    const std::uint64_t since_fill = frames_seen_ - (kWindowFrames - 1);
    ++frames_seen_;
    if (since_fill % opts_.stride != 0) return std::nullopt;

    Detection det = classify_window(window_, spec_, weights_,
                                    {opts_.threshold, opts_.mode, opts_.stack});
    if (det.fall && !last_fall_) {
      if (!alerted_once_ || det.t_us - last_alert_us_ >= opts_.refractory_us) {
        alerts_.push_back(det);
        last_alert_us_ = det.t_us;
        alerted_once_ = true;
      }
    }
    last_fall_ = det.fall;
    return det;
  }

  const std::vector<Detection>& alerts() const { return alerts_; }

private:
  const ModelSpec& spec_;
  const WeightStore& weights_;
  DetectorOptions opts_;
  FrameWindow window_;
  int side_ = 32;
  std::uint64_t frames_seen_ = kWindowFrames - 1;  // offset so fill fires at stride 0
  bool last_fall_ = false;
  bool alerted_once_ = false;
  std::uint64_t last_alert_us_ = 0;
  std::vector<Detection> alerts_;
};

// ---------------------------------------------------------------------------
// Two-stage acquisition/inference pipeline: one producer thread pushes
// frames into a bounded queue (drop-oldest on overflow) and the single
// consumer owns the window and the model calls. Detections reach the
// caller through the callback on the consumer thread.
// ---------------------------------------------------------------------------
class StreamPipeline {
public:
  using DetectionFn = std::function<void(const Detection&)>;

  StreamPipeline(const ModelSpec& spec, const WeightStore& weights, DetectorOptions opts,
                 DetectionFn on_detection, DetectionFn on_alert = {}, int queue_depth = 50)
      : detector_(spec, weights, opts), on_detection_(std::move(on_detection)),
        on_alert_(std::move(on_alert)), depth_(queue_depth) {
    consumer_ = std::thread([this] { run(); });
  }

  ~StreamPipeline() { close(); }

  void push(EventFrame frame) {
    {
      std::lock_guard lock(mu_);
      if (closed_) return;
      if (int(queue_.size()) == depth_) {
        queue_.pop_front();
        ++dropped_;
      }
      queue_.push_back(std::move(frame));
    }
    cv_.notify_one();
  }

  // Signals end of stream, drains the queue, joins the consumer.
  void close() {
    {
      std::lock_guard lock(mu_);
      if (closed_) return;
      closed_ = true;
    }
    cv_.notify_one();
    if (consumer_.joinable()) consumer_.join();
  }

  std::uint64_t dropped_frames() const { return dropped_; }

private:
  void run() {
    std::size_t alert_seen = 0;
    for (;;) {
      EventFrame frame;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return closed_ || !queue_.empty(); });
        if (queue_.empty()) return;  // closed and drained
        frame = std::move(queue_.front());
        queue_.pop_front();
      }
      auto det = detector_.push(frame);
      if (det && on_detection_) on_detection_(*det);
      if (on_alert_) {
        const auto& alerts = detector_.alerts();
        for (; alert_seen < alerts.size(); ++alert_seen) on_alert_(alerts[alert_seen]);
      }
    }
  }

  StreamDetector detector_;
  DetectionFn on_detection_, on_alert_;
  int depth_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<EventFrame> queue_;
  bool closed_ = false;
  std::atomic<std::uint64_t> dropped_{0};
  std::thread consumer_;
};

}  // namespace dvstn
