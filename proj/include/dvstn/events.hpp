#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dvstn/io_util.hpp"

namespace dvstn {

// One sensor event: microsecond timestamp, pixel coordinates, polarity.
struct EventRecord {
  std::uint64_t t_us = 0;
  std::uint16_t x = 0, y = 0;
  std::uint8_t polarity = 0;
};

// One accumulated frame: 8-bit activity image over a fixed interval.
struct EventFrame {
  int width = 0, height = 0;
  std::uint64_t t_us = 0;  // interval end
  std::vector<std::uint8_t> pixels;

  EventFrame() = default;
  EventFrame(int w, int h, std::uint64_t t = 0) : width(w), height(h), t_us(t), pixels(std::size_t(w) * h, 0) {}

  std::uint8_t& at(int x, int y) { return pixels[std::size_t(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[std::size_t(y) * width + x]; }
};

struct AccumulateResult {
  std::vector<EventFrame> frames;
  std::uint64_t dropped = 0;  // out-of-range events, counted but not fatal
};

inline constexpr std::uint64_t kDefaultIntervalUs = 33333;  // ~30 frames/s

// Bins events into fixed intervals starting at t=0. Frame i covers
// [i*interval, (i+1)*interval); a pixel saturates at 255 via
// min(255, count * gain). Polarity is ignored (both count). Timestamps
// must be non-decreasing.
inline AccumulateResult accumulate_events(const std::vector<EventRecord>& events,
                                          std::uint64_t interval_us, int width, int height,
                                          int gain = 255) {
  if (interval_us == 0) throw config_error("accumulation interval must be positive");
  if (width < 1 || height < 1) throw config_error("frame dimensions must be positive");
  AccumulateResult result;
  if (events.empty()) return result;

  std::uint64_t prev_t = 0;
  std::uint64_t last_frame = events.back().t_us / interval_us;
  result.frames.reserve(last_frame + 1);
  for (std::uint64_t i = 0; i <= last_frame; ++i)
    result.frames.emplace_back(width, height, (i + 1) * interval_us);

  std::vector<std::uint32_t> counts(std::size_t(width) * height, 0);
  std::uint64_t current = 0;
  auto flush = [&](std::uint64_t idx) {
    EventFrame& f = result.frames[idx];
    for (std::size_t i = 0; i < counts.size(); ++i) {
      std::uint64_t v = std::uint64_t(counts[i]) * std::uint64_t(gain);
      f.pixels[i] = std::uint8_t(v > 255 ? 255 : v);
      counts[i] = 0;
    }
  };

  for (const EventRecord& e : events) {
    if (e.t_us < prev_t) throw data_error("event timestamps must be non-decreasing");
    prev_t = e.t_us;
    if (e.x >= width || e.y >= height) {
      ++result.dropped;
      continue;
    }
    std::uint64_t idx = e.t_us / interval_us;
    if (idx != current) {
      flush(current);
      current = idx;
    }
    ++counts[std::size_t(e.y) * width + e.x];
  }
  flush(current);
  return result;
}

// ---------------------------------------------------------------------------
// DVSE event files, little-endian:
//   magic "DVSE" | version u16 | width u16 | height u16 | record count u32
//   per record: t u64 | x u16 | y u16 | polarity u8
// DVSF frame files, little-endian:
//   magic "DVSF" | version u16 | width u16 | height u16 | frame count u32
//   per frame: timestamp u64 | row-major 8-bit pixels
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kEventFileVersion = 1;
inline constexpr std::uint16_t kFrameFileVersion = 1;

struct EventFile {
  int width = 640, height = 480;
  std::vector<EventRecord> events;
};

inline void save_events(const EventFile& file, const std::string& path) {
  auto os = detail::open_out(path);
  os.write("DVSE", 4);
  detail::put_u16(os, kEventFileVersion);
  detail::put_u16(os, std::uint16_t(file.width));
  detail::put_u16(os, std::uint16_t(file.height));
  detail::put_u32(os, std::uint32_t(file.events.size()));
  for (const EventRecord& e : file.events) {
    detail::put_u64(os, e.t_us);
    detail::put_u16(os, e.x);
    detail::put_u16(os, e.y);
    detail::put_u8(os, e.polarity);
  }
  if (!os) throw runtime_error("write failed for '" + path + "'");
}

inline EventFile load_events(const std::string& path) {
  auto is = detail::open_in(path);
  char magic[4];
  is.read(magic, 4);
  detail::need(is, "event file header");
  if (std::string(magic, 4) != "DVSE")
    throw data_error("'" + path + "' is not a DVSE event file (bad magic)");
  if (detail::get_u16(is, "version") != kEventFileVersion)
    throw data_error("unsupported DVSE version in '" + path + "'");
  EventFile file;
  file.width = detail::get_u16(is, "width");
  file.height = detail::get_u16(is, "height");
  std::uint32_t count = detail::get_u32(is, "record count");
  file.events.resize(count);
  for (auto& e : file.events) {
    e.t_us = detail::get_u64(is, "event timestamp");
    e.x = detail::get_u16(is, "event x");
    e.y = detail::get_u16(is, "event y");
    e.polarity = detail::get_u8(is, "event polarity");
  }
  return file;
}

inline void save_frames(const std::vector<EventFrame>& frames, const std::string& path) {
  if (frames.empty()) throw config_error("refusing to write an empty frame file");
  auto os = detail::open_out(path);
  os.write("DVSF", 4);
  detail::put_u16(os, kFrameFileVersion);
  detail::put_u16(os, std::uint16_t(frames[0].width));
  detail::put_u16(os, std::uint16_t(frames[0].height));
  detail::put_u32(os, std::uint32_t(frames.size()));
  for (const EventFrame& f : frames) {
    if (f.width != frames[0].width || f.height != frames[0].height)
      throw data_error("frame dimensions differ within one file");
    detail::put_u64(os, f.t_us);
    os.write(reinterpret_cast<const char*>(f.pixels.data()), std::streamsize(f.pixels.size()));
  }
  if (!os) throw runtime_error("write failed for '" + path + "'");
}

inline std::vector<EventFrame> load_frames_stream(std::istream& is, const std::string& origin) {
  char magic[4];
  is.read(magic, 4);
  detail::need(is, "frame file header");
  if (std::string(magic, 4) != "DVSF")
    throw data_error(origin + " is not a DVSF frame file (bad magic)");
  if (detail::get_u16(is, "version") != kFrameFileVersion)
    throw data_error("unsupported DVSF version in " + origin);
  int width = detail::get_u16(is, "width");
  int height = detail::get_u16(is, "height");
  std::uint32_t count = detail::get_u32(is, "frame count");
  std::vector<EventFrame> frames;
  frames.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    EventFrame f(width, height, detail::get_u64(is, "frame timestamp"));
    is.read(reinterpret_cast<char*>(f.pixels.data()), std::streamsize(f.pixels.size()));
    detail::need(is, "frame pixels");
    frames.push_back(std::move(f));
  }
  return frames;
}

inline std::vector<EventFrame> load_frames(const std::string& path) {
  auto is = detail::open_in(path);
  return load_frames_stream(is, "'" + path + "'");
}

}  // namespace dvstn
