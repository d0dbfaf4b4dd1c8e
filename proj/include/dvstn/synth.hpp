#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dvstn/events.hpp"

namespace dvstn {

enum class ActionClass { idle, lie, walk, sit, stand, fall, fake_fall };

inline const char* action_name(ActionClass a) {
  switch (a) {
    case ActionClass::idle: return "idle";
    case ActionClass::lie: return "lie";
    case ActionClass::walk: return "walk";
    case ActionClass::sit: return "sit";
    case ActionClass::stand: return "stand";
    case ActionClass::fall: return "fall";
    case ActionClass::fake_fall: return "fake_fall";
  }
  return "?";
}

inline std::optional<ActionClass> action_from_name(const std::string& s) {
  for (ActionClass a : {ActionClass::idle, ActionClass::lie, ActionClass::walk, ActionClass::sit,
                        ActionClass::stand, ActionClass::fall, ActionClass::fake_fall})
    if (s == action_name(a)) return a;
  return std::nullopt;
}

// Binary task label: only a real fall is positive. A fake fall (drop and
// recover) stays negative, which is the whole trick of the dataset.
inline bool fall_label(ActionClass a) { return a == ActionClass::fall; }

enum class Direction { front, back, left, right };

inline const char* direction_name(Direction d) {
  switch (d) {
    case Direction::front: return "front";
    case Direction::back: return "back";
    case Direction::left: return "left";
    case Direction::right: return "right";
  }
  return "?";
}

inline std::optional<Direction> direction_from_name(const std::string& s) {
  for (Direction d : {Direction::front, Direction::back, Direction::left, Direction::right})
    if (s == direction_name(d)) return d;
  return std::nullopt;
}

struct ClipSpec {
  ActionClass action = ActionClass::idle;
  std::uint64_t seed = 0;
  Direction direction = Direction::front;
  int width = 640, height = 480;
  int frames = 50;
  double noise_rate = 0.002;  // per-pixel per-frame event probability
  bool phase_jitter = false;  // optional +-5 frame phase shift
};

// Articulated two-part actor: torso ellipse plus a head disc riding the
// major axis. angle 0 is upright; row coordinates grow downward.
struct ActorState {
  double cx = 0, cy = 0;   // torso center, pixels
  double angle = 0;        // radians from vertical
  double rx = 0, ry = 0;   // torso half axes (minor, major)
  double head_r = 0;
};

namespace detail_synth {

inline double smoothstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Per-clip trajectory parameters drawn once from the seed.
struct ClipParams {
  double base_cx, stand_cy, lie_cy;
  double rx, ry, head_r;
  double sway_amp;
  int fall_start, fall_len;
  double fake_depth;
  double walk_span;
  double lateral_sign;   // left/right handedness for rotations and walks
  double depth_scale;    // front/back size trend for walking
  bool toward_camera;    // front/back falls compress instead of rotating
  bool mirrored;         // second virtual camera: horizontal mirror
  double squash;         // perspective squash of the second camera
  int phase;             // optional phase jitter in frames
};

inline ClipParams draw_params(const ClipSpec& spec) {
  std::mt19937_64 rng(spec.seed * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double h = spec.height, w = spec.width;
  ClipParams p{};
  p.rx = h * (0.060 + 0.020 * uni(rng));
  p.ry = h * (0.200 + 0.040 * uni(rng));
  p.head_r = h * (0.040 + 0.010 * uni(rng));
  p.base_cx = w * (0.38 + 0.24 * uni(rng));
  p.stand_cy = h * (0.40 + 0.05 * uni(rng));
  p.lie_cy = h * (0.80 + 0.04 * uni(rng));
  p.sway_amp = h * 0.002;
  p.fall_start = 5 + int(uni(rng) * 14.99);             // 5..19
  p.fall_len = 15 + int(uni(rng) * 15.99);              // 15..30
  if (p.fall_start + p.fall_len > 49) p.fall_len = 49 - p.fall_start;
  p.fake_depth = 0.35 + 0.20 * uni(rng);
  p.walk_span = w * (0.30 + 0.15 * uni(rng));
  p.lateral_sign = (spec.direction == Direction::left) ? -1.0 : 1.0;
  p.depth_scale = (spec.direction == Direction::back) ? -1.0 : 1.0;
  p.toward_camera =
      spec.direction == Direction::front || spec.direction == Direction::back;
  p.mirrored = (rng() & 1) != 0;
  p.squash = 0.90 + 0.10 * uni(rng);
  p.phase = 0;
  if (spec.phase_jitter) p.phase = int(uni(rng) * 10.99) - 5;
  return p;
}

inline ActorState state_at(const ClipSpec& spec, const ClipParams& p, int frame) {
  const int last = spec.frames - 1;
  double t = std::clamp(double(frame + p.phase), 0.0, double(last)) / double(last);
  ActorState s;
  s.cx = p.base_cx;
  s.cy = p.stand_cy;
  s.angle = 0.0;
  s.rx = p.rx;
  s.ry = p.ry;
  s.head_r = p.head_r;

  auto apply_drop = [&](double amount) {
    s.cy = p.stand_cy + (p.lie_cy - p.stand_cy) * amount;
    if (p.toward_camera) {
      // foreshortened fall: silhouette compresses instead of rotating
      s.ry = p.ry - (p.ry - 1.4 * p.rx) * amount;
      s.angle = 0.15 * 3.14159265358979 * p.lateral_sign * amount;
    } else {
      s.angle = p.lateral_sign * 1.5707963267948966 * amount;
    }
  };

  switch (spec.action) {
    case ActionClass::idle:
      s.cx += p.sway_amp * std::sin(t * 12.0);
      break;
    case ActionClass::lie:
      apply_drop(smoothstep(t));  // the whole clip is one slow descent
      break;
    case ActionClass::walk: {
      s.cx = p.base_cx + p.lateral_sign * p.walk_span * (t - 0.5);
      s.cy += p.sway_amp * 3.0 * std::sin(t * 25.0);
      double depth = 1.0 + p.depth_scale * 0.12 * (t - 0.5);
      s.rx *= depth;
      s.ry *= depth;
      s.head_r *= depth;
      break;
    }
    case ActionClass::sit: {
      double d = smoothstep((t - 0.2) / 0.5);
      s.cy += 0.16 * spec.height * d;
      s.ry *= 1.0 - 0.25 * d;
      break;
    }
    case ActionClass::stand: {
      // reverse of sit: start low and compressed, rise to standing
      double d = 1.0 - smoothstep((t - 0.2) / 0.5);
      s.cy += 0.16 * spec.height * d;
      s.ry *= 1.0 - 0.25 * d;
      break;
    }
    case ActionClass::fall: {
      double local = (double(frame + p.phase) - p.fall_start) / double(p.fall_len);
      double d = smoothstep(local);
      apply_drop(d * d * (2.0 - d));  // front-loaded: rapid early descent
      break;
    }
    case ActionClass::fake_fall: {
      double local = (double(frame + p.phase) - p.fall_start) / double(p.fall_len);
      double down = smoothstep(local);
      double recover = smoothstep((double(frame + p.phase) - (p.fall_start + p.fall_len)) / 12.0);
      apply_drop(p.fake_depth * down * (1.0 - recover));
      break;
    }
  }
  if (p.mirrored) s.cx = spec.width - s.cx;
  s.ry *= p.squash;
  return s;
}

struct Mask {
  int x0, y0, w, h;
  std::vector<std::uint8_t> bits;
  std::uint8_t at(int x, int y) const { return bits[std::size_t(y - y0) * w + (x - x0)]; }
};

inline Mask rasterize(const ActorState& s, int x0, int y0, int w, int h) {
  Mask m{x0, y0, w, h, std::vector<std::uint8_t>(std::size_t(w) * h, 0)};
  const double c = std::cos(s.angle), sn = std::sin(s.angle);
  // head center sits at the top of the major axis
  const double hx = s.cx + sn * (s.ry + 0.9 * s.head_r);
  const double hy = s.cy - c * (s.ry + 0.9 * s.head_r);
  const double inv_rx2 = 1.0 / (s.rx * s.rx), inv_ry2 = 1.0 / (s.ry * s.ry);
  const double head_r2 = s.head_r * s.head_r;
  std::size_t i = 0;
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x, ++i) {
      const double dx = x - s.cx, dy = y - s.cy;
      const double u = c * dx + sn * dy;   // minor axis
      const double v = -sn * dx + c * dy;  // major axis
      bool inside = u * u * inv_rx2 + v * v * inv_ry2 <= 1.0;
      if (!inside) {
        const double ex = x - hx, ey = y - hy;
        inside = ex * ex + ey * ey <= head_r2;
      }
      m.bits[i] = inside;
    }
  }
  return m;
}

}  // namespace detail_synth

inline ActorState actor_state(const ClipSpec& spec, int frame) {
  return detail_synth::state_at(spec, detail_synth::draw_params(spec), frame);
}

// Renders one 50-frame clip. Events fire where the actor silhouette
// changed between consecutive sub-steps, plus Bernoulli pixel noise.
// Fully deterministic in the seed.
inline std::vector<EventFrame> generate_clip(const ClipSpec& spec) {
  if (spec.frames < 2) throw config_error("clips need at least two frames");
  using namespace detail_synth;
  ClipParams params = draw_params(spec);
  std::mt19937_64 noise_rng(spec.seed ^ 0xdeadbeefcafef00dull);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  const int substeps = 4;
  std::vector<EventFrame> frames;
  frames.reserve(spec.frames);

  auto state_f = [&](double f) {
    int lo = int(std::floor(f));
    double frac = f - lo;
    ActorState a = state_at(spec, params, lo);
    if (frac == 0.0) return a;
    ActorState b = state_at(spec, params, lo + 1);
    ActorState s = a;
    s.cx = a.cx + (b.cx - a.cx) * frac;
    s.cy = a.cy + (b.cy - a.cy) * frac;
    s.angle = a.angle + (b.angle - a.angle) * frac;
    s.rx = a.rx + (b.rx - a.rx) * frac;
    s.ry = a.ry + (b.ry - a.ry) * frac;
    s.head_r = a.head_r + (b.head_r - a.head_r) * frac;
    return s;
  };

  for (int f = 0; f < spec.frames; ++f) {
    EventFrame frame(spec.width, spec.height, std::uint64_t(f + 1) * kDefaultIntervalUs);

    // silhouette motion events over the sub-steps of [f-1, f]
    if (f > 0) {
      for (int j = 0; j < substeps; ++j) {
        double fa = f - 1 + double(j) / substeps;
        double fb = f - 1 + double(j + 1) / substeps;
        ActorState sa = state_f(fa), sb = state_f(fb);
        double reach = std::max({sa.ry + 2 * sa.head_r, sb.ry + 2 * sb.head_r}) + 2;
        int x0 = std::max(0, int(std::min(sa.cx, sb.cx) - reach));
        int x1 = std::min(spec.width, int(std::max(sa.cx, sb.cx) + reach) + 1);
        int y0 = std::max(0, int(std::min(sa.cy, sb.cy) - reach));
        int y1 = std::min(spec.height, int(std::max(sa.cy, sb.cy) + reach) + 1);
        if (x0 >= x1 || y0 >= y1) continue;
        Mask ma = rasterize(sa, x0, y0, x1 - x0, y1 - y0);
        Mask mb = rasterize(sb, x0, y0, x1 - x0, y1 - y0);
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x)
            if (ma.at(x, y) != mb.at(x, y)) frame.at(x, y) = 255;
      }
    }

    // sparse Bernoulli noise via geometric gap sampling
    if (spec.noise_rate > 0.0) {
      const double log1mp = std::log1p(-spec.noise_rate);
      const std::size_t total = frame.pixels.size();
      std::size_t i = std::size_t(std::log(1.0 - uni(noise_rng)) / log1mp);
      while (i < total) {
        frame.pixels[i] = 255;
        i += 1 + std::size_t(std::log(1.0 - uni(noise_rng)) / log1mp);
      }
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Dataset generation: DVSF clip files plus tab-separated manifests with a
// header row. Train and test draw from disjoint seed ranges.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string path;
  ActionClass action = ActionClass::idle;
  int label = 0;
  Direction direction = Direction::front;
  std::uint64_t seed = 0;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
};

inline void save_manifest(const Manifest& m, const std::string& path) {
  auto os = detail::open_out(path, std::ios::out);
  os << "path\taction\tlabel\tdirection\tseed\n";
  for (const auto& e : m.entries)
    os << e.path << "\t" << action_name(e.action) << "\t" << e.label << "\t"
       << direction_name(e.direction) << "\t" << e.seed << "\n";
  if (!os) throw runtime_error("write failed for '" + path + "'");
}

inline Manifest load_manifest(const std::string& path) {
  auto is = detail::open_in(path, std::ios::in);
  Manifest m;
  std::string line;
  if (!std::getline(is, line)) throw data_error("empty manifest '" + path + "'");
  if (line.rfind("path\t", 0) != 0)
    throw data_error("'" + path + "' does not look like a dataset manifest");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    ManifestEntry e;
    std::istringstream ls(line);
    std::string action, label, dir, seed;
    if (!std::getline(ls, e.path, '\t') || !std::getline(ls, action, '\t') ||
        !std::getline(ls, label, '\t') || !std::getline(ls, dir, '\t') ||
        !std::getline(ls, seed, '\t'))
      throw data_error("malformed manifest row: " + line);
    auto a = action_from_name(action);
    auto d = direction_from_name(dir);
    if (!a || !d) throw data_error("unknown action or direction in row: " + line);
    e.action = *a;
    e.direction = *d;
    e.label = std::stoi(label);
    e.seed = std::stoull(seed);
    m.entries.push_back(std::move(e));
  }
  return m;
}

using ClassCounts = std::map<ActionClass, int>;

// Class mix of the reference recordings, reproduced proportionally.
inline const ClassCounts& reference_class_mix() {
  static const ClassCounts mix = {
      {ActionClass::idle, 62},  {ActionClass::lie, 62},   {ActionClass::walk, 62},
      {ActionClass::sit, 124},  {ActionClass::stand, 744}, {ActionClass::fall, 558},
      {ActionClass::fake_fall, 248},
  };
  return mix;
}

// Largest-remainder apportionment of `total` clips over the reference mix.
inline ClassCounts proportional_counts(int total) {
  const ClassCounts& mix = reference_class_mix();
  double sum = 0;
  for (const auto& [a, n] : mix) sum += n;
  ClassCounts out;
  std::vector<std::pair<double, ActionClass>> remainders;
  int assigned = 0;
  for (const auto& [a, n] : mix) {
    double exact = total * double(n) / sum;
    int base = int(std::floor(exact));
    out[a] = base;
    assigned += base;
    remainders.push_back({exact - base, a});
  }
  std::sort(remainders.begin(), remainders.end(),
            [](const auto& x, const auto& y) { return x.first > y.first; });
  for (int i = 0; assigned < total; ++i, ++assigned) out[remainders[i % remainders.size()].second]++;
  return out;
}

struct DatasetOptions {
  int width = 640, height = 480;
  double noise_rate = 0.002;
  bool phase_jitter = false;
};

// Writes one clip per manifest row under dir/clips/. Seeds are
// base_seed + running index, so disjoint bases give disjoint clips.
inline Manifest generate_dataset(const ClassCounts& counts, std::uint64_t base_seed,
                                 const std::string& dir, const std::string& manifest_name,
                                 const DatasetOptions& opts = {}) {
  namespace fs = std::filesystem;
  fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root / "clips", ec);
  if (ec) throw runtime_error("cannot create output directory '" + dir + "'");

  Manifest manifest;
  std::uint64_t index = 0;
  static const Direction dirs[4] = {Direction::front, Direction::back, Direction::left,
                                    Direction::right};
  for (const auto& [action, count] : counts) {
    for (int i = 0; i < count; ++i, ++index) {
      ClipSpec spec;
      spec.action = action;
      spec.seed = base_seed + index;
      spec.direction = dirs[index % 4];
      spec.width = opts.width;
      spec.height = opts.height;
      spec.noise_rate = opts.noise_rate;
      spec.phase_jitter = opts.phase_jitter;

      char name[96];
      std::snprintf(name, sizeof name, "%s_%s_%06llu.dvsf", action_name(action),
                    direction_name(spec.direction), static_cast<unsigned long long>(index));
      fs::path clip_path = root / "clips" / name;
      save_frames(generate_clip(spec), clip_path.string());

      ManifestEntry e;
      e.path = (fs::path("clips") / name).string();
      e.action = action;
      e.label = fall_label(action) ? 1 : 0;
      e.direction = spec.direction;
      e.seed = spec.seed;
      manifest.entries.push_back(std::move(e));
    }
  }
  save_manifest(manifest, (root / manifest_name).string());
  return manifest;
}

struct DeskDataset {
  std::string train_manifest, test_manifest;
};

inline constexpr int kDeskTrainClips = 500;
inline constexpr int kDeskTestClips = 100;

// Desk-scale preset: 500 train / 100 test clips with the reference class
// proportions, disjoint seed ranges.
inline DeskDataset generate_desk_dataset(const std::string& dir, std::uint64_t seed,
                                         const DatasetOptions& opts = {}) {
  generate_dataset(proportional_counts(kDeskTrainClips), seed, dir + "/train", "manifest.tsv",
                   opts);
  generate_dataset(proportional_counts(kDeskTestClips), seed + 1000000, dir + "/test",
                   "manifest.tsv", opts);
  return {dir + "/train/manifest.tsv", dir + "/test/manifest.tsv"};
}

// Frame differencing for plain grayscale footage: output t is 255 where
// |frame(t) - frame(t-1)| exceeds the threshold. Output length is one
// less than the input.
inline std::vector<EventFrame> rgb_diff_convert(const std::vector<EventFrame>& gray,
                                                int threshold) {
  if (gray.size() < 2) throw data_error("difference conversion needs at least two frames");
  std::vector<EventFrame> out;
  out.reserve(gray.size() - 1);
  for (std::size_t i = 1; i < gray.size(); ++i) {
    const EventFrame &a = gray[i - 1], &b = gray[i];
    if (a.width != b.width || a.height != b.height)
      throw data_error("frame dimensions differ in difference conversion");
    EventFrame d(b.width, b.height, b.t_us);
    for (std::size_t p = 0; p < d.pixels.size(); ++p)
      d.pixels[p] = std::abs(int(b.pixels[p]) - int(a.pixels[p])) > threshold ? 255 : 0;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace dvstn
