#pragma once

#include "omf/config.hpp"
#include "omf/temporal.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace omf {

enum class Color { red, green, blue, yellow, cyan, magenta, orange, purple };
enum class ShapeKind { circle, square, triangle, diamond };
enum class Motion { still, horizontal, vertical, diagonal };

inline constexpr int kColorCount = 8, kShapeCount = 4, kMotionCount = 4;

const char* color_name(Color c);
const char* shape_name(ShapeKind s);
const char* motion_word(Motion m);

/// The closed token vocabulary shared by the generator and the text embedder.
const std::vector<std::string>& vocabulary();
int token_id(const std::string& word);
std::string query_text(const std::vector<int>& tokens);

/// A moving shape. Its centre follows a ping-pong piecewise-linear path inside
/// [radius + 1, size - radius - 1] on each axis.
struct ObjectSpec {
  Color color = Color::red;
  ShapeKind shape = ShapeKind::circle;
  Motion motion = Motion::still;
  double radius = 8;
  double x0 = 32, y0 = 32;  // position at t = 0
  double vx = 0, vy = 0;    // pixels per frame before reflection

  std::pair<double, double> centre(int t, int height, int width) const;
  /// Analytic membership of the point (px, py) for a shape centred at (cx, cy).
  bool contains(double cx, double cy, double px, double py) const;
};

using Segment = std::pair<int, int>;  // [start, end)

struct VideoSample {
  std::string id;
  std::uint64_t seed = 0;
  Tensor<double> frames;  // [T, 3, H, W], values k/255
  std::vector<int> query;
  std::vector<Mask> masks;
  std::vector<std::array<double, 4>> boxes;  // normalized (cx, cy, w, h); zeros when absent
  std::vector<Segment> segments;
  std::vector<int> scene_starts;  // first frame of every scene after the first
  ObjectSpec target;
  std::vector<ObjectSpec> distractors;

  Index num_frames() const { return frames.dim(0); }
  std::vector<int> relevance() const;
  double ti() const;

  friend bool operator==(const VideoSample&, const VideoSample&);
};

/// Deterministic in (seed, cfg). With ti < 0 the TI rate is drawn from
/// [cfg.ti_min, cfg.ti_max]; otherwise the target covers round((1 - ti) T) frames.
/// ti == 1 yields an absent target.
VideoSample generate_sample(std::uint64_t seed, const SynthConfig& cfg, double ti = -1);

/// cfg.num_samples samples seeded seed, seed + 1, ...
std::vector<VideoSample> generate_dataset(std::uint64_t seed, const SynthConfig& cfg);

/// One sample per requested TI rate, seeds seed, seed + 1, ...
std::vector<VideoSample> make_ti_suite(std::uint64_t seed, const SynthConfig& cfg, const std::vector<double>& ti_targets);

}  // namespace omf
