#include "omf/synth.hpp"

#include "omf/losses.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace omf {

namespace {

constexpr std::array<const char*, kColorCount> kColorNames = {"red",     "green",  "blue",   "yellow",
                                                              "cyan",    "magenta", "orange", "purple"};
constexpr std::array<std::array<int, 3>, kColorCount> kColorRgb = {{{230, 30, 30},
                                                                    {30, 200, 40},
                                                                    {40, 70, 240},
                                                                    {240, 220, 30},
                                                                    {30, 220, 230},
                                                                    {220, 40, 220},
                                                                    {250, 140, 0},
                                                                    {130, 40, 200}}};
constexpr std::array<const char*, kShapeCount> kShapeNames = {"circle", "square", "triangle", "diamond"};
constexpr std::array<const char*, kMotionCount> kMotionWords = {"still", "horizontally", "vertically", "diagonally"};

double reflect(double u, double length) {
  if (length <= 0) return 0;
  u = std::fmod(u, 2 * length);
  if (u < 0) u += 2 * length;
  return u > length ? 2 * length - u : u;
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Splits `total` into `parts` non-negative integers, each at least `min_each`.
std::vector<int> random_partition(std::mt19937_64& rng, int total, int parts, const std::vector<int>& min_each) {
  std::vector<int> out(min_each);
  int rest = total;
  for (int m : min_each) rest -= m;
  for (int i = 0; i < rest; ++i) ++out[uniform_int(rng, 0, parts - 1)];
  return out;
}

std::vector<Segment> sample_segments(std::mt19937_64& rng, int frames, int present, int count) {
  if (present == 0) return {};
  count = std::max(1, std::min({count, present, frames - present + 1}));
  const auto lengths = random_partition(rng, present, count, std::vector<int>(count, 1));
  std::vector<int> gap_min(count + 1, 1);
  gap_min.front() = gap_min.back() = 0;
  const auto gaps = random_partition(rng, frames - present, count + 1, gap_min);
  std::vector<Segment> out;
  int t = 0;
  for (int i = 0; i < count; ++i) {
    t += gaps[i];
    out.emplace_back(t, t + lengths[i]);
    t += lengths[i];
  }
  return out;
}

ObjectSpec random_object(std::mt19937_64& rng, const SynthConfig& cfg, Color c, ShapeKind s, Motion m) {
  ObjectSpec o;
  o.color = c, o.shape = s, o.motion = m;
  o.radius = uniform(rng, cfg.min_radius, cfg.max_radius);
  const double lo = o.radius + 1;
  o.x0 = uniform(rng, lo, cfg.width - lo);
  o.y0 = uniform(rng, lo, cfg.height - lo);
  const double speed = uniform(rng, 1.0, 2.0);
  const double sx = uniform_int(rng, 0, 1) ? 1.0 : -1.0, sy = uniform_int(rng, 0, 1) ? 1.0 : -1.0;
  if (m == Motion::horizontal || m == Motion::diagonal) o.vx = sx * speed;
  if (m == Motion::vertical || m == Motion::diagonal) o.vy = sy * speed;
  return o;
}

void paint(Tensor<double>& frames, int t, const ObjectSpec& o, int h, int w, Mask* mask) {
  const auto [cx, cy] = o.centre(t, h, w);
  const auto& rgb = kColorRgb[static_cast<int>(o.color)];
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - o.radius - 1)));
  const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + o.radius + 1)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - o.radius - 1)));
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + o.radius + 1)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      if (!o.contains(cx, cy, x + 0.5, y + 0.5)) continue;
      for (int k = 0; k < 3; ++k) frames.at({t, k, y, x}) = rgb[k] / 255.0;
      if (mask) (*mask)(y, x) = true;
    }
}

}  // namespace

const char* color_name(Color c) { return kColorNames[static_cast<int>(c)]; }
const char* shape_name(ShapeKind s) { return kShapeNames[static_cast<int>(s)]; }
const char* motion_word(Motion m) { return kMotionWords[static_cast<int>(m)]; }

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> v = {"<pad>", "the", "a", "that", "is", "moving"};
    for (const char* c : kColorNames) v.emplace_back(c);
    for (const char* s : kShapeNames) v.emplace_back(s);
    for (const char* m : kMotionWords) v.emplace_back(m);
    return v;
  }();
  return words;
}

int token_id(const std::string& word) {
  const auto& v = vocabulary();
  const auto it = std::find(v.begin(), v.end(), word);
  if (it == v.end()) throw std::invalid_argument("unknown word: " + word);
  return static_cast<int>(it - v.begin());
}

std::string query_text(const std::vector<int>& tokens) {
  std::string out;
  for (int id : tokens) {
    if (!out.empty()) out += ' ';
    out += vocabulary().at(static_cast<std::size_t>(id));
  }
  return out;
}

std::pair<double, double> ObjectSpec::centre(int t, int height, int width) const {
  const double lo = radius + 1;
  const double x = lo + reflect(x0 - lo + vx * t, width - 2 * lo);
  const double y = lo + reflect(y0 - lo + vy * t, height - 2 * lo);
  return {x, y};
}

bool ObjectSpec::contains(double cx, double cy, double px, double py) const {
  const double dx = px - cx, dy = py - cy;
  switch (shape) {
    case ShapeKind::circle:
      return dx * dx + dy * dy <= radius * radius;
    case ShapeKind::square:
      return std::abs(dx) <= 0.85 * radius && std::abs(dy) <= 0.85 * radius;
    case ShapeKind::diamond:
      return std::abs(dx) + std::abs(dy) <= 1.2 * radius;
    case ShapeKind::triangle:
      // Apex up at -radius, base at +0.8 radius with half-width radius.
      return dy >= -radius && dy <= 0.8 * radius && std::abs(dx) <= (dy + radius) / 1.8;
  }
  return false;
}

std::vector<int> VideoSample::relevance() const {
  std::vector<int> r(static_cast<std::size_t>(num_frames()), 0);
  for (const auto& [s, e] : segments)
    for (int t = s; t < e; ++t) r[t] = 1;
  return r;
}

double VideoSample::ti() const {
  const auto r = relevance();
  return static_cast<double>(std::count(r.begin(), r.end(), 0)) / static_cast<double>(r.size());
}

namespace {

bool same_object(const ObjectSpec& a, const ObjectSpec& b) {
  return a.color == b.color && a.shape == b.shape && a.motion == b.motion && a.radius == b.radius && a.x0 == b.x0 &&
         a.y0 == b.y0 && a.vx == b.vx && a.vy == b.vy;
}

}  // namespace

bool operator==(const VideoSample& a, const VideoSample& b) {
  if (a.id != b.id || a.seed != b.seed || !(a.frames == b.frames) || a.query != b.query || a.boxes != b.boxes ||
      a.segments != b.segments || a.scene_starts != b.scene_starts || !same_object(a.target, b.target) ||
      a.distractors.size() != b.distractors.size() || a.masks.size() != b.masks.size())
    return false;
  for (std::size_t i = 0; i < a.masks.size(); ++i)
    if (a.masks[i].rows() != b.masks[i].rows() || a.masks[i].cols() != b.masks[i].cols() ||
        (a.masks[i] != b.masks[i]).any())
      return false;
  for (std::size_t i = 0; i < a.distractors.size(); ++i)
    if (!same_object(a.distractors[i], b.distractors[i])) return false;
  return true;
}

VideoSample generate_sample(std::uint64_t seed, const SynthConfig& cfg, double ti) {
  const int frames = cfg.num_frames, h = cfg.height, w = cfg.width;
  if (frames < 8) throw ConfigError("synth: num_frames must be at least 8");
  if (cfg.min_radius <= 0 || cfg.max_radius < cfg.min_radius) throw ConfigError("synth: bad radius range");
  if (2 * cfg.max_radius + 4 > std::min(h, w)) throw ConfigError("synth: shapes do not fit the canvas");
  if (cfg.scene_cuts < 0 || cfg.scene_cuts > frames - 1) throw ConfigError("synth: bad scene cut count");
  if (cfg.num_distractors < 0 || cfg.num_segments < 0) throw ConfigError("synth: negative counts");
  if (cfg.ti_min < 0 || cfg.ti_max > 1 || cfg.ti_min > cfg.ti_max) throw ConfigError("synth: bad TI range");

  std::mt19937_64 rng(seed);
  VideoSample s;
  s.id = "sample_" + std::to_string(seed);
  s.seed = seed;

  const auto tc = static_cast<Color>(uniform_int(rng, 0, kColorCount - 1));
  const auto ts = static_cast<ShapeKind>(uniform_int(rng, 0, kShapeCount - 1));
  const auto tm = static_cast<Motion>(uniform_int(rng, 0, kMotionCount - 1));
  s.target = random_object(rng, cfg, tc, ts, tm);
  // Distractors share at least one attribute with the target but always
  // differ in color or shape, so the full query singles out the target.
  while (static_cast<int>(s.distractors.size()) < cfg.num_distractors) {
    const auto c = static_cast<Color>(uniform_int(rng, 0, kColorCount - 1));
    const auto sh = static_cast<ShapeKind>(uniform_int(rng, 0, kShapeCount - 1));
    const auto m = static_cast<Motion>(uniform_int(rng, 0, kMotionCount - 1));
    if ((c == tc && sh == ts) || (c != tc && sh != ts && m != tm)) continue;
    s.distractors.push_back(random_object(rng, cfg, c, sh, m));
  }
  int matching = 1;
  for (const auto& d : s.distractors) matching += d.color == tc && d.shape == ts && d.motion == tm;
  if (matching != 1) throw std::logic_error("synth: query does not identify a unique object");

  s.query = {token_id("the"), token_id(color_name(tc)), token_id(shape_name(ts)), token_id("that"), token_id("is")};
  if (tm != Motion::still) s.query.push_back(token_id("moving"));
  s.query.push_back(token_id(motion_word(tm)));

  const double rate = ti >= 0 ? ti : uniform(rng, cfg.ti_min, cfg.ti_max);
  const int present =
      cfg.num_segments == 0 ? 0 : static_cast<int>(std::lround((1.0 - std::clamp(rate, 0.0, 1.0)) * frames));
  s.segments = sample_segments(rng, frames, present, cfg.num_segments);

  std::vector<int> cuts;
  while (static_cast<int>(cuts.size()) < cfg.scene_cuts) {
    const int c = uniform_int(rng, 1, frames - 1);
    if (std::find(cuts.begin(), cuts.end(), c) == cuts.end()) cuts.push_back(c);
  }
  std::sort(cuts.begin(), cuts.end());
  s.scene_starts = cuts;

  bool dark = uniform_int(rng, 0, 1) == 0;
  std::vector<int> background;
  for (int i = 0; i <= cfg.scene_cuts; ++i) {
    background.push_back(dark ? uniform_int(rng, 13, 64) : uniform_int(rng, 191, 242));
    dark = !dark;
  }

  s.frames = Tensor<double>({frames, 3, h, w});
  s.masks.assign(static_cast<std::size_t>(frames), Mask::Zero(h, w));
  s.boxes.assign(static_cast<std::size_t>(frames), {0, 0, 0, 0});
  const auto relevant = s.relevance();
  int scene = 0;
  for (int t = 0; t < frames; ++t) {
    while (scene < cfg.scene_cuts && t >= cuts[scene]) ++scene;
    const double bg = background[scene] / 255.0;
    for (Index i = 0; i < 3 * h * w; ++i) s.frames[t * 3 * h * w + i] = bg;
    for (const auto& d : s.distractors) paint(s.frames, t, d, h, w, nullptr);
    if (relevant[t]) {
      paint(s.frames, t, s.target, h, w, &s.masks[t]);
      s.boxes[t] = mask_box(s.masks[t]);
    }
  }
  return s;
}

std::vector<VideoSample> generate_dataset(std::uint64_t seed, const SynthConfig& cfg) {
  if (!cfg.ti_targets.empty()) return make_ti_suite(seed, cfg, cfg.ti_targets);
  std::vector<VideoSample> out;
  for (int i = 0; i < cfg.num_samples; ++i) out.push_back(generate_sample(seed + static_cast<std::uint64_t>(i), cfg));
  return out;
}

std::vector<VideoSample> make_ti_suite(std::uint64_t seed, const SynthConfig& cfg, const std::vector<double>& ti_targets) {
  std::vector<VideoSample> out;
  for (std::size_t i = 0; i < ti_targets.size(); ++i) {
    if (ti_targets[i] < 0 || ti_targets[i] > 1) throw ConfigError("synth: TI target outside [0, 1]");
    out.push_back(generate_sample(seed + i, cfg, ti_targets[i]));
  }
  return out;
}

}  // namespace omf
