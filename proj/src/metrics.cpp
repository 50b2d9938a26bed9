#include "omf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace omf {

double region_j(const Mask& pred, const Mask& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) throw ShapeError("region_j: mask size mismatch");
  const auto inter = (pred && gt).count();
  const auto uni = (pred || gt).count();
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Mask boundary(const Mask& m) {
  const Index h = m.rows(), w = m.cols();
  Mask out = Mask::Zero(h, w);
  auto bg = [&](Index y, Index x) { return y < 0 || x < 0 || y >= h || x >= w || !m(y, x); };
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      out(y, x) = m(y, x) && (bg(y - 1, x) || bg(y + 1, x) || bg(y, x - 1) || bg(y, x + 1));
  return out;
}

Index contour_tolerance(Index height, Index width, double frac) {
  const double diag = std::sqrt(static_cast<double>(height * height + width * width));
  return static_cast<Index>(std::ceil(frac * diag));
}

namespace {

// Fraction of `from` boundary pixels with a `to` boundary pixel within r.
double matched_fraction(const Mask& from, const Mask& to, Index r) {
  const Index h = from.rows(), w = from.cols();
  Index total = 0, hit = 0;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      if (!from(y, x)) continue;
      ++total;
      const Index y0 = std::max<Index>(0, y - r), y1 = std::min(h - 1, y + r);
      const Index x0 = std::max<Index>(0, x - r), x1 = std::min(w - 1, x + r);
      if (to.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1).any()) ++hit;
    }
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

double contour_f(const Mask& pred, const Mask& gt, Index tolerance) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) throw ShapeError("contour_f: mask size mismatch");
  const Mask bp = boundary(pred), bg = boundary(gt);
  const bool ep = !bp.any(), eg = !bg.any();
  if (ep && eg) return 1.0;
  if (ep || eg) return 0.0;
  const double precision = matched_fraction(bp, bg, tolerance);
  const double recall = matched_fraction(bg, bp, tolerance);
  return precision + recall == 0 ? 0.0 : 2 * precision * recall / (precision + recall);
}

double tiou(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size()) throw ShapeError("tiou: length mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    inter += pred[t] && gt[t];
    uni += pred[t] || gt[t];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double ti_rate(const std::vector<int>& gt_frames) {
  if (gt_frames.empty()) throw ShapeError("ti_rate: empty video");
  const auto absent = std::count(gt_frames.begin(), gt_frames.end(), 0);
  return static_cast<double>(absent) / static_cast<double>(gt_frames.size());
}

std::vector<int> occupied_frames(const std::vector<Mask>& masks) {
  std::vector<int> out;
  for (const auto& m : masks) out.push_back(m.any() ? 1 : 0);
  return out;
}

ExpressionMetrics evaluate_expression(const FinalOutput& pred, const std::vector<Mask>& gt, const EvalConfig& cfg,
                                      std::string id) {
  if (pred.masks.size() != gt.size()) throw ShapeError("evaluate_expression: frame count mismatch");
  ExpressionMetrics m;
  m.id = std::move(id);
  const Index frames = static_cast<Index>(gt.size());
  if (frames == 0) throw ShapeError("evaluate_expression: empty video");
  const Index tol = contour_tolerance(gt[0].rows(), gt[0].cols(), cfg.contour_tolerance_frac);

  double j = 0, f = 0;
  Index counted = 0;
  for (Index t = 0; t < frames; ++t) {
    if (!pred.masks[t].any() && !gt[t].any()) continue;
    j += region_j(pred.masks[t], gt[t]);
    f += contour_f(pred.masks[t], gt[t], tol);
    ++counted;
  }
  m.j = counted ? j / static_cast<double>(counted) : 1.0;
  m.f = counted ? f / static_cast<double>(counted) : 1.0;
  m.jf = (m.j + m.f) / 2;

  std::vector<int> span(static_cast<std::size_t>(frames), 0);
  for (Index t = std::max<Index>(0, pred.t_start); t <= std::min(frames - 1, pred.t_end); ++t) span[t] = 1;
  const auto occupied = occupied_frames(gt);
  m.tiou = tiou(span, occupied);
  m.ti = ti_rate(occupied);
  return m;
}

const std::array<const char*, 3> kBucketNames = {"0%-33%", "33%-66%", "66%-100%"};

int ti_bucket(double ti) {
  if (ti <= 1.0 / 3.0) return 0;
  if (ti <= 2.0 / 3.0) return 1;
  return 2;
}

namespace {

GroupMetrics mean_of(const std::vector<const ExpressionMetrics*>& items, std::string range) {
  GroupMetrics g;
  g.range = std::move(range);
  g.count = static_cast<Index>(items.size());
  for (const auto* e : items) g.j += e->j, g.f += e->f, g.tiou += e->tiou;
  const double n = static_cast<double>(items.size());
  g.j /= n, g.f /= n, g.tiou /= n;
  g.jf = (g.j + g.f) / 2;
  return g;
}

nlohmann::json group_json(const GroupMetrics& g) {
  return {{"range", g.range}, {"count", g.count}, {"j", g.j}, {"f", g.f}, {"jf", g.jf}, {"tiou", g.tiou}};
}

}  // namespace

MetricsReport grouped_report(const std::vector<ExpressionMetrics>& metrics) {
  if (metrics.empty()) throw std::invalid_argument("grouped_report: no expressions");
  MetricsReport r;
  r.per_expression = metrics;
  std::vector<const ExpressionMetrics*> all;
  std::array<std::vector<const ExpressionMetrics*>, 3> groups;
  for (const auto& m : metrics) {
    all.push_back(&m);
    groups[ti_bucket(m.ti)].push_back(&m);
  }
  r.overall = mean_of(all, "all");
  for (int b = 0; b < 3; ++b)
    if (!groups[b].empty()) r.buckets[b] = mean_of(groups[b], kBucketNames[b]);
  return r;
}

nlohmann::json report_to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["overall"] = group_json(report.overall);
  j["buckets"] = nlohmann::json::array();
  for (int b = 0; b < 3; ++b) {
    if (report.buckets[b]) {
      j["buckets"].push_back(group_json(*report.buckets[b]));
    } else {
      j["buckets"].push_back({{"range", kBucketNames[b]}, {"count", 0}});
    }
  }
  j["per_expression"] = nlohmann::json::array();
  for (const auto& e : report.per_expression)
    j["per_expression"].push_back(
        {{"id", e.id}, {"j", e.j}, {"f", e.f}, {"jf", e.jf}, {"tiou", e.tiou}, {"ti", e.ti}});
  return j;
}

std::string report_table(const MetricsReport& report) {
  std::ostringstream os;
  char line[160];
  auto cell = [](const std::optional<GroupMetrics>& g, double GroupMetrics::*field) {
    char buf[16];
    if (!g) return std::string("    -");
    std::snprintf(buf, sizeof buf, "%5.1f", 100 * ((*g).*field));
    return std::string(buf);
  };
  std::snprintf(line, sizeof line, "%-10s |", "");
  os << line;
  for (int b = 0; b < 3; ++b) {
    const Index n = report.buckets[b] ? report.buckets[b]->count : 0;
    std::snprintf(line, sizeof line, " %-17s |", (std::string(kBucketNames[b]) + " (" + std::to_string(n) + ")").c_str());
    os << line;
  }
  std::snprintf(line, sizeof line, " %-17s\n", ("all (" + std::to_string(report.overall.count) + ")").c_str());
  os << line;
  std::snprintf(line, sizeof line, "%-10s |", "");
  os << line;
  for (int b = 0; b < 4; ++b) os << "   J&F      tIoU  " << (b < 3 ? " |" : "\n");
  os << std::string(10, '-') << "-+" << std::string(19, '-') << '+' << std::string(19, '-') << '+'
     << std::string(19, '-') << '+' << std::string(19, '-') << '\n';
  std::snprintf(line, sizeof line, "%-10s |", "model");
  os << line;
  for (int b = 0; b < 3; ++b)
    os << "  " << cell(report.buckets[b], &GroupMetrics::jf) << "     " << cell(report.buckets[b], &GroupMetrics::tiou)
       << "   |";
  const std::optional<GroupMetrics> all = report.overall;
  os << "  " << cell(all, &GroupMetrics::jf) << "     " << cell(all, &GroupMetrics::tiou) << '\n';
  return os.str();
}

template <typename Scalar>
Index detect_scenes(const Tensor<Scalar>& frames, double threshold) {
  if (frames.rank() != 4) throw ShapeError("detect_scenes: frames must be [T, C, H, W]");
  const Index t_count = frames.dim(0);
  if (t_count == 0) return 0;
  const Index per = frames.size() / t_count;
  Index scenes = 1;
  for (Index t = 1; t < t_count; ++t) {
    const auto a = frames.data().segment(t * per, per).array();
    const auto b = frames.data().segment((t - 1) * per, per).array();
    if (static_cast<double>((a - b).abs().mean()) > threshold) ++scenes;
  }
  return scenes;
}

template Index detect_scenes<float>(const Tensor<float>&, double);
template Index detect_scenes<double>(const Tensor<double>&, double);

}  // namespace omf
