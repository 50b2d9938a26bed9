#pragma once

#include "omf/config.hpp"
#include "omf/temporal.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace omf {

/// Pixel IoU; 1 when both masks are empty.
double region_j(const Mask& pred, const Mask& gt);

/// Foreground pixels with at least one background 4-neighbour; pixels outside
/// the image count as background.
Mask boundary(const Mask& m);

/// ceil(frac * image diagonal).
Index contour_tolerance(Index height, Index width, double frac);

/// Boundary F-measure. A boundary pixel is matched when a boundary pixel of
/// the other mask lies within `tolerance` in Chebyshev distance.
double contour_f(const Mask& pred, const Mask& gt, Index tolerance);

/// Frame-set IoU of two indicator sequences; 1 when both are empty.
double tiou(const std::vector<int>& pred, const std::vector<int>& gt);

/// Fraction of frames without the target.
double ti_rate(const std::vector<int>& gt_frames);

/// Indicator of frames holding a non-empty mask.
std::vector<int> occupied_frames(const std::vector<Mask>& masks);

struct ExpressionMetrics {
  std::string id;
  double j = 0, f = 0, jf = 0, tiou = 0, ti = 0;
};

/// J and F are averaged over frames where the prediction or the ground truth
/// is non-empty (1 if there are none); the predicted frame set is the span.
ExpressionMetrics evaluate_expression(const FinalOutput& pred, const std::vector<Mask>& gt, const EvalConfig& cfg,
                                      std::string id = {});

struct GroupMetrics {
  std::string range;
  Index count = 0;
  double j = 0, f = 0, jf = 0, tiou = 0;
};

/// Overall and per-TI-bucket means; a bucket without expressions is absent.
struct MetricsReport {
  GroupMetrics overall;
  std::array<std::optional<GroupMetrics>, 3> buckets;
  std::vector<ExpressionMetrics> per_expression;
};

/// Bucket of a TI rate: [0, 1/3], (1/3, 2/3], (2/3, 1].
int ti_bucket(double ti);
extern const std::array<const char*, 3> kBucketNames;

MetricsReport grouped_report(const std::vector<ExpressionMetrics>& metrics);
nlohmann::json report_to_json(const MetricsReport& report);
std::string report_table(const MetricsReport& report);

/// Number of scenes: one plus the number of consecutive-frame pairs whose mean
/// absolute difference exceeds `threshold`. frames: [T, C, H, W].
template <typename Scalar>
Index detect_scenes(const Tensor<Scalar>& frames, double threshold);

}  // namespace omf
