#pragma once

#include "omf/config.hpp"
#include "omf/model.hpp"

#include <array>
#include <stdexcept>
#include <vector>

namespace omf {

struct InvalidSpanError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Supervision for one clip. Boxes are normalized (cx, cy, w, h) and zero on
/// frames without the target. start/end bound the merged envelope of the
/// target's segments (inclusive); both are -1 when the target is absent.
/// A clip cut from a longer video may contain only part of the envelope: a
/// boundary that lies outside the clip is marked unobserved and gets no span
/// supervision.
template <typename Scalar>
struct GroundTruth {
  std::vector<Mask> masks;
  Tensor<Scalar> boxes;      // [T, 4]
  std::vector<int> relevant;  // r_hat, 0/1 per frame
  Index start = -1, end = -1;
  bool start_observed = true, end_observed = true;

  Index frames() const { return static_cast<Index>(masks.size()); }
  bool target_present() const { return start >= 0; }
  std::vector<Index> present_frames() const;
};

/// Derives boxes, relevance and the span envelope from per-frame masks.
template <typename Scalar>
GroundTruth<Scalar> make_ground_truth(std::vector<Mask> masks);

/// Tight normalized (cx, cy, w, h) box of a non-empty mask, in pixel-edge units.
std::array<double, 4> mask_box(const Mask& m);

/// Mean of -alpha_t (1 - p_t)^gamma log p_t with p clamped to [eps, 1 - eps].
template <typename Scalar>
Var<Scalar> focal_loss(Var<Scalar> p, const Tensor<Scalar>& y, Scalar alpha, Scalar gamma, Scalar eps);

/// 1 - 2 sum(P G) / (sum P + sum G + eps) over all elements, P = sigmoid(logits).
template <typename Scalar>
Var<Scalar> dice_loss(Var<Scalar> logits, const Tensor<Scalar>& target, Scalar eps);

/// Per-row 1 - gIoU of (cx, cy, w, h) boxes against constant targets, [N].
template <typename Scalar>
Var<Scalar> giou_loss(Var<Scalar> boxes, const Tensor<Scalar>& target);

/// mean |b - b_hat| + mean(1 - gIoU) over the rows of [N, 4].
template <typename Scalar>
Var<Scalar> box_loss(Var<Scalar> boxes, const Tensor<Scalar>& target);

/// Discrete Gaussians over T frames centred at start and at end, each summing to 1.
/// Returns [2, T].
template <typename Scalar>
Tensor<Scalar> gaussian_span_target(Index start, Index end, Index frames, double sigma_frac, double sigma_floor = 1.0);

/// KL(target || softmax(logits)) per row, summed over rows. logits, target: [R, T].
template <typename Scalar>
Var<Scalar> kl_span_loss(Var<Scalar> logits, const Tensor<Scalar>& target);

template <typename Scalar>
struct LossBreakdown {
  Var<Scalar> cls, box, mask, span, rel, total;
  Index matched = 0;
};

/// Detection cost 5*cls + 5*box + 2*mask of each query, from plain values.
template <typename Scalar>
std::vector<double> matching_costs(const PredictionSet<Scalar>& pred, const GroundTruth<Scalar>& gt,
                                   const LossConfig& cfg);

/// Least-cost query; ties go to the smallest index.
template <typename Scalar>
Index match_query(const PredictionSet<Scalar>& pred, const GroundTruth<Scalar>& gt, const LossConfig& cfg);

/// Weighted loss on query j. cls is a focal loss over all queries against a
/// one-hot target at j; the rest use query j only. Box, mask and span terms
/// are zero when the target is absent from the clip. Ablations zero weights.
template <typename Scalar>
LossBreakdown<Scalar> total_loss(const ForwardOutputs<Scalar>& out, const GroundTruth<Scalar>& gt, Index j,
                                 const LossConfig& cfg);

}  // namespace omf
