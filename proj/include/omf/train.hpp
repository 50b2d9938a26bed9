#pragma once

#include "omf/dataset.hpp"
#include "omf/losses.hpp"

#include <functional>
#include <stdexcept>
#include <vector>

namespace omf {

struct MatchingError : std::logic_error {
  using std::logic_error::logic_error;
};

struct LossRecord {
  int step = 0;
  Index sample = 0, clip_start = 0, matched = 0;
  double total = 0, cls = 0, box = 0, mask = 0, span = 0, rel = 0;
};

template <typename Scalar>
struct TrainResult {
  ParameterSet<Scalar> params;
  std::vector<LossRecord> curve;
  int matching_checks = 0;
};

/// Per-query detection cost recomputed through the differentiable loss
/// functions, one query at a time.
template <typename Scalar>
std::vector<double> exhaustive_matching_costs(const ForwardOutputs<Scalar>& out, const GroundTruth<Scalar>& gt,
                                              const LossConfig& cfg);

/// Loss weights actually used for training: ablation switches zero terms.
LossConfig effective_loss(const RunConfig& cfg);

/// Ground truth for frames [start, start + length) of a sample.
template <typename Scalar>
GroundTruth<Scalar> clip_ground_truth(const VideoSample& s, Index start, Index length);

/// Frames [start, start + length) as [length, 3, H, W].
template <typename Scalar>
Tensor<Scalar> clip_frames(const VideoSample& s, Index start, Index length);

/// Adam (or SGD with momentum) on the weighted total loss over random clips of
/// cfg.train.t_train frames. Matching is verified against
/// exhaustive_matching_costs when cfg.train.check_matching is set or the
/// library is built with OMF_CHECK_MATCHING.
template <typename Scalar>
TrainResult<Scalar> train(const RunConfig& cfg, const std::vector<VideoSample>& data, ParameterSet<Scalar> params,
                          const std::function<void(const LossRecord&)>& on_step = {});

/// Full-video inference followed by assembly.
template <typename Scalar>
PredictionRecord infer_sample(const ParameterSet<Scalar>& params, const RunConfig& cfg, const VideoSample& s);

}  // namespace omf
