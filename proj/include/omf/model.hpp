#pragma once

#include "omf/decoder.hpp"
#include "omf/encoder.hpp"
#include "omf/temporal.hpp"

#include <cstdint>

namespace omf {

/// Graph-level outputs of one forward pass over a clip of T frames.
template <typename Scalar>
struct ForwardOutputs {
  Var<Scalar> mask_logits;  // [N_q, T, H, W]
  Var<Scalar> boxes;        // [N_q, T, 4]
  Var<Scalar> span_logits;  // [N_q, T, 2]  (start, end)
  Var<Scalar> seq_logits;   // [N_q]
  Var<Scalar> rel_logits;   // [N_q, T]
};

template <typename Scalar>
ParameterSet<Scalar> init_parameters(const ModelConfig& cfg, std::uint64_t seed);

/// frames: [T, 3, H, W] constant or leaf; query: token ids. first_frame is
/// the video index of frames[0] when the input is a clip.
template <typename Scalar>
ForwardOutputs<Scalar> forward(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> frames,
                               const std::vector<int>& query, Index first_frame = 0);

/// Plain probabilities from the head logits. The span loss is invariant to a
/// per-row shift of the span logits, so their level carries no information
/// and may drift far into sigmoid saturation; tau is therefore
/// sigmoid(z - max_t z), which peaks at exactly 0.5 and keeps the argmax.
template <typename Scalar>
PredictionSet<Scalar> to_prediction_set(const ForwardOutputs<Scalar>& out);

/// Inference without gradients.
template <typename Scalar>
PredictionSet<Scalar> predict(const ParameterSet<Scalar>& params, const ModelConfig& cfg, const Tensor<Scalar>& frames,
                              const std::vector<int>& query);

}  // namespace omf
