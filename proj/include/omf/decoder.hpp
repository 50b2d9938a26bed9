#pragma once

#include "omf/encoder.hpp"

namespace omf {

template <typename Scalar>
void add_decoder_params(ParameterSet<Scalar>& ps, const ModelConfig& cfg, std::mt19937_64& rng);

/// Pool the enhanced words over L, repeat N_q times, add learned offsets.
/// Returns [N_q, C_t].
template <typename Scalar>
Var<Scalar> make_queries(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> text);

/// Per-frame cross-attention of the queries to the coarsest enhanced scale;
/// the grid encoding enters the keys only. Returns f_obj as [T, N_q, C_t].
template <typename Scalar>
Var<Scalar> aggregate_objects(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> queries,
                              const EnhancedFeatures<Scalar>& features);

/// Fused finest-scale map fed to the dynamic head: [T, P, mask_dim + 2] where
/// the last two channels are normalized (y, x) pixel-centre coordinates.
template <typename Scalar>
Var<Scalar> fuse_pyramid(Binding<Scalar>& p, const ModelConfig& cfg, const EnhancedFeatures<Scalar>& features);

/// Mask logits [N_q, T, H, W] at input resolution.
template <typename Scalar>
Var<Scalar> decode_masks(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> objects,
                         const EnhancedFeatures<Scalar>& features);

/// Normalized (cx, cy, w, h) boxes [N_q, T, 4].
template <typename Scalar>
Var<Scalar> decode_boxes(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> objects);

}  // namespace omf
