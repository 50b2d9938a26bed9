#pragma once

#include "omf/config.hpp"
#include "omf/layers.hpp"

#include <Eigen/Core>

#include <vector>

namespace omf {

template <typename Scalar>
void add_temporal_params(ParameterSet<Scalar>& ps, const ModelConfig& cfg, std::mt19937_64& rng);

/// Pre-norm self-attention blocks over the T axis, one sequence per query.
/// objects: [T, N_q, C_t] -> [N_q, T, C_t]. Positions are video frame
/// indices, so a clip starting at frame `first_frame` is encoded as it would
/// be inside the whole video.
template <typename Scalar>
Var<Scalar> temporal_encode(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> objects, Index first_frame = 0);

template <typename Scalar>
struct TemporalFeatures {
  Var<Scalar> seq;  // [N_q, T, C_t]
  Var<Scalar> rel;  // [N_q, T, C_t]
};

/// Sequence and relevance branches. The sequence branch refines the
/// temporally-encoded features, the relevance branch the per-frame object
/// features; both attend to the words. With cfg.coupled_srd the two streams
/// and the words are instead mixed by joint self-attention.
/// text [L, C_t], objects [T, N_q, C_t], queries [N_q, C_t], temporal [N_q, T, C_t].
template <typename Scalar>
TemporalFeatures<Scalar> srd_decode(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> text, Var<Scalar> objects,
                                    Var<Scalar> queries, Var<Scalar> temporal);

/// Start/end logits [N_q, T, 2]; probabilities are their sigmoid.
template <typename Scalar>
Var<Scalar> span_head(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> seq);
/// Sequence alignment logits [N_q] from f_seq pooled over T.
template <typename Scalar>
Var<Scalar> sequence_head(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> seq);
/// Frame relevance logits [N_q, T].
template <typename Scalar>
Var<Scalar> relevance_head(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> rel);

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Head outputs as plain values; probabilities, not logits.
template <typename Scalar>
struct PredictionSet {
  Tensor<Scalar> tau_s, tau_e;  // [N_q, T]
  Tensor<Scalar> c;             // [N_q]
  Tensor<Scalar> r;             // [N_q, T]
  Tensor<Scalar> mask_logits;   // [N_q, T, H, W]
  Tensor<Scalar> boxes;         // [N_q, T, 4]
};

struct FinalOutput {
  Index query = 0;
  Index t_start = 0, t_end = -1;  // inclusive; t_end < t_start means empty
  std::vector<Mask> masks;        // T masks of H x W

  bool span_empty() const { return t_end < t_start; }
};

/// Index of the first maximum.
template <typename Scalar>
Index first_argmax(const Scalar* values, Index n);

/// Selects the query with the highest alignment and gates its binarized
/// masks by the predicted span. With use_span false the span is the whole clip.
template <typename Scalar>
FinalOutput assemble(const PredictionSet<Scalar>& pred, bool use_span = true);

}  // namespace omf
