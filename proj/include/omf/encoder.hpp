#pragma once

#include "omf/config.hpp"
#include "omf/layers.hpp"

#include <stdexcept>
#include <vector>

namespace omf {

struct VocabError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Multi-scale dense features for a run of consecutive frames. Scale i has
/// shape [T, C_i, H_i, W_i]; spatial size halves from one scale to the next.
template <typename Scalar>
struct FeaturePyramid {
  std::vector<Var<Scalar>> scales;
};

/// Word features [L, C_t].
template <typename Scalar>
struct TextFeatures {
  Var<Scalar> tokens;
};

/// Output of the mutual cross-attention stage.
template <typename Scalar>
struct EnhancedFeatures {
  FeaturePyramid<Scalar> visual;     // backbone features, kept for the FPN laterals
  std::vector<Var<Scalar>> tokens;   // per scale [T, H_i*W_i, C_t], row-major (H then W)
  std::vector<Index> heights, widths;
  TextFeatures<Scalar> text;         // enhanced words [L, C_t]
};

template <typename Scalar>
void add_encoder_params(ParameterSet<Scalar>& ps, const ModelConfig& cfg, std::mt19937_64& rng);

/// frames: [T, 3, H, W] with H, W divisible by stem_stride * 2^(N-1).
template <typename Scalar>
FeaturePyramid<Scalar> encode_frames(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> frames);

template <typename Scalar>
TextFeatures<Scalar> embed_query(Binding<Scalar>& p, const ModelConfig& cfg, const std::vector<int>& token_ids);

/// Visual tokens attend to the words; the words are then refined residually,
/// scale by scale, by attending to the enhanced visual tokens of every frame.
template <typename Scalar>
EnhancedFeatures<Scalar> enhance(Binding<Scalar>& p, const ModelConfig& cfg, const FeaturePyramid<Scalar>& pyramid,
                                 const TextFeatures<Scalar>& text);

/// Parameter prefix of the text-update attention at `scale` (0-based).
std::string text_attention_prefix(const ModelConfig& cfg, int scale);

}  // namespace omf
