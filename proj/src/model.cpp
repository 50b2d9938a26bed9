#include "omf/model.hpp"

#include <cmath>

namespace omf {

template <typename Scalar>
ParameterSet<Scalar> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParameterSet<Scalar> ps;
  add_encoder_params(ps, cfg, rng);
  add_decoder_params(ps, cfg, rng);
  add_temporal_params(ps, cfg, rng);
  return ps;
}

template <typename Scalar>
ForwardOutputs<Scalar> forward(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> frames,
                               const std::vector<int>& query, Index first_frame) {
  const auto pyramid = encode_frames(p, cfg, frames);
  const auto text = embed_query(p, cfg, query);
  const auto enhanced = enhance(p, cfg, pyramid, text);
  const auto queries = make_queries(p, cfg, enhanced.text.tokens);
  const auto objects = aggregate_objects(p, cfg, queries, enhanced);

  ForwardOutputs<Scalar> out;
  out.mask_logits = decode_masks(p, cfg, objects, enhanced);
  out.boxes = decode_boxes(p, cfg, objects);
  const auto temporal = temporal_encode(p, cfg, objects, first_frame);
  const auto srd = srd_decode(p, cfg, enhanced.text.tokens, objects, queries, temporal);
  out.span_logits = span_head(p, cfg, srd.seq);
  out.seq_logits = sequence_head(p, cfg, srd.seq);
  out.rel_logits = relevance_head(p, cfg, srd.rel);
  return out;
}

namespace {

template <typename Scalar>
Tensor<Scalar> sigmoid_of(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  for (Index i = 0; i < x.size(); ++i) out[i] = Scalar(1) / (Scalar(1) + std::exp(-x[i]));
  return out;
}

}  // namespace

template <typename Scalar>
PredictionSet<Scalar> to_prediction_set(const ForwardOutputs<Scalar>& out) {
  PredictionSet<Scalar> pred;
  const auto& span = out.span_logits.value();
  const Index nq = span.dim(0), frames = span.dim(1);
  pred.tau_s = Tensor<Scalar>({nq, frames});
  pred.tau_e = Tensor<Scalar>({nq, frames});
  for (Index q = 0; q < nq; ++q)
    for (Index r = 0; r < 2; ++r) {
      Tensor<Scalar>& tau = r == 0 ? pred.tau_s : pred.tau_e;
      Scalar top = span[2 * q * frames + r];
      for (Index t = 1; t < frames; ++t) top = std::max(top, span[2 * (q * frames + t) + r]);
      for (Index t = 0; t < frames; ++t)
        tau[q * frames + t] = Scalar(1) / (Scalar(1) + std::exp(top - span[2 * (q * frames + t) + r]));
    }
  pred.c = sigmoid_of(out.seq_logits.value());
  pred.r = sigmoid_of(out.rel_logits.value());
  pred.mask_logits = out.mask_logits.value();
  pred.boxes = out.boxes.value();
  return pred;
}

template <typename Scalar>
PredictionSet<Scalar> predict(const ParameterSet<Scalar>& params, const ModelConfig& cfg, const Tensor<Scalar>& frames,
                              const std::vector<int>& query) {
  Graph<Scalar> g;
  Binding<Scalar> p(g, params, false);
  return to_prediction_set(forward(p, cfg, g.constant(frames), query));
}

#define OMF_INSTANTIATE_MODEL(S)                                                                                 \
  template ParameterSet<S> init_parameters<S>(const ModelConfig&, std::uint64_t);                                \
  template ForwardOutputs<S> forward<S>(Binding<S>&, const ModelConfig&, Var<S>, const std::vector<int>&, Index); \
  template PredictionSet<S> to_prediction_set<S>(const ForwardOutputs<S>&);                                      \
  template PredictionSet<S> predict<S>(const ParameterSet<S>&, const ModelConfig&, const Tensor<S>&,             \
                                       const std::vector<int>&);

OMF_INSTANTIATE_MODEL(float)
OMF_INSTANTIATE_MODEL(double)

}  // namespace omf
