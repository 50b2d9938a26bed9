#include "omf/decoder.hpp"

#include <cmath>

namespace omf {

namespace {

std::string scale_name(const char* base, int i) { return std::string(base) + std::to_string(i); }

template <typename Scalar>
Tensor<Scalar> coordinate_channels(Index frames, Index h, Index w) {
  Tensor<Scalar> out({frames, h * w, 2});
  for (Index t = 0; t < frames; ++t)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        out.at({t, y * w + x, 0}) = static_cast<Scalar>((static_cast<double>(y) + 0.5) / static_cast<double>(h));
        out.at({t, y * w + x, 1}) = static_cast<Scalar>((static_cast<double>(x) + 0.5) / static_cast<double>(w));
      }
  return out;
}

}  // namespace

template <typename Scalar>
void add_decoder_params(ParameterSet<Scalar>& ps, const ModelConfig& cfg, std::mt19937_64& rng) {
  const Index ct = cfg.text_dim, cm = cfg.mask_dim;
  ps.add("dec.query_offsets", normal_init<Scalar>({cfg.num_queries, ct}, 1.0, rng));
  add_attention(ps, "dec.obj_attn", ct, ct, ct, rng);
  for (int i = 0; i < cfg.num_scales; ++i) {
    add_conv(ps, scale_name("dec.lat", i), cfg.scale_channels[i], cm, 1, rng);
    add_conv(ps, scale_name("dec.lat_enh", i), ct, cm, 1, rng);
  }
  add_conv(ps, "dec.smooth", cm, cm, 3, rng);
  const Index k = dynamic_param_count(cm + 2, cfg.dynamic_hidden);
  ps.add("dec.controller.w", normal_init<Scalar>({ct, k}, 0.3 / std::sqrt(static_cast<double>(ct)), rng));
  ps.add("dec.controller.b", Tensor<Scalar>::zeros({k}));
  add_linear(ps, "dec.box1", ct, ct, rng);
  add_linear(ps, "dec.box2", ct, 4, rng);
}

template <typename Scalar>
Var<Scalar> make_queries(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> text) {
  if (text.rank() != 2 || text.dim(0) < 1) throw ShapeError("make_queries: text must be [L, C_t] with L >= 1");
  const Index ct = text.dim(1);
  const auto pooled = reshape(mean_axis(text, 0), {1, ct});
  return reshape(repeat_leading(pooled, cfg.num_queries), {Index(cfg.num_queries), ct}) + p["dec.query_offsets"];
}

template <typename Scalar>
Var<Scalar> aggregate_objects(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> queries,
                              const EnhancedFeatures<Scalar>& features) {
  if (features.tokens.empty()) throw ShapeError("aggregate_objects: no scales");
  const Var<Scalar> top = features.tokens.back();
  const Index frames = top.dim(0);
  const Index ct = cfg.text_dim;
  if (queries.rank() != 2 || queries.dim(1) != ct || top.dim(2) != ct) throw ShapeError("aggregate_objects: width mismatch");
  const auto pos = p.graph().constant(grid_encoding<Scalar>(features.heights.back(), features.widths.back(), ct));
  return cross_attention(p, "dec.obj_attn", repeat_leading(queries, frames), add_broadcast(top, pos), top, cfg.num_heads);
}

template <typename Scalar>
Var<Scalar> fuse_pyramid(Binding<Scalar>& p, const ModelConfig& cfg, const EnhancedFeatures<Scalar>& features) {
  const int n = cfg.num_scales;
  if (n < 2) throw ShapeError("fuse_pyramid: need at least two scales");
  Var<Scalar> fused;
  for (int i = n - 1; i >= 0; --i) {
    const Var<Scalar> raw = features.visual.scales[i];
    const Index frames = raw.dim(0), h = features.heights[i], w = features.widths[i];
    const auto enh = permute(reshape(features.tokens[i], {frames, h, w, Index(cfg.text_dim)}), {0, 3, 1, 2});
    auto lateral = conv(p, scale_name("dec.lat", i), raw) + conv(p, scale_name("dec.lat_enh", i), enh);
    fused = i == n - 1 ? lateral : lateral + upsample_nearest(fused, 2);
  }
  fused = relu(conv(p, "dec.smooth", fused, 1, 1));
  const Index frames = fused.dim(0), h = fused.dim(2), w = fused.dim(3);
  const auto flat = reshape(permute(fused, {0, 2, 3, 1}), {frames, h * w, Index(cfg.mask_dim)});
  return concat<Scalar>({flat, p.graph().constant(coordinate_channels<Scalar>(frames, h, w))}, 2);
}

template <typename Scalar>
Var<Scalar> decode_masks(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> objects,
                         const EnhancedFeatures<Scalar>& features) {
  const auto map = fuse_pyramid(p, cfg, features);
  const Index frames = map.dim(0);
  if (objects.rank() != 3 || objects.dim(0) != frames) throw ShapeError("decode_masks: objects must be [T, N_q, C_t]");
  const Index h = features.heights[0], w = features.widths[0], nq = objects.dim(1);
  const auto kernels = dense(p, "dec.controller", objects);
  auto logits = dynamic_mask_head(map, kernels, cfg.dynamic_hidden);
  logits = upsample_bilinear(reshape(logits, {frames, nq, h, w}), cfg.stem_stride);
  return permute(logits, {1, 0, 2, 3});
}

template <typename Scalar>
Var<Scalar> decode_boxes(Binding<Scalar>& p, const ModelConfig&, Var<Scalar> objects) {
  if (objects.rank() != 3) throw ShapeError("decode_boxes: objects must be [T, N_q, C_t]");
  const auto boxes = sigmoid(dense(p, "dec.box2", relu(dense(p, "dec.box1", objects))));
  return permute(boxes, {1, 0, 2});
}

#define OMF_INSTANTIATE_DECODER(S)                                                                               \
  template void add_decoder_params<S>(ParameterSet<S>&, const ModelConfig&, std::mt19937_64&);                   \
  template Var<S> make_queries<S>(Binding<S>&, const ModelConfig&, Var<S>);                                      \
  template Var<S> aggregate_objects<S>(Binding<S>&, const ModelConfig&, Var<S>, const EnhancedFeatures<S>&);     \
  template Var<S> fuse_pyramid<S>(Binding<S>&, const ModelConfig&, const EnhancedFeatures<S>&);                  \
  template Var<S> decode_masks<S>(Binding<S>&, const ModelConfig&, Var<S>, const EnhancedFeatures<S>&);          \
  template Var<S> decode_boxes<S>(Binding<S>&, const ModelConfig&, Var<S>);

OMF_INSTANTIATE_DECODER(float)
OMF_INSTANTIATE_DECODER(double)

}  // namespace omf
