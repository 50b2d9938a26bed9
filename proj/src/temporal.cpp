#include "omf/temporal.hpp"

namespace omf {

namespace {

std::string block_name(const char* base, int i) { return std::string(base) + std::to_string(i); }

template <typename Scalar>
Var<Scalar> norm(Binding<Scalar>& p, const ModelConfig& cfg, const std::string& prefix, Var<Scalar> x) {
  return layer_norm_affine(p, prefix, x, static_cast<Scalar>(cfg.layer_norm_eps));
}

template <typename Scalar>
Var<Scalar> mlp(Binding<Scalar>& p, const std::string& prefix, Var<Scalar> x) {
  return dense(p, prefix + "2", relu(dense(p, prefix + "1", x)));
}

// x: [N_q, T, C]; f_q: [N_q, C] added to every frame.
template <typename Scalar>
Var<Scalar> add_per_query(Var<Scalar> x, Var<Scalar> queries) {
  return permute(add_broadcast(permute(x, {1, 0, 2}), queries), {1, 0, 2});
}

}  // namespace

template <typename Scalar>
void add_temporal_params(ParameterSet<Scalar>& ps, const ModelConfig& cfg, std::mt19937_64& rng) {
  const Index c = cfg.text_dim;
  for (int l = 0; l < cfg.temporal_layers; ++l) {
    const std::string b = block_name("tmp", l);
    add_layer_norm(ps, b + ".ln1", c);
    add_attention(ps, b + ".attn", c, c, c, rng);
    add_layer_norm(ps, b + ".ln2", c);
    add_linear(ps, b + ".ff1", c, 2 * c, rng);
    add_linear(ps, b + ".ff2", 2 * c, c, rng);
  }
  for (int l = 0; l < cfg.srd_layers; ++l) {
    if (cfg.coupled_srd) {
      add_layer_norm(ps, block_name("srd.joint", l) + ".ln", c);
      add_attention(ps, block_name("srd.joint", l) + ".attn", c, c, c, rng);
    } else {
      for (const char* branch : {"srd.seq", "srd.rel"}) {
        add_layer_norm(ps, block_name(branch, l) + ".ln", c);
        add_attention(ps, block_name(branch, l) + ".attn", c, c, c, rng);
      }
    }
  }
  for (const char* head : {"head.span", "head.seq", "head.rel"}) add_linear(ps, std::string(head) + "1", c, c, rng);
  add_linear(ps, "head.span2", c, 2, rng);
  add_linear(ps, "head.seq2", c, 1, rng);
  add_linear(ps, "head.rel2", c, 1, rng);
}

template <typename Scalar>
Var<Scalar> temporal_encode(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> objects, Index first_frame) {
  if (objects.rank() != 3 || objects.dim(0) < 1 || objects.dim(2) != cfg.text_dim)
    throw ShapeError("temporal_encode: objects must be [T, N_q, C_t]");
  const Index frames = objects.dim(0);
  const auto pe = p.graph().constant(sinusoidal_encoding<Scalar>(frames, cfg.text_dim, first_frame));
  Var<Scalar> x = permute(objects, {1, 0, 2});
  for (int l = 0; l < cfg.temporal_layers; ++l) {
    const std::string b = block_name("tmp", l);
    const auto h = norm(p, cfg, b + ".ln1", x);
    const auto hp = add_broadcast(h, pe);
    x = x + cross_attention(p, b + ".attn", hp, hp, h, cfg.num_heads);
    x = x + mlp(p, b + ".ff", norm(p, cfg, b + ".ln2", x));
  }
  return x;
}

template <typename Scalar>
TemporalFeatures<Scalar> srd_decode(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> text, Var<Scalar> objects,
                                    Var<Scalar> queries, Var<Scalar> temporal) {
  const Index nq = queries.dim(0), c = cfg.text_dim;
  if (text.rank() != 2 || text.dim(1) != c) throw ShapeError("srd_decode: text must be [L, C_t]");
  if (objects.rank() != 3 || objects.dim(1) != nq || objects.dim(2) != c)
    throw ShapeError("srd_decode: objects must be [T, N_q, C_t]");
  const Index frames = objects.dim(0);
  if (temporal.shape() != Shape{nq, frames, c}) throw ShapeError("srd_decode: temporal must be [N_q, T, C_t]");

  const auto words = repeat_leading(text, nq);
  Var<Scalar> seq = temporal;
  Var<Scalar> rel = permute(objects, {1, 0, 2});
  if (!cfg.coupled_srd) {
    for (int l = 0; l < cfg.srd_layers; ++l) {
      const std::string bs = block_name("srd.seq", l), br = block_name("srd.rel", l);
      seq = seq + cross_attention(p, bs + ".attn", add_per_query(norm(p, cfg, bs + ".ln", seq), queries), words, words,
                                  cfg.num_heads);
      rel = rel + cross_attention(p, br + ".attn", add_per_query(norm(p, cfg, br + ".ln", rel), queries), words, words,
                                  cfg.num_heads);
    }
    return {seq, rel};
  }
  const Index len = text.dim(0);
  Var<Scalar> x = concat<Scalar>({words, add_per_query(seq, queries), add_per_query(rel, queries)}, 1);
  for (int l = 0; l < cfg.srd_layers; ++l) {
    const std::string b = block_name("srd.joint", l);
    const auto h = norm(p, cfg, b + ".ln", x);
    x = x + cross_attention(p, b + ".attn", h, h, h, cfg.num_heads);
  }
  return {slice(x, 1, len, len + frames), slice(x, 1, len + frames, len + 2 * frames)};
}

template <typename Scalar>
Var<Scalar> span_head(Binding<Scalar>& p, const ModelConfig&, Var<Scalar> seq) {
  return mlp(p, "head.span", seq);
}

template <typename Scalar>
Var<Scalar> sequence_head(Binding<Scalar>& p, const ModelConfig&, Var<Scalar> seq) {
  const auto out = mlp(p, "head.seq", mean_axis(seq, 1));
  return reshape(out, {out.dim(0)});
}

template <typename Scalar>
Var<Scalar> relevance_head(Binding<Scalar>& p, const ModelConfig&, Var<Scalar> rel) {
  const auto out = mlp(p, "head.rel", rel);
  return reshape(out, {out.dim(0), out.dim(1)});
}

template <typename Scalar>
Index first_argmax(const Scalar* values, Index n) {
  Index best = 0;
  for (Index i = 1; i < n; ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

template <typename Scalar>
FinalOutput assemble(const PredictionSet<Scalar>& pred, bool use_span) {
  const Shape& ms = pred.mask_logits.shape();
  if (ms.size() != 4) throw ShapeError("assemble: mask logits must be [N_q, T, H, W]");
  const Index nq = ms[0], frames = ms[1], h = ms[2], w = ms[3];
  if (pred.c.size() != nq || pred.tau_s.shape() != Shape{nq, frames} || pred.tau_e.shape() != Shape{nq, frames})
    throw ShapeError("assemble: inconsistent prediction shapes");

  FinalOutput out;
  out.query = first_argmax(pred.c.ptr(), nq);
  if (use_span) {
    out.t_start = first_argmax(pred.tau_s.ptr() + out.query * frames, frames);
    out.t_end = first_argmax(pred.tau_e.ptr() + out.query * frames, frames);
  } else {
    out.t_start = 0;
    out.t_end = frames - 1;
  }
  out.masks.assign(static_cast<std::size_t>(frames), Mask::Zero(h, w));
  for (Index t = out.t_start; t <= out.t_end; ++t) {
    const Scalar* logits = pred.mask_logits.ptr() + (out.query * frames + t) * h * w;
    // sigmoid(z) > 0.5 exactly when z > 0.
    for (Index i = 0; i < h * w; ++i) out.masks[t](i / w, i % w) = logits[i] > Scalar(0);
  }
  return out;
}

#define OMF_INSTANTIATE_TEMPORAL(S)                                                                             \
  template void add_temporal_params<S>(ParameterSet<S>&, const ModelConfig&, std::mt19937_64&);                 \
  template Var<S> temporal_encode<S>(Binding<S>&, const ModelConfig&, Var<S>, Index);                                  \
  template TemporalFeatures<S> srd_decode<S>(Binding<S>&, const ModelConfig&, Var<S>, Var<S>, Var<S>, Var<S>);  \
  template Var<S> span_head<S>(Binding<S>&, const ModelConfig&, Var<S>);                                        \
  template Var<S> sequence_head<S>(Binding<S>&, const ModelConfig&, Var<S>);                                    \
  template Var<S> relevance_head<S>(Binding<S>&, const ModelConfig&, Var<S>);                                   \
  template Index first_argmax<S>(const S*, Index);                                                              \
  template FinalOutput assemble<S>(const PredictionSet<S>&, bool);

OMF_INSTANTIATE_TEMPORAL(float)
OMF_INSTANTIATE_TEMPORAL(double)

}  // namespace omf
