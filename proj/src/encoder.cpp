#include "omf/encoder.hpp"

namespace omf {

namespace {

std::string scale_name(const char* base, int i) { return std::string(base) + std::to_string(i); }

}  // namespace

std::string text_attention_prefix(const ModelConfig& cfg, int scale) {
  return cfg.shared_text_attention ? std::string("enc.text_attn") : scale_name("enc.text_attn", scale);
}

template <typename Scalar>
void add_encoder_params(ParameterSet<Scalar>& ps, const ModelConfig& cfg, std::mt19937_64& rng) {
  const Index ct = cfg.text_dim;
  for (int i = 0; i < cfg.num_scales; ++i) {
    const Index c = cfg.scale_channels[i];
    if (i == 0) {
      add_conv(ps, "enc.stem", 3, c, cfg.stem_stride, rng);
    } else {
      add_conv(ps, scale_name("enc.down", i), cfg.scale_channels[i - 1], c, 2, rng);
    }
    add_conv(ps, scale_name("enc.block", i), c, c, 3, rng);
    add_linear(ps, scale_name("enc.proj", i), c, ct, rng);
    add_attention(ps, scale_name("enc.vis_attn", i), ct, ct, ct, rng);
    if (!cfg.shared_text_attention || i == 0) add_attention(ps, text_attention_prefix(cfg, i), ct, ct, ct, rng);
  }
  ps.add("enc.embed", normal_init<Scalar>({cfg.vocab_size, ct}, 1.0, rng));
  ps.add("enc.word_pos", normal_init<Scalar>({cfg.max_query_len, ct}, 0.1, rng));
}

template <typename Scalar>
FeaturePyramid<Scalar> encode_frames(Binding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> frames) {
  if (frames.rank() != 4 || frames.dim(1) != 3) throw ShapeError("encode_frames: expected [T,3,H,W], got " + to_string(frames.shape()));
  const Index multiple = static_cast<Index>(cfg.stem_stride) << (cfg.num_scales - 1);
  if (frames.dim(2) % multiple != 0 || frames.dim(3) % multiple != 0)
    throw ShapeError("encode_frames: H and W must be multiples of " + std::to_string(multiple));

  FeaturePyramid<Scalar> out;
  Var<Scalar> x = frames;
  for (int i = 0; i < cfg.num_scales; ++i) {
    x = i == 0 ? relu(conv(p, "enc.stem", x, cfg.stem_stride)) : relu(conv(p, scale_name("enc.down", i), x, 2));
    x = relu(conv(p, scale_name("enc.block", i), x, 1, 1)) + x;
    out.scales.push_back(x);
  }
  return out;
}

template <typename Scalar>
TextFeatures<Scalar> embed_query(Binding<Scalar>& p, const ModelConfig& cfg, const std::vector<int>& token_ids) {
  if (token_ids.empty()) throw VocabError("embed_query: empty query");
  if (static_cast<int>(token_ids.size()) > cfg.max_query_len)
    throw VocabError("embed_query: query longer than " + std::to_string(cfg.max_query_len));
  std::vector<Index> ids;
  for (int id : token_ids) {
    if (id < 0 || id >= cfg.vocab_size) throw VocabError("embed_query: token id " + std::to_string(id) + " out of range");
    ids.push_back(id);
  }
  const Index len = static_cast<Index>(ids.size());
  return {index_select(p["enc.embed"], 0, ids) + slice(p["enc.word_pos"], 0, 0, len)};
}

template <typename Scalar>
EnhancedFeatures<Scalar> enhance(Binding<Scalar>& p, const ModelConfig& cfg, const FeaturePyramid<Scalar>& pyramid,
                                 const TextFeatures<Scalar>& text) {
  if (static_cast<int>(pyramid.scales.size()) != cfg.num_scales) throw ShapeError("enhance: wrong number of scales");
  const Index ct = cfg.text_dim;
  const Var<Scalar> words = text.tokens;
  if (words.rank() != 2 || words.dim(1) != ct) throw ShapeError("enhance: text must be [L, C_t]");
  const Index len = words.dim(0);
  Graph<Scalar>& g = p.graph();

  EnhancedFeatures<Scalar> out;
  out.visual = pyramid;
  Var<Scalar> e = words;
  for (int i = 0; i < cfg.num_scales; ++i) {
    const Var<Scalar> f = pyramid.scales[i];
    if (f.rank() != 4 || f.dim(1) != cfg.scale_channels[i]) throw ShapeError("enhance: bad pyramid scale " + std::to_string(i));
    const Index frames = f.dim(0), h = f.dim(2), w = f.dim(3);
    auto tokens = reshape(permute(f, {0, 2, 3, 1}), {frames, h * w, f.dim(1)});
    tokens = add_broadcast(dense(p, scale_name("enc.proj", i), tokens), g.constant(grid_encoding<Scalar>(h, w, ct)));
    const auto keys = repeat_leading(words, frames);
    const auto enhanced = cross_attention(p, scale_name("enc.vis_attn", i), tokens, keys, keys, cfg.num_heads);
    out.tokens.push_back(enhanced);
    out.heights.push_back(h);
    out.widths.push_back(w);

    const auto all_frames = reshape(enhanced, {1, frames * h * w, ct});
    const auto update = cross_attention(p, text_attention_prefix(cfg, i), reshape(e, {1, len, ct}), all_frames,
                                        all_frames, cfg.num_heads);
    e = e + reshape(update, {len, ct});
  }
  out.text = {e};
  return out;
}

#define OMF_INSTANTIATE_ENCODER(S)                                                                               \
  template void add_encoder_params<S>(ParameterSet<S>&, const ModelConfig&, std::mt19937_64&);                   \
  template FeaturePyramid<S> encode_frames<S>(Binding<S>&, const ModelConfig&, Var<S>);                          \
  template TextFeatures<S> embed_query<S>(Binding<S>&, const ModelConfig&, const std::vector<int>&);             \
  template EnhancedFeatures<S> enhance<S>(Binding<S>&, const ModelConfig&, const FeaturePyramid<S>&,             \
                                          const TextFeatures<S>&);

OMF_INSTANTIATE_ENCODER(float)
OMF_INSTANTIATE_ENCODER(double)

}  // namespace omf
