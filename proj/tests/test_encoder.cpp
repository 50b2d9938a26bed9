#include "omf/encoder.hpp"
#include "omf/grad_check.hpp"

#include "oracles.hpp"

#include <doctest.h>

using namespace omf;
using T = Tensor<double>;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.num_scales = 2;
  cfg.scale_channels = {4, 6};
  cfg.text_dim = 8;
  cfg.num_heads = 2;
  cfg.vocab_size = 10;
  cfg.max_query_len = 6;
  return cfg;
}

ParameterSet<double> encoder_params(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterSet<double> ps;
  add_encoder_params(ps, cfg, rng);
  return ps;
}

// Spatial tokens of frame t of a [T, C, H, W] tensor, row-major: [H*W, C].
T frame_tokens(const T& f, Index t) {
  const Index c = f.dim(1), h = f.dim(2), w = f.dim(3);
  T out({h * w, c});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index k = 0; k < c; ++k) out.at({y * w + x, k}) = f.at({t, k, y, x});
  return out;
}

}  // namespace

TEST_CASE("encode_frames produces the stride-4 pyramid") {
  ModelConfig cfg;
  const auto ps = encoder_params(cfg, 1);
  Graph<double> g;
  Binding<double> p(g, ps);
  std::mt19937_64 rng(2);
  const auto pyr = encode_frames(p, cfg, g.constant(oracle::random_tensor({2, 3, 64, 64}, rng, 0, 1)));
  REQUIRE(pyr.scales.size() == 3);
  // 64 / 4 = 16, then halved per scale.
  CHECK(pyr.scales[0].shape() == Shape{2, 16, 16, 16});
  CHECK(pyr.scales[1].shape() == Shape{2, 32, 8, 8});
  CHECK(pyr.scales[2].shape() == Shape{2, 64, 4, 4});
}

TEST_CASE("encode_frames on zero and repeated frames") {
  const auto cfg = small_config();
  const auto ps = encoder_params(cfg, 3);
  Graph<double> g;
  Binding<double> p(g, ps);
  const auto zero = encode_frames(p, cfg, g.constant(T::zeros({1, 3, 16, 16})));
  for (const auto& s : zero.scales) CHECK(s.value().all_finite());

  std::mt19937_64 rng(4);
  const T frame = oracle::random_tensor({1, 3, 16, 16}, rng, 0, 1);
  T two({2, 3, 16, 16});
  two.data().head(frame.size()) = frame.data();
  two.data().tail(frame.size()) = frame.data();
  const auto pyr = encode_frames(p, cfg, g.constant(two));
  for (const auto& s : pyr.scales) {
    const Index per = s.size() / 2;
    CHECK(s.value().data().head(per) == s.value().data().tail(per));
  }
  CHECK_THROWS_AS(encode_frames(p, cfg, g.constant(T::zeros({1, 3, 12, 16}))), ShapeError);
  CHECK_THROWS_AS(encode_frames(p, cfg, g.constant(T::zeros({1, 1, 16, 16}))), ShapeError);
}

TEST_CASE("embed_query validates ids and is deterministic") {
  const auto cfg = small_config();
  const auto ps = encoder_params(cfg, 5);
  Graph<double> g;
  Binding<double> p(g, ps);
  CHECK_THROWS_AS(embed_query(p, cfg, {}), VocabError);
  CHECK_THROWS_AS(embed_query(p, cfg, {3, 10}), VocabError);
  CHECK_THROWS_AS(embed_query(p, cfg, {-1}), VocabError);
  CHECK_THROWS_AS(embed_query(p, cfg, std::vector<int>(7, 1)), VocabError);
  CHECK(embed_query(p, cfg, {4}).tokens.shape() == Shape{1, 8});
  CHECK(embed_query(p, cfg, {1, 2, 3}).tokens.value() == embed_query(p, cfg, {1, 2, 3}).tokens.value());

  // Row l is table[id_l] + pos[l].
  const auto e = embed_query(p, cfg, {7, 2}).tokens.value();
  for (Index c = 0; c < 8; ++c) {
    CHECK(e.at({0, c}) == ps.get("enc.embed").at({7, c}) + ps.get("enc.word_pos").at({0, c}));
    CHECK(e.at({1, c}) == ps.get("enc.embed").at({2, c}) + ps.get("enc.word_pos").at({1, c}));
  }
}

TEST_CASE("enhance with one scale and one word broadcasts the value projection") {
  auto cfg = small_config();
  cfg.num_scales = 1;
  cfg.scale_channels = {4};
  const auto ps = encoder_params(cfg, 6);
  Graph<double> g;
  Binding<double> p(g, ps);
  std::mt19937_64 rng(7);
  const T f = oracle::random_tensor({2, 4, 3, 3}, rng);
  const T e = oracle::random_tensor({1, 8}, rng);
  const auto out = enhance<double>(p, cfg, {{g.constant(f)}}, {g.constant(e)});
  const T v = oracle::dense(ps, "enc.vis_attn0.o", oracle::dense(ps, "enc.vis_attn0.v", e));
  const T& tok = out.tokens[0].value();
  CHECK(tok.shape() == Shape{2, 9, 8});
  double err = 0;
  for (Index i = 0; i < 18; ++i)
    for (Index c = 0; c < 8; ++c) err = std::max(err, std::abs(tok[i * 8 + c] - v[c]));
  CHECK(err < 1e-12);
}

TEST_CASE("enhance with zero text-update projections leaves the words unchanged") {
  const auto cfg = small_config();
  auto ps = encoder_params(cfg, 8);
  for (int i = 0; i < cfg.num_scales; ++i) {
    ps.get(text_attention_prefix(cfg, i) + ".o.w").data().setZero();
    ps.get(text_attention_prefix(cfg, i) + ".o.b").data().setZero();
  }
  Graph<double> g;
  Binding<double> p(g, ps);
  std::mt19937_64 rng(9);
  const T e = oracle::random_tensor({3, 8}, rng);
  const auto pyr = encode_frames(p, cfg, g.constant(oracle::random_tensor({2, 3, 16, 16}, rng, 0, 1)));
  const auto out = enhance<double>(p, cfg, pyr, {g.constant(e)});
  CHECK(out.text.tokens.value() == e);
  for (int i = 0; i < cfg.num_scales; ++i) {
    CHECK(out.tokens[i].dim(0) == 2);
    CHECK(out.tokens[i].dim(1) == out.heights[i] * out.widths[i]);
    CHECK(out.tokens[i].dim(2) == 8);
  }
}

TEST_CASE("enhance matches a straight-line evaluation of the mutual attention") {
  for (bool shared : {false, true}) {
    auto cfg = small_config();
    cfg.shared_text_attention = shared;
    const auto ps = encoder_params(cfg, 10 + shared);
    std::mt19937_64 rng(11);
    const Index frames = 2, len = 3;
    const std::vector<T> feats = {oracle::random_tensor({frames, 4, 4, 4}, rng),
                                  oracle::random_tensor({frames, 6, 2, 2}, rng)};
    const T e0 = oracle::random_tensor({len, 8}, rng);

    Graph<double> g;
    Binding<double> p(g, ps);
    const auto out = enhance<double>(p, cfg, {{g.constant(feats[0]), g.constant(feats[1])}}, {g.constant(e0)});

    T e = e0;
    for (int i = 0; i < 2; ++i) {
      const Index h = feats[i].dim(2), w = feats[i].dim(3);
      const T pos = grid_encoding<double>(h, w, 8);
      T all({frames * h * w, 8});
      for (Index t = 0; t < frames; ++t) {
        const T x = oracle::add(oracle::dense(ps, "enc.proj" + std::to_string(i), frame_tokens(feats[i], t)), pos);
        const T fe = oracle::cross_attention(ps, "enc.vis_attn" + std::to_string(i), x, e0, e0, 2);
        for (Index r = 0; r < h * w; ++r)
          for (Index c = 0; c < 8; ++c) {
            all.at({t * h * w + r, c}) = fe.at({r, c});
            CHECK(std::abs(out.tokens[i].value().at({t, r, c}) - fe.at({r, c})) < 1e-12);
          }
      }
      e = oracle::add(e, oracle::cross_attention(ps, text_attention_prefix(cfg, i), e, all, all, 2));
    }
    CHECK(oracle::max_abs_diff(out.text.tokens.value(), e) < 1e-12);
  }
}

TEST_CASE("gradients reach both modalities through enhance") {
  const auto cfg = small_config();
  const auto ps = encoder_params(cfg, 12);
  std::mt19937_64 rng(13);
  for (int instance = 0; instance < 5; ++instance) {
    const std::vector<T> inputs = {oracle::random_tensor({1, 4, 4, 4}, rng), oracle::random_tensor({1, 6, 2, 2}, rng),
                                   oracle::random_tensor({2, 8}, rng)};
    MultiFunction<double> f = [&](Graph<double>& g, const std::vector<Var<double>>& v) {
      Binding<double> p(g, ps, false);
      const auto out = enhance<double>(p, cfg, {{v[0], v[1]}}, {v[2]});
      auto y = sum(mul(out.text.tokens, out.text.tokens));
      for (const auto& tok : out.tokens) y = y + sum(mul(tok, sigmoid(tok)));
      return y;
    };
    CHECK(grad_check<double>(f, inputs, 1e-6) < 1e-5);
  }
}
