#pragma once

#include <json.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace omf {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Architecture hyperparameters.
struct ModelConfig {
  int num_scales = 3;
  std::vector<int> scale_channels = {16, 32, 64};
  int stem_stride = 4;
  int text_dim = 64;  // C_t
  int num_heads = 4;
  int num_queries = 5;  // N_q
  int vocab_size = 32;
  int max_query_len = 16;
  int mask_dim = 8;  // channels of the fused FPN map
  int dynamic_hidden = 8;
  int temporal_layers = 1;
  int srd_layers = 2;
  bool shared_text_attention = false;  // one text-update attention for all scales
  bool coupled_srd = false;
  double layer_norm_eps = 1e-5;

  void validate() const;
};

struct LossWeights {
  double cls = 5, box = 5, mask = 2, span = 10, rel = 5;
};

struct LossConfig {
  LossWeights weights;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double sigma_frac = 0.05;
  double sigma_floor = 1.0;
  double prob_eps = 1e-7;
  double dice_eps = 1e-6;
};

struct TrainConfig {
  int t_train = 24;
  int steps = 3000;
  double lr = 1e-3;
  double decay_at = 0.6;
  double decay_factor = 0.1;
  std::string optimizer = "adam";  // adam | sgd
  double momentum = 0.9;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double grad_clip = 1.0;  // global norm; <= 0 disables
  bool span_enabled = true;
  bool rel_enabled = true;
  bool check_matching = false;
  int log_every = 100;
};

struct EvalConfig {
  double contour_tolerance_frac = 0.008;
  double scene_threshold = 0.3;
  double fps = 6.0;
};

struct SynthConfig {
  int num_frames = 48;
  int height = 64;
  int width = 64;
  int num_distractors = 2;
  int num_segments = 1;
  int scene_cuts = 2;
  int num_samples = 16;
  double min_radius = 7.0;
  double max_radius = 11.0;
  double ti_min = 0.0;  // per-sample TI drawn uniformly from [ti_min, ti_max]
  double ti_max = 0.9;
  std::string frame_format = "bin";  // bin | png
  std::vector<double> ti_targets;    // non-empty: generate a TI suite instead
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  EvalConfig eval;
  SynthConfig synth;
  std::uint64_t seed = 0;
  std::string precision = "f64";  // f32 | f64
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, num_scales, scale_channels, stem_stride, text_dim,
                                                num_heads, num_queries, vocab_size, max_query_len, mask_dim,
                                                dynamic_hidden, temporal_layers, srd_layers, shared_text_attention,
                                                coupled_srd, layer_norm_eps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossWeights, cls, box, mask, span, rel)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossConfig, weights, focal_alpha, focal_gamma, sigma_frac, sigma_floor,
                                                prob_eps, dice_eps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, t_train, steps, lr, decay_at, decay_factor, optimizer,
                                                momentum, beta1, beta2, adam_eps, grad_clip, span_enabled, rel_enabled,
                                                check_matching, log_every)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalConfig, contour_tolerance_frac, scene_threshold, fps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthConfig, num_frames, height, width, num_distractors, num_segments,
                                                scene_cuts, num_samples, min_radius, max_radius, ti_min, ti_max,
                                                frame_format, ti_targets)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, model, loss, train, eval, synth, seed, precision)

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& config, const std::string& path);

}  // namespace omf
