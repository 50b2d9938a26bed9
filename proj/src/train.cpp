#include "omf/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace omf {

template <typename Scalar>
std::vector<double> exhaustive_matching_costs(const ForwardOutputs<Scalar>& out, const GroundTruth<Scalar>& gt,
                                              const LossConfig& cfg) {
  const Index nq = out.seq_logits.dim(0), frames = gt.frames();
  const Shape& ms = out.mask_logits.shape();
  const Index h = ms[2], w = ms[3];
  const auto present = gt.present_frames();
  // Summed in double like the matcher, so only Scalar rounding of the inputs differs.
  const double alpha = cfg.focal_alpha, gamma = cfg.focal_gamma, eps = cfg.prob_eps;
  const Tensor<double> seq = out.seq_logits.value().template cast<double>();
  const Tensor<double> all_boxes = out.boxes.value().template cast<double>();
  const Tensor<double> all_logits = out.mask_logits.value().template cast<double>();

  std::vector<double> costs;
  for (Index q = 0; q < nq; ++q) {
    Graph<double> g;
    Tensor<double> onehot = Tensor<double>::zeros({nq});
    onehot[q] = 1;
    const auto scores = sigmoid(g.constant(seq));
    double cost = cfg.weights.cls * focal_loss(scores, onehot, alpha, gamma, eps).value().item();
    if (!present.empty()) {
      const Index np = static_cast<Index>(present.size());
      Tensor<double> boxes({np, 4}), box_target({np, 4}), logits({np, h, w}), mask_target({np, h, w});
      for (Index i = 0; i < np; ++i) {
        const Index t = present[i];
        for (Index k = 0; k < 4; ++k) {
          boxes.at({i, k}) = all_boxes.at({q, t, k});
          box_target.at({i, k}) = static_cast<double>(gt.boxes.at({t, k}));
        }
        const double* z = all_logits.ptr() + (q * frames + t) * h * w;
        const bool* m = gt.masks[t].data();
        for (Index k = 0; k < h * w; ++k) {
          logits[i * h * w + k] = z[k];
          mask_target[i * h * w + k] = m[k] ? 1.0 : 0.0;
        }
      }
      const auto z = g.constant(logits);
      cost += cfg.weights.box * box_loss(g.constant(boxes), box_target).value().item();
      cost += cfg.weights.mask * (dice_loss(z, mask_target, cfg.dice_eps).value().item() +
                                  focal_loss(sigmoid(z), mask_target, alpha, gamma, eps).value().item());
    }
    costs.push_back(cost);
  }
  return costs;
}

LossConfig effective_loss(const RunConfig& cfg) {
  LossConfig loss = cfg.loss;
  if (!cfg.train.span_enabled) loss.weights.span = 0;
  if (!cfg.train.rel_enabled) loss.weights.rel = 0;
  return loss;
}

template <typename Scalar>
GroundTruth<Scalar> clip_ground_truth(const VideoSample& s, Index start, Index length) {
  std::vector<Mask> masks(s.masks.begin() + start, s.masks.begin() + start + length);
  auto gt = make_ground_truth<Scalar>(std::move(masks));
  const auto video = s.relevance();
  const auto first = std::find(video.begin(), video.end(), 1) - video.begin();
  const auto last = video.rend() - std::find(video.rbegin(), video.rend(), 1) - 1;
  gt.start_observed = first >= start;
  gt.end_observed = last < start + length;
  return gt;
}

template <typename Scalar>
Tensor<Scalar> clip_frames(const VideoSample& s, Index start, Index length) {
  const Index per = s.frames.size() / s.num_frames();
  Tensor<Scalar> out({length, 3, s.frames.dim(2), s.frames.dim(3)});
  out.data() = s.frames.data().segment(start * per, length * per).template cast<Scalar>();
  return out;
}

namespace {

template <typename Scalar>
struct Optimizer {
  const TrainConfig& cfg;
  std::map<std::string, Tensor<Scalar>> m, v;
  int t = 0;

  void step(ParameterSet<Scalar>& params, std::map<std::string, Tensor<Scalar>>& grads, double lr) {
    ++t;
    if (cfg.grad_clip > 0) {
      double norm2 = 0;
      for (const auto& [name, g] : grads) norm2 += static_cast<double>(g.data().squaredNorm());
      const double norm = std::sqrt(norm2);
      if (norm > cfg.grad_clip) {
        const auto factor = static_cast<Scalar>(cfg.grad_clip / norm);
        for (auto& [name, g] : grads) g.data() *= factor;
      }
    }
    const bool adam = cfg.optimizer == "adam";
    const double bc1 = 1 - std::pow(cfg.beta1, t), bc2 = 1 - std::pow(cfg.beta2, t);
    for (auto& [name, g] : grads) {
      auto& p = params.get(name).data();
      auto& mm = m.try_emplace(name, Tensor<Scalar>::zeros(g.shape())).first->second.data();
      if (adam) {
        auto& vv = v.try_emplace(name, Tensor<Scalar>::zeros(g.shape())).first->second.data();
        mm = static_cast<Scalar>(cfg.beta1) * mm + static_cast<Scalar>(1 - cfg.beta1) * g.data();
        vv = static_cast<Scalar>(cfg.beta2) * vv + static_cast<Scalar>(1 - cfg.beta2) * g.data().cwiseAbs2();
        const auto step = static_cast<Scalar>(lr / bc1);
        const auto denom = (vv.array() / static_cast<Scalar>(bc2)).sqrt() + static_cast<Scalar>(cfg.adam_eps);
        p.array() -= step * mm.array() / denom;
      } else {
        mm = static_cast<Scalar>(cfg.momentum) * mm + g.data();
        p -= static_cast<Scalar>(lr) * mm;
      }
    }
  }
};

bool matching_check_enabled(const TrainConfig& cfg) {
#ifdef OMF_CHECK_MATCHING
  (void)cfg;
  return true;
#else
  return cfg.check_matching;
#endif
}

}  // namespace

template <typename Scalar>
TrainResult<Scalar> train(const RunConfig& cfg, const std::vector<VideoSample>& data, ParameterSet<Scalar> params,
                          const std::function<void(const LossRecord&)>& on_step) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  const TrainConfig& tc = cfg.train;
  if (tc.steps < 0 || tc.t_train < 1) throw ConfigError("train: steps must be >= 0 and t_train >= 1");
  if (tc.optimizer != "adam" && tc.optimizer != "sgd") throw ConfigError("train: optimizer must be adam or sgd");
  const LossConfig loss_cfg = effective_loss(cfg);
  const bool check = matching_check_enabled(tc);

  TrainResult<Scalar> result;
  Optimizer<Scalar> opt{tc, {}, {}, 0};
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const int decay_step = static_cast<int>(std::lround(tc.decay_at * tc.steps));

  for (int step = 0; step < tc.steps; ++step) {
    LossRecord rec;
    rec.step = step;
    rec.sample = std::uniform_int_distribution<Index>(0, static_cast<Index>(data.size()) - 1)(rng);
    const VideoSample& s = data[rec.sample];
    const Index length = std::min<Index>(tc.t_train, s.num_frames());
    rec.clip_start = std::uniform_int_distribution<Index>(0, s.num_frames() - length)(rng);

    try {
      Graph<Scalar> g;
      Binding<Scalar> p(g, params);
      const auto out = forward(p, cfg.model, g.constant(clip_frames<Scalar>(s, rec.clip_start, length)), s.query,
                               rec.clip_start);
      const auto gt = clip_ground_truth<Scalar>(s, rec.clip_start, length);
      const auto pred = to_prediction_set(out);
      const Index j = match_query(pred, gt, loss_cfg);
      if (check) {
        const auto costs = exhaustive_matching_costs(out, gt, loss_cfg);
        const auto best = std::min_element(costs.begin(), costs.end()) - costs.begin();
        const double tol = std::max(1e-9, 64.0 * std::numeric_limits<Scalar>::epsilon());
        if (best != j && std::abs(costs[best] - costs[j]) > tol * std::max(1.0, std::abs(costs[best])))
          throw MatchingError("step " + std::to_string(step) + ": matched query " + std::to_string(j) +
                              " but exhaustive enumeration picks " + std::to_string(best));
        ++result.matching_checks;
      }
      const auto lb = total_loss(out, gt, j, loss_cfg);
      rec.matched = j;
      rec.total = static_cast<double>(lb.total.value().item());
      rec.cls = static_cast<double>(lb.cls.value().item());
      rec.box = static_cast<double>(lb.box.value().item());
      rec.mask = static_cast<double>(lb.mask.value().item());
      rec.span = static_cast<double>(lb.span.value().item());
      rec.rel = static_cast<double>(lb.rel.value().item());

      auto leaf_grads = g.backward(lb.total);
      auto grads = p.gradients(leaf_grads);
      for (const auto& [name, gr] : grads)
        if (!gr.all_finite()) throw NonFiniteError("non-finite gradient for " + name);
      opt.step(params, grads, step < decay_step ? tc.lr : tc.lr * tc.decay_factor);
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("training step " + std::to_string(step) + " (sample " + s.id + ", clip start " +
                           std::to_string(rec.clip_start) + "): " + e.what());
    }
    result.curve.push_back(rec);
    if (on_step) on_step(rec);
  }
  result.params = std::move(params);
  return result;
}

template <typename Scalar>
PredictionRecord infer_sample(const ParameterSet<Scalar>& params, const RunConfig& cfg, const VideoSample& s) {
  const auto pred = predict(params, cfg.model, clip_frames<Scalar>(s, 0, s.num_frames()), s.query);
  const auto fin = assemble(pred, cfg.train.span_enabled);
  PredictionRecord rec;
  rec.id = s.id;
  rec.query = fin.query;
  rec.t_start = fin.t_start;
  rec.t_end = fin.t_end;
  for (Index q = 0; q < pred.c.size(); ++q) rec.scores.push_back(static_cast<double>(pred.c[q]));
  rec.masks = fin.masks;
  return rec;
}

#define OMF_INSTANTIATE_TRAIN(S)                                                                                  \
  template std::vector<double> exhaustive_matching_costs<S>(const ForwardOutputs<S>&, const GroundTruth<S>&,     \
                                                            const LossConfig&);                                  \
  template GroundTruth<S> clip_ground_truth<S>(const VideoSample&, Index, Index);                                \
  template Tensor<S> clip_frames<S>(const VideoSample&, Index, Index);                                           \
  template TrainResult<S> train<S>(const RunConfig&, const std::vector<VideoSample>&, ParameterSet<S>,           \
                                   const std::function<void(const LossRecord&)>&);                               \
  template PredictionRecord infer_sample<S>(const ParameterSet<S>&, const RunConfig&, const VideoSample&);

OMF_INSTANTIATE_TRAIN(float)
OMF_INSTANTIATE_TRAIN(double)

}  // namespace omf
