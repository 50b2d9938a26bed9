#include "omf/losses.hpp"

#include <algorithm>
#include <cmath>

namespace omf {

template <typename Scalar>
std::vector<Index> GroundTruth<Scalar>::present_frames() const {
  std::vector<Index> out;
  for (Index t = 0; t < frames(); ++t)
    if (relevant[t]) out.push_back(t);
  return out;
}

std::array<double, 4> mask_box(const Mask& m) {
  Index y0 = m.rows(), y1 = -1, x0 = m.cols(), x1 = -1;
  for (Index y = 0; y < m.rows(); ++y)
    for (Index x = 0; x < m.cols(); ++x)
      if (m(y, x)) {
        y0 = std::min(y0, y), y1 = std::max(y1, y);
        x0 = std::min(x0, x), x1 = std::max(x1, x);
      }
  if (y1 < 0) return {0, 0, 0, 0};
  const double w = static_cast<double>(m.cols()), h = static_cast<double>(m.rows());
  return {(static_cast<double>(x0) + static_cast<double>(x1 + 1)) / (2 * w),
          (static_cast<double>(y0) + static_cast<double>(y1 + 1)) / (2 * h), static_cast<double>(x1 + 1 - x0) / w,
          static_cast<double>(y1 + 1 - y0) / h};
}

template <typename Scalar>
GroundTruth<Scalar> make_ground_truth(std::vector<Mask> masks) {
  GroundTruth<Scalar> gt;
  const Index frames = static_cast<Index>(masks.size());
  gt.boxes = Tensor<Scalar>::zeros({frames, 4});
  gt.relevant.assign(masks.size(), 0);
  for (Index t = 0; t < frames; ++t) {
    if (!masks[t].any()) continue;
    gt.relevant[t] = 1;
    const auto b = mask_box(masks[t]);
    for (Index k = 0; k < 4; ++k) gt.boxes.at({t, k}) = static_cast<Scalar>(b[k]);
    if (gt.start < 0) gt.start = t;
    gt.end = t;
  }
  gt.masks = std::move(masks);
  return gt;
}

template <typename Scalar>
Var<Scalar> focal_loss(Var<Scalar> p, const Tensor<Scalar>& y, Scalar alpha, Scalar gamma, Scalar eps) {
  if (p.shape() != y.shape()) throw ShapeError("focal_loss: shape mismatch");
  Graph<Scalar>& g = p.graph();
  Tensor<Scalar> sign(y.shape()), offset(y.shape()), weight(y.shape());
  for (Index i = 0; i < y.size(); ++i) {
    sign[i] = 2 * y[i] - 1;
    offset[i] = 1 - y[i];
    weight[i] = -(alpha * y[i] + (1 - alpha) * (1 - y[i]));
  }
  const auto pc = clamp(p, eps, Scalar(1) - eps);
  const auto pt = mul(pc, g.constant(std::move(sign))) + g.constant(std::move(offset));
  const auto modulator = pow_scalar(add_scalar(scale(pt, Scalar(-1)), Scalar(1)), gamma);
  return mean(mul(mul(modulator, log(pt)), g.constant(std::move(weight))));
}

template <typename Scalar>
Var<Scalar> dice_loss(Var<Scalar> logits, const Tensor<Scalar>& target, Scalar eps) {
  if (logits.shape() != target.shape()) throw ShapeError("dice_loss: shape mismatch");
  const auto prob = sigmoid(logits);
  Scalar target_sum = 0;
  for (Index i = 0; i < target.size(); ++i) target_sum += target[i];
  const auto inter = sum(mul(prob, prob.graph().constant(target)));
  const auto denom = add_scalar(sum(prob), target_sum + eps);
  return add_scalar(scale(div(inter, denom), Scalar(-2)), Scalar(1));
}

namespace {

template <typename Scalar>
Var<Scalar> column(Var<Scalar> boxes, Index k) {
  return reshape(slice(boxes, 1, k, k + 1), {boxes.dim(0)});
}

template <typename Scalar>
Var<Scalar> min_const(Var<Scalar> a, Var<Scalar> c) {
  return a - relu(a - c);
}

template <typename Scalar>
Var<Scalar> max_const(Var<Scalar> a, Var<Scalar> c) {
  return c + relu(a - c);
}

}  // namespace

template <typename Scalar>
Var<Scalar> giou_loss(Var<Scalar> boxes, const Tensor<Scalar>& target) {
  if (boxes.rank() != 2 || boxes.dim(1) != 4 || target.shape() != boxes.shape())
    throw ShapeError("giou_loss: expected matching [N, 4] boxes");
  Graph<Scalar>& g = boxes.graph();
  const Index n = boxes.dim(0);
  Tensor<Scalar> tx1({n}), ty1({n}), tx2({n}), ty2({n}), tarea({n});
  for (Index i = 0; i < n; ++i) {
    const Scalar cx = target.at({i, 0}), cy = target.at({i, 1}), w = target.at({i, 2}), h = target.at({i, 3});
    tx1[i] = cx - w / 2, tx2[i] = cx + w / 2, ty1[i] = cy - h / 2, ty2[i] = cy + h / 2, tarea[i] = w * h;
  }
  const auto half = Scalar(0.5);
  const auto cx = column(boxes, 0), cy = column(boxes, 1), w = column(boxes, 2), h = column(boxes, 3);
  const auto x1 = cx - half * w, x2 = cx + half * w, y1 = cy - half * h, y2 = cy + half * h;
  const auto X1 = g.constant(tx1), X2 = g.constant(tx2), Y1 = g.constant(ty1), Y2 = g.constant(ty2);

  const auto inter = relu(min_const(x2, X2) - max_const(x1, X1)) * relu(min_const(y2, Y2) - max_const(y1, Y1));
  const auto uni = add(w * h, g.constant(tarea)) - inter;
  const auto hull = (max_const(x2, X2) - min_const(x1, X1)) * (max_const(y2, Y2) - min_const(y1, Y1));
  const auto giou = div(inter, uni) - div(hull - uni, hull);
  return add_scalar(scale(giou, Scalar(-1)), Scalar(1));
}

template <typename Scalar>
Var<Scalar> box_loss(Var<Scalar> boxes, const Tensor<Scalar>& target) {
  const auto l1 = mean(abs(boxes - boxes.graph().constant(target)));
  return l1 + mean(giou_loss(boxes, target));
}

template <typename Scalar>
Tensor<Scalar> gaussian_span_target(Index start, Index end, Index frames, double sigma_frac, double sigma_floor) {
  if (start > end) throw InvalidSpanError("gaussian_span_target: start after end");
  if (start < 0 || end >= frames) throw InvalidSpanError("gaussian_span_target: span outside the clip");
  const double sigma = std::max(sigma_floor, sigma_frac * static_cast<double>(end - start + 1));
  Tensor<Scalar> out({2, frames});
  const Index centres[2] = {start, end};
  for (Index r = 0; r < 2; ++r) {
    std::vector<double> v(static_cast<std::size_t>(frames));
    double total = 0;
    for (Index t = 0; t < frames; ++t) {
      const double d = static_cast<double>(t - centres[r]) / sigma;
      v[t] = std::exp(-0.5 * d * d);
      total += v[t];
    }
    for (Index t = 0; t < frames; ++t) out.at({r, t}) = static_cast<Scalar>(v[t] / total);
  }
  return out;
}

template <typename Scalar>
Var<Scalar> kl_span_loss(Var<Scalar> logits, const Tensor<Scalar>& target) {
  if (logits.rank() != 2 || logits.shape() != target.shape()) throw ShapeError("kl_span_loss: shape mismatch");
  Scalar entropy_term = 0;
  for (Index i = 0; i < target.size(); ++i)
    if (target[i] > 0) entropy_term += target[i] * std::log(target[i]);
  const auto cross = sum(mul(log_softmax(logits, 1), logits.graph().constant(target)));
  return add_scalar(scale(cross, Scalar(-1)), entropy_term);
}

// ---- matching --------------------------------------------------------------

namespace {

double focal_value(double p, double y, const LossConfig& cfg) {
  p = std::clamp(p, cfg.prob_eps, 1 - cfg.prob_eps);
  const double pt = y > 0.5 ? p : 1 - p;
  const double at = y > 0.5 ? cfg.focal_alpha : 1 - cfg.focal_alpha;
  return -at * std::pow(1 - pt, cfg.focal_gamma) * std::log(pt);
}

double sigmoid_value(double z) { return 1 / (1 + std::exp(-z)); }

struct BoxCorners {
  double x1, y1, x2, y2;
};

BoxCorners corners(double cx, double cy, double w, double h) {
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

double giou_value(const BoxCorners& a, const BoxCorners& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  const double hull = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) * (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
  return inter / uni - (hull - uni) / hull;
}

}  // namespace

template <typename Scalar>
std::vector<double> matching_costs(const PredictionSet<Scalar>& pred, const GroundTruth<Scalar>& gt,
                                   const LossConfig& cfg) {
  const Index nq = pred.c.size();
  const Shape& ms = pred.mask_logits.shape();
  const Index frames = ms[1], hw = ms[2] * ms[3];
  if (gt.frames() != frames) throw ShapeError("matching_costs: clip length mismatch");
  const auto present = gt.present_frames();

  std::vector<double> costs(static_cast<std::size_t>(nq), 0.0);
  for (Index q = 0; q < nq; ++q) {
    double cls = 0;
    for (Index k = 0; k < nq; ++k) cls += focal_value(static_cast<double>(pred.c[k]), k == q ? 1.0 : 0.0, cfg);
    cls /= static_cast<double>(nq);

    double box = 0, mask = 0;
    if (!present.empty()) {
      double l1 = 0, giou = 0, inter = 0, psum = 0, gsum = 0, focal = 0;
      for (Index t : present) {
        const Scalar* b = pred.boxes.ptr() + (q * frames + t) * 4;
        for (Index k = 0; k < 4; ++k) l1 += std::abs(static_cast<double>(b[k]) - static_cast<double>(gt.boxes.at({t, k})));
        giou += 1 - giou_value(corners(b[0], b[1], b[2], b[3]),
                               corners(gt.boxes.at({t, 0}), gt.boxes.at({t, 1}), gt.boxes.at({t, 2}), gt.boxes.at({t, 3})));
        const Scalar* z = pred.mask_logits.ptr() + (q * frames + t) * hw;
        const bool* m = gt.masks[t].data();
        for (Index i = 0; i < hw; ++i) {
          const double p = sigmoid_value(static_cast<double>(z[i]));
          const double y = m[i] ? 1.0 : 0.0;
          inter += p * y, psum += p, gsum += y;
          focal += focal_value(p, y, cfg);
        }
      }
      const double np = static_cast<double>(present.size());
      box = l1 / (4 * np) + giou / np;
      mask = 1 - 2 * inter / (psum + gsum + cfg.dice_eps) + focal / (np * static_cast<double>(hw));
    }
    costs[q] = cfg.weights.cls * cls + cfg.weights.box * box + cfg.weights.mask * mask;
  }
  return costs;
}

template <typename Scalar>
Index match_query(const PredictionSet<Scalar>& pred, const GroundTruth<Scalar>& gt, const LossConfig& cfg) {
  const auto costs = matching_costs(pred, gt, cfg);
  return static_cast<Index>(std::min_element(costs.begin(), costs.end()) - costs.begin());
}

// ---- total -------------------------------------------------------------------

template <typename Scalar>
LossBreakdown<Scalar> total_loss(const ForwardOutputs<Scalar>& out, const GroundTruth<Scalar>& gt, Index j,
                                 const LossConfig& cfg) {
  Graph<Scalar>& g = out.seq_logits.graph();
  const Index nq = out.seq_logits.dim(0), frames = out.rel_logits.dim(1);
  if (j < 0 || j >= nq) throw ShapeError("total_loss: matched index out of range");
  if (gt.frames() != frames) throw ShapeError("total_loss: clip length mismatch");
  const auto alpha = static_cast<Scalar>(cfg.focal_alpha), gamma = static_cast<Scalar>(cfg.focal_gamma),
             eps = static_cast<Scalar>(cfg.prob_eps);

  LossBreakdown<Scalar> lb;
  lb.matched = j;
  Tensor<Scalar> onehot = Tensor<Scalar>::zeros({nq});
  onehot[j] = 1;
  lb.cls = focal_loss(sigmoid(out.seq_logits), onehot, alpha, gamma, eps);

  Tensor<Scalar> relevance({frames});
  for (Index t = 0; t < frames; ++t) relevance[t] = static_cast<Scalar>(gt.relevant[t]);
  lb.rel = focal_loss(sigmoid(reshape(slice(out.rel_logits, 0, j, j + 1), {frames})), relevance, alpha, gamma, eps);

  const auto present = gt.present_frames();
  if (present.empty()) {
    lb.box = lb.mask = lb.span = g.constant(Tensor<Scalar>::scalar(0));
  } else {
    const Index np = static_cast<Index>(present.size());
    const Shape& ms = out.mask_logits.shape();
    const Index h = ms[2], w = ms[3];

    auto boxes = index_select(reshape(slice(out.boxes, 0, j, j + 1), {frames, 4}), 0, present);
    Tensor<Scalar> box_target({np, 4});
    for (Index i = 0; i < np; ++i)
      for (Index k = 0; k < 4; ++k) box_target.at({i, k}) = gt.boxes.at({present[i], k});
    lb.box = box_loss(boxes, box_target);

    auto logits = index_select(reshape(slice(out.mask_logits, 0, j, j + 1), {frames, h, w}), 0, present);
    Tensor<Scalar> mask_target({np, h, w});
    for (Index i = 0; i < np; ++i) {
      const bool* m = gt.masks[present[i]].data();
      for (Index k = 0; k < h * w; ++k) mask_target[i * h * w + k] = m[k] ? Scalar(1) : Scalar(0);
    }
    lb.mask = dice_loss(logits, mask_target, static_cast<Scalar>(cfg.dice_eps)) +
              focal_loss(sigmoid(logits), mask_target, alpha, gamma, eps);

    const auto span_logits = permute(reshape(slice(out.span_logits, 0, j, j + 1), {frames, 2}), {1, 0});
    const auto target = gaussian_span_target<Scalar>(gt.start, gt.end, frames, cfg.sigma_frac, cfg.sigma_floor);
    std::vector<Index> rows;
    if (gt.start_observed) rows.push_back(0);
    if (gt.end_observed) rows.push_back(1);
    if (rows.size() == 2) {
      lb.span = kl_span_loss(span_logits, target);
    } else if (rows.empty()) {
      lb.span = g.constant(Tensor<Scalar>::scalar(0));
    } else {
      Tensor<Scalar> row({1, frames});
      for (Index t = 0; t < frames; ++t) row[t] = target.at({rows[0], t});
      lb.span = kl_span_loss(index_select(span_logits, 0, rows), row);
    }
  }

  const auto& wt = cfg.weights;
  lb.total = static_cast<Scalar>(wt.cls) * lb.cls + static_cast<Scalar>(wt.box) * lb.box +
             static_cast<Scalar>(wt.mask) * lb.mask + static_cast<Scalar>(wt.span) * lb.span +
             static_cast<Scalar>(wt.rel) * lb.rel;
  return lb;
}

#define OMF_INSTANTIATE_LOSSES(S)                                                                              \
  template struct GroundTruth<S>;                                                                              \
  template GroundTruth<S> make_ground_truth<S>(std::vector<Mask>);                                             \
  template Var<S> focal_loss<S>(Var<S>, const Tensor<S>&, S, S, S);                                            \
  template Var<S> dice_loss<S>(Var<S>, const Tensor<S>&, S);                                                   \
  template Var<S> giou_loss<S>(Var<S>, const Tensor<S>&);                                                      \
  template Var<S> box_loss<S>(Var<S>, const Tensor<S>&);                                                       \
  template Tensor<S> gaussian_span_target<S>(Index, Index, Index, double, double);                             \
  template Var<S> kl_span_loss<S>(Var<S>, const Tensor<S>&);                                                   \
  template std::vector<double> matching_costs<S>(const PredictionSet<S>&, const GroundTruth<S>&, const LossConfig&); \
  template Index match_query<S>(const PredictionSet<S>&, const GroundTruth<S>&, const LossConfig&);           \
  template LossBreakdown<S> total_loss<S>(const ForwardOutputs<S>&, const GroundTruth<S>&, Index, const LossConfig&);

OMF_INSTANTIATE_LOSSES(float)
OMF_INSTANTIATE_LOSSES(double)

}  // namespace omf
