#include "omf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace omf {
namespace {

template <typename Scalar>
using Arr = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using StridedMap = Eigen::Map<RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;
template <typename Scalar>
using ConstStridedMap = Eigen::Map<const RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;

Index normalize_axis(Index axis, Index rank, const char* op) {
  Index a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw AxisError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                    std::to_string(rank));
  return a;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

void require_same_graph(const void* a, const void* b, const char* op) {
  if (a != b) throw std::invalid_argument(std::string(op) + ": operands belong to different graphs");
}

/// Decomposes a shape around `axis` into (outer, n, inner).
struct Lanes {
  Index outer, n, inner;
};
Lanes lanes_of(const Shape& shape, Index axis) {
  Lanes l{1, shape[axis], 1};
  for (Index i = 0; i < axis; ++i) l.outer *= shape[i];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) l.inner *= shape[i];
  return l;
}

template <typename Scalar>
void accumulate(Graph<Scalar>& g, NodeId id, const Vector<Scalar>& delta) {
  if (Tensor<Scalar>* slot = g.grad_slot(id)) slot->data() += delta;
}

template <typename Scalar, typename Forward, typename Derivative>
Var<Scalar> unary(const char* name, Var<Scalar> x, Forward forward, Derivative derivative) {
  Graph<Scalar>& g = x.graph();
  const NodeId xi = x.id();
  Tensor<Scalar> out(x.shape(), forward(x.value().data().array()).matrix());
  return g.record(name, std::move(out), {xi},
                  [xi, derivative](Graph<Scalar>& g, const Tensor<Scalar>& y, const Tensor<Scalar>& gy) {
                    if (Tensor<Scalar>* gx = g.grad_slot(xi))
                      gx->data().array() += gy.data().array() * derivative(g.value(xi).data().array(), y.data().array());
                  });
}

bool is_suffix(const Shape& suffix, const Shape& full) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.begin(), suffix.end(), full.end() - static_cast<std::ptrdiff_t>(suffix.size()));
}

}  // namespace

// ---- elementwise ---------------------------------------------------------

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  require_same_graph(&a.graph(), &b.graph(), "add");
  require_same_shape(a.shape(), b.shape(), "add");
  const NodeId ai = a.id(), bi = b.id();
  Tensor<Scalar> out(a.shape(), a.value().data() + b.value().data());
  return a.graph().record("add", std::move(out), {ai, bi},
                          [ai, bi](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
                            accumulate(g, ai, gy.data());
                            accumulate(g, bi, gy.data());
                          });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  require_same_graph(&a.graph(), &b.graph(), "sub");
  require_same_shape(a.shape(), b.shape(), "sub");
  const NodeId ai = a.id(), bi = b.id();
  Tensor<Scalar> out(a.shape(), a.value().data() - b.value().data());
  return a.graph().record("sub", std::move(out), {ai, bi},
                          [ai, bi](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
                            accumulate(g, ai, gy.data());
                            if (Tensor<Scalar>* gb = g.grad_slot(bi)) gb->data() -= gy.data();
                          });
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  require_same_graph(&a.graph(), &b.graph(), "mul");
  require_same_shape(a.shape(), b.shape(), "mul");
  const NodeId ai = a.id(), bi = b.id();
  Tensor<Scalar> out(a.shape(), (a.value().data().array() * b.value().data().array()).matrix());
  return a.graph().record("mul", std::move(out), {ai, bi},
                          [ai, bi](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
                            if (Tensor<Scalar>* ga = g.grad_slot(ai))
                              ga->data().array() += gy.data().array() * g.value(bi).data().array();
                            if (Tensor<Scalar>* gb = g.grad_slot(bi))
                              gb->data().array() += gy.data().array() * g.value(ai).data().array();
                          });
}

template <typename Scalar>
Var<Scalar> div(Var<Scalar> a, Var<Scalar> b) {
  require_same_graph(&a.graph(), &b.graph(), "div");
  require_same_shape(a.shape(), b.shape(), "div");
  const NodeId ai = a.id(), bi = b.id();
  Tensor<Scalar> out(a.shape(), (a.value().data().array() / b.value().data().array()).matrix());
  return a.graph().record("div", std::move(out), {ai, bi},
                          [ai, bi](Graph<Scalar>& g, const Tensor<Scalar>& y, const Tensor<Scalar>& gy) {
                            const auto bv = g.value(bi).data().array();
                            if (Tensor<Scalar>* ga = g.grad_slot(ai)) ga->data().array() += gy.data().array() / bv;
                            if (Tensor<Scalar>* gb = g.grad_slot(bi))
                              gb->data().array() -= gy.data().array() * y.data().array() / bv;
                          });
}

template <typename Scalar>
Var<Scalar> add_broadcast(Var<Scalar> x, Var<Scalar> y) {
  require_same_graph(&x.graph(), &y.graph(), "add_broadcast");
  if (!is_suffix(y.shape(), x.shape()))
    throw ShapeError("add_broadcast: " + to_string(y.shape()) + " is not a suffix of " + to_string(x.shape()));
  const NodeId xi = x.id(), yi = y.id();
  const Index n = y.size(), reps = x.size() / n;
  Tensor<Scalar> out = x.value();
  out.matrix(reps, n).rowwise() += y.value().data().transpose();
  return x.graph().record("add_broadcast", std::move(out), {xi, yi},
                          [xi, yi, n, reps](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
                            accumulate(g, xi, gy.data());
                            if (Tensor<Scalar>* gb = g.grad_slot(yi))
                              gb->data() += gy.matrix(reps, n).colwise().sum().transpose();
                          });
}

template <typename Scalar>
Var<Scalar> mul_broadcast(Var<Scalar> x, Var<Scalar> y) {
  require_same_graph(&x.graph(), &y.graph(), "mul_broadcast");
  if (!is_suffix(y.shape(), x.shape()))
    throw ShapeError("mul_broadcast: " + to_string(y.shape()) + " is not a suffix of " + to_string(x.shape()));
  const NodeId xi = x.id(), yi = y.id();
  const Index n = y.size(), reps = x.size() / n;
  Tensor<Scalar> out = x.value();
  out.matrix(reps, n).array().rowwise() *= y.value().data().transpose().array();
  return x.graph().record(
      "mul_broadcast", std::move(out), {xi, yi},
      [xi, yi, n, reps](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
        const auto gm = gy.matrix(reps, n).array();
        if (Tensor<Scalar>* gx = g.grad_slot(xi))
          gx->matrix(reps, n).array() += gm.rowwise() * g.value(yi).data().transpose().array();
        if (Tensor<Scalar>* gb = g.grad_slot(yi))
          gb->data() += (gm * g.value(xi).matrix(reps, n).array()).colwise().sum().transpose().matrix();
      });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar factor) {
  return unary<Scalar>(
      "scale", x, [factor](const auto& v) { return (v * factor).eval(); },
      [factor](const auto& v, const auto&) { return Arr<Scalar>::Constant(v.size(), factor); });
}

template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> x, Scalar offset) {
  return unary<Scalar>(
      "add_scalar", x, [offset](const auto& v) { return (v + offset).eval(); },
      [](const auto& v, const auto&) { return Arr<Scalar>::Ones(v.size()); });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x) {
  return unary<Scalar>(
      "sigmoid", x,
      [](const auto& v) {
        // Split by sign so exp never overflows.
        return v.unaryExpr([](Scalar s) {
                  if (s >= 0) return Scalar(1) / (Scalar(1) + std::exp(-s));
                  const Scalar e = std::exp(s);
                  return e / (Scalar(1) + e);
                })
            .eval();
      },
      [](const auto&, const auto& y) { return (y * (Scalar(1) - y)).eval(); });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x) {
  return unary<Scalar>(
      "relu", x, [](const auto& v) { return v.max(Scalar(0)).eval(); },
      [](const auto& v, const auto&) { return (v > Scalar(0)).template cast<Scalar>().eval(); });
}

template <typename Scalar>
Var<Scalar> exp(Var<Scalar> x) {
  return unary<Scalar>(
      "exp", x, [](const auto& v) { return v.exp().eval(); }, [](const auto&, const auto& y) { return y.eval(); });
}

template <typename Scalar>
Var<Scalar> log(Var<Scalar> x) {
  return unary<Scalar>(
      "log", x, [](const auto& v) { return v.log().eval(); }, [](const auto& v, const auto&) { return v.inverse().eval(); });
}

template <typename Scalar>
Var<Scalar> abs(Var<Scalar> x) {
  return unary<Scalar>(
      "abs", x, [](const auto& v) { return v.abs().eval(); },
      [](const auto& v, const auto&) {
        return v.unaryExpr([](Scalar s) { return s > 0 ? Scalar(1) : (s < 0 ? Scalar(-1) : Scalar(0)); }).eval();
      });
}

template <typename Scalar>
Var<Scalar> clamp(Var<Scalar> x, Scalar lo, Scalar hi) {
  return unary<Scalar>(
      "clamp", x, [lo, hi](const auto& v) { return v.max(lo).min(hi).eval(); },
      [lo, hi](const auto& v, const auto&) { return ((v >= lo) && (v <= hi)).template cast<Scalar>().eval(); });
}

template <typename Scalar>
Var<Scalar> pow_scalar(Var<Scalar> x, Scalar p) {
  return unary<Scalar>(
      "pow_scalar", x, [p](const auto& v) { return v.pow(p).eval(); },
      [p](const auto& v, const auto&) {
        return v.unaryExpr([p](Scalar s) { return s == 0 ? (p == 1 ? Scalar(1) : Scalar(0)) : p * std::pow(s, p - 1); })
            .eval();
      });
}

// ---- reductions ----------------------------------------------------------

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  const NodeId xi = x.id();
  return x.graph().record("sum", Tensor<Scalar>::scalar(x.value().data().sum()), {xi},
                          [xi](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
                            if (Tensor<Scalar>* gx = g.grad_slot(xi)) gx->data().array() += gy[0];
                          });
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.size()));
}

template <typename Scalar>
Var<Scalar> sum_axis(Var<Scalar> x, Index axis) {
  const Index a = normalize_axis(axis, x.rank(), "sum_axis");
  const Lanes l = lanes_of(x.shape(), a);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + a);
  Tensor<Scalar> out(out_shape);
  const Scalar* src = x.value().ptr();
  for (Index o = 0; o < l.outer; ++o)
    for (Index i = 0; i < l.n; ++i)
      for (Index in = 0; in < l.inner; ++in) out[o * l.inner + in] += src[(o * l.n + i) * l.inner + in];
  const NodeId xi = x.id();
  return x.graph().record("sum_axis", std::move(out), {xi},
                          [xi, l](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
                            Tensor<Scalar>* gx = g.grad_slot(xi);
                            if (!gx) return;
                            for (Index o = 0; o < l.outer; ++o)
                              for (Index i = 0; i < l.n; ++i)
                                for (Index in = 0; in < l.inner; ++in)
                                  (*gx)[(o * l.n + i) * l.inner + in] += gy[o * l.inner + in];
                          });
}

template <typename Scalar>
Var<Scalar> mean_axis(Var<Scalar> x, Index axis) {
  const Index a = normalize_axis(axis, x.rank(), "mean_axis");
  return scale(sum_axis(x, a), Scalar(1) / static_cast<Scalar>(x.dim(a)));
}

// ---- shape ---------------------------------------------------------------

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape shape) {
  const NodeId xi = x.id();
  return x.graph().record("reshape", x.value().reshaped(std::move(shape)), {xi},
                          [xi](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
                            accumulate(g, xi, gy.data());
                          });
}

template <typename Scalar>
Var<Scalar> permute(Var<Scalar> x, const std::vector<Index>& perm) {
  const Index rank = x.rank();
  if (static_cast<Index>(perm.size()) != rank) throw AxisError("permute: permutation rank mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  for (Index p : perm) {
    if (p < 0 || p >= rank || seen[p]) throw AxisError("permute: invalid permutation");
    seen[p] = true;
  }
  const Shape& in_shape = x.shape();
  const Shape in_strides = strides_of(in_shape);
  Shape out_shape(rank);
  Shape src_strides(rank);
  for (Index i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[perm[i]];
    src_strides[i] = in_strides[perm[i]];
  }
  // gather[j] = source offset of output element j
  std::vector<Index> gather(static_cast<std::size_t>(x.size()));
  {
    Shape idx(rank, 0);
    Index src = 0;
    for (Index j = 0; j < x.size(); ++j) {
      gather[j] = src;
      for (Index d = rank - 1; d >= 0; --d) {
        ++idx[d];
        src += src_strides[d];
        if (idx[d] < out_shape[d]) break;
        src -= src_strides[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  Tensor<Scalar> out(out_shape);
  const Scalar* in = x.value().ptr();
  for (Index j = 0; j < x.size(); ++j) out[j] = in[gather[j]];
  const NodeId xi = x.id();
  return x.graph().record("permute", std::move(out), {xi},
                          [xi, gather = std::move(gather)](Graph<Scalar>& g, const Tensor<Scalar>&,
                                                           const Tensor<Scalar>& gy) {
                            Tensor<Scalar>* gx = g.grad_slot(xi);
                            if (!gx) return;
                            for (std::size_t j = 0; j < gather.size(); ++j) (*gx)[gather[j]] += gy[j];
                          });
}

template <typename Scalar>
Var<Scalar> slice(Var<Scalar> x, Index axis, Index begin, Index end) {
  const Index a = normalize_axis(axis, x.rank(), "slice");
  if (begin < 0 || end > x.dim(a) || begin >= end)
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     to_string(x.shape()));
  const Lanes l = lanes_of(x.shape(), a);
  Shape out_shape = x.shape();
  out_shape[a] = end - begin;
  Tensor<Scalar> out(out_shape);
  const Index chunk = (end - begin) * l.inner;
  for (Index o = 0; o < l.outer; ++o)
    out.data().segment(o * chunk, chunk) = x.value().data().segment((o * l.n + begin) * l.inner, chunk);
  const NodeId xi = x.id();
  return x.graph().record("slice", std::move(out), {xi},
                          [xi, l, begin, chunk](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
                            Tensor<Scalar>* gx = g.grad_slot(xi);
                            if (!gx) return;
                            for (Index o = 0; o < l.outer; ++o)
                              gx->data().segment((o * l.n + begin) * l.inner, chunk) +=
                                  gy.data().segment(o * chunk, chunk);
                          });
}

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& xs, Index axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Index a = normalize_axis(axis, xs[0].rank(), "concat");
  Shape out_shape = xs[0].shape();
  out_shape[a] = 0;
  std::vector<NodeId> ids;
  std::vector<Index> widths;
  for (const auto& x : xs) {
    require_same_graph(&xs[0].graph(), &x.graph(), "concat");
    Shape s = x.shape();
    if (static_cast<Index>(s.size()) != static_cast<Index>(out_shape.size())) throw ShapeError("concat: rank mismatch");
    s[a] = 0;
    Shape ref = out_shape;
    ref[a] = 0;
    if (s != ref) throw ShapeError("concat: incompatible shapes");
    out_shape[a] += x.dim(a);
    ids.push_back(x.id());
    widths.push_back(x.dim(a) * lanes_of(x.shape(), a).inner);
  }
  const Lanes l = lanes_of(out_shape, a);
  const Index row = l.n * l.inner;
  Tensor<Scalar> out(out_shape);
  Index offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& src = xs[k].value().data();
    for (Index o = 0; o < l.outer; ++o) out.data().segment(o * row + offset, widths[k]) = src.segment(o * widths[k], widths[k]);
    offset += widths[k];
  }
  return xs[0].graph().record("concat", std::move(out), ids,
                              [ids, widths, l, row](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
                                Index offset = 0;
                                for (std::size_t k = 0; k < ids.size(); ++k) {
                                  if (Tensor<Scalar>* gx = g.grad_slot(ids[k]))
                                    for (Index o = 0; o < l.outer; ++o)
                                      gx->data().segment(o * widths[k], widths[k]) +=
                                          gy.data().segment(o * row + offset, widths[k]);
                                  offset += widths[k];
                                }
                              });
}

template <typename Scalar>
Var<Scalar> index_select(Var<Scalar> x, Index axis, const std::vector<Index>& indices) {
  const Index a = normalize_axis(axis, x.rank(), "index_select");
  const Lanes l = lanes_of(x.shape(), a);
  for (Index i : indices)
    if (i < 0 || i >= l.n) throw ShapeError("index_select: index out of range");
  Shape out_shape = x.shape();
  out_shape[a] = static_cast<Index>(indices.size());
  const Index m = out_shape[a];
  Tensor<Scalar> out(out_shape);
  for (Index o = 0; o < l.outer; ++o)
    for (Index k = 0; k < m; ++k)
      out.data().segment((o * m + k) * l.inner, l.inner) = x.value().data().segment((o * l.n + indices[k]) * l.inner, l.inner);
  const NodeId xi = x.id();
  return x.graph().record("index_select", std::move(out), {xi},
                          [xi, l, m, indices](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
                            Tensor<Scalar>* gx = g.grad_slot(xi);
                            if (!gx) return;
                            for (Index o = 0; o < l.outer; ++o)
                              for (Index k = 0; k < m; ++k)
                                gx->data().segment((o * l.n + indices[k]) * l.inner, l.inner) +=
                                    gy.data().segment((o * m + k) * l.inner, l.inner);
                          });
}

template <typename Scalar>
Var<Scalar> repeat_leading(Var<Scalar> x, Index n) {
  if (n < 1) throw ShapeError("repeat_leading: n must be positive");
  Shape out_shape = x.shape();
  out_shape.insert(out_shape.begin(), n);
  const Index len = x.size();
  Tensor<Scalar> out(out_shape);
  out.matrix(n, len).rowwise() = x.value().data().transpose();
  const NodeId xi = x.id();
  return x.graph().record("repeat_leading", std::move(out), {xi},
                          [xi, n, len](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
                            if (Tensor<Scalar>* gx = g.grad_slot(xi))
                              gx->data() += gy.matrix(n, len).colwise().sum().transpose();
                          });
}

template <typename Scalar>
Var<Scalar> detach(Var<Scalar> x) {
  return x.graph().constant(x.value());
}

// ---- linear algebra ------------------------------------------------------

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  require_same_graph(&a.graph(), &b.graph(), "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<Scalar> out({m, n});
  out.matrix(m, n).noalias() = a.value().matrix(m, k) * b.value().matrix(k, n);
  const NodeId ai = a.id(), bi = b.id();
  return a.graph().record("matmul", std::move(out), {ai, bi},
                          [ai, bi, m, k, n](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
                            const auto gm = gy.matrix(m, n);
                            if (Tensor<Scalar>* ga = g.grad_slot(ai))
                              ga->matrix(m, k).noalias() += gm * g.value(bi).matrix(k, n).transpose();
                            if (Tensor<Scalar>* gb = g.grad_slot(bi))
                              gb->matrix(k, n).noalias() += g.value(ai).matrix(m, k).transpose() * gm;
                          });
}

template <typename Scalar>
Var<Scalar> bmm(Var<Scalar> a, Var<Scalar> b) {
  require_same_graph(&a.graph(), &b.graph(), "bmm");
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw ShapeError("bmm: incompatible shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const Index batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor<Scalar> out({batch, m, n});
  for (Index i = 0; i < batch; ++i)
    Eigen::Map<RowMatrix<Scalar>>(out.ptr() + i * m * n, m, n).noalias() =
        Eigen::Map<const RowMatrix<Scalar>>(a.value().ptr() + i * m * k, m, k) *
        Eigen::Map<const RowMatrix<Scalar>>(b.value().ptr() + i * k * n, k, n);
  const NodeId ai = a.id(), bi = b.id();
  return a.graph().record(
      "bmm", std::move(out), {ai, bi},
      [ai, bi, batch, m, k, n](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
        Tensor<Scalar>* ga = g.grad_slot(ai);
        Tensor<Scalar>* gb = g.grad_slot(bi);
        for (Index i = 0; i < batch; ++i) {
          Eigen::Map<const RowMatrix<Scalar>> gm(gy.ptr() + i * m * n, m, n);
          if (ga)
            Eigen::Map<RowMatrix<Scalar>>(ga->ptr() + i * m * k, m, k).noalias() +=
                gm * Eigen::Map<const RowMatrix<Scalar>>(g.value(bi).ptr() + i * k * n, k, n).transpose();
          if (gb)
            Eigen::Map<RowMatrix<Scalar>>(gb->ptr() + i * k * n, k, n).noalias() +=
                Eigen::Map<const RowMatrix<Scalar>>(g.value(ai).ptr() + i * m * k, m, k).transpose() * gm;
        }
      });
}

template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> weight, OptionalVar<Scalar> bias) {
  require_same_graph(&x.graph(), &weight.graph(), "linear");
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(0))
    throw ShapeError("linear: incompatible shapes " + to_string(x.shape()) + " x " + to_string(weight.shape()));
  const Index k = weight.dim(0), n = weight.dim(1), rows = x.size() / k;
  if (bias && (bias->rank() != 1 || bias->dim(0) != n)) throw ShapeError("linear: bias shape mismatch");
  Shape out_shape = x.shape();
  out_shape.back() = n;
  Tensor<Scalar> out(out_shape);
  out.matrix(rows, n).noalias() = x.value().matrix(rows, k) * weight.value().matrix(k, n);
  if (bias) out.matrix(rows, n).rowwise() += bias->value().data().transpose();
  const NodeId xi = x.id(), wi = weight.id();
  std::vector<NodeId> inputs{xi, wi};
  const bool has_bias = bias.has_value();
  const NodeId bi = has_bias ? bias->id() : 0;
  if (has_bias) inputs.push_back(bi);
  return x.graph().record(
      "linear", std::move(out), inputs,
      [xi, wi, bi, has_bias, rows, k, n](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
        const auto gm = gy.matrix(rows, n);
        if (Tensor<Scalar>* gx = g.grad_slot(xi))
          gx->matrix(rows, k).noalias() += gm * g.value(wi).matrix(k, n).transpose();
        if (Tensor<Scalar>* gw = g.grad_slot(wi))
          gw->matrix(k, n).noalias() += g.value(xi).matrix(rows, k).transpose() * gm;
        if (has_bias)
          if (Tensor<Scalar>* gb = g.grad_slot(bi)) gb->data() += gm.colwise().sum().transpose();
      });
}

// ---- neural-network kernels ----------------------------------------------

template <typename Scalar>
Var<Scalar> softmax(Var<Scalar> x, Index axis) {
  const Index a = normalize_axis(axis, x.rank(), "softmax");
  const Lanes l = lanes_of(x.shape(), a);
  Tensor<Scalar> out(x.shape());
  const Scalar* src = x.value().ptr();
  for (Index o = 0; o < l.outer; ++o)
    for (Index in = 0; in < l.inner; ++in) {
      const Index base = o * l.n * l.inner + in;
      Scalar mx = src[base];
      for (Index i = 1; i < l.n; ++i) mx = std::max(mx, src[base + i * l.inner]);
      Scalar total = 0;
      for (Index i = 0; i < l.n; ++i) total += (out[base + i * l.inner] = std::exp(src[base + i * l.inner] - mx));
      for (Index i = 0; i < l.n; ++i) out[base + i * l.inner] /= total;
    }
  const NodeId xi = x.id();
  return x.graph().record("softmax", std::move(out), {xi},
                          [xi, l](Graph<Scalar>& g, const Tensor<Scalar>& y, const Tensor<Scalar>& gy) {
                            Tensor<Scalar>* gx = g.grad_slot(xi);
                            if (!gx) return;
                            for (Index o = 0; o < l.outer; ++o)
                              for (Index in = 0; in < l.inner; ++in) {
                                const Index base = o * l.n * l.inner + in;
                                Scalar dot = 0;
                                for (Index i = 0; i < l.n; ++i) dot += y[base + i * l.inner] * gy[base + i * l.inner];
                                for (Index i = 0; i < l.n; ++i) {
                                  const Index p = base + i * l.inner;
                                  (*gx)[p] += y[p] * (gy[p] - dot);
                                }
                              }
                          });
}

template <typename Scalar>
Var<Scalar> log_softmax(Var<Scalar> x, Index axis) {
  const Index a = normalize_axis(axis, x.rank(), "log_softmax");
  const Lanes l = lanes_of(x.shape(), a);
  Tensor<Scalar> out(x.shape());
  const Scalar* src = x.value().ptr();
  for (Index o = 0; o < l.outer; ++o)
    for (Index in = 0; in < l.inner; ++in) {
      const Index base = o * l.n * l.inner + in;
      Scalar mx = src[base];
      for (Index i = 1; i < l.n; ++i) mx = std::max(mx, src[base + i * l.inner]);
      Scalar total = 0;
      for (Index i = 0; i < l.n; ++i) total += std::exp(src[base + i * l.inner] - mx);
      const Scalar lse = mx + std::log(total);
      for (Index i = 0; i < l.n; ++i) out[base + i * l.inner] = src[base + i * l.inner] - lse;
    }
  const NodeId xi = x.id();
  return x.graph().record("log_softmax", std::move(out), {xi},
                          [xi, l](Graph<Scalar>& g, const Tensor<Scalar>& y, const Tensor<Scalar>& gy) {
                            Tensor<Scalar>* gx = g.grad_slot(xi);
                            if (!gx) return;
                            for (Index o = 0; o < l.outer; ++o)
                              for (Index in = 0; in < l.inner; ++in) {
                                const Index base = o * l.n * l.inner + in;
                                Scalar total = 0;
                                for (Index i = 0; i < l.n; ++i) total += gy[base + i * l.inner];
                                for (Index i = 0; i < l.n; ++i) {
                                  const Index p = base + i * l.inner;
                                  (*gx)[p] += gy[p] - std::exp(y[p]) * total;
                                }
                              }
                          });
}

template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Index axis, Scalar eps) {
  const Index a = normalize_axis(axis, x.rank(), "layer_norm");
  const Lanes l = lanes_of(x.shape(), a);
  Tensor<Scalar> out(x.shape());
  Vector<Scalar> inv_std(l.outer * l.inner);
  const Scalar* src = x.value().ptr();
  for (Index o = 0; o < l.outer; ++o)
    for (Index in = 0; in < l.inner; ++in) {
      const Index base = o * l.n * l.inner + in;
      Scalar mu = 0;
      for (Index i = 0; i < l.n; ++i) mu += src[base + i * l.inner];
      mu /= static_cast<Scalar>(l.n);
      Scalar var = 0;
      for (Index i = 0; i < l.n; ++i) {
        const Scalar d = src[base + i * l.inner] - mu;
        var += d * d;
      }
      var /= static_cast<Scalar>(l.n);
      const Scalar r = Scalar(1) / std::sqrt(var + eps);
      inv_std[o * l.inner + in] = r;
      for (Index i = 0; i < l.n; ++i) out[base + i * l.inner] = (src[base + i * l.inner] - mu) * r;
    }
  const NodeId xi = x.id();
  return x.graph().record(
      "layer_norm", std::move(out), {xi},
      [xi, l, inv_std = std::move(inv_std)](Graph<Scalar>& g, const Tensor<Scalar>& y, const Tensor<Scalar>& gy) {
        Tensor<Scalar>* gx = g.grad_slot(xi);
        if (!gx) return;
        const Scalar n = static_cast<Scalar>(l.n);
        for (Index o = 0; o < l.outer; ++o)
          for (Index in = 0; in < l.inner; ++in) {
            const Index base = o * l.n * l.inner + in;
            Scalar mean_g = 0, mean_gy = 0;
            for (Index i = 0; i < l.n; ++i) {
              const Index p = base + i * l.inner;
              mean_g += gy[p];
              mean_gy += gy[p] * y[p];
            }
            mean_g /= n;
            mean_gy /= n;
            const Scalar r = inv_std[o * l.inner + in];
            for (Index i = 0; i < l.n; ++i) {
              const Index p = base + i * l.inner;
              (*gx)[p] += r * (gy[p] - mean_g - y[p] * mean_gy);
            }
          }
      });
}

template <typename Scalar>
Var<Scalar> scaled_dot_attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v, Index heads) {
  require_same_graph(&q.graph(), &k.graph(), "scaled_dot_attention");
  require_same_graph(&q.graph(), &v.graph(), "scaled_dot_attention");
  const bool batched = q.rank() == 3;
  if (q.rank() != k.rank() || q.rank() != v.rank() || (q.rank() != 2 && q.rank() != 3))
    throw ShapeError("scaled_dot_attention: operands must all be rank 2 or all rank 3");
  const Index batch = batched ? q.dim(0) : 1;
  const Index lq = q.dim(-2), lk = k.dim(-2), c = q.dim(-1), cv = v.dim(-1);
  if (k.dim(-1) != c || v.dim(-2) != lk || (batched && (k.dim(0) != batch || v.dim(0) != batch)))
    throw ShapeError("scaled_dot_attention: incompatible shapes " + to_string(q.shape()) + ", " +
                     to_string(k.shape()) + ", " + to_string(v.shape()));
  if (heads < 1 || c % heads != 0 || cv % heads != 0)
    throw ShapeError("scaled_dot_attention: channels not divisible by heads");
  const Index d = c / heads, dv = cv / heads;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(d));

  Shape out_shape = q.shape();
  out_shape.back() = cv;
  Tensor<Scalar> out(out_shape);
  // attention weights, [batch, heads, lq, lk]
  auto weights = std::make_shared<Vector<Scalar>>(batch * heads * lq * lk);

  for (Index b = 0; b < batch; ++b)
    for (Index h = 0; h < heads; ++h) {
      ConstStridedMap<Scalar> qh(q.value().ptr() + b * lq * c + h * d, lq, d, Eigen::OuterStride<>(c));
      ConstStridedMap<Scalar> kh(k.value().ptr() + b * lk * c + h * d, lk, d, Eigen::OuterStride<>(c));
      ConstStridedMap<Scalar> vh(v.value().ptr() + b * lk * cv + h * dv, lk, dv, Eigen::OuterStride<>(cv));
      Eigen::Map<RowMatrix<Scalar>> a(weights->data() + (b * heads + h) * lq * lk, lq, lk);
      a.noalias() = (qh * kh.transpose()) * inv_sqrt;
      for (Index i = 0; i < lq; ++i) {
        const Scalar mx = a.row(i).maxCoeff();
        a.row(i) = (a.row(i).array() - mx).exp();
        a.row(i) /= a.row(i).sum();
      }
      StridedMap<Scalar>(out.ptr() + b * lq * cv + h * dv, lq, dv, Eigen::OuterStride<>(cv)).noalias() = a * vh;
    }

  const NodeId qi = q.id(), ki = k.id(), vi = v.id();
  return q.graph().record(
      "scaled_dot_attention", std::move(out), {qi, ki, vi},
      [=](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
        Tensor<Scalar>* gq = g.grad_slot(qi);
        Tensor<Scalar>* gk = g.grad_slot(ki);
        Tensor<Scalar>* gv = g.grad_slot(vi);
        RowMatrix<Scalar> da(lq, lk);
        for (Index b = 0; b < batch; ++b)
          for (Index h = 0; h < heads; ++h) {
            ConstStridedMap<Scalar> qh(g.value(qi).ptr() + b * lq * c + h * d, lq, d, Eigen::OuterStride<>(c));
            ConstStridedMap<Scalar> kh(g.value(ki).ptr() + b * lk * c + h * d, lk, d, Eigen::OuterStride<>(c));
            ConstStridedMap<Scalar> vh(g.value(vi).ptr() + b * lk * cv + h * dv, lk, dv, Eigen::OuterStride<>(cv));
            ConstStridedMap<Scalar> go(gy.ptr() + b * lq * cv + h * dv, lq, dv, Eigen::OuterStride<>(cv));
            Eigen::Map<const RowMatrix<Scalar>> a(weights->data() + (b * heads + h) * lq * lk, lq, lk);
            if (gv)
              StridedMap<Scalar>(gv->ptr() + b * lk * cv + h * dv, lk, dv, Eigen::OuterStride<>(cv)).noalias() +=
                  a.transpose() * go;
            if (!gq && !gk) continue;
            da.noalias() = go * vh.transpose();
            const Vector<Scalar> row_dot = (da.array() * a.array()).rowwise().sum();
            // d(scores) = A o (dA - rowdot), folded with the 1/sqrt(d) scale
            RowMatrix<Scalar> ds = (a.array() * (da.colwise() - row_dot).array()) * inv_sqrt;
            if (gq)
              StridedMap<Scalar>(gq->ptr() + b * lq * c + h * d, lq, d, Eigen::OuterStride<>(c)).noalias() += ds * kh;
            if (gk)
              StridedMap<Scalar>(gk->ptr() + b * lk * c + h * d, lk, d, Eigen::OuterStride<>(c)).noalias() +=
                  ds.transpose() * qh;
          }
      });
}

template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> kernels, OptionalVar<Scalar> bias, Index stride,
                   Index padding) {
  require_same_graph(&x.graph(), &kernels.graph(), "conv2d");
  if (x.rank() != 3 && x.rank() != 4) throw ShapeError("conv2d: input must be [C,H,W] or [B,C,H,W]");
  if (kernels.rank() != 4) throw ShapeError("conv2d: kernels must be [Co,Ci,kh,kw]");
  const bool batched = x.rank() == 4;
  const Index batch = batched ? x.dim(0) : 1;
  const Index ci = x.dim(-3), h = x.dim(-2), w = x.dim(-1);
  const Index co = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != ci) throw ShapeError("conv2d: channel mismatch " + to_string(x.shape()) + " vs " + to_string(kernels.shape()));
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  const Index ho = (h + 2 * padding - kh) / stride + 1, wo = (w + 2 * padding - kw) / stride + 1;
  if (ho < 1 || wo < 1) throw ShapeError("conv2d: kernel larger than padded input");
  if (bias && (bias->rank() != 1 || bias->dim(0) != co)) throw ShapeError("conv2d: bias shape mismatch");

  const Index patch = ci * kh * kw, positions = ho * wo;
  // im2col buffers, one [patch, positions] matrix per batch element
  auto cols = std::make_shared<Vector<Scalar>>(Vector<Scalar>::Zero(batch * patch * positions));
  const Scalar* in = x.value().ptr();
  for (Index b = 0; b < batch; ++b) {
    Scalar* col = cols->data() + b * patch * positions;
    for (Index c = 0; c < ci; ++c)
      for (Index i = 0; i < kh; ++i)
        for (Index j = 0; j < kw; ++j) {
          Scalar* row = col + ((c * kh + i) * kw + j) * positions;
          for (Index oy = 0; oy < ho; ++oy) {
            const Index iy = oy * stride - padding + i;
            if (iy < 0 || iy >= h) continue;
            for (Index ox = 0; ox < wo; ++ox) {
              const Index ix = ox * stride - padding + j;
              if (ix < 0 || ix >= w) continue;
              row[oy * wo + ox] = in[((b * ci + c) * h + iy) * w + ix];
            }
          }
        }
  }
  Shape out_shape = batched ? Shape{batch, co, ho, wo} : Shape{co, ho, wo};
  Tensor<Scalar> out(out_shape);
  const auto kmat = kernels.value().matrix(co, patch);
  for (Index b = 0; b < batch; ++b) {
    Eigen::Map<RowMatrix<Scalar>> o(out.ptr() + b * co * positions, co, positions);
    o.noalias() = kmat * Eigen::Map<const RowMatrix<Scalar>>(cols->data() + b * patch * positions, patch, positions);
    if (bias) o.colwise() += bias->value().data();
  }

  const NodeId xi = x.id(), ki = kernels.id();
  const bool has_bias = bias.has_value();
  const NodeId bi = has_bias ? bias->id() : 0;
  std::vector<NodeId> inputs{xi, ki};
  if (has_bias) inputs.push_back(bi);
  return x.graph().record(
      "conv2d", std::move(out), inputs, [=](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
        Tensor<Scalar>* gx = g.grad_slot(xi);
        Tensor<Scalar>* gk = g.grad_slot(ki);
        Tensor<Scalar>* gb = has_bias ? g.grad_slot(bi) : nullptr;
        RowMatrix<Scalar> dcol;
        for (Index b = 0; b < batch; ++b) {
          Eigen::Map<const RowMatrix<Scalar>> go(gy.ptr() + b * co * positions, co, positions);
          Eigen::Map<const RowMatrix<Scalar>> col(cols->data() + b * patch * positions, patch, positions);
          if (gk) gk->matrix(co, patch).noalias() += go * col.transpose();
          if (gb) gb->data() += go.rowwise().sum();
          if (!gx) continue;
          dcol.noalias() = g.value(ki).matrix(co, patch).transpose() * go;
          for (Index c = 0; c < ci; ++c)
            for (Index i = 0; i < kh; ++i)
              for (Index j = 0; j < kw; ++j) {
                const Scalar* row = dcol.data() + ((c * kh + i) * kw + j) * positions;
                for (Index oy = 0; oy < ho; ++oy) {
                  const Index iy = oy * stride - padding + i;
                  if (iy < 0 || iy >= h) continue;
                  for (Index ox = 0; ox < wo; ++ox) {
                    const Index ix = ox * stride - padding + j;
                    if (ix < 0 || ix >= w) continue;
                    (*gx)[((b * ci + c) * h + iy) * w + ix] += row[oy * wo + ox];
                  }
                }
              }
        }
      });
}

template <typename Scalar>
Var<Scalar> upsample_nearest(Var<Scalar> x, Index factor) {
  if (x.rank() < 2) throw ShapeError("upsample_nearest: need at least 2 axes");
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be positive");
  const Index h = x.dim(-2), w = x.dim(-1), planes = x.size() / (h * w);
  const Index ho = h * factor, wo = w * factor;
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = ho;
  out_shape.back() = wo;
  Tensor<Scalar> out(out_shape);
  const Scalar* in = x.value().ptr();
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < ho; ++y)
      for (Index xx = 0; xx < wo; ++xx) out[(p * ho + y) * wo + xx] = in[(p * h + y / factor) * w + xx / factor];
  const NodeId xi = x.id();
  return x.graph().record("upsample_nearest", std::move(out), {xi},
                          [=](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
                            Tensor<Scalar>* gx = g.grad_slot(xi);
                            if (!gx) return;
                            for (Index p = 0; p < planes; ++p)
                              for (Index y = 0; y < ho; ++y)
                                for (Index xx = 0; xx < wo; ++xx)
                                  (*gx)[(p * h + y / factor) * w + xx / factor] += gy[(p * ho + y) * wo + xx];
                          });
}

namespace {
/// Source taps for half-pixel-centre bilinear resampling along one axis.
struct Taps {
  std::vector<Index> lo, hi;
  std::vector<double> frac;
};
Taps bilinear_taps(Index in, Index factor) {
  Taps t;
  const Index out = in * factor;
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0) src = 0;
    Index lo = static_cast<Index>(src);
    if (lo > in - 1) lo = in - 1;
    const Index hi = std::min(lo + 1, in - 1);
    t.lo.push_back(lo);
    t.hi.push_back(hi);
    t.frac.push_back(src - static_cast<double>(lo));
  }
  return t;
}
}  // namespace

template <typename Scalar>
Var<Scalar> upsample_bilinear(Var<Scalar> x, Index factor) {
  if (x.rank() < 2) throw ShapeError("upsample_bilinear: need at least 2 axes");
  if (factor < 1) throw ShapeError("upsample_bilinear: factor must be positive");
  const Index h = x.dim(-2), w = x.dim(-1), planes = x.size() / (h * w);
  const Index ho = h * factor, wo = w * factor;
  const Taps ty = bilinear_taps(h, factor), tx = bilinear_taps(w, factor);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = ho;
  out_shape.back() = wo;
  Tensor<Scalar> out(out_shape);
  const Scalar* in = x.value().ptr();
  for (Index p = 0; p < planes; ++p) {
    const Scalar* plane = in + p * h * w;
    for (Index y = 0; y < ho; ++y) {
      const Scalar fy = static_cast<Scalar>(ty.frac[y]);
      const Scalar* r0 = plane + ty.lo[y] * w;
      const Scalar* r1 = plane + ty.hi[y] * w;
      for (Index xx = 0; xx < wo; ++xx) {
        const Scalar fx = static_cast<Scalar>(tx.frac[xx]);
        const Index x0 = tx.lo[xx], x1 = tx.hi[xx];
        const Scalar top = r0[x0] * (1 - fx) + r0[x1] * fx;
        const Scalar bot = r1[x0] * (1 - fx) + r1[x1] * fx;
        out[(p * ho + y) * wo + xx] = top * (1 - fy) + bot * fy;
      }
    }
  }
  const NodeId xi = x.id();
  return x.graph().record("upsample_bilinear", std::move(out), {xi},
                          [=](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
                            Tensor<Scalar>* gx = g.grad_slot(xi);
                            if (!gx) return;
                            for (Index p = 0; p < planes; ++p) {
                              Scalar* plane = gx->ptr() + p * h * w;
                              for (Index y = 0; y < ho; ++y) {
                                const Scalar fy = static_cast<Scalar>(ty.frac[y]);
                                Scalar* r0 = plane + ty.lo[y] * w;
                                Scalar* r1 = plane + ty.hi[y] * w;
                                for (Index xx = 0; xx < wo; ++xx) {
                                  const Scalar fx = static_cast<Scalar>(tx.frac[xx]);
                                  const Index x0 = tx.lo[xx], x1 = tx.hi[xx];
                                  const Scalar go = gy[(p * ho + y) * wo + xx];
                                  r0[x0] += go * (1 - fy) * (1 - fx);
                                  r0[x1] += go * (1 - fy) * fx;
                                  r1[x0] += go * fy * (1 - fx);
                                  r1[x1] += go * fy * fx;
                                }
                              }
                            }
                          });
}

template <typename Scalar>
Var<Scalar> dynamic_mask_head(Var<Scalar> features, Var<Scalar> params, Index hidden) {
  require_same_graph(&features.graph(), &params.graph(), "dynamic_mask_head");
  if (features.rank() != 3 || params.rank() != 3 || features.dim(0) != params.dim(0))
    throw ShapeError("dynamic_mask_head: expected features [B,P,Cin] and params [B,Q,K]");
  const Index batch = features.dim(0), positions = features.dim(1), cin = features.dim(2), queries = params.dim(1);
  const Index count = dynamic_param_count(cin, hidden);
  if (params.dim(2) != count)
    throw ShapeError("dynamic_mask_head: expected " + std::to_string(count) + " params per instance, got " +
                     std::to_string(params.dim(2)));
  // parameter block offsets
  const Index o_w1 = 0, o_b1 = o_w1 + hidden * cin, o_w2 = o_b1 + hidden, o_b2 = o_w2 + hidden * hidden,
              o_w3 = o_b2 + hidden, o_b3 = o_w3 + hidden;

  // cached activations per (b, q): post-ReLU layers 1 and 2, [P, hidden] each
  auto acts = std::make_shared<Vector<Scalar>>(batch * queries * 2 * positions * hidden);
  Tensor<Scalar> out({batch, queries, positions});
  for (Index b = 0; b < batch; ++b) {
    Eigen::Map<const RowMatrix<Scalar>> x(features.value().ptr() + b * positions * cin, positions, cin);
    for (Index q = 0; q < queries; ++q) {
      const Scalar* p = params.value().ptr() + (b * queries + q) * count;
      Eigen::Map<const RowMatrix<Scalar>> w1(p + o_w1, hidden, cin), w2(p + o_w2, hidden, hidden);
      Eigen::Map<const Vector<Scalar>> b1(p + o_b1, hidden), b2(p + o_b2, hidden), w3(p + o_w3, hidden);
      Scalar* base = acts->data() + (b * queries + q) * 2 * positions * hidden;
      Eigen::Map<RowMatrix<Scalar>> h1(base, positions, hidden), h2(base + positions * hidden, positions, hidden);
      h1.noalias() = x * w1.transpose();
      h1.rowwise() += b1.transpose();
      h1 = h1.cwiseMax(Scalar(0));
      h2.noalias() = h1 * w2.transpose();
      h2.rowwise() += b2.transpose();
      h2 = h2.cwiseMax(Scalar(0));
      Eigen::Map<Vector<Scalar>>(out.ptr() + (b * queries + q) * positions, positions) =
          (h2 * w3).array() + p[o_b3];
    }
  }
  const NodeId fi = features.id(), pi = params.id();
  return features.graph().record(
      "dynamic_mask_head", std::move(out), {fi, pi}, [=](Graph<Scalar>& g, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
        Tensor<Scalar>* gf = g.grad_slot(fi);
        Tensor<Scalar>* gp = g.grad_slot(pi);
        RowMatrix<Scalar> d2(positions, hidden), d1(positions, hidden);
        for (Index b = 0; b < batch; ++b) {
          Eigen::Map<const RowMatrix<Scalar>> x(g.value(fi).ptr() + b * positions * cin, positions, cin);
          for (Index q = 0; q < queries; ++q) {
            const Scalar* p = g.value(pi).ptr() + (b * queries + q) * count;
            Eigen::Map<const RowMatrix<Scalar>> w1(p + o_w1, hidden, cin), w2(p + o_w2, hidden, hidden);
            Eigen::Map<const Vector<Scalar>> w3(p + o_w3, hidden);
            const Scalar* base = acts->data() + (b * queries + q) * 2 * positions * hidden;
            Eigen::Map<const RowMatrix<Scalar>> h1(base, positions, hidden), h2(base + positions * hidden, positions, hidden);
            Eigen::Map<const Vector<Scalar>> go(gy.ptr() + (b * queries + q) * positions, positions);

            d2.noalias() = go * w3.transpose();
            d2 = (h2.array() > Scalar(0)).select(d2, Scalar(0));
            d1.noalias() = d2 * w2;
            d1 = (h1.array() > Scalar(0)).select(d1, Scalar(0));
            if (gp) {
              Scalar* gpp = gp->ptr() + (b * queries + q) * count;
              Eigen::Map<RowMatrix<Scalar>>(gpp + o_w1, hidden, cin).noalias() += d1.transpose() * x;
              Eigen::Map<Vector<Scalar>>(gpp + o_b1, hidden) += d1.colwise().sum().transpose();
              Eigen::Map<RowMatrix<Scalar>>(gpp + o_w2, hidden, hidden).noalias() += d2.transpose() * h1;
              Eigen::Map<Vector<Scalar>>(gpp + o_b2, hidden) += d2.colwise().sum().transpose();
              Eigen::Map<Vector<Scalar>>(gpp + o_w3, hidden).noalias() += h2.transpose() * go;
              gpp[o_b3] += go.sum();
            }
            if (gf)
              Eigen::Map<RowMatrix<Scalar>>(gf->ptr() + b * positions * cin, positions, cin).noalias() += d1 * w1;
          }
        }
      });
}

#define OMF_INSTANTIATE_OPS(S)                                                                          \
  template Var<S> add(Var<S>, Var<S>);                                                                  \
  template Var<S> sub(Var<S>, Var<S>);                                                                  \
  template Var<S> mul(Var<S>, Var<S>);                                                                  \
  template Var<S> div(Var<S>, Var<S>);                                                                  \
  template Var<S> add_broadcast(Var<S>, Var<S>);                                                        \
  template Var<S> mul_broadcast(Var<S>, Var<S>);                                                        \
  template Var<S> scale(Var<S>, S);                                                                     \
  template Var<S> add_scalar(Var<S>, S);                                                                \
  template Var<S> sigmoid(Var<S>);                                                                      \
  template Var<S> relu(Var<S>);                                                                         \
  template Var<S> exp(Var<S>);                                                                          \
  template Var<S> log(Var<S>);                                                                          \
  template Var<S> abs(Var<S>);                                                                          \
  template Var<S> clamp(Var<S>, S, S);                                                                  \
  template Var<S> pow_scalar(Var<S>, S);                                                                \
  template Var<S> sum(Var<S>);                                                                          \
  template Var<S> mean(Var<S>);                                                                         \
  template Var<S> sum_axis(Var<S>, Index);                                                              \
  template Var<S> mean_axis(Var<S>, Index);                                                             \
  template Var<S> reshape(Var<S>, Shape);                                                               \
  template Var<S> permute(Var<S>, const std::vector<Index>&);                                           \
  template Var<S> slice(Var<S>, Index, Index, Index);                                                   \
  template Var<S> concat(const std::vector<Var<S>>&, Index);                                            \
  template Var<S> index_select(Var<S>, Index, const std::vector<Index>&);                               \
  template Var<S> repeat_leading(Var<S>, Index);                                                        \
  template Var<S> detach(Var<S>);                                                                       \
  template Var<S> matmul(Var<S>, Var<S>);                                                               \
  template Var<S> bmm(Var<S>, Var<S>);                                                                  \
  template Var<S> linear(Var<S>, Var<S>, std::optional<Var<S>>);                                        \
  template Var<S> softmax(Var<S>, Index);                                                               \
  template Var<S> log_softmax(Var<S>, Index);                                                           \
  template Var<S> layer_norm(Var<S>, Index, S);                                                         \
  template Var<S> scaled_dot_attention(Var<S>, Var<S>, Var<S>, Index);                                  \
  template Var<S> conv2d(Var<S>, Var<S>, std::optional<Var<S>>, Index, Index);                          \
  template Var<S> upsample_nearest(Var<S>, Index);                                                      \
  template Var<S> upsample_bilinear(Var<S>, Index);                                                     \
  template Var<S> dynamic_mask_head(Var<S>, Var<S>, Index);

OMF_INSTANTIATE_OPS(float)
OMF_INSTANTIATE_OPS(double)

}  // namespace omf
