#pragma once

// Loop-based reference implementations used as independent oracles. They
// touch only Tensor element access, never the graph kernels.

#include "omf/parameters.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using omf::Index;
using T = omf::Tensor<double>;

inline T random_tensor(omf::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  T t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

/// Rows of x [R, in] times W [in, out] plus b [out].
inline T linear(const T& x, const T& w, const T& b) {
  const Index rows = x.dim(0), in = x.dim(1), out = w.dim(1);
  T y({rows, out});
  for (Index r = 0; r < rows; ++r)
    for (Index o = 0; o < out; ++o) {
      double s = b[o];
      for (Index i = 0; i < in; ++i) s += x.at({r, i}) * w.at({i, o});
      y.at({r, o}) = s;
    }
  return y;
}

inline T dense(const omf::ParameterSet<double>& ps, const std::string& prefix, const T& x) {
  return linear(x, ps.get(prefix + ".w"), ps.get(prefix + ".b"));
}

/// Multi-head softmax attention on [Lq, C], [Lk, C], [Lk, C].
inline T attention(const T& q, const T& k, const T& v, Index heads) {
  const Index lq = q.dim(0), lk = k.dim(0), c = q.dim(1), d = c / heads;
  T out({lq, c});
  for (Index h = 0; h < heads; ++h)
    for (Index i = 0; i < lq; ++i) {
      std::vector<double> s(static_cast<std::size_t>(lk));
      double mx = -1e300;
      for (Index j = 0; j < lk; ++j) {
        double dot = 0;
        for (Index e = 0; e < d; ++e) dot += q.at({i, h * d + e}) * k.at({j, h * d + e});
        s[j] = dot / std::sqrt(static_cast<double>(d));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (auto& x : s) z += (x = std::exp(x - mx));
      for (Index j = 0; j < lk; ++j)
        for (Index e = 0; e < d; ++e) out.at({i, h * d + e}) += s[j] / z * v.at({j, h * d + e});
    }
  return out;
}

/// Wo * Attn(Wq q, Wk k, Wv v) with parameters `<prefix>.{q,k,v,o}`.
inline T cross_attention(const omf::ParameterSet<double>& ps, const std::string& prefix, const T& q, const T& k,
                         const T& v, Index heads) {
  return dense(ps, prefix + ".o",
               attention(dense(ps, prefix + ".q", q), dense(ps, prefix + ".k", k), dense(ps, prefix + ".v", v), heads));
}

/// Per-row normalization with affine parameters `<prefix>.{gamma,beta}`.
inline T layer_norm(const omf::ParameterSet<double>& ps, const std::string& prefix, const T& x, double eps) {
  const Index rows = x.dim(0), c = x.dim(1);
  const T& g = ps.get(prefix + ".gamma");
  const T& b = ps.get(prefix + ".beta");
  T y({rows, c});
  for (Index r = 0; r < rows; ++r) {
    double mu = 0, var = 0;
    for (Index i = 0; i < c; ++i) mu += x.at({r, i});
    mu /= static_cast<double>(c);
    for (Index i = 0; i < c; ++i) var += (x.at({r, i}) - mu) * (x.at({r, i}) - mu);
    var /= static_cast<double>(c);
    for (Index i = 0; i < c; ++i) y.at({r, i}) = (x.at({r, i}) - mu) / std::sqrt(var + eps) * g[i] + b[i];
  }
  return y;
}

inline T add(const T& a, const T& b) {
  T y(a.shape());
  for (Index i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  return y;
}

inline T relu(const T& a) {
  T y(a.shape());
  for (Index i = 0; i < a.size(); ++i) y[i] = a[i] > 0 ? a[i] : 0;
  return y;
}

/// Rows [begin, end) of a 2-D tensor.
inline T rows(const T& a, Index begin, Index end) {
  T y({end - begin, a.dim(1)});
  for (Index r = begin; r < end; ++r)
    for (Index i = 0; i < a.dim(1); ++i) y.at({r - begin, i}) = a.at({r, i});
  return y;
}

inline double max_abs_diff(const T& a, const T& b) {
  double m = 0;
  for (Index i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
