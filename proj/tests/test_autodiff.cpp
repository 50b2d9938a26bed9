#include "omf/autodiff.hpp"
#include "omf/grad_check.hpp"

#include "grad_sweep.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace omf;
using T = Tensor<double>;
using V = Var<double>;
using G = Graph<double>;

namespace {

T random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  T t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

/// Deterministic projection of a tensor to a scalar so every output element
/// receives a distinct upstream gradient.
V readout(G& g, V y) {
  T w(y.shape());
  for (Index i = 0; i < w.size(); ++i) w[i] = std::sin(0.7 * static_cast<double>(i) + 0.3);
  return sum(mul(y, g.constant(w)));
}

// Straight triple-loop attention, independent of the Eigen kernel.
T naive_attention(const T& q, const T& k, const T& v) {
  const Index lq = q.dim(0), lk = k.dim(0), c = q.dim(1), cv = v.dim(1);
  T out({lq, cv});
  for (Index i = 0; i < lq; ++i) {
    std::vector<double> s(static_cast<std::size_t>(lk));
    double mx = -1e300;
    for (Index j = 0; j < lk; ++j) {
      double dot = 0;
      for (Index d = 0; d < c; ++d) dot += q.at({i, d}) * k.at({j, d});
      s[j] = dot / std::sqrt(static_cast<double>(c));
      mx = std::max(mx, s[j]);
    }
    double z = 0;
    for (auto& x : s) z += (x = std::exp(x - mx));
    for (Index j = 0; j < lk; ++j)
      for (Index d = 0; d < cv; ++d) out.at({i, d}) += s[j] / z * v.at({j, d});
  }
  return out;
}

}  // namespace

TEST_CASE("matmul examples") {
  G g;
  auto eye = g.constant(T({2, 2}, {1, 0, 0, 1}));
  CHECK(matmul(eye, eye).value() == T({2, 2}, {1, 0, 0, 1}));

  auto a = g.constant(T({2, 2}, {1, 2, 3, 4}));
  auto b = g.constant(T({2, 1}, {0, 1}));
  CHECK(matmul(a, b).value() == T({2, 1}, {2, 4}));

  CHECK(matmul(a, g.constant(T::zeros({2, 3}))).value() == T::zeros({2, 3}));
  CHECK_THROWS_AS(matmul(a, g.constant(T::zeros({3, 1}))), ShapeError);
}

TEST_CASE("softmax examples") {
  G g;
  auto u = softmax(g.constant(T({3}, {0, 0, 0})), 0).value();
  for (Index i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  auto big = softmax(g.constant(T({2}, {1000, 0})), 0).value();
  CHECK(big.all_finite());
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);

  // 40-digit reference values
  auto s = softmax(g.constant(T({3}, {1, 2, 3})), 0).value();
  CHECK(std::abs(s[0] - 0.090030573170380457998) < 1e-15);
  CHECK(std::abs(s[1] - 0.24472847105479765247) < 1e-15);
  CHECK(std::abs(s[2] - 0.66524095577482188953) < 1e-15);

  CHECK_THROWS_AS(softmax(g.constant(T({3}, {1, 2, 3})), 1), AxisError);
}

TEST_CASE("softmax rows sum to one for inputs up to 1e4") {
  std::mt19937_64 rng(11);
  G g;
  for (double magnitude : {1.0, 1e2, 1e3, 1e4}) {
    auto x = g.constant(random_tensor({7, 9}, rng, -magnitude, magnitude));
    for (Index axis : {0, 1}) {
      auto y = softmax(x, axis).value();
      const Index n = axis == 0 ? 7 : 9, m = axis == 0 ? 9 : 7;
      for (Index r = 0; r < m; ++r) {
        double total = 0;
        for (Index i = 0; i < n; ++i) total += axis == 0 ? y.at({i, r}) : y.at({r, i});
        CHECK(std::abs(total - 1.0) < 1e-6);
      }
      for (Index i = 0; i < y.size(); ++i) CHECK((y[i] >= 0.0 && y[i] <= 1.0));
    }
  }
}

TEST_CASE("scaled_dot_attention examples") {
  std::mt19937_64 rng(5);
  G g;
  SUBCASE("single key collapses to the value row") {
    auto q = g.constant(random_tensor({4, 3}, rng));
    auto k = g.constant(random_tensor({1, 3}, rng));
    auto v = g.constant(random_tensor({1, 3}, rng));
    auto y = scaled_dot_attention(q, k, v).value();
    for (Index i = 0; i < 4; ++i)
      for (Index d = 0; d < 3; ++d) CHECK(y.at({i, d}) == doctest::Approx(v.value().at({0, d})).epsilon(1e-14));
  }
  SUBCASE("orthogonal query gives the mean of the values") {
    auto q = g.constant(T({1, 2}, {1, 0}));
    auto k = g.constant(T({3, 2}, {0, 1, 0, -2, 0, 5}));
    auto v = g.constant(T({3, 2}, {1, 2, 3, 4, 5, 9}));
    auto y = scaled_dot_attention(q, k, v).value();
    CHECK(y.at({0, 0}) == doctest::Approx(3.0));
    CHECK(y.at({0, 1}) == doctest::Approx(5.0));
  }
  SUBCASE("random 3x4 case matches the loop oracle") {
    auto q = random_tensor({3, 4}, rng), k = random_tensor({5, 4}, rng), v = random_tensor({5, 4}, rng);
    auto y = scaled_dot_attention(g.constant(q), g.constant(k), g.constant(v)).value();
    auto ref = naive_attention(q, k, v);
    for (Index i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-13);
  }
  SUBCASE("heads split channels") {
    auto q = random_tensor({3, 4}, rng), k = random_tensor({5, 4}, rng), v = random_tensor({5, 4}, rng);
    auto y = scaled_dot_attention(g.constant(q), g.constant(k), g.constant(v), 2).value();
    for (Index h = 0; h < 2; ++h) {
      T qh({3, 2}), kh({5, 2}), vh({5, 2});
      for (Index i = 0; i < 3; ++i)
        for (Index d = 0; d < 2; ++d) qh.at({i, d}) = q.at({i, 2 * h + d});
      for (Index i = 0; i < 5; ++i)
        for (Index d = 0; d < 2; ++d) kh.at({i, d}) = k.at({i, 2 * h + d}), vh.at({i, d}) = v.at({i, 2 * h + d});
      auto ref = naive_attention(qh, kh, vh);
      for (Index i = 0; i < 3; ++i)
        for (Index d = 0; d < 2; ++d) CHECK(std::abs(y.at({i, 2 * h + d}) - ref.at({i, d})) < 1e-13);
    }
  }
  CHECK_THROWS_AS(scaled_dot_attention(g.constant(T::zeros({2, 3})), g.constant(T::zeros({2, 4})),
                                       g.constant(T::zeros({2, 4}))),
                  ShapeError);
}

TEST_CASE("sigmoid, layer_norm, conv2d examples") {
  G g;
  CHECK(sigmoid(g.constant(T::scalar(0))).value().item() == 0.5);
  auto s = sigmoid(g.constant(T({2}, {-800, 800}))).value();
  CHECK((s[0] >= 0.0 && s[0] < 1e-300));
  CHECK(s[1] == 1.0);

  auto ln = layer_norm(g.constant(T::constant({2, 5}, 3.25)), -1).value();
  CHECK(ln.all_finite());
  CHECK(ln == T::zeros({2, 5}));

  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 3, 5, 4}, rng);
  T eye({3, 3, 1, 1});
  for (Index c = 0; c < 3; ++c) eye.at({c, c, 0, 0}) = 1;
  CHECK(conv2d(g.constant(x), g.constant(eye), std::nullopt).value() == x);
}

TEST_CASE("layer_norm output is standardized") {
  std::mt19937_64 rng(8);
  G g;
  auto y = layer_norm(g.constant(random_tensor({6, 32}, rng, -5, 5)), 1).value();
  for (Index r = 0; r < 6; ++r) {
    double mu = 0, var = 0;
    for (Index i = 0; i < 32; ++i) mu += y.at({r, i});
    mu /= 32;
    for (Index i = 0; i < 32; ++i) var += (y.at({r, i}) - mu) * (y.at({r, i}) - mu);
    var /= 32;
    CHECK(std::abs(mu) < 1e-5);
    CHECK(std::abs(var - 1) < 1e-5);
  }
}

TEST_CASE("conv2d matches a direct loop") {
  std::mt19937_64 rng(21);
  auto x = random_tensor({2, 3, 7, 6}, rng), k = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
  G g;
  auto y = conv2d(g.constant(x), g.constant(k), g.constant(b), 2, 1).value();
  REQUIRE(y.shape() == Shape{2, 4, 4, 3});
  for (Index n = 0; n < 2; ++n)
    for (Index o = 0; o < 4; ++o)
      for (Index oy = 0; oy < 4; ++oy)
        for (Index ox = 0; ox < 3; ++ox) {
          double acc = b[o];
          for (Index c = 0; c < 3; ++c)
            for (Index i = 0; i < 3; ++i)
              for (Index j = 0; j < 3; ++j) {
                const Index iy = oy * 2 - 1 + i, ix = ox * 2 - 1 + j;
                if (iy >= 0 && iy < 7 && ix >= 0 && ix < 6) acc += k.at({o, c, i, j}) * x.at({n, c, iy, ix});
              }
          CHECK(std::abs(y.at({n, o, oy, ox}) - acc) < 1e-12);
        }
}

TEST_CASE("backward examples") {
  std::mt19937_64 rng(1);
  auto xv = random_tensor({3, 4}, rng);
  SUBCASE("sum gives ones") {
    G g;
    auto x = g.leaf(xv);
    auto grads = g.backward(sum(x));
    CHECK(grads.at(x.id()) == T::constant({3, 4}, 1.0));
  }
  SUBCASE("half squared norm gives x") {
    G g;
    auto x = g.leaf(xv);
    auto grads = g.backward(scale(sum(mul(x, x)), 0.5));
    for (Index i = 0; i < xv.size(); ++i) CHECK(grads.at(x.id())[i] == doctest::Approx(xv[i]).epsilon(1e-15));
  }
  SUBCASE("constants get no gradient") {
    G g;
    auto x = g.leaf(xv);
    auto c = g.constant(xv);
    auto grads = g.backward(sum(mul(x, c)));
    CHECK(grads.size() == 1);
    CHECK(g.grad_slot(c.id()) == nullptr);
  }
  SUBCASE("non-scalar loss is rejected") {
    G g;
    auto x = g.leaf(xv);
    CHECK_THROWS_AS(g.backward(x), NonScalarError);
  }
  SUBCASE("composite graph matches finite differences") {
    UnaryFunction<double> f = [](G& g, V x) {
      auto h = relu(matmul(x, permute(x, {1, 0})));
      return readout(g, layer_norm(add_scalar(h, 0.1), -1));
    };
    CHECK(grad_check(f, xv, 1e-6) < 1e-5);
  }
}

TEST_CASE("non-finite values are surfaced") {
  G g;
  CHECK_THROWS_AS(log(g.constant(T({2}, {1.0, 0.0}))), NonFiniteError);
  CHECK_THROWS_AS(div(g.constant(T({1}, {1.0})), g.constant(T({1}, {0.0}))), NonFiniteError);
  CHECK_THROWS_AS(g.leaf(T({1}, {std::nan("")})), NonFiniteError);
}

TEST_CASE("grad_check examples") {
  std::mt19937_64 rng(2);
  auto x = random_tensor({5}, rng);
  CHECK(grad_check<double>([](G&, V v) { return sum(v); }, x, 1e-6) < 1e-9);

  UnaryFunction<double> softmax_dot = [](G& g, V v) {
    return sum(mul(softmax(v, 0), g.constant(T({5}, {0.3, -1.0, 2.0, 0.5, 1.5}))));
  };
  CHECK(grad_check(softmax_dot, x, 1e-6) < 1e-5);

  // negative control: an op whose backward is off by a factor of three
  UnaryFunction<double> broken = [](G& g, V v) {
    T y = v.value();
    y.data() = y.data().array().square();
    const NodeId vi = v.id();
    auto sq = g.record("broken_square", y, {vi}, [vi](G& gg, const T&, const T& gy) {
      if (T* gx = gg.grad_slot(vi)) gx->data().array() += 6.0 * gg.value(vi).data().array() * gy.data().array();
    });
    return sum(sq);
  };
  CHECK(grad_check(broken, x, 1e-6) > 1e-2);
}

TEST_CASE("every differentiable op passes grad_check on random shapes") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    CAPTURE(trial);
    for (const auto& [name, err] : sweep::op_grad_errors(rng)) {
      CAPTURE(name);
      CHECK(err < 1e-5);
    }
  }
}

TEST_CASE("backward is deterministic") {
  std::mt19937_64 rng(4);
  auto xv = random_tensor({6, 8}, rng), wv = random_tensor({8, 8}, rng);
  auto run = [&] {
    G g;
    auto x = g.leaf(xv), w = g.leaf(wv);
    auto y = scaled_dot_attention(linear(x, w), x, x, 2);
    auto grads = g.backward(readout(g, layer_norm(y, -1)));
    return std::make_pair(grads.at(x.id()), grads.at(w.id()));
  };
  auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}
