#include "omf/metrics.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace omf;

namespace {

Mask rect(Index h, Index w, Index y0, Index x0, Index y1, Index x1) {
  Mask m = Mask::Zero(h, w);
  m.block(y0, x0, y1 - y0, x1 - x0).setConstant(true);
  return m;
}

Mask random_mask(Index h, Index w, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution b(density);
  Mask m(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) m(y, x) = b(rng);
  return m;
}

Mask dilate(const Mask& m) {
  Mask out = m;
  for (Index y = 0; y < m.rows(); ++y)
    for (Index x = 0; x < m.cols(); ++x)
      for (Index dy = -1; dy <= 1; ++dy)
        for (Index dx = -1; dx <= 1; ++dx) {
          const Index yy = y + dy, xx = x + dx;
          if (yy >= 0 && xx >= 0 && yy < m.rows() && xx < m.cols() && m(yy, xx)) out(y, x) = true;
        }
  return out;
}

// Boundary F from explicit pixel lists and pairwise Chebyshev distances.
double contour_f_ref(const Mask& p, const Mask& g, Index r) {
  auto edge = [](const Mask& m) {
    std::vector<std::pair<Index, Index>> px;
    for (Index y = 0; y < m.rows(); ++y)
      for (Index x = 0; x < m.cols(); ++x) {
        if (!m(y, x)) continue;
        bool border = false;
        const Index dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const Index yy = y + dy[k], xx = x + dx[k];
          border |= yy < 0 || xx < 0 || yy >= m.rows() || xx >= m.cols() || !m(yy, xx);
        }
        if (border) px.emplace_back(y, x);
      }
    return px;
  };
  const auto a = edge(p), b = edge(g);
  if (a.empty() && b.empty()) return 1;
  if (a.empty() || b.empty()) return 0;
  auto frac = [r](const auto& from, const auto& to) {
    double hit = 0;
    for (const auto& [y, x] : from)
      for (const auto& [yy, xx] : to)
        if (std::max(std::abs(y - yy), std::abs(x - xx)) <= r) {
          hit += 1;
          break;
        }
    return hit / static_cast<double>(from.size());
  };
  const double pr = frac(a, b), rc = frac(b, a);
  return pr + rc == 0 ? 0 : 2 * pr * rc / (pr + rc);
}

FinalOutput output_with(std::vector<Mask> masks, Index start, Index end) {
  FinalOutput out;
  out.masks = std::move(masks);
  out.t_start = start;
  out.t_end = end;
  return out;
}

}  // namespace

TEST_CASE("region_j closed forms and brute-force agreement") {
  CHECK(region_j(rect(8, 8, 1, 1, 5, 5), rect(8, 8, 1, 1, 5, 5)) == 1.0);
  CHECK(region_j(rect(8, 8, 0, 0, 2, 2), rect(8, 8, 5, 5, 7, 7)) == 0.0);
  CHECK(region_j(rect(4, 8, 0, 0, 4, 4), rect(4, 8, 0, 2, 4, 6)) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(region_j(Mask::Zero(3, 3), Mask::Zero(3, 3)) == 1.0);
  CHECK_THROWS_AS(region_j(Mask::Zero(3, 3), Mask::Zero(3, 4)), ShapeError);

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Mask a = random_mask(16, 16, 0.4, rng), b = random_mask(16, 16, 0.4, rng);
    int inter = 0, uni = 0;
    for (Index y = 0; y < 16; ++y)
      for (Index x = 0; x < 16; ++x) inter += a(y, x) && b(y, x), uni += a(y, x) || b(y, x);
    CHECK(region_j(a, b) == static_cast<double>(inter) / uni);
    CHECK(region_j(a, b) == region_j(b, a));
  }
}

TEST_CASE("boundary keeps pixels with a background 4-neighbour") {
  const Mask b = boundary(rect(6, 6, 1, 1, 5, 5));
  CHECK(b.count() == 12);
  CHECK_FALSE(b(2, 2));
  CHECK(boundary(Mask::Ones(3, 3)).count() == 8);
}

TEST_CASE("contour_f cases") {
  CHECK(contour_tolerance(64, 64, 0.008) == 1);
  CHECK(contour_tolerance(480, 854, 0.008) == 8);
  const Mask g = rect(32, 32, 8, 8, 20, 24);
  CHECK(contour_f(g, g, 1) == 1.0);
  CHECK(contour_f(dilate(g), g, 1) == 1.0);
  CHECK(contour_f(rect(32, 32, 0, 0, 4, 4), rect(32, 32, 20, 20, 30, 30), 1) == 0.0);
  CHECK(contour_f(Mask::Zero(4, 4), Mask::Zero(4, 4), 1) == 1.0);
  CHECK(contour_f(Mask::Zero(4, 4), Mask(g.block(8, 8, 4, 4)), 1) == 0.0);

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const Mask a = random_mask(16, 16, 0.5, rng), b = random_mask(16, 16, 0.5, rng);
    for (Index r : {0, 1, 2}) {
      CHECK(contour_f(a, b, r) == doctest::Approx(contour_f_ref(a, b, r)).epsilon(1e-15));
      CHECK(contour_f(a, b, r) == contour_f(b, a, r));
    }
    const Mask d = dilate(b);
    CHECK(contour_f(d, b, 1) == doctest::Approx(contour_f_ref(d, b, 1)).epsilon(1e-15));
  }
}

TEST_CASE("tiou and ti_rate") {
  const std::vector<int> span = {1, 1, 1, 1, 1, 0, 0, 0, 0, 0}, gt = {0, 0, 0, 1, 1, 1, 1, 1, 0, 0};
  CHECK(tiou(span, gt) == 0.25);
  CHECK(tiou(gt, span) == 0.25);
  CHECK(tiou(gt, gt) == 1.0);
  CHECK(tiou({0, 0}, {0, 0}) == 1.0);
  CHECK_THROWS_AS(tiou({1}, {1, 0}), ShapeError);

  CHECK(ti_rate(std::vector<int>(10, 1)) == 0.0);
  CHECK(ti_rate(std::vector<int>(10, 0)) == 1.0);
  std::vector<int> g(100, 1);
  std::fill(g.begin(), g.begin() + 30, 0);
  CHECK(ti_rate(g) == doctest::Approx(0.3).epsilon(1e-15));

  // An all-frames prediction scores exactly 1 - TI.
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> truth(37);
    for (auto& v : truth) v = coin(rng);
    if (std::count(truth.begin(), truth.end(), 1) == 0) truth[5] = 1;
    CHECK(tiou(std::vector<int>(37, 1), truth) == doctest::Approx(1 - ti_rate(truth)).epsilon(1e-15));
  }
}

TEST_CASE("evaluate_expression protocol") {
  const EvalConfig cfg;
  const Mask obj = rect(16, 16, 4, 4, 10, 10), none = Mask::Zero(16, 16);
  const std::vector<Mask> gt = {none, none, obj, obj, obj, obj, none, none};

  const auto perfect = evaluate_expression(output_with(gt, 2, 5), gt, cfg, "a");
  CHECK(perfect.id == "a");
  CHECK(perfect.j == 1.0);
  CHECK(perfect.f == 1.0);
  CHECK(perfect.tiou == 1.0);
  CHECK(perfect.ti == 0.5);

  // Masks on every frame and the span over the whole clip: false-positive frames count J = 0.
  const auto whole = evaluate_expression(output_with(std::vector<Mask>(8, obj), 0, 7), gt, cfg);
  CHECK(whole.tiou == 0.5);
  CHECK(whole.j == 0.5);
  CHECK(whole.f == 0.5);
  CHECK(whole.jf == (whole.j + whole.f) / 2);

  const auto empty = evaluate_expression(output_with(std::vector<Mask>(8, none), 0, -1), gt, cfg);
  CHECK(empty.j == 0.0);
  CHECK(empty.f == 0.0);
  CHECK(empty.tiou == 0.0);

  const std::vector<Mask> absent(8, none);
  const auto correct_absent = evaluate_expression(output_with(absent, 3, 2), absent, cfg);
  CHECK(correct_absent.j == 1.0);
  CHECK(correct_absent.tiou == 1.0);
  CHECK(correct_absent.ti == 1.0);
}

TEST_CASE("grouped_report buckets and aggregation") {
  CHECK(ti_bucket(0.0) == 0);
  CHECK(ti_bucket(1.0 / 3.0) == 0);
  CHECK(ti_bucket(0.34) == 1);
  CHECK(ti_bucket(2.0 / 3.0) == 1);
  CHECK(ti_bucket(0.7) == 2);
  CHECK(ti_bucket(1.0) == 2);

  const ExpressionMetrics one{"x", 0.4, 0.6, 0.5, 0.7, 0.1};
  const auto single = grouped_report({one});
  CHECK(single.overall.j == 0.4);
  CHECK(single.overall.tiou == 0.7);
  CHECK(single.buckets[0]->count == 1);
  CHECK_FALSE(single.buckets[1].has_value());
  CHECK_FALSE(single.buckets[2].has_value());

  // Twelve expressions spread over the buckets against a plain recomputation.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<ExpressionMetrics> all;
  for (int i = 0; i < 12; ++i) {
    ExpressionMetrics m;
    m.id = std::to_string(i);
    m.j = u(rng), m.f = u(rng), m.tiou = u(rng);
    m.jf = (m.j + m.f) / 2;
    m.ti = i / 11.0;
    all.push_back(m);
  }
  const auto report = grouped_report(all);
  double sums[3][3] = {}, counts[3] = {};
  for (int i = 0; i < 12; ++i) {
    const int b = i <= 3 ? 0 : i <= 7 ? 1 : 2;
    sums[b][0] += all[i].j, sums[b][1] += all[i].f, sums[b][2] += all[i].tiou, counts[b] += 1;
  }
  Index total = 0;
  for (int b = 0; b < 3; ++b) {
    REQUIRE(report.buckets[b].has_value());
    const auto& g = *report.buckets[b];
    total += g.count;
    CHECK(g.count == counts[b]);
    CHECK(g.j == doctest::Approx(sums[b][0] / counts[b]).epsilon(1e-14));
    CHECK(g.f == doctest::Approx(sums[b][1] / counts[b]).epsilon(1e-14));
    CHECK(g.tiou == doctest::Approx(sums[b][2] / counts[b]).epsilon(1e-14));
    CHECK(g.jf == (g.j + g.f) / 2);
  }
  CHECK(total == 12);

  const auto json = report_to_json(report);
  CHECK(json["buckets"].size() == 3);
  CHECK(json["per_expression"].size() == 12);
  CHECK(json["overall"]["count"] == 12);
  CHECK(json["buckets"][1]["range"] == "33%-66%");
  const auto table = report_table(report);
  CHECK(table.find("66%-100% (4)") != std::string::npos);
  CHECK(table.find("J&F") != std::string::npos);
}

TEST_CASE("detect_scenes counts hard cuts") {
  Tensor<double> constant = Tensor<double>::constant({6, 3, 4, 4}, 0.5);
  CHECK(detect_scenes(constant, 0.3) == 1);
  // Cuts after frames 1 and 3.
  Tensor<double> cuts({6, 3, 4, 4});
  for (Index t = 0; t < 6; ++t)
    for (Index i = 0; i < 48; ++i) cuts[t * 48 + i] = (t / 2) % 2 ? 0.9 : 0.1;
  CHECK(detect_scenes(cuts, 0.3) == 3);
  CHECK(detect_scenes(cuts, 0.9) == 1);
}
