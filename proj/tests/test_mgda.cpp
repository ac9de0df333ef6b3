#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cerberus/mgda.hpp"
#include "cerberus/rng.hpp"

using namespace cerberus;
using namespace cerberus::mgda;

namespace {

GradientVector vec2(double a, double b) {
  GradientVector v(2);
  v << a, b;
  return v;
}

GradientVector vec3(double a, double b, double c) {
  GradientVector v(3);
  v << a, b, c;
  return v;
}

GradientVector random_vec(int n, Rng& rng) {
  GradientVector v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

double max_norm(const std::vector<GradientVector>& gs) {
  double m = 0.0;
  for (const auto& g : gs) m = std::max(m, g.norm());
  return m;
}

void check_simplex(const SimplexWeights& w) {
  CHECK(std::abs(w.sum() - 1.0) < 1e-9);
  for (double a : w.alphas) CHECK(a >= 0.0);
}

}  // namespace

TEST_SUITE_BEGIN("mgda");

TEST_CASE("gram examples") {
  GradientVector e1 = vec3(1, 0, 0), e2 = vec3(0, 1, 0), e3 = vec3(0, 0, 1);
  Eigen::Matrix3d id = gram(e1, e2, e3);
  CHECK(id.isApprox(Eigen::Matrix3d::Identity(), 1e-15));

  GradientVector v = vec3(1.0, -2.0, 0.5);
  Eigen::Matrix3d rank1 = gram(v, v, v);
  CHECK(rank1.isApproxToConstant(v.squaredNorm(), 1e-15));

  Eigen::Matrix3d m = gram(vec2(1, 0), vec2(0, 2), vec2(1, 1));
  Eigen::Matrix3d expect;
  expect << 1, 0, 1, 0, 4, 2, 1, 2, 2;
  CHECK(m.isApprox(expect, 1e-15));

  GradientVector bad = GradientVector::Zero(5);
  CHECK_THROWS(gram(e1, e2, bad));
}

TEST_CASE("min_norm_two closed forms are exact") {
  {
    MinNormResult r = min_norm_two(vec2(1, 0), vec2(0, 1));
    CHECK(std::abs(r.weights.alphas[0] - 0.5) < 1e-12);
    CHECK(std::abs(r.combined[0] - 0.5) < 1e-12);
    CHECK(std::abs(r.combined[1] - 0.5) < 1e-12);
    CHECK(r.case_taken.kind == CaseKind::Edge);
  }
  {
    MinNormResult r = min_norm_two(vec2(2, 0), vec2(0, 1));
    CHECK(std::abs(r.weights.alphas[0] - 0.2) < 1e-12);
    CHECK(std::abs(r.combined[0] - 0.4) < 1e-12);
    CHECK(std::abs(r.combined[1] - 0.8) < 1e-12);
    // Perpendicular to the difference of the inputs.
    CHECK(std::abs(r.combined.dot(vec2(2, 0) - vec2(0, 1))) < 1e-12);
  }
  {
    MinNormResult r = min_norm_two(vec2(1, 0), vec2(3, 0));
    CHECK(r.case_taken.kind == CaseKind::Vertex);
    CHECK(r.case_taken.i == 0);
    CHECK(r.weights.alphas[0] == 1.0);
    CHECK(std::abs(r.norm - 1.0) < 1e-12);
  }
  {
    MinNormResult r = min_norm_two(vec2(1, 2), vec2(-1, -2));
    CHECK(std::abs(r.weights.alphas[0] - 0.5) < 1e-12);
    CHECK(r.norm < 1e-12);
  }
  {
    // Coincident gradients keep full weight on the first input.
    MinNormResult r = min_norm_two(vec2(1, 2), vec2(1, 2));
    CHECK(r.weights.alphas[0] == 1.0);
    CHECK(std::abs(r.norm - std::sqrt(5.0)) < 1e-12);
  }
}

TEST_CASE("min_norm_three geometric cases") {
  {
    MinNormResult r = min_norm_three(vec3(1, 0, 0), vec3(0, 1, 0), vec3(0, 0, 1));
    for (double a : r.weights.alphas) CHECK(std::abs(a - 1.0 / 3.0) < 1e-12);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(r.combined[i] - 1.0 / 3.0) < 1e-12);
    CHECK(r.case_taken.kind == CaseKind::Interior);
  }
  {
    MinNormResult r = min_norm_three(vec2(1, 0), vec2(0, 1), vec2(5, 5));
    CHECK(r.case_taken.kind == CaseKind::Edge);
    CHECK(r.case_taken.i == 0);
    CHECK(r.case_taken.j == 1);
    CHECK(std::abs(r.combined[0] - 0.5) < 1e-12);
    CHECK(std::abs(r.combined[1] - 0.5) < 1e-12);
    CHECK(std::abs(r.weights.alphas[2]) == 0.0);
    // Stationary against the dropped gradient.
    CHECK(r.combined.dot(vec2(5, 5)) >= r.norm * r.norm - 1e-12);
  }
  {
    GradientVector v = vec3(0.3, -1.0, 2.0);
    MinNormResult r = min_norm_three(v, v, v);
    for (double a : r.weights.alphas) CHECK(std::abs(a - 1.0 / 3.0) < 1e-12);
    CHECK(std::abs(r.norm - v.norm()) < 1e-12);
  }
  {
    GradientVector z = vec3(0, 0, 0);
    MinNormResult r = min_norm_three(z, z, z);
    CHECK(r.norm == 0.0);
    for (double a : r.weights.alphas) CHECK(std::abs(a - 1.0 / 3.0) < 1e-12);
  }
  {
    // A zero gradient makes w = 0 optimal with full weight on it.
    MinNormResult r = min_norm_three(vec2(0, 0), vec2(3, 0), vec2(0, 2));
    CHECK(r.norm < 1e-12);
    CHECK(std::abs(r.weights.alphas[0] - 1.0) < 1e-9);
  }
}

TEST_CASE("brute force agrees with the exact pair solver") {
  Rng rng(101);
  const double step = 1e-3;
  for (int trial = 0; trial < 200; ++trial) {
    GradientVector a = random_vec(6, rng), b = random_vec(6, rng);
    MinNormResult exact = min_norm_two(a, b);
    MinNormResult grid = brute_force_min_norm({a, b}, step);
    const double slack = step * max_norm({a, b});
    CHECK(exact.norm <= grid.norm + 1e-12);
    CHECK(grid.norm <= exact.norm + slack);
  }
}

TEST_CASE("brute force on the symmetric orthonormal triple") {
  MinNormResult r =
      brute_force_min_norm({vec3(1, 0, 0), vec3(0, 1, 0), vec3(0, 0, 1)}, 1e-2);
  for (double a : r.weights.alphas) CHECK(std::abs(a - 1.0 / 3.0) < 1e-2);
}

TEST_CASE("brute force concentrates on a dominant tiny gradient") {
  const double eps = 1e-3;
  MinNormResult r =
      brute_force_min_norm({vec2(eps, 0), vec2(9, 0), vec2(0, 9)}, 5e-3);
  CHECK(r.weights.alphas[0] > 0.99);
}

TEST_CASE("stationarity verification") {
  Rng rng(202);
  // Solver outputs over random instances are stationary.
  for (int trial = 0; trial < 1000; ++trial) {
    GradientVector a = random_vec(5, rng), b = random_vec(5, rng), c = random_vec(5, rng);
    MinNormResult r = min_norm_three(a, b, c);
    CHECK(verify_stationarity(r, {a, b, c}, 1e-8));
    check_simplex(r.weights);
  }
  // w = 0 verifies vacuously.
  GradientVector z = vec2(0, 0);
  MinNormResult zero = min_norm_three(z, z, z);
  CHECK(verify_stationarity(zero, {z, z, z}, 1e-8));
  // Deliberately wrong weights on the orthonormal triple fail.
  MinNormResult wrong;
  wrong.weights.alphas = {1.0, 0.0, 0.0};
  wrong.combined = vec3(1, 0, 0);
  wrong.norm = 1.0;
  CHECK_FALSE(verify_stationarity(wrong, {vec3(1, 0, 0), vec3(0, 1, 0), vec3(0, 0, 1)}, 1e-8));
}

TEST_CASE("solver never exceeds the oracle by more than grid resolution") {
  Rng rng(303);
  const double step = 5e-3;
  for (int trial = 0; trial < 100; ++trial) {
    GradientVector a = random_vec(8, rng), b = random_vec(8, rng), c = random_vec(8, rng);
    MinNormResult exact = min_norm_three(a, b, c);
    MinNormResult grid = brute_force_min_norm({a, b, c}, step);
    CHECK(exact.norm <= grid.norm + step * max_norm({a, b, c}));
  }
}

TEST_CASE("permutation equivariance") {
  Rng rng(404);
  for (int trial = 0; trial < 100; ++trial) {
    GradientVector g[3] = {random_vec(7, rng), random_vec(7, rng), random_vec(7, rng)};
    MinNormResult base = min_norm_three(g[0], g[1], g[2]);
    const int perms[5][3] = {{0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    for (const auto& p : perms) {
      MinNormResult permuted = min_norm_three(g[p[0]], g[p[1]], g[p[2]]);
      for (int t = 0; t < 3; ++t) {
        CHECK(std::abs(permuted.weights.alphas[t] - base.weights.alphas[p[t]]) < 1e-8);
      }
      CHECK(std::abs(permuted.norm - base.norm) < 1e-8);
    }
  }
}

TEST_CASE("positive scaling leaves weights unchanged and scales the norm") {
  Rng rng(505);
  for (int trial = 0; trial < 100; ++trial) {
    GradientVector a = random_vec(6, rng), b = random_vec(6, rng), c = random_vec(6, rng);
    const double scale = rng.uniform(0.1, 10.0);
    MinNormResult base = min_norm_three(a, b, c);
    MinNormResult scaled = min_norm_three(scale * a, scale * b, scale * c);
    for (int t = 0; t < 3; ++t) {
      CHECK(std::abs(scaled.weights.alphas[t] - base.weights.alphas[t]) < 1e-9);
    }
    CHECK(std::abs(scaled.norm - scale * base.norm) < 1e-7 * std::max(1.0, scale * base.norm));
  }
}

TEST_CASE("case labels are reported") {
  CHECK(min_norm_three(vec3(1, 0, 0), vec3(0, 1, 0), vec3(0, 0, 1)).case_taken.to_string() ==
        "interior");
  CHECK(min_norm_three(vec2(1, 0), vec2(0, 1), vec2(5, 5)).case_taken.to_string() == "edge(0,1)");
  CHECK(min_norm_two(vec2(1, 0), vec2(3, 0)).case_taken.to_string() == "vertex(0)");
}

TEST_SUITE_END();
