#include "cerberus/mgda.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "cerberus/errors.hpp"

namespace cerberus::mgda {

std::string SolveCase::to_string() const {
  switch (kind) {
    case CaseKind::Interior:
      return "interior";
    case CaseKind::Edge:
      return "edge(" + std::to_string(i) + "," + std::to_string(j) + ")";
    case CaseKind::Vertex:
      return "vertex(" + std::to_string(i) + ")";
  }
  return "?";
}

double SimplexWeights::sum() const {
  double s = 0.0;
  for (double a : alphas) s += a;
  return s;
}

namespace detail {

GramSolution solve_pair_gram(double mii, double mij, double mjj, int task_i, int task_j) {
  GramSolution sol;
  const double denom = mii - 2.0 * mij + mjj;  // ||g_i - g_j||^2
  if (denom <= 1e-300) {
    // Coincident gradients: keep full weight on the first.
    sol.alphas = {1.0, 0.0};
    sol.norm_sq = mii;
    sol.case_taken = {CaseKind::Vertex, task_i, -1};
    return sol;
  }
  const double alpha = (mjj - mij) / denom;
  if (alpha >= 1.0) {
    sol.alphas = {1.0, 0.0};
    sol.norm_sq = mii;
    sol.case_taken = {CaseKind::Vertex, task_i, -1};
  } else if (alpha <= 0.0) {
    sol.alphas = {0.0, 1.0};
    sol.norm_sq = mjj;
    sol.case_taken = {CaseKind::Vertex, task_j, -1};
  } else {
    sol.alphas = {alpha, 1.0 - alpha};
    sol.norm_sq = alpha * alpha * mii + 2.0 * alpha * (1.0 - alpha) * mij +
                  (1.0 - alpha) * (1.0 - alpha) * mjj;
    sol.case_taken = {CaseKind::Edge, task_i, task_j};
  }
  sol.norm_sq = std::max(sol.norm_sq, 0.0);
  return sol;
}

namespace {

double norm_sq_from_gram(const Eigen::Matrix3d& m, const std::vector<double>& alphas) {
  Eigen::Vector3d a(alphas[0], alphas[1], alphas[2]);
  return std::max(0.0, a.dot(m * a));
}

// Embeds a pair solution over tasks {i, j} into a 3-task weight vector.
GramSolution embed_pair(const Eigen::Matrix3d& m, int i, int j) {
  GramSolution pair = solve_pair_gram(m(i, i), m(i, j), m(j, j), i, j);
  GramSolution out;
  out.alphas = {0.0, 0.0, 0.0};
  out.alphas[static_cast<std::size_t>(i)] = pair.alphas[0];
  out.alphas[static_cast<std::size_t>(j)] = pair.alphas[1];
  out.norm_sq = pair.norm_sq;
  out.case_taken = pair.case_taken;
  return out;
}

}  // namespace

GramSolution solve_three_gram(const Eigen::Matrix3d& m) {
  GramSolution sol;
  const double scale = m.diagonal().maxCoeff();
  if (scale <= 0.0) {
    // All gradients are zero; any point of the simplex is optimal.
    sol.alphas = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    sol.norm_sq = 0.0;
    sol.case_taken = {CaseKind::Interior, -1, -1};
    return sol;
  }
  const Eigen::Matrix3d mn = m / scale;

  // Coincident gradients collapse the hull to a point; any weights are
  // optimal and the centroid is returned.
  bool coincident = true;
  for (int i = 0; i < 3 && coincident; ++i) {
    for (int j = i + 1; j < 3; ++j) {
      if (m(i, i) - 2.0 * m(i, j) + m(j, j) > 1e-12 * scale) {
        coincident = false;
        break;
      }
    }
  }
  if (coincident) {
    sol.alphas = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    sol.norm_sq = norm_sq_from_gram(m, sol.alphas);
    sol.case_taken = {CaseKind::Interior, -1, -1};
    return sol;
  }

  // Perpendicularity to both hull edges plus the simplex constraint.
  Eigen::Matrix3d a;
  a.row(0) = mn.row(0) - mn.row(1);
  a.row(1) = mn.row(0) - mn.row(2);
  a.row(2) = Eigen::RowVector3d::Ones();
  Eigen::FullPivLU<Eigen::Matrix3d> lu(a);
  if (lu.isInvertible()) {
    const Eigen::Vector3d alpha = lu.solve(Eigen::Vector3d(0.0, 0.0, 1.0));
    if (alpha.minCoeff() >= -1e-12) {
      std::vector<double> clamped = {std::max(alpha[0], 0.0), std::max(alpha[1], 0.0),
                                     std::max(alpha[2], 0.0)};
      const double total = clamped[0] + clamped[1] + clamped[2];
      for (double& v : clamped) v /= total;
      sol.alphas = clamped;
      sol.norm_sq = norm_sq_from_gram(m, clamped);
      sol.case_taken = {CaseKind::Interior, -1, -1};
      return sol;
    }
  }

  // Drop the largest-norm gradient (ties keep the lower task index) and
  // solve on the remaining pair.
  const double tie_eps = 1e-12 * scale;
  const double max_diag = m.diagonal().maxCoeff();
  int dropped = 0;
  for (int t = 0; t < 3; ++t) {
    if (m(t, t) >= max_diag - tie_eps) dropped = t;
  }
  const int i = dropped == 0 ? 1 : 0;
  const int j = dropped == 2 ? 1 : 2;
  GramSolution edge = embed_pair(m, i, j);

  // Accept the edge solution only if it is stationary against the dropped
  // gradient; otherwise scan every edge for the boundary minimum.
  const double tol = 1e-9 * scale;
  Eigen::Vector3d alpha_vec(edge.alphas[0], edge.alphas[1], edge.alphas[2]);
  const double w_dot_dropped = m.row(dropped).dot(alpha_vec);
  if (w_dot_dropped >= edge.norm_sq - tol) {
    return edge;
  }
  GramSolution best = edge;
  const int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  for (const auto& p : pairs) {
    GramSolution cand = embed_pair(m, p[0], p[1]);
    if (cand.norm_sq < best.norm_sq) best = cand;
  }
  return best;
}

}  // namespace detail

namespace {

void require_equal_lengths(const std::vector<const GradientVector*>& gs) {
  const long n = gs[0]->size();
  if (n == 0) throw DimensionError("min-norm solve: zero-length gradient vectors");
  for (const GradientVector* g : gs) {
    if (g->size() != n) {
      throw DimensionError("min-norm solve: gradient lengths disagree (" + std::to_string(n) +
                           " vs " + std::to_string(g->size()) + ")");
    }
  }
}

MinNormResult materialize(const detail::GramSolution& sol,
                          const std::vector<const GradientVector*>& gs) {
  MinNormResult result;
  result.weights.alphas = sol.alphas;
  result.combined = Eigen::VectorXd::Zero(gs[0]->size());
  for (std::size_t t = 0; t < gs.size(); ++t) {
    if (sol.alphas[t] != 0.0) result.combined += sol.alphas[t] * (*gs[t]);
  }
  result.norm = result.combined.norm();
  result.case_taken = sol.case_taken;
  return result;
}

}  // namespace

Eigen::Matrix3d gram(const GradientVector& g1, const GradientVector& g2,
                     const GradientVector& g3) {
  require_equal_lengths({&g1, &g2, &g3});
  Eigen::Matrix3d m;
  m(0, 0) = g1.dot(g1);
  m(0, 1) = m(1, 0) = g1.dot(g2);
  m(0, 2) = m(2, 0) = g1.dot(g3);
  m(1, 1) = g2.dot(g2);
  m(1, 2) = m(2, 1) = g2.dot(g3);
  m(2, 2) = g3.dot(g3);
  return m;
}

MinNormResult min_norm_two(const GradientVector& g_a, const GradientVector& g_b) {
  require_equal_lengths({&g_a, &g_b});
  const detail::GramSolution sol =
      detail::solve_pair_gram(g_a.dot(g_a), g_a.dot(g_b), g_b.dot(g_b), 0, 1);
  return materialize(sol, {&g_a, &g_b});
}

MinNormResult min_norm_three(const GradientVector& g1, const GradientVector& g2,
                             const GradientVector& g3) {
  const Eigen::Matrix3d m = gram(g1, g2, g3);
  const detail::GramSolution sol = detail::solve_three_gram(m);
  return materialize(sol, {&g1, &g2, &g3});
}

MinNormResult brute_force_min_norm(const std::vector<GradientVector>& gs, double step) {
  if (gs.size() != 2 && gs.size() != 3) {
    throw ConfigError("brute_force_min_norm: expected 2 or 3 gradients");
  }
  if (!(step > 0.0 && step <= 0.5)) {
    throw ConfigError("brute_force_min_norm: step must lie in (0, 0.5]");
  }
  std::vector<const GradientVector*> ptrs;
  for (const GradientVector& g : gs) ptrs.push_back(&g);
  require_equal_lengths(ptrs);

  const int n = std::max(2, static_cast<int>(std::llround(1.0 / step)));
  const std::size_t t_count = gs.size();
  Eigen::MatrixXd m(t_count, t_count);
  for (std::size_t a = 0; a < t_count; ++a) {
    for (std::size_t b = a; b < t_count; ++b) {
      m(static_cast<long>(a), static_cast<long>(b)) = gs[a].dot(gs[b]);
      m(static_cast<long>(b), static_cast<long>(a)) = m(static_cast<long>(a), static_cast<long>(b));
    }
  }

  std::vector<double> best_alphas;
  double best = std::numeric_limits<double>::infinity();
  if (t_count == 2) {
    for (int i = 0; i <= n; ++i) {
      const double a0 = static_cast<double>(i) / n;
      const double a1 = 1.0 - a0;
      const double v = a0 * a0 * m(0, 0) + 2.0 * a0 * a1 * m(0, 1) + a1 * a1 * m(1, 1);
      if (v < best) {
        best = v;
        best_alphas = {a0, a1};
      }
    }
  } else {
    for (int i = 0; i <= n; ++i) {
      for (int j = 0; j <= n - i; ++j) {
        const double a0 = static_cast<double>(i) / n;
        const double a1 = static_cast<double>(j) / n;
        const double a2 = 1.0 - a0 - a1;
        Eigen::Vector3d a(a0, a1, a2);
        const double v = a.dot(m * a);
        if (v < best) {
          best = v;
          best_alphas = {a0, a1, a2};
        }
      }
    }
  }

  detail::GramSolution sol;
  sol.alphas = best_alphas;
  sol.norm_sq = std::max(0.0, best);
  int zeros = 0;
  for (double a : best_alphas) {
    if (a == 0.0) ++zeros;
  }
  if (zeros == 0) {
    sol.case_taken = {CaseKind::Interior, -1, -1};
  } else if (zeros + 1 == static_cast<int>(t_count)) {
    for (std::size_t t = 0; t < t_count; ++t) {
      if (best_alphas[t] != 0.0) sol.case_taken = {CaseKind::Vertex, static_cast<int>(t), -1};
    }
  } else {
    int first = -1, second = -1;
    for (std::size_t t = 0; t < t_count; ++t) {
      if (best_alphas[t] != 0.0) (first < 0 ? first : second) = static_cast<int>(t);
    }
    sol.case_taken = {CaseKind::Edge, first, second};
  }
  return materialize(sol, ptrs);
}

bool verify_stationarity(const MinNormResult& result, const std::vector<GradientVector>& gs,
                         double tol) {
  const double wn2 = result.combined.squaredNorm();
  for (const GradientVector& g : gs) {
    if (g.dot(result.combined) < wn2 - tol) return false;
  }
  return true;
}

}  // namespace cerberus::mgda
