#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace cerberus::mgda {

// Flattened task-loss gradient over the shared trunk parameters, in
// canonical parameter order.
using GradientVector = Eigen::VectorXd;

enum class CaseKind { Interior, Edge, Vertex };

struct SolveCase {
  CaseKind kind = CaseKind::Interior;
  // Edge: the two retained task indices (i < j). Vertex: {i, -1}.
  int i = -1;
  int j = -1;

  std::string to_string() const;
};

// Convex-combination weights on the probability simplex. Entries are
// clamped at 0 (tolerance 1e-12 on the negative side) and sum to 1.
struct SimplexWeights {
  std::vector<double> alphas;

  double sum() const;
};

struct MinNormResult {
  SimplexWeights weights;
  Eigen::VectorXd combined;  // sum_t alpha_t g_t
  double norm = 0.0;         // ||combined||
  SolveCase case_taken;
};

// Pairwise inner products M[i][j] = g_i . g_j.
Eigen::Matrix3d gram(const GradientVector& g1, const GradientVector& g2,
                     const GradientVector& g3);

// Exact min-norm point in the segment between two gradients (closed form
// with vertex fallback when the projection leaves [0, 1]).
MinNormResult min_norm_two(const GradientVector& g_a, const GradientVector& g_b);

// Exact min-norm point in the convex hull of three gradients: interior
// linear solve first, then the smaller-norm edge, then an exhaustive scan of
// all edges and vertices if the edge heuristic fails the stationarity test.
MinNormResult min_norm_three(const GradientVector& g1, const GradientVector& g2,
                             const GradientVector& g3);

// Exhaustive simplex-grid scan with the given spacing; the independent
// oracle for the exact solvers. Accepts 2 or 3 gradients.
MinNormResult brute_force_min_norm(const std::vector<GradientVector>& gs, double step);

// First-order optimality of the min-norm point: g_t . w >= ||w||^2 - tol
// for every t. Holds vacuously when w = 0.
bool verify_stationarity(const MinNormResult& result, const std::vector<GradientVector>& gs,
                         double tol);

// Gram-space solvers used by the vector front-ends (public for tests).
namespace detail {
struct GramSolution {
  std::vector<double> alphas;
  double norm_sq = 0.0;
  SolveCase case_taken;
};
GramSolution solve_pair_gram(double mii, double mij, double mjj, int task_i, int task_j);
GramSolution solve_three_gram(const Eigen::Matrix3d& m);
}  // namespace detail

}  // namespace cerberus::mgda
