#pragma once

#include <cstddef>

#include "optvq/numerics.hpp"

namespace optvq {

struct SinkhornConfig {
  double epsilon = 10.0;
  int iterations = 5;
  bool normalize = true;
  // Off: rows -> 1 and columns -> 1 as in the plain alternating scheme.
  // On: columns are scaled to l/n so both marginals carry the same mass.
  bool balanced = false;

  void validate() const;
};

struct TransportPlan {
  Matrix plan;
  int iterations_run = 0;
};

inline constexpr double kStdGuard = 1e-8;
inline constexpr double kUnderflowFloor = 1e-300;

// Standardize to zero mean / unit std, then shift so the minimum is 0.
// A matrix with std <= kStdGuard maps to all zeros.
Matrix normalize_cost(const Matrix& cost);

// A0 = exp(-epsilon * cost). Throws NumericalError on non-finite entries.
TransportPlan sinkhorn_init(const Matrix& cost, double epsilon);

// Scale each row to sum to `target`. Entries are floored at kUnderflowFloor.
void normalize_rows(Matrix& a, double target = 1.0);
void normalize_columns(Matrix& a, double target = 1.0);

// Continue an existing plan for `iterations` more row+column rounds.
void sinkhorn_resume(TransportPlan& plan, int iterations, bool balanced = false);

// Fixed-iteration solver: optional normalize_cost, init, then
// cfg.iterations rounds of (row normalize, column normalize).
TransportPlan sinkhorn(const Matrix& cost, const SinkhornConfig& cfg = {});
// Same, reusing the cost buffer for the plan.
TransportPlan sinkhorn(Matrix&& cost, const SinkhornConfig& cfg = {});

// Runs scaling-vector Sinkhorn until the plan's max entrywise change between
// sweeps drops below tol. Throws ConvergenceError after max_iters.
TransportPlan sinkhorn_converged(const Matrix& cost, double epsilon, double tol, int max_iters,
                                 bool normalize = true, bool balanced = false);

// Tr(A^T D) - (1/epsilon) H(A), H(A) = -sum A log A with 0 log 0 = 0.
double ot_objective(const Matrix& plan, const Matrix& cost, double epsilon);

// Largest absolute entrywise difference between two same-shape matrices.
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace optvq
