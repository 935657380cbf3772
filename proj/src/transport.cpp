#include "optvq/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "optvq/error.hpp"

namespace optvq {

void SinkhornConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw ConfigError("sinkhorn epsilon must be positive and finite");
  }
  if (iterations < 1) throw ConfigError("sinkhorn iterations must be >= 1");
}

namespace {

void normalize_cost_inplace(Matrix& m) {
  if (m.empty()) throw ShapeError("normalize_cost: empty cost matrix");
  for (double v : m.data())
    if (!std::isfinite(v)) throw NumericalError("normalize_cost: non-finite cost entry");
  const auto [mean, sd] = matrix_stats(m);
  if (!(sd > kStdGuard)) {
    std::fill(m.data().begin(), m.data().end(), 0.0);
    return;
  }
  double lo = std::numeric_limits<double>::infinity();
  for (double& v : m.data()) {
    v = (v - mean) / sd;
    lo = std::min(lo, v);
  }
  for (double& v : m.data()) v -= lo;
}

void exp_kernel_inplace(Matrix& m, double epsilon) {
  for (double& c : m.data()) {
    const double v = std::exp(-epsilon * c);
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "sinkhorn_init: exp(-" << epsilon << " * " << c
         << ") is not finite; normalize the cost matrix first";
      throw NumericalError(os.str());
    }
    c = v;
  }
}

}  // namespace

Matrix normalize_cost(const Matrix& cost) {
  Matrix out = cost;
  normalize_cost_inplace(out);
  return out;
}

TransportPlan sinkhorn_init(const Matrix& cost, double epsilon) {
  TransportPlan tp{cost, 0};
  exp_kernel_inplace(tp.plan, epsilon);
  return tp;
}

void normalize_rows(Matrix& a, double target) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    double sum = 0.0;
    for (double& v : r) {
      v = std::max(v, kUnderflowFloor);
      sum += v;
    }
    const double scale = target / sum;
    for (double& v : r) v *= scale;
  }
}

void normalize_columns(Matrix& a, double target) {
  std::vector<double> sums(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      r[j] = std::max(r[j], kUnderflowFloor);
      sums[j] += r[j];
    }
  }
  for (double& s : sums) s = target / s;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] *= sums[j];
  }
}

void sinkhorn_resume(TransportPlan& tp, int iterations, bool balanced) {
  const double col_target =
      balanced ? static_cast<double>(tp.plan.rows()) / static_cast<double>(tp.plan.cols()) : 1.0;
  for (int t = 0; t < iterations; ++t) {
    normalize_rows(tp.plan, 1.0);
    normalize_columns(tp.plan, col_target);
    ++tp.iterations_run;
  }
}

TransportPlan sinkhorn(const Matrix& cost, const SinkhornConfig& cfg) {
  return sinkhorn(Matrix(cost), cfg);
}

TransportPlan sinkhorn(Matrix&& cost, const SinkhornConfig& cfg) {
  cfg.validate();
  if (cost.empty()) throw ShapeError("sinkhorn: empty cost matrix");
  TransportPlan tp{std::move(cost), 0};
  if (cfg.normalize) normalize_cost_inplace(tp.plan);
  exp_kernel_inplace(tp.plan, cfg.epsilon);
  sinkhorn_resume(tp, cfg.iterations, cfg.balanced);
  return tp;
}

TransportPlan sinkhorn_converged(const Matrix& cost, double epsilon, double tol, int max_iters,
                                 bool normalize, bool balanced) {
  if (!(tol > 0.0)) throw ConfigError("sinkhorn_converged: tol must be positive");
  if (max_iters < 1) throw ConfigError("sinkhorn_converged: max_iters must be >= 1");
  if (cost.empty()) throw ShapeError("sinkhorn_converged: empty cost matrix");

  const Matrix kernel = sinkhorn_init(normalize ? normalize_cost(cost) : cost, epsilon).plan;
  const std::size_t l = kernel.rows();
  const std::size_t n = kernel.cols();
  const double col_target = balanced ? static_cast<double>(l) / static_cast<double>(n) : 1.0;

  // Plan = diag(u) K diag(v); each sweep solves u against the row marginal,
  // then v against the column marginal.
  std::vector<double> u(l, 1.0);
  std::vector<double> v(n, 1.0);
  Matrix prev = kernel;
  Matrix plan(l, n);
  double residual = 0.0;
  for (int it = 1; it <= max_iters; ++it) {
    for (std::size_t i = 0; i < l; ++i) {
      double kv = 0.0;
      for (std::size_t j = 0; j < n; ++j) kv += kernel(i, j) * v[j];
      u[i] = 1.0 / std::max(kv, kUnderflowFloor);
    }
    for (std::size_t j = 0; j < n; ++j) {
      double ktu = 0.0;
      for (std::size_t i = 0; i < l; ++i) ktu += kernel(i, j) * u[i];
      v[j] = col_target / std::max(ktu, kUnderflowFloor);
    }
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = 0; j < n; ++j) plan(i, j) = u[i] * kernel(i, j) * v[j];
    residual = max_abs_diff(plan, prev);
    if (residual < tol) return {plan, it};
    std::swap(prev, plan);
  }
  std::ostringstream os;
  os << "sinkhorn_converged: no convergence in " << max_iters << " iterations (residual "
     << residual << ", tol " << tol << ")";
  throw ConvergenceError(os.str(), residual);
}

double ot_objective(const Matrix& plan, const Matrix& cost, double epsilon) {
  if (plan.rows() != cost.rows() || plan.cols() != cost.cols()) {
    throw ShapeError("ot_objective: plan " + plan.shape_str() + " vs cost " + cost.shape_str());
  }
  double transport = 0.0;
  double entropy = 0.0;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const double a = plan.data()[k];
    transport += a * cost.data()[k];
    if (a > 0.0) entropy -= a * std::log(a);
  }
  return transport - entropy / epsilon;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
  }
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.data()[k] - b.data()[k]));
  return m;
}

}  // namespace optvq
