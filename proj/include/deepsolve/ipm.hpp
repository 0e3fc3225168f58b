#pragma once

// Primal-dual interior point method for
//
//   min f(x)  s.t.  g(x) = 0,  h(x) <= 0,  xmin <= x <= xmax
//
// Inequalities carry slacks z > 0 with multipliers mu > 0; each iteration takes
// a Newton step on the barrier-perturbed KKT system, limits the step with the
// fraction-to-the-boundary rule and then shrinks the barrier parameter to
// sigma * z'mu / m.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

namespace deepsolve::ipm {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplets = std::vector<Eigen::Triplet<double>>;

/// What a problem supplies to the solver. Jacobians have one row per
/// constraint; `hessian` returns the Hessian of
/// cost_mult*f + lam'g + mu'h (lower and upper parts both filled).
template <typename P>
concept NlpProblem = requires(const P& p, const Eigen::VectorXd& x, Eigen::VectorXd& v, SparseMatrix& m, double s) {
  { p.num_variables() } -> std::convertible_to<Eigen::Index>;
  { p.objective(x, v) } -> std::convertible_to<double>;
  p.constraints(x, v, m, v, m);
  { p.hessian(x, x, x, s) } -> std::convertible_to<SparseMatrix>;
};

struct Options {
  double eq_tol = 1e-8;    // ||g||_inf, unscaled
  double ineq_tol = 1e-6;  // max(h), unscaled
  double grad_tol = 1e-6;
  double comp_tol = 1e-6;
  double cost_tol = 1e-6;
  int max_iterations = 150;
  double step_fraction = 0.99995;
  double sigma = 0.1;
  double z0 = 1.0;             // initial slack floor
  double initial_barrier = 1.0;
  double cost_mult = 1.0;
};

enum class Status { Converged, IterationLimit, NumericalFailure, Diverged };

inline std::string_view to_string(Status s) {
  switch (s) {
    case Status::Converged: return "converged";
    case Status::IterationLimit: return "iteration-limit";
    case Status::NumericalFailure: return "numerical-failure";
    case Status::Diverged: return "diverged";
  }
  return "?";
}

struct Result {
  Eigen::VectorXd x;
  Eigen::VectorXd lam;  // equality multipliers, nonlinear then fixed-variable rows
  Eigen::VectorXd mu;   // inequality multipliers, nonlinear then bound rows
  Eigen::VectorXd z;
  double objective = 0.0;  // unscaled f(x)
  int iterations = 0;
  Status status = Status::IterationLimit;
  double eq_violation = 0.0;
  double ineq_violation = 0.0;
  double gradcond = 0.0;
  double compcond = 0.0;
  double costcond = 0.0;

  bool converged() const noexcept { return status == Status::Converged; }
  double kkt_residual() const noexcept {
    return std::max({eq_violation, ineq_violation, gradcond, compcond});
  }
};

namespace detail {

// Bound rows: each is +/- x_j compared against a constant.
struct BoundRows {
  std::vector<Eigen::Index> fixed;  // xmin == xmax -> x_j - xmin = 0
  std::vector<Eigen::Index> var;    // inequality rows: sign*x_j - rhs <= 0
  std::vector<double> sign;
  std::vector<double> rhs;
};

inline BoundRows classify_bounds(const Eigen::VectorXd& xmin, const Eigen::VectorXd& xmax) {
  constexpr double big = 1e10;
  constexpr double eps = std::numeric_limits<double>::epsilon();
  BoundRows b;
  for (Eigen::Index j = 0; j < xmin.size(); ++j) {
    if (std::abs(xmax[j] - xmin[j]) <= eps) {
      b.fixed.push_back(j);
      continue;
    }
    if (xmax[j] < big) {
      b.var.push_back(j);
      b.sign.push_back(1.0);
      b.rhs.push_back(xmax[j]);
    }
    if (xmin[j] > -big) {
      b.var.push_back(j);
      b.sign.push_back(-1.0);
      b.rhs.push_back(-xmin[j]);
    }
  }
  return b;
}

inline double max_or_zero(const Eigen::VectorXd& v) { return v.size() ? v.maxCoeff() : 0.0; }
inline double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

}  // namespace detail

template <NlpProblem Problem>
Result solve(const Problem& problem, Eigen::VectorXd x, const Eigen::VectorXd& xmin, const Eigen::VectorXd& xmax,
             const Options& opt = {}) {
  using Eigen::Index;
  using Eigen::VectorXd;
  const Index nx = problem.num_variables();
  const auto bounds = detail::classify_bounds(xmin, xmax);
  for (Index j : bounds.fixed) x[j] = xmin[j];

  VectorXd gn, hn, grad;
  SparseMatrix jgn, jhn;
  VectorXd g, h;
  SparseMatrix jg, jh;  // full Jacobians incl. bound rows

  auto evaluate = [&](const VectorXd& xx, bool with_derivatives) {
    double f = problem.objective(xx, grad);
    problem.constraints(xx, gn, jgn, hn, jhn);
    const Index neqn = gn.size(), niqn = hn.size();
    const Index nfix = static_cast<Index>(bounds.fixed.size());
    const Index nvar = static_cast<Index>(bounds.var.size());
    g.resize(neqn + nfix);
    g.head(neqn) = gn;
    for (Index k = 0; k < nfix; ++k) g[neqn + k] = xx[bounds.fixed[static_cast<std::size_t>(k)]] - xmin[bounds.fixed[static_cast<std::size_t>(k)]];
    h.resize(niqn + nvar);
    h.head(niqn) = hn;
    for (Index k = 0; k < nvar; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      h[niqn + k] = bounds.sign[ku] * xx[bounds.var[ku]] - bounds.rhs[ku];
    }
    if (with_derivatives) {
      Triplets t;
      t.reserve(static_cast<std::size_t>(jgn.nonZeros() + nfix));
      for (Index k = 0; k < jgn.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(jgn, k); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
      for (Index k = 0; k < nfix; ++k) t.emplace_back(neqn + k, bounds.fixed[static_cast<std::size_t>(k)], 1.0);
      jg.resize(neqn + nfix, nx);
      jg.setFromTriplets(t.begin(), t.end());
      t.clear();
      for (Index k = 0; k < jhn.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(jhn, k); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
      for (Index k = 0; k < nvar; ++k)
        t.emplace_back(niqn + k, bounds.var[static_cast<std::size_t>(k)], bounds.sign[static_cast<std::size_t>(k)]);
      jh.resize(niqn + nvar, nx);
      jh.setFromTriplets(t.begin(), t.end());
    }
    return f;
  };

  Result res;
  double f = evaluate(x, true);
  const Index neq = g.size(), niq = h.size();
  const Index neqn = gn.size(), niqn = hn.size();

  double gamma = opt.initial_barrier;
  VectorXd lam = VectorXd::Zero(neq);
  VectorXd z = VectorXd::Constant(niq, opt.z0);
  VectorXd mu = VectorXd::Constant(niq, opt.z0);
  for (Index k = 0; k < niq; ++k) {
    if (h[k] < -opt.z0) z[k] = -h[k];
    if (gamma / z[k] > opt.z0) mu[k] = gamma / z[k];
  }

  double f_prev = f;
  auto lagrangian_gradient = [&]() -> VectorXd {
    VectorXd lx = opt.cost_mult * grad;
    if (neq) lx += jg.transpose() * lam;
    if (niq) lx += jh.transpose() * mu;
    return lx;
  };
  auto measure = [&](const VectorXd& lx) {
    const double xnorm = detail::inf_norm(x);
    res.eq_violation = detail::inf_norm(g);
    res.ineq_violation = std::max(0.0, detail::max_or_zero(h));
    res.gradcond = detail::inf_norm(lx) / (1.0 + std::max(detail::inf_norm(lam), detail::inf_norm(mu)));
    res.compcond = (niq ? z.dot(mu) : 0.0) / (1.0 + xnorm);
    res.costcond = opt.cost_mult * std::abs(f - f_prev) / (1.0 + opt.cost_mult * std::abs(f_prev));
    return res.eq_violation <= opt.eq_tol && res.ineq_violation <= opt.ineq_tol && res.gradcond <= opt.grad_tol &&
           res.compcond <= opt.comp_tol && res.costcond <= opt.cost_tol;
  };

  VectorXd lx = lagrangian_gradient();
  bool done = measure(lx);
  res.status = done ? Status::Converged : Status::IterationLimit;
  int iter = 0;
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
  bool pattern_ready = false;

  while (!done && iter < opt.max_iterations) {
    ++iter;
    SparseMatrix lxx = problem.hessian(x, lam.head(neqn), mu.head(niqn), opt.cost_mult);
    VectorXd zinv = z.cwiseInverse();
    SparseMatrix m = lxx;
    VectorXd nvec = lx;
    if (niq) {
      SparseMatrix scaled = (zinv.cwiseProduct(mu)).asDiagonal() * jh;
      m += SparseMatrix(jh.transpose() * scaled);
      nvec += jh.transpose() * (zinv.cwiseProduct(mu.cwiseProduct(h) + VectorXd::Constant(niq, gamma)));
    }
    // [M  Jg'; Jg  0] [dx; dlam] = [-N; -g]
    Triplets t;
    t.reserve(static_cast<std::size_t>(m.nonZeros() + 2 * jg.nonZeros() + neq));
    for (Index k = 0; k < m.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(m, k); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
    for (Index k = 0; k < jg.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(jg, k); it; ++it) {
        t.emplace_back(nx + it.row(), it.col(), it.value());
        t.emplace_back(it.col(), nx + it.row(), it.value());
      }
    // explicit zero diagonal keeps the sparsity pattern stable across iterations
    for (Index k = 0; k < neq; ++k) t.emplace_back(nx + k, nx + k, 0.0);
    for (Index k = 0; k < nx; ++k) t.emplace_back(k, k, 0.0);
    SparseMatrix kkt(nx + neq, nx + neq);
    kkt.setFromTriplets(t.begin(), t.end());
    kkt.makeCompressed();
    VectorXd rhs(nx + neq);
    rhs.head(nx) = -nvec;
    rhs.tail(neq) = -g;

    if (!pattern_ready) {
      lu.analyzePattern(kkt);
      pattern_ready = true;
    }
    lu.factorize(kkt);
    if (lu.info() != Eigen::Success) {
      // pattern may differ when a Hessian entry vanishes; retry from scratch
      lu.analyzePattern(kkt);
      lu.factorize(kkt);
      if (lu.info() != Eigen::Success) {
        res.status = Status::NumericalFailure;
        break;
      }
    }
    VectorXd sol = lu.solve(rhs);
    if (!sol.allFinite()) {
      res.status = Status::NumericalFailure;
      break;
    }
    VectorXd dx = sol.head(nx);
    VectorXd dlam = sol.tail(neq);
    VectorXd dz = -h - z;
    VectorXd dmu = -mu;
    if (niq) {
      dz -= jh * dx;
      dmu += zinv.cwiseProduct(VectorXd::Constant(niq, gamma) - mu.cwiseProduct(dz));
    }

    double alpha_p = 1.0, alpha_d = 1.0;
    for (Index k = 0; k < niq; ++k) {
      if (dz[k] < 0.0) alpha_p = std::min(alpha_p, opt.step_fraction * z[k] / -dz[k]);
      if (dmu[k] < 0.0) alpha_d = std::min(alpha_d, opt.step_fraction * mu[k] / -dmu[k]);
    }
    x += alpha_p * dx;
    z += alpha_p * dz;
    lam += alpha_d * dlam;
    mu += alpha_d * dmu;
    if (niq) gamma = opt.sigma * z.dot(mu) / static_cast<double>(niq);

    f_prev = f;
    f = evaluate(x, true);
    lx = lagrangian_gradient();
    done = measure(lx);
    if (!x.allFinite() || !std::isfinite(f) || detail::inf_norm(x) > 1e10 || (niq && z.maxCoeff() > 1e10)) {
      res.status = Status::Diverged;
      break;
    }
    if (done) res.status = Status::Converged;
  }
  if (!done && res.status == Status::Converged) res.status = Status::IterationLimit;

  res.x = std::move(x);
  res.lam = std::move(lam);
  res.mu = std::move(mu);
  res.z = std::move(z);
  res.objective = f;
  res.iterations = iter;
  return res;
}

}  // namespace deepsolve::ipm
