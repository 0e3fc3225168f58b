#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "deepsolve/ipm.hpp"
#include "deepsolve/netmodel.hpp"
#include "deepsolve/polar.hpp"
#include "deepsolve/powerflow.hpp"

namespace deepsolve {

struct OpfSolution {
  std::vector<double> p_gen;
  std::vector<double> q_gen;
  std::vector<double> v_mag;
  std::vector<double> v_ang;
  double objective = 0.0;  // $/hr
  double kkt_residual = 0.0;
  bool converged = false;
  ipm::Status status = ipm::Status::IterationLimit;
  int iterations = 0;
  std::chrono::duration<double> wall_time{0.0};

  /// Independent variables of the predict-and-reconstruct split.
  IndependentVars independent(const NetworkCase& c) const {
    IndependentVars iv;
    iv.v_slack = v_mag[c.slack];
    iv.theta_slack = v_ang[c.slack];
    for (std::size_t b : c.pv) {
      iv.pv_p_gen.push_back(p_gen[static_cast<std::size_t>(c.gen_at_bus[b])]);
      iv.pv_v_mag.push_back(v_mag[b]);
    }
    return iv;
  }
};

/// A full primal point used to initialise the interior point solver.
struct WarmStart {
  std::vector<double> v_mag;
  std::vector<double> v_ang;
  std::vector<double> p_gen;
  std::vector<double> q_gen;

  static WarmStart from(const NetworkCase& c, const PowerFlowSolution& pf, const IndependentVars& indep) {
    return {pf.v_mag, pf.v_ang, pf.p_gen(c, indep), pf.q_gen(c)};
  }
  static WarmStart from(const OpfSolution& s) { return {s.v_mag, s.v_ang, s.p_gen, s.q_gen}; }
};

struct OpfOptions {
  ipm::Options cold;
  ipm::Options warm;
  /// Inequality limits are tightened by this much inside the solver so that
  /// an optimum reconstructed by Newton's method still sits within limits.
  double limit_margin = 1e-7;

  OpfOptions() {
    cold.cost_mult = 1e-4;
    warm = cold;
    warm.z0 = 1e-2;
    warm.initial_barrier = 1e-4;
  }
};

/// AC-OPF in polar form. Variables are (theta, |V|, P_G, Q_G); equalities are
/// the nodal P and Q balances; inequalities are squared apparent-power limits at
/// both ends of every rated branch.
class AcOpfProblem {
 public:
  AcOpfProblem(const NetworkCase& c, const AdmittanceMatrix& ym, std::span<const double> loads, double margin = 0.0)
      : case_(c), ym_(ym), loads_(loads.begin(), loads.end()), margin_(margin) {
    if (loads.size() != 2 * c.num_buses()) throw std::invalid_argument("load vector has wrong size");
    for (std::size_t l = 0; l < c.branches.size(); ++l)
      if (c.branches[l].limited()) limited_.push_back(l);
  }

  Eigen::Index num_variables() const { return static_cast<Eigen::Index>(2 * nb() + 2 * ng()); }

  Eigen::Index va(std::size_t i) const { return static_cast<Eigen::Index>(i); }
  Eigen::Index vm(std::size_t i) const { return static_cast<Eigen::Index>(nb() + i); }
  Eigen::Index pg(std::size_t g) const { return static_cast<Eigen::Index>(2 * nb() + g); }
  Eigen::Index qg(std::size_t g) const { return static_cast<Eigen::Index>(2 * nb() + ng() + g); }

  double objective(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
    grad = Eigen::VectorXd::Zero(x.size());
    double f = 0.0;
    for (std::size_t g = 0; g < ng(); ++g) {
      const double p = x[pg(g)];
      f += case_.cost_curves[g](p);
      grad[pg(g)] = case_.cost_curves[g].derivative(p);
    }
    return f;
  }

  void constraints(const Eigen::VectorXd& x, Eigen::VectorXd& g, ipm::SparseMatrix& jg, Eigen::VectorXd& h,
                   ipm::SparseMatrix& jh) const {
    const std::size_t n = nb();
    const auto ni = static_cast<Eigen::Index>(n);
    Eigen::VectorXd vmv = x.segment(ni, ni), vav = x.head(ni);
    Eigen::VectorXd p, q;
    polar::bus_injections(ym_, vmv, vav, p, q);
    g.resize(2 * ni);
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      g[ii] = p[ii] + loads_[i];
      g[ni + ii] = q[ii] + loads_[n + i];
    }
    for (std::size_t k = 0; k < ng(); ++k) {
      const auto b = static_cast<Eigen::Index>(case_.generators[k].bus);
      g[b] -= x[pg(k)];
      g[ni + b] -= x[qg(k)];
    }
    polar::Triplets t;
    polar::injection_jacobian(ym_, vmv, vav, t);  // same (theta, |V|) layout as x
    for (std::size_t k = 0; k < ng(); ++k) {
      const auto b = static_cast<Eigen::Index>(case_.generators[k].bus);
      t.emplace_back(static_cast<int>(b), static_cast<int>(pg(k)), -1.0);
      t.emplace_back(static_cast<int>(ni + b), static_cast<int>(qg(k)), -1.0);
    }
    jg.resize(2 * ni, num_variables());
    jg.setFromTriplets(t.begin(), t.end());

    const auto nl = static_cast<Eigen::Index>(limited_.size());
    h.resize(2 * nl);
    t.clear();
    for (Eigen::Index r = 0; r < nl; ++r) {
      const auto& br = case_.branches[limited_[static_cast<std::size_t>(r)]];
      const auto& a = ym_.branch[limited_[static_cast<std::size_t>(r)]];
      const double cap = std::max(br.s_max - margin_, 0.5 * br.s_max);
      for (int end = 0; end < 2; ++end) {
        const std::size_t here = end == 0 ? br.from : br.to;
        const std::size_t there = end == 0 ? br.to : br.from;
        auto fs = end == 0 ? polar::flow_squared(a.ff, a.ft, x[vm(here)], x[vm(there)], x[va(here)], x[va(there)])
                           : polar::flow_squared(a.tt, a.tf, x[vm(here)], x[vm(there)], x[va(here)], x[va(there)]);
        const Eigen::Index row = 2 * r + end;
        h[row] = fs.value - cap * cap;
        const Eigen::Index idx[4] = {va(here), va(there), vm(here), vm(there)};
        for (std::size_t c = 0; c < 4; ++c) t.emplace_back(static_cast<int>(row), static_cast<int>(idx[c]), fs.grad[c]);
      }
    }
    jh.resize(2 * nl, num_variables());
    jh.setFromTriplets(t.begin(), t.end());
  }

  ipm::SparseMatrix hessian(const Eigen::VectorXd& x, const Eigen::VectorXd& lam, const Eigen::VectorXd& mu,
                            double cost_mult) const {
    const auto ni = static_cast<Eigen::Index>(nb());
    Eigen::VectorXd vmv = x.segment(ni, ni), vav = x.head(ni);
    polar::Triplets t;
    polar::add_injection_hessian(ym_, vmv, vav, lam.head(ni), lam.segment(ni, ni), t);
    for (std::size_t g = 0; g < ng(); ++g)
      t.emplace_back(static_cast<int>(pg(g)), static_cast<int>(pg(g)), cost_mult * 2.0 * case_.cost_curves[g].c2);
    for (std::size_t r = 0; r < limited_.size(); ++r) {
      const auto& br = case_.branches[limited_[r]];
      const auto& a = ym_.branch[limited_[r]];
      for (int end = 0; end < 2; ++end) {
        const double w = mu[static_cast<Eigen::Index>(2 * r) + end];
        if (w == 0.0) continue;
        const std::size_t here = end == 0 ? br.from : br.to;
        const std::size_t there = end == 0 ? br.to : br.from;
        auto fs = end == 0 ? polar::flow_squared(a.ff, a.ft, x[vm(here)], x[vm(there)], x[va(here)], x[va(there)])
                           : polar::flow_squared(a.tt, a.tf, x[vm(here)], x[vm(there)], x[va(here)], x[va(there)]);
        const Eigen::Index idx[4] = {va(here), va(there), vm(here), vm(there)};
        for (std::size_t i = 0; i < 4; ++i)
          for (std::size_t j = 0; j < 4; ++j)
            t.emplace_back(static_cast<int>(idx[i]), static_cast<int>(idx[j]), w * fs.hess[i][j]);
      }
    }
    ipm::SparseMatrix hm(num_variables(), num_variables());
    hm.setFromTriplets(t.begin(), t.end());
    return hm;
  }

  /// Box bounds on x. The slack angle is pinned to zero.
  void bounds(Eigen::VectorXd& xmin, Eigen::VectorXd& xmax) const {
    const double inf = std::numeric_limits<double>::infinity();
    xmin = Eigen::VectorXd::Constant(num_variables(), -inf);
    xmax = Eigen::VectorXd::Constant(num_variables(), inf);
    xmin[va(case_.slack)] = xmax[va(case_.slack)] = 0.0;
    for (std::size_t i = 0; i < nb(); ++i) {
      const auto& b = case_.buses[i];
      std::tie(xmin[vm(i)], xmax[vm(i)]) = shrink(b.v_min, b.v_max);
    }
    for (std::size_t g = 0; g < ng(); ++g) {
      const auto& gen = case_.generators[g];
      std::tie(xmin[pg(g)], xmax[pg(g)]) = shrink(gen.p_min, gen.p_max);
      std::tie(xmin[qg(g)], xmax[qg(g)]) = shrink(gen.q_min, gen.q_max);
    }
  }

  std::size_t num_limited_branches() const { return limited_.size(); }

 private:
  std::size_t nb() const { return case_.num_buses(); }
  std::size_t ng() const { return case_.num_gens(); }

  std::pair<double, double> shrink(double lo, double hi) const {
    if (hi - lo <= 4.0 * margin_) return {lo, hi};
    return {lo + margin_, hi - margin_};
  }

  const NetworkCase& case_;
  const AdmittanceMatrix& ym_;
  std::vector<double> loads_;
  double margin_;
  std::vector<std::size_t> limited_;
};

namespace detail {

inline OpfSolution run_opf(const NetworkCase& c, const AdmittanceMatrix& ym, std::span<const double> loads,
                           const Eigen::VectorXd& x0, const ipm::Options& opt, double margin) {
  AcOpfProblem problem(c, ym, loads, margin);
  Eigen::VectorXd xmin, xmax;
  problem.bounds(xmin, xmax);
  const auto started = std::chrono::steady_clock::now();
  auto r = ipm::solve(problem, x0, xmin, xmax, opt);
  OpfSolution s;
  s.wall_time = std::chrono::steady_clock::now() - started;
  const std::size_t n = c.num_buses(), ng = c.num_gens();
  const auto at = [&](Eigen::Index k) { return r.x[k]; };
  for (std::size_t i = 0; i < n; ++i) {
    s.v_ang.push_back(at(problem.va(i)));
    s.v_mag.push_back(at(problem.vm(i)));
  }
  s.v_ang[c.slack] = xmin[problem.va(c.slack)];
  for (std::size_t g = 0; g < ng; ++g) {
    s.p_gen.push_back(at(problem.pg(g)));
    s.q_gen.push_back(at(problem.qg(g)));
  }
  s.objective = c.cost(s.p_gen);
  s.kkt_residual = r.kkt_residual();
  s.status = r.status;
  s.converged = r.converged();
  s.iterations = r.iterations;
  return s;
}

}  // namespace detail

/// Cold-start initial point: zero angles, every bounded variable at the
/// midpoint of its range.
inline Eigen::VectorXd cold_start_point(const NetworkCase& c) {
  const std::size_t n = c.num_buses(), ng = c.num_gens();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * n + 2 * ng));
  for (std::size_t i = 0; i < n; ++i) x[static_cast<Eigen::Index>(n + i)] = 0.5 * (c.buses[i].v_min + c.buses[i].v_max);
  for (std::size_t g = 0; g < ng; ++g) {
    const auto& gen = c.generators[g];
    x[static_cast<Eigen::Index>(2 * n + g)] = 0.5 * (gen.p_min + gen.p_max);
    x[static_cast<Eigen::Index>(2 * n + ng + g)] = 0.5 * (gen.q_min + gen.q_max);
  }
  return x;
}

/// Warm-start initial point. Magnitudes and generator outputs are clipped into
/// their limits, non-finite entries fall back to the cold-start value.
inline Eigen::VectorXd warm_start_point(const NetworkCase& c, const WarmStart& w) {
  const std::size_t n = c.num_buses(), ng = c.num_gens();
  if (w.v_mag.size() != n || w.v_ang.size() != n || w.p_gen.size() != ng || w.q_gen.size() != ng)
    throw std::invalid_argument("warm start does not match the case dimensions");
  Eigen::VectorXd x = cold_start_point(c);
  auto put = [&](std::size_t k, double v, double lo, double hi) {
    if (std::isfinite(v)) x[static_cast<Eigen::Index>(k)] = std::clamp(v, lo, hi);
  };
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    put(i, w.v_ang[i], -inf, inf);
    put(n + i, w.v_mag[i], c.buses[i].v_min, c.buses[i].v_max);
  }
  x[static_cast<Eigen::Index>(c.slack)] = 0.0;
  for (std::size_t g = 0; g < ng; ++g) {
    const auto& gen = c.generators[g];
    put(2 * n + g, w.p_gen[g], gen.p_min, gen.p_max);
    put(2 * n + ng + g, w.q_gen[g], gen.q_min, gen.q_max);
  }
  return x;
}

/// Solves the AC-OPF for the given loads, from the cold-start point unless a
/// warm start is supplied. `wall_time` covers the numerical solve only.
inline OpfSolution solve_opf(const NetworkCase& c, const AdmittanceMatrix& ym, std::span<const double> loads,
                             const std::optional<WarmStart>& start = std::nullopt, const OpfOptions& opt = {}) {
  if (start) return detail::run_opf(c, ym, loads, warm_start_point(c, *start), opt.warm, opt.limit_margin);
  return detail::run_opf(c, ym, loads, cold_start_point(c), opt.cold, opt.limit_margin);
}

/// Re-solves from a (possibly infeasible) predicted point.
inline OpfSolution recover(const NetworkCase& c, const AdmittanceMatrix& ym, std::span<const double> loads,
                           const WarmStart& predicted, const OpfOptions& opt = {}) {
  return solve_opf(c, ym, loads, predicted, opt);
}

}  // namespace deepsolve
