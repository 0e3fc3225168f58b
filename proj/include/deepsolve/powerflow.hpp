#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "deepsolve/netmodel.hpp"
#include "deepsolve/polar.hpp"

namespace deepsolve {

class PowerFlowError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The operating variables a model predicts. Vectors run over case.pv in order.
struct IndependentVars {
  double v_slack = 1.0;
  double theta_slack = 0.0;
  std::vector<double> pv_p_gen;
  std::vector<double> pv_v_mag;
};

/// Starting voltages for Newton's method. Only |V| at PQ buses and the angles of
/// non-slack buses are read; the rest is overwritten by the specified values.
struct VoltageGuess {
  std::vector<double> v_mag;
  std::vector<double> v_ang;
};

inline VoltageGuess flat_start(const NetworkCase& c) {
  return {std::vector<double>(c.num_buses(), 1.0), std::vector<double>(c.num_buses(), 0.0)};
}

/// Independent variables at the dispatch and voltage setpoints stored in the case.
inline IndependentVars case_setpoints(const NetworkCase& c) {
  IndependentVars iv;
  iv.v_slack = c.slack_gen().v_setpoint;
  for (std::size_t b : c.pv) {
    iv.pv_p_gen.push_back(c.gen_of(b).p_setpoint);
    iv.pv_v_mag.push_back(c.gen_of(b).v_setpoint);
  }
  return iv;
}

enum class PfStatus { Converged, IterationLimit, SingularJacobian, Diverged };

inline std::string_view to_string(PfStatus s) {
  switch (s) {
    case PfStatus::Converged: return "converged";
    case PfStatus::IterationLimit: return "iteration-limit";
    case PfStatus::SingularJacobian: return "singular-jacobian";
    case PfStatus::Diverged: return "diverged";
  }
  return "?";
}

struct PowerFlowSolution {
  std::vector<double> v_mag;
  std::vector<double> v_ang;
  std::vector<double> p_inj;
  std::vector<double> q_inj;
  double slack_p_gen = 0.0;
  double slack_q_gen = 0.0;
  std::vector<double> pv_q_gen;  // over case.pv
  std::vector<double> branch_s;  // max of the two ends
  int iterations = 0;
  bool converged = false;
  PfStatus status = PfStatus::IterationLimit;
  double max_residual = 0.0;
  std::vector<double> residual_history;  // mismatch inf-norm before each update

  /// Active output of every generator, slack from the solved injection.
  std::vector<double> p_gen(const NetworkCase& c, const IndependentVars& indep) const {
    std::vector<double> p(c.num_gens(), 0.0);
    p[static_cast<std::size_t>(c.gen_at_bus[c.slack])] = slack_p_gen;
    for (std::size_t j = 0; j < c.pv.size(); ++j) p[static_cast<std::size_t>(c.gen_at_bus[c.pv[j]])] = indep.pv_p_gen[j];
    return p;
  }

  std::vector<double> q_gen(const NetworkCase& c) const {
    std::vector<double> q(c.num_gens(), 0.0);
    q[static_cast<std::size_t>(c.gen_at_bus[c.slack])] = slack_q_gen;
    for (std::size_t j = 0; j < c.pv.size(); ++j) q[static_cast<std::size_t>(c.gen_at_bus[c.pv[j]])] = pv_q_gen[j];
    return q;
  }
};

struct PfOptions {
  double tolerance = 1e-8;  // inf-norm of the mismatch vector, p.u.
  int max_iterations = 30;
};

/// Apparent power of every branch, the larger of its two ends.
inline std::vector<double> branch_flows(const NetworkCase& c, const AdmittanceMatrix& ym, std::span<const double> v_mag,
                                        std::span<const double> v_ang) {
  const auto n = static_cast<Eigen::Index>(c.num_buses());
  Eigen::Map<const Eigen::VectorXd> vm(v_mag.data(), n), va(v_ang.data(), n);
  std::vector<double> s(c.branches.size());
  for (std::size_t l = 0; l < c.branches.size(); ++l) {
    auto bp = polar::branch_power(c.branches[l], ym.branch[l], vm, va);
    s[l] = std::max(std::abs(bp.from), std::abs(bp.to));
  }
  return s;
}

namespace detail {

inline void check_loads(const NetworkCase& c, std::span<const double> loads) {
  if (loads.size() != 2 * c.num_buses())
    throw std::invalid_argument("load vector has " + std::to_string(loads.size()) + " entries, expected " +
                                std::to_string(2 * c.num_buses()));
}

// Fills injections, generator outputs and branch flows from the voltages.
inline void finish_solution(const NetworkCase& c, const AdmittanceMatrix& ym, std::span<const double> loads,
                            const Eigen::VectorXd& vm, const Eigen::VectorXd& va, PowerFlowSolution& sol) {
  const std::size_t n = c.num_buses();
  Eigen::VectorXd p, q;
  polar::bus_injections(ym, vm, va, p, q);
  sol.v_mag.assign(vm.data(), vm.data() + n);
  sol.v_ang.assign(va.data(), va.data() + n);
  sol.p_inj.assign(p.data(), p.data() + n);
  sol.q_inj.assign(q.data(), q.data() + n);
  sol.slack_p_gen = p[static_cast<Eigen::Index>(c.slack)] + loads[c.slack];
  sol.slack_q_gen = q[static_cast<Eigen::Index>(c.slack)] + loads[n + c.slack];
  sol.pv_q_gen.resize(c.pv.size());
  for (std::size_t j = 0; j < c.pv.size(); ++j)
    sol.pv_q_gen[j] = q[static_cast<Eigen::Index>(c.pv[j])] + loads[n + c.pv[j]];
  sol.branch_s = branch_flows(c, ym, sol.v_mag, sol.v_ang);
}

}  // namespace detail

/// Newton-Raphson in polar coordinates. Unknowns are the angles of PV and PQ
/// buses and the magnitudes of PQ buses; mismatches are ordered P at PV then PQ
/// buses, then Q at PQ buses.
inline PowerFlowSolution solve_pf(const NetworkCase& c, const AdmittanceMatrix& ym, const IndependentVars& indep,
                                  std::span<const double> loads, const VoltageGuess& init, const PfOptions& opt = {}) {
  detail::check_loads(c, loads);
  const std::size_t n = c.num_buses();
  if (indep.pv_p_gen.size() != c.pv.size() || indep.pv_v_mag.size() != c.pv.size())
    throw std::invalid_argument("independent variables do not match the number of PV buses");
  if (init.v_mag.size() != n || init.v_ang.size() != n) throw std::invalid_argument("initial guess has wrong size");

  const auto npv = c.pv.size();
  const auto npq = c.pq.size();
  const auto dim = static_cast<Eigen::Index>(npv + 2 * npq);

  Eigen::VectorXd vm = Eigen::Map<const Eigen::VectorXd>(init.v_mag.data(), static_cast<Eigen::Index>(n));
  Eigen::VectorXd va = Eigen::Map<const Eigen::VectorXd>(init.v_ang.data(), static_cast<Eigen::Index>(n));
  vm[static_cast<Eigen::Index>(c.slack)] = indep.v_slack;
  va[static_cast<Eigen::Index>(c.slack)] = indep.theta_slack;

  Eigen::VectorXd p_spec = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::VectorXd q_spec = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    p_spec[static_cast<Eigen::Index>(i)] = -loads[i];
    q_spec[static_cast<Eigen::Index>(i)] = -loads[n + i];
  }
  for (std::size_t j = 0; j < npv; ++j) {
    const auto b = static_cast<Eigen::Index>(c.pv[j]);
    vm[b] = indep.pv_v_mag[j];
    p_spec[b] += indep.pv_p_gen[j];
  }

  // bus -> position among the unknown angles / magnitudes, -1 if fixed
  std::vector<int> ang_pos(n, -1), mag_pos(n, -1);
  for (std::size_t j = 0; j < npv; ++j) ang_pos[c.pv[j]] = static_cast<int>(j);
  for (std::size_t j = 0; j < npq; ++j) {
    ang_pos[c.pq[j]] = static_cast<int>(npv + j);
    mag_pos[c.pq[j]] = static_cast<int>(npv + npq + j);
  }

  PowerFlowSolution sol;
  Eigen::VectorXd p, q, mismatch(dim);
  Eigen::MatrixXd jac(dim, dim);
  polar::Triplets trips;
  const int ni = static_cast<int>(n);

  for (int iter = 0;; ++iter) {
    polar::bus_injections(ym, vm, va, p, q);
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      if (ang_pos[i] >= 0) mismatch[ang_pos[i]] = p[ii] - p_spec[ii];
      if (mag_pos[i] >= 0) mismatch[mag_pos[i]] = q[ii] - q_spec[ii];
    }
    const double norm = dim > 0 ? mismatch.lpNorm<Eigen::Infinity>() : 0.0;
    sol.residual_history.push_back(norm);
    sol.max_residual = norm;
    sol.iterations = iter;
    if (!std::isfinite(norm) || norm > 1e10) {
      sol.status = PfStatus::Diverged;
      break;
    }
    if (norm <= opt.tolerance) {
      sol.status = PfStatus::Converged;
      break;
    }
    if (iter >= opt.max_iterations) {
      sol.status = PfStatus::IterationLimit;
      break;
    }

    trips.clear();
    polar::injection_jacobian(ym, vm, va, trips);
    jac.setZero();
    for (const auto& t : trips) {
      const int r = t.row() < ni ? ang_pos[static_cast<std::size_t>(t.row())] : mag_pos[static_cast<std::size_t>(t.row() - ni)];
      const int col = t.col() < ni ? ang_pos[static_cast<std::size_t>(t.col())] : mag_pos[static_cast<std::size_t>(t.col() - ni)];
      if (r >= 0 && col >= 0) jac(r, col) += t.value();
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    if (!(lu.rcond() > 1e-14)) {
      sol.status = PfStatus::SingularJacobian;
      break;
    }
    Eigen::VectorXd step = lu.solve(mismatch);
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      if (ang_pos[i] >= 0) va[ii] -= step[ang_pos[i]];
      if (mag_pos[i] >= 0) vm[ii] -= step[mag_pos[i]];
    }
  }
  sol.converged = sol.status == PfStatus::Converged;
  detail::finish_solution(c, ym, loads, vm, va, sol);
  return sol;
}

/// Builds a solution record from given voltages (for example an OPF optimum):
/// injections, generator outputs and flows by direct substitution. `converged`
/// is set when the residual of the power balance at the implied generator
/// outputs is within `tolerance`.
inline PowerFlowSolution solution_from_voltages(const NetworkCase& c, const AdmittanceMatrix& ym,
                                                std::span<const double> loads, std::span<const double> v_mag,
                                                std::span<const double> v_ang, std::span<const double> p_gen,
                                                std::span<const double> q_gen, double tolerance = 1e-6) {
  detail::check_loads(c, loads);
  const auto n = static_cast<Eigen::Index>(c.num_buses());
  Eigen::VectorXd vm = Eigen::Map<const Eigen::VectorXd>(v_mag.data(), n);
  Eigen::VectorXd va = Eigen::Map<const Eigen::VectorXd>(v_ang.data(), n);
  PowerFlowSolution sol;
  detail::finish_solution(c, ym, loads, vm, va, sol);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    double pg = 0.0, qg = 0.0;
    if (c.gen_at_bus[iu] >= 0) {
      pg = p_gen[static_cast<std::size_t>(c.gen_at_bus[iu])];
      qg = q_gen[static_cast<std::size_t>(c.gen_at_bus[iu])];
    }
    worst = std::max(worst, std::abs(sol.p_inj[iu] - pg + loads[iu]));
    worst = std::max(worst, std::abs(sol.q_inj[iu] - qg + loads[c.num_buses() + iu]));
  }
  sol.max_residual = worst;
  sol.converged = worst <= tolerance;
  sol.status = sol.converged ? PfStatus::Converged : PfStatus::IterationLimit;
  return sol;
}

enum class ConstraintKind { SlackP, SlackQ, PvQ, PqVmag, BranchFlow };

inline std::string_view to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::SlackP: return "slack-p";
    case ConstraintKind::SlackQ: return "slack-q";
    case ConstraintKind::PvQ: return "pv-q";
    case ConstraintKind::PqVmag: return "pq-vmag";
    case ConstraintKind::BranchFlow: return "branch-flow";
  }
  return "?";
}

struct Violation {
  ConstraintKind kind;
  std::size_t element;  // bus index, or branch index for BranchFlow
  double magnitude;     // p.u. beyond the limit
};

struct FeasibilityReport {
  bool feasible = true;
  std::vector<Violation> violations;
};

/// Checks the limits on reconstructed quantities: slack P and Q, PV reactive
/// output, PQ voltage magnitudes and branch flows (both ends). A value counts
/// as violating when it is beyond its limit by more than `tolerance`.
inline FeasibilityReport check_feasibility(const NetworkCase& c, const PowerFlowSolution& sol, double tolerance) {
  if (!sol.converged) throw PowerFlowError("feasibility check on a non-converged power flow solution");
  FeasibilityReport rep;
  auto check = [&](ConstraintKind kind, std::size_t element, double x, double lo, double hi) {
    const double over = std::max(x - hi, lo - x);
    if (over > tolerance) rep.violations.push_back({kind, element, over});
  };
  const auto& sg = c.slack_gen();
  check(ConstraintKind::SlackP, c.slack, sol.slack_p_gen, sg.p_min, sg.p_max);
  check(ConstraintKind::SlackQ, c.slack, sol.slack_q_gen, sg.q_min, sg.q_max);
  for (std::size_t j = 0; j < c.pv.size(); ++j) {
    const auto& g = c.gen_of(c.pv[j]);
    check(ConstraintKind::PvQ, c.pv[j], sol.pv_q_gen[j], g.q_min, g.q_max);
  }
  for (std::size_t i : c.pq) check(ConstraintKind::PqVmag, i, sol.v_mag[i], c.buses[i].v_min, c.buses[i].v_max);
  for (std::size_t l = 0; l < c.branches.size(); ++l) {
    const auto& br = c.branches[l];
    if (br.limited() && sol.branch_s[l] - br.s_max > tolerance)
      rep.violations.push_back({ConstraintKind::BranchFlow, l, sol.branch_s[l] - br.s_max});
  }
  rep.feasible = rep.violations.empty();
  return rep;
}

}  // namespace deepsolve
