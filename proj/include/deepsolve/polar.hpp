#pragma once

// Power injections and branch flows in polar coordinates, with first and
// second derivatives with respect to (angle, magnitude).
//
// Every quantity is a sum of two kinds of terms:
//   cross term    Vi*Vk*(a*cos(ti - tk) + b*sin(ti - tk))
//   diagonal term c*Vi^2
// so derivatives are assembled from small local blocks instead of complex
// matrix products. Variables are ordered (theta_0..theta_{N-1}, |V|_0..|V|_{N-1}).

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "deepsolve/netmodel.hpp"

namespace deepsolve::polar {

using Triplets = std::vector<Eigen::Triplet<double>>;

/// Local value, gradient and Hessian of Vi*Vk*(a cos(ti-tk) + b sin(ti-tk))
/// in the local ordering (ti, tk, Vi, Vk).
struct CrossTerm {
  double value;
  std::array<double, 4> grad;
  std::array<std::array<double, 4>, 4> hess;
};

inline CrossTerm cross_term(double a, double b, double vi, double vk, double ti, double tk) {
  const double phi = ti - tk;
  const double c = std::cos(phi);
  const double s = std::sin(phi);
  const double g0 = a * c + b * s;   // g
  const double g1 = -a * s + b * c;  // dg/dphi
  const double vv = vi * vk;
  CrossTerm t{};
  t.value = vv * g0;
  t.grad = {vv * g1, -vv * g1, vk * g0, vi * g0};
  // d2g/dphi2 = -g
  const double tt = -vv * g0;
  t.hess[0] = {tt, -tt, vk * g1, vi * g1};
  t.hess[1] = {-tt, tt, -vk * g1, -vi * g1};
  t.hess[2] = {vk * g1, -vk * g1, 0.0, g0};
  t.hess[3] = {vi * g1, -vi * g1, g0, 0.0};
  return t;
}

/// Net complex injections S = V .* conj(Y V), split into P and Q.
inline void bus_injections(const AdmittanceMatrix& ym, const Eigen::VectorXd& vm, const Eigen::VectorXd& va,
                           Eigen::VectorXd& p, Eigen::VectorXd& q) {
  const auto n = vm.size();
  Eigen::VectorXcd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = std::polar(vm[i], va[i]);
  Eigen::VectorXcd current = ym.y * v;
  p.resize(n);
  q.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Complex s = v[i] * std::conj(current[i]);
    p[i] = s.real();
    q[i] = s.imag();
  }
}

/// Jacobian of (P_0..P_{N-1}, Q_0..Q_{N-1}) with respect to (theta, |V|),
/// emitted as triplets in the full 2N x 2N index space.
inline void injection_jacobian(const AdmittanceMatrix& ym, const Eigen::VectorXd& vm, const Eigen::VectorXd& va,
                               Triplets& out) {
  const auto n = static_cast<int>(vm.size());
  for (int k = 0; k < ym.y.outerSize(); ++k) {
    for (Eigen::SparseMatrix<Complex>::InnerIterator it(ym.y, k); it; ++it) {
      const int i = static_cast<int>(it.row());
      const double g = it.value().real();
      const double b = it.value().imag();
      if (i == k) {
        out.emplace_back(i, n + i, 2.0 * g * vm[i]);
        out.emplace_back(n + i, n + i, -2.0 * b * vm[i]);
        continue;
      }
      const int cols[4] = {i, k, n + i, n + k};
      auto tp = cross_term(g, b, vm[i], vm[k], va[i], va[k]);
      auto tq = cross_term(-b, g, vm[i], vm[k], va[i], va[k]);
      for (int c = 0; c < 4; ++c) {
        out.emplace_back(i, cols[c], tp.grad[static_cast<std::size_t>(c)]);
        out.emplace_back(n + i, cols[c], tq.grad[static_cast<std::size_t>(c)]);
      }
    }
  }
}

/// Adds the Hessian of sum_i lam_p[i]*P_i + lam_q[i]*Q_i.
inline void add_injection_hessian(const AdmittanceMatrix& ym, const Eigen::VectorXd& vm, const Eigen::VectorXd& va,
                                  const Eigen::VectorXd& lam_p, const Eigen::VectorXd& lam_q, Triplets& out) {
  const auto n = static_cast<int>(vm.size());
  for (int k = 0; k < ym.y.outerSize(); ++k) {
    for (Eigen::SparseMatrix<Complex>::InnerIterator it(ym.y, k); it; ++it) {
      const int i = static_cast<int>(it.row());
      const double g = it.value().real();
      const double b = it.value().imag();
      if (i == k) {
        out.emplace_back(n + i, n + i, 2.0 * (lam_p[i] * g - lam_q[i] * b));
        continue;
      }
      // lam_p*(g cos + b sin) + lam_q*(-b cos + g sin) is one cross term
      auto t = cross_term(lam_p[i] * g - lam_q[i] * b, lam_p[i] * b + lam_q[i] * g, vm[i], vm[k], va[i], va[k]);
      const int idx[4] = {i, k, n + i, n + k};
      for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c)
          if (t.hess[r][c] != 0.0) out.emplace_back(idx[r], idx[c], t.hess[r][c]);
    }
  }
}

/// Complex power entering a branch at its from and to ends.
struct BranchPower {
  Complex from;
  Complex to;
};

inline BranchPower branch_power(const Branch& br, const BranchAdmittance& a, const Eigen::VectorXd& vm,
                                const Eigen::VectorXd& va) {
  const Complex vf = std::polar(vm[static_cast<Eigen::Index>(br.from)], va[static_cast<Eigen::Index>(br.from)]);
  const Complex vt = std::polar(vm[static_cast<Eigen::Index>(br.to)], va[static_cast<Eigen::Index>(br.to)]);
  return {vf * std::conj(a.ff * vf + a.ft * vt), vt * std::conj(a.tf * vf + a.tt * vt)};
}

/// Squared apparent power |S|^2 at one end of a branch, with its gradient and
/// Hessian over the local variables (t_here, t_there, V_here, V_there).
struct FlowSquared {
  double value;
  std::array<double, 4> grad;
  std::array<std::array<double, 4>, 4> hess;
};

/// `self` is the two-port diagonal entry at this end, `mutual` the entry
/// coupling it to the far end.
inline FlowSquared flow_squared(Complex self, Complex mutual, double vh, double vo, double th, double to) {
  const double gs = self.real(), bs = self.imag();
  const double gm = mutual.real(), bm = mutual.imag();
  // P = gs*vh^2 + vh*vo*(gm cos + bm sin); Q = -bs*vh^2 + vh*vo*(-bm cos + gm sin)
  auto cp = cross_term(gm, bm, vh, vo, th, to);
  auto cq = cross_term(-bm, gm, vh, vo, th, to);
  const double p = gs * vh * vh + cp.value;
  const double q = -bs * vh * vh + cq.value;
  std::array<double, 4> dp = cp.grad, dq = cq.grad;
  dp[2] += 2.0 * gs * vh;
  dq[2] += -2.0 * bs * vh;
  auto hp = cp.hess, hq = cq.hess;
  hp[2][2] += 2.0 * gs;
  hq[2][2] += -2.0 * bs;

  FlowSquared out{};
  out.value = p * p + q * q;
  for (std::size_t r = 0; r < 4; ++r) {
    out.grad[r] = 2.0 * (p * dp[r] + q * dq[r]);
    for (std::size_t c = 0; c < 4; ++c)
      out.hess[r][c] = 2.0 * (dp[r] * dp[c] + dq[r] * dq[c] + p * hp[r][c] + q * hq[r][c]);
  }
  return out;
}

}  // namespace deepsolve::polar
