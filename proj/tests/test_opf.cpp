#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include <deepsolve/opf.hpp>

#include "fixtures.hpp"
#include "oracle.hpp"

using namespace deepsolve;

namespace {

// PYPOWER 5.1 runopf on the shipped case files (default PIPS options).
constexpr double kPypowerCase30 = 803.1277;
constexpr double kPypowerCase118 = 130432.66;

void expect_feasible_optimum(const NetworkCase& c, const std::vector<double>& loads, const OpfSolution& s) {
  ASSERT_TRUE(s.converged);
  EXPECT_LT(oracle::mismatch(c, loads, s.v_mag, s.v_ang, s.p_gen, s.q_gen), 1e-6);
  EXPECT_LE(oracle::worst_violation(c, s.v_mag, s.v_ang, s.p_gen, s.q_gen), 1e-6);
  EXPECT_NEAR(s.objective, oracle::cost(c, s.p_gen), 1e-9 * s.objective);
  EXPECT_DOUBLE_EQ(s.v_ang[c.slack], 0.0);
}

}  // namespace

TEST(Opf, Case30MatchesPypower) {
  const auto c = load_case(oracle::case_path("case30"));
  const auto loads = c.default_loads();
  const auto s = solve_opf(c, build_admittance(c), loads);
  expect_feasible_optimum(c, loads, s);
  EXPECT_NEAR(s.objective, kPypowerCase30, 1e-5 * kPypowerCase30);
  EXPECT_LT(s.kkt_residual, 1e-5);
}

TEST(Opf, Case118MatchesPypower) {
  const auto c = load_case(oracle::case_path("case118"));
  const auto loads = c.default_loads();
  const auto s = solve_opf(c, build_admittance(c), loads);
  expect_feasible_optimum(c, loads, s);
  EXPECT_NEAR(s.objective, kPypowerCase118, 1e-5 * kPypowerCase118);
}

TEST(Opf, TinyCaseFeasibleAndStationary) {
  const auto c = fixtures::tiny3();
  const auto loads = c.default_loads();
  const auto ym = build_admittance(c);
  const auto s = solve_opf(c, ym, loads);
  expect_feasible_optimum(c, loads, s);
  // No feasible neighbour with lower cost along the generator-1/2 transfer
  // direction: moving 1 MW between units and re-solving the flows must not
  // reduce cost while staying feasible.
  for (double step : {-0.01, 0.01}) {
    IndependentVars iv = s.independent(c);
    iv.pv_p_gen[0] += step;
    const auto pf = solve_pf(c, ym, iv, loads, {s.v_mag, s.v_ang});
    ASSERT_TRUE(pf.converged);
    const double worst = oracle::worst_violation(c, pf.v_mag, pf.v_ang, pf.p_gen(c, iv), pf.q_gen(c));
    if (worst <= 0.0) {
      EXPECT_GE(c.cost(pf.p_gen(c, iv)), s.objective - 1e-6);
    }
  }
}

TEST(Opf, ReconstructionOfOptimumIsFeasibleAtZeroTolerance) {
  const auto c = load_case(oracle::case_path("case30"));
  const auto ym = build_admittance(c);
  const auto loads = c.default_loads();
  const auto s = solve_opf(c, ym, loads);
  const auto iv = s.independent(c);
  const auto pf = solve_pf(c, ym, iv, loads, flat_start(c));
  ASSERT_TRUE(pf.converged);
  EXPECT_TRUE(check_feasibility(c, pf, 0.0).feasible);
  EXPECT_NEAR(c.cost(pf.p_gen(c, iv)), s.objective, 1e-6 * s.objective);
}

TEST(Opf, WarmStartFromOptimumNeedsFewerIterations) {
  const auto c = load_case(oracle::case_path("case30"));
  const auto ym = build_admittance(c);
  auto loads = c.default_loads();
  const auto cold = solve_opf(c, ym, loads);
  for (auto& l : loads) l *= 1.03;
  const auto cold2 = solve_opf(c, ym, loads);
  const auto warm = recover(c, ym, loads, WarmStart::from(cold));
  ASSERT_TRUE(warm.converged);
  EXPECT_NEAR(warm.objective, cold2.objective, 1e-5 * cold2.objective);
  EXPECT_LT(warm.iterations, cold2.iterations);
}

TEST(Opf, WarmStartToleratesGarbage) {
  const auto c = load_case(oracle::case_path("case30"));
  const auto ym = build_admittance(c);
  const auto loads = c.default_loads();
  WarmStart w{std::vector<double>(c.num_buses(), 5.0), std::vector<double>(c.num_buses(), NAN),
              std::vector<double>(c.num_gens(), -3.0), std::vector<double>(c.num_gens(), 1e6)};
  const auto s = recover(c, ym, loads, w);
  ASSERT_TRUE(s.converged);
  EXPECT_NEAR(s.objective, kPypowerCase30, 1e-5 * kPypowerCase30);
}

TEST(Opf, SampledLoadsStayFeasible) {
  const auto c = load_case(oracle::case_path("case30"));
  const auto ym = build_admittance(c);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.9, 1.1);
  for (int k = 0; k < 10; ++k) {
    auto loads = c.default_loads();
    for (auto& l : loads) l *= u(rng);
    expect_feasible_optimum(c, loads, solve_opf(c, ym, loads));
  }
}
