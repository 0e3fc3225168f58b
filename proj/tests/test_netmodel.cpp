#include <cmath>
#include <complex>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include <deepsolve/netmodel.hpp>

#include "fixtures.hpp"
#include "oracle.hpp"

using namespace deepsolve;

namespace {

std::string replace_once(std::string text, const std::string& from, const std::string& to) {
  auto pos = text.find(from);
  EXPECT_NE(pos, std::string::npos) << from;
  return text.replace(pos, from.size(), to);
}

int error_line(const std::string& text) {
  try {
    parse_matpower(text);
  } catch (const CaseError& e) {
    return e.line();
  }
  ADD_FAILURE() << "no CaseError";
  return -1;
}

}  // namespace

TEST(NetModel, Case30Counts) {
  const auto c = load_case(oracle::case_path("case30"));
  EXPECT_EQ(c.num_buses(), 30u);
  EXPECT_EQ(c.pv.size(), 5u);
  EXPECT_EQ(c.pq.size(), 24u);
  EXPECT_EQ(c.branches.size(), 41u);
  EXPECT_EQ(c.num_gens(), 6u);
  EXPECT_EQ(c.buses[c.slack].id, 1);
  EXPECT_EQ(2 * c.pv.size() + 1, 11u);
}

TEST(NetModel, Case118Counts) {
  const auto c = load_case(oracle::case_path("case118"));
  EXPECT_EQ(c.num_buses(), 118u);
  EXPECT_EQ(c.pv.size(), 53u);
  EXPECT_EQ(c.pq.size(), 64u);
  EXPECT_EQ(c.branches.size(), 186u);
  EXPECT_EQ(c.buses[c.slack].id, 69);
  EXPECT_EQ(2 * c.pv.size() + 1, 107u);
}

TEST(NetModel, PerUnitConversion) {
  const auto c = fixtures::tiny3();
  EXPECT_DOUBLE_EQ(c.base_mva, 100.0);
  EXPECT_DOUBLE_EQ(c.buses[1].p_load, 0.2);
  EXPECT_DOUBLE_EQ(c.buses[2].q_load, 0.2);
  EXPECT_DOUBLE_EQ(c.buses[2].shunt_b, 0.05);
  EXPECT_DOUBLE_EQ(c.generators[1].p_max, 1.0);
  EXPECT_DOUBLE_EQ(c.generators[1].p_min, 0.1);
  EXPECT_DOUBLE_EQ(c.branches[0].s_max, 1.0);
  EXPECT_FALSE(c.branches[2].limited());
  EXPECT_DOUBLE_EQ(c.branches[0].tap_ratio, 1.0);  // 0 in the file means nominal
  EXPECT_DOUBLE_EQ(c.branches[1].tap_ratio, 0.98);
  EXPECT_NEAR(c.branches[1].phase_shift, 2.0 * std::acos(-1.0) / 180.0, 1e-15);
  // 0.01 $/MW^2h * 50^2 + 20 * 50 + 5 at 50 MW
  EXPECT_NEAR(c.cost_curves[0](0.5), 1030.0, 1e-9);
  EXPECT_NEAR(c.cost_curves[0].derivative(0.5), (2 * 0.01 * 50 + 20) * 100.0, 1e-9);
}

TEST(NetModel, BusKindsFollowGenerators) {
  // A load bus that owns a generator becomes PV; a PV bus without one becomes PQ.
  auto text = replace_once(fixtures::tiny3_text(), "3 1 60 20", "3 2 60 20");
  const auto c = parse_matpower(text);
  EXPECT_EQ(c.buses[2].kind, BusKind::PQ);
  auto text2 = replace_once(fixtures::tiny3_text(), "  2 50 0 80", "  3 50 0 80");
  const auto c2 = parse_matpower(text2);
  EXPECT_EQ(c2.buses[2].kind, BusKind::PV);
  EXPECT_EQ(c2.buses[1].kind, BusKind::PQ);
}

TEST(NetModel, OutOfServiceElementsAreDropped) {
  auto text = replace_once(fixtures::tiny3_text(), "2 3 0.015 0.12 0.025 0   0   0   0    0 1", "2 3 0.015 0.12 0.025 0   0   0   0    0 0");
  EXPECT_EQ(parse_matpower(text).branches.size(), 2u);
}

TEST(NetModel, ErrorsCarryLineNumbers) {
  const std::string base = fixtures::tiny3_text();
  EXPECT_EQ(error_line(replace_once(base, "1 3 0  0  0", "1 3 x  0  0")), 6);
  EXPECT_EQ(error_line(replace_once(base, "  1 2 0.01  0.1  0.02  100 100 100 0    0 1 -360 360;", "  1 2 0.01;")), 15);
  EXPECT_EQ(error_line(replace_once(base, "  1 2 0.01  0.1", "  1 7 0.01  0.1")), 15);
}

TEST(NetModel, StructuralErrors) {
  const std::string base = fixtures::tiny3_text();
  EXPECT_THROW(parse_matpower(replace_once(base, "mpc.baseMVA = 100;", "")), CaseError);
  EXPECT_THROW(parse_matpower(replace_once(base, "  3 1 60 20", "  3 3 60 20")), CaseError);                   // two slack buses
  EXPECT_THROW(parse_matpower(replace_once(base, "  2 0 0 3 0.02 25 3;\n", "")), CaseError);                   // missing cost
  EXPECT_THROW(parse_matpower(replace_once(base, "  1 2 0.01  0.1", "  1 2 0.0  0.0")), CaseError);             // zero impedance
  EXPECT_THROW(parse_matpower(replace_once(base, "  2 0 0 3 0.01 20 5;", "  1 0 0 2 1 0 0 0;")), CaseError);  // piecewise cost
  EXPECT_THROW(parse_matpower(replace_once(base, "];\nmpc.gen", "\nmpc.gen")), CaseError);                     // unterminated
}

TEST(NetModel, CanonicalRoundTrip) {
  for (const char* name : {"case30", "case118"}) {
    const auto a = load_case(oracle::case_path(name));
    const auto b = parse_case(to_canonical(a).dump(), a.name);
    ASSERT_EQ(a.num_buses(), b.num_buses());
    ASSERT_EQ(a.branches.size(), b.branches.size());
    ASSERT_EQ(a.num_gens(), b.num_gens());
    EXPECT_EQ(a.slack, b.slack);
    EXPECT_EQ(a.pv, b.pv);
    EXPECT_EQ(a.pq, b.pq);
    for (std::size_t i = 0; i < a.num_buses(); ++i) {
      EXPECT_EQ(a.buses[i].id, b.buses[i].id);
      EXPECT_NEAR(a.buses[i].p_load, b.buses[i].p_load, 1e-14);
      EXPECT_NEAR(a.buses[i].shunt_b, b.buses[i].shunt_b, 1e-14);
      EXPECT_DOUBLE_EQ(a.buses[i].v_max, b.buses[i].v_max);
    }
    for (std::size_t l = 0; l < a.branches.size(); ++l) {
      EXPECT_DOUBLE_EQ(a.branches[l].series_x, b.branches[l].series_x);
      EXPECT_NEAR(a.branches[l].s_max, b.branches[l].s_max, 1e-14);
      EXPECT_NEAR(a.branches[l].phase_shift, b.branches[l].phase_shift, 1e-15);
    }
    for (std::size_t g = 0; g < a.num_gens(); ++g) {
      EXPECT_NEAR(a.cost_curves[g].c2, b.cost_curves[g].c2, 1e-9 * (1 + a.cost_curves[g].c2));
      EXPECT_NEAR(a.cost_curves[g].c1, b.cost_curves[g].c1, 1e-9 * (1 + a.cost_curves[g].c1));
      EXPECT_NEAR(a.generators[g].p_max, b.generators[g].p_max, 1e-14);
    }
  }
}

TEST(NetModel, CanonicalErrorsCarryLineNumbers) {
  const std::string bad = "{\n  \"format_version\": 1,\n  \"buses\": [\n    {\"id\": 1,,}\n  ]\n}\n";
  try {
    parse_case(bad);
    FAIL() << "no CaseError";
  } catch (const CaseError& e) {
    EXPECT_EQ(e.line(), 4);
  }
}

TEST(NetModel, AdmittanceMatchesCircuitOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> vm(0.9, 1.1), va(-0.5, 0.5);
  for (const char* name : {"case30", "case118"}) {
    const auto c = load_case(oracle::case_path(name));
    const auto ym = build_admittance(c);
    for (int trial = 0; trial < 3; ++trial) {
      std::vector<double> m(c.num_buses()), a(c.num_buses());
      for (auto& x : m) x = vm(rng);
      for (auto& x : a) x = va(rng);
      const auto ref = oracle::flows(c, m, a);
      Eigen::VectorXcd v(static_cast<Eigen::Index>(c.num_buses()));
      for (std::size_t i = 0; i < c.num_buses(); ++i) v[static_cast<Eigen::Index>(i)] = std::polar(m[i], a[i]);
      const Eigen::VectorXcd i_inj = ym.y * v;
      for (std::size_t i = 0; i < c.num_buses(); ++i) {
        const auto s = v[static_cast<Eigen::Index>(i)] * std::conj(i_inj[static_cast<Eigen::Index>(i)]);
        EXPECT_NEAR(s.real(), ref.bus_out[i].real(), 1e-9);
        EXPECT_NEAR(s.imag(), ref.bus_out[i].imag(), 1e-9);
      }
    }
  }
}

TEST(NetModel, DefaultLoadsStackPThenQ) {
  const auto c = fixtures::tiny3();
  const auto l = c.default_loads();
  ASSERT_EQ(l.size(), 6u);
  EXPECT_DOUBLE_EQ(l[2], 0.6);
  EXPECT_DOUBLE_EQ(l[5], 0.2);
}
