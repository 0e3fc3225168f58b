#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include <deepsolve/trainer.hpp>

#include "oracle.hpp"

using namespace deepsolve;

TEST(Loss, PredictionLoss) {
  EXPECT_EQ(pred_loss(std::vector<double>{0.3, 0.4}, std::vector<double>{0.3, 0.4}), 0.0);
  EXPECT_DOUBLE_EQ(pred_loss(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 0.0}), 0.5);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> a(37), b(37);
  for (auto& x : a) x = u(rng);
  for (auto& x : b) x = u(rng);
  double ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ref += std::pow(a[i] - b[i], 2);
  EXPECT_NEAR(pred_loss(a, b), ref / 37.0, 1e-12);
  EXPECT_THROW(pred_loss(a, std::vector<double>(3)), std::invalid_argument);
}

TEST(Loss, BoxPenalty) {
  EXPECT_EQ(box_penalty(0.5, 0.0, 1.0), 0.0);
  EXPECT_EQ(box_penalty(1.0, 0.0, 1.0), 0.0);
  EXPECT_NEAR(box_penalty(1.3, 0.0, 1.0), 0.3, 1e-15);
  EXPECT_NEAR(box_penalty(-0.2, 0.0, 1.0), 0.2, 1e-15);
}

class Case30Fixture : public ::testing::Test {
 protected:
  void SetUp() override {
    net = load_case(oracle::case_path("case30"));
    ym = build_admittance(net);
    opt = solve_opf(net, ym, net.default_loads());
    ASSERT_TRUE(opt.converged);
    pf = solve_pf(net, ym, opt.independent(net), net.default_loads(), flat_start(net));
    ASSERT_TRUE(pf.converged);
  }
  NetworkCase net;
  AdmittanceMatrix ym;
  OpfSolution opt;
  PowerFlowSolution pf;
};

TEST_F(Case30Fixture, ReferenceReconstructionHasZeroPenalty) {
  EXPECT_EQ(penalty_loss(net, pf), 0.0);
}

TEST_F(Case30Fixture, SinglePqVoltageViolation) {
  auto sol = pf;
  const std::size_t bus = net.pq[7];
  sol.v_mag[bus] = net.buses[bus].v_max + 0.05;
  const double p = penalty_loss(net, sol);
  EXPECT_NEAR(p, 0.05 / 24.0, 1e-15);
  const auto terms = penalty_terms(net, sol);
  EXPECT_NEAR(terms.pq_vmag, p, 0.0);
  EXPECT_EQ(terms.branch + terms.pv_q + terms.slack_p + terms.slack_q, 0.0);
}

TEST_F(Case30Fixture, FamilyAveraging) {
  auto sol = pf;
  const auto& sg = net.slack_gen();
  sol.slack_p_gen = sg.p_max + 0.1;
  sol.slack_q_gen = sg.q_min - 0.2;
  const auto& g0 = net.gen_of(net.pv[0]);
  sol.pv_q_gen[0] = g0.q_max + 0.5;
  std::size_t limited = 0;
  for (std::size_t l = 0; l < net.branches.size(); ++l)
    if (net.branches[l].limited()) {
      sol.branch_s[l] = net.branches[l].s_max + 0.41;
      limited = l;
      break;
    }
  (void)limited;
  const auto t = penalty_terms(net, sol);
  EXPECT_NEAR(t.slack_p, 0.1, 1e-12);
  EXPECT_NEAR(t.slack_q, 0.2, 1e-12);
  EXPECT_NEAR(t.pv_q, 0.5 / 5.0, 1e-12);
  EXPECT_NEAR(t.branch, 0.41 / 41.0, 1e-12);
  EXPECT_NEAR(penalty_loss(net, sol), t.sum(), 0.0);
}

TEST_F(Case30Fixture, DivergedFlowGetsFixedPenalty) {
  auto sol = pf;
  sol.converged = false;
  EXPECT_EQ(penalty_loss(net, sol), 10.0);
  EXPECT_EQ(penalty_loss(net, sol, 3.5), 3.5);
}

TEST_F(Case30Fixture, PenaltyZeroIffCheckerSeesNoViolation) {
  const auto spec = ScalingSpec::for_case(net);
  const auto s0 = encode(spec, pack(net, opt.independent(net)));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 0.05);
  int zero = 0, positive = 0;
  for (int k = 0; k < 80; ++k) {
    auto s = s0;
    if (k > 0)
      for (auto& v : s) v = std::clamp(v + noise(rng), 1e-6, 1.0 - 1e-6);
    const auto sol = solve_pf(net, ym, unpack(net, decode(spec, s)), net.default_loads(), flat_start(net));
    if (!sol.converged) continue;
    const bool feasible = check_feasibility(net, sol, 0.0).feasible;
    const double p = penalty_loss(net, sol);
    EXPECT_EQ(p == 0.0, feasible) << "trial " << k << " penalty " << p;
    EXPECT_GE(p, 0.0);
    (feasible ? zero : positive)++;
  }
  EXPECT_GT(zero, 0);
  EXPECT_GT(positive, 0);
}

TEST(ZeroOrder, ConstantFunctionGivesZero) {
  Eigen::VectorXd s = Eigen::VectorXd::Constant(6, 0.4);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto est = zo_grad([](const Eigen::VectorXd&) { return 2.5; }, s, 1e-3, seed);
    EXPECT_TRUE(est.grad.isZero(0.0));
    EXPECT_EQ(est.evaluations, 2);
  }
}

TEST(ZeroOrder, ExactlyTwoEvaluationsRegardlessOfDimension) {
  for (Eigen::Index d : {1, 11, 107}) {
    int calls = 0;
    auto f = [&](const Eigen::VectorXd& p) {
      ++calls;
      return p.sum();
    };
    const auto est = zo_grad(f, Eigen::VectorXd::Constant(d, 0.5), 1e-3, std::uint64_t{3});
    EXPECT_EQ(calls, 2);
    EXPECT_EQ(est.evaluations, 2);
    EXPECT_EQ(est.grad.size(), d);
  }
}

TEST(ZeroOrder, DirectionsAreUnitVectors) {
  std::mt19937_64 rng(8);
  for (int k = 0; k < 100; ++k) EXPECT_NEAR(sphere_direction(9, rng).norm(), 1.0, 1e-14);
}

TEST(ZeroOrder, UnbiasedOnQuadratic) {
  const Eigen::VectorXd s = Eigen::VectorXd::Constant(4, 0.5);
  auto f = [](const Eigen::VectorXd& p) { return p.squaredNorm(); };
  std::mt19937_64 rng(12);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(4);
  const int n = 100000;
  for (int k = 0; k < n; ++k) mean += zo_grad(f, s, 1e-4, rng).grad;
  mean /= n;
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(mean[i], 1.0, 0.02) << i;
}

TEST(ZeroOrder, UnbiasedOnLinear) {
  Eigen::VectorXd a(5);
  a << 1.0, -2.0, 0.5, 3.0, -1.5;
  auto f = [&](const Eigen::VectorXd& p) { return a.dot(p); };
  std::mt19937_64 rng(13);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(5);
  const int n = 100000;
  for (int k = 0; k < n; ++k) mean += zo_grad(f, Eigen::VectorXd::Constant(5, 0.5), 1e-3, rng).grad;
  mean /= n;
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(mean[i], a[i], 0.02 * a.norm()) << i;
}

TEST(ZeroOrder, ClipsPerturbationsIntoTheBox) {
  Eigen::VectorXd seen_min = Eigen::VectorXd::Constant(3, 1.0), seen_max = Eigen::VectorXd::Zero(3);
  auto f = [&](const Eigen::VectorXd& p) {
    seen_min = seen_min.cwiseMin(p);
    seen_max = seen_max.cwiseMax(p);
    return 0.0;
  };
  Eigen::VectorXd s(3);
  s << 1e-9, 0.5, 1.0 - 1e-9;
  const auto est = zo_grad(f, s, 1e-3, std::uint64_t{1});
  EXPECT_TRUE(est.clipped);
  EXPECT_GE(seen_min.minCoeff(), 1e-6);
  EXPECT_LE(seen_max.maxCoeff(), 1.0 - 1e-6);
}

class TinyTraining : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    net_ = new NetworkCase(load_case(oracle::case_path("case30")));
    ym_ = new AdmittanceMatrix(build_admittance(*net_));
    auto [tr, te] = build_dataset(*net_, *ym_, 10, 0, 5);
    data_ = new Dataset(std::move(tr));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete ym_;
    delete net_;
  }
  static MlpModel fresh() { return init_model({60, 64, 32, 11}, 3); }
  static inline NetworkCase* net_ = nullptr;
  static inline AdmittanceMatrix* ym_ = nullptr;
  static inline Dataset* data_ = nullptr;
};

TEST_F(TinyTraining, SupervisedLossDecreases) {
  auto m = fresh();
  TrainConfig cfg;
  cfg.w2 = 0.0;
  cfg.epochs = 10;
  cfg.batch_size = 10;
  cfg.learning_rate = 1e-3;
  const auto r = train(m, *data_, *net_, *ym_, cfg);
  ASSERT_EQ(r.history.size(), 10u);
  for (std::size_t k = 1; k < r.history.size(); ++k) EXPECT_LT(r.history[k].pred, r.history[k - 1].pred) << k;
}

TEST_F(TinyTraining, LossCompositionAndCostAccounting) {
  auto m = fresh();
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.w1 = 0.7;
  cfg.w2 = 0.3;
  const auto r = train(m, *data_, *net_, *ym_, cfg);
  for (const auto& h : r.history) {
    EXPECT_EQ(h.total, cfg.w1 * h.pred + cfg.w2 * h.pen);
    EXPECT_GE(h.pen, 0.0);
    EXPECT_GE(h.pred, 0.0);
  }
  // one reconstruction plus two estimator solves per sample and epoch
  EXPECT_EQ(r.pf_solves, 3u * 10u * 3u);
}

TEST_F(TinyTraining, FixedSeedReproducesHistory) {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 3;
  cfg.seed = 42;
  auto a = fresh();
  auto b = fresh();
  cfg.workers = 1;
  std::stringstream ma, mb;
  const auto ra = train(a, *data_, *net_, *ym_, cfg, &ma);
  cfg.workers = 3;
  const auto rb = train(b, *data_, *net_, *ym_, cfg, &mb);
  for (std::size_t k = 0; k < ra.history.size(); ++k) {
    EXPECT_EQ(ra.history[k].pred, rb.history[k].pred);
    EXPECT_EQ(ra.history[k].pen, rb.history[k].pen);
  }
  for (std::size_t k = 0; k < a.num_layers(); ++k) EXPECT_EQ(a.layer(k).w, b.layer(k).w);
  std::string line;
  std::getline(ma, line);
  EXPECT_EQ(line, "epoch,pred,pen,total,wall_time_s");
}

TEST_F(TinyTraining, RejectsBadConfigurationAndShapes) {
  auto m = fresh();
  TrainConfig cfg;
  cfg.delta = 0.0;
  EXPECT_THROW(train(m, *data_, *net_, *ym_, cfg), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(train(m, *data_, *net_, *ym_, cfg), std::invalid_argument);
  auto wrong = init_model({60, 8, 10}, 1);
  EXPECT_THROW(train(wrong, *data_, *net_, *ym_, TrainConfig{}), std::invalid_argument);
}

TEST_F(TinyTraining, NonFiniteLossAbortsWithLocation) {
  auto m = fresh();
  m.mutable_layer(0).w(0, 0) = NAN;
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train(m, *data_, *net_, *ym_, cfg);
    FAIL() << "no TrainError";
  } catch (const TrainError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0, batch 0"), std::string::npos) << e.what();
  }
}
