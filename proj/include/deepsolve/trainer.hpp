#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deepsolve/dataio.hpp"
#include "deepsolve/mlp.hpp"
#include "deepsolve/netmodel.hpp"
#include "deepsolve/parallel.hpp"
#include "deepsolve/powerflow.hpp"

namespace deepsolve {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double w1 = 1.0;
  double w2 = 0.1;
  double delta = 1e-3;
  int epochs = 200;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double diverged_pf_penalty = 10.0;
  double clip = 1e-6;  // perturbed points are kept in [clip, 1 - clip]
  unsigned workers = 1;
  PfOptions pf;
  std::function<void(const std::string&)> log;  // optional

  void validate() const {
    if (!(w1 >= 0.0) || !(w2 >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
    if (!(delta > 0.0)) throw std::invalid_argument("delta must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
    if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (!(clip > 0.0 && clip < 0.5)) throw std::invalid_argument("clip must lie in (0, 0.5)");
  }
};

struct PenaltyTerms {
  double branch = 0.0;
  double pq_vmag = 0.0;
  double pv_q = 0.0;
  double slack_p = 0.0;
  double slack_q = 0.0;

  double sum() const noexcept { return branch + pq_vmag + pv_q + slack_p + slack_q; }
};

struct LossBreakdown {
  double pred = 0.0;
  double pen = 0.0;
  double total = 0.0;
  PenaltyTerms terms;
  bool pf_converged = true;  // for epoch means: every solve converged
  std::size_t pf_failures = 0;
};

inline double pred_loss(std::span<const double> s_pred, std::span<const double> s_true) {
  if (s_pred.size() != s_true.size()) throw std::invalid_argument("pred_loss: dimension mismatch");
  if (s_pred.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < s_pred.size(); ++k) acc += (s_pred[k] - s_true[k]) * (s_pred[k] - s_true[k]);
  return acc / static_cast<double>(s_pred.size());
}

inline double box_penalty(double x, double x_min, double x_max) {
  return std::max(x - x_max, 0.0) + std::max(x_min - x, 0.0);
}

/// Per-family means of the box penalty on a converged solution.
inline PenaltyTerms penalty_terms(const NetworkCase& c, const PowerFlowSolution& sol) {
  PenaltyTerms t;
  if (!c.branches.empty()) {
    for (std::size_t l = 0; l < c.branches.size(); ++l) {
      const auto& br = c.branches[l];
      if (br.limited()) t.branch += std::max(sol.branch_s[l] - br.s_max, 0.0);
    }
    t.branch /= static_cast<double>(c.branches.size());
  }
  if (!c.pq.empty()) {
    for (std::size_t i : c.pq) t.pq_vmag += box_penalty(sol.v_mag[i], c.buses[i].v_min, c.buses[i].v_max);
    t.pq_vmag /= static_cast<double>(c.pq.size());
  }
  if (!c.pv.empty()) {
    for (std::size_t j = 0; j < c.pv.size(); ++j) {
      const auto& g = c.gen_of(c.pv[j]);
      t.pv_q += box_penalty(sol.pv_q_gen[j], g.q_min, g.q_max);
    }
    t.pv_q /= static_cast<double>(c.pv.size());
  }
  const auto& sg = c.slack_gen();
  t.slack_p = box_penalty(sol.slack_p_gen, sg.p_min, sg.p_max);
  t.slack_q = box_penalty(sol.slack_q_gen, sg.q_min, sg.q_max);
  return t;
}

inline double penalty_loss(const NetworkCase& c, const PowerFlowSolution& sol, double diverged_pf_penalty = 10.0) {
  return sol.converged ? penalty_terms(c, sol).sum() : diverged_pf_penalty;
}

/// Decodes scaling factors and solves the power flow for one load vector.
struct Reconstructor {
  const NetworkCase& net;
  const AdmittanceMatrix& ym;
  const ScalingSpec& spec;
  VoltageGuess init;
  PfOptions pf;

  PowerFlowSolution operator()(std::span<const double> s, std::span<const double> loads) const {
    const auto x = decode(spec, s);
    return solve_pf(net, ym, unpack(net, x), loads, init, pf);
  }
};

struct ZoEstimate {
  Eigen::VectorXd grad;
  int evaluations = 0;
  bool clipped = false;
};

/// Uniform direction on the unit sphere in R^d.
inline Eigen::VectorXd sphere_direction(Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(d);
  double norm = 0.0;
  do {
    for (Eigen::Index k = 0; k < d; ++k) v[k] = normal(rng);
    norm = v.norm();
  } while (norm == 0.0);
  return v / norm;
}

/// Seed for the direction draw of one sample in one epoch.
inline std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(index), 0x5a0u};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

/// Two-point estimate (d v / 2 delta) [L(s + delta v) - L(s - delta v)] with v on
/// the unit sphere. Perturbed points are clipped to [clip, 1 - clip].
template <typename PenaltyFn>
ZoEstimate zo_grad(PenaltyFn&& pen_eval, const Eigen::VectorXd& s, double delta, std::mt19937_64& rng, double clip = 1e-6) {
  if (!(delta > 0.0)) throw std::invalid_argument("zo_grad: delta must be positive");
  const Eigen::Index d = s.size();
  const Eigen::VectorXd v = sphere_direction(d, rng);
  Eigen::VectorXd plus = s + delta * v;
  Eigen::VectorXd minus = s - delta * v;
  ZoEstimate est;
  auto clamp = [&](Eigen::VectorXd& p) {
    for (Eigen::Index k = 0; k < d; ++k) {
      const double c = std::clamp(p[k], clip, 1.0 - clip);
      if (c != p[k]) est.clipped = true;
      p[k] = c;
    }
  };
  clamp(plus);
  clamp(minus);
  const double lp = pen_eval(plus);
  const double lm = pen_eval(minus);
  est.evaluations = 2;
  est.grad = (static_cast<double>(d) / (2.0 * delta) * (lp - lm)) * v;
  return est;
}

template <typename PenaltyFn>
ZoEstimate zo_grad(PenaltyFn&& pen_eval, const Eigen::VectorXd& s, double delta, std::uint64_t seed, double clip = 1e-6) {
  std::mt19937_64 rng(seed);
  return zo_grad(std::forward<PenaltyFn>(pen_eval), s, delta, rng, clip);
}

struct TrainResult {
  std::vector<LossBreakdown> history;  // one per epoch
  std::vector<double> epoch_seconds;
  std::size_t pf_solves = 0;
  std::size_t clipped_perturbations = 0;
};

inline void write_metrics_header(std::ostream& out) { out << "epoch,pred,pen,total,wall_time_s\n"; }

inline void write_metrics_row(std::ostream& out, int epoch, const LossBreakdown& b, double seconds) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.6f\n", epoch, b.pred, b.pen, b.total, seconds);
  out << buf;
}

/// Mini-batch training on w1 * pred + w2 * pen. The penalty gradient comes
/// from the two-point estimator; everything else is exact back-propagation.
/// `metrics`, when given, receives one CSV row per epoch as it completes.
inline TrainResult train(MlpModel& model, const Dataset& data, const NetworkCase& c, const AdmittanceMatrix& ym,
                         const TrainConfig& cfg, std::ostream* metrics = nullptr) {
  cfg.validate();
  const auto d = static_cast<Eigen::Index>(data.spec.size());
  const auto in_dim = static_cast<Eigen::Index>(2 * c.num_buses());
  if (model.input_dim() != in_dim || model.output_dim() != d)
    throw std::invalid_argument("train: model dimensions do not match the dataset");
  if (data.samples.empty()) throw std::invalid_argument("train: empty dataset");

  const std::size_t n = data.samples.size();
  Eigen::MatrixXd inputs(in_dim, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) inputs.col(static_cast<Eigen::Index>(i)) = data.normalizer.apply(data.samples[i].loads);

  const Reconstructor rec{c, ym, data.spec, data.newton_init(c), cfg.pf};
  AdamState adam = AdamState::for_model(model, cfg.learning_rate);
  TrainResult result;
  std::vector<std::size_t> order(n);
  if (metrics) write_metrics_header(*metrics);

  struct SampleOut {
    Eigen::VectorXd grad;
    double pred = 0.0;
    double pen = 0.0;
    PenaltyTerms terms;
    bool converged = true;
    int solves = 0;
    bool clipped = false;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(sample_seed(cfg.seed, static_cast<std::uint64_t>(epoch), ~std::uint64_t{0}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    LossBreakdown acc;
    for (std::size_t first = 0, batch = 0; first < n; first += static_cast<std::size_t>(cfg.batch_size), ++batch) {
      const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n - first);
      Eigen::MatrixXd x(in_dim, static_cast<Eigen::Index>(count));
      for (std::size_t j = 0; j < count; ++j) x.col(static_cast<Eigen::Index>(j)) = inputs.col(static_cast<Eigen::Index>(order[first + j]));
      ForwardTrace trace;
      const Eigen::MatrixXd s = forward(model, x, &trace);

      std::vector<SampleOut> outs(count);
      parallel_for(count, cfg.workers, [&](std::size_t j) {
        const std::size_t idx = order[first + j];
        const auto& sample = data.samples[idx];
        const Eigen::VectorXd sj = s.col(static_cast<Eigen::Index>(j));
        const std::span<const double> sp(sj.data(), static_cast<std::size_t>(d));
        SampleOut& o = outs[j];
        o.pred = pred_loss(sp, sample.s_true);
        const Eigen::VectorXd s_true = Eigen::Map<const Eigen::VectorXd>(sample.s_true.data(), d);
        o.grad = cfg.w1 * (2.0 / static_cast<double>(d)) * (sj - s_true);

        const auto sol = rec(sp, sample.loads);
        ++o.solves;
        o.converged = sol.converged;
        o.pen = penalty_loss(c, sol, cfg.diverged_pf_penalty);
        if (sol.converged) o.terms = penalty_terms(c, sol);

        if (cfg.w2 > 0.0) {
          auto pen_eval = [&](const Eigen::VectorXd& p) {
            return penalty_loss(c, rec(std::span<const double>(p.data(), static_cast<std::size_t>(d)), sample.loads),
                                cfg.diverged_pf_penalty);
          };
          std::mt19937_64 rng(sample_seed(cfg.seed, static_cast<std::uint64_t>(epoch), idx));
          const auto zo = zo_grad(pen_eval, sj, cfg.delta, rng, cfg.clip);
          o.solves += zo.evaluations;
          o.clipped = zo.clipped;
          o.grad += cfg.w2 * zo.grad;
        }
      });

      Eigen::MatrixXd dl_ds(d, static_cast<Eigen::Index>(count));
      for (std::size_t j = 0; j < count; ++j) {
        const auto& o = outs[j];
        const double total = cfg.w1 * o.pred + cfg.w2 * o.pen;
        if (!std::isfinite(total) || !o.grad.allFinite()) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "non-finite loss at epoch %d, batch %zu, sample %zu", epoch, batch, order[first + j]);
          throw TrainError(buf);
        }
        dl_ds.col(static_cast<Eigen::Index>(j)) = o.grad / static_cast<double>(count);
        acc.pred += o.pred;
        acc.pen += o.pen;
        acc.terms.branch += o.terms.branch;
        acc.terms.pq_vmag += o.terms.pq_vmag;
        acc.terms.pv_q += o.terms.pv_q;
        acc.terms.slack_p += o.terms.slack_p;
        acc.terms.slack_q += o.terms.slack_q;
        if (!o.converged) {
          acc.pf_converged = false;
          ++acc.pf_failures;
        }
        result.pf_solves += static_cast<std::size_t>(o.solves);
        if (o.clipped) ++result.clipped_perturbations;
      }
      adam_step(model, adam, backward(model, trace, dl_ds));
    }

    const double inv = 1.0 / static_cast<double>(n);
    acc.pred *= inv;
    acc.pen *= inv;
    acc.terms.branch *= inv;
    acc.terms.pq_vmag *= inv;
    acc.terms.pv_q *= inv;
    acc.terms.slack_p *= inv;
    acc.terms.slack_q *= inv;
    acc.total = cfg.w1 * acc.pred + cfg.w2 * acc.pen;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(acc);
    result.epoch_seconds.push_back(secs);
    if (metrics) {
      write_metrics_row(*metrics, epoch + 1, acc, secs);
      metrics->flush();
    }
    if (cfg.log) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "epoch %d: pred %.6g pen %.6g total %.6g (%zu pf failures, %.2fs)", epoch + 1, acc.pred,
                    acc.pen, acc.total, acc.pf_failures, secs);
      cfg.log(buf);
    }
  }
  if (cfg.log && result.clipped_perturbations > 0)
    cfg.log(std::to_string(result.clipped_perturbations) + " perturbed points were clipped into the unit box");
  return result;
}

}  // namespace deepsolve
