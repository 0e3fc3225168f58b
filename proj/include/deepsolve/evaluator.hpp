#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "deepsolve/dataio.hpp"
#include "deepsolve/mlp.hpp"
#include "deepsolve/netmodel.hpp"
#include "deepsolve/opf.hpp"
#include "deepsolve/parallel.hpp"
#include "deepsolve/powerflow.hpp"

namespace deepsolve {

struct EvalConfig {
  double feasibility_tol = 1e-6;
  unsigned workers = 1;
  bool time_reference = true;
  PfOptions pf;
  OpfOptions opf;
};

struct InstanceResult {
  std::size_t index = 0;
  std::vector<double> s_pred;
  std::vector<double> x_pred;  // decoded independent variables
  bool pf_converged = false;
  int pf_iterations = 0;
  bool feasible = false;
  std::size_t violations = 0;
  double cost_model = 0.0;
  double cost_ref = 0.0;
  bool ref_converged = false;
  int ref_iterations = 0;
  double time_model = 0.0;  // seconds
  double time_ref = 0.0;
  // Filled by recover_infeasible().
  bool recovery_attempted = false;
  bool recovered = false;
  int recovery_iterations = 0;
  double recovery_time = 0.0;
  // Kept for the recovery warm start and the comparison dump.
  PowerFlowSolution pf;
};

struct RecoveryStats {
  std::size_t attempted = 0;
  std::size_t recovered = 0;
  double avg_time = 0.0;
  double avg_warm_iterations = 0.0;
  double avg_cold_iterations = 0.0;
  std::size_t warm_not_slower = 0;  // warm iterations <= cold iterations
};

struct EvalReport {
  std::string case_id;
  std::size_t n_instances = 0;
  std::size_t n_feasible = 0;
  double feasibility_rate = 0.0;  // percent
  std::size_t n_cost_compared = 0;
  double avg_cost_model = 0.0;
  double avg_cost_ref = 0.0;
  double cost_diff = 0.0;  // percent
  double avg_time_model = 0.0;
  double std_time_model = 0.0;
  double avg_time_ref = 0.0;
  double std_time_ref = 0.0;
  double speedup = 0.0;
  std::optional<RecoveryStats> recovery;
  std::vector<InstanceResult> instances;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  return {m, std::sqrt(var / static_cast<double>(v.size()))};
}

template <typename Fn>
double seconds(Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Recomputes the aggregate columns from the per-instance records.
inline void summarize(EvalReport& r) {
  r.n_instances = r.instances.size();
  r.n_feasible = 0;
  r.n_cost_compared = 0;
  double cm = 0.0, cr = 0.0;
  std::vector<double> tm, tr;
  for (const auto& in : r.instances) {
    if (in.feasible) ++r.n_feasible;
    if (in.feasible && in.ref_converged) {
      ++r.n_cost_compared;
      cm += in.cost_model;
      cr += in.cost_ref;
    }
    tm.push_back(in.time_model + in.recovery_time);
    tr.push_back(in.time_ref);
  }
  r.feasibility_rate = r.n_instances ? 100.0 * static_cast<double>(r.n_feasible) / static_cast<double>(r.n_instances) : 0.0;
  r.avg_cost_model = r.n_cost_compared ? cm / static_cast<double>(r.n_cost_compared) : 0.0;
  r.avg_cost_ref = r.n_cost_compared ? cr / static_cast<double>(r.n_cost_compared) : 0.0;
  r.cost_diff = r.avg_cost_ref != 0.0 ? (r.avg_cost_model - r.avg_cost_ref) / r.avg_cost_ref * 100.0 : 0.0;
  std::tie(r.avg_time_model, r.std_time_model) = detail::mean_std(tm);
  std::tie(r.avg_time_ref, r.std_time_ref) = detail::mean_std(tr);
  r.speedup = r.avg_time_model > 0.0 ? r.avg_time_ref / r.avg_time_model : 0.0;
}

/// Predict-and-reconstruct on every test instance. Feasibility labelling runs
/// in parallel; the timing passes afterwards are sequential, each preceded by
/// one discarded warm-up run.
inline EvalReport evaluate(const MlpModel& model, const Dataset& test, const NetworkCase& c, const AdmittanceMatrix& ym,
                           const EvalConfig& cfg = {}) {
  const auto d = static_cast<Eigen::Index>(test.spec.size());
  if (model.input_dim() != static_cast<Eigen::Index>(2 * c.num_buses()) || model.output_dim() != d ||
      test.spec.size() != 2 * c.pv.size() + 1)
    throw std::invalid_argument("evaluate: model, dataset and case dimensions disagree");

  const VoltageGuess init = test.newton_init(c);
  auto predict = [&](const TrainSample& s) {
    const Eigen::VectorXd out = forward(model, test.normalizer.apply(s.loads));
    return std::vector<double>(out.data(), out.data() + out.size());
  };
  auto reconstruct = [&](const TrainSample& s, const std::vector<double>& x) {
    return solve_pf(c, ym, unpack(c, x), s.loads, init, cfg.pf);
  };

  EvalReport rep;
  rep.case_id = c.name;
  rep.instances.resize(test.samples.size());
  parallel_for(test.samples.size(), cfg.workers, [&](std::size_t i) {
    const auto& s = test.samples[i];
    auto& in = rep.instances[i];
    in.index = i;
    in.s_pred = predict(s);
    in.x_pred = decode(test.spec, in.s_pred);
    in.pf = reconstruct(s, in.x_pred);
    in.pf_converged = in.pf.converged;
    in.pf_iterations = in.pf.iterations;
    if (in.pf.converged) {
      const auto fr = check_feasibility(c, in.pf, cfg.feasibility_tol);
      in.feasible = fr.feasible;
      in.violations = fr.violations.size();
      in.cost_model = c.cost(in.pf.p_gen(c, unpack(c, in.x_pred)));
    }
    in.cost_ref = s.objective_true;
    in.ref_converged = true;
  });

  if (!test.samples.empty()) {
    const auto& s0 = test.samples.front();
    (void)reconstruct(s0, decode(test.spec, predict(s0)));
    for (std::size_t i = 0; i < test.samples.size(); ++i) {
      const auto& s = test.samples[i];
      rep.instances[i].time_model = detail::seconds([&] { (void)reconstruct(s, decode(test.spec, predict(s))); });
    }
    if (cfg.time_reference) {
      (void)solve_opf(c, ym, s0.loads, std::nullopt, cfg.opf);
      for (std::size_t i = 0; i < test.samples.size(); ++i) {
        auto& in = rep.instances[i];
        OpfSolution ref;
        in.time_ref = detail::seconds([&] { ref = solve_opf(c, ym, test.samples[i].loads, std::nullopt, cfg.opf); });
        in.ref_converged = ref.converged;
        in.ref_iterations = ref.iterations;
        if (ref.converged) in.cost_ref = ref.objective;
      }
    }
  }
  summarize(rep);
  return rep;
}

/// Warm start for the interior point solver from a prediction: the
/// reconstructed state when the power flow converged, otherwise the predicted
/// independent variables over the Newton initial guess.
inline WarmStart prediction_warm_start(const NetworkCase& c, const InstanceResult& in, const VoltageGuess& init) {
  const auto iv = unpack(c, in.x_pred);
  if (in.pf.converged) return WarmStart::from(c, in.pf, iv);
  WarmStart w{init.v_mag, init.v_ang, std::vector<double>(c.num_gens(), 0.0), std::vector<double>(c.num_gens(), 0.0)};
  w.v_mag[c.slack] = iv.v_slack;
  for (std::size_t j = 0; j < c.pv.size(); ++j) {
    const auto g = static_cast<std::size_t>(c.gen_at_bus[c.pv[j]]);
    w.v_mag[c.pv[j]] = iv.pv_v_mag[j];
    w.p_gen[g] = iv.pv_p_gen[j];
  }
  w.p_gen[static_cast<std::size_t>(c.gen_at_bus[c.slack])] = c.slack_gen().p_min * 0.5 + c.slack_gen().p_max * 0.5;
  return w;
}

/// Re-solves every infeasible instance with the interior point method warm
/// started at the prediction. A recovered instance becomes feasible at the
/// re-solved optimum, and the recovery time is charged to the model path.
inline void recover_infeasible(EvalReport& rep, const Dataset& test, const NetworkCase& c, const AdmittanceMatrix& ym,
                               const EvalConfig& cfg = {}) {
  RecoveryStats st;
  const VoltageGuess init = test.newton_init(c);
  double time_sum = 0.0, warm_sum = 0.0, cold_sum = 0.0;
  for (auto& in : rep.instances) {
    if (in.feasible) continue;
    const auto& s = test.samples[in.index];
    ++st.attempted;
    in.recovery_attempted = true;
    const auto start = prediction_warm_start(c, in, init);
    OpfSolution sol;
    in.recovery_time = detail::seconds([&] { sol = recover(c, ym, s.loads, start, cfg.opf); });
    in.recovery_iterations = sol.iterations;
    time_sum += in.recovery_time;
    warm_sum += sol.iterations;
    int cold_iters = in.ref_iterations;
    if (cold_iters == 0) cold_iters = solve_opf(c, ym, s.loads, std::nullopt, cfg.opf).iterations;
    cold_sum += cold_iters;
    if (sol.iterations <= cold_iters) ++st.warm_not_slower;
    if (!sol.converged) continue;
    const auto check = solution_from_voltages(c, ym, s.loads, sol.v_mag, sol.v_ang, sol.p_gen, sol.q_gen);
    if (!check.converged || !check_feasibility(c, check, cfg.feasibility_tol).feasible) continue;
    in.recovered = true;
    ++st.recovered;
    in.feasible = true;
    in.violations = 0;
    in.cost_model = sol.objective;
  }
  if (st.attempted > 0) {
    const double n = static_cast<double>(st.attempted);
    st.avg_time = time_sum / n;
    st.avg_warm_iterations = warm_sum / n;
    st.avg_cold_iterations = cold_sum / n;
  }
  rep.recovery = st;
  summarize(rep);
}

inline void print_report(std::ostream& out, const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "case %s, %zu test instances\n", r.case_id.c_str(), r.n_instances);
  out << buf;
  std::snprintf(buf, sizeof buf, "  feasibility        %8.2f %%  (%zu/%zu)\n", r.feasibility_rate, r.n_feasible, r.n_instances);
  out << buf;
  std::snprintf(buf, sizeof buf, "  avg cost model     %12.4f $/hr\n  avg cost reference %12.4f $/hr  (%zu compared)\n",
                r.avg_cost_model, r.avg_cost_ref, r.n_cost_compared);
  out << buf;
  std::snprintf(buf, sizeof buf, "  cost diff          %+10.4f %%\n", r.cost_diff);
  out << buf;
  std::snprintf(buf, sizeof buf, "  time model         %10.4f ms (std %.4f)\n  time reference     %10.4f ms (std %.4f)\n",
                r.avg_time_model * 1e3, r.std_time_model * 1e3, r.avg_time_ref * 1e3, r.std_time_ref * 1e3);
  out << buf;
  std::snprintf(buf, sizeof buf, "  speedup            %10.2f x\n", r.speedup);
  out << buf;
  if (r.recovery) {
    const auto& s = *r.recovery;
    std::snprintf(buf, sizeof buf,
                  "  recovery           %zu/%zu recovered, avg %.4f ms, iterations warm %.2f vs cold %.2f, warm<=cold %zu\n",
                  s.recovered, s.attempted, s.avg_time * 1e3, s.avg_warm_iterations, s.avg_cold_iterations,
                  s.warm_not_slower);
    out << buf;
  }
}

/// Machine-readable summary: a header line and one record. Timing columns are
/// last so they are easy to drop when comparing runs.
inline void write_report_csv(std::ostream& out, const EvalReport& r) {
  out << "case,n_instances,n_feasible,feasibility_pct,n_cost_compared,avg_cost_model,avg_cost_ref,cost_diff_pct,"
         "recovery_attempted,recovered,avg_time_model_s,std_time_model_s,avg_time_ref_s,std_time_ref_s,speedup\n";
  char buf[512];
  const auto rec = r.recovery.value_or(RecoveryStats{});
  std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.17g,%zu,%.17g,%.17g,%.17g,%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                r.case_id.c_str(), r.n_instances, r.n_feasible, r.feasibility_rate, r.n_cost_compared, r.avg_cost_model,
                r.avg_cost_ref, r.cost_diff, rec.attempted, rec.recovered, r.avg_time_model, r.std_time_model,
                r.avg_time_ref, r.std_time_ref, r.speedup);
  out << buf;
}

/// Predicted against reference values per instance: generator P (MW) and bus
/// |V| (p.u.), one row per quantity.
inline void write_comparison(std::ostream& out, const EvalReport& r, const Dataset& test, const NetworkCase& c) {
  out << "instance,quantity,element_id,predicted,reference\n";
  char buf[200];
  for (const auto& in : r.instances) {
    const auto& s = test.samples[in.index];
    const auto x_ref = decode(test.spec, s.s_true);
    const auto iv = unpack(c, in.x_pred);
    const auto iv_ref = unpack(c, x_ref);
    for (std::size_t j = 0; j < c.pv.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%zu,pg_mw,%d,%.10g,%.10g\n", in.index, c.buses[c.pv[j]].id,
                    iv.pv_p_gen[j] * c.base_mva, iv_ref.pv_p_gen[j] * c.base_mva);
      out << buf;
    }
    // Dependent |V| values of the reference come from the stored dependent vector.
    std::vector<double> vm_ref(c.num_buses(), 0.0);
    vm_ref[c.slack] = iv_ref.v_slack;
    for (std::size_t j = 0; j < c.pv.size(); ++j) vm_ref[c.pv[j]] = iv_ref.pv_v_mag[j];
    const std::size_t off = c.num_buses() - 1;
    for (std::size_t k = 0; k < c.pq.size(); ++k) vm_ref[c.pq[k]] = s.dependent_true[off + k];
    for (std::size_t b = 0; b < c.num_buses(); ++b) {
      const double vm_pred = in.pf.converged ? in.pf.v_mag[b] : std::nan("");
      std::snprintf(buf, sizeof buf, "%zu,vm_pu,%d,%.10g,%.10g\n", in.index, c.buses[b].id, vm_pred, vm_ref[b]);
      out << buf;
    }
  }
}

}  // namespace deepsolve
