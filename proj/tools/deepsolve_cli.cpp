// deepsolve: command-line driver for data generation, training, evaluation and
// the standalone power flow / OPF solvers.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <deepsolve.hpp>

#ifndef DEEPSOLVE_VERSION
#define DEEPSOLVE_VERSION "dev"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace deepsolve;

namespace {

constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

/// Failure that is neither a usage error nor an exception from the library,
/// for example a solver that did not converge.
struct DomainFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "";
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char h[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(h, sizeof h, "%02x", md[i]);
    hex += h;
  }
  return hex;
}

fs::path resolve_case_path(const fs::path& p) {
  if (fs::exists(p) && !fs::is_directory(p)) return p;
  for (const char* ext : {".json", ".m"}) {
    fs::path q = p;
    q += ext;
    if (fs::exists(q)) return q;
  }
  return p;
}

class Manifest {
 public:
  explicit Manifest(const CLI::App& sub) {
    doc_["tool"] = "deepsolve";
    doc_["version"] = DEEPSOLVE_VERSION;
    doc_["subcommand"] = sub.get_name();
    json cfg = json::object();
    for (const CLI::Option* o : sub.get_options()) {
      if (o->get_lnames().empty() || o->get_lnames().front() == "help") continue;
      const auto& name = o->get_lnames().front();
      if (o->get_type_size() == 0) {
        cfg[name] = o->count() > 0;
      } else if (o->count() > 0) {
        const auto& r = o->results();
        cfg[name] = r.size() == 1 ? json(r.front()) : json(r);
      } else {
        cfg[name] = o->get_default_str();
      }
    }
    doc_["config"] = cfg;
    doc_["seeds"] = json::object();
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::array();
  }

  void seed(const std::string& name, std::uint64_t v) { doc_["seeds"][name] = v; }
  void workers(int n) { doc_["config"]["workers"] = n; }
  void input(const fs::path& p) { doc_["inputs"][p.string()] = {{"sha256", sha256_file(p)}}; }
  void output(const fs::path& p) { doc_["outputs"].push_back(p.string()); }

  void write(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << doc_.dump(2) << '\n';
  }

 private:
  json doc_;
};

std::vector<std::vector<double>> read_loads(const fs::path& path, const NetworkCase& c) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      while (p < end && (*p == ' ' || *p == ',' || *p == '\t' || *p == '\r')) ++p;
      if (p == end) break;
      double v = 0.0;
      auto r = std::from_chars(p, end, v);
      if (r.ec != std::errc()) throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
      row.push_back(v);
      p = r.ptr;
    }
    if (row.size() != 2 * c.num_buses())
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(2 * c.num_buses()) +
                      " per-unit loads (P then Q per bus), got " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path.string() + " contains no load rows");
  return rows;
}

std::vector<Eigen::Index> default_hidden(const NetworkCase& c) {
  if (c.num_buses() > 60) return {256, 128};
  return {64, 32};
}

std::pair<double, double> parse_range(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw CLI::ValidationError("--range", "expected lo:hi");
  double lo = 0.0, hi = 0.0;
  try {
    lo = std::stod(text.substr(0, colon));
    hi = std::stod(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw CLI::ValidationError("--range", "expected lo:hi");
  }
  if (!(lo > 0.0) || lo > hi) throw CLI::ValidationError("--range", "need 0 < lo <= hi");
  return {lo, hi};
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

json solution_json(const NetworkCase& c, const std::vector<double>& vm, const std::vector<double>& va,
                   const std::vector<double>& pg, const std::vector<double>& qg) {
  json buses = json::array();
  for (std::size_t i = 0; i < c.num_buses(); ++i)
    buses.push_back({{"id", c.buses[i].id}, {"vm_pu", vm[i]}, {"va_deg", va[i] * 180.0 / 3.14159265358979323846}});
  json gens = json::array();
  for (std::size_t g = 0; g < c.num_gens(); ++g)
    gens.push_back({{"bus", c.buses[c.generators[g].bus].id}, {"pg_mw", pg[g] * c.base_mva}, {"qg_mvar", qg[g] * c.base_mva}});
  return {{"buses", buses}, {"generators", gens}};
}

json violations_json(const NetworkCase& c, const FeasibilityReport& r) {
  json v = json::array();
  for (const auto& x : r.violations) {
    const int id = x.kind == ConstraintKind::BranchFlow ? static_cast<int>(x.element) + 1 : c.buses[x.element].id;
    v.push_back({{"kind", std::string(to_string(x.kind))}, {"element", id}, {"magnitude_pu", x.magnitude}});
  }
  return v;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string case_path;
  std::size_t train_count = 1000;
  std::size_t test_count = 200;
  std::string range = "0.9:1.1";
  std::uint64_t seed = 0;
  std::string out_dir = "data";
};

int run_gen_data(const GenDataArgs& a, const CLI::App& sub, int workers) {
  const auto case_file = resolve_case_path(a.case_path);
  const auto c = load_case(case_file);
  const auto ym = build_admittance(c);
  const auto [lo, hi] = parse_range(a.range);
  BuildOptions opt;
  opt.range_lo = lo;
  opt.range_hi = hi;
  opt.workers = resolve_workers(workers);
  opt.log = log_line;
  auto [train, test] = build_dataset(c, ym, a.train_count, a.test_count, a.seed, opt);
  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  save_dataset(dir / "train.csv", train);
  save_dataset(dir / "test.csv", test);
  std::cerr << "wrote " << train.size() << " training and " << test.size() << " test samples to " << dir << '\n';

  Manifest m(sub);
  m.workers(resolve_workers(workers));
  m.seed("data", a.seed);
  m.input(case_file);
  m.output(dir / "train.csv");
  m.output(dir / "test.csv");
  m.write(dir / "manifest.json");
  return 0;
}

struct TrainArgs {
  std::string case_path;
  std::string data_dir = "data";
  double w1 = 1.0;
  double w2 = 0.1;
  double delta = 1e-3;
  int epochs = 200;
  int batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::vector<int> hidden;
  std::string out = "model.ckpt";
  std::string metrics;
};

int run_train(const TrainArgs& a, const CLI::App& sub, int workers) {
  const auto case_file = resolve_case_path(a.case_path);
  const auto c = load_case(case_file);
  const auto ym = build_admittance(c);
  const fs::path data_file = fs::path(a.data_dir) / "train.csv";
  const auto data = load_dataset(data_file, c);

  std::vector<Eigen::Index> sizes{static_cast<Eigen::Index>(2 * c.num_buses())};
  if (a.hidden.empty()) {
    for (auto h : default_hidden(c)) sizes.push_back(h);
  } else {
    for (int h : a.hidden) sizes.push_back(h);
  }
  sizes.push_back(static_cast<Eigen::Index>(data.spec.size()));
  auto model = init_model(sizes, a.seed);

  TrainConfig cfg;
  cfg.w1 = a.w1;
  cfg.w2 = a.w2;
  cfg.delta = a.delta;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.learning_rate = a.lr;
  cfg.seed = a.seed;
  cfg.workers = resolve_workers(workers);
  cfg.log = log_line;

  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  fs::path metrics_path = a.metrics.empty() ? fs::path(out).replace_extension(".metrics.csv") : fs::path(a.metrics);
  std::ofstream metrics(metrics_path);
  if (!metrics) throw DataError("cannot write " + metrics_path.string());
  const auto result = train(model, data, c, ym, cfg, &metrics);

  json meta = {{"case", c.name},
               {"seed", a.seed},
               {"spec", data.spec},
               {"normalizer", data.normalizer},
               {"dependent_mean", data.dependent_mean},
               {"train", {{"w1", a.w1}, {"w2", a.w2}, {"delta", a.delta}, {"epochs", a.epochs}, {"batch", a.batch}, {"lr", a.lr}}},
               {"pf_solves", result.pf_solves}};
  save_checkpoint(out, model, meta);
  std::cerr << "saved model to " << out << ", metrics to " << metrics_path << '\n';

  Manifest m(sub);
  m.workers(resolve_workers(workers));
  m.seed("model", a.seed);
  m.input(case_file);
  m.input(data_file);
  m.output(out);
  m.output(metrics_path);
  m.write(fs::path(out).replace_extension(".manifest.json"));
  return 0;
}

/// Dataset with the normalizer and Newton initial guess the model was trained with.
Dataset align_with_checkpoint(Dataset test, const Checkpoint& ck, const NetworkCase& c) {
  const auto& meta = ck.meta;
  if (meta.contains("case") && meta["case"].get<std::string>() != c.name)
    throw ModelError("model was trained on case " + meta["case"].get<std::string>() + ", not " + c.name);
  if (meta.contains("spec")) {
    const auto spec = meta["spec"].get<ScalingSpec>();
    if (spec.size() != test.spec.size()) throw ModelError("model output size does not match the case");
    for (std::size_t k = 0; k < spec.size(); ++k)
      if (spec.entries[k].id != test.spec.entries[k].id || spec.entries[k].x_min != test.spec.entries[k].x_min ||
          spec.entries[k].x_max != test.spec.entries[k].x_max)
        throw ModelError("model scaling bounds differ from the dataset at " + spec.entries[k].id);
    test.spec = spec;
  }
  if (meta.contains("normalizer")) test.normalizer = meta["normalizer"].get<Normalizer>();
  if (meta.contains("dependent_mean")) test.dependent_mean = meta["dependent_mean"].get<std::vector<double>>();
  if (test.dependent_mean.size() != dependent_size(c)) {
    const auto flat = flat_start(c);
    const std::vector<double> zero(c.num_gens(), 0.0);
    test.dependent_mean = dependent_vector(c, flat.v_mag, flat.v_ang, zero, zero);
  }
  return test;
}

struct EvalArgs {
  std::string model;
  std::string case_path;
  std::string data_dir = "data";
  bool recover = false;
  std::string report;
  std::string comparison;
  bool skip_reference_timing = false;
};

int run_eval(const EvalArgs& a, const CLI::App& sub, int workers) {
  const auto case_file = resolve_case_path(a.case_path);
  const auto c = load_case(case_file);
  const auto ym = build_admittance(c);
  const auto ck = load_checkpoint(a.model);
  const fs::path data_file = fs::path(a.data_dir) / "test.csv";
  const auto test = align_with_checkpoint(load_dataset(data_file, c), ck, c);

  EvalConfig cfg;
  cfg.workers = resolve_workers(workers);
  cfg.time_reference = !a.skip_reference_timing;
  auto rep = evaluate(ck.model, test, c, ym, cfg);
  if (a.recover) recover_infeasible(rep, test, c, ym, cfg);
  print_report(std::cout, rep);

  const fs::path report = a.report.empty() ? fs::path(a.model).replace_extension(".eval.csv") : fs::path(a.report);
  if (report.has_parent_path()) fs::create_directories(report.parent_path());
  {
    std::ofstream out(report);
    if (!out) throw DataError("cannot write " + report.string());
    write_report_csv(out, rep);
  }
  Manifest m(sub);
  m.workers(resolve_workers(workers));
  m.input(case_file);
  m.input(a.model);
  m.input(data_file);
  m.output(report);
  if (!a.comparison.empty()) {
    std::ofstream out(a.comparison);
    if (!out) throw DataError("cannot write " + a.comparison);
    write_comparison(out, rep, test, c);
    m.output(a.comparison);
  }
  m.write(fs::path(report).replace_extension(".manifest.json"));
  return 0;
}

struct SolveArgs {
  std::string case_path;
  std::string loads;
  std::string out;
  double tolerance = 1e-6;
};

std::vector<double> loads_or_default(const SolveArgs& a, const NetworkCase& c) {
  if (a.loads.empty()) return c.default_loads();
  const auto rows = read_loads(a.loads, c);
  if (rows.size() > 1) std::cerr << "using the first of " << rows.size() << " load rows\n";
  return rows.front();
}

void emit(const json& doc, const std::string& out, const CLI::App& sub, const std::vector<fs::path>& inputs) {
  if (out.empty()) {
    std::cout << doc.dump(2) << '\n';
    return;
  }
  std::ofstream f(out);
  if (!f) throw DataError("cannot write " + out);
  f << doc.dump(2) << '\n';
  Manifest m(sub);
  for (const auto& p : inputs) m.input(p);
  m.output(out);
  m.write(fs::path(out).replace_extension(".manifest.json"));
}

int run_solve_pf(const SolveArgs& a, const CLI::App& sub) {
  const auto case_file = resolve_case_path(a.case_path);
  const auto c = load_case(case_file);
  const auto ym = build_admittance(c);
  const auto loads = loads_or_default(a, c);
  const auto iv = case_setpoints(c);
  const auto sol = solve_pf(c, ym, iv, loads, flat_start(c));
  json doc = {{"case", c.name},
              {"status", std::string(to_string(sol.status))},
              {"iterations", sol.iterations},
              {"max_residual_pu", sol.max_residual}};
  std::vector<fs::path> inputs{case_file};
  if (!a.loads.empty()) inputs.emplace_back(a.loads);
  if (sol.converged) {
    doc["solution"] = solution_json(c, sol.v_mag, sol.v_ang, sol.p_gen(c, iv), sol.q_gen(c));
    const auto fr = check_feasibility(c, sol, a.tolerance);
    doc["feasible"] = fr.feasible;
    doc["violations"] = violations_json(c, fr);
  }
  emit(doc, a.out, sub, inputs);
  if (!sol.converged) throw DomainFailure("power flow did not converge: " + std::string(to_string(sol.status)));
  return 0;
}

int run_solve_opf(const SolveArgs& a, const CLI::App& sub) {
  const auto case_file = resolve_case_path(a.case_path);
  const auto c = load_case(case_file);
  const auto ym = build_admittance(c);
  const auto loads = loads_or_default(a, c);
  const auto sol = solve_opf(c, ym, loads);
  json doc = {{"case", c.name},
              {"status", std::string(ipm::to_string(sol.status))},
              {"iterations", sol.iterations},
              {"objective", sol.objective},
              {"kkt_residual", sol.kkt_residual},
              {"solve_time_s", sol.wall_time.count()}};
  std::vector<fs::path> inputs{case_file};
  if (!a.loads.empty()) inputs.emplace_back(a.loads);
  if (sol.converged) {
    doc["solution"] = solution_json(c, sol.v_mag, sol.v_ang, sol.p_gen, sol.q_gen);
    const auto check = solution_from_voltages(c, ym, loads, sol.v_mag, sol.v_ang, sol.p_gen, sol.q_gen);
    const auto fr = check.converged ? check_feasibility(c, check, a.tolerance) : FeasibilityReport{false, {}};
    doc["feasible"] = fr.feasible;
    doc["violations"] = violations_json(c, fr);
  }
  emit(doc, a.out, sub, inputs);
  if (!sol.converged) throw DomainFailure("OPF did not converge: " + std::string(ipm::to_string(sol.status)));
  return 0;
}

struct PredictArgs {
  std::string model;
  std::string case_path;
  std::string loads;
  std::string out;
};

int run_predict(const PredictArgs& a, const CLI::App& sub) {
  const auto case_file = resolve_case_path(a.case_path);
  const auto c = load_case(case_file);
  const auto ym = build_admittance(c);
  const auto ck = load_checkpoint(a.model);
  Dataset shell;
  shell.spec = ScalingSpec::for_case(c);
  shell.normalizer = Normalizer{std::vector<double>(2 * c.num_buses(), 0.0), std::vector<double>(2 * c.num_buses(), 1.0)};
  const auto ctx = align_with_checkpoint(shell, ck, c);
  const auto rows = a.loads.empty() ? std::vector<std::vector<double>>{c.default_loads()} : read_loads(a.loads, c);
  if (ck.model.input_dim() != static_cast<Eigen::Index>(2 * c.num_buses()) ||
      ck.model.output_dim() != static_cast<Eigen::Index>(ctx.spec.size()))
    throw ModelError("model dimensions do not match case " + c.name);

  const auto init = ctx.newton_init(c);
  json preds = json::array();
  for (const auto& loads : rows) {
    const Eigen::VectorXd s = forward(ck.model, ctx.normalizer.apply(loads));
    const std::vector<double> sv(s.data(), s.data() + s.size());
    const auto x = decode(ctx.spec, sv);
    json vars = json::object();
    for (std::size_t k = 0; k < x.size(); ++k) {
      const auto& id = ctx.spec.entries[k].id;
      vars[id] = id.rfind("pg:", 0) == 0 ? x[k] * c.base_mva : x[k];
    }
    json item = {{"s_pred", sv}, {"independent", vars}};
    const auto iv = unpack(c, x);
    const auto pf = solve_pf(c, ym, iv, loads, init);
    item["pf_status"] = std::string(to_string(pf.status));
    if (pf.converged) {
      const auto fr = check_feasibility(c, pf, 1e-6);
      item["feasible"] = fr.feasible;
      item["cost"] = c.cost(pf.p_gen(c, iv));
      item["violations"] = violations_json(c, fr);
    }
    preds.push_back(std::move(item));
  }
  std::vector<fs::path> inputs{case_file, a.model};
  if (!a.loads.empty()) inputs.emplace_back(a.loads);
  emit({{"case", c.name}, {"predictions", preds}}, a.out, sub, inputs);
  return 0;
}

struct ReportArgs {
  std::vector<std::string> reports;
};

/// Side-by-side table of eval CSV files (for example runs with and without
/// the penalty term).
int run_report(const ReportArgs& a) {
  std::vector<std::map<std::string, std::string>> rows;
  for (const auto& path : a.reports) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::string header, values;
    if (!std::getline(in, header) || !std::getline(in, values)) throw DataError(path + " is not an eval report");
    std::map<std::string, std::string> row;
    std::stringstream hs(header), vs(values);
    std::string h, v;
    while (std::getline(hs, h, ',') && std::getline(vs, v, ',')) row[h] = v;
    if (!row.contains("feasibility_pct")) throw DataError(path + " is not an eval report");
    row["file"] = path;
    rows.push_back(std::move(row));
  }
  auto num = [](const std::map<std::string, std::string>& r, const char* k) { return std::stod(r.at(k)); };
  std::printf("%-32s %8s %10s %12s %12s %9s %11s %11s %9s\n", "report", "case", "feas(%)", "cost model", "cost ref",
              "diff(%)", "t_model ms", "t_ref ms", "speedup");
  for (const auto& r : rows) {
    std::printf("%-32s %8s %10.2f %12.3f %12.3f %+9.4f %11.4f %11.4f %9.2f\n", r.at("file").c_str(), r.at("case").c_str(),
                num(r, "feasibility_pct"), num(r, "avg_cost_model"), num(r, "avg_cost_ref"), num(r, "cost_diff_pct"),
                num(r, "avg_time_model_s") * 1e3, num(r, "avg_time_ref_s") * 1e3, num(r, "speedup"));
  }
  return 0;
}

struct ConvertArgs {
  std::string case_path;
  std::string out;
};

int run_convert(const ConvertArgs& a) {
  const auto c = load_case(resolve_case_path(a.case_path));
  const auto doc = to_canonical(c).dump(1);
  if (a.out.empty()) {
    std::cout << doc << '\n';
  } else {
    std::ofstream f(a.out);
    if (!f) throw DataError("cannot write " + a.out);
    f << doc << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned AC-OPF solver: data generation, training, evaluation and reference solvers", "deepsolve"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(DEEPSOLVE_VERSION));
  app.set_config("--config", "", "TOML/INI file with option defaults (flags take precedence)");
  app.option_defaults()->always_capture_default();
  int workers = 0;
  app.add_option("--workers", workers, "Concurrent power-flow workers (0: DEEPSOLVE_WORKERS or all cores)")
      ->check(CLI::NonNegativeNumber);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Sample loads and label them with the reference OPF solver");
  gen->add_option("--case", gd.case_path, "Case file (.m or canonical .json)")->required();
  gen->add_option("--train-count", gd.train_count, "Training samples");
  gen->add_option("--test-count", gd.test_count, "Test samples");
  gen->add_option("--range", gd.range, "Per-entry load multiplier range lo:hi");
  gen->add_option("--seed", gd.seed, "Sampling seed");
  gen->add_option("--out-dir", gd.out_dir, "Output directory");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train the load-to-setpoint model");
  trn->add_option("--case", ta.case_path, "Case file")->required();
  trn->add_option("--data-dir", ta.data_dir, "Directory with train.csv");
  trn->add_option("--w1", ta.w1, "Weight of the prediction loss")->check(CLI::NonNegativeNumber);
  trn->add_option("--w2", ta.w2, "Weight of the constraint penalty")->check(CLI::NonNegativeNumber);
  trn->add_option("--delta", ta.delta, "Smoothing radius of the zero-order estimator")->check(CLI::PositiveNumber);
  trn->add_option("--epochs", ta.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  trn->add_option("--batch", ta.batch, "Mini-batch size")->check(CLI::PositiveNumber);
  trn->add_option("--lr", ta.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  trn->add_option("--seed", ta.seed, "Initialisation and shuffling seed");
  trn->add_option("--hidden", ta.hidden, "Hidden layer widths (default by case size)")->delimiter(',');
  trn->add_option("--out", ta.out, "Checkpoint path");
  trn->add_option("--metrics", ta.metrics, "Per-epoch metrics CSV (default next to the checkpoint)");

  EvalArgs ea;
  auto* evl = app.add_subcommand("eval", "Evaluate a trained model on the test split");
  evl->add_option("--model", ea.model, "Checkpoint path")->required();
  evl->add_option("--case", ea.case_path, "Case file")->required();
  evl->add_option("--data-dir", ea.data_dir, "Directory with test.csv");
  evl->add_flag("--recover", ea.recover, "Re-solve infeasible predictions with a warm-started OPF");
  evl->add_option("--report", ea.report, "Report CSV path (default next to the checkpoint)");
  evl->add_option("--dump-comparison", ea.comparison, "Predicted vs reference values per instance");
  evl->add_flag("--skip-reference-timing", ea.skip_reference_timing, "Use stored labels instead of timing the OPF solver");

  SolveArgs pa;
  auto* spf = app.add_subcommand("solve-pf", "Newton power flow at the case setpoints from a flat start");
  spf->add_option("--case", pa.case_path, "Case file")->required();
  spf->add_option("--loads", pa.loads, "CSV with per-unit loads (P then Q per bus); default loads otherwise");
  spf->add_option("--out", pa.out, "JSON output (stdout otherwise)");
  spf->add_option("--tolerance", pa.tolerance, "Feasibility tolerance, p.u.");

  SolveArgs oa;
  auto* sopf = app.add_subcommand("solve-opf", "Reference AC-OPF solve");
  sopf->add_option("--case", oa.case_path, "Case file")->required();
  sopf->add_option("--loads", oa.loads, "CSV with per-unit loads (P then Q per bus); default loads otherwise");
  sopf->add_option("--out", oa.out, "JSON output (stdout otherwise)");
  sopf->add_option("--tolerance", oa.tolerance, "Feasibility tolerance, p.u.");

  PredictArgs pr;
  auto* prd = app.add_subcommand("predict", "Predict setpoints and reconstruct the operating point");
  prd->add_option("--model", pr.model, "Checkpoint path")->required();
  prd->add_option("--case", pr.case_path, "Case file")->required();
  prd->add_option("--loads", pr.loads, "CSV with per-unit loads, one row per instance; default loads otherwise");
  prd->add_option("--out", pr.out, "JSON output (stdout otherwise)");

  ReportArgs ra;
  auto* rpt = app.add_subcommand("report", "Tabulate one or more eval report CSV files");
  rpt->add_option("reports", ra.reports, "Eval report files")->required()->check(CLI::ExistingFile);

  ConvertArgs ca;
  auto* cnv = app.add_subcommand("convert", "Write a case in the canonical JSON format");
  cnv->add_option("--case", ca.case_path, "Case file")->required();
  cnv->add_option("--out", ca.out, "Output path (stdout otherwise)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) return run_gen_data(gd, *gen, workers);
    if (*trn) return run_train(ta, *trn, workers);
    if (*evl) return run_eval(ea, *evl, workers);
    if (*spf) return run_solve_pf(pa, *spf);
    if (*sopf) return run_solve_opf(oa, *sopf);
    if (*prd) return run_predict(pr, *prd);
    if (*rpt) return run_report(ra);
    if (*cnv) return run_convert(ca);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDomain;
  }
  return kExitUsage;
}
