#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "deepsolve/netmodel.hpp"
#include "deepsolve/opf.hpp"
#include "deepsolve/parallel.hpp"
#include "deepsolve/powerflow.hpp"

namespace deepsolve {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by encode() for a value outside its box; carries the variable id.
class EncodeError : public std::out_of_range {
 public:
  EncodeError(std::string variable, double value)
      : std::out_of_range("value " + std::to_string(value) + " of " + variable + " is outside its bounds"),
        variable_(std::move(variable)) {}
  const std::string& variable() const noexcept { return variable_; }

 private:
  std::string variable_;
};

struct ScalingEntry {
  std::string id;
  double x_min = 0.0;
  double x_max = 1.0;

  bool degenerate() const noexcept { return !(x_max > x_min); }
};

/// Box bounds for the model output: |V| at the slack bus, then P_G and |V| for
/// every PV bus in bus order. Dimension 2*card(PV) + 1.
struct ScalingSpec {
  std::vector<ScalingEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }

  static ScalingSpec for_case(const NetworkCase& c) {
    ScalingSpec spec;
    const auto& sb = c.buses[c.slack];
    spec.entries.push_back({"vm:" + std::to_string(sb.id), sb.v_min, sb.v_max});
    for (std::size_t b : c.pv) {
      const auto& g = c.gen_of(b);
      const auto& bus = c.buses[b];
      spec.entries.push_back({"pg:" + std::to_string(bus.id), g.p_min, g.p_max});
      spec.entries.push_back({"vm:" + std::to_string(bus.id), bus.v_min, bus.v_max});
    }
    return spec;
  }
};

inline void to_json(nlohmann::json& j, const ScalingSpec& s) {
  j = nlohmann::json::array();
  for (const auto& e : s.entries) j.push_back({e.id, e.x_min, e.x_max});
}

inline void from_json(const nlohmann::json& j, ScalingSpec& s) {
  s.entries.clear();
  for (const auto& e : j) s.entries.push_back({e.at(0).get<std::string>(), e.at(1).get<double>(), e.at(2).get<double>()});
}

/// Physical values to scaling factors, s = (x - x_min) / (x_max - x_min).
/// Values within `slack` of a bound are clipped onto it; degenerate boxes map
/// to 0.5.
inline std::vector<double> encode(const ScalingSpec& spec, std::span<const double> x, double slack = 1e-9) {
  if (x.size() != spec.size()) throw std::invalid_argument("encode: dimension mismatch");
  std::vector<double> s(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const auto& e = spec.entries[k];
    if (!(x[k] >= e.x_min - slack && x[k] <= e.x_max + slack)) throw EncodeError(e.id, x[k]);
    s[k] = e.degenerate() ? 0.5 : std::clamp((x[k] - e.x_min) / (e.x_max - e.x_min), 0.0, 1.0);
  }
  return s;
}

/// x = s * (x_max - x_min) + x_min
inline std::vector<double> decode(const ScalingSpec& spec, std::span<const double> s) {
  if (s.size() != spec.size()) throw std::invalid_argument("decode: dimension mismatch");
  std::vector<double> x(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    const auto& e = spec.entries[k];
    x[k] = e.degenerate() ? e.x_min : s[k] * (e.x_max - e.x_min) + e.x_min;
  }
  return x;
}

/// Packs independent variables in ScalingSpec order.
inline std::vector<double> pack(const NetworkCase& c, const IndependentVars& iv) {
  std::vector<double> x;
  x.reserve(2 * c.pv.size() + 1);
  x.push_back(iv.v_slack);
  for (std::size_t j = 0; j < c.pv.size(); ++j) {
    x.push_back(iv.pv_p_gen[j]);
    x.push_back(iv.pv_v_mag[j]);
  }
  return x;
}

inline IndependentVars unpack(const NetworkCase& c, std::span<const double> x) {
  if (x.size() != 2 * c.pv.size() + 1) throw std::invalid_argument("unpack: dimension mismatch");
  IndependentVars iv;
  iv.v_slack = x[0];
  for (std::size_t j = 0; j < c.pv.size(); ++j) {
    iv.pv_p_gen.push_back(x[1 + 2 * j]);
    iv.pv_v_mag.push_back(x[2 + 2 * j]);
  }
  return iv;
}

/// Per-entry multiplicative load draws: every P_D and Q_D entry is scaled by
/// its own factor uniform on [lo, hi].
inline std::vector<std::vector<double>> sample_loads(const NetworkCase& c, double lo, double hi, std::size_t count,
                                                     std::uint64_t seed) {
  if (!(lo > 0.0) || lo > hi) throw std::invalid_argument("sample_loads: need 0 < lo <= hi");
  const auto base = c.default_loads();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(lo, hi);
  std::vector<std::vector<double>> out(count, base);
  for (auto& loads : out)
    for (double& v : loads) {
      const double f = lo == hi ? lo : unif(rng);
      v *= f;
    }
  return out;
}

/// Per-dimension standardisation of load vectors. Dimensions whose default
/// load is zero pass through unchanged.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  static Normalizer fit(const std::vector<std::vector<double>>& samples, std::span<const double> defaults) {
    const std::size_t dim = defaults.size();
    Normalizer nz{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
    if (samples.empty()) return nz;
    for (std::size_t k = 0; k < dim; ++k) {
      if (defaults[k] == 0.0) continue;
      double m = 0.0;
      for (const auto& s : samples) m += s[k];
      m /= static_cast<double>(samples.size());
      double var = 0.0;
      for (const auto& s : samples) var += (s[k] - m) * (s[k] - m);
      var /= static_cast<double>(samples.size());
      nz.mean[k] = m;
      nz.stddev[k] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return nz;
  }

  Eigen::VectorXd apply(std::span<const double> loads) const {
    if (loads.size() != mean.size()) throw std::invalid_argument("normalizer: dimension mismatch");
    Eigen::VectorXd out(static_cast<Eigen::Index>(loads.size()));
    for (std::size_t k = 0; k < loads.size(); ++k) out[static_cast<Eigen::Index>(k)] = (loads[k] - mean[k]) / stddev[k];
    return out;
  }
};

inline void to_json(nlohmann::json& j, const Normalizer& n) { j = {{"mean", n.mean}, {"std", n.stddev}}; }
inline void from_json(const nlohmann::json& j, Normalizer& n) {
  n.mean = j.at("mean").get<std::vector<double>>();
  n.stddev = j.at("std").get<std::vector<double>>();
}

/// Dependent variables in a fixed layout: angles of non-slack buses, |V| at PQ
/// buses, Q_G at PV buses, then slack P_G and Q_G.
inline std::vector<double> dependent_vector(const NetworkCase& c, std::span<const double> v_mag,
                                            std::span<const double> v_ang, std::span<const double> p_gen,
                                            std::span<const double> q_gen) {
  std::vector<double> d;
  for (std::size_t i = 0; i < c.num_buses(); ++i)
    if (i != c.slack) d.push_back(v_ang[i]);
  for (std::size_t i : c.pq) d.push_back(v_mag[i]);
  for (std::size_t i : c.pv) d.push_back(q_gen[static_cast<std::size_t>(c.gen_at_bus[i])]);
  const auto sg = static_cast<std::size_t>(c.gen_at_bus[c.slack]);
  d.push_back(p_gen[sg]);
  d.push_back(q_gen[sg]);
  return d;
}

inline std::size_t dependent_size(const NetworkCase& c) { return c.num_buses() - 1 + c.pq.size() + c.pv.size() + 2; }

/// Newton starting point from a dependent-variable vector (typically the
/// training-set mean). Entries the vector does not carry stay flat.
inline VoltageGuess guess_from_dependent(const NetworkCase& c, std::span<const double> dep) {
  if (dep.size() != dependent_size(c)) throw std::invalid_argument("dependent vector has wrong size");
  auto g = flat_start(c);
  std::size_t k = 0;
  for (std::size_t i = 0; i < c.num_buses(); ++i)
    if (i != c.slack) g.v_ang[i] = dep[k++];
  for (std::size_t i : c.pq) g.v_mag[i] = dep[k++];
  return g;
}

struct TrainSample {
  std::vector<double> loads;  // P_D then Q_D, p.u.
  std::vector<double> s_true;
  double objective_true = 0.0;
  std::vector<double> dependent_true;
};

inline constexpr int kDatasetFormatVersion = 1;

struct Dataset {
  std::string case_id;
  std::string split = "train";
  ScalingSpec spec;
  Normalizer normalizer;
  std::vector<TrainSample> samples;
  std::vector<double> dependent_mean;  // from the training split
  std::uint64_t seed = 0;
  double range_lo = 0.9;
  double range_hi = 1.1;

  std::size_t size() const noexcept { return samples.size(); }
  VoltageGuess newton_init(const NetworkCase& c) const { return guess_from_dependent(c, dependent_mean); }
};

namespace detail {

inline void append_number(std::string& out, double v) {
  char buf[40];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

inline std::vector<double> parse_csv_row(const std::string& line, std::size_t expected, int line_no) {
  std::vector<double> values;
  values.reserve(expected);
  const char* p = line.data();
  const char* end = p + line.size();
  while (p < end) {
    double v = 0.0;
    auto r = std::from_chars(p, end, v);
    if (r.ec != std::errc()) throw DataError("dataset line " + std::to_string(line_no) + ": malformed number");
    values.push_back(v);
    p = r.ptr;
    if (p < end) {
      if (*p != ',') throw DataError("dataset line " + std::to_string(line_no) + ": expected ','");
      ++p;
    }
  }
  if (values.size() != expected)
    throw DataError("dataset line " + std::to_string(line_no) + ": expected " + std::to_string(expected) +
                    " values, got " + std::to_string(values.size()));
  return values;
}

}  // namespace detail

/// Writes the header record (one JSON line) followed by one comma-separated
/// record per sample: loads, s_true, objective, dependent variables.
inline void write_dataset(std::ostream& out, const Dataset& ds) {
  nlohmann::json header = {{"format_version", kDatasetFormatVersion},
                           {"case", ds.case_id},
                           {"split", ds.split},
                           {"seed", ds.seed},
                           {"range", {ds.range_lo, ds.range_hi}},
                           {"load_draws", "independent-per-entry"},
                           {"spec", ds.spec},
                           {"normalizer", ds.normalizer},
                           {"dependent_mean", ds.dependent_mean},
                           {"count", ds.samples.size()}};
  out << header.dump() << '\n';
  std::string line;
  for (const auto& s : ds.samples) {
    line.clear();
    auto put = [&](double v) {
      if (!line.empty()) line.push_back(',');
      detail::append_number(line, v);
    };
    for (double v : s.loads) put(v);
    for (double v : s.s_true) put(v);
    put(s.objective_true);
    for (double v : s.dependent_true) put(v);
    out << line << '\n';
  }
}

/// Reads a dataset written by write_dataset. Row widths come from the header
/// and the case it names.
inline Dataset read_dataset(std::istream& in, const NetworkCase& c) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset file is empty");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("dataset header: ") + e.what());
  }
  if (header.value("format_version", 0) != kDatasetFormatVersion) throw DataError("unsupported dataset format_version");
  Dataset ds;
  ds.case_id = header.at("case").get<std::string>();
  ds.split = header.at("split").get<std::string>();
  ds.seed = header.at("seed").get<std::uint64_t>();
  ds.range_lo = header.at("range").at(0).get<double>();
  ds.range_hi = header.at("range").at(1).get<double>();
  ds.spec = header.at("spec").get<ScalingSpec>();
  ds.normalizer = header.at("normalizer").get<Normalizer>();
  ds.dependent_mean = header.at("dependent_mean").get<std::vector<double>>();
  const std::size_t nload = 2 * c.num_buses();
  const std::size_t d = ds.spec.size();
  const std::size_t ndep = dependent_size(c);
  if (d != 2 * c.pv.size() + 1) throw DataError("dataset scaling spec does not match case " + c.name);
  const std::size_t width = nload + d + 1 + ndep;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto v = detail::parse_csv_row(line, width, line_no);
    TrainSample s;
    s.loads.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(nload));
    s.s_true.assign(v.begin() + static_cast<std::ptrdiff_t>(nload), v.begin() + static_cast<std::ptrdiff_t>(nload + d));
    s.objective_true = v[nload + d];
    s.dependent_true.assign(v.begin() + static_cast<std::ptrdiff_t>(nload + d + 1), v.end());
    ds.samples.push_back(std::move(s));
  }
  const auto expected = header.value("count", ds.samples.size());
  if (expected != ds.samples.size())
    throw DataError("dataset declares " + std::to_string(expected) + " samples, file has " + std::to_string(ds.samples.size()));
  return ds;
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_dataset(out, ds);
}

inline Dataset load_dataset(const std::filesystem::path& path, const NetworkCase& c) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_dataset(in, c);
}

struct BuildOptions {
  double range_lo = 0.9;
  double range_hi = 1.1;
  unsigned workers = 1;
  double max_drop_rate = 0.05;
  OpfOptions opf;
  std::function<void(const std::string&)> log;  // optional
};

/// Samples loads, labels every sample with a cold-start OPF, drops samples
/// whose OPF fails, and fits the normalizer and dependent-variable means on the
/// training split. The first `count_train` draws of the seeded stream form the
/// training split.
inline std::pair<Dataset, Dataset> build_dataset(const NetworkCase& c, const AdmittanceMatrix& ym,
                                                 std::size_t count_train, std::size_t count_test, std::uint64_t seed,
                                                 const BuildOptions& opt = {}) {
  const auto all = sample_loads(c, opt.range_lo, opt.range_hi, count_train + count_test, seed);
  const auto spec = ScalingSpec::for_case(c);

  std::vector<std::optional<TrainSample>> labelled(all.size());
  parallel_for(all.size(), opt.workers, [&](std::size_t i) {
    auto sol = solve_opf(c, ym, all[i], std::nullopt, opt.opf);
    if (!sol.converged) return;
    TrainSample s;
    s.loads = all[i];
    try {
      s.s_true = encode(spec, pack(c, sol.independent(c)));
    } catch (const EncodeError&) {
      return;
    }
    s.objective_true = sol.objective;
    s.dependent_true = dependent_vector(c, sol.v_mag, sol.v_ang, sol.p_gen, sol.q_gen);
    labelled[i] = std::move(s);
  });

  auto make = [&](std::size_t begin, std::size_t end, const char* split) {
    Dataset ds;
    ds.case_id = c.name;
    ds.split = split;
    ds.spec = spec;
    ds.seed = seed;
    ds.range_lo = opt.range_lo;
    ds.range_hi = opt.range_hi;
    std::size_t dropped = 0;
    for (std::size_t i = begin; i < end; ++i) {
      if (labelled[i]) {
        ds.samples.push_back(*labelled[i]);
      } else {
        ++dropped;
        if (opt.log) opt.log(std::string(split) + " sample " + std::to_string(i - begin) + ": OPF failed, dropped");
      }
    }
    const std::size_t total = end - begin;
    if (total > 0 && static_cast<double>(dropped) > opt.max_drop_rate * static_cast<double>(total))
      throw DataError(std::string(split) + " split: " + std::to_string(dropped) + " of " + std::to_string(total) +
                      " OPF solves failed (limit " + std::to_string(opt.max_drop_rate * 100.0) + "%)");
    return ds;
  };
  Dataset train = make(0, count_train, "train");
  Dataset test = make(count_train, count_train + count_test, "test");

  std::vector<std::vector<double>> train_loads;
  for (const auto& s : train.samples) train_loads.push_back(s.loads);
  train.normalizer = Normalizer::fit(train_loads, c.default_loads());
  train.dependent_mean.assign(dependent_size(c), 0.0);
  if (!train.samples.empty()) {
    for (const auto& s : train.samples)
      for (std::size_t k = 0; k < s.dependent_true.size(); ++k) train.dependent_mean[k] += s.dependent_true[k];
    for (double& v : train.dependent_mean) v /= static_cast<double>(train.samples.size());
  } else {
    train.dependent_mean = dependent_vector(c, flat_start(c).v_mag, flat_start(c).v_ang,
                                            std::vector<double>(c.num_gens(), 0.0), std::vector<double>(c.num_gens(), 0.0));
  }
  test.normalizer = train.normalizer;
  test.dependent_mean = train.dependent_mean;
  return {std::move(train), std::move(test)};
}

}  // namespace deepsolve
