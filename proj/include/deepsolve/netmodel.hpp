#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Sparse>
#include <nlohmann/json.hpp>

namespace deepsolve {

using Complex = std::complex<double>;

/// Raised for malformed or inconsistent case data. `line()` is 0 when the
/// problem is not tied to a particular source line.
class CaseError : public std::runtime_error {
 public:
  explicit CaseError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

enum class BusKind { Slack, PV, PQ };

inline std::string_view to_string(BusKind kind) {
  switch (kind) {
    case BusKind::Slack: return "slack";
    case BusKind::PV: return "pv";
    case BusKind::PQ: return "pq";
  }
  return "?";
}

// All electrical quantities below are per-unit on NetworkCase::base_mva.

struct Bus {
  int id = 0;
  BusKind kind = BusKind::PQ;
  double p_load = 0.0;
  double q_load = 0.0;
  double v_min = 0.9;
  double v_max = 1.1;
  double shunt_g = 0.0;
  double shunt_b = 0.0;
};

struct Branch {
  std::size_t from = 0;  // bus index, not id
  std::size_t to = 0;
  double series_r = 0.0;
  double series_x = 0.0;
  double charging_b = 0.0;
  double tap_ratio = 1.0;
  double phase_shift = 0.0;  // radians
  double s_max = 0.0;        // 0 = unlimited

  bool limited() const noexcept { return s_max > 0.0; }
};

struct Generator {
  std::size_t bus = 0;  // bus index
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  double p_setpoint = 0.0;
  double v_setpoint = 1.0;
};

/// Quadratic cost c2*P^2 + c1*P + c0 with P in per-unit, result in $/hr.
struct CostCurve {
  double c2 = 0.0;
  double c1 = 0.0;
  double c0 = 0.0;

  double operator()(double p) const noexcept { return (c2 * p + c1) * p + c0; }
  double derivative(double p) const noexcept { return 2.0 * c2 * p + c1; }
};

struct NetworkCase {
  std::string name;
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  std::vector<CostCurve> cost_curves;  // parallel to generators

  // Derived by index_case(); kept in bus order.
  std::size_t slack = 0;
  std::vector<std::size_t> pv;
  std::vector<std::size_t> pq;
  std::vector<int> gen_at_bus;  // -1 when the bus has no generator

  std::size_t num_buses() const noexcept { return buses.size(); }
  std::size_t num_gens() const noexcept { return generators.size(); }

  const Generator& slack_gen() const { return generators[static_cast<std::size_t>(gen_at_bus[slack])]; }
  const Generator& gen_of(std::size_t bus) const {
    return generators[static_cast<std::size_t>(gen_at_bus[bus])];
  }

  /// Total generation cost in $/hr for per-unit active outputs, one per generator.
  double cost(const std::vector<double>& p_gen) const {
    double total = 0.0;
    for (std::size_t g = 0; g < cost_curves.size(); ++g) total += cost_curves[g](p_gen[g]);
    return total;
  }

  /// Default loads stacked as (P_D over buses, Q_D over buses).
  std::vector<double> default_loads() const {
    std::vector<double> loads(2 * buses.size());
    for (std::size_t i = 0; i < buses.size(); ++i) {
      loads[i] = buses[i].p_load;
      loads[buses.size() + i] = buses[i].q_load;
    }
    return loads;
  }
};

/// Checks the structural invariants and fills the derived index fields.
/// Bus kinds are reconciled with generator placement: a non-slack bus with a
/// generator is PV, a non-slack bus without one is PQ.
inline void index_case(NetworkCase& c) {
  if (!(c.base_mva > 0.0)) throw CaseError("base_mva must be positive");
  if (c.buses.empty()) throw CaseError("case has no buses");
  if (c.cost_curves.size() != c.generators.size())
    throw CaseError("missing cost curve: " + std::to_string(c.generators.size()) + " generators, " +
                    std::to_string(c.cost_curves.size()) + " cost curves");

  const std::size_t n = c.buses.size();
  c.gen_at_bus.assign(n, -1);
  for (std::size_t g = 0; g < c.generators.size(); ++g) {
    const auto& gen = c.generators[g];
    if (gen.bus >= n) throw CaseError("generator " + std::to_string(g) + " references unknown bus");
    if (c.gen_at_bus[gen.bus] >= 0)
      throw CaseError("more than one generator at bus " + std::to_string(c.buses[gen.bus].id));
    if (gen.p_min > gen.p_max) throw CaseError("generator at bus " + std::to_string(c.buses[gen.bus].id) + ": p_min > p_max");
    if (gen.q_min > gen.q_max) throw CaseError("generator at bus " + std::to_string(c.buses[gen.bus].id) + ": q_min > q_max");
    if (c.cost_curves[g].c2 < 0.0)
      throw CaseError("generator at bus " + std::to_string(c.buses[gen.bus].id) + ": nonconvex cost (c2 < 0)");
    c.gen_at_bus[gen.bus] = static_cast<int>(g);
  }

  std::optional<std::size_t> slack;
  for (std::size_t i = 0; i < n; ++i) {
    auto& bus = c.buses[i];
    if (!(bus.v_min > 0.0) || bus.v_min > bus.v_max)
      throw CaseError("bus " + std::to_string(bus.id) + ": voltage bounds must satisfy 0 < v_min <= v_max");
    if (bus.kind == BusKind::Slack) {
      if (slack) throw CaseError("more than one slack bus");
      slack = i;
      if (c.gen_at_bus[i] < 0) throw CaseError("slack bus " + std::to_string(bus.id) + " has no generator");
    } else {
      bus.kind = c.gen_at_bus[i] >= 0 ? BusKind::PV : BusKind::PQ;
    }
  }
  if (!slack) throw CaseError("no slack bus");
  c.slack = *slack;

  for (const auto& br : c.branches) {
    if (br.from >= n || br.to >= n) throw CaseError("branch references unknown bus");
    if (br.from == br.to) throw CaseError("branch connects bus " + std::to_string(c.buses[br.from].id) + " to itself");
    if (br.series_r * br.series_r + br.series_x * br.series_x <= 0.0)
      throw CaseError("branch " + std::to_string(c.buses[br.from].id) + "-" + std::to_string(c.buses[br.to].id) +
                      " has zero series impedance");
    if (!(br.tap_ratio > 0.0)) throw CaseError("branch tap ratio must be positive");
  }

  c.pv.clear();
  c.pq.clear();
  for (std::size_t i = 0; i < n; ++i) {
    if (c.buses[i].kind == BusKind::PV) c.pv.push_back(i);
    if (c.buses[i].kind == BusKind::PQ) c.pq.push_back(i);
  }
}

namespace detail {

struct MatrixRow {
  std::vector<double> values;
  int line = 0;
};

inline std::string strip_comment(std::string_view line) {
  auto pos = line.find('%');
  return std::string(line.substr(0, pos));
}

inline double parse_number(const std::string& token, int line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(token, &used);
  } catch (const std::exception&) {
    throw CaseError("expected a number, got '" + token + "'", line);
  }
  if (used != token.size()) throw CaseError("expected a number, got '" + token + "'", line);
  return v;
}

// Reads the `mpc.<name> = value;` scalars and `mpc.<name> = [ ... ];` matrices
// of a MATPOWER file. Fields other than those requested are skipped.
struct MatpowerTables {
  std::map<std::string, double> scalars;
  std::map<std::string, std::vector<MatrixRow>> matrices;
};

inline MatpowerTables read_matpower_tables(std::string_view text) {
  MatpowerTables out;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  std::string open_matrix;  // non-empty while inside [ ... ]
  int open_line = 0;

  auto push_row_tokens = [&](const std::string& chunk, int ln) {
    std::istringstream ts(chunk);
    std::string tok;
    MatrixRow row;
    row.line = ln;
    while (ts >> tok) {
      // tolerate MATLAB-style comma separators
      std::size_t start = 0;
      while (start < tok.size()) {
        auto comma = tok.find(',', start);
        auto piece = tok.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!piece.empty()) row.values.push_back(parse_number(piece, ln));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
    }
    if (!row.values.empty()) out.matrices[open_matrix].push_back(std::move(row));
  };

  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = strip_comment(raw);
    if (!open_matrix.empty()) {
      auto close = line.find(']');
      std::string body = line.substr(0, close);
      std::size_t start = 0;
      for (;;) {
        auto semi = body.find(';', start);
        push_row_tokens(body.substr(start, semi == std::string::npos ? std::string::npos : semi - start), line_no);
        if (semi == std::string::npos) break;
        start = semi + 1;
      }
      if (close != std::string::npos) open_matrix.clear();
      continue;
    }
    auto key_pos = line.find("mpc.");
    if (key_pos == std::string::npos) continue;
    auto eq = line.find('=', key_pos);
    if (eq == std::string::npos) continue;
    std::string key = line.substr(key_pos + 4, eq - key_pos - 4);
    while (!key.empty() && std::isspace(static_cast<unsigned char>(key.back()))) key.pop_back();
    std::string rhs = line.substr(eq + 1);
    auto bracket = rhs.find('[');
    if (bracket != std::string::npos) {
      open_matrix = key;
      open_line = line_no;
      out.matrices[key];
      std::string rest = rhs.substr(bracket + 1);
      auto close = rest.find(']');
      std::string body = rest.substr(0, close);
      std::size_t start = 0;
      for (;;) {
        auto semi = body.find(';', start);
        push_row_tokens(body.substr(start, semi == std::string::npos ? std::string::npos : semi - start), line_no);
        if (semi == std::string::npos) break;
        start = semi + 1;
      }
      if (close != std::string::npos) open_matrix.clear();
      continue;
    }
    if (rhs.find('\'') != std::string::npos) continue;  // string field such as version
    auto semi = rhs.find(';');
    std::string value = rhs.substr(0, semi);
    std::istringstream vs(value);
    std::string tok;
    if (vs >> tok) out.scalars[key] = parse_number(tok, line_no);
  }
  if (!open_matrix.empty()) throw CaseError("unterminated matrix mpc." + open_matrix, open_line);
  return out;
}

inline void require_columns(const MatrixRow& row, std::size_t n, const char* table) {
  if (row.values.size() < n)
    throw CaseError(std::string("mpc.") + table + " row has " + std::to_string(row.values.size()) +
                        " columns, need at least " + std::to_string(n),
                    row.line);
}

constexpr double kDegToRad = std::numbers::pi / 180.0;

}  // namespace detail

/// Parses the MATPOWER subset: baseMVA, bus, gen, branch and polynomial gencost
/// tables, columns in MATPOWER manual order. Out-of-service generators and
/// branches are dropped.
inline NetworkCase parse_matpower(std::string_view text, std::string name = "case") {
  using detail::require_columns;
  auto tables = detail::read_matpower_tables(text);

  NetworkCase c;
  c.name = std::move(name);
  auto base = tables.scalars.find("baseMVA");
  if (base == tables.scalars.end()) throw CaseError("missing mpc.baseMVA");
  c.base_mva = base->second;
  if (!(c.base_mva > 0.0)) throw CaseError("mpc.baseMVA must be positive");
  const double base_mva = c.base_mva;

  for (const char* table : {"bus", "gen", "branch"})
    if (!tables.matrices.contains(table)) throw CaseError(std::string("missing mpc.") + table);

  std::map<long, std::size_t> index_of;
  for (const auto& row : tables.matrices["bus"]) {
    require_columns(row, 13, "bus");
    const auto& v = row.values;
    Bus bus;
    bus.id = static_cast<int>(v[0]);
    if (index_of.contains(bus.id)) throw CaseError("duplicate bus id " + std::to_string(bus.id), row.line);
    switch (static_cast<int>(v[1])) {
      case 1: bus.kind = BusKind::PQ; break;
      case 2: bus.kind = BusKind::PV; break;
      case 3: bus.kind = BusKind::Slack; break;
      default: throw CaseError("unsupported bus type " + std::to_string(static_cast<int>(v[1])), row.line);
    }
    bus.p_load = v[2] / base_mva;
    bus.q_load = v[3] / base_mva;
    bus.shunt_g = v[4] / base_mva;
    bus.shunt_b = v[5] / base_mva;
    bus.v_max = v[11];
    bus.v_min = v[12];
    index_of[bus.id] = c.buses.size();
    c.buses.push_back(bus);
  }

  auto lookup = [&](double id, int line) {
    auto it = index_of.find(static_cast<long>(id));
    if (it == index_of.end())
      throw CaseError("reference to unknown bus " + std::to_string(static_cast<long>(id)), line);
    return it->second;
  };

  std::vector<std::size_t> kept_gens;  // original gen row -> kept
  const auto& gen_rows = tables.matrices["gen"];
  for (std::size_t r = 0; r < gen_rows.size(); ++r) {
    const auto& row = gen_rows[r];
    require_columns(row, 10, "gen");
    const auto& v = row.values;
    std::size_t bus = lookup(v[0], row.line);
    if (v[7] <= 0.0) continue;
    Generator g;
    g.bus = bus;
    g.p_setpoint = v[1] / base_mva;
    g.q_max = v[3] / base_mva;
    g.q_min = v[4] / base_mva;
    g.v_setpoint = v[5];
    g.p_max = v[8] / base_mva;
    g.p_min = v[9] / base_mva;
    c.generators.push_back(g);
    kept_gens.push_back(r);
  }

  for (const auto& row : tables.matrices["branch"]) {
    require_columns(row, 11, "branch");
    const auto& v = row.values;
    Branch br;
    br.from = lookup(v[0], row.line);
    br.to = lookup(v[1], row.line);
    if (v[10] <= 0.0) continue;
    br.series_r = v[2];
    br.series_x = v[3];
    br.charging_b = v[4];
    br.s_max = v[5] / base_mva;
    br.tap_ratio = v[8] == 0.0 ? 1.0 : v[8];
    br.phase_shift = v[9] * detail::kDegToRad;
    if (br.series_r * br.series_r + br.series_x * br.series_x <= 0.0)
      throw CaseError("branch with zero series impedance", row.line);
    c.branches.push_back(br);
  }

  const auto cost_it = tables.matrices.find("gencost");
  const std::size_t cost_rows = cost_it == tables.matrices.end() ? 0 : cost_it->second.size();
  for (std::size_t r : kept_gens) {
    if (r >= cost_rows) throw CaseError("missing cost curve for generator " + std::to_string(r + 1));
    const auto& row = cost_it->second[r];
    require_columns(row, 4, "gencost");
    const auto& v = row.values;
    if (static_cast<int>(v[0]) != 2) throw CaseError("only polynomial (model 2) costs are supported", row.line);
    const int n = static_cast<int>(v[3]);
    if (n < 1 || n > 3) throw CaseError("polynomial cost must have 1 to 3 coefficients", row.line);
    require_columns(row, 4 + static_cast<std::size_t>(n), "gencost");
    double coef[3] = {0.0, 0.0, 0.0};  // c2, c1, c0
    for (int k = 0; k < n; ++k) coef[3 - n + k] = v[4 + static_cast<std::size_t>(k)];
    c.cost_curves.push_back({coef[0] * base_mva * base_mva, coef[1] * base_mva, coef[2]});
  }

  index_case(c);
  return c;
}

inline constexpr int kCanonicalCaseVersion = 1;

/// Canonical case document. Values are stored in the same physical units as
/// the MATPOWER tables (MW, MVAr, MVA, degrees, $/MW^2h ...).
inline nlohmann::json to_canonical(const NetworkCase& c) {
  using nlohmann::json;
  const double base = c.base_mva;
  json doc;
  doc["format_version"] = kCanonicalCaseVersion;
  doc["name"] = c.name;
  doc["base_mva"] = base;
  json buses = json::array();
  for (const auto& b : c.buses) {
    buses.push_back({{"id", b.id},
                     {"type", std::string(to_string(b.kind))},
                     {"pd_mw", b.p_load * base},
                     {"qd_mvar", b.q_load * base},
                     {"gs_mw", b.shunt_g * base},
                     {"bs_mvar", b.shunt_b * base},
                     {"vmin_pu", b.v_min},
                     {"vmax_pu", b.v_max}});
  }
  doc["buses"] = std::move(buses);
  json branches = json::array();
  for (const auto& br : c.branches) {
    branches.push_back({{"from", c.buses[br.from].id},
                        {"to", c.buses[br.to].id},
                        {"r_pu", br.series_r},
                        {"x_pu", br.series_x},
                        {"b_pu", br.charging_b},
                        {"rate_mva", br.s_max * base},
                        {"tap", br.tap_ratio},
                        {"shift_deg", br.phase_shift / detail::kDegToRad}});
  }
  doc["branches"] = std::move(branches);
  json gens = json::array();
  for (std::size_t g = 0; g < c.generators.size(); ++g) {
    const auto& gen = c.generators[g];
    const auto& cc = c.cost_curves[g];
    gens.push_back({{"bus", c.buses[gen.bus].id},
                    {"pg_mw", gen.p_setpoint * base},
                    {"pmin_mw", gen.p_min * base},
                    {"pmax_mw", gen.p_max * base},
                    {"qmin_mvar", gen.q_min * base},
                    {"qmax_mvar", gen.q_max * base},
                    {"vg_pu", gen.v_setpoint},
                    {"cost", {{"c2", cc.c2 / (base * base)}, {"c1", cc.c1 / base}, {"c0", cc.c0}}}});
  }
  doc["generators"] = std::move(gens);
  return doc;
}

inline NetworkCase from_canonical(const nlohmann::json& doc) {
  auto field = [](const nlohmann::json& obj, const char* key, const std::string& where) -> const nlohmann::json& {
    auto it = obj.find(key);
    if (it == obj.end()) throw CaseError(where + ": missing field '" + key + "'");
    return *it;
  };
  if (!doc.is_object()) throw CaseError("canonical case must be an object");
  const int version = field(doc, "format_version", "case").get<int>();
  if (version != kCanonicalCaseVersion)
    throw CaseError("unsupported canonical case format_version " + std::to_string(version));

  NetworkCase c;
  c.name = doc.value("name", std::string("case"));
  c.base_mva = field(doc, "base_mva", "case").get<double>();
  if (!(c.base_mva > 0.0)) throw CaseError("base_mva must be positive");
  const double base = c.base_mva;

  std::map<int, std::size_t> index_of;
  for (const auto& b : field(doc, "buses", "case")) {
    Bus bus;
    bus.id = field(b, "id", "bus").get<int>();
    const std::string where = "bus " + std::to_string(bus.id);
    const auto type = field(b, "type", where).get<std::string>();
    if (type == "slack") bus.kind = BusKind::Slack;
    else if (type == "pv") bus.kind = BusKind::PV;
    else if (type == "pq") bus.kind = BusKind::PQ;
    else throw CaseError(where + ": unknown type '" + type + "'");
    bus.p_load = field(b, "pd_mw", where).get<double>() / base;
    bus.q_load = field(b, "qd_mvar", where).get<double>() / base;
    bus.shunt_g = b.value("gs_mw", 0.0) / base;
    bus.shunt_b = b.value("bs_mvar", 0.0) / base;
    bus.v_min = field(b, "vmin_pu", where).get<double>();
    bus.v_max = field(b, "vmax_pu", where).get<double>();
    if (index_of.contains(bus.id)) throw CaseError("duplicate " + where);
    index_of[bus.id] = c.buses.size();
    c.buses.push_back(bus);
  }
  auto lookup = [&](int id) {
    auto it = index_of.find(id);
    if (it == index_of.end()) throw CaseError("reference to unknown bus " + std::to_string(id));
    return it->second;
  };
  for (const auto& b : field(doc, "branches", "case")) {
    Branch br;
    br.from = lookup(field(b, "from", "branch").get<int>());
    br.to = lookup(field(b, "to", "branch").get<int>());
    br.series_r = field(b, "r_pu", "branch").get<double>();
    br.series_x = field(b, "x_pu", "branch").get<double>();
    br.charging_b = b.value("b_pu", 0.0);
    br.s_max = b.value("rate_mva", 0.0) / base;
    br.tap_ratio = b.value("tap", 1.0);
    br.phase_shift = b.value("shift_deg", 0.0) * detail::kDegToRad;
    c.branches.push_back(br);
  }
  for (const auto& g : field(doc, "generators", "case")) {
    Generator gen;
    gen.bus = lookup(field(g, "bus", "generator").get<int>());
    const std::string where = "generator at bus " + std::to_string(c.buses[gen.bus].id);
    gen.p_min = field(g, "pmin_mw", where).get<double>() / base;
    gen.p_max = field(g, "pmax_mw", where).get<double>() / base;
    gen.q_min = field(g, "qmin_mvar", where).get<double>() / base;
    gen.q_max = field(g, "qmax_mvar", where).get<double>() / base;
    gen.p_setpoint = g.value("pg_mw", 0.0) / base;
    gen.v_setpoint = g.value("vg_pu", 1.0);
    auto cost = g.find("cost");
    if (cost == g.end()) throw CaseError("missing cost curve for " + where);
    c.cost_curves.push_back({cost->value("c2", 0.0) * base * base, cost->value("c1", 0.0) * base, cost->value("c0", 0.0)});
    c.generators.push_back(gen);
  }
  index_case(c);
  return c;
}

inline NetworkCase parse_canonical(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // byte offset -> line number
    std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    int line = 1;
    for (std::size_t i = 0; i < upto; ++i)
      if (text[i] == '\n') ++line;
    throw CaseError(std::string("syntax error: ") + e.what(), line);
  }
  return from_canonical(doc);
}

/// Dispatches on content: a document starting with '{' is canonical, anything
/// else is read as MATPOWER text.
inline NetworkCase parse_case(std::string_view text, std::string name = "case") {
  auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string_view::npos && text[first] == '{') {
    auto c = parse_canonical(text);
    if (c.name == "case") c.name = std::move(name);
    return c;
  }
  return parse_matpower(text, std::move(name));
}

/// Loads a case from disk. A path without extension is resolved to
/// `<path>.json` first, then `<path>.m`.
inline NetworkCase load_case(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  fs::path resolved = path;
  if (!fs::exists(resolved) && !path.has_extension()) {
    for (const char* ext : {".json", ".m"}) {
      fs::path p = path;
      p += ext;
      if (fs::exists(p)) {
        resolved = p;
        break;
      }
    }
  }
  std::ifstream in(resolved, std::ios::binary);
  if (!in) throw CaseError("cannot open case file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_case(ss.str(), resolved.stem().string());
}

/// Branch pi-model two-port admittances, MATPOWER convention.
struct BranchAdmittance {
  Complex ff, ft, tf, tt;
};

inline BranchAdmittance branch_admittance(const Branch& br) {
  const Complex ys = 1.0 / Complex(br.series_r, br.series_x);
  const Complex tap = std::polar(br.tap_ratio, br.phase_shift);
  const Complex ytt = ys + Complex(0.0, br.charging_b / 2.0);
  return {ytt / (br.tap_ratio * br.tap_ratio), -ys / std::conj(tap), -ys / tap, ytt};
}

/// Bus admittance matrix plus the per-branch two-port blocks it was built from.
struct AdmittanceMatrix {
  Eigen::SparseMatrix<Complex> y;  // column-major, N x N
  std::vector<BranchAdmittance> branch;

  std::size_t dimension() const noexcept { return static_cast<std::size_t>(y.rows()); }
  Complex operator()(std::size_t i, std::size_t k) const {
    return y.coeff(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
  }
};

inline AdmittanceMatrix build_admittance(const NetworkCase& c) {
  const auto n = static_cast<Eigen::Index>(c.num_buses());
  AdmittanceMatrix out;
  out.branch.reserve(c.branches.size());
  std::vector<Eigen::Triplet<Complex>> trips;
  trips.reserve(4 * c.branches.size() + c.buses.size());
  for (const auto& br : c.branches) {
    auto a = branch_admittance(br);
    const auto f = static_cast<Eigen::Index>(br.from);
    const auto t = static_cast<Eigen::Index>(br.to);
    trips.emplace_back(f, f, a.ff);
    trips.emplace_back(f, t, a.ft);
    trips.emplace_back(t, f, a.tf);
    trips.emplace_back(t, t, a.tt);
    out.branch.push_back(a);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& b = c.buses[static_cast<std::size_t>(i)];
    trips.emplace_back(i, i, Complex(b.shunt_g, b.shunt_b));
  }
  out.y.resize(n, n);
  out.y.setFromTriplets(trips.begin(), trips.end());
  out.y.makeCompressed();
  return out;
}

}  // namespace deepsolve
