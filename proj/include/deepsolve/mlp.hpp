#pragma once

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace deepsolve {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Layer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;
};

/// Fully connected network: rectifier on every hidden layer, logistic sigmoid
/// on the output. Parameter access through mutable_layer() bumps the version
/// so traces taken earlier are rejected by backward().
class MlpModel {
 public:
  MlpModel() = default;
  explicit MlpModel(std::vector<Layer> layers) : layers_(std::move(layers)), id_(next_id()) { validate(); }

  MlpModel(const MlpModel& o) : layers_(o.layers_), id_(next_id()) {}
  MlpModel& operator=(const MlpModel& o) {
    if (this != &o) {
      layers_ = o.layers_;
      ++version_;
    }
    return *this;
  }
  MlpModel(MlpModel&&) noexcept = default;
  MlpModel& operator=(MlpModel&&) noexcept = default;

  std::size_t num_layers() const noexcept { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  Layer& mutable_layer(std::size_t i) {
    ++version_;
    return layers_.at(i);
  }

  Eigen::Index input_dim() const { return layers_.empty() ? 0 : layers_.front().w.cols(); }
  Eigen::Index output_dim() const { return layers_.empty() ? 0 : layers_.back().w.rows(); }

  std::vector<Eigen::Index> sizes() const {
    std::vector<Eigen::Index> s;
    if (layers_.empty()) return s;
    s.push_back(input_dim());
    for (const auto& l : layers_) s.push_back(l.w.rows());
    return s;
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.w.size() + l.b.size());
    return n;
  }

  std::uint64_t id() const noexcept { return id_; }
  std::uint64_t version() const noexcept { return version_; }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  void validate() const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].b.size() != layers_[i].w.rows()) throw ModelError("bias size does not match layer " + std::to_string(i));
      if (i > 0 && layers_[i].w.cols() != layers_[i - 1].w.rows())
        throw ModelError("layer " + std::to_string(i) + " input does not match previous output");
    }
  }

  std::vector<Layer> layers_;
  std::uint64_t id_ = 0;
  std::uint64_t version_ = 0;
};

/// He-uniform weights on rectifier layers, Glorot-uniform on the sigmoid
/// output layer, zero biases.
inline MlpModel init_model(const std::vector<Eigen::Index>& sizes, std::uint64_t seed) {
  if (sizes.size() < 2) throw std::invalid_argument("init_model: need at least input and output sizes");
  for (auto s : sizes)
    if (s <= 0) throw std::invalid_argument("init_model: layer sizes must be positive");
  std::mt19937_64 rng(seed);
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const auto in = sizes[i];
    const auto out = sizes[i + 1];
    const bool output = i + 2 == sizes.size();
    const double limit = output ? std::sqrt(6.0 / static_cast<double>(in + out)) : std::sqrt(6.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> unif(-limit, limit);
    Layer l{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < in; ++c) l.w(r, c) = unif(rng);
    layers.push_back(std::move(l));
  }
  return MlpModel(std::move(layers));
}

/// Logistic function kept strictly inside (0, 1) in floating point.
inline double sigmoid(double z) {
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return std::min(std::max(s, lo), hi);
}

/// Column-per-sample cache of one forward pass.
struct ForwardTrace {
  std::uint64_t model_id = 0;
  std::uint64_t model_version = 0;
  std::vector<Eigen::MatrixXd> pre;   // z_i, one per layer
  std::vector<Eigen::MatrixXd> post;  // a_0 = input, a_i = act(z_i)

  const Eigen::MatrixXd& output() const { return post.back(); }
};

/// Inputs are columns (input_dim x batch).
inline Eigen::MatrixXd forward(const MlpModel& m, const Eigen::MatrixXd& x, ForwardTrace* trace = nullptr) {
  if (m.num_layers() == 0) throw ModelError("forward on an empty model");
  if (x.rows() != m.input_dim())
    throw std::invalid_argument("forward: input has " + std::to_string(x.rows()) + " rows, model expects " +
                                std::to_string(m.input_dim()));
  if (trace) {
    trace->model_id = m.id();
    trace->model_version = m.version();
    trace->pre.clear();
    trace->post.assign(1, x);
  }
  Eigen::MatrixXd a = x;
  for (std::size_t i = 0; i < m.num_layers(); ++i) {
    const auto& l = m.layer(i);
    Eigen::MatrixXd z = (l.w * a).colwise() + l.b;
    const bool output = i + 1 == m.num_layers();
    a = output ? z.unaryExpr([](double v) { return sigmoid(v); }).eval() : z.cwiseMax(0.0).eval();
    if (trace) {
      trace->pre.push_back(std::move(z));
      trace->post.push_back(a);
    }
  }
  return a;
}

inline Eigen::VectorXd forward(const MlpModel& m, const Eigen::VectorXd& x) {
  return forward(m, Eigen::MatrixXd(x), nullptr).col(0);
}

using Gradients = std::vector<Layer>;

inline Gradients zero_gradients(const MlpModel& m) {
  Gradients g;
  for (std::size_t i = 0; i < m.num_layers(); ++i)
    g.push_back({Eigen::MatrixXd::Zero(m.layer(i).w.rows(), m.layer(i).w.cols()), Eigen::VectorXd::Zero(m.layer(i).b.size())});
  return g;
}

/// Parameter gradients of sum_j dL/ds_j . s_j over the batch columns. Callers
/// wanting a batch mean scale dL_ds beforehand.
inline Gradients backward(const MlpModel& m, const ForwardTrace& t, const Eigen::MatrixXd& dl_ds) {
  if (t.model_id != m.id() || t.model_version != m.version())
    throw ModelError("backward: trace was produced by a different model or older parameters");
  const auto& s = t.output();
  if (dl_ds.rows() != s.rows() || dl_ds.cols() != s.cols()) throw std::invalid_argument("backward: gradient shape mismatch");
  Gradients g(m.num_layers());
  Eigen::MatrixXd delta = dl_ds.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()));
  for (std::size_t k = m.num_layers(); k-- > 0;) {
    g[k].w = delta * t.post[k].transpose();
    g[k].b = delta.rowwise().sum();
    if (k == 0) break;
    delta = (m.layer(k).w.transpose() * delta).cwiseProduct((t.pre[k - 1].array() > 0.0).cast<double>().matrix());
  }
  return g;
}

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  Gradients m;
  Gradients v;

  static AdamState for_model(const MlpModel& model, double lr = 1e-3) {
    AdamState s;
    s.lr = lr;
    s.m = zero_gradients(model);
    s.v = zero_gradients(model);
    return s;
  }
};

inline void adam_step(MlpModel& model, AdamState& st, const Gradients& g) {
  if (g.size() != model.num_layers() || st.m.size() != g.size()) throw std::invalid_argument("adam_step: shape mismatch");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  auto update = [&](auto& p, auto& m, auto& v, const auto& grad) {
    if (grad.size() != p.size()) throw std::invalid_argument("adam_step: shape mismatch");
    m = st.beta1 * m + (1.0 - st.beta1) * grad;
    v = st.beta2 * v + (1.0 - st.beta2) * grad.cwiseProduct(grad);
    p.array() -= st.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + st.eps);
  };
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto& l = model.mutable_layer(i);
    update(l.w, st.m[i].w, st.v[i].w, g[i].w);
    update(l.b, st.m[i].b, st.v[i].b, g[i].b);
  }
}

// Checkpoint file: one JSON header line, then one line per parameter array
// ("w<k>" row-major, "b<k>") holding comma-separated %.17g values.

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  MlpModel model;
  nlohmann::json meta;  // free-form: case, seed, spec, normalizer, dependent_mean
};

inline void write_checkpoint(std::ostream& out, const MlpModel& m, const nlohmann::json& meta) {
  nlohmann::json header = {{"format_version", kCheckpointFormatVersion},
                           {"sizes", m.sizes()},
                           {"hidden_activation", "relu"},
                           {"output_activation", "sigmoid"},
                           {"meta", meta}};
  out << header.dump() << '\n';
  auto put = [&](const char* tag, std::size_t k, const double* data, Eigen::Index n) {
    std::string line = tag + std::to_string(k);
    char buf[40];
    for (Eigen::Index i = 0; i < n; ++i) {
      const int len = std::snprintf(buf, sizeof buf, "%.17g", data[i]);
      line.push_back(i == 0 ? ' ' : ',');
      line.append(buf, static_cast<std::size_t>(len));
    }
    out << line << '\n';
  };
  for (std::size_t k = 0; k < m.num_layers(); ++k) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = m.layer(k).w;
    put("w", k, w.data(), w.size());
    put("b", k, m.layer(k).b.data(), m.layer(k).b.size());
  }
}

inline Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ModelError("checkpoint is empty");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("checkpoint header: ") + e.what());
  }
  if (header.value("format_version", 0) != kCheckpointFormatVersion) throw ModelError("unsupported checkpoint format_version");
  if (header.value("hidden_activation", "") != "relu" || header.value("output_activation", "") != "sigmoid")
    throw ModelError("checkpoint uses unsupported activations");
  const auto sizes = header.at("sizes").get<std::vector<Eigen::Index>>();
  if (sizes.size() < 2) throw ModelError("checkpoint has fewer than two layer sizes");

  auto read_array = [&](const std::string& tag, Eigen::Index n) {
    if (!std::getline(in, line)) throw ModelError("checkpoint truncated before " + tag);
    if (line.rfind(tag + ' ', 0) != 0) throw ModelError("checkpoint: expected array " + tag);
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(n));
    const char* p = line.data() + tag.size() + 1;
    const char* end = line.data() + line.size();
    while (p < end) {
      double x = 0.0;
      auto r = std::from_chars(p, end, x);
      if (r.ec != std::errc()) throw ModelError("checkpoint: malformed number in " + tag);
      v.push_back(x);
      p = r.ptr < end && *r.ptr == ',' ? r.ptr + 1 : r.ptr;
      if (p < end && p == r.ptr) throw ModelError("checkpoint: unexpected character in " + tag);
    }
    if (static_cast<Eigen::Index>(v.size()) != n) throw ModelError("checkpoint: array " + tag + " has wrong length");
    return v;
  };

  std::vector<Layer> layers;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    const auto in_dim = sizes[k];
    const auto out_dim = sizes[k + 1];
    auto w = read_array("w" + std::to_string(k), in_dim * out_dim);
    auto b = read_array("b" + std::to_string(k), out_dim);
    Layer l;
    l.w = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(w.data(), out_dim, in_dim);
    l.b = Eigen::Map<Eigen::VectorXd>(b.data(), out_dim);
    layers.push_back(std::move(l));
  }
  return {MlpModel(std::move(layers)), header.value("meta", nlohmann::json::object())};
}

inline void save_checkpoint(const std::filesystem::path& path, const MlpModel& m, const nlohmann::json& meta = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot write " + path.string());
  write_checkpoint(out, m, meta);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace deepsolve
