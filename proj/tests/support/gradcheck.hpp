#pragma once

// Central finite-difference check of MlpModel::backward on random small
// networks, shared by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <deepsolve/mlp.hpp>

namespace gradcheck {

struct Result {
  double worst_relative = 0.0;
  std::size_t parameters = 0;
  std::string description;
};

// Scalar loss sum_ij g_ij s_ij + 0.5 ||s||^2 over a batch.
inline double loss(const deepsolve::MlpModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& g) {
  const auto s = deepsolve::forward(m, x);
  return (g.array() * s.array()).sum() + 0.5 * s.squaredNorm();
}

inline bool near_kink(const deepsolve::MlpModel& m, const Eigen::MatrixXd& x, double margin) {
  deepsolve::ForwardTrace t;
  deepsolve::forward(m, x, &t);
  for (std::size_t k = 0; k + 1 < t.pre.size(); ++k)
    if (t.pre[k].cwiseAbs().minCoeff() < margin) return true;
  return false;
}

/// Relative error |a - b| / max(|a|, |b|, 1e-3) per parameter; the floor keeps
/// parameters with vanishing gradient from turning roundoff into a failure.
inline Result random_network_check(std::mt19937_64& rng, double h = 1e-6) {
  std::uniform_int_distribution<int> width(1, 6), depth(1, 3), batch(1, 4);
  std::vector<Eigen::Index> sizes{width(rng)};
  const int hidden = depth(rng);
  for (int k = 0; k < hidden; ++k) sizes.push_back(width(rng));
  sizes.push_back(width(rng));
  auto model = deepsolve::init_model(sizes, rng());
  std::normal_distribution<double> normal(0.0, 0.5);
  for (std::size_t k = 0; k < model.num_layers(); ++k) {
    auto& l = model.mutable_layer(k);
    for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = normal(rng);
  }
  const Eigen::Index n = batch(rng);
  Eigen::MatrixXd x(sizes.front(), n), g(sizes.back(), n);
  do {
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng) * 2.0;
  } while (near_kink(model, x, 1e-3));
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);

  deepsolve::ForwardTrace t;
  const auto s = deepsolve::forward(model, x, &t);
  const Eigen::MatrixXd upstream = g + s;  // d/ds of the loss above
  const auto grads = deepsolve::backward(model, t, upstream);

  Result r;
  for (auto sz : sizes) r.description += std::to_string(sz) + " ";
  auto probe = [&](double& p, double analytic) {
    const double keep = p;
    p = keep + h;
    const double up = loss(model, x, g);
    p = keep - h;
    const double down = loss(model, x, g);
    p = keep;
    const double fd = (up - down) / (2.0 * h);
    const double rel = std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-3});
    r.worst_relative = std::max(r.worst_relative, rel);
    ++r.parameters;
  };
  for (std::size_t k = 0; k < model.num_layers(); ++k) {
    auto& l = model.mutable_layer(k);
    for (Eigen::Index i = 0; i < l.w.size(); ++i) probe(l.w.data()[i], grads[k].w.data()[i]);
    for (Eigen::Index i = 0; i < l.b.size(); ++i) probe(l.b.data()[i], grads[k].b.data()[i]);
  }
  return r;
}

}  // namespace gradcheck
