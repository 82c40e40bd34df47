#pragma once

// Central finite-difference reference for analytic gradients. Lives in test
// code only; it evaluates the loss closure and never calls ag::backward.

#include "mindcap/core/nn.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace mindcap::gradcheck {

struct GradSample {
  std::string name;
  Eigen::Index row = 0, col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

// Relative error with a floor on the denominator: gradients smaller than the
// floor are compared absolutely against it.
inline double relative_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Computes analytic gradients once, then checks a random fraction of scalar
// parameters against the five-point central stencil of step h (truncation
// error O(h^4), so a fairly large h keeps roundoff small).
inline std::vector<GradSample> check_gradients(nn::ParamSet& params, const std::function<ag::Var()>& loss_fn,
                                               double fraction, std::uint64_t seed, double h = 1e-4,
                                               size_t min_samples = 20) {
  params.zero_grad();
  ag::Var loss = loss_fn();
  ag::backward(loss);
  std::vector<std::pair<size_t, Eigen::Index>> all;
  for (size_t i = 0; i < params.params().size(); ++i)
    if (params.params()[i].var.requires_grad())
      for (Eigen::Index k = 0; k < params.params()[i].var.value().size(); ++k) all.emplace_back(i, k);
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  const size_t n = std::min(all.size(), std::max(min_samples, static_cast<size_t>(std::ceil(fraction * all.size()))));
  std::vector<GradSample> out;
  for (size_t s = 0; s < n; ++s) {
    auto [pi, k] = all[s];
    auto& var = params.params()[pi].var;
    const Eigen::Index cols = var.value().cols();
    const double analytic = var.grad().size() ? var.grad().data()[k] : 0.0;
    double& x = var.mutable_value().data()[k];
    const double orig = x;
    auto at = [&](double dx) {
      x = orig + dx;
      return loss_fn().item();
    };
    const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
    x = orig;
    out.push_back({params.params()[pi].name, k / cols, k % cols, analytic, numeric, relative_error(analytic, numeric)});
  }
  params.zero_grad();
  return out;
}

inline double max_rel_error(const std::vector<GradSample>& s) {
  double m = 0;
  for (const auto& g : s) m = std::max(m, g.rel_error);
  return m;
}

}  // namespace mindcap::gradcheck
