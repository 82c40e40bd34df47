#pragma once

// Closed-form ridge regression on standardised inputs with an unpenalised
// bias. The solve goes through an eigendecomposition of the centred Gram
// matrix so a whole lambda grid costs one factorisation per fold.

#include "mindcap/core/checkpoint.hpp"
#include "mindcap/core/log.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

namespace mindcap::recon {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

class SingularSystemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Pooled coefficient of determination over every target entry.
inline double r2_score(const MatD& pred, const MatD& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) throw std::invalid_argument("r2_score: shape mismatch");
  const Eigen::RowVectorXd mean = truth.colwise().mean();
  const double ss_tot = (truth.rowwise() - mean).squaredNorm();
  const double ss_res = (truth - pred).squaredNorm();
  if (ss_tot == 0.0) throw std::invalid_argument("r2_score: constant targets");
  return 1.0 - ss_res / ss_tot;
}

struct RidgeMap {
  MatD weight;  // (d_in + 1) x d_out, last row is the bias
  double lambda = 0.0;
  Eigen::RowVectorXd x_mean, x_scale;

  int input_dim() const { return static_cast<int>(x_mean.size()); }
  int output_dim() const { return static_cast<int>(weight.cols()); }

  MatD predict(const MatD& x) const {
    if (x.cols() != x_mean.size()) throw std::invalid_argument("ridge: input dimension mismatch");
    const MatD xs = (x.rowwise() - x_mean).array().rowwise() / x_scale.array();
    MatD out = xs * weight.topRows(weight.rows() - 1);
    out.rowwise() += weight.row(weight.rows() - 1);
    return out;
  }

  Vec predict_one(const Vec& x) const { return predict(MatD(x.transpose())).row(0).transpose(); }

  Checkpoint to_checkpoint(const json& metadata = json::object()) const {
    Checkpoint ck;
    ck.kind = "ridge";
    ck.config = {{"lambda", lambda}, {"input_dim", input_dim()}, {"output_dim", output_dim()}};
    ck.config_hash = config_hash(ck.config);
    ck.metadata = metadata;
    ck.tensors["weight"] = weight;
    ck.tensors["x_mean"] = x_mean;
    ck.tensors["x_scale"] = x_scale;
    return ck;
  }

  static RidgeMap from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "ridge") throw std::runtime_error("expected a ridge checkpoint, got '" + ck.kind + "'");
    if (config_hash(ck.config) != ck.config_hash) throw std::runtime_error("ridge checkpoint config hash mismatch");
    RidgeMap m;
    m.lambda = ck.config.at("lambda");
    m.weight = ck.tensors.at("weight");
    m.x_mean = ck.tensors.at("x_mean").row(0);
    m.x_scale = ck.tensors.at("x_scale").row(0);
    return m;
  }
};

namespace detail {

// Centred, standardised design and its Gram eigendecomposition.
struct RidgeSystem {
  Eigen::RowVectorXd x_mean, x_scale, z_mean;
  MatD xs;
  Eigen::MatrixXd eigvecs;
  Vec eigvals;
  Eigen::MatrixXd xtz;  // V^T Xs^T Zc

  RidgeSystem(const MatD& x, const MatD& z) {
    if (x.rows() != z.rows()) throw std::invalid_argument("fit_ridge: row counts differ");
    if (x.rows() < 2) throw std::invalid_argument("fit_ridge: need at least two rows");
    x_mean = x.colwise().mean();
    const MatD xc = x.rowwise() - x_mean;
    x_scale = (xc.colwise().squaredNorm() / static_cast<double>(x.rows())).cwiseSqrt();
    for (Eigen::Index j = 0; j < x_scale.size(); ++j)
      if (x_scale(j) == 0.0) x_scale(j) = 1.0;
    xs = xc.array().rowwise() / x_scale.array();
    z_mean = z.colwise().mean();
    const MatD zc = z.rowwise() - z_mean;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(xs.transpose() * xs));
    if (es.info() != Eigen::Success) throw std::runtime_error("fit_ridge: eigendecomposition failed");
    eigvecs = es.eigenvectors();
    eigvals = es.eigenvalues().cwiseMax(0.0);
    xtz = eigvecs.transpose() * (xs.transpose() * zc);
  }

  RidgeMap solve(double lambda) const {
    if (lambda < 0) throw std::invalid_argument("fit_ridge: lambda must be non-negative");
    const double top = eigvals.maxCoeff();
    if (lambda == 0.0 && (top == 0.0 || eigvals.minCoeff() <= top * 1e-12))
      throw SingularSystemError("fit_ridge: X^T X is singular and lambda = 0");
    Vec inv(eigvals.size());
    for (Eigen::Index i = 0; i < inv.size(); ++i) inv(i) = 1.0 / (eigvals(i) + lambda);
    const Eigen::MatrixXd w = eigvecs * (inv.asDiagonal() * xtz);
    RidgeMap m;
    m.lambda = lambda;
    m.x_mean = x_mean;
    m.x_scale = x_scale;
    m.weight.resize(w.rows() + 1, w.cols());
    m.weight.topRows(w.rows()) = w;
    m.weight.row(w.rows()) = z_mean;
    if (!m.weight.allFinite()) throw std::runtime_error("fit_ridge: non-finite weights");
    return m;
  }
};

}  // namespace detail

inline RidgeMap fit_ridge(const MatD& x, const MatD& z, double lambda) { return detail::RidgeSystem(x, z).solve(lambda); }

inline const std::vector<double>& default_lambda_grid() {
  static const std::vector<double> g{1e0, 1e1, 1e2, 1e3, 1e4, 1e5};
  return g;
}

struct RidgeSelection {
  RidgeMap map;
  std::map<double, double> cv_r2;  // lambda -> mean validation R^2
};

// Chooses lambda by k-fold cross-validated R^2 and refits on all rows.
// Rows sharing a group id (e.g. repeated trials of one stimulus) stay in
// the same fold; without groups each row is its own group. Folds are
// assigned round-robin over groups in order of first appearance.
inline RidgeSelection fit_ridge_cv(const MatD& x, const MatD& z, const std::vector<int>& groups = {},
                                   const std::vector<double>& grid = default_lambda_grid(), int folds = 5) {
  if (!groups.empty() && groups.size() != static_cast<size_t>(x.rows()))
    throw std::invalid_argument("fit_ridge_cv: one group id per row required");
  std::map<int, int> group_fold;
  std::vector<int> fold_of(static_cast<size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int g = groups.empty() ? static_cast<int>(i) : groups[static_cast<size_t>(i)];
    auto it = group_fold.find(g);
    if (it == group_fold.end()) it = group_fold.emplace(g, static_cast<int>(group_fold.size()) % folds).first;
    fold_of[static_cast<size_t>(i)] = it->second;
  }
  if (static_cast<int>(group_fold.size()) < folds) throw std::invalid_argument("fit_ridge_cv: fewer groups than folds");

  RidgeSelection sel;
  for (double l : grid) sel.cv_r2[l] = 0.0;
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> tr, va;
    for (Eigen::Index i = 0; i < x.rows(); ++i) (fold_of[static_cast<size_t>(i)] == f ? va : tr).push_back(i);
    const MatD xtr = x(tr, Eigen::all), ztr = z(tr, Eigen::all), xva = x(va, Eigen::all), zva = z(va, Eigen::all);
    const detail::RidgeSystem sys(xtr, ztr);
    for (double l : grid) sel.cv_r2[l] += r2_score(sys.solve(l).predict(xva), zva) / folds;
  }
  double best = grid.front();
  for (double l : grid)
    if (sel.cv_r2[l] > sel.cv_r2[best]) best = l;
  log::info("ridge: lambda ", best, " selected (cv R^2 ", sel.cv_r2[best], ")");
  sel.map = fit_ridge(x, z, best);
  return sel;
}

}  // namespace mindcap::recon
