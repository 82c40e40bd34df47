#pragma once

// Frozen image autoencoder for the sketch path: PCA over rendered training
// images with whitened codes, so every latent coordinate has unit variance
// over the training set and the zero code decodes to the mean image.
// The ground-truth feature extractor composes it with a ridge map from
// codes to the world's visual features.

#include "mindcap/recon/ridge.hpp"

#include <Eigen/Eigenvalues>

namespace mindcap::recon {

class PcaAutoencoder {
 public:
  PcaAutoencoder() = default;

  // images: one flattened image per row.
  static PcaAutoencoder fit(const MatD& images, int latent_dim) {
    const Eigen::Index n = images.rows();
    if (latent_dim < 1 || latent_dim >= n) throw std::invalid_argument("autoencoder: latent_dim must be in [1, n)");
    PcaAutoencoder ae;
    ae.mean_ = images.colwise().mean();
    const MatD xc = images.rowwise() - ae.mean_;
    // Eigenvectors of the n x n Gram matrix give the principal axes.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(xc * xc.transpose()));
    if (es.info() != Eigen::Success) throw std::runtime_error("autoencoder: eigendecomposition failed");
    ae.components_.resize(latent_dim, images.cols());
    ae.scales_.resize(latent_dim);
    for (int k = 0; k < latent_dim; ++k) {
      const Eigen::Index idx = n - 1 - k;
      const double ev = es.eigenvalues()(idx);
      if (ev <= 1e-12) throw std::runtime_error("autoencoder: latent_dim exceeds the data rank");
      Eigen::RowVectorXd axis = (xc.transpose() * es.eigenvectors().col(idx)).transpose() / std::sqrt(ev);
      Eigen::Index arg = 0;
      axis.cwiseAbs().maxCoeff(&arg);
      if (axis(arg) < 0) axis = -axis;
      ae.components_.row(k) = axis;
      ae.scales_(k) = std::sqrt(ev / static_cast<double>(n));
    }
    return ae;
  }

  int latent_dim() const { return static_cast<int>(components_.rows()); }
  int pixel_count() const { return static_cast<int>(components_.cols()); }

  Vec encode(const Vec& image) const {
    if (image.size() != pixel_count()) throw std::invalid_argument("autoencoder: image size mismatch");
    return (components_ * (image - mean_.transpose())).cwiseQuotient(scales_);
  }

  Vec decode(const Vec& z) const {
    if (z.size() != latent_dim()) throw std::invalid_argument("autoencoder: latent dimension mismatch");
    return mean_.transpose() + components_.transpose() * z.cwiseProduct(scales_);
  }

  MatD encode_rows(const MatD& images) const {
    MatD out(images.rows(), latent_dim());
    for (Eigen::Index i = 0; i < images.rows(); ++i) out.row(i) = encode(images.row(i).transpose()).transpose();
    return out;
  }

  Checkpoint to_checkpoint(const json& metadata = json::object()) const {
    Checkpoint ck;
    ck.kind = "autoencoder";
    ck.config = {{"latent_dim", latent_dim()}, {"pixels", pixel_count()}};
    ck.config_hash = config_hash(ck.config);
    ck.metadata = metadata;
    ck.tensors["mean"] = mean_;
    ck.tensors["components"] = components_;
    ck.tensors["scales"] = scales_.transpose();
    return ck;
  }

  static PcaAutoencoder from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "autoencoder") throw std::runtime_error("expected an autoencoder checkpoint, got '" + ck.kind + "'");
    if (config_hash(ck.config) != ck.config_hash) throw std::runtime_error("autoencoder checkpoint config hash mismatch");
    PcaAutoencoder ae;
    ae.mean_ = ck.tensors.at("mean").row(0);
    ae.components_ = ck.tensors.at("components");
    ae.scales_ = ck.tensors.at("scales").row(0).transpose();
    return ae;
  }

 private:
  Eigen::RowVectorXd mean_;
  MatD components_;  // latent_dim x pixels, orthonormal rows
  Vec scales_;       // per-component standard deviation
};

// image -> autoencoder code -> ridge -> ground-truth visual feature.
class GtFeatureExtractor {
 public:
  GtFeatureExtractor(const PcaAutoencoder& ae, RidgeMap map) : ae_(&ae), map_(std::move(map)) {}

  static GtFeatureExtractor fit(const PcaAutoencoder& ae, const MatD& images, const MatD& features) {
    return GtFeatureExtractor(ae, fit_ridge_cv(ae.encode_rows(images), features).map);
  }

  Vec operator()(const Vec& image) const { return map_.predict_one(ae_->encode(image)); }
  const RidgeMap& map() const { return map_; }

 private:
  const PcaAutoencoder* ae_;
  RidgeMap map_;
};

}  // namespace mindcap::recon
