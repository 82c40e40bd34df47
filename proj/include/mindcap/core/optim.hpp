#pragma once

#include "mindcap/core/nn.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace mindcap::optim {

// Linear warmup to the base rate, then cosine decay to zero.
struct WarmupCosine {
  double base_lr = 1e-3;
  long warmup_steps = 0;
  long total_steps = 1;

  double at(long step) const {
    if (warmup_steps > 0 && step < warmup_steps)
      return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    const long span = std::max(1L, total_steps - warmup_steps);
    const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
  }
};

// Adam with decoupled weight decay. Parameters whose requires_grad flag is
// off, or whose gradient is empty, are left untouched.
class AdamW {
 public:
  AdamW(nn::ParamSet& params, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8)
      : params_(params), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_.params()) {
      m_.push_back(nn::Mat::Zero(p.var.rows(), p.var.cols()));
      v_.push_back(nn::Mat::Zero(p.var.rows(), p.var.cols()));
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    auto& ps = params_.params();
    for (size_t i = 0; i < ps.size(); ++i) {
      auto& var = ps[i].var;
      if (!var.requires_grad() || var.grad().size() == 0) continue;
      const nn::Mat& g = var.grad();
      if (!g.allFinite()) throw std::runtime_error("non-finite gradient in " + ps[i].name);
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
      if (lr == 0.0) continue;
      nn::Mat update = (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + eps_);
      if (ps[i].decay) update += wd_ * var.value();
      var.mutable_value() -= lr * update;
    }
  }

  long steps() const { return t_; }

 private:
  nn::ParamSet& params_;
  double wd_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<nn::Mat> m_, v_;
};

}  // namespace mindcap::optim
