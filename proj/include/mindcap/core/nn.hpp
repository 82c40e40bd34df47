#pragma once

// Building blocks shared by the brain encoder, the querying transformer, the
// toy language model and the diffusion denoiser.

#include "mindcap/core/autograd.hpp"
#include "mindcap/core/random.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mindcap::nn {

using ag::Mat;
using ag::Var;

struct Param {
  std::string name;
  Var var;
  bool decay = true;  // weight decay applies (matrices, not biases or norms)
};

// Named, ordered parameter collection. Order is registration order and is
// stable, which keeps optimiser state and serialisation deterministic.
class ParamSet {
 public:
  Var add(const std::string& name, Mat init, bool decay) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter: " + name);
    index_[name] = params_.size();
    params_.push_back({name, ag::leaf(std::move(init), true), decay});
    return params_.back().var;
  }

  // Registers the other set's leaves (shared, not copied) under a prefix.
  void extend(const ParamSet& other, const std::string& prefix = "") {
    for (const auto& p : other.params_) {
      const std::string name = prefix + p.name;
      if (index_.count(name)) throw std::logic_error("duplicate parameter: " + name);
      index_[name] = params_.size();
      params_.push_back({name, p.var, p.decay});
    }
  }

  const std::vector<Param>& params() const { return params_; }
  std::vector<Param>& params() { return params_; }

  Var get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second].var;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += static_cast<size_t>(p.var.value().size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  void set_trainable(bool on) {
    for (auto& p : params_) p.var.set_requires_grad(on);
  }

  std::map<std::string, Mat> state() const {
    std::map<std::string, Mat> out;
    for (const auto& p : params_) out[p.name] = p.var.value();
    return out;
  }

  // Copies matching tensors in; every registered parameter must be present
  // with the same shape.
  void load_state(const std::map<std::string, Mat>& state, const std::string& prefix = "") {
    for (auto& p : params_) {
      auto it = state.find(prefix + p.name);
      if (it == state.end()) throw std::runtime_error("checkpoint is missing tensor " + prefix + p.name);
      if (it->second.rows() != p.var.rows() || it->second.cols() != p.var.cols())
        throw std::runtime_error("checkpoint tensor " + prefix + p.name + " has shape " +
                                 std::to_string(it->second.rows()) + "x" +
                                 std::to_string(it->second.cols()) + ", expected " +
                                 std::to_string(p.var.rows()) + "x" + std::to_string(p.var.cols()));
      p.var.mutable_value() = it->second;
    }
  }

 private:
  std::vector<Param> params_;
  std::map<std::string, size_t> index_;
};

inline Mat xavier(Rng& rng, Eigen::Index in, Eigen::Index out) {
  const double s = std::sqrt(2.0 / static_cast<double>(in + out));
  return normal_matrix<Mat>(rng, in, out, s);
}

struct Linear {
  Var weight;  // in x out
  Var bias;    // 1 x out

  Linear() = default;
  Linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng, bool with_bias = true) {
    weight = ps.add(name + ".weight", xavier(rng, in, out), true);
    if (with_bias) bias = ps.add(name + ".bias", Mat::Zero(1, out), false);
  }

  Var operator()(const Var& x) const {
    Var y = ag::matmul(x, weight);
    return bias ? ag::add_row(y, bias) : y;
  }
};

struct LayerNorm {
  Var gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamSet& ps, const std::string& name, int dim) {
    gamma = ps.add(name + ".gamma", Mat::Ones(1, dim), false);
    beta = ps.add(name + ".beta", Mat::Zero(1, dim), false);
  }

  Var operator()(const Var& x) const { return ag::layer_norm(x, gamma, beta); }
};

struct Mlp {
  Linear fc1, fc2;

  Mlp() = default;
  Mlp(ParamSet& ps, const std::string& name, int dim, int hidden, Rng& rng)
      : fc1(ps, name + ".fc1", dim, hidden, rng), fc2(ps, name + ".fc2", hidden, dim, rng) {}

  Var operator()(const Var& x) const { return fc2(ag::gelu(fc1(x))); }
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamSet& ps, const std::string& name, int dim, int heads_, Rng& rng)
      : q(ps, name + ".q", dim, dim, rng),
        k(ps, name + ".k", dim, dim, rng),
        v(ps, name + ".v", dim, dim, rng),
        o(ps, name + ".o", dim, dim, rng),
        heads(heads_) {
    if (dim % heads_ != 0) throw std::invalid_argument(name + ": dim not divisible by heads");
  }

  Var operator()(const Var& x, const Var& ctx, const std::vector<int>& x_seg,
                 const std::vector<int>& ctx_seg, bool causal) const {
    return o(ag::attention(q(x), k(ctx), v(ctx), heads, x_seg, ctx_seg, causal));
  }
};

// Pre-norm transformer block: self-attention, optional cross-attention to a
// context sequence, then an MLP, each with a residual connection.
struct TransformerBlock {
  LayerNorm ln1, ln_cross, ln_ctx, ln2;
  MultiHeadAttention self_attn, cross_attn;
  Mlp mlp;
  bool has_cross = false;

  TransformerBlock() = default;
  TransformerBlock(ParamSet& ps, const std::string& name, int dim, int heads, int mlp_hidden,
                   Rng& rng, bool cross = false)
      : ln1(ps, name + ".ln1", dim), self_attn(ps, name + ".attn", dim, heads, rng), has_cross(cross) {
    if (cross) {
      ln_cross = LayerNorm(ps, name + ".ln_cross", dim);
      ln_ctx = LayerNorm(ps, name + ".ln_ctx", dim);
      cross_attn = MultiHeadAttention(ps, name + ".cross", dim, heads, rng);
    }
    ln2 = LayerNorm(ps, name + ".ln2", dim);
    mlp = Mlp(ps, name + ".mlp", dim, mlp_hidden, rng);
  }

  Var operator()(Var x, const std::vector<int>& seg, bool causal, const Var* ctx = nullptr,
                 const std::vector<int>* ctx_seg = nullptr) const {
    Var h = ln1(x);
    x = ag::add(x, self_attn(h, h, seg, seg, causal));
    if (has_cross) {
      if (!ctx || !ctx_seg) throw std::invalid_argument("cross-attention block needs a context");
      x = ag::add(x, cross_attn(ln_cross(x), ln_ctx(*ctx), seg, *ctx_seg, false));
    }
    x = ag::add(x, mlp(ln2(x)));
    return x;
  }
};

// Fixed sinusoidal position table (positions x dim).
inline Mat sinusoidal_positions(int positions, int dim) {
  Mat pe(positions, dim);
  for (int p = 0; p < positions; ++p)
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      pe(p, i) = (i % 2 == 0) ? std::sin(p * freq) : std::cos(p * freq);
    }
  return pe;
}

inline Mat tile_rows(const Mat& m, int times) {
  Mat out(m.rows() * times, m.cols());
  for (int t = 0; t < times; ++t) out.middleRows(t * m.rows(), m.rows()) = m;
  return out;
}

}  // namespace mindcap::nn
