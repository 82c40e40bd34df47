#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. Every op returns a fresh node; parameters are leaf nodes
// that persist across steps and accumulate gradients until zero_grad().

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace mindcap::ag {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Mat& g) {
    if (!requires_grad) return;
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  Mat& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const { return node_->value(0, 0); }
  explicit operator bool() const { return static_cast<bool>(node_); }

  void zero_grad() { node_->grad.resize(0, 0); }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

inline Var constant(Mat value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

inline Var leaf(Mat value, bool requires_grad = true) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

// While alive, ops record no graph (inference).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(enabled()) { enabled() = false; }
  ~NoGradGuard() { enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }

 private:
  bool prev_;
};

namespace detail {

inline Var make(Mat value, std::vector<std::shared_ptr<Node>> parents,
                std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool any = false;
  if (NoGradGuard::enabled())
    for (const auto& p : parents) any = any || p->requires_grad;
  n->requires_grad = any;
  if (any) {
    n->parents = std::move(parents);
    n->backward = std::move(bw);
  }
  return Var(std::move(n));
}

inline void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
}

}  // namespace detail

// Runs reverse accumulation from a scalar (1x1) output.
inline void backward(const Var& out) {
  if (out.rows() != 1 || out.cols() != 1)
    throw std::invalid_argument("backward: output must be a scalar");
  if (!out.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{out.node().get(), 0}};
  seen.insert(out.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  out.node()->accumulate(Mat::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
    // interior nodes drop their gradient once propagated
    if (n->backward) n->grad.resize(0, 0);
  }
}

// ---------------------------------------------------------------- ops

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimension mismatch");
  Mat v;
  v.noalias() = a.value() * b.value();
  auto pa = a.node(), pb = b.node();
  return detail::make(std::move(v), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad * pb->value.transpose());
    if (pb->requires_grad) pb->accumulate(pa->value.transpose() * self.grad);
  });
}

inline Var transpose(const Var& a) {
  auto pa = a.node();
  return detail::make(a.value().transpose(), {pa},
                      [pa](Node& self) { pa->accumulate(self.grad.transpose()); });
}

inline Var add(const Var& a, const Var& b) {
  detail::check_same_shape(a.value(), b.value(), "add");
  auto pa = a.node(), pb = b.node();
  return detail::make(a.value() + b.value(), {pa, pb}, [pa, pb](Node& self) {
    pa->accumulate(self.grad);
    pb->accumulate(self.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same_shape(a.value(), b.value(), "sub");
  auto pa = a.node(), pb = b.node();
  return detail::make(a.value() - b.value(), {pa, pb}, [pa, pb](Node& self) {
    pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(-self.grad);
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_same_shape(a.value(), b.value(), "mul");
  auto pa = a.node(), pb = b.node();
  return detail::make(a.value().cwiseProduct(b.value()), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad.cwiseProduct(pb->value));
    if (pb->requires_grad) pb->accumulate(self.grad.cwiseProduct(pa->value));
  });
}

inline Var scale(const Var& a, double s) {
  auto pa = a.node();
  return detail::make(a.value() * s, {pa}, [pa, s](Node& self) { pa->accumulate(self.grad * s); });
}

// a (n x d) + bias (1 x d) broadcast over rows
inline Var add_row(const Var& a, const Var& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols())
    throw std::invalid_argument("add_row: bias must be 1 x cols");
  Mat v = a.value();
  v.rowwise() += bias.value().row(0);
  auto pa = a.node(), pb = bias.node();
  return detail::make(std::move(v), {pa, pb}, [pa, pb](Node& self) {
    pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(self.grad.colwise().sum());
  });
}

inline Var gelu(const Var& a) {
  const double k = std::sqrt(2.0 / M_PI);
  Mat v = a.value().unaryExpr([k](double x) {
    return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
  });
  auto pa = a.node();
  return detail::make(std::move(v), {pa}, [pa, k](Node& self) {
    Mat d = pa->value.unaryExpr([k](double x) {
      const double u = k * (x + 0.044715 * x * x * x);
      const double t = std::tanh(u);
      const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    });
    pa->accumulate(self.grad.cwiseProduct(d));
  });
}

inline Var tanh(const Var& a) {
  Mat v = a.value().array().tanh().matrix();
  auto pa = a.node();
  return detail::make(v, {pa}, [pa, v](Node& self) {
    pa->accumulate(self.grad.cwiseProduct((1.0 - v.array().square()).matrix()));
  });
}

// Row-wise layer normalisation with affine gamma/beta (1 x d each).
inline Var layer_norm(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5) {
  const Eigen::Index n = a.rows(), d = a.cols();
  Mat xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = a.value().row(r).mean();
    const double var = (a.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (a.value().row(r).array() - mu) * inv_std(r);
  }
  Mat v = xhat;
  v.array().rowwise() *= gamma.value().row(0).array();
  v.rowwise() += beta.value().row(0);
  auto pa = a.node(), pg = gamma.node(), pb = beta.node();
  return detail::make(std::move(v), {pa, pg, pb},
                      [pa, pg, pb, xhat = std::move(xhat), inv_std](Node& self) {
                        const Mat& g = self.grad;
                        if (pg->requires_grad) pg->accumulate(g.cwiseProduct(xhat).colwise().sum());
                        if (pb->requires_grad) pb->accumulate(g.colwise().sum());
                        if (!pa->requires_grad) return;
                        const double d = static_cast<double>(g.cols());
                        Mat gx = g;
                        gx.array().rowwise() *= pg->value.row(0).array();
                        Mat da(g.rows(), g.cols());
                        for (Eigen::Index r = 0; r < g.rows(); ++r) {
                          const double m1 = gx.row(r).mean();
                          const double m2 = gx.row(r).dot(xhat.row(r)) / d;
                          da.row(r) = inv_std(r) *
                                      (gx.row(r).array() - m1 - xhat.row(r).array() * m2);
                        }
                        pa->accumulate(da);
                      });
}

// Selects rows by index; duplicates allowed, gradients scatter-add.
inline Var gather_rows(const Var& a, const std::vector<int>& idx) {
  Mat v(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw std::out_of_range("gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  auto pa = a.node();
  return detail::make(std::move(v), {pa}, [pa, idx](Node& self) {
    Mat g = Mat::Zero(pa->value.rows(), pa->value.cols());
    for (size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    pa->accumulate(g);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  std::vector<std::shared_ptr<Node>> ps;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
    ps.push_back(p.node());
  }
  Mat v(rows, cols);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return detail::make(std::move(v), ps, [ps](Node& self) {
    Eigen::Index o = 0;
    for (const auto& p : ps) {
      if (p->requires_grad) p->accumulate(self.grad.middleRows(o, p->value.rows()));
      o += p->value.rows();
    }
  });
}

// Row-major reshape (the flat element order is preserved).
inline Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw std::invalid_argument("reshape: size mismatch");
  Mat v = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  auto pa = a.node();
  return detail::make(std::move(v), {pa}, [pa](Node& self) {
    pa->accumulate(Eigen::Map<const Mat>(self.grad.data(), pa->value.rows(), pa->value.cols()));
  });
}

// For each row i inside its segment, concatenates rows i-h..i+h (zero padded at
// segment edges). Used to express a 1-D convolution over a token sequence as
// a matmul.
inline Var unfold_rows(const Var& a, int half_width, const std::vector<int>& segments) {
  const Eigen::Index d = a.cols();
  const int k = 2 * half_width + 1;
  Mat v = Mat::Zero(a.rows(), d * k);
  std::vector<std::pair<int, int>> seg_of(static_cast<size_t>(a.rows()));
  int start = 0;
  for (int len : segments) {
    for (int i = 0; i < len; ++i) seg_of[static_cast<size_t>(start + i)] = {start, len};
    start += len;
  }
  if (start != a.rows()) throw std::invalid_argument("unfold_rows: segments do not cover input");
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    auto [s, len] = seg_of[static_cast<size_t>(r)];
    for (int o = -half_width; o <= half_width; ++o) {
      const Eigen::Index src = r + o;
      if (src < s || src >= s + len) continue;
      v.block(r, (o + half_width) * d, 1, d) = a.value().row(src);
    }
  }
  auto pa = a.node();
  return detail::make(std::move(v), {pa}, [pa, half_width, seg_of, d](Node& self) {
    Mat g = Mat::Zero(pa->value.rows(), d);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      auto [s, len] = seg_of[static_cast<size_t>(r)];
      for (int o = -half_width; o <= half_width; ++o) {
        const Eigen::Index src = r + o;
        if (src < s || src >= s + len) continue;
        g.row(src) += self.grad.block(r, (o + half_width) * d, 1, d);
      }
    }
    pa->accumulate(g);
  });
}

inline Var sum(const Var& a) {
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  auto pa = a.node();
  return detail::make(std::move(v), {pa}, [pa](Node& self) {
    pa->accumulate(Mat::Constant(pa->value.rows(), pa->value.cols(), self.grad(0, 0)));
  });
}

// Multi-head scaled dot-product attention over packed sequences. q holds the
// rows of all query segments back to back, k/v the rows of the matching key
// segments. With causal set, query row i of a segment sees key rows <= i.
inline Var attention(const Var& q, const Var& k, const Var& v, int heads,
                     const std::vector<int>& q_segments, const std::vector<int>& k_segments,
                     bool causal) {
  const Eigen::Index dm = q.cols();
  if (k.cols() != dm || v.cols() != dm || dm % heads != 0)
    throw std::invalid_argument("attention: width mismatch");
  if (q_segments.size() != k_segments.size())
    throw std::invalid_argument("attention: segment count mismatch");
  const Eigen::Index dh = dm / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));

  struct Block {
    Eigen::Index q0, nq, k0, nk;
  };
  std::vector<Block> blocks;
  Eigen::Index qo = 0, ko = 0;
  for (size_t s = 0; s < q_segments.size(); ++s) {
    if (causal && q_segments[s] != k_segments[s])
      throw std::invalid_argument("attention: causal requires equal segment lengths");
    blocks.push_back({qo, q_segments[s], ko, k_segments[s]});
    qo += q_segments[s];
    ko += k_segments[s];
  }
  if (qo != q.rows() || ko != k.rows() || k.rows() != v.rows())
    throw std::invalid_argument("attention: segments do not cover inputs");

  Mat out = Mat::Zero(q.rows(), dm);
  // probabilities per (segment, head) for the backward pass
  auto probs = std::make_shared<std::vector<Mat>>();
  probs->reserve(blocks.size() * static_cast<size_t>(heads));
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (const auto& b : blocks) {
    for (int h = 0; h < heads; ++h) {
      Mat s;
      s.noalias() = q.value().block(b.q0, h * dh, b.nq, dh) *
                    k.value().block(b.k0, h * dh, b.nk, dh).transpose();
      s *= inv;
      if (causal)
        for (Eigen::Index i = 0; i < b.nq; ++i)
          for (Eigen::Index j = i + 1; j < b.nk; ++j) s(i, j) = neg_inf;
      for (Eigen::Index i = 0; i < b.nq; ++i) {
        const double m = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - m).exp();
        s.row(i) /= s.row(i).sum();
      }
      out.block(b.q0, h * dh, b.nq, dh).noalias() = s * v.value().block(b.k0, h * dh, b.nk, dh);
      probs->push_back(std::move(s));
    }
  }
  auto pq = q.node(), pk = k.node(), pv = v.node();
  return detail::make(
      std::move(out), {pq, pk, pv}, [pq, pk, pv, blocks, probs, heads, dh, inv](Node& self) {
        Mat gq = Mat::Zero(pq->value.rows(), pq->value.cols());
        Mat gk = Mat::Zero(pk->value.rows(), pk->value.cols());
        Mat gv = Mat::Zero(pv->value.rows(), pv->value.cols());
        size_t pi = 0;
        for (const auto& b : blocks) {
          for (int h = 0; h < heads; ++h) {
            const Mat& p = (*probs)[pi++];
            const Mat go = self.grad.block(b.q0, h * dh, b.nq, dh);
            gv.block(b.k0, h * dh, b.nk, dh).noalias() += p.transpose() * go;
            Mat dp;
            dp.noalias() = go * pv->value.block(b.k0, h * dh, b.nk, dh).transpose();
            Mat ds = p.cwiseProduct(dp);
            const Eigen::VectorXd rs = ds.rowwise().sum();
            ds -= (p.array().colwise() * rs.array()).matrix();
            ds *= inv;
            gq.block(b.q0, h * dh, b.nq, dh).noalias() +=
                ds * pk->value.block(b.k0, h * dh, b.nk, dh);
            gk.block(b.k0, h * dh, b.nk, dh).noalias() +=
                ds.transpose() * pq->value.block(b.q0, h * dh, b.nq, dh);
          }
        }
        pq->accumulate(gq);
        pk->accumulate(gk);
        pv->accumulate(gv);
      });
}

// Sum over rows of weight_r * (-log softmax(logits_r)[target_r]). Rows with a
// negative target or zero weight contribute nothing.
inline Var cross_entropy(const Var& logits, const std::vector<int>& targets,
                         const std::vector<double>& weights) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows() || weights.size() != targets.size())
    throw std::invalid_argument("cross_entropy: target count mismatch");
  const Eigen::Index n = logits.rows(), c = logits.cols();
  Mat prob(n, c);
  double total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const double m = logits.value().row(r).maxCoeff();
    prob.row(r) = (logits.value().row(r).array() - m).exp();
    const double z = prob.row(r).sum();
    prob.row(r) /= z;
    const int t = targets[static_cast<size_t>(r)];
    if (t < 0 || weights[static_cast<size_t>(r)] == 0.0) continue;
    if (t >= c) throw std::out_of_range("cross_entropy: target out of range");
    total += weights[static_cast<size_t>(r)] * -(logits.value()(r, t) - m - std::log(z));
  }
  Mat v(1, 1);
  v(0, 0) = total;
  auto pl = logits.node();
  return detail::make(std::move(v), {pl}, [pl, prob = std::move(prob), targets, weights](Node& self) {
    Mat g = Mat::Zero(prob.rows(), prob.cols());
    for (Eigen::Index r = 0; r < prob.rows(); ++r) {
      const int t = targets[static_cast<size_t>(r)];
      const double w = weights[static_cast<size_t>(r)];
      if (t < 0 || w == 0.0) continue;
      g.row(r) = prob.row(r) * w;
      g(r, t) -= w;
    }
    pl->accumulate(g * self.grad(0, 0));
  });
}

// Sum over rows of weight_r * ||pred_r - target_r||^2.
inline Var weighted_sq_error(const Var& pred, const Mat& target, const std::vector<double>& row_weights) {
  detail::check_same_shape(pred.value(), target, "weighted_sq_error");
  if (static_cast<Eigen::Index>(row_weights.size()) != pred.rows())
    throw std::invalid_argument("weighted_sq_error: weight count mismatch");
  const Mat diff = pred.value() - target;
  double total = 0.0;
  for (Eigen::Index r = 0; r < diff.rows(); ++r)
    if (row_weights[static_cast<size_t>(r)] != 0.0)
      total += row_weights[static_cast<size_t>(r)] * diff.row(r).squaredNorm();
  Mat v(1, 1);
  v(0, 0) = total;
  auto pp = pred.node();
  return detail::make(std::move(v), {pp}, [pp, diff, row_weights](Node& self) {
    Mat g = diff;
    for (Eigen::Index r = 0; r < g.rows(); ++r) g.row(r) *= 2.0 * row_weights[static_cast<size_t>(r)];
    pp->accumulate(g * self.grad(0, 0));
  });
}

}  // namespace mindcap::ag
