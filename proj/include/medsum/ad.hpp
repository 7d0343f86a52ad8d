#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "medsum/common.hpp"

// Minimal reverse-mode autodiff over dense double matrices. Graphs are
// built eagerly per forward pass and freed when the last Var goes away.
namespace medsum::ad {

using Mat = Eigen::MatrixXd;

struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // adds into parents' grads

  void accumulate(const Mat& g) {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    grad += g;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Var constant(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return Var(std::move(n));
  }

  static Var param(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool valid() const { return node_ != nullptr; }
  const Mat& value() const { return node_->value; }
  Mat& value() { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  double scalar() const { return node_->value(0, 0); }
  const std::shared_ptr<Node>& node() const { return node_; }

  void zero_grad() { node_->grad.setZero(); }

  // Reverse pass from a scalar root.
  void backward() const {
    if (node_->value.size() != 1)
      throw InvalidArgument("backward() requires a scalar root");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next == 0 && !seen.insert(n).second) {
        stack.pop_back();
        continue;
      }
      if (next < n->parents.size()) {
        Node* p = n->parents[next++].get();
        if (!seen.count(p)) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->accumulate(Mat::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backprop && n->grad.size() != 0) n->backprop(*n);
    }
  }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Var make(Mat value, std::vector<Var> parents,
                std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (auto& p : parents) {
    n->requires_grad = n->requires_grad || p.requires_grad();
    n->parents.push_back(p.node());
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return Var(std::move(n));
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  return detail::make(a.value() + b.value(), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::make(a.value() - b.value(), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate(-n.grad);
  });
}

// b is a 1 x cols row vector added to every row of a.
inline Var add_row_broadcast(const Var& a, const Var& b) {
  Mat v = a.value();
  v.rowwise() += b.value().row(0);
  return detail::make(std::move(v), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
    if (n.parents[1]->requires_grad)
      n.parents[1]->accumulate(n.grad.colwise().sum());
  });
}

inline Var scale(const Var& a, double s) {
  return detail::make(a.value() * s, {a}, [s](Node& n) {
    n.parents[0]->accumulate(n.grad * s);
  });
}

inline Var matmul(const Var& a, const Var& b) {
  return detail::make(a.value() * b.value(), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad)
      n.parents[0]->accumulate(n.grad * n.parents[1]->value.transpose());
    if (n.parents[1]->requires_grad)
      n.parents[1]->accumulate(n.parents[0]->value.transpose() * n.grad);
  });
}

inline Var transpose(const Var& a) {
  return detail::make(a.value().transpose(), {a}, [](Node& n) {
    n.parents[0]->accumulate(n.grad.transpose());
  });
}

// GELU, tanh approximation (smooth; safe for finite-difference checks).
inline Var gelu(const Var& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const Mat& x = a.value();
  Mat inner = kC * (x.array() + kA * x.array().cube()).matrix();
  Mat t = inner.array().tanh().matrix();
  Mat y = (0.5 * x.array() * (1.0 + t.array())).matrix();
  return detail::make(std::move(y), {a}, [x, t, kC, kA](Node& n) {
    Eigen::ArrayXXd sech2 = 1.0 - t.array().square();
    Eigen::ArrayXXd dinner = kC * (1.0 + 3.0 * kA * x.array().square());
    Eigen::ArrayXXd dy =
        0.5 * (1.0 + t.array()) + 0.5 * x.array() * sech2 * dinner;
    n.parents[0]->accumulate((n.grad.array() * dy).matrix());
  });
}

inline Var softmax_rows(const Var& a) {
  Mat y = a.value();
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    Eigen::ArrayXd row = y.row(i).array();
    row -= row.maxCoeff();
    row = row.exp();
    y.row(i) = (row / row.sum()).matrix();
  }
  return detail::make(std::move(y), {a}, [](Node& n) {
    const Mat& y = n.value;
    Mat dx = n.grad.cwiseProduct(y);
    Eigen::VectorXd rowdots = dx.rowwise().sum();
    dx -= (rowdots.asDiagonal() * y);
    n.parents[0]->accumulate(dx);
  });
}

// Layer norm over each row with learned gain/bias (1 x cols).
inline Var layer_norm(const Var& a, const Var& gain, const Var& bias,
                      double eps = 1e-5) {
  const Mat& x = a.value();
  const Eigen::Index d = x.cols();
  Mat xhat(x.rows(), d);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    Eigen::RowVectorXd centered = x.row(i).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(d);
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = centered * inv_std(i);
  }
  Mat y = xhat;
  y.array().rowwise() *= gain.value().row(0).array();
  y.rowwise() += bias.value().row(0);
  return detail::make(
      std::move(y), {a, gain, bias}, [xhat, inv_std](Node& n) {
        const Eigen::Index d = xhat.cols();
        const Mat& g = n.grad;
        if (n.parents[1]->requires_grad)
          n.parents[1]->accumulate(
              (g.array() * xhat.array()).colwise().sum().matrix());
        if (n.parents[2]->requires_grad)
          n.parents[2]->accumulate(g.colwise().sum());
        if (n.parents[0]->requires_grad) {
          Mat dxhat = g;
          dxhat.array().rowwise() *=
              n.parents[1]->value.row(0).array();
          Mat dx(xhat.rows(), d);
          for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
            const double m1 = dxhat.row(i).mean();
            const double m2 =
                (dxhat.row(i).array() * xhat.row(i).array()).mean();
            dx.row(i) =
                inv_std(i) *
                (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
          }
          n.parents[0]->accumulate(dx);
        }
      });
}

// Row gather (embedding lookup).
inline Var gather_rows(const Var& table, std::vector<int> ids) {
  Mat y(static_cast<Eigen::Index>(ids.size()), table.value().cols());
  for (std::size_t i = 0; i < ids.size(); ++i)
    y.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  return detail::make(std::move(y), {table}, [ids](Node& n) {
    Node* t = n.parents[0].get();
    if (t->grad.size() == 0)
      t->grad = Mat::Zero(t->value.rows(), t->value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i)
      t->grad.row(ids[i]) += n.grad.row(static_cast<Eigen::Index>(i));
  });
}

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n_cols) {
  Mat y = a.value().middleCols(start, n_cols);
  return detail::make(std::move(y), {a}, [start, n_cols](Node& n) {
    Node* p = n.parents[0].get();
    if (p->grad.size() == 0)
      p->grad = Mat::Zero(p->value.rows(), p->value.cols());
    p->grad.middleCols(start, n_cols) += n.grad;
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  Eigen::Index cols = 0;
  for (const auto& p : parts) cols += p.value().cols();
  Mat y(parts[0].value().rows(), cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    y.middleCols(at, p.value().cols()) = p.value();
    at += p.value().cols();
  }
  std::vector<Eigen::Index> widths;
  for (const auto& p : parts) widths.push_back(p.value().cols());
  return detail::make(std::move(y), parts, [widths](Node& n) {
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (n.parents[i]->requires_grad)
        n.parents[i]->accumulate(n.grad.middleCols(at, widths[i]));
      at += widths[i];
    }
  });
}

// Mean over rows with optional 0/1 weights (padding mask).
inline Var mean_rows(const Var& a, const std::vector<double>& weights = {}) {
  const Mat& x = a.value();
  std::vector<double> w = weights;
  if (w.empty()) w.assign(static_cast<std::size_t>(x.rows()), 1.0);
  if (static_cast<Eigen::Index>(w.size()) != x.rows())
    throw InvalidArgument("mean_rows: mask length mismatch");
  double total = 0.0;
  for (double v : w) total += v;
  if (total <= 0.0) throw InvalidArgument("mean_rows: all positions masked");
  Mat y = Mat::Zero(1, x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    y.row(0) += w[static_cast<std::size_t>(i)] * x.row(i);
  y /= total;
  return detail::make(std::move(y), {a}, [w, total](Node& n) {
    Node* p = n.parents[0].get();
    Mat dx(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < dx.rows(); ++i)
      dx.row(i) = n.grad.row(0) * (w[static_cast<std::size_t>(i)] / total);
    p->accumulate(dx);
  });
}

// L2-normalize a 1 x d row vector.
inline Var l2_normalize(const Var& a) {
  const double norm = a.value().norm();
  if (norm == 0.0) throw InvalidArgument("l2_normalize: zero vector");
  Mat y = a.value() / norm;
  return detail::make(std::move(y), {a}, [norm](Node& n) {
    const Mat& y = n.value;
    const double dot = (n.grad.array() * y.array()).sum();
    n.parents[0]->accumulate((n.grad - dot * y) / norm);
  });
}

// Negative log-likelihood of target ids under row-wise log-softmax of the
// logits; `mean` averages over targets, otherwise sums.
inline Var nll_loss(const Var& logits, const std::vector<int>& targets,
                    bool mean = true) {
  if (targets.empty()) throw InvalidArgument("nll_loss: empty target");
  const Mat& z = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != z.rows())
    throw InvalidArgument("nll_loss: target/logit row mismatch");
  Mat probs(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::ArrayXd row = z.row(i).array();
    const double mx = row.maxCoeff();
    Eigen::ArrayXd ex = (row - mx).exp();
    const double denom = ex.sum();
    probs.row(i) = (ex / denom).matrix();
    loss -= (z(i, targets[static_cast<std::size_t>(i)]) - mx -
             std::log(denom));
  }
  const double w = mean ? 1.0 / static_cast<double>(targets.size()) : 1.0;
  Mat y(1, 1);
  y(0, 0) = loss * w;
  return detail::make(std::move(y), {logits}, [targets, probs, w](Node& n) {
    Mat dz = probs;
    for (Eigen::Index i = 0; i < dz.rows(); ++i)
      dz(i, targets[static_cast<std::size_t>(i)]) -= 1.0;
    n.parents[0]->accumulate(dz * (w * n.grad(0, 0)));
  });
}

// InfoNCE over a 1 x (1+K) similarity row whose first entry is the
// positive: loss = logsumexp(sims/tau over denominator) - sims(0)/tau.
// `include_positive` selects whether the positive joins the denominator.
inline Var info_nce(const Var& sims, double tau,
                    bool include_positive = true) {
  if (tau <= 0.0) throw InvalidArgument("info_nce: tau must be positive");
  const Mat& s = sims.value();
  if (s.rows() != 1 || s.cols() < 2)
    throw InvalidArgument("info_nce: need a 1 x (1+K) similarity row");
  if (!s.allFinite()) throw InvalidArgument("info_nce: non-finite similarity");
  Eigen::ArrayXd logits = s.row(0).array() / tau;
  const Eigen::Index lo = include_positive ? 0 : 1;
  const Eigen::Index cnt = s.cols() - lo;
  const double mx = logits.segment(lo, cnt).maxCoeff();
  Eigen::ArrayXd ex = Eigen::ArrayXd::Zero(s.cols());
  ex.segment(lo, cnt) = (logits.segment(lo, cnt) - mx).exp();
  const double denom = ex.segment(lo, cnt).sum();
  const double lse = mx + std::log(denom);
  Mat y(1, 1);
  y(0, 0) = lse - logits(0);
  Eigen::ArrayXd soft = ex / denom;
  return detail::make(std::move(y), {sims}, [soft, tau](Node& n) {
    Eigen::RowVectorXd ds = soft.matrix().transpose();
    ds(0) -= 1.0;
    n.parents[0]->accumulate(ds * (n.grad(0, 0) / tau));
  });
}

}  // namespace medsum::ad
