#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <optional>
#include <vector>

#include "medsum/ad.hpp"
#include "medsum/common.hpp"

namespace medsum {

inline double cosine_similarity(const Eigen::RowVectorXd& u,
                                const Eigen::RowVectorXd& v) {
  if (u.size() != v.size())
    throw InvalidArgument("cosine_similarity: length mismatch");
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0)
    throw InvalidArgument("cosine_similarity: zero vector");
  return u.dot(v) / (nu * nv);
}

// MoCo-style dictionary: fixed-capacity FIFO of detached key-encoder
// representations. Hard negatives never enter the queue.
class NegativeQueue {
 public:
  explicit NegativeQueue(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw InvalidArgument("queue capacity must be >= 1");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  void enqueue_dequeue(const std::vector<Eigen::RowVectorXd>& batch_keys) {
    if (batch_keys.size() > capacity_)
      throw InvalidArgument("batch larger than queue capacity");
    for (const auto& k : batch_keys) entries_.push_back(k);
    while (entries_.size() > capacity_) entries_.pop_front();
  }

  // Entries oldest-first, stacked as rows.
  Eigen::MatrixXd snapshot() const {
    if (entries_.empty()) return Eigen::MatrixXd();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(entries_.size()),
                      entries_.front().size());
    Eigen::Index i = 0;
    for (const auto& e : entries_) m.row(i++) = e;
    return m;
  }

  const std::deque<Eigen::RowVectorXd>& entries() const { return entries_; }

 private:
  std::size_t capacity_;
  std::deque<Eigen::RowVectorXd> entries_;
};

// InfoNCE from precomputed similarities; the analytic reference used by
// tests and by similarity tracking.
inline double info_nce_value(double positive_sim,
                             const std::vector<double>& negative_sims,
                             double tau, bool include_positive = true) {
  if (tau <= 0.0) throw InvalidArgument("temperature must be positive");
  if (negative_sims.empty())
    throw InvalidArgument("info_nce_value: no negatives");
  const double sp = positive_sim / tau;
  double mx = include_positive ? sp : negative_sims[0] / tau;
  for (double s : negative_sims) mx = std::max(mx, s / tau);
  double denom = include_positive ? std::exp(sp - mx) : 0.0;
  for (double s : negative_sims) denom += std::exp(s / tau - mx);
  return mx + std::log(denom) - sp;
}

struct ContrastiveOptions {
  double tau = 0.07;
  // Some formulations sum the denominator only over the negatives, which is
  // unbounded below; the standard InfoNCE form keeps the positive in the
  // denominator. exclude_positive switches to the negatives-only form.
  bool exclude_positive = false;
};

namespace detail {

// Builds -log( e^{s+/tau} / sum ) where sims row = [positive, negatives...],
// computed against L2-normalized constant keys.
inline ad::Var contrastive_graph(const ad::Var& query_rep,
                                 const Eigen::RowVectorXd& positive_key,
                                 const Eigen::MatrixXd& negative_keys,
                                 const ContrastiveOptions& opt) {
  Eigen::MatrixXd keys(negative_keys.rows() + 1, positive_key.size());
  keys.row(0) = positive_key.normalized();
  for (Eigen::Index i = 0; i < negative_keys.rows(); ++i)
    keys.row(i + 1) = negative_keys.row(i).normalized();
  ad::Var qn = ad::l2_normalize(query_rep);
  ad::Var sims =
      ad::matmul(qn, ad::transpose(ad::Var::constant(std::move(keys))));
  return ad::info_nce(sims, opt.tau, !opt.exclude_positive);
}

}  // namespace detail

// Contrastive loss against the queue of simple negatives (other questions'
// summaries). Returns nullopt when the queue is empty; callers skip the
// term and flag it.
inline std::optional<ad::Var> scl_loss(const ad::Var& query_rep,
                                       const Eigen::RowVectorXd& positive_key,
                                       const NegativeQueue& queue,
                                       const ContrastiveOptions& opt = {}) {
  if (queue.empty()) return std::nullopt;
  return detail::contrastive_graph(query_rep, positive_key, queue.snapshot(),
                                   opt);
}

// Contrastive loss against entity-substituted hard negatives (rows of
// `hard_keys`, key-encoder outputs, detached).
inline std::optional<ad::Var> hcl_loss(const ad::Var& query_rep,
                                       const Eigen::RowVectorXd& positive_key,
                                       const Eigen::MatrixXd& hard_keys,
                                       const ContrastiveOptions& opt = {}) {
  if (hard_keys.rows() == 0) return std::nullopt;
  return detail::contrastive_graph(query_rep, positive_key, hard_keys, opt);
}

// L = L_ce + L_scl + L_hcl; skipped terms contribute zero.
inline ad::Var total_loss(const ad::Var& l_ce,
                          const std::optional<ad::Var>& l_scl,
                          const std::optional<ad::Var>& l_hcl) {
  ad::Var total = l_ce;
  if (l_scl) total = ad::add(total, *l_scl);
  if (l_hcl) total = ad::add(total, *l_hcl);
  return total;
}

inline double total_loss_value(double l_ce, std::optional<double> l_scl,
                               std::optional<double> l_hcl) {
  return l_ce + l_scl.value_or(0.0) + l_hcl.value_or(0.0);
}

}  // namespace medsum
