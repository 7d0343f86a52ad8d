#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "medsum/config.hpp"
#include "medsum/contrastive.hpp"
#include "medsum/corpus.hpp"
#include "medsum/eval.hpp"
#include "medsum/model.hpp"
#include "medsum/negatives.hpp"
#include "medsum/rng.hpp"

namespace medsum {

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, std::string last_good)
      : Error("non-finite loss at step " + std::to_string(step)),
        step(step),
        last_good_checkpoint(std::move(last_good)) {}
  std::size_t step;
  std::string last_good_checkpoint;
};

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, var] : params.params) {
      if (var.node()->grad.size() == 0) continue;
      const ad::Mat& g = var.grad();
      auto& s = state_[name];
      if (s.m.size() == 0) {
        s.m = ad::Mat::Zero(g.rows(), g.cols());
        s.v = ad::Mat::Zero(g.rows(), g.cols());
      }
      s.m = beta1_ * s.m + (1.0 - beta1_) * g;
      s.v = (beta2_ * s.v.array() + (1.0 - beta2_) * g.array().square())
                .matrix();
      ad::Mat m_hat = s.m / bc1;
      ad::Mat v_hat = s.v / bc2;
      var.value().array() -=
          lr_ * m_hat.array() / (v_hat.array().sqrt() + eps_);
    }
  }

 private:
  struct Moments {
    ad::Mat m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> state_;
};

struct StepRecord {
  std::size_t step = 0;
  double l_ce = 0.0;
  std::optional<double> l_scl;
  std::optional<double> l_hcl;
  double l_total = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double dev_rouge1 = 0.0;
  std::optional<double> sim_hard;
  std::optional<double> sim_simple;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;  // the similarity log
  std::size_t best_epoch = 0;
  double best_dev_rouge1 = 0.0;
  std::string best_manifest;
  std::string best_tensors;
  // instrumentation, used by ablation isolation checks
  std::size_t queue_ops = 0;
  std::size_t pool_reads = 0;
};

inline MetricsReport evaluate_model(const Summarizer& model,
                                    const Dataset& test,
                                    const Recognizer& recognizer,
                                    std::size_t beam_width = 1,
                                    bool keep_rows = false) {
  return evaluate_generator(
      [&](const QuestionPair& p) { return model.generate(p.chq, beam_width); },
      test, recognizer, keep_rows);
}

// Joint optimization loop: per step — forward the query encoder, compute
// the enabled loss terms, gradient step on theta_q and the decoder,
// momentum-update theta_k, enqueue the batch's positive keys. Per epoch —
// dev ROUGE and similarity tracking; the best-dev checkpoint is kept.
class Trainer {
 public:
  Trainer(TrainConfig config, const SplitSet& splits,
          const NegativePool* pool, std::string out_dir)
      : config_(config),
        splits_(splits),
        pool_(pool),
        out_dir_(std::move(out_dir)) {
    config_.validate();
    if (splits_.train.pairs.empty())
      throw InvalidArgument("training split is empty");
    const bool needs_hard = config_.ablation == Ablation::full ||
                            config_.ablation == Ablation::no_simple;
    if (needs_hard && (!pool_ || pool_->empty()))
      throw InvalidArgument(
          "hard-negative pool required unless ablation disables L_hcl");
  }

  TrainResult train() {
    std::filesystem::create_directories(out_dir_);
    Summarizer model(config_.model_config(), Vocabulary::build(splits_.train),
                     config_.seed);
    Adam optimizer(config_.learning_rate, config_.adam_beta1,
                   config_.adam_beta2);
    NegativeQueue queue(config_.l_q);
    const bool use_scl = config_.ablation == Ablation::full ||
                         config_.ablation == Ablation::no_hard;
    const bool use_hcl = config_.ablation == Ablation::full ||
                         config_.ablation == Ablation::no_simple;

    // Token ids are fixed for the whole run; cache them.
    std::vector<std::vector<int>> chq_ids(splits_.train.size());
    std::vector<std::vector<int>> faq_ids(splits_.train.size());
    for (std::size_t i = 0; i < splits_.train.size(); ++i) {
      chq_ids[i] = model.tokenize_source(splits_.train.pairs[i].chq);
      faq_ids[i] = model.tokenize_target(splits_.train.pairs[i].faq);
    }

    TrainResult result;
    std::ofstream step_log(out_dir_ + "/steps.jsonl", std::ios::binary);
    std::ofstream epoch_log(out_dir_ + "/epochs.jsonl", std::ios::binary);

    CounterRng run_rng(config_.seed, "train");
    std::size_t step = 0;
    double best_dev = -1.0;
    std::size_t since_best = 0;
    const std::string last_manifest = out_dir_ + "/last.manifest.json";
    const std::string last_tensors = out_dir_ + "/last.tensors.bin";
    result.best_manifest = out_dir_ + "/best.manifest.json";
    result.best_tensors = out_dir_ + "/best.tensors.bin";

    for (std::size_t epoch = 1; epoch <= config_.epochs; ++epoch) {
      std::vector<std::size_t> order(splits_.train.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      auto epoch_rng = run_rng.derive("epoch" + std::to_string(epoch));
      epoch_rng.shuffle(order);

      for (std::size_t at = 0; at < order.size();
           at += config_.batch_size) {
        const std::size_t bsz =
            std::min(config_.batch_size, order.size() - at);
        ++step;

        // Shared CE forward; encoder outputs reused for representations.
        std::vector<ad::Var> reps;
        ad::Var l_ce;
        std::vector<std::string> batch_ids;
        std::vector<Eigen::RowVectorXd> pos_keys;
        for (std::size_t b = 0; b < bsz; ++b) {
          const std::size_t i = order[at + b];
          batch_ids.push_back(splits_.train.pairs[i].id);
          ad::Var memory = model.encode(chq_ids[i], EncoderSide::query);
          std::vector<int> dec_input(faq_ids[i].begin(),
                                     faq_ids[i].end() - 1);
          std::vector<int> targets(faq_ids[i].begin() + 1,
                                   faq_ids[i].end());
          ad::Var sample_ce = ad::nll_loss(
              model.logits(model.decode_hidden(memory, dec_input)), targets,
              !config_.ce_sum);
          l_ce = b == 0 ? sample_ce : ad::add(l_ce, sample_ce);
          if (use_scl || use_hcl) {
            reps.push_back(Summarizer::pool(memory));
            pos_keys.push_back(model.key_representation(faq_ids[i]));
          }
        }
        l_ce = ad::scale(l_ce, 1.0 / static_cast<double>(bsz));

        std::optional<ad::Var> l_scl, l_hcl;
        ContrastiveOptions copt{config_.tau, config_.exclude_positive};
        if (use_scl && !queue.empty()) {
          ++result.queue_ops;
          ad::Var acc;
          std::size_t used = 0;
          for (std::size_t b = 0; b < bsz; ++b) {
            auto term = scl_loss(reps[b], pos_keys[b], queue, copt);
            if (!term) continue;
            acc = used == 0 ? *term : ad::add(acc, *term);
            ++used;
          }
          if (used > 0)
            l_scl = ad::scale(acc, 1.0 / static_cast<double>(used));
        }
        if (use_hcl) {
          ++result.pool_reads;
          auto hard_rng = run_rng.derive("hard" + std::to_string(step));
          Eigen::MatrixXd shared_keys;
          if (config_.hard_draw == "shared")
            shared_keys = encode_hard(model, *pool_, batch_ids, hard_rng);
          ad::Var acc;
          std::size_t used = 0;
          for (std::size_t b = 0; b < bsz; ++b) {
            Eigen::MatrixXd keys =
                config_.hard_draw == "shared"
                    ? shared_keys
                    : encode_hard(model, *pool_, {batch_ids[b]},
                                  hard_rng.derive(batch_ids[b]));
            auto term = hcl_loss(reps[b], pos_keys[b], keys, copt);
            if (!term) continue;
            acc = used == 0 ? *term : ad::add(acc, *term);
            ++used;
          }
          if (used > 0)
            l_hcl = ad::scale(acc, 1.0 / static_cast<double>(used));
        }

        ad::Var total = total_loss(l_ce, l_scl, l_hcl);
        if (!std::isfinite(total.scalar())) {
          model.save_checkpoint(last_manifest, last_tensors, step);
          throw DivergenceError(step, last_manifest);
        }

        StepRecord rec;
        rec.step = step;
        rec.l_ce = l_ce.scalar();
        if (l_scl) rec.l_scl = l_scl->scalar();
        if (l_hcl) rec.l_hcl = l_hcl->scalar();
        rec.l_total = total.scalar();
        result.steps.push_back(rec);
        write_step(step_log, rec);

        total.backward();
        optimizer.step(model.params());
        model.params().zero_grads();
        model.momentum_update(config_.m);
        if (use_scl) {
          ++result.queue_ops;
          queue.enqueue_dequeue(pos_keys);
        }
      }

      EpochRecord erec;
      erec.epoch = epoch;
      erec.dev_rouge1 = dev_rouge1(model);
      track_similarities(model, queue, chq_ids, use_hcl, use_scl, erec);
      result.epochs.push_back(erec);
      write_epoch(epoch_log, erec);

      model.save_checkpoint(last_manifest, last_tensors, step);
      if (erec.dev_rouge1 > best_dev) {
        best_dev = erec.dev_rouge1;
        result.best_epoch = epoch;
        result.best_dev_rouge1 = best_dev;
        since_best = 0;
        model.save_checkpoint(result.best_manifest, result.best_tensors,
                              step);
      } else if (++since_best >= config_.patience) {
        break;
      }
    }
    if (best_dev < 0.0) {
      model.save_checkpoint(result.best_manifest, result.best_tensors, step);
    }
    return result;
  }

 private:
  double dev_rouge1(const Summarizer& model) const {
    const Dataset& dev =
        splits_.dev.pairs.empty() ? splits_.train : splits_.dev;
    double sum = 0.0;
    for (const auto& pair : dev.pairs)
      sum += rouge_n(model.generate_greedy(pair.chq), pair.faq, 1);
    return sum / static_cast<double>(dev.size());
  }

  Eigen::MatrixXd encode_hard(const Summarizer& model,
                              const NegativePool& pool,
                              const std::vector<std::string>& ids,
                              CounterRng rng) const {
    HardBatch batch;
    try {
      batch = draw_hard_batch(pool, ids, config_.n_h, rng);
    } catch (const InvalidArgument&) {
      return Eigen::MatrixXd();  // no negatives for this batch: skip L_hcl
    }
    Eigen::MatrixXd keys(static_cast<Eigen::Index>(batch.texts.size()),
                         static_cast<Eigen::Index>(config_.embedding_dim));
    for (std::size_t i = 0; i < batch.texts.size(); ++i)
      keys.row(static_cast<Eigen::Index>(i)) =
          model.key_representation(batch.texts[i]);
    return keys;
  }

  // Means over a fixed probe subset (first 64 train pairs) so epochs are
  // comparable run to run.
  void track_similarities(const Summarizer& model, const NegativeQueue& queue,
                          const std::vector<std::vector<int>>& chq_ids,
                          bool use_hcl, bool use_scl, EpochRecord& rec) const {
    const std::size_t probe = std::min<std::size_t>(64, splits_.train.size());
    double hard_sum = 0.0, simple_sum = 0.0;
    std::size_t hard_n = 0, simple_n = 0;
    Eigen::MatrixXd queue_snapshot =
        use_scl ? queue.snapshot() : Eigen::MatrixXd();
    for (std::size_t i = 0; i < probe; ++i) {
      ad::Var rep = model.query_representation(chq_ids[i]);
      Eigen::RowVectorXd q = rep.value().row(0);
      if (q.norm() == 0.0) continue;
      if (use_hcl && pool_) {
        auto it = pool_->find(splits_.train.pairs[i].id);
        if (it != pool_->end() && !it->second.empty()) {
          const std::size_t take =
              std::min<std::size_t>(4, it->second.negatives.size());
          for (std::size_t k = 0; k < take; ++k) {
            Eigen::RowVectorXd h =
                model.key_representation(it->second.negatives[k]);
            hard_sum += cosine_similarity(q, h);
            ++hard_n;
          }
        }
      }
      if (queue_snapshot.rows() > 0) {
        for (Eigen::Index r = 0; r < queue_snapshot.rows(); ++r) {
          simple_sum +=
              cosine_similarity(q, Eigen::RowVectorXd(queue_snapshot.row(r)));
          ++simple_n;
        }
      }
    }
    if (hard_n > 0) rec.sim_hard = hard_sum / static_cast<double>(hard_n);
    if (simple_n > 0)
      rec.sim_simple = simple_sum / static_cast<double>(simple_n);
  }

  static void write_step(std::ofstream& out, const StepRecord& r) {
    json rec{{"step", r.step}, {"l_ce", r.l_ce}, {"l_total", r.l_total}};
    if (r.l_scl) rec["l_scl"] = *r.l_scl;
    if (r.l_hcl) rec["l_hcl"] = *r.l_hcl;
    out << rec.dump() << '\n';
  }

  static void write_epoch(std::ofstream& out, const EpochRecord& r) {
    json rec{{"epoch", r.epoch}, {"dev_rouge1", r.dev_rouge1}};
    rec["sim_hard"] = r.sim_hard ? json(*r.sim_hard) : json(nullptr);
    rec["sim_simple"] = r.sim_simple ? json(*r.sim_simple) : json(nullptr);
    out << rec.dump() << '\n';
  }

  TrainConfig config_;
  const SplitSet& splits_;
  const NegativePool* pool_;
  std::string out_dir_;
};

}  // namespace medsum
