#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "medsum/train.hpp"

using namespace medsum;
using ad::Mat;
using ad::Var;

namespace {

Lexicon toy_lexicon() {
  Lexicon lex;
  for (const char* e : {"asthma", "shingles", "metformin", "aspirin",
                        "ibuprofen", "measles"})
    lex.add(e);
  return lex;
}

SplitSet toy_splits(std::size_t n_train) {
  const char* diseases[] = {"asthma", "shingles", "measles"};
  const char* drugs[] = {"metformin", "aspirin", "ibuprofen"};
  SplitSet s;
  s.train.name = "train";
  s.dev.name = "dev";
  s.test.name = "test";
  for (std::size_t i = 0; i < n_train; ++i) {
    QuestionPair p;
    p.id = "tr" + std::to_string(i);
    p.chq = std::string("my mother takes ") + drugs[i % 3] +
            " and now has " + diseases[(i / 3) % 3] + " case " +
            std::to_string(i);
    p.faq = std::string("does ") + drugs[i % 3] + " cause " +
            diseases[(i / 3) % 3];
    s.train.pairs.push_back(p);
  }
  return s;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 4;
  c.epochs = 2;
  c.patience = 10;
  c.l_q = 32;
  c.n_h = 8;
  c.x = 4;
  c.embedding_dim = 16;
  c.attention_heads = 2;
  c.feed_forward_dim = 32;
  c.max_source_len = 20;
  c.max_target_len = 10;
  return c;
}

NegativePool toy_pool(const SplitSet& s, std::size_t x) {
  LexiconMatcher m(toy_lexicon());
  auto dict = build_entity_dictionary(s.train, m);
  return build_negative_pool(s.train, m, dict, x, 42);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("adam minimizes a quadratic") {
  Mat x0(1, 1);
  x0 << -4.0;
  ParamStore store;
  store.params.emplace("x", Var::param(x0));
  Adam opt(0.1, 0.9, 0.999);
  for (int i = 0; i < 500; ++i) {
    Var& x = store.at("x");
    Mat three(1, 1);
    three << 3.0;
    Var d = ad::sub(x, Var::constant(three));
    Var loss = ad::matmul(d, ad::transpose(d));
    loss.backward();
    opt.step(store);
    store.zero_grads();
  }
  CHECK(store.at("x").value()(0, 0) == doctest::Approx(3.0).epsilon(1e-2));
}

TEST_CASE("adam skips parameters that received no gradient") {
  ParamStore store;
  store.params.emplace("used", Var::param(Mat::Ones(1, 1)));
  store.params.emplace("untouched", Var::param(Mat::Ones(1, 1)));
  Var loss = ad::matmul(store.at("used"), ad::transpose(store.at("used")));
  loss.backward();
  Adam opt(0.1, 0.9, 0.999);
  opt.step(store);
  CHECK(store.at("untouched").value()(0, 0) == 1.0);
  CHECK(store.at("used").value()(0, 0) != 1.0);
}

TEST_CASE("trainer validates its inputs") {
  SplitSet splits = toy_splits(4);
  TrainConfig cfg = toy_config();
  CHECK_THROWS_AS(Trainer(cfg, splits, nullptr, "/tmp/medsum_run_bad"),
                  InvalidArgument);
  cfg.ablation = Ablation::no_simple;  // still needs the pool
  CHECK_THROWS_AS(Trainer(cfg, splits, nullptr, "/tmp/medsum_run_bad"),
                  InvalidArgument);
  cfg.ablation = Ablation::no_both;
  SplitSet empty;
  CHECK_THROWS_AS(Trainer(cfg, empty, nullptr, "/tmp/medsum_run_bad"),
                  InvalidArgument);
}

TEST_CASE("full objective runs and logs every enabled term") {
  SplitSet splits = toy_splits(8);
  NegativePool pool = toy_pool(splits, 4);
  TrainConfig cfg = toy_config();
  const std::string dir = "/tmp/medsum_run_full";
  std::filesystem::remove_all(dir);
  Trainer trainer(cfg, splits, &pool, dir);
  TrainResult result = trainer.train();

  // 8 pairs, batch 4, 2 epochs: 4 steps
  REQUIRE(result.steps.size() == 4);
  CHECK(result.epochs.size() == 2);
  CHECK(result.pool_reads > 0);
  CHECK(result.queue_ops > 0);
  // queue is empty at the very first step, so L_scl starts at step 2
  CHECK_FALSE(result.steps[0].l_scl.has_value());
  CHECK(result.steps[1].l_scl.has_value());
  for (const auto& s : result.steps) {
    CHECK(s.l_hcl.has_value());
    const double expected = s.l_ce + s.l_scl.value_or(0.0) +
                            s.l_hcl.value_or(0.0);
    CHECK(s.l_total == doctest::Approx(expected).epsilon(1e-12));
  }
  // epoch similarity tracking fires for both negative families
  CHECK(result.epochs[0].sim_hard.has_value());
  CHECK(result.epochs[1].sim_simple.has_value());

  CHECK(std::filesystem::exists(result.best_manifest));
  CHECK(std::filesystem::exists(result.best_tensors));
  CHECK(std::filesystem::exists(dir + "/steps.jsonl"));
  CHECK(std::filesystem::exists(dir + "/epochs.jsonl"));

  // the best checkpoint reloads into a usable model
  Summarizer model =
      Summarizer::load_checkpoint(result.best_manifest, result.best_tensors);
  CHECK_NOTHROW(model.generate_greedy(splits.train.pairs[0].chq));
}

TEST_CASE("ablations never touch the disabled machinery") {
  SplitSet splits = toy_splits(8);
  NegativePool pool = toy_pool(splits, 4);

  SUBCASE("-s never reads or writes the queue") {
    TrainConfig cfg = toy_config();
    cfg.ablation = Ablation::no_simple;
    Trainer t(cfg, splits, &pool, "/tmp/medsum_run_ns");
    auto r = t.train();
    CHECK(r.queue_ops == 0);
    CHECK(r.pool_reads > 0);
    for (const auto& s : r.steps) CHECK_FALSE(s.l_scl.has_value());
    for (const auto& e : r.epochs) CHECK_FALSE(e.sim_simple.has_value());
  }
  SUBCASE("-h never reads the pool") {
    TrainConfig cfg = toy_config();
    cfg.ablation = Ablation::no_hard;
    Trainer t(cfg, splits, nullptr, "/tmp/medsum_run_nh");
    auto r = t.train();
    CHECK(r.pool_reads == 0);
    CHECK(r.queue_ops > 0);
    for (const auto& s : r.steps) CHECK_FALSE(s.l_hcl.has_value());
  }
  SUBCASE("-s-h touches neither") {
    TrainConfig cfg = toy_config();
    cfg.ablation = Ablation::no_both;
    Trainer t(cfg, splits, nullptr, "/tmp/medsum_run_nb");
    auto r = t.train();
    CHECK(r.queue_ops == 0);
    CHECK(r.pool_reads == 0);
    for (const auto& s : r.steps) {
      CHECK_FALSE(s.l_scl.has_value());
      CHECK_FALSE(s.l_hcl.has_value());
      CHECK(s.l_total == doctest::Approx(s.l_ce));
    }
  }
}

TEST_CASE("per-anchor hard draws also train") {
  SplitSet splits = toy_splits(8);
  NegativePool pool = toy_pool(splits, 4);
  TrainConfig cfg = toy_config();
  cfg.hard_draw = "per-anchor";
  cfg.epochs = 1;
  Trainer t(cfg, splits, &pool, "/tmp/medsum_run_pa");
  auto r = t.train();
  for (const auto& s : r.steps) CHECK(s.l_hcl.has_value());
}

TEST_CASE("training twice from the same seed is byte-identical") {
  SplitSet splits = toy_splits(8);
  NegativePool pool = toy_pool(splits, 4);
  const std::string d1 = "/tmp/medsum_run_det1";
  const std::string d2 = "/tmp/medsum_run_det2";
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);

  TrainConfig cfg = toy_config();
  auto r1 = Trainer(cfg, splits, &pool, d1).train();
  auto r2 = Trainer(cfg, splits, &pool, d2).train();

  CHECK(read_file(d1 + "/steps.jsonl") == read_file(d2 + "/steps.jsonl"));
  CHECK(read_file(d1 + "/epochs.jsonl") == read_file(d2 + "/epochs.jsonl"));
  CHECK(read_file(r1.best_tensors) == read_file(r2.best_tensors));
  CHECK(read_file(r1.best_manifest) == read_file(r2.best_manifest));

  SUBCASE("a different seed changes the trajectory") {
    TrainConfig other = cfg;
    other.seed = 43;
    const std::string d3 = "/tmp/medsum_run_det3";
    std::filesystem::remove_all(d3);
    auto r3 = Trainer(other, splits, &pool, d3).train();
    CHECK(read_file(r1.best_tensors) != read_file(r3.best_tensors));
  }
}

TEST_CASE("plain cross-entropy training memorizes a tiny split") {
  SplitSet splits = toy_splits(2);
  TrainConfig cfg = toy_config();
  cfg.ablation = Ablation::no_both;
  cfg.batch_size = 2;
  cfg.learning_rate = 5e-3;
  cfg.epochs = 60;
  cfg.patience = 60;
  Trainer t(cfg, splits, nullptr, "/tmp/medsum_run_memo");
  auto r = t.train();
  CHECK(r.best_dev_rouge1 > 0.9);
  CHECK(r.steps.back().l_ce < r.steps.front().l_ce);
}

TEST_CASE("early stopping halts after patience stale epochs") {
  SplitSet splits = toy_splits(8);
  TrainConfig cfg = toy_config();
  cfg.ablation = Ablation::no_both;
  cfg.learning_rate = 1e-12;  // frozen model: dev score never improves
  cfg.epochs = 10;
  cfg.patience = 2;
  Trainer t(cfg, splits, nullptr, "/tmp/medsum_run_stale");
  auto r = t.train();
  CHECK(r.epochs.size() == 3);  // best at 1, stale at 2 and 3
  CHECK(r.best_epoch == 1);
}

TEST_CASE("divergence raises with a pointer to the last checkpoint") {
  SplitSet splits = toy_splits(4);
  TrainConfig cfg = toy_config();
  cfg.ablation = Ablation::no_both;
  cfg.learning_rate = 1e150;  // guaranteed overflow
  cfg.epochs = 5;
  const std::string dir = "/tmp/medsum_run_diverge";
  std::filesystem::remove_all(dir);
  Trainer t(cfg, splits, nullptr, dir);
  try {
    t.train();
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.step >= 1);
    CHECK(std::filesystem::exists(e.last_good_checkpoint));
    CHECK(std::string(e.what()).find("non-finite loss") != std::string::npos);
  }
}

TEST_CASE("evaluate_model scores a trained checkpoint") {
  SplitSet splits = toy_splits(4);
  TrainConfig cfg = toy_config();
  cfg.ablation = Ablation::no_both;
  cfg.epochs = 1;
  Trainer t(cfg, splits, nullptr, "/tmp/medsum_run_eval");
  auto r = t.train();
  Summarizer model = Summarizer::load_checkpoint(r.best_manifest,
                                                 r.best_tensors);
  LexiconMatcher m(toy_lexicon());
  Dataset test = splits.train;
  test.name = "probe";
  auto report = evaluate_model(model, test, m);
  CHECK(report.samples == 4);
  CHECK(report.rouge1_f1 >= 0.0);
}
