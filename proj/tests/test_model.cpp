#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "medsum/model.hpp"

using namespace medsum;
using ad::Mat;
using ad::Var;

namespace {

Dataset toy_dataset() {
  Dataset ds;
  const char* rows[][2] = {
      {"my daughter has asthma and needs help", "how is asthma treated"},
      {"i was prescribed metformin last week", "what does metformin do"},
      {"painful shingles rash on my back", "how long does shingles last"},
      {"worried about blood pressure readings", "what is normal blood pressure"},
  };
  int i = 0;
  for (const auto& r : rows) {
    QuestionPair p;
    p.id = "m" + std::to_string(i++);
    p.chq = r[0];
    p.faq = r[1];
    ds.pairs.push_back(p);
  }
  return ds;
}

ModelConfig small_config() {
  ModelConfig c;
  c.embedding_dim = 16;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.attention_heads = 2;
  c.feed_forward_dim = 32;
  c.max_source_len = 16;
  c.max_target_len = 12;
  return c;
}

}  // namespace

TEST_CASE("vocabulary round trips and reserves specials") {
  Vocabulary v = Vocabulary::build(toy_dataset());
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kBos) == "<bos>");
  CHECK(v.token(Vocabulary::kEos) == "<eos>");
  CHECK(v.token(Vocabulary::kUnk) == "<unk>");
  CHECK(v.id("asthma") >= 4);
  CHECK(v.id("notinthedata") == Vocabulary::kUnk);

  auto ids = v.encode("How is ASTHMA treated", 16);
  CHECK(ids.front() == Vocabulary::kBos);
  CHECK(ids.back() == Vocabulary::kEos);
  CHECK(v.decode(ids) == "how is asthma treated");

  // truncation leaves room for EOS
  auto trunc = v.encode("how is asthma treated", 4);
  CHECK(trunc.size() == 4);
  CHECK(trunc.back() == Vocabulary::kEos);
}

TEST_CASE("vocabulary is deterministic in content, not input order") {
  Dataset ds = toy_dataset();
  Vocabulary v1 = Vocabulary::build(ds);
  std::reverse(ds.pairs.begin(), ds.pairs.end());
  Vocabulary v2 = Vocabulary::build(ds);
  CHECK(v1.content_hash() == v2.content_hash());
  CHECK(v1.size() == v2.size());
}

TEST_CASE("config validation") {
  ModelConfig c = small_config();
  c.attention_heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = small_config();
  c.embedding_dim = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("query and key encoders start identical") {
  Summarizer model(small_config(), Vocabulary::build(toy_dataset()), 42);
  auto ids = model.tokenize_source("asthma help needed");
  Mat q = model.encode(ids, EncoderSide::query).value();
  Mat k = model.encode(ids, EncoderSide::key).value();
  CHECK((q - k).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("zero-layer encoder equals embeddings plus positions") {
  ModelConfig c = small_config();
  c.encoder_layers = 0;
  Vocabulary v = Vocabulary::build(toy_dataset());
  Summarizer model(c, v, 42);
  auto ids = model.tokenize_source("asthma treated");
  Mat enc = model.encode(ids, EncoderSide::query).value();
  const Mat& table = model.params().at("embed").value();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = 0; j < c.embedding_dim; ++j) {
      const double pos_angle =
          static_cast<double>(i) /
          std::pow(10000.0, 2.0 * static_cast<double>(j / 2) /
                                static_cast<double>(c.embedding_dim));
      const double pos = j % 2 == 0 ? std::sin(pos_angle)
                                    : std::cos(pos_angle);
      CHECK(enc(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) ==
            doctest::Approx(table(ids[i], static_cast<Eigen::Index>(j)) +
                            pos));
    }
  }
}

TEST_CASE("padding masked out of attention and pooling changes nothing") {
  Summarizer model(small_config(), Vocabulary::build(toy_dataset()), 42);
  auto ids = model.tokenize_source("how is asthma treated");
  std::vector<bool> mask(ids.size(), true);

  Mat plain = Summarizer::pool(model.encode(ids, EncoderSide::query),
                               mask).value();
  auto padded = ids;
  auto pad_mask = mask;
  for (int i = 0; i < 3; ++i) {
    padded.push_back(Vocabulary::kPad);
    pad_mask.push_back(false);
  }
  Mat with_pad =
      Summarizer::pool(model.encode(padded, EncoderSide::query, pad_mask),
                       pad_mask)
          .value();
  CHECK((plain - with_pad).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("cross entropy of a uniform head is log vocab size") {
  Vocabulary v = Vocabulary::build(toy_dataset());
  Summarizer model(small_config(), v, 42);
  // zeroed embedding output weights and bias give uniform logits
  model.params().at("embed").value().setZero();
  model.params().at("out_bias").value().setZero();
  auto chq = model.tokenize_source("anything");
  auto faq = model.tokenize_target("how is asthma treated");
  const double ce = model.cross_entropy(chq, faq).scalar();
  CHECK(ce == doctest::Approx(std::log(static_cast<double>(v.size())))
                  .epsilon(1e-9));
}

TEST_CASE("cross entropy matches an independent log-softmax oracle") {
  Summarizer model(small_config(), Vocabulary::build(toy_dataset()), 42);
  auto chq = model.tokenize_source("painful shingles rash");
  auto faq = model.tokenize_target("how long does shingles last");
  std::vector<int> dec_input(faq.begin(), faq.end() - 1);
  std::vector<int> targets(faq.begin() + 1, faq.end());

  Var memory = model.encode(chq, EncoderSide::query);
  Mat z = model.logits(model.decode_hidden(memory, dec_input)).value();
  double expected = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double mx = z.row(i).maxCoeff();
    double denom = 0.0;
    for (Eigen::Index j = 0; j < z.cols(); ++j)
      denom += std::exp(z(i, j) - mx);
    expected -= z(i, targets[static_cast<std::size_t>(i)]) - mx -
                std::log(denom);
  }
  expected /= static_cast<double>(targets.size());
  CHECK(model.cross_entropy(chq, faq).scalar() ==
        doctest::Approx(expected).epsilon(1e-5));

  SUBCASE("sum mode is token count times mean mode") {
    CHECK(model.cross_entropy(chq, faq, false).scalar() ==
          doctest::Approx(expected * targets.size()).epsilon(1e-5));
  }
}

TEST_CASE("teacher forcing on a memorized pair reaches near-zero loss") {
  // cross_entropy must be trainable: take gradient steps on one pair and
  // watch the loss collapse
  Vocabulary v = Vocabulary::build(toy_dataset());
  Summarizer model(small_config(), v, 42);
  auto chq = model.tokenize_source("my daughter has asthma and needs help");
  auto faq = model.tokenize_target("how is asthma treated");
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 150; ++step) {
    Var loss = model.cross_entropy(chq, faq);
    if (step == 0) first = loss.scalar();
    last = loss.scalar();
    loss.backward();
    for (auto& [name, p] : model.params().params) {
      if (p.node()->grad.size() != 0) {
        p.value() -= 0.05 * p.grad();
        p.zero_grad();
      }
    }
  }
  CHECK(last < 0.1);
  CHECK(last < first);
}

TEST_CASE("momentum update interpolates between key and query") {
  Summarizer model(small_config(), Vocabulary::build(toy_dataset()), 42);
  // push the query encoder away from the key copy
  for (const auto& name : model.encoder_param_names())
    model.params().at(name).value().array() += 1.0;

  const Mat k0 = model.key_params().at("embed").value();
  const Mat q = model.params().at("embed").value();

  SUBCASE("m = 0 copies the query weights") {
    model.momentum_update(0.0);
    CHECK((model.key_params().at("embed").value() - q)
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
  SUBCASE("equal weights are a fixed point") {
    model.momentum_update(0.0);
    const Mat before = model.key_params().at("embed").value();
    model.momentum_update(0.999);
    CHECK((model.key_params().at("embed").value() - before)
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
  SUBCASE("one step at m is the exact convex combination") {
    model.momentum_update(0.999);
    Mat expected = 0.999 * k0 + 0.001 * q;
    CHECK((model.key_params().at("embed").value() - expected)
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
  SUBCASE("T steps contract the gap by m^T") {
    const double gap0 = (k0 - q).cwiseAbs().maxCoeff();
    for (int t = 0; t < 50; ++t) model.momentum_update(0.9);
    const double gap = (model.key_params().at("embed").value() - q)
                           .cwiseAbs()
                           .maxCoeff();
    CHECK(gap == doctest::Approx(gap0 * std::pow(0.9, 50)).epsilon(1e-9));
  }
  SUBCASE("m outside [0, 1) is rejected") {
    CHECK_THROWS_AS(model.momentum_update(1.0), InvalidArgument);
    CHECK_THROWS_AS(model.momentum_update(-0.1), InvalidArgument);
  }
}

TEST_CASE("momentum update never touches decoder or head parameters") {
  Summarizer model(small_config(), Vocabulary::build(toy_dataset()), 42);
  for (const auto& name : model.encoder_param_names()) {
    CHECK(name.rfind("dec.", 0) != 0);
    CHECK(name != "out_bias");
  }
  // key store holds exactly the encoder-side names
  CHECK(model.key_params().params.size() ==
        model.encoder_param_names().size());
}

TEST_CASE("key representations are unit length and detached") {
  Summarizer model(small_config(), Vocabulary::build(toy_dataset()), 42);
  Eigen::RowVectorXd k = model.key_representation("asthma help");
  CHECK(k.norm() == doctest::Approx(1.0));
  // key-path encode must not create gradient-requiring nodes
  auto ids = model.tokenize_source("asthma help");
  CHECK_FALSE(model.encode(ids, EncoderSide::key).requires_grad());
  CHECK(model.encode(ids, EncoderSide::query).requires_grad());
}

TEST_CASE("beam width one reproduces greedy decoding") {
  Summarizer model(small_config(), Vocabulary::build(toy_dataset()), 42);
  for (const auto& pair : toy_dataset().pairs)
    CHECK(model.generate_beam(pair.chq, 1) == model.generate_greedy(pair.chq));
  CHECK_THROWS_AS(model.generate_beam("x", 0), InvalidArgument);
}

TEST_CASE("decoder pooling mode produces a different representation") {
  Vocabulary v = Vocabulary::build(toy_dataset());
  ModelConfig enc_cfg = small_config();
  ModelConfig dec_cfg = small_config();
  dec_cfg.pool_source = PoolSource::decoder;
  Summarizer a(enc_cfg, v, 42);
  Summarizer b(dec_cfg, v, 42);
  auto ids = a.tokenize_source("asthma help");
  Mat qa = a.query_representation(ids).value();
  Mat qb = b.query_representation(ids).value();
  CHECK((qa - qb).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("checkpoints round trip bit-exactly") {
  Vocabulary v = Vocabulary::build(toy_dataset());
  Summarizer model(small_config(), v, 42);
  // desync the stores so the round trip covers both
  for (const auto& name : model.encoder_param_names())
    model.params().at(name).value().array() += 0.25;

  const std::string mpath = "/tmp/medsum_ckpt.manifest.json";
  const std::string tpath = "/tmp/medsum_ckpt.tensors.bin";
  model.save_checkpoint(mpath, tpath, 7);
  Summarizer loaded = Summarizer::load_checkpoint(mpath, tpath);

  for (const auto& [name, p] : model.params().params) {
    const Mat& got = loaded.params().at(name).value();
    CHECK((got - p.value()).cwiseAbs().maxCoeff() == 0.0);
  }
  for (const auto& name : model.encoder_param_names()) {
    CHECK((loaded.key_params().at(name).value() -
           model.key_params().at(name).value())
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
  // generation behaviour carries over exactly
  CHECK(loaded.generate_greedy("asthma help") ==
        model.generate_greedy("asthma help"));

  SUBCASE("vocab hash mismatch is rejected") {
    std::ifstream in(mpath);
    json manifest = json::parse(in);
    in.close();
    manifest["vocab_hash"] = 12345u;
    std::ofstream out(mpath);
    out << manifest.dump(2) << '\n';
    out.close();
    CHECK_THROWS_AS(Summarizer::load_checkpoint(mpath, tpath), FormatError);
  }
  std::remove(mpath.c_str());
  std::remove(tpath.c_str());
}

TEST_CASE("model construction is deterministic in the seed") {
  Vocabulary v = Vocabulary::build(toy_dataset());
  Summarizer a(small_config(), v, 42);
  Summarizer b(small_config(), v, 42);
  Summarizer c(small_config(), v, 43);
  CHECK((a.params().at("embed").value() - b.params().at("embed").value())
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK((a.params().at("embed").value() - c.params().at("embed").value())
            .cwiseAbs()
            .maxCoeff() > 0.0);
}
