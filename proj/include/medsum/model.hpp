#pragma once

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "medsum/ad.hpp"
#include "medsum/common.hpp"
#include "medsum/corpus.hpp"
#include "medsum/rng.hpp"
#include "medsum/text.hpp"

namespace medsum {

// Word-level vocabulary over normalized whitespace tokens.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocabulary() { init_specials(); }

  static Vocabulary build(const Dataset& train) {
    std::set<std::string> tokens;
    for (const auto& pair : train.pairs) {
      for (auto& t : split_whitespace(normalize_text(pair.chq)))
        tokens.insert(std::move(t));
      for (auto& t : split_whitespace(normalize_text(pair.faq)))
        tokens.insert(std::move(t));
    }
    Vocabulary v;
    for (const auto& t : tokens) v.add(t);
    return v;
  }

  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    for (const auto& t : tokens) v.add(t);
    return v;
  }

  int id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }

  // Tokens after the 4 specials, in vocabulary order.
  std::vector<std::string> payload_tokens() const {
    return {tokens_.begin() + 4, tokens_.end()};
  }

  std::uint64_t content_hash() const {
    std::string joined;
    for (const auto& t : tokens_) joined += t + '\n';
    return fnv1a(joined);
  }

  std::vector<int> encode(const std::string& text,
                          std::size_t max_len) const {
    std::vector<int> ids{kBos};
    for (const auto& t : split_whitespace(normalize_text(text))) {
      if (ids.size() + 1 >= max_len) break;  // leave room for EOS
      ids.push_back(id(t));
    }
    ids.push_back(kEos);
    return ids;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int i : ids) {
      if (i == kPad || i == kBos || i == kEos) continue;
      if (!out.empty()) out += ' ';
      out += token(i);
    }
    return out;
  }

 private:
  void init_specials() {
    for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(t);
  }
  void add(const std::string& t) {
    if (index_.count(t)) return;
    index_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

enum class PoolSource { encoder, decoder };

struct ModelConfig {
  std::size_t vocab_size = 0;  // set from the vocabulary
  std::size_t embedding_dim = 64;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 1;
  std::size_t attention_heads = 4;
  std::size_t feed_forward_dim = 128;
  std::size_t max_source_len = 64;
  std::size_t max_target_len = 24;
  PoolSource pool_source = PoolSource::encoder;

  void validate() const {
    if (embedding_dim == 0 || attention_heads == 0 || feed_forward_dim == 0 ||
        max_source_len < 3 || max_target_len < 3)
      throw InvalidArgument("model config: all dims must be >= 1");
    if (embedding_dim % attention_heads != 0)
      throw InvalidArgument(
          "model config: embedding_dim must be divisible by attention_heads");
  }
};

enum class EncoderSide { query, key };

// Named parameter collection. std::map keeps iteration deterministic,
// which checkpoint layout and the momentum update rely on.
struct ParamStore {
  std::map<std::string, ad::Var> params;

  ad::Var& at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end())
      throw InvalidArgument("unknown parameter: " + name);
    return it->second;
  }
  const ad::Var& at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end())
      throw InvalidArgument("unknown parameter: " + name);
    return it->second;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : params) n += v.value().size();
    return n;
  }

  void zero_grads() {
    for (auto& [name, v] : params)
      if (v.node()->grad.size() != 0) v.zero_grad();
  }
};

namespace detail {

inline ad::Mat sinusoidal_positions(std::size_t max_len, std::size_t dim) {
  ad::Mat pe(static_cast<Eigen::Index>(max_len),
             static_cast<Eigen::Index>(dim));
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, 2.0 * static_cast<double>(i / 2) /
                                static_cast<double>(dim));
      pe(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(i)) =
          i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

inline ad::Mat glorot(std::size_t rows, std::size_t cols, CounterRng& rng) {
  const double r =
      std::sqrt(6.0 / static_cast<double>(rows + cols));
  ad::Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = rng.next_double(-r, r);
  return m;
}

}  // namespace detail

// Toy transformer encoder-decoder with twin encoders: the query encoder is
// gradient-trained; the key encoder is a value copy advanced only by the
// momentum update. Stands in for a pretrained backbone at desk scale; see
// the backbone adapter notes in the README for full-scale substitution.
class Summarizer {
 public:
  Summarizer(ModelConfig config, Vocabulary vocab, std::uint64_t seed)
      : config_(config), vocab_(std::move(vocab)) {
    config_.vocab_size = vocab_.size();
    config_.validate();
    init_params(seed);
    key_params_ = clone_as_constants(params_, encoder_param_names_);
    positions_ = detail::sinusoidal_positions(
        std::max(config_.max_source_len, config_.max_target_len),
        config_.embedding_dim);
  }

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  ParamStore& key_params() { return key_params_; }
  const std::vector<std::string>& encoder_param_names() const {
    return encoder_param_names_;
  }

  std::vector<int> tokenize_source(const std::string& text) const {
    return vocab_.encode(text, config_.max_source_len);
  }
  std::vector<int> tokenize_target(const std::string& text) const {
    return vocab_.encode(text, config_.max_target_len);
  }

  // Per-token hidden states, (len x d). `pad_mask[i] == false` marks
  // padding positions, which are excluded from attention keys.
  ad::Var encode(const std::vector<int>& ids, EncoderSide side,
                 const std::vector<bool>& pad_mask = {}) const {
    const ParamStore& store =
        side == EncoderSide::query ? params_ : key_params_;
    ad::Var x = embed(store, ids);
    for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
      const std::string p = "enc.l" + std::to_string(l) + ".";
      ad::Var h = ad::layer_norm(x, store.at(p + "ln1.g"),
                                 store.at(p + "ln1.b"));
      x = ad::add(x, attention(store, p + "attn.", h, h, false, pad_mask));
      ad::Var h2 = ad::layer_norm(x, store.at(p + "ln2.g"),
                                  store.at(p + "ln2.b"));
      x = ad::add(x, feed_forward(store, p + "ffn.", h2));
    }
    return x;
  }

  // Pooled sentence representation: mean over unmasked positions.
  static ad::Var pool(const ad::Var& hidden,
                      const std::vector<bool>& mask = {}) {
    std::vector<double> w;
    for (bool b : mask) w.push_back(b ? 1.0 : 0.0);
    return ad::mean_rows(hidden, w);
  }

  // Query-path representation of a text; gradients flow into theta_q.
  ad::Var query_representation(const std::vector<int>& ids) const {
    return representation(ids, EncoderSide::query);
  }

  // Key-path representation as a detached, L2-normalized vector.
  Eigen::RowVectorXd key_representation(const std::vector<int>& ids) const {
    ad::Var rep = representation(ids, EncoderSide::key);
    Eigen::RowVectorXd v = rep.value().row(0);
    const double n = v.norm();
    if (n == 0.0) throw InvalidArgument("zero key representation");
    return v / n;
  }

  Eigen::RowVectorXd key_representation(const std::string& text) const {
    return key_representation(tokenize_source(text));
  }

  // Decoder hidden states under teacher forcing, (len x d).
  ad::Var decode_hidden(const ad::Var& memory,
                        const std::vector<int>& input_ids) const {
    const ParamStore& store = params_;
    ad::Var x = embed(store, input_ids);
    for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
      const std::string p = "dec.l" + std::to_string(l) + ".";
      ad::Var h = ad::layer_norm(x, store.at(p + "ln1.g"),
                                 store.at(p + "ln1.b"));
      x = ad::add(x, attention(store, p + "self.", h, h, true));
      ad::Var h2 = ad::layer_norm(x, store.at(p + "ln2.g"),
                                  store.at(p + "ln2.b"));
      x = ad::add(x, attention(store, p + "cross.", h2, memory, false));
      ad::Var h3 = ad::layer_norm(x, store.at(p + "ln3.g"),
                                  store.at(p + "ln3.b"));
      x = ad::add(x, feed_forward(store, p + "ffn.", h3));
    }
    return x;
  }

  // Output projection is tied to the embedding table.
  ad::Var logits(const ad::Var& decoder_hidden) const {
    return ad::add_row_broadcast(
        ad::matmul(decoder_hidden, ad::transpose(params_.at("embed"))),
        params_.at("out_bias"));
  }

  // Teacher-forced negative log-likelihood of the reference tokens.
  ad::Var cross_entropy(const std::vector<int>& chq_ids,
                        const std::vector<int>& faq_ids,
                        bool mean_over_tokens = true) const {
    if (faq_ids.size() < 2)
      throw InvalidArgument("cross_entropy: empty target sequence");
    std::vector<int> dec_input(faq_ids.begin(), faq_ids.end() - 1);
    std::vector<int> targets(faq_ids.begin() + 1, faq_ids.end());
    ad::Var memory = encode(chq_ids, EncoderSide::query);
    ad::Var hidden = decode_hidden(memory, dec_input);
    return ad::nll_loss(logits(hidden), targets, mean_over_tokens);
  }

  // theta_k <- m * theta_k + (1 - m) * theta_q, elementwise.
  void momentum_update(double m) {
    if (m < 0.0 || m >= 1.0)
      throw InvalidArgument("momentum coefficient must be in [0, 1)");
    for (const auto& name : encoder_param_names_) {
      ad::Mat& k = key_params_.at(name).value();
      const ad::Mat& q = params_.at(name).value();
      if (k.rows() != q.rows() || k.cols() != q.cols())
        throw InvalidArgument("momentum update: shape mismatch on " + name);
      k = m * k + (1.0 - m) * q;
    }
  }

  std::string generate_greedy(const std::string& chq) const {
    ad::Var memory = encode(tokenize_source(chq), EncoderSide::query);
    std::vector<int> out{Vocabulary::kBos};
    while (out.size() < config_.max_target_len) {
      ad::Var hidden = decode_hidden(memory, out);
      Eigen::RowVectorXd row =
          logits(hidden).value().row(hidden.value().rows() - 1);
      int best = 0;
      for (int i = 1; i < row.size(); ++i)
        if (row(i) > row(best)) best = i;
      if (best == Vocabulary::kEos) break;
      out.push_back(best);
    }
    return vocab_.decode(out);
  }

  // Beam search with length-normalized log-probability; ties broken by
  // earlier finish.
  std::string generate_beam(const std::string& chq, std::size_t width) const {
    if (width == 0) throw InvalidArgument("beam width must be >= 1");
    ad::Var memory = encode(tokenize_source(chq), EncoderSide::query);
    struct Hyp {
      std::vector<int> ids;
      double logprob = 0.0;
      bool finished = false;
      std::size_t finish_step = 0;
      double score() const {
        const std::size_t len = std::max<std::size_t>(ids.size() - 1, 1);
        return logprob / static_cast<double>(len);
      }
    };
    std::vector<Hyp> beam{{{Vocabulary::kBos}, 0.0, false, 0}};
    std::vector<Hyp> finished;
    for (std::size_t step = 1; step < config_.max_target_len; ++step) {
      std::vector<Hyp> next;
      for (const auto& hyp : beam) {
        ad::Var hidden = decode_hidden(memory, hyp.ids);
        Eigen::RowVectorXd row =
            logits(hidden).value().row(hidden.value().rows() - 1);
        Eigen::ArrayXd lp = row.transpose().array();
        const double mx = lp.maxCoeff();
        lp = lp - (mx + std::log((lp - mx).exp().sum()));
        std::vector<int> order(static_cast<std::size_t>(lp.size()));
        for (std::size_t i = 0; i < order.size(); ++i)
          order[i] = static_cast<int>(i);
        std::partial_sort(order.begin(),
                          order.begin() + std::min(order.size(),
                                                   width + 1),
                          order.end(), [&](int a, int b) {
                            if (lp(a) != lp(b)) return lp(a) > lp(b);
                            return a < b;
                          });
        std::size_t taken = 0;
        for (int tok : order) {
          if (taken >= width + 1) break;
          Hyp h = hyp;
          h.logprob += lp(tok);
          if (tok == Vocabulary::kEos) {
            h.finished = true;
            h.finish_step = step;
            finished.push_back(std::move(h));
          } else {
            h.ids.push_back(tok);
            next.push_back(std::move(h));
          }
          ++taken;
        }
      }
      auto better = [](const Hyp& a, const Hyp& b) {
        if (a.score() != b.score()) return a.score() > b.score();
        return a.finish_step < b.finish_step;
      };
      std::sort(next.begin(), next.end(), better);
      if (next.size() > width) next.resize(width);
      beam = std::move(next);
      if (beam.empty()) break;
    }
    for (auto& hyp : beam) {  // force-finish anything still open
      hyp.finished = true;
      hyp.finish_step = config_.max_target_len;
      finished.push_back(std::move(hyp));
    }
    if (finished.empty()) return "";
    const Hyp* best = &finished[0];
    for (const auto& h : finished) {
      if (h.score() > best->score() ||
          (h.score() == best->score() && h.finish_step < best->finish_step))
        best = &h;
    }
    return vocab_.decode(best->ids);
  }

  std::string generate(const std::string& chq, std::size_t beam_width = 1) const {
    return beam_width <= 1 ? generate_greedy(chq)
                           : generate_beam(chq, beam_width);
  }

  void save_checkpoint(const std::string& manifest_path,
                       const std::string& tensors_path,
                       std::size_t step) const {
    json manifest{{"config",
                   {{"vocab_size", config_.vocab_size},
                    {"embedding_dim", config_.embedding_dim},
                    {"encoder_layers", config_.encoder_layers},
                    {"decoder_layers", config_.decoder_layers},
                    {"attention_heads", config_.attention_heads},
                    {"feed_forward_dim", config_.feed_forward_dim},
                    {"max_source_len", config_.max_source_len},
                    {"max_target_len", config_.max_target_len},
                    {"pool_source", config_.pool_source == PoolSource::encoder
                                        ? "encoder"
                                        : "decoder"}}},
                  {"vocab", vocab_.payload_tokens()},
                  {"vocab_hash", vocab_.content_hash()},
                  {"step", step},
                  {"backbone", "toy"}};
    std::ofstream mf(manifest_path, std::ios::binary);
    if (!mf) throw FormatError("cannot write manifest: " + manifest_path);
    mf << manifest.dump(2) << '\n';

    std::ofstream tf(tensors_path, std::ios::binary);
    if (!tf) throw FormatError("cannot write tensors: " + tensors_path);
    auto write_store = [&](const ParamStore& store,
                           const std::string& prefix) {
      for (const auto& [name, v] : store.params)
        write_tensor(tf, prefix + name, v.value());
    };
    write_store(params_, "");
    write_store(key_params_, "key.");
  }

  static Summarizer load_checkpoint(const std::string& manifest_path,
                                    const std::string& tensors_path) {
    std::ifstream mf(manifest_path, std::ios::binary);
    if (!mf) throw FormatError("cannot open manifest: " + manifest_path);
    json manifest = json::parse(mf, nullptr, true);
    const auto& c = manifest.at("config");
    ModelConfig config;
    config.embedding_dim = c.at("embedding_dim");
    config.encoder_layers = c.at("encoder_layers");
    config.decoder_layers = c.at("decoder_layers");
    config.attention_heads = c.at("attention_heads");
    config.feed_forward_dim = c.at("feed_forward_dim");
    config.max_source_len = c.at("max_source_len");
    config.max_target_len = c.at("max_target_len");
    config.pool_source = c.value("pool_source", "encoder") == "decoder"
                             ? PoolSource::decoder
                             : PoolSource::encoder;
    Vocabulary vocab = Vocabulary::from_tokens(
        manifest.at("vocab").get<std::vector<std::string>>());
    if (manifest.contains("vocab_hash") &&
        manifest.at("vocab_hash").get<std::uint64_t>() !=
            vocab.content_hash())
      throw FormatError("checkpoint vocab hash mismatch");

    Summarizer model(config, std::move(vocab), /*seed=*/0);
    std::ifstream tf(tensors_path, std::ios::binary);
    if (!tf) throw FormatError("cannot open tensors: " + tensors_path);
    std::string name;
    ad::Mat value;
    while (read_tensor(tf, name, value)) {
      ParamStore* store = &model.params_;
      std::string key = name;
      if (name.rfind("key.", 0) == 0) {
        store = &model.key_params_;
        key = name.substr(4);
      }
      ad::Mat& dst = store->at(key).value();
      if (dst.rows() != value.rows() || dst.cols() != value.cols())
        throw FormatError("checkpoint tensor shape mismatch: " + name);
      dst = value;
    }
    return model;
  }

 private:
  ad::Var representation(const std::vector<int>& ids,
                         EncoderSide side) const {
    ad::Var enc = encode(ids, side);
    if (config_.pool_source == PoolSource::encoder) return pool(enc);
    return pool(decode_hidden(enc, ids));
  }

  ad::Var embed(const ParamStore& store, const std::vector<int>& ids) const {
    ad::Var x = ad::gather_rows(store.at("embed"), ids);
    ad::Mat pos = positions_.topRows(static_cast<Eigen::Index>(ids.size()));
    return ad::add(x, ad::Var::constant(std::move(pos)));
  }

  ad::Var attention(const ParamStore& store, const std::string& prefix,
                    const ad::Var& q_in, const ad::Var& kv_in, bool causal,
                    const std::vector<bool>& key_pad_mask = {}) const {
    const Eigen::Index d =
        static_cast<Eigen::Index>(config_.embedding_dim);
    const Eigen::Index heads =
        static_cast<Eigen::Index>(config_.attention_heads);
    const Eigen::Index dh = d / heads;
    ad::Var q = ad::matmul(q_in, store.at(prefix + "wq"));
    ad::Var k = ad::matmul(kv_in, store.at(prefix + "wk"));
    ad::Var v = ad::matmul(kv_in, store.at(prefix + "wv"));

    ad::Mat mask =
        ad::Mat::Zero(q_in.value().rows(), kv_in.value().rows());
    if (causal) {
      for (Eigen::Index i = 0; i < mask.rows(); ++i)
        for (Eigen::Index j = i + 1; j < mask.cols(); ++j)
          mask(i, j) = -1e9;
    }
    if (!key_pad_mask.empty()) {
      if (static_cast<Eigen::Index>(key_pad_mask.size()) != mask.cols())
        throw InvalidArgument("attention: pad mask length mismatch");
      for (Eigen::Index j = 0; j < mask.cols(); ++j)
        if (!key_pad_mask[static_cast<std::size_t>(j)])
          mask.col(j).setConstant(-1e9);
    }
    ad::Var mask_var = ad::Var::constant(std::move(mask));

    std::vector<ad::Var> head_outputs;
    for (Eigen::Index h = 0; h < heads; ++h) {
      ad::Var qh = ad::slice_cols(q, h * dh, dh);
      ad::Var kh = ad::slice_cols(k, h * dh, dh);
      ad::Var vh = ad::slice_cols(v, h * dh, dh);
      ad::Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)),
                                 1.0 / std::sqrt(static_cast<double>(dh)));
      scores = ad::add(scores, mask_var);
      head_outputs.push_back(ad::matmul(ad::softmax_rows(scores), vh));
    }
    return ad::matmul(ad::concat_cols(head_outputs),
                      store.at(prefix + "wo"));
  }

  ad::Var feed_forward(const ParamStore& store, const std::string& prefix,
                       const ad::Var& x) const {
    ad::Var h = ad::add_row_broadcast(ad::matmul(x, store.at(prefix + "w1")),
                                      store.at(prefix + "b1"));
    h = ad::gelu(h);
    return ad::add_row_broadcast(ad::matmul(h, store.at(prefix + "w2")),
                                 store.at(prefix + "b2"));
  }

  void init_params(std::uint64_t seed) {
    CounterRng rng(seed, "init");
    const std::size_t d = config_.embedding_dim;
    const std::size_t f = config_.feed_forward_dim;
    const std::size_t v = config_.vocab_size;

    auto add_param = [&](const std::string& name, std::size_t rows,
                         std::size_t cols) {
      params_.params.emplace(name,
                             ad::Var::param(detail::glorot(rows, cols, rng)));
    };
    auto add_ln = [&](const std::string& prefix) {
      params_.params.emplace(
          prefix + ".g",
          ad::Var::param(ad::Mat::Ones(1, static_cast<Eigen::Index>(d))));
      params_.params.emplace(
          prefix + ".b",
          ad::Var::param(ad::Mat::Zero(1, static_cast<Eigen::Index>(d))));
    };
    auto add_attn = [&](const std::string& prefix) {
      for (const char* w : {"wq", "wk", "wv", "wo"})
        add_param(prefix + w, d, d);
    };
    auto add_ffn = [&](const std::string& prefix) {
      add_param(prefix + "w1", d, f);
      params_.params.emplace(
          prefix + "b1",
          ad::Var::param(ad::Mat::Zero(1, static_cast<Eigen::Index>(f))));
      add_param(prefix + "w2", f, d);
      params_.params.emplace(
          prefix + "b2",
          ad::Var::param(ad::Mat::Zero(1, static_cast<Eigen::Index>(d))));
    };

    add_param("embed", v, d);
    params_.params.emplace(
        "out_bias",
        ad::Var::param(ad::Mat::Zero(1, static_cast<Eigen::Index>(v))));
    for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
      const std::string p = "enc.l" + std::to_string(l) + ".";
      add_ln(p + "ln1");
      add_attn(p + "attn.");
      add_ln(p + "ln2");
      add_ffn(p + "ffn.");
    }
    for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
      const std::string p = "dec.l" + std::to_string(l) + ".";
      add_ln(p + "ln1");
      add_attn(p + "self.");
      add_ln(p + "ln2");
      add_attn(p + "cross.");
      add_ln(p + "ln3");
      add_ffn(p + "ffn.");
    }

    encoder_param_names_.clear();
    encoder_param_names_.push_back("embed");
    for (const auto& [name, var] : params_.params)
      if (name.rfind("enc.", 0) == 0) encoder_param_names_.push_back(name);
  }

  static ParamStore clone_as_constants(const ParamStore& src,
                                       const std::vector<std::string>& names) {
    ParamStore out;
    for (const auto& name : names)
      out.params.emplace(name, ad::Var::constant(src.at(name).value()));
    return out;
  }

  static void write_tensor(std::ofstream& out, const std::string& name,
                           const ad::Mat& m) {
    auto write_u32 = [&](std::uint32_t v) {
      unsigned char b[4] = {static_cast<unsigned char>(v),
                            static_cast<unsigned char>(v >> 8),
                            static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 24)};
      out.write(reinterpret_cast<const char*>(b), 4);
    };
    write_u32(static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(static_cast<std::uint32_t>(m.rows()));
    write_u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const double d = m(i, j);
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        unsigned char b[8];
        for (int k = 0; k < 8; ++k)
          b[k] = static_cast<unsigned char>(bits >> (8 * k));
        out.write(reinterpret_cast<const char*>(b), 8);
      }
  }

  static bool read_tensor(std::ifstream& in, std::string& name, ad::Mat& m) {
    auto read_u32 = [&](std::uint32_t& v) {
      unsigned char b[4];
      if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
      v = static_cast<std::uint32_t>(b[0]) |
          (static_cast<std::uint32_t>(b[1]) << 8) |
          (static_cast<std::uint32_t>(b[2]) << 16) |
          (static_cast<std::uint32_t>(b[3]) << 24);
      return true;
    };
    std::uint32_t name_len;
    if (!read_u32(name_len)) return false;
    name.resize(name_len);
    if (!in.read(name.data(), name_len))
      throw FormatError("truncated tensor archive");
    std::uint32_t rows, cols;
    if (!read_u32(rows) || !read_u32(cols))
      throw FormatError("truncated tensor archive");
    m.resize(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) {
        unsigned char b[8];
        if (!in.read(reinterpret_cast<char*>(b), 8))
          throw FormatError("truncated tensor archive");
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k)
          bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
        double d;
        std::memcpy(&d, &bits, 8);
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d;
      }
    return true;
  }

  ModelConfig config_;
  Vocabulary vocab_;
  ParamStore params_;      // theta_q (encoder) + decoder + output head
  ParamStore key_params_;  // theta_k: encoder-path value copies, no grads
  std::vector<std::string> encoder_param_names_;
  ad::Mat positions_;
};

}  // namespace medsum
