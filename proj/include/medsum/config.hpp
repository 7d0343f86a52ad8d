#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "medsum/common.hpp"
#include "medsum/model.hpp"

namespace medsum {

enum class Ablation { full, no_simple, no_hard, no_both };

inline Ablation ablation_from_string(const std::string& s) {
  if (s == "full") return Ablation::full;
  if (s == "-s") return Ablation::no_simple;
  if (s == "-h") return Ablation::no_hard;
  if (s == "-s-h" || s == "-h-s") return Ablation::no_both;
  throw InvalidArgument("unknown ablation mode: " + s +
                        " (expected full, -s, -h or -s-h)");
}

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_simple: return "-s";
    case Ablation::no_hard: return "-h";
    case Ablation::no_both: return "-s-h";
  }
  return "full";
}

// Flat training configuration. Defaults are the reference hyperparameters;
// the toy fixtures override sizes and learning rate via config files.
struct TrainConfig {
  double learning_rate = 1e-5;
  std::size_t batch_size = 16;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  std::size_t epochs = 15;
  std::size_t patience = 3;
  double m = 0.999;     // momentum coefficient for the key encoder
  double tau = 0.07;    // contrastive temperature
  std::size_t l_q = 4096;  // negative queue capacity
  std::size_t n_h = 128;   // hard negatives per step
  std::size_t x = 128;     // generated hard negatives per training pair
  std::uint64_t seed = 42;
  Ablation ablation = Ablation::full;
  std::string backbone = "toy";
  bool exclude_positive = false;
  std::string hard_draw = "shared";  // or "per-anchor"
  bool ce_sum = false;  // summed instead of token-mean cross-entropy

  // toy backbone dimensions
  std::size_t embedding_dim = 64;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 1;
  std::size_t attention_heads = 4;
  std::size_t feed_forward_dim = 128;
  std::size_t max_source_len = 64;
  std::size_t max_target_len = 24;
  std::string pool_source = "encoder";

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.embedding_dim = embedding_dim;
    mc.encoder_layers = encoder_layers;
    mc.decoder_layers = decoder_layers;
    mc.attention_heads = attention_heads;
    mc.feed_forward_dim = feed_forward_dim;
    mc.max_source_len = max_source_len;
    mc.max_target_len = max_target_len;
    mc.pool_source = pool_source == "decoder" ? PoolSource::decoder
                                              : PoolSource::encoder;
    return mc;
  }

  void set(const std::string& key, const std::string& value) {
    auto as_u64 = [&] { return std::stoull(value); };
    auto as_f64 = [&] { return std::stod(value); };
    auto as_bool = [&] {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw InvalidArgument("config key " + key + ": expected bool, got " +
                            value);
    };
    try {
      if (key == "learning_rate") learning_rate = as_f64();
      else if (key == "batch_size") batch_size = as_u64();
      else if (key == "adam_beta1") adam_beta1 = as_f64();
      else if (key == "adam_beta2") adam_beta2 = as_f64();
      else if (key == "epochs") epochs = as_u64();
      else if (key == "patience") patience = as_u64();
      else if (key == "m") m = as_f64();
      else if (key == "tau") tau = as_f64();
      else if (key == "l_q") l_q = as_u64();
      else if (key == "n_h") n_h = as_u64();
      else if (key == "x") x = as_u64();
      else if (key == "seed") seed = as_u64();
      else if (key == "ablation") ablation = ablation_from_string(value);
      else if (key == "backbone") backbone = value;
      else if (key == "exclude_positive") exclude_positive = as_bool();
      else if (key == "hard_draw") hard_draw = value;
      else if (key == "ce_sum") ce_sum = as_bool();
      else if (key == "embedding_dim") embedding_dim = as_u64();
      else if (key == "encoder_layers") encoder_layers = as_u64();
      else if (key == "decoder_layers") decoder_layers = as_u64();
      else if (key == "attention_heads") attention_heads = as_u64();
      else if (key == "feed_forward_dim") feed_forward_dim = as_u64();
      else if (key == "max_source_len") max_source_len = as_u64();
      else if (key == "max_target_len") max_target_len = as_u64();
      else if (key == "pool_source") pool_source = value;
      else throw InvalidArgument("unknown config key: " + key);
    } catch (const std::invalid_argument&) {
      throw InvalidArgument("config key " + key + ": bad value '" + value +
                            "'");
    }
  }

  void validate() const {
    if (batch_size == 0 || epochs == 0)
      throw InvalidArgument("batch_size and epochs must be >= 1");
    if (m < 0.0 || m >= 1.0)
      throw InvalidArgument("momentum coefficient m must be in [0, 1)");
    if (tau <= 0.0) throw InvalidArgument("tau must be positive");
    if (l_q == 0 || n_h == 0 || x == 0)
      throw InvalidArgument("l_q, n_h and x must be >= 1");
    if (hard_draw != "shared" && hard_draw != "per-anchor")
      throw InvalidArgument("hard_draw must be 'shared' or 'per-anchor'");
    if (pool_source != "encoder" && pool_source != "decoder")
      throw InvalidArgument("pool_source must be 'encoder' or 'decoder'");
    model_config().validate();
  }

  // Config file: one `key = value` per line, '#' comments.
  static TrainConfig from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open config file: " + path);
    TrainConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos)
        line.erase(hash);
      auto eq = line.find('=');
      if (eq == std::string::npos) {
        if (line.find_first_not_of(" \t\r") != std::string::npos)
          throw FormatError("config line " + std::to_string(lineno) +
                            ": expected key = value");
        continue;
      }
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
      };
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  std::map<std::string, std::string> to_map() const {
    auto fmt = [](double v) {
      std::ostringstream os;
      os << v;
      return os.str();
    };
    return {
        {"learning_rate", fmt(learning_rate)},
        {"batch_size", std::to_string(batch_size)},
        {"adam_beta1", fmt(adam_beta1)},
        {"adam_beta2", fmt(adam_beta2)},
        {"epochs", std::to_string(epochs)},
        {"patience", std::to_string(patience)},
        {"m", fmt(m)},
        {"tau", fmt(tau)},
        {"l_q", std::to_string(l_q)},
        {"n_h", std::to_string(n_h)},
        {"x", std::to_string(x)},
        {"seed", std::to_string(seed)},
        {"ablation", to_string(ablation)},
        {"backbone", backbone},
        {"exclude_positive", exclude_positive ? "true" : "false"},
        {"hard_draw", hard_draw},
        {"ce_sum", ce_sum ? "true" : "false"},
        {"embedding_dim", std::to_string(embedding_dim)},
        {"encoder_layers", std::to_string(encoder_layers)},
        {"decoder_layers", std::to_string(decoder_layers)},
        {"attention_heads", std::to_string(attention_heads)},
        {"feed_forward_dim", std::to_string(feed_forward_dim)},
        {"max_source_len", std::to_string(max_source_len)},
        {"max_target_len", std::to_string(max_target_len)},
        {"pool_source", pool_source},
    };
  }
};

}  // namespace medsum
