// medsum: dataset auditing, hard-negative generation, contrastive training
// and evaluation for medical question summarization.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "medsum/config.hpp"
#include "medsum/contrastive.hpp"
#include "medsum/corpus.hpp"
#include "medsum/entities.hpp"
#include "medsum/eval.hpp"
#include "medsum/model.hpp"
#include "medsum/negatives.hpp"
#include "medsum/ner_adapter.hpp"
#include "medsum/train.hpp"

namespace {

constexpr const char* kVersion = "medsum 0.1.0";

// Exit codes, disjoint per failure class:
//   1 IO/format error          2 clean input under --fail-if-clean
//   3 empty entity dictionary  4 training divergence
//   5 checkpoint/vocab mismatch
constexpr int kExitFormat = 1;
constexpr int kExitClean = 2;
constexpr int kExitEmptyDict = 3;
constexpr int kExitDivergence = 4;
constexpr int kExitCheckpointMismatch = 5;

std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return 0;
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return medsum::fnv1a(bytes);
}

void write_manifest(const std::string& path, const std::string& command,
                    const std::map<std::string, std::string>& config,
                    const std::vector<std::string>& inputs,
                    std::uint64_t seed) {
  nlohmann::json inputs_json = nlohmann::json::object();
  for (const auto& p : inputs) inputs_json[p] = file_hash(p);
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  nlohmann::json manifest{
      {"command", command},
      {"config", config},
      {"dataset_hashes", inputs_json},
      {"seed", seed},
      {"code_version", kVersion},
      {"started_unix_ms",
       std::chrono::duration_cast<std::chrono::milliseconds>(now).count()}};
  std::ofstream out(path, std::ios::binary);
  out << manifest.dump(2) << '\n';
}

medsum::FieldMap field_map(const std::string& id, const std::string& chq,
                           const std::string& faq) {
  medsum::FieldMap f;
  if (!id.empty()) f.id = id;
  if (!chq.empty()) f.chq = chq;
  if (!faq.empty()) f.faq = faq;
  return f;
}

std::unique_ptr<medsum::Recognizer> make_recognizer(
    const std::string& lexicon_path, const std::string& ner_command) {
  if (!ner_command.empty())
    return std::make_unique<medsum::ExternalNerAdapter>(ner_command);
  return std::make_unique<medsum::LexiconMatcher>(
      medsum::Lexicon::load(lexicon_path));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"entity-aware contrastive training for question summarization"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string in_path, out_path, report_path, format = "auto";
  std::string id_field, chq_field, faq_field;
  bool fail_if_clean = false, near_mode = false;
  auto* dedup = app.add_subcommand("dedup", "remove duplicate pairs");
  dedup->add_option("--in", in_path, "input dataset")->required();
  dedup->add_option("--out", out_path, "deduplicated dataset (jsonl)")
      ->required();
  dedup->add_option("--report", report_path, "duplicate report (json)")
      ->required();
  dedup->add_option("--format", format, "jsonl|csv|tsv (default: by suffix)");
  dedup->add_option("--id-field", id_field, "record field holding the id");
  dedup->add_option("--chq-field", chq_field, "record field holding the CHQ");
  dedup->add_option("--faq-field", faq_field, "record field holding the FAQ");
  dedup->add_flag("--fail-if-clean", fail_if_clean,
                  "exit 2 when no duplicates are found");
  dedup->add_flag("--near", near_mode,
                  "fuzzy mode: 3-shingle Jaccard >= 0.9 (audit only)");

  std::string train_path, lexicon_path, ner_command, dict_out, pool_out;
  std::size_t x_count = 128;
  std::uint64_t seed = 42;
  auto* negatives =
      app.add_subcommand("negatives", "build entity dictionary and pool");
  negatives->add_option("--train", train_path, "training split")->required();
  negatives->add_option("--lexicon", lexicon_path, "medical term lexicon");
  negatives->add_option("--ner-command", ner_command,
                        "external NER tool (NDJSON over stdio)");
  negatives->add_option("--x", x_count, "hard negatives per pair");
  negatives->add_option("--seed", seed, "generation seed");
  negatives->add_option("--dict-out", dict_out, "entity dictionary (json)")
      ->required();
  negatives->add_option("--pool-out", pool_out, "negative pool (jsonl)")
      ->required();

  std::string config_path, data_path, dev_path, test_path, pool_path,
      out_dir = "run", split_sizes;
  std::vector<std::string> overrides;
  auto* train = app.add_subcommand("train", "run the training loop");
  train->add_option("--config", config_path, "key = value config file");
  train->add_option("--train", train_path, "training split");
  train->add_option("--dev", dev_path, "dev split");
  train->add_option("--test", test_path, "test split (unused during training)");
  train->add_option("--data", data_path,
                    "single dataset; deduplicated and split internally");
  train->add_option("--split-sizes", split_sizes,
                    "train,dev,test sizes for --data");
  train->add_option("--pool", pool_path, "hard-negative pool (jsonl)");
  train->add_option("--out-dir", out_dir, "output directory");
  train->add_option("--set", overrides,
                    "config override key=value (repeatable)");

  std::string checkpoint_prefix, out_json, out_table;
  std::size_t beam_width = 1;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a test set");
  eval->add_option("--checkpoint", checkpoint_prefix,
                   "checkpoint prefix (expects <p>.manifest.json and "
                   "<p>.tensors.bin)")
      ->required();
  eval->add_option("--test", test_path, "test split")->required();
  eval->add_option("--lexicon", lexicon_path, "medical term lexicon");
  eval->add_option("--ner-command", ner_command, "external NER tool");
  eval->add_option("--beam", beam_width, "beam width (1 = greedy)");
  eval->add_option("--out-json", out_json, "metrics report (json)")
      ->required();
  eval->add_option("--out-table", out_table, "metrics table (text)");

  std::vector<std::string> report_inputs;
  auto* report = app.add_subcommand("report", "tabulate metrics reports");
  report->add_option("inputs", report_inputs, "metrics json files")
      ->required();
  report->add_option("--out", out_path, "write table here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*dedup) {
      const auto fmt = format == "auto" ? medsum::guess_format(in_path)
                                        : medsum::format_from_name(format);
      auto ds = medsum::load_dataset(in_path, fmt,
                                     field_map(id_field, chq_field, faq_field));
      write_manifest(report_path + ".manifest.json", "dedup",
                     {{"near", near_mode ? "true" : "false"}}, {in_path}, 0);
      medsum::DuplicateReport rep;
      medsum::Dataset clean;
      if (near_mode) {
        rep = medsum::find_near_duplicates(ds);
        std::unordered_set<std::string> drop;
        for (const auto& g : rep.duplicate_groups)
          for (const auto& id : g.duplicate_ids) drop.insert(id);
        clean.name = ds.name;
        for (const auto& p : ds.pairs)
          if (!drop.count(p.id)) clean.pairs.push_back(p);
      } else {
        std::tie(clean, rep) = medsum::deduplicate(ds);
      }
      medsum::save_dataset_jsonl(clean, out_path);
      std::ofstream rf(report_path, std::ios::binary);
      rf << medsum::to_json(rep).dump(2) << '\n';
      std::cout << "total=" << rep.total << " removed=" << rep.removed
                << " retained=" << rep.retained << '\n';
      return rep.removed == 0 && fail_if_clean ? kExitClean : 0;
    }

    if (*negatives) {
      if (lexicon_path.empty() && ner_command.empty())
        throw medsum::InvalidArgument(
            "negatives: provide --lexicon or --ner-command");
      auto ds = medsum::load_dataset(train_path);
      auto recognizer = make_recognizer(lexicon_path, ner_command);
      write_manifest(pool_out + ".manifest.json", "negatives",
                     {{"x", std::to_string(x_count)}},
                     {train_path, lexicon_path}, seed);
      auto dict = medsum::build_entity_dictionary(ds, *recognizer);
      if (dict.entries.empty()) {
        std::cerr << "entity dictionary is empty: no lexicon term appears in "
                     "any training summary\n";
        return kExitEmptyDict;
      }
      nlohmann::json dj = nlohmann::json::object();
      for (const auto& [surface, count] : dict.entries) dj[surface] = count;
      std::ofstream df(dict_out, std::ios::binary);
      df << dj.dump(2) << '\n';
      auto pool =
          medsum::build_negative_pool(ds, *recognizer, dict, x_count, seed);
      medsum::save_negative_pool(pool, pool_out);
      std::cout << "entities=" << dict.size() << " pairs=" << ds.size()
                << " FIR="
                << medsum::focus_identification_rate(ds, *recognizer) << '\n';
      return 0;
    }

    if (*train) {
      medsum::TrainConfig cfg;
      if (!config_path.empty())
        cfg = medsum::TrainConfig::from_file(config_path);
      for (const auto& ov : overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos)
          throw medsum::InvalidArgument("--set expects key=value, got " + ov);
        cfg.set(ov.substr(0, eq), ov.substr(eq + 1));
      }
      cfg.validate();

      medsum::SplitSet splits;
      std::vector<std::string> inputs;
      if (!data_path.empty()) {
        if (split_sizes.empty())
          throw medsum::InvalidArgument("--data requires --split-sizes");
        medsum::SplitSizes sizes;
        if (sscanf(split_sizes.c_str(), "%zu,%zu,%zu", &sizes.train,
                   &sizes.dev, &sizes.test) != 3)
          throw medsum::InvalidArgument("--split-sizes expects tr,dev,test");
        splits = medsum::split_dataset(medsum::load_dataset(data_path), sizes,
                                       cfg.seed);
        inputs.push_back(data_path);
      } else {
        if (train_path.empty())
          throw medsum::InvalidArgument("train: provide --train or --data");
        splits.train = medsum::load_dataset(train_path);
        inputs.push_back(train_path);
        if (!dev_path.empty()) {
          splits.dev = medsum::load_dataset(dev_path);
          inputs.push_back(dev_path);
        }
        if (!test_path.empty()) {
          splits.test = medsum::load_dataset(test_path);
          inputs.push_back(test_path);
        }
      }
      auto leaks = medsum::check_leakage(splits);
      if (!leaks.clean())
        throw medsum::InvalidArgument(
            "splits leak " + std::to_string(leaks.entries.size()) +
            " pairs across boundaries; run dedup/split first");

      medsum::NegativePool pool;
      if (!pool_path.empty()) {
        pool = medsum::load_negative_pool(pool_path);
        inputs.push_back(pool_path);
      }
      std::filesystem::create_directories(out_dir);
      write_manifest(out_dir + "/manifest.json", "train", cfg.to_map(),
                     inputs, cfg.seed);
      medsum::Trainer trainer(cfg, splits, pool.empty() ? nullptr : &pool,
                              out_dir);
      auto result = trainer.train();
      std::cout << "best_epoch=" << result.best_epoch
                << " best_dev_rouge1=" << result.best_dev_rouge1 << '\n'
                << "checkpoint=" << result.best_manifest << '\n';
      return 0;
    }

    if (*eval) {
      if (lexicon_path.empty() && ner_command.empty())
        throw medsum::InvalidArgument(
            "eval: provide --lexicon or --ner-command");
      medsum::Summarizer model = [&] {
        try {
          return medsum::Summarizer::load_checkpoint(
              checkpoint_prefix + ".manifest.json",
              checkpoint_prefix + ".tensors.bin");
        } catch (const medsum::FormatError& e) {
          std::cerr << e.what() << '\n';
          std::exit(kExitCheckpointMismatch);
        }
      }();
      auto test = medsum::load_dataset(test_path);
      auto recognizer = make_recognizer(lexicon_path, ner_command);
      write_manifest(out_json + ".manifest.json", "eval",
                     {{"beam", std::to_string(beam_width)}},
                     {test_path, lexicon_path}, 0);
      auto metrics =
          medsum::evaluate_model(model, test, *recognizer, beam_width, true);
      std::ofstream jf(out_json, std::ios::binary);
      jf << medsum::to_json(metrics).dump(2) << '\n';
      const std::string table = medsum::render_metrics_table({metrics});
      if (!out_table.empty()) {
        std::ofstream tf(out_table, std::ios::binary);
        tf << table;
      }
      std::cout << table;
      return 0;
    }

    if (*report) {
      std::vector<medsum::MetricsReport> reports;
      for (const auto& path : report_inputs) {
        std::ifstream in(path, std::ios::binary);
        if (!in)
          throw medsum::FormatError("cannot open metrics file: " + path);
        nlohmann::json j = nlohmann::json::parse(in);
        medsum::MetricsReport r;
        r.dataset = j.value("dataset", path);
        r.samples = j.value("samples", std::size_t{0});
        r.rouge1_f1 = j.value("rouge1_f1", 0.0);
        r.rouge2_f1 = j.value("rouge2_f1", 0.0);
        r.rougeL_f1 = j.value("rougeL_f1", 0.0);
        r.entity_consistency = j.value("entity_consistency", 0.0);
        reports.push_back(std::move(r));
      }
      const std::string table = medsum::render_metrics_table(reports);
      if (!out_path.empty()) {
        std::ofstream tf(out_path, std::ios::binary);
        tf << table;
      } else {
        std::cout << table;
      }
      return 0;
    }
  } catch (const medsum::DivergenceError& e) {
    std::cerr << e.what() << "; last good checkpoint: "
              << e.last_good_checkpoint << '\n';
    return kExitDivergence;
  } catch (const medsum::Error& e) {
    std::cerr << e.what() << '\n';
    return kExitFormat;
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return kExitFormat;
  }
  return 0;
}
