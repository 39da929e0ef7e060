#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "uma2/ablation.hpp"
#include "uma2/checkpoint.hpp"
#include "uma2/common.hpp"
#include "uma2/config.hpp"
#include "uma2/corpus.hpp"
#include "uma2/eval.hpp"
#include "uma2/gmm.hpp"
#include "uma2/manifest.hpp"
#include "uma2/sim.hpp"
#include "uma2/trainer.hpp"

namespace {

namespace fs = std::filesystem;

struct CliArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  bool quiet = false;

  std::string data_dir;
  std::string checkpoint;
  std::string resume;
  std::string strategy;
  std::string debias;
  std::optional<std::uint64_t> epochs;
  std::string k_list;
};

uma2::Config load_config(const CliArgs& args) {
  uma2::Config cfg =
      args.config_path.empty() ? uma2::Config{} : uma2::Config::from_file(args.config_path);
  if (args.seed) cfg.set_master_seed(*args.seed);
  return cfg;
}

// Flag overrides funnel through Config::set so they get the same parsing and
// error wording as config-file lines.
void apply_train_overrides(uma2::Config& cfg, const CliArgs& args) {
  if (!args.strategy.empty()) cfg.set("sampling.strategy", args.strategy);
  if (!args.debias.empty()) cfg.set("train.debias", args.debias);
  if (args.epochs) cfg.set("train.epochs", std::to_string(*args.epochs));
}

void note(const CliArgs& args, const std::string& line) {
  if (!args.quiet) std::cout << line << "\n";
}

uma2::Corpus load_eval_corpus(const fs::path& data_dir,
                              std::vector<std::vector<std::uint32_t>>* test_positives) {
  uma2::Corpus corpus = uma2::ingest_logs(data_dir / "train.log");
  const uma2::Corpus test = uma2::ingest_logs(data_dir / "test.log");
  uma2::absorb_features(corpus, test);
  if (test_positives) {
    *test_positives = test.positives;
    test_positives->resize(corpus.num_users());
  }
  return corpus;
}

void record_config(uma2::ManifestWriter& manifest, const uma2::Config& cfg) {
  nlohmann::json j;
  for (const auto& [k, v] : cfg.resolved()) j[k] = v;
  manifest.record("resolved-config", j);
}

int cmd_simulate(const CliArgs& args) {
  const fs::path out = args.out_dir;
  fs::create_directories(out);
  uma2::ManifestWriter manifest(out / "simulate.manifest.jsonl", "simulate");
  try {
    uma2::Config cfg = load_config(args);
    cfg.validate();
    record_config(manifest, cfg);
    const uma2::DatasetPaths paths = uma2::write_dataset(cfg.sim, out, true);
    manifest.artifact("train-log", paths.train_log);
    manifest.artifact("train-oracle", uma2::oracle_sidecar_path(paths.train_log));
    manifest.artifact("test-log", paths.test_log);
    manifest.artifact("test-oracle", uma2::oracle_sidecar_path(paths.test_log));
    note(args, "wrote " + paths.train_log.string() + " and " + paths.test_log.string());
  } catch (const std::exception& ex) {
    manifest.fail(ex.what());
    throw;
  }
  return 0;
}

int cmd_train(const CliArgs& args) {
  const fs::path out = args.out_dir;
  const fs::path data = args.data_dir;
  fs::create_directories(out);
  uma2::ManifestWriter manifest(out / "train.manifest.jsonl", "train");
  try {
    uma2::Config cfg = load_config(args);
    apply_train_overrides(cfg, args);
    cfg.validate();
    uma2::Corpus corpus = uma2::ingest_logs(data / "train.log");
    manifest.artifact("train-log", data / "train.log");
    const uma2::TrainResult result =
        uma2::train(corpus, cfg, out, args.resume.empty() ? fs::path{} : fs::path(args.resume),
                    &manifest, args.quiet ? nullptr : &std::cout);
    note(args, "trained " + std::to_string(result.epochs_completed) + " epochs, checkpoints in " +
                   out.string());
  } catch (const std::exception& ex) {
    manifest.fail(ex.what());  // no-op when train() already recorded the failure
    throw;
  }
  return 0;
}

int cmd_evaluate(const CliArgs& args) {
  const fs::path out = args.out_dir;
  fs::create_directories(out);
  uma2::ManifestWriter manifest(out / "evaluate.manifest.jsonl", "evaluate");
  try {
    uma2::Config cfg = load_config(args);
    if (!args.k_list.empty()) cfg.set("eval.k_list", args.k_list);
    cfg.validate();
    std::vector<std::vector<std::uint32_t>> test_positives;
    const uma2::Corpus corpus = load_eval_corpus(args.data_dir, &test_positives);
    const uma2::Checkpoint ckpt = uma2::load_checkpoint(args.checkpoint);
    const auto [gmm, nsdn] = uma2::models_from_checkpoint(ckpt);

    const uma2::EmbeddingTable users =
        uma2::embed_all(gmm.user_tower, corpus.user_features, corpus.user_seen);
    const uma2::EmbeddingTable items =
        uma2::embed_all(gmm.item_tower, corpus.item_features, corpus.item_seen);
    const std::vector<uma2::RetrievalMetrics> metrics =
        uma2::evaluate(users, test_positives, items, cfg.eval.k_list,
                       cfg.eval.exclude_train_positives ? &corpus.positives : nullptr);

    const fs::path metrics_path = out / "metrics.jsonl";
    std::ofstream mf(metrics_path, std::ios::binary | std::ios::trunc);
    if (!mf) throw uma2::IoError("cannot open metrics file: " + metrics_path.string());
    for (const uma2::RetrievalMetrics& m : metrics) {
      const nlohmann::json j{{"k", m.k},           {"hitrate", m.hitrate},
                             {"precision", m.precision}, {"recall", m.recall},
                             {"users", m.users_evaluated}, {"users_skipped", m.users_skipped}};
      mf << j.dump() << "\n";
      manifest.record("metrics", j);
    }
    manifest.artifact("metrics", metrics_path);
    std::cout << uma2::metrics_table(metrics);
  } catch (const std::exception& ex) {
    manifest.fail(ex.what());
    throw;
  }
  return 0;
}

int cmd_export(const CliArgs& args) {
  const fs::path out = args.out_dir;
  const fs::path data = args.data_dir;
  fs::create_directories(out);
  uma2::ManifestWriter manifest(out / "export.manifest.jsonl", "export");
  try {
    uma2::Corpus corpus = uma2::ingest_logs(data / "train.log");
    if (fs::exists(data / "test.log")) {
      const uma2::Corpus test = uma2::ingest_logs(data / "test.log");
      uma2::absorb_features(corpus, test);
    }
    const uma2::Checkpoint ckpt = uma2::load_checkpoint(args.checkpoint);
    const auto [gmm, nsdn] = uma2::models_from_checkpoint(ckpt);

    const uma2::EmbeddingTable users =
        uma2::embed_all(gmm.user_tower, corpus.user_features, corpus.user_seen);
    const uma2::EmbeddingTable items =
        uma2::embed_all(gmm.item_tower, corpus.item_features, corpus.item_seen);
    uma2::write_embeddings(users, out / "users.emb");
    uma2::write_embeddings(items, out / "items.emb");
    manifest.artifact("user-embeddings", out / "users.emb");
    manifest.artifact("item-embeddings", out / "items.emb");
    note(args, "wrote " + (out / "users.emb").string() + " and " + (out / "items.emb").string());
  } catch (const std::exception& ex) {
    manifest.fail(ex.what());
    throw;
  }
  return 0;
}

int cmd_ablation(const CliArgs& args) {
  const fs::path out = args.out_dir;
  fs::create_directories(out);
  uma2::ManifestWriter manifest(out / "ablation.manifest.jsonl", "ablation");
  uma2::AblationResult result;
  try {
    uma2::Config cfg = load_config(args);
    cfg.validate();
    record_config(manifest, cfg);
    result = uma2::run_ablation(cfg, out, &manifest, args.quiet ? nullptr : &std::cout);
    const std::string table = uma2::ablation_table(result);
    std::ofstream tf(out / "ablation_table.txt", std::ios::binary | std::ios::trunc);
    tf << table;
    manifest.artifact("table", out / "ablation_table.txt");
    std::cout << table;
  } catch (const std::exception& ex) {
    manifest.fail(ex.what());
    throw;
  }
  if (result.any_failed) {
    manifest.fail("one or more ablation cells failed");
    return 4;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UMA2: unbiased two-tower matching with funnel-aware negative sampling"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(uma2::kVersion));

  CliArgs args;
  app.add_option("--config", args.config_path, "Key-value config file");
  app.add_option("--seed", args.seed, "Master seed override (applies to sim and train)");
  app.add_option("--out", args.out_dir, "Output directory")->capture_default_str();
  app.add_flag("--quiet", args.quiet, "Suppress progress output");

  CLI::App* sim = app.add_subcommand("simulate", "Generate synthetic funnel logs");

  CLI::App* train = app.add_subcommand("train", "Train the matching model on a log directory");
  train->add_option("--data", args.data_dir, "Directory holding train.log")->required();
  train->add_option("--strategy", args.strategy,
                    "Sampling strategy: ss-a, ss-ab, ss-abc-random, ss-abc-fixed");
  train->add_option("--debias", args.debias, "Inverse-propensity weighting: on or off");
  train->add_option("--epochs", args.epochs, "Number of epochs");
  train->add_option("--resume", args.resume, "Checkpoint to continue from");

  CLI::App* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on test positives");
  evaluate->add_option("--checkpoint", args.checkpoint, "Checkpoint file")->required();
  evaluate->add_option("--data", args.data_dir, "Directory holding train.log and test.log")
      ->required();
  evaluate->add_option("--k", args.k_list, "Comma-separated cutoff list, e.g. 100,200");

  CLI::App* exp = app.add_subcommand("export", "Write user and item embeddings for a checkpoint");
  exp->add_option("--checkpoint", args.checkpoint, "Checkpoint file")->required();
  exp->add_option("--data", args.data_dir, "Directory holding train.log")->required();

  CLI::App* ablation =
      app.add_subcommand("ablation", "Run the strategy x weighting grid across seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(args);
    if (train->parsed()) return cmd_train(args);
    if (evaluate->parsed()) return cmd_evaluate(args);
    if (exp->parsed()) return cmd_export(args);
    if (ablation->parsed()) return cmd_ablation(args);
  } catch (const uma2::DivergenceError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 3;
  } catch (const uma2::ConfigError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const uma2::ParseError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const uma2::IoError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const uma2::CheckpointError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const uma2::ShapeError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "unexpected error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
