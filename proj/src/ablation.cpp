#include "uma2/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "uma2/corpus.hpp"
#include "uma2/gmm.hpp"
#include "uma2/sim.hpp"
#include "uma2/trainer.hpp"

namespace uma2 {

namespace {

constexpr Strategy kStrategies[] = {Strategy::SsA, Strategy::SsAb, Strategy::SsAbcRandom,
                                    Strategy::SsAbcFixed};

std::string cell_name(Strategy s, bool debias) {
  return to_string(s) + (debias ? "-debias" : "-uniform");
}

nlohmann::json cell_json(const AblationCell& cell) {
  nlohmann::json j{{"strategy", to_string(cell.strategy)},
                   {"debias", cell.debias},
                   {"seed", cell.seed},
                   {"failed", cell.failed}};
  if (cell.failed) {
    j["error"] = cell.error;
  } else {
    nlohmann::json ms = nlohmann::json::array();
    for (const RetrievalMetrics& m : cell.metrics) {
      ms.push_back({{"k", m.k},
                    {"hitrate", m.hitrate},
                    {"precision", m.precision},
                    {"recall", m.recall},
                    {"users", m.users_evaluated}});
    }
    j["metrics"] = ms;
  }
  return j;
}

}  // namespace

AblationResult run_ablation(const Config& cfg, const std::filesystem::path& out_dir,
                            ManifestWriter* manifest, std::ostream* log) {
  cfg.validate();
  AblationResult result;

  for (const std::uint64_t seed : cfg.ablation.seeds) {
    Config seeded = cfg;
    seeded.set_master_seed(seed);
    const std::filesystem::path seed_dir = out_dir / ("seed-" + std::to_string(seed));

    if (log) {
      *log << "seed " << seed << ": simulating " << seeded.sim.num_users << " users x "
           << seeded.sim.num_items << " items\n";
      log->flush();
    }
    const DatasetPaths data = write_dataset(seeded.sim, seed_dir, false);
    Corpus corpus = ingest_logs(data.train_log);
    std::vector<std::vector<std::uint32_t>> test_positives;
    {
      const Corpus test = ingest_logs(data.test_log);
      absorb_features(corpus, test);
      test_positives = test.positives;
    }
    test_positives.resize(corpus.num_users());
    if (manifest) {
      manifest->artifact("train-log", data.train_log);
      manifest->artifact("test-log", data.test_log);
    }

    for (const Strategy strategy : kStrategies) {
      for (const bool debias : {false, true}) {
        AblationCell cell;
        cell.strategy = strategy;
        cell.debias = debias;
        cell.seed = seed;

        Config cell_cfg = seeded;
        cell_cfg.sampling.strategy = strategy;
        cell_cfg.train.debias = debias;
        const std::filesystem::path cell_dir = seed_dir / cell_name(strategy, debias);
        try {
          const TrainResult tr = train(corpus, cell_cfg, cell_dir, {}, nullptr, nullptr);
          const EmbeddingTable users =
              embed_all(tr.gmm.user_tower, corpus.user_features, corpus.user_seen);
          const EmbeddingTable items =
              embed_all(tr.gmm.item_tower, corpus.item_features, corpus.item_seen);
          cell.metrics =
              evaluate(users, test_positives, items, cfg.eval.k_list,
                       cfg.eval.exclude_train_positives ? &corpus.positives : nullptr);
        } catch (const std::exception& ex) {
          cell.failed = true;
          cell.error = ex.what();
          result.any_failed = true;
        }

        if (log) {
          char buf[160];
          if (cell.failed) {
            std::snprintf(buf, sizeof(buf), "  %-22s FAILED: %s\n",
                          cell_name(strategy, debias).c_str(), cell.error.c_str());
          } else {
            const RetrievalMetrics& m = cell.metrics.front();
            std::snprintf(buf, sizeof(buf), "  %-22s HitRate@%zu %.5f  Recall@%zu %.5f\n",
                          cell_name(strategy, debias).c_str(), m.k, m.hitrate, m.k, m.recall);
          }
          *log << buf;
          log->flush();
        }
        if (manifest) manifest->record("cell", cell_json(cell));
        result.cells.push_back(std::move(cell));
      }
    }
  }

  if (manifest) {
    nlohmann::json med = nlohmann::json::object();
    for (const Strategy strategy : kStrategies) {
      for (const bool debias : {false, true}) {
        med[cell_name(strategy, debias)] = median_recall(result, strategy, debias);
      }
    }
    manifest->record("median-recall", med);
  }
  return result;
}

double median_recall(const AblationResult& result, Strategy strategy, bool debias,
                     std::size_t k_index) {
  std::vector<double> values;
  for (const AblationCell& cell : result.cells) {
    if (cell.failed || cell.strategy != strategy || cell.debias != debias) continue;
    if (k_index >= cell.metrics.size()) continue;
    values.push_back(cell.metrics[k_index].recall);
  }
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  if (values.size() % 2 == 1) return values[mid];
  return 0.5 * (values[mid - 1] + values[mid]);
}

std::string ablation_table(const AblationResult& result) {
  std::string out;
  char buf[160];
  if (result.cells.empty()) return "no ablation cells\n";
  const std::size_t k = result.cells.front().metrics.empty()
                            ? 0
                            : result.cells.front().metrics.front().k;

  std::snprintf(buf, sizeof(buf), "%-15s %-9s %6s %12s %12s\n", "strategy", "weighting", "seed",
                "HitRate", "Recall");
  out += buf;
  for (const AblationCell& cell : result.cells) {
    if (cell.failed) {
      std::snprintf(buf, sizeof(buf), "%-15s %-9s %6llu %25s\n", to_string(cell.strategy).c_str(),
                    cell.debias ? "debias" : "uniform",
                    static_cast<unsigned long long>(cell.seed), "FAILED");
    } else {
      const RetrievalMetrics& m = cell.metrics.front();
      std::snprintf(buf, sizeof(buf), "%-15s %-9s %6llu %12.5f %12.5f\n",
                    to_string(cell.strategy).c_str(), cell.debias ? "debias" : "uniform",
                    static_cast<unsigned long long>(cell.seed), m.hitrate, m.recall);
    }
    out += buf;
  }

  std::snprintf(buf, sizeof(buf), "\nmedian Recall@%zu across seeds\n", k);
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-15s %12s %12s\n", "strategy", "uniform", "debias");
  out += buf;
  const double base = median_recall(result, Strategy::SsAbcFixed, false);
  for (const Strategy strategy : kStrategies) {
    const double uni = median_recall(result, strategy, false);
    const double deb = median_recall(result, strategy, true);
    std::snprintf(buf, sizeof(buf), "%-15s %12.5f %12.5f", to_string(strategy).c_str(), uni, deb);
    out += buf;
    if (std::isfinite(base) && base > 0.0 && std::isfinite(deb)) {
      std::snprintf(buf, sizeof(buf), "   (debias %+.1f%% vs fixed/uniform)",
                    100.0 * (deb / base - 1.0));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace uma2
