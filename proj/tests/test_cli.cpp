#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "support.hpp"

using uma2::testing::ScratchDir;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(UMA2_BIN) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

// Desk-scale millirun: everything finishes in seconds.
void write_tiny_config(const std::filesystem::path& path, const std::string& extra = "") {
  std::ofstream out(path);
  out << "sim.users = 60\n"
         "sim.items = 30\n"
         "sim.latent_dim = 4\n"
         "sim.avg_recall = 10\n"
         "sim.avg_exposure = 4\n"
         "sim.test_positives_per_user = 2\n"
         "model.dims = 6,3\n"
         "nsdn.dims = 4,2\n"
         "train.batch_size = 64\n"
         "train.epochs = 2\n"
         "train.holdout_fraction = 0.2\n"
         "train.patience = 0\n"
         "eval.k_list = 5\n"
      << extra;
}

}  // namespace

TEST_CASE("help and version exit cleanly") {
  CHECK(run("--help").exit_code == 0);
  const RunResult help = run("--help");
  CHECK(help.output.find("simulate") != std::string::npos);
  CHECK(help.output.find("train") != std::string::npos);
  CHECK(run("--version").exit_code == 0);
}

TEST_CASE("usage errors exit with 2") {
  CHECK(run("").exit_code == 2);               // a subcommand is required
  CHECK(run("--no-such-flag").exit_code == 2);
  CHECK(run("simulate --bogus").exit_code == 2);
  CHECK(run("train").exit_code == 2);          // --data is required
  CHECK(run("evaluate --data x.log").exit_code == 2);  // --checkpoint is required
}

TEST_CASE("config problems exit with 2 and still leave a manifest") {
  ScratchDir dir("cli-badcfg");
  const auto cfg = dir.path() / "bad.cfg";
  std::ofstream(cfg) << "sim.users = 0\n";
  const RunResult r =
      run("simulate --config " + cfg.string() + " --out " + (dir.path() / "out").string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("error:") != std::string::npos);
  const std::string manifest = slurp(dir.path() / "out" / "simulate.manifest.jsonl");
  CHECK(manifest.find("\"error\"") != std::string::npos);

  const RunResult missing = run("simulate --config " + (dir.path() / "absent.cfg").string() +
                                " --out " + (dir.path() / "out2").string());
  CHECK(missing.exit_code == 2);

  const auto unknown = dir.path() / "unknown.cfg";
  std::ofstream(unknown) << "sim.number_users = 5\n";
  const RunResult bad_key = run("simulate --config " + unknown.string() + " --out " +
                                (dir.path() / "out3").string());
  CHECK(bad_key.exit_code == 2);
  CHECK(bad_key.output.find("sim.number_users") != std::string::npos);
}

TEST_CASE("simulate writes a reproducible dataset") {
  ScratchDir dir("cli-sim");
  const auto cfg = dir.path() / "tiny.cfg";
  write_tiny_config(cfg);
  const std::string base = "simulate --config " + cfg.string() + " --seed 5 --out ";

  const RunResult r1 = run(base + (dir.path() / "a").string());
  CHECK(r1.exit_code == 0);
  CHECK(std::filesystem::exists(dir.path() / "a" / "train.log"));
  CHECK(std::filesystem::exists(dir.path() / "a" / "test.log"));
  const std::string manifest = slurp(dir.path() / "a" / "simulate.manifest.jsonl");
  CHECK(manifest.find("\"status\":\"ok\"") != std::string::npos);

  const RunResult r2 = run(base + (dir.path() / "b").string());
  CHECK(r2.exit_code == 0);
  CHECK(slurp(dir.path() / "a" / "train.log") == slurp(dir.path() / "b" / "train.log"));
  CHECK(slurp(dir.path() / "a" / "test.log") == slurp(dir.path() / "b" / "test.log"));
}

TEST_CASE("the full pipeline runs through evaluate and export") {
  ScratchDir dir("cli-pipeline");
  const auto cfg = dir.path() / "tiny.cfg";
  write_tiny_config(cfg);
  const std::string common = " --config " + cfg.string() + " --seed 9 --out ";
  const auto data = dir.path() / "data";
  REQUIRE(run("simulate" + common + data.string()).exit_code == 0);

  const auto train_out = dir.path() / "run";
  const RunResult trained =
      run("train" + common + train_out.string() + " --data " + data.string());
  CHECK(trained.exit_code == 0);
  CHECK(trained.output.find("epoch") != std::string::npos);
  CHECK(std::filesystem::exists(train_out / "last.ckpt"));
  CHECK(std::filesystem::exists(train_out / "best.ckpt"));
  CHECK(count_lines(train_out / "history.jsonl") == 2);

  const std::string eval_cmd = "evaluate" + common + (dir.path() / "eval").string() +
                               " --data " + data.string() + " --checkpoint " +
                               (train_out / "best.ckpt").string();
  const RunResult e1 = run(eval_cmd);
  CHECK(e1.exit_code == 0);
  CHECK(e1.output.find("HitRate") != std::string::npos);
  const RunResult e2 = run(eval_cmd);
  CHECK(e1.output == e2.output);
  CHECK(count_lines(dir.path() / "eval" / "metrics.jsonl") == 1);  // one K requested

  const RunResult k_too_big = run("evaluate" + common + (dir.path() / "eval2").string() +
                                  " --data " + data.string() + " --checkpoint " +
                                  (train_out / "best.ckpt").string() + " --k 700");
  CHECK(k_too_big.exit_code == 2);

  const auto exp = dir.path() / "export";
  const RunResult exported = run("export" + common + exp.string() + " --data " +
                                 data.string() + " --checkpoint " +
                                 (train_out / "best.ckpt").string());
  CHECK(exported.exit_code == 0);
  CHECK(count_lines(exp / "users.emb") == 61);  // header plus every user
  CHECK(count_lines(exp / "items.emb") == 31);

  const RunResult no_ckpt = run("evaluate" + common + (dir.path() / "eval3").string() +
                                " --data " + data.string() + " --checkpoint " +
                                (dir.path() / "nope.ckpt").string());
  CHECK(no_ckpt.exit_code == 2);

  // Flag overrides reach training: 0-epoch run completes and checkpoints.
  const RunResult zero = run("train" + common + (dir.path() / "zero").string() + " --data " +
                             data.string() + " --epochs 0");
  CHECK(zero.exit_code == 0);
  CHECK(std::filesystem::exists(dir.path() / "zero" / "last.ckpt"));
}

TEST_CASE("training failures map to the documented exit codes") {
  ScratchDir dir("cli-trainfail");
  const auto cfg = dir.path() / "tiny.cfg";
  write_tiny_config(cfg);
  const std::string common = " --config " + cfg.string() + " --seed 9 --out ";
  const auto data = dir.path() / "data";
  REQUIRE(run("simulate" + common + data.string()).exit_code == 0);

  const RunResult missing_data = run("train" + common + (dir.path() / "r1").string() +
                                     " --data " + (dir.path() / "nowhere").string());
  CHECK(missing_data.exit_code == 2);
  CHECK(slurp(dir.path() / "r1" / "train.manifest.jsonl").find("\"error\"") !=
        std::string::npos);

  const auto diverge_cfg = dir.path() / "diverge.cfg";
  write_tiny_config(diverge_cfg,
                    "train.lr = 1e6\n"
                    "train.debias = off\n"
                    "train.warmup_epochs = 1\n"
                    "train.holdout_fraction = 0\n"
                    "train.epochs = 8\n");
  const RunResult diverged =
      run("train --config " + diverge_cfg.string() + " --seed 9 --out " +
          (dir.path() / "r2").string() + " --data " + data.string());
  CHECK(diverged.exit_code == 3);
  CHECK(diverged.output.find("error:") != std::string::npos);
}

TEST_CASE("quiet mode silences progress but not results") {
  ScratchDir dir("cli-quiet");
  const auto cfg = dir.path() / "tiny.cfg";
  write_tiny_config(cfg);
  const std::string common = " --config " + cfg.string() + " --seed 11 --out ";
  const auto data = dir.path() / "data";
  REQUIRE(run("simulate" + common + data.string() + " --quiet").exit_code == 0);

  const RunResult loud = run("train" + common + (dir.path() / "loud").string() + " --data " +
                             data.string());
  const RunResult quiet = run("train" + common + (dir.path() / "quiet").string() +
                              " --data " + data.string() + " --quiet");
  CHECK(loud.output.find("epoch") != std::string::npos);
  CHECK(quiet.output.find("epoch") == std::string::npos);
  // Same work happened either way.
  CHECK(slurp(dir.path() / "loud" / "history.jsonl") ==
        slurp(dir.path() / "quiet" / "history.jsonl"));
}

TEST_CASE("ablation emits the full grid and its medians") {
  ScratchDir dir("cli-ablation");
  const auto cfg = dir.path() / "tiny.cfg";
  write_tiny_config(cfg, "ablation.seeds = 1,2\n");
  const RunResult r = run("ablation --config " + cfg.string() + " --out " +
                          (dir.path() / "grid").string());
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("ss-abc-fixed") != std::string::npos);
  CHECK(r.output.find("median") != std::string::npos);

  const std::string table = slurp(dir.path() / "grid" / "ablation_table.txt");
  for (const char* strategy : {"ss-a", "ss-ab", "ss-abc-random", "ss-abc-fixed"}) {
    CHECK(table.find(strategy) != std::string::npos);
  }
  std::size_t debias_rows = 0;
  for (std::size_t pos = table.find("debias"); pos != std::string::npos;
       pos = table.find("debias", pos + 1)) {
    ++debias_rows;
  }
  CHECK(debias_rows >= 8);  // 4 strategies x 2 seeds, plus the median block

  const std::string manifest = slurp(dir.path() / "grid" / "ablation.manifest.jsonl");
  CHECK(manifest.find("\"status\":\"ok\"") != std::string::npos);
  CHECK(manifest.find("median-recall") != std::string::npos);
}
