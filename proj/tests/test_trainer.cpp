#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "support.hpp"
#include "uma2/common.hpp"
#include "uma2/rng.hpp"
#include "uma2/sim.hpp"
#include "uma2/trainer.hpp"

using namespace uma2;
using uma2::testing::random_vec;
using uma2::testing::rel_err;
using uma2::testing::ScratchDir;

namespace {

constexpr double kLn2 = 0.6931471805599453;

void zero_tower(Mlp& mlp) {
  for (auto& layer : mlp.layers) {
    std::fill(layer.w.data.begin(), layer.w.data.end(), 0.0);
    std::fill(layer.b.begin(), layer.b.end(), 0.0);
  }
}

struct MiniSetup {
  std::vector<Vec> user_feats;
  std::vector<Vec> item_feats;
  TwoTower gmm;
  NsdnModel nsdn;
};

MiniSetup mini(std::uint64_t seed, SharingMode sharing = SharingMode::FullySeparate) {
  MiniSetup s;
  std::mt19937_64 rng = make_rng(seed, "mini");
  for (int u = 0; u < 4; ++u) s.user_feats.push_back(random_vec(5, rng, 0.8));
  for (int i = 0; i < 6; ++i) s.item_feats.push_back(random_vec(4, rng, 0.8));
  s.gmm = make_two_tower(5, 4, {6, 3}, rng);
  NsdnConfig ncfg;
  ncfg.sharing_mode = sharing;
  ncfg.dims = {5, 2};
  s.nsdn = make_nsdn(5, 4, ncfg, rng);
  return s;
}

TrainingBatch mixed_batch() {
  TrainingBatch batch;
  batch.entries = {
      {0, 0, SpaceLabel::PositiveClick, 1.0}, {0, 1, SpaceLabel::SpaceA, 1.7},
      {0, 2, SpaceLabel::SpaceB, 2.4},        {0, 3, SpaceLabel::SpaceC, 1.0},
      {1, 4, SpaceLabel::PositiveClick, 1.0}, {1, 5, SpaceLabel::SpaceB, 1.2},
      {2, 0, SpaceLabel::SpaceC, 1.0},        {0, 4, SpaceLabel::SpaceA, 3.0},
  };
  return batch;
}

// Flattened view over every parameter of both models.
std::vector<double*> flat_params(TwoTower& gmm, NsdnModel& nsdn) {
  std::vector<double*> out;
  for (TensorRef& ref : named_tensors(gmm, nsdn)) {
    for (double& v : *ref.data) out.push_back(&v);
  }
  return out;
}

std::vector<double> flat_grads(ModelGrads& grads) {
  std::vector<double> out;
  for (TensorRef& ref : named_tensors(grads.gmm, grads.nsdn)) {
    for (double v : *ref.data) out.push_back(v);
  }
  return out;
}

Config tiny_cfg() {
  Config cfg;
  cfg.set_master_seed(123);
  cfg.model.dims = {8, 4};
  cfg.nsdn.dims = {6, 3};
  cfg.train.epochs = 3;
  cfg.train.batch_size = 128;
  cfg.train.warmup_epochs = 1;
  cfg.train.holdout_fraction = 0.2;
  cfg.train.patience = 0;
  cfg.eval.k_list = {10};
  return cfg;
}

// One small simulated corpus shared by the train() cases.
const Corpus& tiny_corpus() {
  static ScratchDir dir("trainer-data");
  static Corpus corpus = [] {
    FunnelConfig f;
    f.num_users = 80;
    f.num_items = 40;
    f.latent_dim = 6;
    f.avg_recall_size = 12;
    f.avg_exposure_size = 4;
    f.click_bias = -1.0;
    f.seed = 123;
    return ingest_logs(write_dataset(f, dir.path(), false).train_log);
  }();
  return corpus;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("holdout split is a stable hash slice") {
  const auto none = holdout_users(200, 0.0);
  CHECK(std::count(none.begin(), none.end(), true) == 0);

  const auto small = holdout_users(200, 0.1);
  const auto large = holdout_users(200, 0.4);
  const auto small2 = holdout_users(200, 0.1);
  CHECK(small == small2);
  const auto n_small = std::count(small.begin(), small.end(), true);
  const auto n_large = std::count(large.begin(), large.end(), true);
  CHECK(n_small > 0);
  CHECK(n_large > n_small);
  CHECK(n_large < 200);
  for (std::size_t u = 0; u < 200; ++u) {
    if (small[u]) CHECK(large[u]);  // growing the fraction only adds users
  }
}

TEST_CASE("loss terms on zeroed towers reduce to counted log-2s") {
  MiniSetup s = mini(1);
  zero_tower(s.gmm.user_tower);
  zero_tower(s.gmm.item_tower);

  TrainingBatch batch;
  batch.entries = {
      {0, 0, SpaceLabel::PositiveClick, 1.0},
      {0, 1, SpaceLabel::SpaceB, 2.0},
  };
  BatchLossOptions opt;
  opt.compute_heads = false;
  opt.head_grads = false;
  const LossReport rep = batch_loss(batch, s.user_feats, s.item_feats, s.gmm, s.nsdn, opt, nullptr);

  CHECK(rep.n_pos == 1);
  CHECK(rep.n_b == 1);
  CHECK(rep.n_a == 0);
  CHECK(rep.n_c == 0);
  CHECK(rep.n_er == 0);
  CHECK(rep.loss_pos == doctest::Approx(kLn2).epsilon(1e-12));
  CHECK(rep.loss_b == doctest::Approx(2.0 * kLn2).epsilon(1e-12));
  CHECK(rep.loss_a == 0.0);
  CHECK(rep.loss_c == 0.0);
  CHECK(rep.loss_er == 0.0);
  CHECK(rep.loss_re == 0.0);
  CHECK(rep.total == doctest::Approx(3.0 * kLn2).epsilon(1e-12));
  CHECK(rep.weight_sum == 2.0);
  CHECK(rep.weight_max == 2.0);
  CHECK(rep.weight_count == 1);
}

TEST_CASE("total is assembled from the reported terms bit for bit") {
  MiniSetup s = mini(2);
  TrainingBatch batch = mixed_batch();
  BatchLossOptions opt;
  opt.lambda1 = 0.7;
  opt.lambda2 = 1.3;
  opt.lambda3 = 0.2;
  opt.lambda4 = 0.5;
  opt.lambda5 = 2.0;
  const LossReport rep = batch_loss(batch, s.user_feats, s.item_feats, s.gmm, s.nsdn, opt, nullptr);

  CHECK(rep.total == rep.loss_pos + opt.lambda1 * rep.loss_a + opt.lambda2 * rep.loss_b +
                         opt.lambda3 * rep.loss_c + opt.lambda4 * rep.loss_er +
                         opt.lambda5 * rep.loss_re);
  CHECK(rep.n_pos == 2);
  CHECK(rep.n_a == 2);
  CHECK(rep.n_b == 2);
  CHECK(rep.n_c == 2);
  CHECK(rep.n_er == 8);       // recall head sees every entry
  CHECK(rep.n_re == 6);       // exposure head skips Space C
  CHECK(rep.total > 0.0);
}

TEST_CASE("analytic gradients match central differences") {
  for (SharingMode mode : {SharingMode::FullySeparate, SharingMode::SharedInputLayer}) {
    CAPTURE(to_string(mode));
    MiniSetup s = mini(3, mode);
    TrainingBatch batch = mixed_batch();
    BatchLossOptions opt;
    opt.lambda1 = 0.9;
    opt.lambda2 = 1.1;
    opt.lambda3 = 0.4;
    opt.lambda4 = 0.8;
    opt.lambda5 = 1.6;

    ModelGrads grads = make_zero_grads(s.gmm, s.nsdn);
    batch_loss(batch, s.user_feats, s.item_feats, s.gmm, s.nsdn, opt, &grads);
    const std::vector<double> analytic = flat_grads(grads);

    const std::vector<double*> params = flat_params(s.gmm, s.nsdn);
    REQUIRE(params.size() == analytic.size());
    // Mixed tolerance: the absolute floor absorbs the ~1e-9 of cancellation
    // noise the difference quotient carries on near-zero gradients.
    const double h = 1e-5;
    double worst_excess = -1.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
      const double saved = *params[p];
      *params[p] = saved + h;
      const double up =
          batch_loss(batch, s.user_feats, s.item_feats, s.gmm, s.nsdn, opt, nullptr).total;
      *params[p] = saved - h;
      const double down =
          batch_loss(batch, s.user_feats, s.item_feats, s.gmm, s.nsdn, opt, nullptr).total;
      *params[p] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double allowed = 1e-6 * std::max(std::abs(fd), std::abs(analytic[p])) + 1e-8;
      worst_excess = std::max(worst_excess, std::abs(fd - analytic[p]) - allowed);
    }
    CHECK(worst_excess <= 0.0);
  }
}

TEST_CASE("warmup flag freezes the scoring towers") {
  MiniSetup s = mini(4);
  TrainingBatch batch = mixed_batch();
  BatchLossOptions opt;
  opt.gmm_grads = false;
  ModelGrads grads = make_zero_grads(s.gmm, s.nsdn);
  batch_loss(batch, s.user_feats, s.item_feats, s.gmm, s.nsdn, opt, &grads);

  for (const auto& layer : grads.gmm.user_tower.layers) {
    for (double v : layer.w.data) CHECK(v == 0.0);
  }
  for (const auto& layer : grads.gmm.item_tower.layers) {
    for (double v : layer.w.data) CHECK(v == 0.0);
  }
  double head_mass = 0.0;
  for (const auto& layer : grads.nsdn.er_user.layers) {
    for (double v : layer.w.data) head_mass += std::abs(v);
  }
  CHECK(head_mass > 0.0);
}

TEST_CASE("dormant heads cost nothing and receive nothing") {
  MiniSetup s = mini(5);
  TrainingBatch batch = mixed_batch();
  BatchLossOptions opt;
  opt.lambda4 = 0.0;
  opt.lambda5 = 0.0;
  opt.head_grads = false;
  opt.compute_heads = false;
  ModelGrads grads = make_zero_grads(s.gmm, s.nsdn);
  const LossReport rep = batch_loss(batch, s.user_feats, s.item_feats, s.gmm, s.nsdn, opt, &grads);

  CHECK(rep.loss_er == 0.0);
  CHECK(rep.loss_re == 0.0);
  CHECK(rep.n_er == 0);
  CHECK(rep.n_re == 0);
  for (TensorRef& ref : named_tensors(grads.gmm, grads.nsdn)) {
    if (ref.name.rfind("nsdn.", 0) == 0) {
      for (double v : *ref.data) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("entry weights act as constants toward the scoring towers") {
  // Same batch, same weights, two different propensity models: the scoring
  // gradients may not move, because the weights are read, not derived.
  MiniSetup a = mini(6);
  MiniSetup b = mini(6);
  std::mt19937_64 other = make_rng(999, "init-nsdn");
  NsdnConfig ncfg;
  ncfg.dims = {5, 2};
  b.nsdn = make_nsdn(5, 4, ncfg, other);

  TrainingBatch batch = mixed_batch();
  BatchLossOptions opt;
  ModelGrads ga = make_zero_grads(a.gmm, a.nsdn);
  ModelGrads gb = make_zero_grads(b.gmm, b.nsdn);
  batch_loss(batch, a.user_feats, a.item_feats, a.gmm, a.nsdn, opt, &ga);
  batch_loss(batch, b.user_feats, b.item_feats, b.gmm, b.nsdn, opt, &gb);

  for (std::size_t l = 0; l < ga.gmm.user_tower.layers.size(); ++l) {
    CHECK(ga.gmm.user_tower.layers[l].w.data == gb.gmm.user_tower.layers[l].w.data);
    CHECK(ga.gmm.item_tower.layers[l].w.data == gb.gmm.item_tower.layers[l].w.data);
  }
}

TEST_CASE("non-finite batch loss raises a divergence error") {
  MiniSetup s = mini(7);
  TrainingBatch batch = mixed_batch();
  batch.entries[2].weight = std::numeric_limits<double>::infinity();
  BatchLossOptions opt;
  CHECK_THROWS_WITH_AS(
      batch_loss(batch, s.user_feats, s.item_feats, s.gmm, s.nsdn, opt, nullptr),
      doctest::Contains("non-finite"), DivergenceError);
}

TEST_CASE("model init streams are deterministic and independent") {
  Config cfg = tiny_cfg();
  TwoTower g1 = init_gmm(cfg, 6, 6);
  TwoTower g2 = init_gmm(cfg, 6, 6);
  CHECK(g1.user_tower.layers[0].w.data == g2.user_tower.layers[0].w.data);

  Config wider = cfg;
  wider.nsdn.dims = {12, 6};
  TwoTower g3 = init_gmm(wider, 6, 6);
  CHECK(g1.user_tower.layers[0].w.data == g3.user_tower.layers[0].w.data);

  NsdnModel n1 = init_nsdn(cfg, 6, 6);
  NsdnModel n2 = init_nsdn(cfg, 6, 6);
  CHECK(n1.er_user.layers[0].w.data == n2.er_user.layers[0].w.data);

  Config reseeded = cfg;
  reseeded.train.seed = 777;
  TwoTower g4 = init_gmm(reseeded, 6, 6);
  CHECK_FALSE(g1.user_tower.layers[0].w.data == g4.user_tower.layers[0].w.data);
}

TEST_CASE("named tensors enumerate every block once") {
  MiniSetup sep = mini(8, SharingMode::FullySeparate);
  auto names = named_tensors(sep.gmm, sep.nsdn);
  CHECK(names.size() == 24);  // 8 scoring blocks + 16 head blocks
  std::set<std::string> seen;
  std::size_t total_params = 0;
  for (auto& ref : names) {
    CHECK(seen.insert(ref.name).second);
    total_params += ref.data->size();
  }
  CHECK(seen.count("gmm.user.0.w") == 1);
  CHECK(seen.count("gmm.item.1.b") == 1);
  CHECK(seen.count("nsdn.er_user.0.w") == 1);
  CHECK(seen.count("nsdn.re_item.1.b") == 1);
  CHECK(seen.count("nsdn.shared_user.w") == 0);
  CHECK(total_params > 0);

  MiniSetup sh = mini(8, SharingMode::SharedInputLayer);
  auto shared_names = named_tensors(sh.gmm, sh.nsdn);
  CHECK(shared_names.size() == 20);  // 8 scoring + 4 shared + 8 head blocks
  std::set<std::string> shared_seen;
  for (auto& ref : shared_names) shared_seen.insert(ref.name);
  CHECK(shared_seen.count("nsdn.shared_user.w") == 1);
  CHECK(shared_seen.count("nsdn.shared_item.b") == 1);
  CHECK(shared_seen.count("nsdn.er_user.0.w") == 1);
  CHECK(shared_seen.count("nsdn.er_user.1.w") == 0);  // heads are one layer here
}

TEST_CASE("checkpoints round trip byte for byte") {
  ScratchDir dir("trainer-ckpt");
  MiniSetup s = mini(9);
  std::map<std::string, AdamState> optimizer;
  std::mt19937_64 rng = make_rng(10, "adam");
  for (TensorRef& ref : named_tensors(s.gmm, s.nsdn)) {
    AdamState state = make_adam_state(ref.data->size(), 0.01);
    state.first_moment = random_vec(ref.data->size(), rng, 0.1);
    state.second_moment = random_vec(ref.data->size(), rng, 0.1);
    for (double& v : state.second_moment) v = std::abs(v);
    state.step_count = 17;
    optimizer.emplace(ref.name, std::move(state));
  }
  CheckpointMeta meta;
  meta.seed = 123;
  meta.epochs_completed = 5;
  meta.best_metric = 0.44;
  meta.best_epoch = 4;
  meta.epochs_since_best = 1;
  meta.user_dim = 5;
  meta.item_dim = 4;
  meta.model_dims = {6, 3};
  meta.nsdn_dims = {5, 2};

  const Checkpoint ckpt = make_checkpoint(s.gmm, s.nsdn, optimizer, meta);
  const auto path_a = dir.path() / "a.ckpt";
  const auto path_b = dir.path() / "b.ckpt";
  save_checkpoint(ckpt, path_a);
  const Checkpoint loaded = load_checkpoint(path_a);
  save_checkpoint(loaded, path_b);
  CHECK(slurp(path_a) == slurp(path_b));
  CHECK(loaded.meta.best_metric == meta.best_metric);
  CHECK(loaded.meta.epochs_completed == 5);
  CHECK(loaded.blocks == ckpt.blocks);

  // Rebuild models from the file alone and compare behaviour.
  auto [gmm2, nsdn2] = models_from_checkpoint(loaded);
  std::mt19937_64 frng = make_rng(11, "features");
  const Vec fu = random_vec(5, frng);
  const Vec fi = random_vec(4, frng);
  CHECK(score(user_forward(s.gmm, fu), item_forward(s.gmm, fi)) ==
        score(user_forward(gmm2, fu), item_forward(gmm2, fi)));
  CHECK(er_score(s.nsdn, fu, fi) == er_score(nsdn2, fu, fi));
  CHECK(re_score(s.nsdn, fu, fi) == re_score(nsdn2, fu, fi));

  // Restoring into shaped models also restores the optimizer moments.
  MiniSetup fresh = mini(10);
  std::map<std::string, AdamState> restored;
  apply_checkpoint(loaded, fresh.gmm, fresh.nsdn, restored, 0.01);
  REQUIRE(restored.size() == optimizer.size());
  for (const auto& [name, state] : optimizer) {
    const AdamState& got = restored.at(name);
    CHECK(got.first_moment == state.first_moment);
    CHECK(got.second_moment == state.second_moment);
    CHECK(got.step_count == state.step_count);
  }
}

TEST_CASE("checkpoint loader rejects damaged files") {
  ScratchDir dir("trainer-ckpt-bad");
  MiniSetup s = mini(11);
  const Checkpoint ckpt = make_checkpoint(s.gmm, s.nsdn, {}, CheckpointMeta{});
  const auto good = dir.path() / "good.ckpt";
  save_checkpoint(ckpt, good);
  const std::string bytes = slurp(good);

  using doctest::Contains;
  const auto bad_magic = dir.path() / "magic.ckpt";
  std::ofstream(bad_magic, std::ios::binary) << "NOTYOURS" << bytes.substr(8);
  CHECK_THROWS_WITH_AS(load_checkpoint(bad_magic), Contains("not a UMA2CKPT file"),
                       CheckpointError);

  const auto truncated = dir.path() / "short.ckpt";
  std::ofstream(truncated, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_WITH_AS(load_checkpoint(truncated), Contains("truncated"), CheckpointError);

  const auto trailing = dir.path() / "long.ckpt";
  std::ofstream(trailing, std::ios::binary) << bytes << 'x';
  CHECK_THROWS_WITH_AS(load_checkpoint(trailing), Contains("trailing"), CheckpointError);

  CHECK_THROWS_AS(load_checkpoint(dir.path() / "absent.ckpt"), CheckpointError);

  Checkpoint incomplete = ckpt;
  incomplete.blocks.erase("gmm.user.0.w");
  MiniSetup shaped = mini(11);
  std::map<std::string, AdamState> opt_states;
  CHECK_THROWS_WITH_AS(apply_checkpoint(incomplete, shaped.gmm, shaped.nsdn, opt_states, 0.01),
                       Contains("missing parameter block"), CheckpointError);
}

TEST_CASE("training is reproducible run to run") {
  ScratchDir dir("trainer-repro");
  const Corpus& corpus = tiny_corpus();
  Config cfg = tiny_cfg();

  TrainResult r1 = train(corpus, cfg, dir.path() / "run1", {}, nullptr, nullptr);
  TrainResult r2 = train(corpus, cfg, dir.path() / "run2", {}, nullptr, nullptr);

  auto t1 = named_tensors(r1.gmm, r1.nsdn);
  auto t2 = named_tensors(r2.gmm, r2.nsdn);
  REQUIRE(t1.size() == t2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) {
    CHECK(t1[i].name == t2[i].name);
    CHECK(*t1[i].data == *t2[i].data);
  }
  CHECK(slurp(dir.path() / "run1" / "history.jsonl") ==
        slurp(dir.path() / "run2" / "history.jsonl"));
  CHECK(r1.epochs_completed == 3);
  REQUIRE(r1.history.size() == 3);
  CHECK(r1.history[0].warmup);
  CHECK_FALSE(r1.history[1].warmup);
  for (const EpochStats& e : r1.history) {
    CHECK(e.holdout_k == 10);
    CHECK(std::isfinite(e.mean_total));
  }
  CHECK(std::filesystem::exists(r1.last_checkpoint));
  CHECK(std::filesystem::exists(r1.best_checkpoint));
}

TEST_CASE("a resumed run matches the uninterrupted one exactly") {
  ScratchDir dir("trainer-resume");
  const Corpus& corpus = tiny_corpus();
  Config cfg = tiny_cfg();
  cfg.train.epochs = 5;

  TrainResult full = train(corpus, cfg, dir.path() / "full", {}, nullptr, nullptr);

  Config half = cfg;
  half.train.epochs = 3;
  TrainResult first = train(corpus, half, dir.path() / "part", {}, nullptr, nullptr);
  TrainResult second =
      train(corpus, cfg, dir.path() / "part2", first.last_checkpoint, nullptr, nullptr);

  CHECK(second.epochs_completed == 5);
  auto tf = named_tensors(full.gmm, full.nsdn);
  auto ts = named_tensors(second.gmm, second.nsdn);
  for (std::size_t i = 0; i < tf.size(); ++i) {
    CHECK(*tf[i].data == *ts[i].data);
  }

  // The resumed history carries epochs 4..5 under their absolute numbers and
  // matches the tail of the uninterrupted log line for line.
  std::ifstream full_hist(dir.path() / "full" / "history.jsonl");
  std::vector<std::string> full_lines;
  for (std::string line; std::getline(full_hist, line);) full_lines.push_back(line);
  std::ifstream part_hist(dir.path() / "part2" / "history.jsonl");
  std::vector<std::string> part_lines;
  for (std::string line; std::getline(part_hist, line);) part_lines.push_back(line);
  REQUIRE(full_lines.size() == 5);
  REQUIRE(part_lines.size() == 2);
  CHECK(part_lines[0] == full_lines[3]);
  CHECK(part_lines[1] == full_lines[4]);

  // Final holdout metric agrees too.
  CHECK(second.history.back().holdout_metric == full.history.back().holdout_metric);
}

TEST_CASE("resume refuses a checkpoint from a different topology or seed") {
  ScratchDir dir("trainer-resume-bad");
  const Corpus& corpus = tiny_corpus();
  Config cfg = tiny_cfg();
  cfg.train.epochs = 1;
  TrainResult r = train(corpus, cfg, dir.path() / "base", {}, nullptr, nullptr);

  Config wider = cfg;
  wider.model.dims = {10, 4};
  CHECK_THROWS_WITH_AS(
      train(corpus, wider, dir.path() / "wider", r.last_checkpoint, nullptr, nullptr),
      doctest::Contains("topology"), CheckpointError);

  Config reseeded = cfg;
  reseeded.train.seed = 999;
  CHECK_THROWS_AS(
      train(corpus, reseeded, dir.path() / "reseeded", r.last_checkpoint, nullptr, nullptr),
      CheckpointError);
}

TEST_CASE("zero epochs still leaves loadable checkpoints behind") {
  ScratchDir dir("trainer-zero");
  const Corpus& corpus = tiny_corpus();
  Config cfg = tiny_cfg();
  cfg.train.epochs = 0;
  TrainResult r = train(corpus, cfg, dir.path(), {}, nullptr, nullptr);
  CHECK(r.epochs_completed == 0);
  CHECK(r.history.empty());
  const Checkpoint ckpt = load_checkpoint(r.last_checkpoint);
  CHECK(ckpt.meta.epochs_completed == 0);
  auto [gmm, nsdn] = models_from_checkpoint(ckpt);
  TwoTower fresh = init_gmm(cfg, corpus.user_feature_dim(), corpus.item_feature_dim());
  CHECK(gmm.user_tower.layers[0].w.data == fresh.user_tower.layers[0].w.data);
}

TEST_CASE("stale holdout recall stops training at the patience limit") {
  ScratchDir dir("trainer-earlystop");
  const Corpus& corpus = tiny_corpus();
  Config cfg = tiny_cfg();
  cfg.train.epochs = 10;
  cfg.train.warmup_epochs = 0;
  cfg.train.patience = 2;
  cfg.train.lr = 1e-15;  // updates too small to move any ranking
  TrainResult r = train(corpus, cfg, dir.path(), {}, nullptr, nullptr);
  CHECK(r.early_stopped);
  CHECK(r.epochs_completed == 3);  // first epoch improves on nothing, then 2 stale
  CHECK(r.history[0].improved);
  CHECK_FALSE(r.history[1].improved);
  CHECK_FALSE(r.history[2].improved);
}

TEST_CASE("runaway loss raises a divergence error") {
  ScratchDir dir("trainer-diverge");
  const Corpus& corpus = tiny_corpus();
  Config cfg = tiny_cfg();
  cfg.train.debias = false;
  cfg.train.warmup_epochs = 1;  // epoch 1 trains nothing, pinning the baseline
  cfg.train.holdout_fraction = 0.0;
  cfg.train.patience = 0;
  cfg.train.epochs = 8;
  cfg.train.lr = 1e6;
  CHECK_THROWS_AS(train(corpus, cfg, dir.path(), {}, nullptr, nullptr), DivergenceError);
}

TEST_CASE("uniform-weight training never touches the propensity heads") {
  ScratchDir dir("trainer-uniform");
  const Corpus& corpus = tiny_corpus();
  Config cfg = tiny_cfg();
  cfg.train.debias = false;
  cfg.train.warmup_epochs = 0;
  cfg.train.epochs = 2;
  TrainResult r = train(corpus, cfg, dir.path(), {}, nullptr, nullptr);

  NsdnModel fresh = init_nsdn(cfg, corpus.user_feature_dim(), corpus.item_feature_dim());
  auto trained = named_tensors(r.gmm, r.nsdn);
  TwoTower dummy = init_gmm(cfg, corpus.user_feature_dim(), corpus.item_feature_dim());
  auto reference = named_tensors(dummy, fresh);
  for (std::size_t i = 0; i < trained.size(); ++i) {
    if (trained[i].name.rfind("nsdn.", 0) == 0) {
      CHECK(*trained[i].data == *reference[i].data);
    }
  }
  for (const EpochStats& e : r.history) {
    // Weights are recorded but never repriced: every one is exactly 1.
    CHECK(e.sums.weight_max == 1.0);
    CHECK(e.sums.weight_sum == static_cast<double>(e.sums.weight_count));
    CHECK(e.sums.loss_er == 0.0);
  }
}

TEST_CASE("warmup epochs leave the scoring towers at initialization") {
  ScratchDir dir("trainer-warmup");
  const Corpus& corpus = tiny_corpus();
  Config cfg = tiny_cfg();
  cfg.train.epochs = 1;
  cfg.train.warmup_epochs = 1;
  TrainResult r = train(corpus, cfg, dir.path(), {}, nullptr, nullptr);

  TwoTower fresh = init_gmm(cfg, corpus.user_feature_dim(), corpus.item_feature_dim());
  for (std::size_t l = 0; l < fresh.user_tower.layers.size(); ++l) {
    CHECK(r.gmm.user_tower.layers[l].w.data == fresh.user_tower.layers[l].w.data);
    CHECK(r.gmm.item_tower.layers[l].w.data == fresh.item_tower.layers[l].w.data);
  }
  NsdnModel fresh_heads = init_nsdn(cfg, corpus.user_feature_dim(), corpus.item_feature_dim());
  CHECK_FALSE(r.nsdn.er_user.layers[0].w.data == fresh_heads.er_user.layers[0].w.data);
}
