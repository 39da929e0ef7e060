#include "uma2/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <unordered_map>

#include "uma2/rng.hpp"

namespace uma2 {

namespace {

void axpy(Vec& y, double a, const Vec& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

bool all_zero(const Vec& v) {
  for (double x : v) {
    if (x != 0.0) return false;
  }
  return true;
}

void zero_mlp(Mlp& m) {
  for (MlpLayer& l : m.layers) {
    std::fill(l.w.data.begin(), l.w.data.end(), 0.0);
    std::fill(l.b.begin(), l.b.end(), 0.0);
  }
}

void zero_layer(MlpLayer& l) {
  std::fill(l.w.data.begin(), l.w.data.end(), 0.0);
  std::fill(l.b.begin(), l.b.end(), 0.0);
}

MlpLayer layer_like(const MlpLayer& l) {
  MlpLayer z;
  z.w = DenseMatrix(l.w.rows, l.w.cols);
  z.b.assign(l.b.size(), 0.0);
  z.relu = l.relu;
  return z;
}

struct TowerCtx {
  MlpCache cache;
  Vec out;
  Vec grad;
};

struct SharedCtx {
  AffineCache cache;
  Vec hidden;
  Vec grad;
};

// unordered_map plus explicit insertion order, so gradient accumulation
// always folds in batch-entry order no matter the hash layout.
template <typename Ctx>
struct OrderedCtx {
  std::unordered_map<std::uint32_t, Ctx> map;
  std::vector<std::uint32_t> order;

  template <typename Init>
  Ctx& get(std::uint32_t id, Init&& init) {
    auto [it, inserted] = map.try_emplace(id);
    if (inserted) {
      init(it->second);
      order.push_back(id);
    }
    return it->second;
  }
};

}  // namespace

ModelGrads make_zero_grads(const TwoTower& gmm, const NsdnModel& nsdn) {
  ModelGrads g;
  g.gmm.user_tower = make_zero_like(gmm.user_tower);
  g.gmm.item_tower = make_zero_like(gmm.item_tower);
  g.nsdn.sharing = nsdn.sharing;
  g.nsdn.shared_user = layer_like(nsdn.shared_user);
  g.nsdn.shared_item = layer_like(nsdn.shared_item);
  g.nsdn.er_user = make_zero_like(nsdn.er_user);
  g.nsdn.er_item = make_zero_like(nsdn.er_item);
  g.nsdn.re_user = make_zero_like(nsdn.re_user);
  g.nsdn.re_item = make_zero_like(nsdn.re_item);
  return g;
}

namespace {

void zero_grads(ModelGrads& g) {
  zero_mlp(g.gmm.user_tower);
  zero_mlp(g.gmm.item_tower);
  zero_layer(g.nsdn.shared_user);
  zero_layer(g.nsdn.shared_item);
  zero_mlp(g.nsdn.er_user);
  zero_mlp(g.nsdn.er_item);
  zero_mlp(g.nsdn.re_user);
  zero_mlp(g.nsdn.re_item);
}

[[noreturn]] void abort_non_finite(const LossReport& rep, const TrainingBatch& batch) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "non-finite loss: pos=%g A=%g B=%g C=%g ER=%g RE=%g total=%g "
                "(batch: %zu pos, %zu A, %zu B, %zu C entries, max weight %g)",
                rep.loss_pos, rep.loss_a, rep.loss_b, rep.loss_c, rep.loss_er, rep.loss_re,
                rep.total, rep.n_pos, rep.n_a, rep.n_b, rep.n_c, rep.weight_max);
  std::string msg(buf);
  const std::size_t show = std::min<std::size_t>(batch.entries.size(), 4);
  for (std::size_t i = 0; i < show; ++i) {
    const BatchEntry& e = batch.entries[i];
    std::snprintf(buf, sizeof(buf), "; entry %zu: user=%u item=%u space=%s weight=%g", i, e.user,
                  e.item, to_string(e.space), e.weight);
    msg += buf;
  }
  throw DivergenceError(msg);
}

}  // namespace

LossReport batch_loss(const TrainingBatch& batch, const std::vector<Vec>& user_features,
                      const std::vector<Vec>& item_features, const TwoTower& gmm,
                      const NsdnModel& nsdn, const BatchLossOptions& opt, ModelGrads* grads) {
  LossReport rep;
  for (const BatchEntry& e : batch.entries) {
    switch (e.space) {
      case SpaceLabel::PositiveClick: ++rep.n_pos; break;
      case SpaceLabel::SpaceA: ++rep.n_a; break;
      case SpaceLabel::SpaceB: ++rep.n_b; break;
      case SpaceLabel::SpaceC: ++rep.n_c; break;
    }
  }
  if (opt.compute_heads) {
    rep.n_er = batch.entries.size();
    rep.n_re = rep.n_pos + rep.n_a + rep.n_b;
  }

  const bool sharing = nsdn.sharing == SharingMode::SharedInputLayer;
  const bool gmm_bw = grads != nullptr && opt.gmm_grads;
  const bool head_bw = grads != nullptr && opt.head_grads && opt.compute_heads;

  OrderedCtx<TowerCtx> gmm_u, gmm_i, er_u, er_i, re_u, re_i;
  OrderedCtx<SharedCtx> sh_u, sh_i;

  auto shared_ctx = [&](OrderedCtx<SharedCtx>& side, const MlpLayer& layer,
                        const std::vector<Vec>& features, std::uint32_t id) -> SharedCtx& {
    return side.get(id, [&](SharedCtx& c) {
      c.hidden = affine_relu_forward(features[id], layer.w, layer.b, head_bw ? &c.cache : nullptr);
      c.grad.assign(c.hidden.size(), 0.0);
    });
  };
  auto tower_ctx = [&](OrderedCtx<TowerCtx>& side, const Mlp& tower,
                       const std::vector<Vec>& features, std::uint32_t id,
                       bool want_cache) -> TowerCtx& {
    return side.get(id, [&](TowerCtx& c) {
      c.out = mlp_forward(tower, features[id], want_cache ? &c.cache : nullptr);
      c.grad.assign(c.out.size(), 0.0);
    });
  };
  auto head_ctx = [&](OrderedCtx<TowerCtx>& side, const Mlp& tower, OrderedCtx<SharedCtx>& shared,
                      const MlpLayer& shared_layer, const std::vector<Vec>& features,
                      std::uint32_t id) -> TowerCtx& {
    return side.get(id, [&](TowerCtx& c) {
      const Vec& in =
          sharing ? shared_ctx(shared, shared_layer, features, id).hidden : features[id];
      c.out = mlp_forward(tower, in, head_bw ? &c.cache : nullptr);
      c.grad.assign(c.out.size(), 0.0);
    });
  };

  double sum_pos = 0.0, sum_a = 0.0, sum_b = 0.0, sum_c = 0.0, sum_er = 0.0, sum_re = 0.0;
  for (const BatchEntry& e : batch.entries) {
    TowerCtx& uc = tower_ctx(gmm_u, gmm.user_tower, user_features, e.user, gmm_bw);
    TowerCtx& ic = tower_ctx(gmm_i, gmm.item_tower, item_features, e.item, gmm_bw);
    const double yhat = sigmoid(dot(uc.out, ic.out));
    double coeff = 0.0;
    switch (e.space) {
      case SpaceLabel::PositiveClick:
        sum_pos += bce(1, yhat);
        coeff = (yhat - 1.0) / static_cast<double>(rep.n_pos);
        break;
      case SpaceLabel::SpaceA:
        sum_a += e.weight * bce(0, yhat);
        coeff = opt.lambda1 * e.weight * yhat / static_cast<double>(rep.n_a);
        break;
      case SpaceLabel::SpaceB:
        sum_b += e.weight * bce(0, yhat);
        coeff = opt.lambda2 * e.weight * yhat / static_cast<double>(rep.n_b);
        break;
      case SpaceLabel::SpaceC:
        sum_c += bce(0, yhat);
        coeff = opt.lambda3 * yhat / static_cast<double>(rep.n_c);
        break;
    }
    if (e.space == SpaceLabel::SpaceA || e.space == SpaceLabel::SpaceB) {
      rep.weight_sum += e.weight;
      rep.weight_max = std::max(rep.weight_max, e.weight);
      ++rep.weight_count;
    }
    if (gmm_bw && coeff != 0.0) {
      axpy(uc.grad, coeff, ic.out);
      axpy(ic.grad, coeff, uc.out);
    }

    if (!opt.compute_heads) continue;
    const AuxTargets targets = auxiliary_targets(e.space);
    if (targets.er) {
      TowerCtx& eu = head_ctx(er_u, nsdn.er_user, sh_u, nsdn.shared_user, user_features, e.user);
      TowerCtx& ei = head_ctx(er_i, nsdn.er_item, sh_i, nsdn.shared_item, item_features, e.item);
      const double p = sigmoid(dot(eu.out, ei.out));
      sum_er += bce(static_cast<int>(*targets.er), p);
      if (head_bw && opt.lambda4 != 0.0) {
        const double c = opt.lambda4 * (p - *targets.er) / static_cast<double>(rep.n_er);
        axpy(eu.grad, c, ei.out);
        axpy(ei.grad, c, eu.out);
      }
    }
    if (targets.re) {
      TowerCtx& ru = head_ctx(re_u, nsdn.re_user, sh_u, nsdn.shared_user, user_features, e.user);
      TowerCtx& ri = head_ctx(re_i, nsdn.re_item, sh_i, nsdn.shared_item, item_features, e.item);
      const double p = sigmoid(dot(ru.out, ri.out));
      sum_re += bce(static_cast<int>(*targets.re), p);
      if (head_bw && opt.lambda5 != 0.0) {
        const double c = opt.lambda5 * (p - *targets.re) / static_cast<double>(rep.n_re);
        axpy(ru.grad, c, ri.out);
        axpy(ri.grad, c, ru.out);
      }
    }
  }

  rep.loss_pos = rep.n_pos ? sum_pos / static_cast<double>(rep.n_pos) : 0.0;
  rep.loss_a = rep.n_a ? sum_a / static_cast<double>(rep.n_a) : 0.0;
  rep.loss_b = rep.n_b ? sum_b / static_cast<double>(rep.n_b) : 0.0;
  rep.loss_c = rep.n_c ? sum_c / static_cast<double>(rep.n_c) : 0.0;
  rep.loss_er = rep.n_er ? sum_er / static_cast<double>(rep.n_er) : 0.0;
  rep.loss_re = rep.n_re ? sum_re / static_cast<double>(rep.n_re) : 0.0;
  rep.total = rep.loss_pos + opt.lambda1 * rep.loss_a + opt.lambda2 * rep.loss_b +
              opt.lambda3 * rep.loss_c + opt.lambda4 * rep.loss_er + opt.lambda5 * rep.loss_re;
  if (!std::isfinite(rep.total) || !std::isfinite(rep.loss_pos) || !std::isfinite(rep.loss_a) ||
      !std::isfinite(rep.loss_b) || !std::isfinite(rep.loss_c) || !std::isfinite(rep.loss_er) ||
      !std::isfinite(rep.loss_re)) {
    abort_non_finite(rep, batch);
  }

  if (grads == nullptr) return rep;

  if (gmm_bw) {
    for (std::uint32_t u : gmm_u.order) {
      TowerCtx& c = gmm_u.map[u];
      if (!all_zero(c.grad)) mlp_backward(gmm.user_tower, c.cache, c.grad, grads->gmm.user_tower);
    }
    for (std::uint32_t i : gmm_i.order) {
      TowerCtx& c = gmm_i.map[i];
      if (!all_zero(c.grad)) mlp_backward(gmm.item_tower, c.cache, c.grad, grads->gmm.item_tower);
    }
  }
  if (head_bw) {
    auto head_backward = [&](OrderedCtx<TowerCtx>& side, const Mlp& tower, Mlp& tower_grads,
                             OrderedCtx<SharedCtx>& shared) {
      for (std::uint32_t id : side.order) {
        TowerCtx& c = side.map[id];
        if (all_zero(c.grad)) continue;
        Vec gin = mlp_backward(tower, c.cache, c.grad, tower_grads);
        if (sharing) axpy(shared.map[id].grad, 1.0, gin);
      }
    };
    head_backward(er_u, nsdn.er_user, grads->nsdn.er_user, sh_u);
    head_backward(er_i, nsdn.er_item, grads->nsdn.er_item, sh_i);
    head_backward(re_u, nsdn.re_user, grads->nsdn.re_user, sh_u);
    head_backward(re_i, nsdn.re_item, grads->nsdn.re_item, sh_i);
    if (sharing) {
      for (std::uint32_t u : sh_u.order) {
        SharedCtx& c = sh_u.map[u];
        if (all_zero(c.grad)) continue;
        affine_backward_accumulate(c.grad, nsdn.shared_user.w, c.cache,
                                   grads->nsdn.shared_user.w, grads->nsdn.shared_user.b);
      }
      for (std::uint32_t i : sh_i.order) {
        SharedCtx& c = sh_i.map[i];
        if (all_zero(c.grad)) continue;
        affine_backward_accumulate(c.grad, nsdn.shared_item.w, c.cache,
                                   grads->nsdn.shared_item.w, grads->nsdn.shared_item.b);
      }
    }
  }
  return rep;
}

std::vector<bool> holdout_users(std::size_t num_users, double fraction) {
  std::vector<bool> out(num_users, false);
  if (fraction <= 0.0) return out;
  const auto threshold = static_cast<std::uint64_t>(fraction * 1'000'000.0);
  for (std::size_t u = 0; u < num_users; ++u) {
    out[u] = mix64(static_cast<std::uint64_t>(u) + 0x9E3779B97F4A7C15ULL) % 1'000'000 < threshold;
  }
  return out;
}

TwoTower init_gmm(const Config& cfg, std::size_t user_dim, std::size_t item_dim) {
  auto rng = make_rng(cfg.train.seed, "init-gmm");
  return make_two_tower(user_dim, item_dim, cfg.model.dims, rng);
}

NsdnModel init_nsdn(const Config& cfg, std::size_t user_dim, std::size_t item_dim) {
  auto rng = make_rng(cfg.train.seed, "init-nsdn");
  return make_nsdn(user_dim, item_dim, cfg.nsdn, rng);
}

std::vector<TensorRef> named_tensors(TwoTower& gmm, NsdnModel& nsdn) {
  std::vector<TensorRef> out;
  auto add_mlp = [&out](const std::string& prefix, Mlp& mlp) {
    for (std::size_t li = 0; li < mlp.layers.size(); ++li) {
      const std::string base = prefix + "." + std::to_string(li);
      out.push_back({base + ".w", &mlp.layers[li].w.data});
      out.push_back({base + ".b", &mlp.layers[li].b});
    }
  };
  add_mlp("gmm.user", gmm.user_tower);
  add_mlp("gmm.item", gmm.item_tower);
  if (nsdn.sharing == SharingMode::SharedInputLayer) {
    out.push_back({"nsdn.shared_user.w", &nsdn.shared_user.w.data});
    out.push_back({"nsdn.shared_user.b", &nsdn.shared_user.b});
    out.push_back({"nsdn.shared_item.w", &nsdn.shared_item.w.data});
    out.push_back({"nsdn.shared_item.b", &nsdn.shared_item.b});
  }
  add_mlp("nsdn.er_user", nsdn.er_user);
  add_mlp("nsdn.er_item", nsdn.er_item);
  add_mlp("nsdn.re_user", nsdn.re_user);
  add_mlp("nsdn.re_item", nsdn.re_item);
  return out;
}

Checkpoint make_checkpoint(const TwoTower& gmm, const NsdnModel& nsdn,
                           const std::map<std::string, AdamState>& optimizer,
                           const CheckpointMeta& meta) {
  Checkpoint ckpt;
  ckpt.meta = meta;
  for (const TensorRef& ref :
       named_tensors(const_cast<TwoTower&>(gmm), const_cast<NsdnModel&>(nsdn))) {
    ckpt.blocks[ref.name] = *ref.data;
  }
  for (const auto& [name, state] : optimizer) {
    ckpt.blocks["adam." + name + ".m"] = state.first_moment;
    ckpt.blocks["adam." + name + ".v"] = state.second_moment;
    ckpt.blocks["adam." + name + ".t"] = Vec{static_cast<double>(state.step_count)};
  }
  return ckpt;
}

namespace {

Mlp shaped_mlp(std::size_t input_dim, const std::vector<std::uint64_t>& dims) {
  Mlp m;
  std::size_t fan_in = input_dim;
  for (std::size_t li = 0; li < dims.size(); ++li) {
    MlpLayer l;
    l.w = DenseMatrix(static_cast<std::size_t>(dims[li]), fan_in);
    l.b.assign(static_cast<std::size_t>(dims[li]), 0.0);
    l.relu = li + 1 < dims.size();
    m.layers.push_back(std::move(l));
    fan_in = static_cast<std::size_t>(dims[li]);
  }
  return m;
}

const Vec& find_block(const Checkpoint& ckpt, const std::string& name, std::size_t expect) {
  const auto it = ckpt.blocks.find(name);
  if (it == ckpt.blocks.end()) {
    throw CheckpointError("checkpoint is missing parameter block '" + name + "'");
  }
  if (it->second.size() != expect) {
    throw CheckpointError("checkpoint block '" + name + "' holds " +
                          std::to_string(it->second.size()) + " values, model expects " +
                          std::to_string(expect));
  }
  return it->second;
}

}  // namespace

std::pair<TwoTower, NsdnModel> models_from_checkpoint(const Checkpoint& ckpt) {
  const CheckpointMeta& meta = ckpt.meta;
  if (meta.user_dim == 0 || meta.item_dim == 0 || meta.model_dims.empty() ||
      meta.nsdn_dims.empty()) {
    throw CheckpointError("checkpoint metadata lacks model topology");
  }
  if (meta.sharing_mode > 1) {
    throw CheckpointError("checkpoint has unknown sharing mode " +
                          std::to_string(meta.sharing_mode));
  }
  TwoTower gmm;
  gmm.user_tower = shaped_mlp(meta.user_dim, meta.model_dims);
  gmm.item_tower = shaped_mlp(meta.item_dim, meta.model_dims);

  NsdnModel nsdn;
  nsdn.sharing = meta.sharing_mode == 1 ? SharingMode::SharedInputLayer : SharingMode::FullySeparate;
  if (nsdn.sharing == SharingMode::SharedInputLayer) {
    if (meta.nsdn_dims.size() < 2) {
      throw CheckpointError("shared-input-layer checkpoint needs at least 2 head dims");
    }
    const auto shared_width = static_cast<std::size_t>(meta.nsdn_dims.front());
    const std::vector<std::uint64_t> head_dims(meta.nsdn_dims.begin() + 1, meta.nsdn_dims.end());
    nsdn.shared_user.w = DenseMatrix(shared_width, meta.user_dim);
    nsdn.shared_user.b.assign(shared_width, 0.0);
    nsdn.shared_user.relu = true;
    nsdn.shared_item.w = DenseMatrix(shared_width, meta.item_dim);
    nsdn.shared_item.b.assign(shared_width, 0.0);
    nsdn.shared_item.relu = true;
    nsdn.er_user = shaped_mlp(shared_width, head_dims);
    nsdn.er_item = shaped_mlp(shared_width, head_dims);
    nsdn.re_user = shaped_mlp(shared_width, head_dims);
    nsdn.re_item = shaped_mlp(shared_width, head_dims);
  } else {
    nsdn.er_user = shaped_mlp(meta.user_dim, meta.nsdn_dims);
    nsdn.er_item = shaped_mlp(meta.item_dim, meta.nsdn_dims);
    nsdn.re_user = shaped_mlp(meta.user_dim, meta.nsdn_dims);
    nsdn.re_item = shaped_mlp(meta.item_dim, meta.nsdn_dims);
  }

  for (const TensorRef& ref : named_tensors(gmm, nsdn)) {
    *ref.data = find_block(ckpt, ref.name, ref.data->size());
  }
  return {std::move(gmm), std::move(nsdn)};
}

void apply_checkpoint(const Checkpoint& ckpt, TwoTower& gmm, NsdnModel& nsdn,
                      std::map<std::string, AdamState>& optimizer, double learning_rate) {
  for (const TensorRef& ref : named_tensors(gmm, nsdn)) {
    *ref.data = find_block(ckpt, ref.name, ref.data->size());
    const std::string m_name = "adam." + ref.name + ".m";
    const auto it = ckpt.blocks.find(m_name);
    if (it == ckpt.blocks.end()) continue;  // tensor was never updated before the save
    AdamState state = make_adam_state(ref.data->size(), learning_rate);
    state.first_moment = find_block(ckpt, m_name, ref.data->size());
    state.second_moment = find_block(ckpt, "adam." + ref.name + ".v", ref.data->size());
    state.step_count = static_cast<std::uint64_t>(find_block(ckpt, "adam." + ref.name + ".t", 1)[0]);
    optimizer[ref.name] = std::move(state);
  }
}

namespace {

void apply_updates(TwoTower& gmm, NsdnModel& nsdn, ModelGrads& grads,
                   std::map<std::string, AdamState>& optimizer, double learning_rate,
                   bool update_gmm, bool update_heads) {
  std::vector<TensorRef> params = named_tensors(gmm, nsdn);
  std::vector<TensorRef> gvecs = named_tensors(grads.gmm, grads.nsdn);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool is_gmm = params[i].name.rfind("gmm.", 0) == 0;
    if (is_gmm ? !update_gmm : !update_heads) continue;
    auto it = optimizer.find(params[i].name);
    if (it == optimizer.end()) {
      it = optimizer.emplace(params[i].name, make_adam_state(params[i].data->size(), learning_rate))
               .first;
    }
    adam_update(*params[i].data, *gvecs[i].data, it->second);
  }
}

nlohmann::json epoch_json(const EpochStats& st) {
  const LossReport& s = st.sums;
  auto term = [](double sum, std::size_t n) { return n ? sum / static_cast<double>(n) : 0.0; };
  return {
      {"epoch", st.epoch},
      {"warmup", st.warmup},
      {"loss_pos", term(s.loss_pos, s.n_pos)},
      {"loss_a", term(s.loss_a, s.n_a)},
      {"loss_b", term(s.loss_b, s.n_b)},
      {"loss_c", term(s.loss_c, s.n_c)},
      {"loss_er", term(s.loss_er, s.n_er)},
      {"loss_re", term(s.loss_re, s.n_re)},
      {"total", st.mean_total},
      {"holdout_recall", st.holdout_metric},
      {"holdout_k", st.holdout_k},
      {"weight_mean", s.weight_count ? s.weight_sum / static_cast<double>(s.weight_count) : 1.0},
      {"weight_max", s.weight_max},
      {"skipped_positives", st.counters.skipped_positives},
      {"fallback_positives", st.counters.fallback_positives},
      {"short_positives", st.counters.short_positives},
      {"improved", st.improved},
  };
}

void print_epoch(std::ostream& os, const EpochStats& st) {
  const nlohmann::json j = epoch_json(st);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "epoch %3zu%s  total %.4f  pos %.4f  A %.4f  B %.4f  C %.4f  ER %.4f  RE %.4f"
                "  w-mean %.2f  holdout R@%zu %.4f%s\n",
                st.epoch, st.warmup ? "w" : " ", st.mean_total, j["loss_pos"].get<double>(),
                j["loss_a"].get<double>(), j["loss_b"].get<double>(), j["loss_c"].get<double>(),
                j["loss_er"].get<double>(), j["loss_re"].get<double>(),
                j["weight_mean"].get<double>(), st.holdout_k, st.holdout_metric,
                st.improved ? "  *" : "");
  os << buf;
  os.flush();
}

void accumulate(LossReport& sums, const LossReport& rep) {
  sums.loss_pos += rep.loss_pos * static_cast<double>(rep.n_pos);
  sums.loss_a += rep.loss_a * static_cast<double>(rep.n_a);
  sums.loss_b += rep.loss_b * static_cast<double>(rep.n_b);
  sums.loss_c += rep.loss_c * static_cast<double>(rep.n_c);
  sums.loss_er += rep.loss_er * static_cast<double>(rep.n_er);
  sums.loss_re += rep.loss_re * static_cast<double>(rep.n_re);
  sums.n_pos += rep.n_pos;
  sums.n_a += rep.n_a;
  sums.n_b += rep.n_b;
  sums.n_c += rep.n_c;
  sums.n_er += rep.n_er;
  sums.n_re += rep.n_re;
  sums.weight_sum += rep.weight_sum;
  sums.weight_max = std::max(sums.weight_max, rep.weight_max);
  sums.weight_count += rep.weight_count;
}

}  // namespace

TrainResult train(const Corpus& corpus, const Config& cfg, const std::filesystem::path& out_dir,
                  const std::filesystem::path& resume, ManifestWriter* manifest,
                  std::ostream* log) {
  cfg.validate();
  const std::size_t user_dim = corpus.user_feature_dim();
  const std::size_t item_dim = corpus.item_feature_dim();
  if (user_dim == 0 || item_dim == 0) throw ConfigError("corpus has no usable feature rows");
  std::filesystem::create_directories(out_dir);

  const std::vector<bool> hold = holdout_users(corpus.num_users(), cfg.train.holdout_fraction);
  std::vector<PositivePair> train_pos;
  std::vector<std::vector<std::uint32_t>> holdout_pos(corpus.num_users());
  for (const PositivePair& p : collect_positives(corpus)) {
    if (hold[p.first]) {
      holdout_pos[p.first].push_back(p.second);
    } else {
      train_pos.push_back(p);
    }
  }
  if (train_pos.empty()) throw ConfigError("no training positives after holdout split");
  bool have_holdout = false;
  for (const auto& v : holdout_pos) {
    if (!v.empty()) {
      have_holdout = true;
      break;
    }
  }

  std::size_t items_present = 0;
  for (std::size_t i = 0; i < corpus.num_items(); ++i) {
    if (corpus.item_seen[i]) ++items_present;
  }
  const std::size_t k_eval = std::min(cfg.eval.k_list.front(), items_present);

  TwoTower gmm = init_gmm(cfg, user_dim, item_dim);
  NsdnModel nsdn = init_nsdn(cfg, user_dim, item_dim);
  std::map<std::string, AdamState> optimizer;

  CheckpointMeta meta;
  meta.seed = cfg.train.seed;
  meta.best_metric = -std::numeric_limits<double>::infinity();
  meta.user_dim = user_dim;
  meta.item_dim = item_dim;
  meta.sharing_mode = cfg.nsdn.sharing_mode == SharingMode::SharedInputLayer ? 1 : 0;
  meta.model_dims.assign(cfg.model.dims.begin(), cfg.model.dims.end());
  meta.nsdn_dims.assign(cfg.nsdn.dims.begin(), cfg.nsdn.dims.end());

  std::size_t start_epoch = 0;
  if (!resume.empty()) {
    const Checkpoint ckpt = load_checkpoint(resume);
    if (ckpt.meta.user_dim != meta.user_dim || ckpt.meta.item_dim != meta.item_dim ||
        ckpt.meta.model_dims != meta.model_dims || ckpt.meta.nsdn_dims != meta.nsdn_dims ||
        ckpt.meta.sharing_mode != meta.sharing_mode) {
      throw CheckpointError(resume.string() + ": checkpoint topology does not match the config");
    }
    if (ckpt.meta.seed != cfg.train.seed) {
      throw CheckpointError(resume.string() + ": checkpoint seed " +
                            std::to_string(ckpt.meta.seed) + " differs from train.seed " +
                            std::to_string(cfg.train.seed));
    }
    apply_checkpoint(ckpt, gmm, nsdn, optimizer, cfg.train.lr);
    meta = ckpt.meta;
    start_epoch = static_cast<std::size_t>(meta.epochs_completed);
  }

  TrainResult result;
  result.last_checkpoint = out_dir / "last.ckpt";
  result.best_checkpoint = out_dir / "best.ckpt";

  std::ofstream history(out_dir / "history.jsonl", std::ios::binary | std::ios::trunc);
  if (!history) throw IoError("cannot open history file: " + (out_dir / "history.jsonl").string());

  if (manifest) {
    nlohmann::json j;
    for (const auto& [k, v] : cfg.resolved()) j[k] = v;
    manifest->record("resolved-config", j);
  }

  BatchLossOptions blo;
  blo.lambda1 = cfg.train.lambda1;
  blo.lambda2 = cfg.train.lambda2;
  blo.lambda3 = cfg.train.lambda3;
  // Uniform-weight runs leave the heads untouched and unpriced.
  blo.lambda4 = cfg.train.debias ? cfg.train.lambda4 : 0.0;
  blo.lambda5 = cfg.train.debias ? cfg.train.lambda5 : 0.0;
  blo.head_grads = cfg.train.debias;
  blo.compute_heads = cfg.train.debias;

  ModelGrads grads = make_zero_grads(gmm, nsdn);
  double initial_total = std::numeric_limits<double>::quiet_NaN();
  int high_loss_epochs = 0;
  SamplerCounters total_counters;
  bool saved_any = false;

  for (std::size_t epoch = start_epoch; epoch < cfg.train.epochs; ++epoch) {
    const bool warmup = epoch < cfg.train.warmup_epochs;
    blo.gmm_grads = !warmup;

    BatchStream stream(corpus, train_pos, cfg.sampling, cfg.train.batch_size,
                       make_rng(cfg.train.seed, "shuffle", epoch),
                       make_rng(cfg.train.seed, "negatives", epoch));
    EpochStats st;
    st.epoch = epoch + 1;
    st.warmup = warmup;

    TrainingBatch batch;
    while (stream.next(batch)) {
      if (cfg.train.debias && !warmup) {
        fill_ipw_weights(batch, nsdn, corpus.user_features, corpus.item_features, cfg.nsdn);
      }
      zero_grads(grads);
      const LossReport rep = batch_loss(batch, corpus.user_features, corpus.item_features, gmm,
                                        nsdn, blo, &grads);
      apply_updates(gmm, nsdn, grads, optimizer, cfg.train.lr, blo.gmm_grads, blo.head_grads);
      accumulate(st.sums, rep);
    }
    st.counters = stream.counters();
    total_counters.add(st.counters);
    {
      const LossReport& s = st.sums;
      auto term = [](double sum, std::size_t n) { return n ? sum / static_cast<double>(n) : 0.0; };
      st.mean_total = term(s.loss_pos, s.n_pos) + blo.lambda1 * term(s.loss_a, s.n_a) +
                      blo.lambda2 * term(s.loss_b, s.n_b) + blo.lambda3 * term(s.loss_c, s.n_c) +
                      blo.lambda4 * term(s.loss_er, s.n_er) + blo.lambda5 * term(s.loss_re, s.n_re);
    }

    st.holdout_k = k_eval;
    if (have_holdout && k_eval > 0) {
      const EmbeddingTable users = embed_all(gmm.user_tower, corpus.user_features, corpus.user_seen);
      const EmbeddingTable items = embed_all(gmm.item_tower, corpus.item_features, corpus.item_seen);
      st.holdout_metric = evaluate(users, holdout_pos, items, {k_eval}, nullptr).front().recall;
    }

    meta.epochs_completed = epoch + 1;
    const bool improved = !have_holdout || st.holdout_metric > meta.best_metric;
    if (improved) {
      meta.best_metric = have_holdout ? st.holdout_metric : 0.0;
      meta.best_epoch = epoch + 1;
      meta.epochs_since_best = 0;
    } else {
      ++meta.epochs_since_best;
    }
    st.improved = improved;

    const Checkpoint ckpt = make_checkpoint(gmm, nsdn, optimizer, meta);
    save_checkpoint(ckpt, result.last_checkpoint);
    if (improved) save_checkpoint(ckpt, result.best_checkpoint);
    saved_any = true;

    history << epoch_json(st).dump() << "\n";
    history.flush();
    if (log) print_epoch(*log, st);
    if (manifest) manifest->record("epoch", epoch_json(st));
    result.history.push_back(st);
    result.epochs_completed = epoch + 1;

    if (std::isnan(initial_total)) {
      initial_total = st.mean_total;
    } else if (st.mean_total > 10.0 * initial_total) {
      if (++high_loss_epochs >= 2) {
        const std::string msg = "training diverged: epoch total " + fmt_double(st.mean_total) +
                                " above 10x the initial " + fmt_double(initial_total) +
                                " for 2 consecutive epochs";
        if (manifest) manifest->fail(msg);
        throw DivergenceError(msg);
      }
    } else {
      high_loss_epochs = 0;
    }

    if (!warmup && have_holdout && cfg.train.patience > 0 &&
        meta.epochs_since_best >= cfg.train.patience) {
      result.early_stopped = true;
      if (log) *log << "early stop: no holdout improvement for " << cfg.train.patience
                    << " epochs\n";
      break;
    }
  }

  if (!saved_any) {
    const Checkpoint ckpt = make_checkpoint(gmm, nsdn, optimizer, meta);
    save_checkpoint(ckpt, result.last_checkpoint);
    save_checkpoint(ckpt, result.best_checkpoint);
  } else if (!std::filesystem::exists(result.best_checkpoint)) {
    // Resumed into a fresh directory without a new best: keep the pointer
    // valid by mirroring the last state.
    save_checkpoint(make_checkpoint(gmm, nsdn, optimizer, meta), result.best_checkpoint);
  }

  result.epochs_completed = static_cast<std::size_t>(meta.epochs_completed);
  result.gmm = std::move(gmm);
  result.nsdn = std::move(nsdn);

  if (manifest) {
    manifest->record("train-summary",
                     {{"epochs_completed", result.epochs_completed},
                      {"early_stopped", result.early_stopped},
                      {"best_epoch", meta.best_epoch},
                      {"best_holdout_recall", have_holdout ? meta.best_metric : 0.0},
                      {"skipped_positives", total_counters.skipped_positives},
                      {"fallback_positives", total_counters.fallback_positives},
                      {"short_positives", total_counters.short_positives}});
    manifest->artifact("checkpoint", result.last_checkpoint);
    manifest->artifact("checkpoint", result.best_checkpoint);
    manifest->artifact("history", out_dir / "history.jsonl");
  }
  return result;
}

}  // namespace uma2
