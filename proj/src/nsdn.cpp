#include "uma2/nsdn.hpp"

#include <algorithm>
#include <unordered_map>

#include "uma2/common.hpp"

namespace uma2 {

NsdnModel make_nsdn(std::size_t user_dim, std::size_t item_dim, const NsdnConfig& cfg,
                    std::mt19937_64& rng) {
  NsdnModel model;
  model.sharing = cfg.sharing_mode;
  if (cfg.sharing_mode == SharingMode::SharedInputLayer) {
    if (cfg.dims.size() < 2) {
      throw ConfigError("nsdn.dims needs at least 2 entries for shared-input-layer mode");
    }
    const std::size_t shared_width = cfg.dims.front();
    const std::vector<std::size_t> head_dims(cfg.dims.begin() + 1, cfg.dims.end());
    model.shared_user = make_layer(user_dim, shared_width, true, rng);
    model.shared_item = make_layer(item_dim, shared_width, true, rng);
    model.er_user = make_mlp(shared_width, head_dims, rng);
    model.er_item = make_mlp(shared_width, head_dims, rng);
    model.re_user = make_mlp(shared_width, head_dims, rng);
    model.re_item = make_mlp(shared_width, head_dims, rng);
  } else {
    model.er_user = make_mlp(user_dim, cfg.dims, rng);
    model.er_item = make_mlp(item_dim, cfg.dims, rng);
    model.re_user = make_mlp(user_dim, cfg.dims, rng);
    model.re_item = make_mlp(item_dim, cfg.dims, rng);
  }
  return model;
}

namespace {

Vec head_vec(const NsdnModel& model, const Mlp& head, const MlpLayer& shared, const Vec& f) {
  if (model.sharing == SharingMode::SharedInputLayer) {
    const Vec hidden = affine_relu_forward(f, shared.w, shared.b, nullptr);
    return mlp_forward(head, hidden, nullptr);
  }
  return mlp_forward(head, f, nullptr);
}

}  // namespace

double er_score(const NsdnModel& model, const Vec& f_u, const Vec& f_i) {
  return dot(head_vec(model, model.er_user, model.shared_user, f_u),
             head_vec(model, model.er_item, model.shared_item, f_i));
}

double re_score(const NsdnModel& model, const Vec& f_u, const Vec& f_i) {
  return dot(head_vec(model, model.re_user, model.shared_user, f_u),
             head_vec(model, model.re_item, model.shared_item, f_i));
}

double predict_p1(const NsdnModel& model, const Vec& f_u, const Vec& f_i, double p_floor) {
  return std::max(sigmoid(er_score(model, f_u, f_i)), p_floor);
}

double predict_p2(const NsdnModel& model, const Vec& f_u, const Vec& f_i, double p_floor) {
  return std::max(sigmoid(re_score(model, f_u, f_i)), p_floor);
}

double ipw_weight(SpaceLabel space, const PropensityEstimates& est, double w_max) {
  switch (space) {
    case SpaceLabel::PositiveClick:
    case SpaceLabel::SpaceC:
      return 1.0;
    case SpaceLabel::SpaceA:
      return std::min(1.0 / (est.p1 * est.p2), w_max);
    case SpaceLabel::SpaceB:
      return std::min(1.0 / est.p1, w_max);
  }
  return 1.0;
}

AuxTargets auxiliary_targets(SpaceLabel space) {
  AuxTargets t;
  switch (space) {
    case SpaceLabel::PositiveClick:
    case SpaceLabel::SpaceA:
      t.er = 1.0;
      t.re = 1.0;
      break;
    case SpaceLabel::SpaceB:
      t.er = 1.0;
      t.re = 0.0;
      break;
    case SpaceLabel::SpaceC:
      t.er = 0.0;
      break;
  }
  return t;
}

void fill_ipw_weights(TrainingBatch& batch, const NsdnModel& model,
                      const std::vector<Vec>& user_features,
                      const std::vector<Vec>& item_features, const NsdnConfig& cfg) {
  // Head user vectors are reused across a user's entries; items repeat rarely
  // within a batch, so they are embedded per entry.
  std::unordered_map<std::uint32_t, Vec> er_users, re_users;
  auto user_vec = [&](std::unordered_map<std::uint32_t, Vec>& cache, const Mlp& head,
                      std::uint32_t u) -> const Vec& {
    auto it = cache.find(u);
    if (it == cache.end()) {
      it = cache.emplace(u, head_vec(model, head, model.shared_user, user_features[u])).first;
    }
    return it->second;
  };

  for (BatchEntry& e : batch.entries) {
    if (e.space != SpaceLabel::SpaceA && e.space != SpaceLabel::SpaceB) {
      e.weight = 1.0;
      continue;
    }
    PropensityEstimates est;
    const Vec er_item = head_vec(model, model.er_item, model.shared_item, item_features[e.item]);
    est.p1 = std::max(sigmoid(dot(user_vec(er_users, model.er_user, e.user), er_item)),
                      cfg.p_floor);
    if (e.space == SpaceLabel::SpaceA) {
      const Vec re_item = head_vec(model, model.re_item, model.shared_item, item_features[e.item]);
      est.p2 = std::max(sigmoid(dot(user_vec(re_users, model.re_user, e.user), re_item)),
                        cfg.p_floor);
    }
    e.weight = ipw_weight(e.space, est, cfg.w_max);
  }
}

}  // namespace uma2
