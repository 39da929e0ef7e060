#pragma once

#include <optional>
#include <random>

#include "uma2/config.hpp"
#include "uma2/corpus.hpp"
#include "uma2/sampling.hpp"
#include "uma2/tensor.hpp"

namespace uma2 {

// Funnel survival probabilities for one (user, item) pair: p1 is
// entire-space -> recall set, p2 is recall set -> exposure.
struct PropensityEstimates {
  double p1 = 1.0;
  double p2 = 1.0;
};

// Two auxiliary two-tower heads, one per funnel stage. In shared-input-layer
// mode both heads read the same first projection of each feature side; the
// head Mlps then start from that hidden width.
struct NsdnModel {
  SharingMode sharing = SharingMode::FullySeparate;
  MlpLayer shared_user;
  MlpLayer shared_item;
  Mlp er_user, er_item;  // recall head
  Mlp re_user, re_item;  // exposure head
};

// Shared-input-layer mode needs nsdn.dims with at least two entries (the
// first becomes the shared width); throws ConfigError otherwise.
NsdnModel make_nsdn(std::size_t user_dim, std::size_t item_dim, const NsdnConfig& cfg,
                    std::mt19937_64& rng);

// Raw inner-product head scores, before the sigmoid.
double er_score(const NsdnModel& model, const Vec& f_u, const Vec& f_i);
double re_score(const NsdnModel& model, const Vec& f_u, const Vec& f_i);

// sigmoid(head score) clamped below by p_floor, so downstream reciprocals
// stay bounded.
double predict_p1(const NsdnModel& model, const Vec& f_u, const Vec& f_i, double p_floor);
double predict_p2(const NsdnModel& model, const Vec& f_u, const Vec& f_i, double p_floor);

// Loss weight for one entry: positives and Space C count as-is, Space B pays
// 1/p1, Space A pays 1/(p1*p2); capped at w_max.
double ipw_weight(SpaceLabel space, const PropensityEstimates& est, double w_max);

// Head training targets derived from the funnel label. The recall head sees
// every entry (1 inside the recall set, 0 for Space C); the exposure head is
// only defined inside the recall set (1 if exposed, 0 for Space B).
struct AuxTargets {
  std::optional<double> er;
  std::optional<double> re;
};

AuxTargets auxiliary_targets(SpaceLabel space);

// Overwrites the weight of every Space A/B entry with its inverse-propensity
// weight under the current heads. Predictions are read out as constants;
// nothing here participates in any gradient.
void fill_ipw_weights(TrainingBatch& batch, const NsdnModel& model,
                      const std::vector<Vec>& user_features,
                      const std::vector<Vec>& item_features, const NsdnConfig& cfg);

}  // namespace uma2
