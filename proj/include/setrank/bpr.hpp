#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "setrank/data.hpp"
#include "setrank/error.hpp"
#include "setrank/metrics.hpp"
#include "setrank/model.hpp"
#include "setrank/random.hpp"
#include "setrank/setwise.hpp"
#include "setrank/trainer.hpp"

namespace setrank {

// One pairwise training triple: user, train positive, sampled negative.
struct PairSample {
  std::uint32_t user = 0;
  std::uint32_t pos = 0;
  std::uint32_t neg = 0;
};

// -log sigmoid(x), computed without overflow on either tail.
inline double softplus_neg(double x) {
  if (x >= 0.0) return std::log1p(std::exp(-x));
  return -x + std::log1p(std::exp(x));
}

// -log sigmoid(X_ij - X_ik) + lambda(||u_i||^2 + ||v_j||^2 + ||v_k||^2).
inline double bpr_loss(const FactorModel& m, const PairSample& s, double lambda) {
  if (s.pos == s.neg) throw error(errc::invalid_argument, "positive equals negative");
  const double d = m.score(s.user, s.pos) - m.score(s.user, s.neg);
  const auto u = m.user_factors(s.user);
  const auto vj = m.item_factors(s.pos);
  const auto vk = m.item_factors(s.neg);
  return softplus_neg(d) + lambda * (dot(u, u) + dot(vj, vj) + dot(vk, vk));
}

// One SGD step on bpr_loss; touches exactly u_i, v_j, v_k, all updated from
// the pre-step values.
inline void bpr_sgd_step(FactorModel& m, const PairSample& s, double lr, double lambda) {
  if (s.pos == s.neg) throw error(errc::invalid_argument, "positive equals negative");
  const double d = m.score(s.user, s.pos) - m.score(s.user, s.neg);
  const double e = sigmoid(-d);  // -d/dd of -log sigmoid(d)
  auto u = m.user_factors(s.user);
  auto vj = m.item_factors(s.pos);
  auto vk = m.item_factors(s.neg);
  const std::uint32_t r = m.rank();
  std::vector<double> u0(u.begin(), u.end());
  for (std::uint32_t t = 0; t < r; ++t) {
    const double gu = -e * (vj[t] - vk[t]) + 2.0 * lambda * u[t];
    const double gj = -e * u0[t] + 2.0 * lambda * vj[t];
    const double gk = e * u0[t] + 2.0 * lambda * vk[t];
    u[t] -= lr * gu;
    vj[t] -= lr * gj;
    vk[t] -= lr * gk;
  }
}

// Canonical BPR baseline: per epoch, one uniformly sampled unobserved
// negative per train positive, sequential SGD, fixed learning rate (decay is
// ignored). Checkpointing matches the setwise trainer.
inline TrainResult train_bpr(const ImplicitDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  TrainResult result;
  FactorModel model = FactorModel::init(ds.n_users(), ds.n_items(), cfg);

  bool has_validation = false;
  for (std::uint32_t i = 0; i < ds.n_users() && !has_validation; ++i)
    has_validation = ds.count_with_tag(i, Split::validation) > 0;

  result.model = model;
  result.best_val = -1.0;
  FactorModel last_good = model;

  for (std::uint32_t e = 0; e < cfg.epochs; ++e) {
    Rng rng = make_rng(cfg.seed, stream::bpr_epoch, e);
    KahanSum epoch_loss;
    for (std::uint32_t i = 0; i < ds.n_users(); ++i) {
      auto pos = ds.positives(i);
      if (pos.size() == ds.n_items()) continue;  // no unobserved items to sample
      std::vector<std::uint32_t> excluded(pos.begin(), pos.end());
      auto tgs = ds.tags(i);
      for (std::size_t k = 0; k < pos.size(); ++k) {
        if (tgs[k] != Split::train) continue;
        PairSample s{i, pos[k], sample_complement(rng, ds.n_items(), excluded, 1)[0]};
        epoch_loss.add(bpr_loss(model, s, cfg.lambda));
        bpr_sgd_step(model, s, cfg.gamma, cfg.lambda);
      }
    }
    if (!model.all_finite()) {
      result.diverged = true;
      result.divergence_reason = "factors became non-finite at epoch " + std::to_string(e);
      break;
    }
    const double val = has_validation
                           ? validation_precision(model, ds, 5, cfg.threads, cfg.deterministic)
                           : std::numeric_limits<double>::quiet_NaN();
    result.log.push_back({e, epoch_loss.value(), val, cfg.gamma});
    last_good = model;
    if (has_validation) {
      if (val > result.best_val) {
        result.best_val = val;
        result.best_epoch = e;
        result.model = model;
      }
    } else {
      result.best_epoch = e;
      result.model = model;
    }
  }

  if (result.diverged && !has_validation) result.model = last_good;
  return result;
}

}  // namespace setrank
