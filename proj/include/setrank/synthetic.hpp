#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "setrank/data.hpp"
#include "setrank/error.hpp"
#include "setrank/model.hpp"
#include "setrank/random.hpp"
#include "setrank/setwise.hpp"
#include "setrank/trainer.hpp"

namespace setrank {

struct ScoreMatrix {
  std::uint32_t n_users = 0;
  std::uint32_t n_items = 0;
  std::vector<double> values;  // row-major N x M

  std::span<const double> row(std::uint32_t i) const {
    return {values.data() + static_cast<std::size_t>(i) * n_items, n_items};
  }
};

inline ScoreMatrix scores_of(const FactorModel& m) {
  ScoreMatrix x;
  x.n_users = m.n_users();
  x.n_items = m.n_items();
  x.values.resize(static_cast<std::size_t>(x.n_users) * x.n_items);
  std::vector<double> row;
  for (std::uint32_t i = 0; i < x.n_users; ++i) {
    m.score_user(i, row);
    std::copy(row.begin(), row.end(), x.values.begin() + static_cast<std::size_t>(i) * x.n_items);
  }
  return x;
}

// Ground-truth world for the generative experiments: X* = U*^T V* with every
// user holding the same number J of positive items.
struct SyntheticWorld {
  std::uint32_t n_users = 0;
  std::uint32_t n_items = 0;
  std::uint32_t rank = 0;
  std::uint32_t positives_per_user = 0;  // J; K = n_items - J
  double alpha = 1.0;
  std::uint64_t seed = 0;
  FactorModel truth;
  ScoreMatrix scores;  // X*, cached
  // Feasible-set radii for the constrained fit; the truth sits inside both
  // balls by construction.
  double c_user = 0.0;  // ||U*||_F
  double c_item = 0.0;  // ||V*||_F

  // Factors are drawn i.i.d. normal and scaled so X* entries have standard
  // deviation near target_score_std, then rescaled (if needed) so that
  // max sigmoid(X*) <= alpha. With log phi = sigmoid, alpha = 1 always
  // holds; alpha in (0.5, 1) tightens the score range.
  static SyntheticWorld make(std::uint32_t n_users, std::uint32_t n_items, std::uint32_t rank,
                             std::uint32_t J, double alpha, std::uint64_t seed,
                             double target_score_std = 2.5) {
    if (J < 1 || J >= n_items)
      throw error(errc::invalid_argument, "need 1 <= J < n_items");
    if (!(alpha > 0.5))
      throw error(errc::invalid_argument, "alpha must exceed 0.5 (sigmoid(0) = 0.5)");
    SyntheticWorld w;
    w.n_users = n_users;
    w.n_items = n_items;
    w.rank = rank;
    w.positives_per_user = J;
    w.alpha = alpha;
    w.seed = seed;
    w.truth = FactorModel(rank, n_users, n_items);
    const double entry_std = std::sqrt(target_score_std / std::sqrt(static_cast<double>(rank)));
    std::normal_distribution<double> normal(0.0, entry_std);
    {
      Rng rng = make_rng(seed, stream::world_items);
      for (auto& v : w.truth.item_data()) v = normal(rng);
    }
    {
      // Users are drawn sequentially from their own stream so that worlds
      // with the same seed but different n_users share a user prefix.
      Rng rng = make_rng(seed, stream::world_users);
      for (auto& v : w.truth.user_data()) v = normal(rng);
    }
    w.scores = scores_of(w.truth);
    if (alpha < 1.0) {
      const double max_score = *std::max_element(w.scores.values.begin(), w.scores.values.end());
      const double bound = std::log(alpha / (1.0 - alpha));  // sigmoid^-1(alpha)
      if (max_score > bound) {
        const double scale = bound / max_score;
        for (auto& v : w.truth.item_data()) v *= scale;
        w.scores = scores_of(w.truth);
      }
    }
    double nu = 0.0, nv = 0.0;
    for (double v : w.truth.user_data()) nu += v * v;
    for (double v : w.truth.item_data()) nv += v * v;
    w.c_user = std::sqrt(nu);
    w.c_item = std::sqrt(nv);
    return w;
  }
};

// Realized preference structure: the J positive items of each user.
struct PreferenceDraw {
  std::vector<std::vector<std::uint32_t>> positives;  // sorted per user
};

enum class DrawRule {
  race,  // exponential race: Y_il = -ln U / phi(X*_il), J smallest win
  top,   // noiseless: the J largest X*_il win
};

inline PreferenceDraw sample_world(const SyntheticWorld& w, DrawRule rule, Rng& rng) {
  PreferenceDraw draw;
  draw.positives.resize(w.n_users);
  const std::uint32_t m = w.n_items;
  std::vector<double> key(m);
  std::vector<std::uint32_t> order(m);
  for (std::uint32_t i = 0; i < w.n_users; ++i) {
    auto row = w.scores.row(i);
    if (rule == DrawRule::race) {
      for (std::uint32_t l = 0; l < m; ++l)
        key[l] = -std::log(uniform_pos(rng)) / phi(row[l]);
    } else {
      for (std::uint32_t l = 0; l < m; ++l) key[l] = -row[l];
    }
    std::iota(order.begin(), order.end(), 0u);
    std::nth_element(order.begin(), order.begin() + w.positives_per_user, order.end(),
                     [&](std::uint32_t a, std::uint32_t b) {
                       if (key[a] != key[b]) return key[a] < key[b];
                       return a < b;
                     });
    auto& pos = draw.positives[i];
    pos.assign(order.begin(), order.begin() + w.positives_per_user);
    std::sort(pos.begin(), pos.end());
  }
  return draw;
}

// All positives tagged train; split() relabels when a held-out protocol is
// wanted on top of a draw.
inline ImplicitDataset to_dataset(const SyntheticWorld& w, const PreferenceDraw& draw) {
  if (draw.positives.size() != w.n_users)
    throw error(errc::invalid_argument, "draw does not match world");
  std::vector<std::string> user_tokens(w.n_users), item_tokens(w.n_items);
  for (std::uint32_t i = 0; i < w.n_users; ++i) user_tokens[i] = "u" + std::to_string(i);
  for (std::uint32_t l = 0; l < w.n_items; ++l) item_tokens[l] = "i" + std::to_string(l);
  std::vector<std::vector<std::pair<std::uint32_t, Split>>> positives(w.n_users);
  for (std::uint32_t i = 0; i < w.n_users; ++i)
    for (auto l : draw.positives[i]) positives[i].emplace_back(l, Split::train);
  return ImplicitDataset::build(std::move(user_tokens), std::move(item_tokens), positives);
}

struct McCheck {
  double estimate = 0.0;
  double analytic = 0.0;
  double z = 0.0;
};

// Monte-Carlo check of one setwise factor: simulates the exponential race
// P(Y_j <= min_{k in O} Y_k) and compares against
// phi(X_j) / (phi(X_j) + sum_k phi(X_k)) under the binomial standard error.
inline McCheck mc_check_eq5_factor(std::span<const double> scores, std::uint32_t j,
                                   std::span<const std::uint32_t> others, std::size_t n_samples,
                                   Rng& rng) {
  if (j >= scores.size()) throw error(errc::out_of_range, "head index");
  if (n_samples < 1) throw error(errc::invalid_argument, "need at least one sample");
  McCheck out;
  const double phi_j = phi(scores[j]);
  KahanSum denom;
  denom.add(phi_j);
  std::vector<double> phi_o(others.size());
  for (std::size_t k = 0; k < others.size(); ++k) {
    phi_o[k] = phi(scores[others[k]]);
    denom.add(phi_o[k]);
  }
  out.analytic = phi_j / denom.value();
  if (others.empty()) {
    out.estimate = 1.0;
    return out;  // the positive always wins an empty race
  }
  std::size_t wins = 0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const double yj = -std::log(uniform_pos(rng)) / phi_j;
    double ymin = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < others.size(); ++k)
      ymin = std::min(ymin, -std::log(uniform_pos(rng)) / phi_o[k]);
    if (yj <= ymin) ++wins;
  }
  out.estimate = static_cast<double>(wins) / static_cast<double>(n_samples);
  const double se = std::sqrt(out.analytic * (1.0 - out.analytic) /
                              static_cast<double>(n_samples));
  out.z = (out.estimate - out.analytic) / se;
  return out;
}

// Excess risk D(X*, X^): average over users of the summed KL divergences
// between true and fitted top-1 distributions on each list {j} u O_i, with
// P_i fixed by the supplied assignment. Uses the closed form
//   KL(C*||C^) = log(S^/S*) + sum_d p*_d (sigmoid* - sigmoid^)_d,
// where S is the phi sum over the list.
inline double excess_risk(const ScoreMatrix& x_star, const ScoreMatrix& x_hat,
                          const PreferenceDraw& assignment) {
  if (x_star.n_users != x_hat.n_users || x_star.n_items != x_hat.n_items)
    throw error(errc::dim_mismatch, "score matrices differ in shape");
  if (assignment.positives.size() != x_star.n_users)
    throw error(errc::invalid_argument, "assignment does not match score matrix");
  const std::uint32_t m = x_star.n_items;
  std::vector<double> sig_star(m), sig_hat(m), phi_star(m), phi_hat(m);
  std::vector<bool> is_pos(m);
  KahanSum total;
  for (std::uint32_t i = 0; i < x_star.n_users; ++i) {
    auto rs = x_star.row(i);
    auto rh = x_hat.row(i);
    for (std::uint32_t l = 0; l < m; ++l) {
      sig_star[l] = sigmoid(rs[l]);
      sig_hat[l] = sigmoid(rh[l]);
      phi_star[l] = std::exp(sig_star[l]);
      phi_hat[l] = std::exp(sig_hat[l]);
    }
    std::fill(is_pos.begin(), is_pos.end(), false);
    for (auto j : assignment.positives[i]) {
      if (j >= m) throw error(errc::out_of_range, "assignment item index");
      is_pos[j] = true;
    }
    // Sums over the shared unobserved set O_i.
    KahanSum s_star_o, s_hat_o, gap_o;
    for (std::uint32_t l = 0; l < m; ++l) {
      if (is_pos[l]) continue;
      s_star_o.add(phi_star[l]);
      s_hat_o.add(phi_hat[l]);
      gap_o.add(phi_star[l] * (sig_star[l] - sig_hat[l]));
    }
    for (auto j : assignment.positives[i]) {
      const double s_star = phi_star[j] + s_star_o.value();
      const double s_hat = phi_hat[j] + s_hat_o.value();
      const double gap = phi_star[j] * (sig_star[j] - sig_hat[j]) + gap_o.value();
      total.add(std::log(s_hat) - std::log(s_star) + gap / s_star);
    }
  }
  const double d = total.value() / static_cast<double>(x_star.n_users);
  return std::max(d, 0.0);
}

// Constrained fit of the setwise likelihood on one drawn structure:
// projected full-batch gradient descent, with U and V rescaled onto the
// world's Frobenius balls after every step. The feasible-set constraint is
// what keeps the per-user factors from saturating; the fit runs with the
// plain likelihood (cfg.lambda is still honored if nonzero).
inline FactorModel fit_world(const SyntheticWorld& world, const ImplicitDataset& ds,
                             const TrainConfig& cfg) {
  TrainConfig fit = cfg;
  fit.rank = world.rank;
  fit.validate();
  FactorModel model = FactorModel::init(ds.n_users(), ds.n_items(), fit);
  auto project = [](std::vector<double>& data, double radius) {
    double norm2 = 0.0;
    for (double v : data) norm2 += v * v;
    const double norm = std::sqrt(norm2);
    if (norm > radius && norm > 0.0) {
      const double scale = radius / norm;
      for (auto& v : data) v *= scale;
    }
  };
  double gamma = fit.gamma;
  for (std::uint32_t e = 0; e < fit.epochs; ++e) {
    Rng rng = make_rng(fit.seed, stream::epoch_plan, e);
    EpochPlan plan = make_epoch_plan(ds, fit.tau, rng, e);
    GradientBuffers grads =
        fast_gradients(model, ds, plan, fit.lambda, fit.threads, fit.deterministic);
    for (std::size_t k = 0; k < model.user_data().size(); ++k)
      model.user_data()[k] -= gamma * grads.user_grad[k];
    for (std::size_t k = 0; k < model.item_data().size(); ++k)
      model.item_data()[k] -= gamma * grads.item_grad[k];
    project(model.user_data(), world.c_user);
    project(model.item_data(), world.c_item);
    gamma *= fit.decay;
    if (!model.all_finite())
      throw error(errc::divergence, "constrained fit diverged at epoch " + std::to_string(e));
  }
  return model;
}

// Draws one structure from the world, runs the constrained fit at the
// world's rank, and reports the excess risk measured on the drawn
// assignment.
inline double fit_and_measure(const SyntheticWorld& world, const TrainConfig& cfg,
                              DrawRule rule = DrawRule::race) {
  Rng rng = make_rng(world.seed, stream::world_draw);
  PreferenceDraw draw = sample_world(world, rule, rng);
  ImplicitDataset ds = to_dataset(world, draw);
  FactorModel model = fit_world(world, ds, cfg);
  return excess_risk(world.scores, scores_of(model), draw);
}

struct SweepRow {
  std::uint32_t n_users = 0;
  std::uint32_t n_items = 0;
  std::uint32_t rank = 0;
  std::uint32_t replicate = 0;
  double risk = 0.0;
};

// Excess-risk scaling experiment: fixed item count, growing user count.
// Replicate worlds share their seed across N values, so user prefixes and
// draws are common random numbers.
inline std::vector<SweepRow> scaling_sweep(std::uint32_t n_items, std::uint32_t rank,
                                           std::uint32_t J, std::span<const std::uint32_t> n_users_list,
                                           std::uint32_t replicates, const TrainConfig& base,
                                           std::uint64_t seed, double alpha = 1.0) {
  if (n_users_list.empty()) throw error(errc::invalid_argument, "empty sweep list");
  if (replicates < 1) throw error(errc::invalid_argument, "need at least one replicate");
  std::vector<SweepRow> rows;
  rows.reserve(n_users_list.size() * replicates);
  for (auto n : n_users_list) {
    for (std::uint32_t rep = 0; rep < replicates; ++rep) {
      SyntheticWorld world =
          SyntheticWorld::make(n, n_items, rank, J, alpha, mix_seed(seed, rep));
      TrainConfig cfg = base;
      cfg.rank = rank;
      cfg.seed = mix_seed(seed, 10000 + rep);
      rows.push_back({n, n_items, rank, rep, fit_and_measure(world, cfg)});
    }
  }
  return rows;
}

}  // namespace setrank
