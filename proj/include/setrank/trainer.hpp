#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "setrank/data.hpp"
#include "setrank/error.hpp"
#include "setrank/metrics.hpp"
#include "setrank/model.hpp"
#include "setrank/parallel.hpp"
#include "setrank/random.hpp"
#include "setrank/setwise.hpp"

namespace setrank {

// Sampled negative sets for one epoch, |neg_i| = min(tau * J_i^train, K_i).
struct EpochPlan {
  std::vector<std::vector<std::uint32_t>> negatives;
  std::uint32_t epoch = 0;
  std::uint32_t n_users_without_unobserved = 0;
};

struct GradientBuffers {
  std::uint32_t rank = 0;
  std::vector<double> user_grad;  // n_users x rank, same layout as FactorModel
  std::vector<double> item_grad;  // n_items x rank

  GradientBuffers() = default;
  GradientBuffers(std::uint32_t r, std::uint32_t n_users, std::uint32_t n_items)
      : rank(r),
        user_grad(static_cast<std::size_t>(n_users) * r, 0.0),
        item_grad(static_cast<std::size_t>(n_items) * r, 0.0) {}

  std::span<double> user(std::uint32_t i) {
    return {user_grad.data() + static_cast<std::size_t>(i) * rank, rank};
  }
  std::span<double> item(std::uint32_t l) {
    return {item_grad.data() + static_cast<std::size_t>(l) * rank, rank};
  }
};

// Uniform sample without replacement of min(tau * J_i^train, K_i) items from
// the user's unobserved set (positives of any split are never negatives).
inline std::vector<std::uint32_t> sample_negatives(const ImplicitDataset& ds, std::uint32_t user,
                                                   double tau, Rng& rng) {
  if (!(tau >= 1.0)) throw error(errc::invalid_argument, "tau must be >= 1");
  auto pos = ds.positives(user);
  const std::size_t unobserved = ds.n_items() - pos.size();
  if (unobserved == 0) return {};
  const std::size_t n_train = ds.count_with_tag(user, Split::train);
  const auto want = static_cast<std::size_t>(std::llround(tau * static_cast<double>(n_train)));
  std::vector<std::uint32_t> excluded(pos.begin(), pos.end());
  return sample_complement(rng, ds.n_items(), excluded, std::min(want, unobserved));
}

inline EpochPlan make_epoch_plan(const ImplicitDataset& ds, double tau, Rng& rng,
                                 std::uint32_t epoch = 0) {
  EpochPlan plan;
  plan.epoch = epoch;
  plan.negatives.resize(ds.n_users());
  for (std::uint32_t i = 0; i < ds.n_users(); ++i) {
    if (ds.positives(i).size() == ds.n_items() && ds.count_with_tag(i, Split::train) > 0)
      ++plan.n_users_without_unobserved;
    plan.negatives[i] = sample_negatives(ds, i, tau, rng);
  }
  return plan;
}

namespace detail {

// Scores and per-item loss factors over one user's P_i^train followed by
// the sampled negatives: g = sigmoid(u.v), ph = exp(g) = phi, sp = g(1-g).
struct UserTerms {
  std::vector<double> g, ph, sp;

  void compute(const FactorModel& m, std::uint32_t user, std::span<const std::uint32_t> pos,
               std::span<const std::uint32_t> negs, const ImplicitDataset& ds) {
    const std::size_t total = pos.size() + negs.size();
    g.resize(total);
    ph.resize(total);
    sp.resize(total);
    const auto u = m.user_factors(user);
    for (std::size_t k = 0; k < total; ++k) {
      const std::uint32_t l = k < pos.size() ? pos[k] : negs[k - pos.size()];
      const double x = dot(u, m.item_factors(l));
      if (!std::isfinite(x))
        throw error(errc::divergence,
                    "non-finite score for user '" + ds.user_tokens()[user] + "'");
      g[k] = sigmoid(x);
      ph[k] = std::exp(g[k]);
      sp[k] = g[k] * (1.0 - g[k]);
    }
  }
};

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t d = 0; d < y.size(); ++d) y[d] += a * x[d];
}

}  // namespace detail

// Rearranged gradient of the setwise objective restricted to train positives
// and the plan's negatives, O(N(J+K~)r) total. Per user, with s[j] =
// phi_j + sum_k phi_k and totalsum = sum_j 1/s[j]:
//   c[j] = -sp_j + phi_j sp_j / s[j]        for train positives,
//   c[k] = phi_k sp_k * totalsum            for sampled negatives,
// then grad_V[:,l] += c[l] u_i, grad_U[:,i] += c[l] v_l, plus lambda*V and
// lambda*U. Also returns the data part of the objective (regularizer
// excluded) from the same pass.
inline std::pair<GradientBuffers, double> fast_gradients_with_loss(
    const FactorModel& m, const ImplicitDataset& ds, const EpochPlan& plan, double lambda,
    unsigned threads = 1, bool deterministic = true) {
  if (!(lambda >= 0.0)) throw error(errc::invalid_argument, "lambda must be >= 0");
  m.check_dims(ds.n_users(), ds.n_items());
  if (plan.negatives.size() != ds.n_users())
    throw error(errc::invalid_argument, "plan does not match dataset");

  const std::uint32_t r = m.rank();
  GradientBuffers out(r, ds.n_users(), ds.n_items());
  const unsigned t = std::max(1u, threads);
  std::vector<std::vector<double>> item_parts(
      t, std::vector<double>(static_cast<std::size_t>(ds.n_items()) * r, 0.0));
  std::vector<KahanSum> loss_parts(t);

  parallel_for(ds.n_users(), t, deterministic, [&](std::size_t idx, unsigned w) {
    const auto i = static_cast<std::uint32_t>(idx);
    const auto pos = ds.items_with_tag(i, Split::train);
    const auto& negs = plan.negatives[i];
    if (pos.empty() || negs.empty()) return;

    detail::UserTerms terms;
    terms.compute(m, i, pos, negs, ds);
    const std::size_t np = pos.size();

    KahanSum sum;
    for (std::size_t k = 0; k < negs.size(); ++k) sum.add(terms.ph[np + k]);

    std::vector<double> s(np);
    KahanSum totalsum;
    for (std::size_t j = 0; j < np; ++j) {
      s[j] = sum.value() + terms.ph[j];
      totalsum.add(1.0 / s[j]);
      loss_parts[w].add(std::log(s[j]) - terms.g[j]);
    }

    const auto u = m.user_factors(i);
    auto gu = out.user(i);
    auto& item_part = item_parts[w];
    auto item_col = [&](std::uint32_t l) {
      return std::span<double>{item_part.data() + static_cast<std::size_t>(l) * r, r};
    };
    for (std::size_t j = 0; j < np; ++j) {
      const double c = -terms.sp[j] + terms.ph[j] * terms.sp[j] / s[j];
      if (!std::isfinite(c))
        throw error(errc::divergence, "non-finite gradient for user '" + ds.user_tokens()[i] + "'");
      detail::axpy(c, u, item_col(pos[j]));
      detail::axpy(c, m.item_factors(pos[j]), gu);
    }
    for (std::size_t k = 0; k < negs.size(); ++k) {
      const double c = terms.ph[np + k] * terms.sp[np + k] * totalsum.value();
      if (!std::isfinite(c))
        throw error(errc::divergence, "non-finite gradient for user '" + ds.user_tokens()[i] + "'");
      detail::axpy(c, u, item_col(negs[k]));
      detail::axpy(c, m.item_factors(negs[k]), gu);
    }
  });

  for (unsigned w = 0; w < t; ++w)
    for (std::size_t e = 0; e < out.item_grad.size(); ++e) out.item_grad[e] += item_parts[w][e];

  if (lambda > 0.0) {
    for (std::size_t e = 0; e < out.user_grad.size(); ++e)
      out.user_grad[e] += lambda * m.user_data()[e];
    for (std::size_t e = 0; e < out.item_grad.size(); ++e)
      out.item_grad[e] += lambda * m.item_data()[e];
  }

  KahanSum loss;
  for (unsigned w = 0; w < t; ++w) loss.add(loss_parts[w].value());
  return {std::move(out), loss.value()};
}

inline GradientBuffers fast_gradients(const FactorModel& m, const ImplicitDataset& ds,
                                      const EpochPlan& plan, double lambda, unsigned threads = 1,
                                      bool deterministic = true) {
  return fast_gradients_with_loss(m, ds, plan, lambda, threads, deterministic).first;
}

// Reference gradient via the direct per-(positive, negative) double loop,
// O(N J K~ r). Same mathematical result as fast_gradients; serves as the
// equivalence oracle.
inline GradientBuffers naive_gradients(const FactorModel& m, const ImplicitDataset& ds,
                                       const EpochPlan& plan, double lambda) {
  if (!(lambda >= 0.0)) throw error(errc::invalid_argument, "lambda must be >= 0");
  m.check_dims(ds.n_users(), ds.n_items());
  if (plan.negatives.size() != ds.n_users())
    throw error(errc::invalid_argument, "plan does not match dataset");

  const std::uint32_t r = m.rank();
  GradientBuffers out(r, ds.n_users(), ds.n_items());
  for (std::uint32_t i = 0; i < ds.n_users(); ++i) {
    const auto pos = ds.items_with_tag(i, Split::train);
    const auto& negs = plan.negatives[i];
    if (pos.empty() || negs.empty()) continue;

    detail::UserTerms terms;
    terms.compute(m, i, pos, negs, ds);
    const std::size_t np = pos.size();
    const auto u = m.user_factors(i);
    auto gu = out.user(i);

    for (std::size_t j = 0; j < np; ++j) {
      double s = terms.ph[j];
      for (std::size_t k = 0; k < negs.size(); ++k) s += terms.ph[np + k];
      const double cj = -terms.sp[j] + terms.ph[j] * terms.sp[j] / s;
      if (!std::isfinite(cj))
        throw error(errc::divergence, "non-finite gradient for user '" + ds.user_tokens()[i] + "'");
      detail::axpy(cj, u, out.item(pos[j]));
      detail::axpy(cj, m.item_factors(pos[j]), gu);
      for (std::size_t k = 0; k < negs.size(); ++k) {
        const double ck = terms.ph[np + k] * terms.sp[np + k] / s;
        detail::axpy(ck, u, out.item(negs[k]));
        detail::axpy(ck, m.item_factors(negs[k]), gu);
      }
    }
  }

  if (lambda > 0.0) {
    for (std::size_t e = 0; e < out.user_grad.size(); ++e)
      out.user_grad[e] += lambda * m.user_data()[e];
    for (std::size_t e = 0; e < out.item_grad.size(); ++e)
      out.item_grad[e] += lambda * m.item_data()[e];
  }
  return out;
}

struct EpochLog {
  std::uint32_t epoch = 0;
  double objective = 0.0;  // before this epoch's update, on this epoch's plan
  double val_p5 = 0.0;     // after the update; NaN when no validation positives
  double gamma = 0.0;
};

struct TrainResult {
  FactorModel model;  // best-validation checkpoint (final model when no validation)
  std::vector<EpochLog> log;
  std::uint32_t best_epoch = 0;
  double best_val = 0.0;
  bool diverged = false;
  std::string divergence_reason;
};

// Full-batch decayed gradient descent on the setwise objective. Each epoch
// resamples negatives, computes both gradient blocks from the same
// pre-update scores, applies U -= gamma*grad_U and V -= gamma*grad_V
// simultaneously, then decays gamma once.
inline TrainResult train(const ImplicitDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  TrainResult result;
  FactorModel model = FactorModel::init(ds.n_users(), ds.n_items(), cfg);

  bool has_validation = false;
  for (std::uint32_t i = 0; i < ds.n_users() && !has_validation; ++i)
    has_validation = ds.count_with_tag(i, Split::validation) > 0;

  result.model = model;
  result.best_val = -1.0;
  double gamma = cfg.gamma;
  FactorModel last_good = model;

  for (std::uint32_t e = 0; e < cfg.epochs; ++e) {
    Rng rng = make_rng(cfg.seed, stream::epoch_plan, e);
    EpochPlan plan = make_epoch_plan(ds, cfg.tau, rng, e);
    double objective_value;
    try {
      auto [grads, data_loss] =
          fast_gradients_with_loss(model, ds, plan, cfg.lambda, cfg.threads, cfg.deterministic);
      objective_value = data_loss + 0.5 * cfg.lambda * model.squared_norm();
      if (!std::isfinite(objective_value))
        throw error(errc::divergence, "objective is not finite");
      for (std::size_t k = 0; k < model.user_data().size(); ++k)
        model.user_data()[k] -= gamma * grads.user_grad[k];
      for (std::size_t k = 0; k < model.item_data().size(); ++k)
        model.item_data()[k] -= gamma * grads.item_grad[k];
    } catch (const error& err) {
      if (err.code() != errc::divergence) throw;
      result.diverged = true;
      result.divergence_reason = err.what();
      break;
    }
    if (!model.all_finite()) {
      result.diverged = true;
      result.divergence_reason = "factors became non-finite at epoch " + std::to_string(e);
      break;
    }

    const double val = has_validation
                           ? validation_precision(model, ds, 5, cfg.threads, cfg.deterministic)
                           : std::numeric_limits<double>::quiet_NaN();
    result.log.push_back({e, objective_value, val, gamma});
    gamma *= cfg.decay;
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

struct BenchReport {
  std::uint32_t n_users = 0;
  std::uint32_t n_items = 0;
  std::uint32_t positives_per_user = 0;
  std::uint32_t rank = 0;
  double tau = 0.0;
  double fast_seconds = 0.0;
  double naive_seconds = 0.0;
  double speedup = 0.0;
};

// Times fast_gradients against naive_gradients on identical synthetic data.
inline BenchReport bench_grad(std::uint32_t J, double tau, std::uint32_t r, std::uint32_t N,
                              std::uint64_t seed = 1) {
  if (J < 1 || r < 1 || N < 1) throw error(errc::invalid_argument, "bench sizes must be >= 1");
  const auto M = static_cast<std::uint32_t>(2 * (J + std::llround(tau * J)));
  Rng rng = make_rng(seed, stream::world_draw);
  std::vector<std::string> user_tokens(N), item_tokens(M);
  for (std::uint32_t i = 0; i < N; ++i) user_tokens[i] = "u" + std::to_string(i);
  for (std::uint32_t l = 0; l < M; ++l) item_tokens[l] = "i" + std::to_string(l);
  std::vector<std::vector<std::pair<std::uint32_t, Split>>> positives(N);
  for (std::uint32_t i = 0; i < N; ++i) {
    for (auto l : sample_complement(rng, M, {}, J)) positives[i].emplace_back(l, Split::train);
  }
  ImplicitDataset ds =
      ImplicitDataset::build(std::move(user_tokens), std::move(item_tokens), positives);

  TrainConfig cfg;
  cfg.rank = r;
  cfg.seed = seed;
  FactorModel model = FactorModel::init(N, M, cfg);
  EpochPlan plan = make_epoch_plan(ds, tau, rng);

  using clock = std::chrono::steady_clock;
  auto time_call = [](auto&& fn) {
    auto t0 = clock::now();
    fn();
    return std::chrono::duration<double>(clock::now() - t0).count();
  };

  BenchReport report;
  report.n_users = N;
  report.n_items = M;
  report.positives_per_user = J;
  report.rank = r;
  report.tau = tau;
  report.fast_seconds = std::numeric_limits<double>::infinity();
  for (int rep = 0; rep < 3; ++rep)
    report.fast_seconds =
        std::min(report.fast_seconds, time_call([&] { fast_gradients(model, ds, plan, 0.1); }));
  report.naive_seconds = time_call([&] { naive_gradients(model, ds, plan, 0.1); });
  report.speedup = report.naive_seconds / report.fast_seconds;
  return report;
}

}  // namespace setrank
