// Shared helpers for the test suites: random problem instances, Frobenius
// distances, and the central finite-difference gradient oracle.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "setrank/data.hpp"
#include "setrank/model.hpp"
#include "setrank/setwise.hpp"
#include "setrank/trainer.hpp"

namespace testsupport {

using namespace setrank;

struct Instance {
  ImplicitDataset ds;
  FactorModel model;
  EpochPlan plan;
  double lambda = 0.0;
};

// Random dataset/model/plan triple within the given bounds. Users carry a
// mix of train and held-out positives so the train filter is exercised.
inline Instance random_instance(std::mt19937_64& rng, std::uint32_t max_users = 10,
                                std::uint32_t max_items = 12, std::uint32_t max_rank = 5,
                                double max_tau = 3.0) {
  std::uniform_int_distribution<std::uint32_t> users(2, max_users);
  std::uniform_int_distribution<std::uint32_t> items(6, max_items);
  std::uniform_int_distribution<std::uint32_t> rank(1, max_rank);
  const std::uint32_t n = users(rng), m = items(rng), r = rank(rng);

  std::vector<std::string> user_tokens(n), item_tokens(m);
  for (std::uint32_t i = 0; i < n; ++i) user_tokens[i] = "u" + std::to_string(i);
  for (std::uint32_t l = 0; l < m; ++l) item_tokens[l] = "i" + std::to_string(l);

  std::uniform_int_distribution<std::uint32_t> count(0, 4);
  std::uniform_int_distribution<int> tag(0, 5);
  std::vector<std::vector<std::pair<std::uint32_t, Split>>> positives(n);
  Rng sampler(rng());
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t total = std::min(count(rng) + count(rng), m - 2);
    for (auto l : sample_complement(sampler, m, {}, total)) {
      const int t = tag(rng);
      Split s = t < 4 ? Split::train : (t == 4 ? Split::validation : Split::test);
      positives[i].emplace_back(l, s);
    }
  }

  Instance inst;
  inst.ds = ImplicitDataset::build(std::move(user_tokens), std::move(item_tokens), positives);
  TrainConfig cfg;
  cfg.rank = r;
  cfg.seed = rng();
  cfg.init_std = 0.4;
  inst.model = FactorModel::init(n, m, cfg);
  std::uniform_real_distribution<double> tau(1.0, max_tau);
  std::uniform_real_distribution<double> lambda(0.1, 1.0);
  inst.lambda = lambda(rng);
  Rng plan_rng(rng());
  inst.plan = make_epoch_plan(inst.ds, tau(rng), plan_rng);
  return inst;
}

inline double rel_frobenius(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    diff += d * d;
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  const double denom = std::sqrt(std::max(na, nb));
  if (denom == 0.0) return std::sqrt(diff);
  return std::sqrt(diff) / denom;
}

// Joint relative Frobenius distance over both gradient blocks.
inline double grad_distance(const GradientBuffers& a, const GradientBuffers& b) {
  std::vector<double> av(a.user_grad), bv(b.user_grad);
  av.insert(av.end(), a.item_grad.begin(), a.item_grad.end());
  bv.insert(bv.end(), b.item_grad.begin(), b.item_grad.end());
  return rel_frobenius(av, bv);
}

// Central finite differences of the full objective with step h.
inline GradientBuffers fd_gradients(const FactorModel& model, const ImplicitDataset& ds,
                                    const EpochPlan& plan, double lambda, double h = 1e-6) {
  GradientBuffers out(model.rank(), model.n_users(), model.n_items());
  FactorModel probe = model;
  auto central = [&](double& slot) {
    const double saved = slot;
    slot = saved + h;
    const double up = objective(probe, ds, plan.negatives, lambda);
    slot = saved - h;
    const double down = objective(probe, ds, plan.negatives, lambda);
    slot = saved;
    return (up - down) / (2.0 * h);
  };
  for (std::size_t k = 0; k < probe.user_data().size(); ++k)
    out.user_grad[k] = central(probe.user_data()[k]);
  for (std::size_t k = 0; k < probe.item_data().size(); ++k)
    out.item_grad[k] = central(probe.item_data()[k]);
  return out;
}

}  // namespace testsupport
