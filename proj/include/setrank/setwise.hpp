#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "setrank/data.hpp"
#include "setrank/error.hpp"
#include "setrank/model.hpp"

namespace setrank {

// Compensated (Kahan) accumulator; keeps sums of many phi terms accurate
// enough for the 1e-10-level gradient equivalence checks.
struct KahanSum {
  double sum = 0.0;
  double comp = 0.0;
  void add(double x) {
    double y = x - comp;
    double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  double value() const { return sum; }
};

// Branch-stable logistic function: exp() is only ever taken of a
// non-positive argument.
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double ex = std::exp(x);
  return ex / (1.0 + ex);
}

// phi(x) = exp(sigmoid(x)): increasing, strictly positive, range (1, e).
// log phi is exactly the sigmoid, which the loss code exploits.
inline double phi(double x) { return std::exp(sigmoid(x)); }

// Scores for one comparison list; head_index marks the designated positive.
struct ItemList {
  std::vector<double> scores;
  std::size_t head_index = 0;
};

// Probability of a full ordering under sequential choice without
// replacement: prod_d phi(s[perm[d]]) / sum_{l>=d} phi(s[perm[l]]).
inline double permutation_probability(std::span<const double> scores,
                                      std::span<const std::size_t> perm) {
  const std::size_t m = scores.size();
  if (perm.size() != m) throw error(errc::invalid_argument, "permutation length mismatch");
  std::vector<bool> seen(m, false);
  for (auto p : perm) {
    if (p >= m || seen[p]) throw error(errc::invalid_argument, "invalid permutation");
    seen[p] = true;
  }
  std::vector<double> ph(m);
  for (std::size_t l = 0; l < m; ++l) ph[l] = phi(scores[l]);
  double p = 1.0;
  for (std::size_t d = 0; d < m; ++d) {
    KahanSum denom;
    for (std::size_t l = d; l < m; ++l) denom.add(ph[perm[l]]);
    p *= ph[perm[d]] / denom.value();
  }
  return p;
}

inline double permutation_probability(const ItemList& list, std::span<const std::size_t> perm) {
  return permutation_probability(list.scores, perm);
}

// Probability that item d heads the list: phi(s_d) / sum_l phi(s_l).
inline double top1_probability(std::span<const double> scores, std::size_t d) {
  if (d >= scores.size()) throw error(errc::out_of_range, "list index " + std::to_string(d));
  KahanSum denom;
  for (double s : scores) denom.add(phi(s));
  return phi(scores[d]) / denom.value();
}

inline double top1_probability(const ItemList& list, std::size_t d) {
  return top1_probability(list.scores, d);
}

inline std::vector<double> top1_distribution(std::span<const double> scores) {
  std::vector<double> ph(scores.size());
  KahanSum denom;
  for (std::size_t l = 0; l < scores.size(); ++l) {
    ph[l] = phi(scores[l]);
    denom.add(ph[l]);
  }
  for (auto& v : ph) v /= denom.value();
  return ph;
}

// log of the setwise preference probability that `pos` beats the whole
// negative set: log[ phi(X_ij) / (phi(X_ij) + sum_k phi(X_ik)) ].
// An empty negative set yields 0 (log 1): degenerate users are no-ops.
inline double setwise_log_prob(const FactorModel& m, std::uint32_t user, std::uint32_t pos,
                               std::span<const std::uint32_t> negatives) {
  if (negatives.empty()) return 0.0;
  const double x = m.score(user, pos);
  KahanSum denom;
  denom.add(phi(x));
  for (auto k : negatives) denom.add(phi(m.score(user, k)));
  // log phi(x) == sigmoid(x)
  return sigmoid(x) - std::log(denom.value());
}

// Full MAP objective over train positives with the given per-user negative
// sets: sum_i sum_{j in P_i^train} -setwise_log_prob + (lambda/2) * ||Theta||_F^2.
inline double objective(const FactorModel& m, const ImplicitDataset& ds,
                        const std::vector<std::vector<std::uint32_t>>& negatives, double lambda) {
  if (!(lambda >= 0.0)) throw error(errc::invalid_argument, "lambda must be >= 0");
  m.check_dims(ds.n_users(), ds.n_items());
  if (negatives.size() != ds.n_users())
    throw error(errc::invalid_argument, "negative sets/user count mismatch");
  KahanSum loss;
  for (std::uint32_t i = 0; i < ds.n_users(); ++i) {
    auto its = ds.positives(i);
    auto tgs = ds.tags(i);
    for (std::size_t k = 0; k < its.size(); ++k) {
      if (tgs[k] != Split::train) continue;
      loss.add(-setwise_log_prob(m, i, its[k], negatives[i]));
    }
  }
  return loss.value() + 0.5 * lambda * m.squared_norm();
}

}  // namespace setrank
