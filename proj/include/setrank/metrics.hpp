#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <unordered_set>
#include <vector>

#include "setrank/data.hpp"
#include "setrank/error.hpp"
#include "setrank/model.hpp"
#include "setrank/parallel.hpp"

namespace setrank {

// Candidate ranking from raw scores: excluded items dropped, the rest sorted
// by score descending with ties broken by ascending item index.
inline std::vector<std::uint32_t> rank_by_score(std::span<const double> scores,
                                                const std::vector<bool>& excluded) {
  std::vector<std::uint32_t> order;
  order.reserve(scores.size());
  for (std::uint32_t l = 0; l < scores.size(); ++l)
    if (!excluded[l]) order.push_back(l);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return order;
}

// Ranking for one user. Train positives are always excluded from the
// candidates; validation positives are excluded too when evaluating on test.
inline std::vector<std::uint32_t> rank_items(const FactorModel& m, const ImplicitDataset& ds,
                                             std::uint32_t user, Split target = Split::test) {
  m.check_dims(ds.n_users(), ds.n_items());
  std::vector<bool> excluded(ds.n_items(), false);
  auto its = ds.positives(user);
  auto tgs = ds.tags(user);
  for (std::size_t k = 0; k < its.size(); ++k) {
    if (tgs[k] == Split::train) excluded[its[k]] = true;
    if (target == Split::test && tgs[k] == Split::validation) excluded[its[k]] = true;
  }
  std::vector<double> scores = m.score_user(user);
  return rank_by_score(scores, excluded);
}

inline std::size_t hits_at(std::span<const std::uint32_t> ranking,
                           const std::unordered_set<std::uint32_t>& relevant, std::uint32_t p) {
  std::size_t hits = 0;
  const std::size_t depth = std::min<std::size_t>(p, ranking.size());
  for (std::size_t k = 0; k < depth; ++k)
    if (relevant.count(ranking[k])) ++hits;
  return hits;
}

inline double precision_at(std::span<const std::uint32_t> ranking,
                           const std::unordered_set<std::uint32_t>& relevant, std::uint32_t p) {
  if (p < 1) throw error(errc::invalid_argument, "cutoff must be >= 1");
  return static_cast<double>(hits_at(ranking, relevant, p)) / static_cast<double>(p);
}

inline double recall_at(std::span<const std::uint32_t> ranking,
                        const std::unordered_set<std::uint32_t>& relevant, std::uint32_t p) {
  if (p < 1) throw error(errc::invalid_argument, "cutoff must be >= 1");
  if (relevant.empty()) throw error(errc::invalid_argument, "recall undefined with no relevant items");
  return static_cast<double>(hits_at(ranking, relevant, p)) / static_cast<double>(relevant.size());
}

// AP@P = (sum_{p<=P} rel(p) * Prec@p) / min(P, |relevant|); a perfect top-P
// ranking scores 1.
inline double average_precision_at(std::span<const std::uint32_t> ranking,
                                   const std::unordered_set<std::uint32_t>& relevant,
                                   std::uint32_t p) {
  if (p < 1) throw error(errc::invalid_argument, "cutoff must be >= 1");
  if (relevant.empty()) throw error(errc::invalid_argument, "AP undefined with no relevant items");
  const std::size_t depth = std::min<std::size_t>(p, ranking.size());
  std::size_t hits = 0;
  double acc = 0.0;
  for (std::size_t k = 0; k < depth; ++k) {
    if (relevant.count(ranking[k])) {
      ++hits;
      acc += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return acc / static_cast<double>(std::min<std::size_t>(p, relevant.size()));
}

struct UserEval {
  std::uint32_t user = 0;
  std::size_t n_relevant = 0;
  std::vector<double> precision, recall, ap;  // one entry per cutoff
};

struct EvalReport {
  std::vector<std::uint32_t> cutoffs;
  std::vector<double> precision, recall, map;  // means over evaluated users
  std::uint32_t n_users = 0;
  std::uint32_t n_evaluated = 0;
  std::uint32_t n_skipped = 0;  // users with no relevant items in the target split
  std::vector<UserEval> per_user;
};

struct EvalOptions {
  std::vector<std::uint32_t> cutoffs{5, 10};
  Split target = Split::test;
  bool keep_per_user = false;
  unsigned threads = 1;
  bool deterministic = true;
};

// Per-user metrics computed in parallel, reduced in fixed user order.
inline EvalReport evaluate(const FactorModel& m, const ImplicitDataset& ds,
                           const EvalOptions& opts = {}) {
  m.check_dims(ds.n_users(), ds.n_items());
  if (opts.cutoffs.empty()) throw error(errc::invalid_argument, "at least one cutoff required");
  for (auto p : opts.cutoffs)
    if (p < 1) throw error(errc::invalid_argument, "cutoff must be >= 1");

  const std::size_t nc = opts.cutoffs.size();
  std::vector<UserEval> rows(ds.n_users());
  parallel_for(ds.n_users(), opts.threads, opts.deterministic, [&](std::size_t i, unsigned) {
    auto user = static_cast<std::uint32_t>(i);
    UserEval& row = rows[i];
    row.user = user;
    auto relevant_items = ds.items_with_tag(user, opts.target);
    row.n_relevant = relevant_items.size();
    if (relevant_items.empty()) return;
    std::unordered_set<std::uint32_t> relevant(relevant_items.begin(), relevant_items.end());
    auto ranking = rank_items(m, ds, user, opts.target);
    row.precision.resize(nc);
    row.recall.resize(nc);
    row.ap.resize(nc);
    for (std::size_t c = 0; c < nc; ++c) {
      row.precision[c] = precision_at(ranking, relevant, opts.cutoffs[c]);
      row.recall[c] = recall_at(ranking, relevant, opts.cutoffs[c]);
      row.ap[c] = average_precision_at(ranking, relevant, opts.cutoffs[c]);
    }
  });

  EvalReport report;
  report.cutoffs = opts.cutoffs;
  report.n_users = ds.n_users();
  report.precision.assign(nc, 0.0);
  report.recall.assign(nc, 0.0);
  report.map.assign(nc, 0.0);
  for (const auto& row : rows) {
    if (row.n_relevant == 0) {
      ++report.n_skipped;
      continue;
    }
    ++report.n_evaluated;
    for (std::size_t c = 0; c < nc; ++c) {
      report.precision[c] += row.precision[c];
      report.recall[c] += row.recall[c];
      report.map[c] += row.ap[c];
    }
  }
  if (report.n_evaluated > 0) {
    for (std::size_t c = 0; c < nc; ++c) {
      report.precision[c] /= report.n_evaluated;
      report.recall[c] /= report.n_evaluated;
      report.map[c] /= report.n_evaluated;
    }
  }
  if (opts.keep_per_user) report.per_user = std::move(rows);
  return report;
}

// Validation P@p, the per-epoch model-selection signal.
inline double validation_precision(const FactorModel& m, const ImplicitDataset& ds,
                                   std::uint32_t p = 5, unsigned threads = 1,
                                   bool deterministic = true) {
  EvalOptions opts;
  opts.cutoffs = {p};
  opts.target = Split::validation;
  opts.threads = threads;
  opts.deterministic = deterministic;
  EvalReport rep = evaluate(m, ds, opts);
  if (rep.n_evaluated == 0) return std::numeric_limits<double>::quiet_NaN();
  return rep.precision[0];
}

}  // namespace setrank
