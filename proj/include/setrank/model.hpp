#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "setrank/binary_io.hpp"
#include "setrank/error.hpp"
#include "setrank/random.hpp"

namespace setrank {

struct TrainConfig {
  std::uint32_t rank = 100;
  double lambda = 0.7;   // regularization
  double gamma = 0.5;    // initial step size
  double decay = 0.95;   // per-epoch multiplicative step decay
  double tau = 3.0;      // sampled negatives per train positive
  std::uint32_t epochs = 200;
  std::uint64_t seed = 42;
  double init_std = 0.1;
  unsigned threads = 1;
  bool deterministic = true;

  void validate() const {
    if (rank < 1) throw error(errc::invalid_argument, "rank must be >= 1");
    if (!(lambda >= 0.0)) throw error(errc::invalid_argument, "lambda must be >= 0");
    if (!(gamma > 0.0)) throw error(errc::invalid_argument, "learning rate must be > 0");
    if (!(decay > 0.0 && decay <= 1.0)) throw error(errc::invalid_argument, "decay must be in (0,1]");
    if (!(tau >= 1.0)) throw error(errc::invalid_argument, "tau must be >= 1");
    if (!(init_std >= 0.0)) throw error(errc::invalid_argument, "init_std must be >= 0");
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Rank-r latent factors. U and V are stored with one contiguous length-r
// block per user/item; scores are X[i][l] = u_i . v_l.
class FactorModel {
 public:
  FactorModel() = default;

  FactorModel(std::uint32_t rank, std::uint32_t n_users, std::uint32_t n_items)
      : rank_(rank),
        n_users_(n_users),
        n_items_(n_items),
        user_(static_cast<std::size_t>(n_users) * rank, 0.0),
        item_(static_cast<std::size_t>(n_items) * rank, 0.0) {
    if (rank < 1 || n_users < 1 || n_items < 1)
      throw error(errc::invalid_argument, "model dimensions must be >= 1");
  }

  // Entries i.i.d. normal(0, init_std^2), deterministic given cfg.seed.
  static FactorModel init(std::uint32_t n_users, std::uint32_t n_items, const TrainConfig& cfg) {
    cfg.validate();
    FactorModel m(cfg.rank, n_users, n_items);
    Rng rng = make_rng(cfg.seed, stream::model_init);
    std::normal_distribution<double> normal(0.0, 1.0);
    if (cfg.init_std > 0.0) {
      for (auto& v : m.user_) v = cfg.init_std * normal(rng);
      for (auto& v : m.item_) v = cfg.init_std * normal(rng);
    }
    return m;
  }

  std::uint32_t rank() const { return rank_; }
  std::uint32_t n_users() const { return n_users_; }
  std::uint32_t n_items() const { return n_items_; }

  std::span<double> user_factors(std::uint32_t i) {
    return {user_.data() + static_cast<std::size_t>(i) * rank_, rank_};
  }
  std::span<const double> user_factors(std::uint32_t i) const {
    return {user_.data() + static_cast<std::size_t>(i) * rank_, rank_};
  }
  std::span<double> item_factors(std::uint32_t l) {
    return {item_.data() + static_cast<std::size_t>(l) * rank_, rank_};
  }
  std::span<const double> item_factors(std::uint32_t l) const {
    return {item_.data() + static_cast<std::size_t>(l) * rank_, rank_};
  }

  std::vector<double>& user_data() { return user_; }
  std::vector<double>& item_data() { return item_; }
  const std::vector<double>& user_data() const { return user_; }
  const std::vector<double>& item_data() const { return item_; }

  double score(std::uint32_t user, std::uint32_t item) const {
    check_user(user);
    check_item(item);
    return dot(user_factors(user), item_factors(item));
  }

  void score_user(std::uint32_t user, std::vector<double>& out) const {
    check_user(user);
    out.resize(n_items_);
    const auto u = user_factors(user);
    for (std::uint32_t l = 0; l < n_items_; ++l) out[l] = dot(u, item_factors(l));
  }

  std::vector<double> score_user(std::uint32_t user) const {
    std::vector<double> out;
    score_user(user, out);
    return out;
  }

  // ||U||_F^2 + ||V||_F^2
  double squared_norm() const {
    double s = 0.0;
    for (double v : user_) s += v * v;
    for (double v : item_) s += v * v;
    return s;
  }

  bool all_finite() const {
    for (double v : user_)
      if (!std::isfinite(v)) return false;
    for (double v : item_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Layout: magic, u32 version, u32 r, u32 N, u32 M, u32 dtype width in
  // bytes, then U as r x N row-major doubles, then V as r x M, little-endian.
  void save(std::ostream& out) const {
    out.write(kMagic, 8);
    detail::write_raw<std::uint32_t>(out, kVersion);
    detail::write_raw<std::uint32_t>(out, rank_);
    detail::write_raw<std::uint32_t>(out, n_users_);
    detail::write_raw<std::uint32_t>(out, n_items_);
    detail::write_raw<std::uint32_t>(out, sizeof(double));
    for (std::uint32_t d = 0; d < rank_; ++d)
      for (std::uint32_t i = 0; i < n_users_; ++i)
        detail::write_raw<double>(out, user_[static_cast<std::size_t>(i) * rank_ + d]);
    for (std::uint32_t d = 0; d < rank_; ++d)
      for (std::uint32_t l = 0; l < n_items_; ++l)
        detail::write_raw<double>(out, item_[static_cast<std::size_t>(l) * rank_ + d]);
    if (!out) throw error(errc::io, "model write failed");
  }

  static FactorModel load(std::istream& in) {
    detail::expect_magic(in, kMagic);
    auto version = detail::read_raw<std::uint32_t>(in);
    if (version != kVersion)
      throw error(errc::bad_version, "model format v" + std::to_string(version));
    auto rank = detail::read_raw<std::uint32_t>(in);
    auto n_users = detail::read_raw<std::uint32_t>(in);
    auto n_items = detail::read_raw<std::uint32_t>(in);
    auto width = detail::read_raw<std::uint32_t>(in);
    if (width != sizeof(double))
      throw error(errc::bad_version, "unsupported dtype width " + std::to_string(width));
    FactorModel m(rank, n_users, n_items);
    for (std::uint32_t d = 0; d < rank; ++d)
      for (std::uint32_t i = 0; i < n_users; ++i)
        m.user_[static_cast<std::size_t>(i) * rank + d] = detail::read_raw<double>(in);
    for (std::uint32_t d = 0; d < rank; ++d)
      for (std::uint32_t l = 0; l < n_items; ++l)
        m.item_[static_cast<std::size_t>(l) * rank + d] = detail::read_raw<double>(in);
    return m;
  }

  void save_file(const std::string& path) const {
    auto out = detail::open_output(path);
    save(out);
  }

  static FactorModel load_file(const std::string& path) {
    auto in = detail::open_input(path);
    return load(in);
  }

  void check_dims(std::uint32_t n_users, std::uint32_t n_items) const {
    if (n_users_ != n_users || n_items_ != n_items)
      throw error(errc::dim_mismatch,
                  "model is " + std::to_string(n_users_) + "x" + std::to_string(n_items_) +
                      ", dataset is " + std::to_string(n_users) + "x" + std::to_string(n_items));
  }

 private:
  static constexpr char kMagic[9] = "SETRANKM";
  static constexpr std::uint32_t kVersion = 1;

  void check_user(std::uint32_t i) const {
    if (i >= n_users_) throw error(errc::out_of_range, "user " + std::to_string(i));
  }
  void check_item(std::uint32_t l) const {
    if (l >= n_items_) throw error(errc::out_of_range, "item " + std::to_string(l));
  }

  std::uint32_t rank_ = 0;
  std::uint32_t n_users_ = 0;
  std::uint32_t n_items_ = 0;
  std::vector<double> user_;
  std::vector<double> item_;
};

}  // namespace setrank
