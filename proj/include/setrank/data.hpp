#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "setrank/binary_io.hpp"
#include "setrank/error.hpp"
#include "setrank/random.hpp"

namespace setrank {

enum class Split : std::uint8_t { train = 0, validation = 1, test = 2 };

struct RawRating {
  std::string user;
  std::string item;
  double rating = 0.0;
};

struct ParseOptions {
  char delimiter = '\t';
};

// One parsed line: user<delim>item<delim>rating[<delim>timestamp].
inline RawRating parse_rating_line(const std::string& line, char delimiter, std::size_t line_no) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(delimiter, start);
    fields.push_back(line.substr(start, pos == std::string::npos ? pos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (fields.size() < 3 || fields.size() > 4)
    throw error(errc::parse, "line " + std::to_string(line_no) + ": expected 3 or 4 fields, got " +
                                 std::to_string(fields.size()));
  if (fields[0].empty() || fields[1].empty())
    throw error(errc::parse, "line " + std::to_string(line_no) + ": empty user or item id");
  RawRating r;
  r.user = fields[0];
  r.item = fields[1];
  try {
    std::size_t consumed = 0;
    r.rating = std::stod(fields[2], &consumed);
    if (consumed != fields[2].size()) throw std::invalid_argument("trailing junk");
  } catch (const std::exception&) {
    throw error(errc::parse, "line " + std::to_string(line_no) + ": bad rating '" + fields[2] + "'");
  }
  if (!std::isfinite(r.rating))
    throw error(errc::parse, "line " + std::to_string(line_no) + ": non-finite rating");
  return r;
}

// Binarized implicit-feedback dataset: per-user sorted positive item sets
// with a train/validation/test tag per positive, plus token<->index vocabs.
// Read-only after construction.
class ImplicitDataset {
 public:
  ImplicitDataset() = default;

  static ImplicitDataset build(std::vector<std::string> user_tokens,
                               std::vector<std::string> item_tokens,
                               const std::vector<std::vector<std::pair<std::uint32_t, Split>>>& positives) {
    ImplicitDataset ds;
    ds.user_tokens_ = std::move(user_tokens);
    ds.item_tokens_ = std::move(item_tokens);
    if (positives.size() != ds.user_tokens_.size())
      throw error(errc::invalid_argument, "positives/user vocab size mismatch");
    ds.offsets_.reserve(positives.size() + 1);
    ds.offsets_.push_back(0);
    for (const auto& row : positives) {
      auto sorted = row;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t k = 0; k < sorted.size(); ++k) {
        if (sorted[k].first >= ds.item_tokens_.size())
          throw error(errc::out_of_range, "item index " + std::to_string(sorted[k].first));
        if (k > 0 && sorted[k].first == sorted[k - 1].first)
          throw error(errc::invalid_argument, "duplicate positive item");
        ds.items_.push_back(sorted[k].first);
        ds.tags_.push_back(sorted[k].second);
      }
      ds.offsets_.push_back(static_cast<std::uint64_t>(ds.items_.size()));
    }
    ds.rebuild_index();
    return ds;
  }

  std::uint32_t n_users() const { return static_cast<std::uint32_t>(user_tokens_.size()); }
  std::uint32_t n_items() const { return static_cast<std::uint32_t>(item_tokens_.size()); }
  std::uint64_t n_positives() const { return items_.size(); }

  std::span<const std::uint32_t> positives(std::uint32_t user) const {
    return {items_.data() + offsets_[user], items_.data() + offsets_[user + 1]};
  }
  std::span<const Split> tags(std::uint32_t user) const {
    return {tags_.data() + offsets_[user], tags_.data() + offsets_[user + 1]};
  }

  std::vector<std::uint32_t> items_with_tag(std::uint32_t user, Split which) const {
    std::vector<std::uint32_t> out;
    auto its = positives(user);
    auto tgs = tags(user);
    for (std::size_t k = 0; k < its.size(); ++k)
      if (tgs[k] == which) out.push_back(its[k]);
    return out;
  }

  std::size_t count_with_tag(std::uint32_t user, Split which) const {
    auto tgs = tags(user);
    return static_cast<std::size_t>(std::count(tgs.begin(), tgs.end(), which));
  }

  bool is_positive(std::uint32_t user, std::uint32_t item) const {
    auto its = positives(user);
    return std::binary_search(its.begin(), its.end(), item);
  }

  const std::vector<std::string>& user_tokens() const { return user_tokens_; }
  const std::vector<std::string>& item_tokens() const { return item_tokens_; }

  // -1 when the token is unknown.
  std::int64_t user_index(const std::string& token) const {
    auto it = user_index_.find(token);
    return it == user_index_.end() ? -1 : static_cast<std::int64_t>(it->second);
  }
  std::int64_t item_index(const std::string& token) const {
    auto it = item_index_.find(token);
    return it == item_index_.end() ? -1 : static_cast<std::int64_t>(it->second);
  }

  bool operator==(const ImplicitDataset& other) const {
    return user_tokens_ == other.user_tokens_ && item_tokens_ == other.item_tokens_ &&
           offsets_ == other.offsets_ && items_ == other.items_ && tags_ == other.tags_;
  }

  // Layout: magic, u32 version, u32 N, u32 M, then per user u32 J_i followed
  // by J_i delta-encoded (u32 delta, u8 tag) pairs over the sorted item list,
  // then the user and item token tables. Little-endian fixed width.
  void save(std::ostream& out) const {
    out.write(kMagic, 8);
    detail::write_raw<std::uint32_t>(out, kVersion);
    detail::write_raw<std::uint32_t>(out, n_users());
    detail::write_raw<std::uint32_t>(out, n_items());
    for (std::uint32_t i = 0; i < n_users(); ++i) {
      auto its = positives(i);
      auto tgs = tags(i);
      detail::write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(its.size()));
      std::uint32_t prev = 0;
      for (std::size_t k = 0; k < its.size(); ++k) {
        detail::write_raw<std::uint32_t>(out, its[k] - prev);
        detail::write_raw<std::uint8_t>(out, static_cast<std::uint8_t>(tgs[k]));
        prev = its[k];
      }
    }
    for (const auto& t : user_tokens_) detail::write_string(out, t);
    for (const auto& t : item_tokens_) detail::write_string(out, t);
    if (!out) throw error(errc::io, "dataset write failed");
  }

  static ImplicitDataset load(std::istream& in) {
    detail::expect_magic(in, kMagic);
    auto version = detail::read_raw<std::uint32_t>(in);
    if (version != kVersion)
      throw error(errc::bad_version, "dataset format v" + std::to_string(version));
    auto n_users = detail::read_raw<std::uint32_t>(in);
    auto n_items = detail::read_raw<std::uint32_t>(in);
    ImplicitDataset ds;
    ds.offsets_.push_back(0);
    for (std::uint32_t i = 0; i < n_users; ++i) {
      auto count = detail::read_raw<std::uint32_t>(in);
      std::uint32_t prev = 0;
      for (std::uint32_t k = 0; k < count; ++k) {
        prev += detail::read_raw<std::uint32_t>(in);
        auto tag = detail::read_raw<std::uint8_t>(in);
        if (prev >= n_items) throw error(errc::truncated, "item index out of declared range");
        if (tag > 2) throw error(errc::truncated, "invalid split tag");
        ds.items_.push_back(prev);
        ds.tags_.push_back(static_cast<Split>(tag));
      }
      ds.offsets_.push_back(static_cast<std::uint64_t>(ds.items_.size()));
    }
    ds.user_tokens_.reserve(n_users);
    for (std::uint32_t i = 0; i < n_users; ++i) ds.user_tokens_.push_back(detail::read_string(in));
    ds.item_tokens_.reserve(n_items);
    for (std::uint32_t l = 0; l < n_items; ++l) ds.item_tokens_.push_back(detail::read_string(in));
    ds.rebuild_index();
    return ds;
  }

  void save_file(const std::string& path) const {
    auto out = detail::open_output(path);
    save(out);
  }

  static ImplicitDataset load_file(const std::string& path) {
    auto in = detail::open_input(path);
    return load(in);
  }

 private:
  static constexpr char kMagic[9] = "SETRANKD";
  static constexpr std::uint32_t kVersion = 1;

  void rebuild_index() {
    user_index_.clear();
    item_index_.clear();
    for (std::uint32_t i = 0; i < user_tokens_.size(); ++i) user_index_[user_tokens_[i]] = i;
    for (std::uint32_t l = 0; l < item_tokens_.size(); ++l) item_index_[item_tokens_[l]] = l;
  }

  std::vector<std::string> user_tokens_;
  std::vector<std::string> item_tokens_;
  std::unordered_map<std::string, std::uint32_t> user_index_;
  std::unordered_map<std::string, std::uint32_t> item_index_;
  std::vector<std::uint64_t> offsets_;  // n_users + 1
  std::vector<std::uint32_t> items_;    // sorted within each user
  std::vector<Split> tags_;
};

// Keeps an entry as positive iff rating > threshold. Duplicate (user,item)
// pairs collapse to the maximum rating before thresholding. Dense indices are
// assigned in first-seen order over the stream, whether or not the rating
// clears the threshold. All positives are tagged train until split() runs.
inline ImplicitDataset binarize(std::istream& in, double threshold, const ParseOptions& opts = {}) {
  if (!std::isfinite(threshold)) throw error(errc::invalid_argument, "threshold must be finite");
  std::vector<std::string> user_tokens, item_tokens;
  std::unordered_map<std::string, std::uint32_t> user_index, item_index;
  std::unordered_map<std::uint64_t, double> max_rating;
  std::string line;
  std::size_t line_no = 0;
  bool saw_any = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    RawRating r = parse_rating_line(line, opts.delimiter, line_no);
    saw_any = true;
    auto [uit, unew] = user_index.try_emplace(r.user, static_cast<std::uint32_t>(user_tokens.size()));
    if (unew) user_tokens.push_back(r.user);
    auto [iit, inew] = item_index.try_emplace(r.item, static_cast<std::uint32_t>(item_tokens.size()));
    if (inew) item_tokens.push_back(r.item);
    std::uint64_t key = (static_cast<std::uint64_t>(uit->second) << 32) | iit->second;
    auto [mit, mnew] = max_rating.try_emplace(key, r.rating);
    if (!mnew) mit->second = std::max(mit->second, r.rating);
  }
  if (!saw_any) throw error(errc::parse, "input stream contains no ratings");

  std::vector<std::vector<std::pair<std::uint32_t, Split>>> positives(user_tokens.size());
  std::uint64_t total = 0;
  for (const auto& [key, rating] : max_rating) {
    if (rating > threshold) {
      positives[key >> 32].emplace_back(static_cast<std::uint32_t>(key & 0xffffffffu), Split::train);
      ++total;
    }
  }
  if (total == 0) throw error(errc::no_positives, "no rating exceeds the threshold");
  return ImplicitDataset::build(std::move(user_tokens), std::move(item_tokens), positives);
}

inline ImplicitDataset binarize_file(const std::string& path, double threshold,
                                     const ParseOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw error(errc::io, "cannot open " + path);
  return binarize(in, threshold, opts);
}

// Removes users with fewer than min_pos positives, then drops items with no
// remaining positives. Surviving indices are reassigned in original order.
inline ImplicitDataset filter_users(const ImplicitDataset& ds, std::uint32_t min_pos) {
  if (min_pos < 1) throw error(errc::invalid_argument, "min_pos must be >= 1");
  std::vector<std::uint32_t> kept_users;
  for (std::uint32_t i = 0; i < ds.n_users(); ++i)
    if (ds.positives(i).size() >= min_pos) kept_users.push_back(i);
  if (kept_users.empty()) throw error(errc::empty_dataset, "filter removed every user");

  std::vector<bool> item_used(ds.n_items(), false);
  for (auto i : kept_users)
    for (auto l : ds.positives(i)) item_used[l] = true;
  std::vector<std::uint32_t> item_map(ds.n_items(), 0);
  std::vector<std::string> item_tokens;
  for (std::uint32_t l = 0; l < ds.n_items(); ++l) {
    if (item_used[l]) {
      item_map[l] = static_cast<std::uint32_t>(item_tokens.size());
      item_tokens.push_back(ds.item_tokens()[l]);
    }
  }

  std::vector<std::string> user_tokens;
  std::vector<std::vector<std::pair<std::uint32_t, Split>>> positives;
  user_tokens.reserve(kept_users.size());
  positives.reserve(kept_users.size());
  for (auto i : kept_users) {
    user_tokens.push_back(ds.user_tokens()[i]);
    auto its = ds.positives(i);
    auto tgs = ds.tags(i);
    std::vector<std::pair<std::uint32_t, Split>> row;
    row.reserve(its.size());
    for (std::size_t k = 0; k < its.size(); ++k) row.emplace_back(item_map[its[k]], tgs[k]);
    positives.push_back(std::move(row));
  }
  return ImplicitDataset::build(std::move(user_tokens), std::move(item_tokens), positives);
}

// Per user: floor(train_frac * J_i) positives sampled uniformly without
// replacement as train (at least 1, capped at max_train_per_user), then 1 of
// the remaining sampled as validation, rest tagged test.
inline ImplicitDataset split(const ImplicitDataset& ds, double train_frac,
                             std::uint32_t max_train_per_user, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw error(errc::invalid_argument, "train_frac must be in (0,1)");
  if (max_train_per_user < 1) throw error(errc::invalid_argument, "cap must be >= 1");
  Rng rng = make_rng(seed, stream::split);
  std::vector<std::vector<std::pair<std::uint32_t, Split>>> positives(ds.n_users());
  for (std::uint32_t i = 0; i < ds.n_users(); ++i) {
    auto its = ds.positives(i);
    const std::size_t j = its.size();
    std::size_t n_train = std::max<std::size_t>(
        1, std::min<std::size_t>(static_cast<std::size_t>(train_frac * static_cast<double>(j)),
                                 max_train_per_user));
    if (j < 3 || j - n_train < 2)
      throw error(errc::invalid_argument,
                  "user '" + ds.user_tokens()[i] + "' has too few positives (" + std::to_string(j) +
                      ") for a train/validation/test split; filter first");
    std::vector<std::uint32_t> order(its.begin(), its.end());
    std::shuffle(order.begin(), order.end(), rng);
    auto& row = positives[i];
    row.reserve(j);
    for (std::size_t k = 0; k < j; ++k) {
      Split tag = k < n_train ? Split::train : (k == n_train ? Split::validation : Split::test);
      row.emplace_back(order[k], tag);
    }
  }
  return ImplicitDataset::build(ds.user_tokens(), ds.item_tokens(), positives);
}

}  // namespace setrank
