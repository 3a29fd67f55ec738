#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "latentdr/error.hpp"
#include "latentdr/rng.hpp"

namespace latentdr {

enum class FoldMode { none, kfold, leave_one_out };

/// Partition of unit positions into folds. A unit's nuisances are estimated
/// only from its donor set: the units outside its fold (or, without
/// cross-fitting, every other unit).
struct FoldPlan {
  std::vector<std::size_t> assignment;
  std::size_t k = 1;
  FoldMode mode = FoldMode::none;
  std::uint64_t seed = 0;

  std::size_t units() const noexcept { return assignment.size(); }

  bool is_donor(std::size_t i, std::size_t j) const {
    if (mode == FoldMode::none) return i != j;
    return assignment[i] != assignment[j];
  }

  std::vector<std::size_t> fold_sizes() const {
    std::vector<std::size_t> sizes(k, 0);
    for (auto f : assignment) ++sizes[f];
    return sizes;
  }

  std::string describe() const {
    switch (mode) {
      case FoldMode::none: return "none";
      case FoldMode::leave_one_out: return "loo";
      case FoldMode::kfold: return std::to_string(k) + "-fold";
    }
    return "?";
  }

  friend bool operator==(const FoldPlan&, const FoldPlan&) = default;
};

/// Random balanced K-fold partition: seeded Fisher-Yates shuffle, then
/// contiguous chunks, the first n % k chunks one unit larger.
inline FoldPlan partition(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (n == 0) throw ConfigError(Stage::crossfit, "cannot partition zero units");
  if (k < 1 || k > n) {
    throw ConfigError(Stage::crossfit, "fold count " + std::to_string(k) + " must lie in [1, " +
                                           std::to_string(n) + "]");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(order[i], order[rng.below(i + 1)]);
  }
  FoldPlan plan;
  plan.assignment.assign(n, 0);
  plan.k = k;
  plan.mode = FoldMode::kfold;
  plan.seed = seed;
  const std::size_t base = n / k, extra = n % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = base + (f < extra ? 1 : 0);
    for (std::size_t c = 0; c < size; ++c) plan.assignment[order[pos++]] = f;
  }
  return plan;
}

inline FoldPlan leave_one_out(std::size_t n) {
  if (n == 0) throw ConfigError(Stage::crossfit, "cannot partition zero units");
  FoldPlan plan;
  plan.assignment.resize(n);
  std::iota(plan.assignment.begin(), plan.assignment.end(), std::size_t{0});
  plan.k = n;
  plan.mode = FoldMode::leave_one_out;
  return plan;
}

inline FoldPlan no_crossfit(std::size_t n) {
  if (n == 0) throw ConfigError(Stage::crossfit, "cannot partition zero units");
  FoldPlan plan;
  plan.assignment.assign(n, 0);
  plan.k = 1;
  plan.mode = FoldMode::none;
  return plan;
}

/// The donor set I_{-k(i)}, as sorted positions.
inline std::vector<std::size_t> donors(const FoldPlan& plan, std::size_t i) {
  if (i >= plan.units()) {
    throw ConfigError(Stage::crossfit, "unit " + std::to_string(i) + " out of range for a plan over " +
                                           std::to_string(plan.units()) + " units");
  }
  std::vector<std::size_t> out;
  out.reserve(plan.units());
  for (std::size_t j = 0; j < plan.units(); ++j) {
    if (plan.is_donor(i, j)) out.push_back(j);
  }
  return out;
}

/// How folds are requested by configuration; resolved into a FoldPlan per run.
struct FoldSpec {
  FoldMode mode = FoldMode::kfold;
  std::size_t k = 2;

  friend bool operator==(const FoldSpec&, const FoldSpec&) = default;
};

inline FoldPlan make_plan(const FoldSpec& spec, std::size_t n, std::uint64_t seed) {
  switch (spec.mode) {
    case FoldMode::none: return no_crossfit(n);
    case FoldMode::leave_one_out: return leave_one_out(n);
    case FoldMode::kfold: return partition(n, spec.k, seed);
  }
  return no_crossfit(n);
}

/// "2", "loo", "none".
inline FoldSpec parse_folds(const std::string& text) {
  if (text == "none") return {FoldMode::none, 1};
  if (text == "loo") return {FoldMode::leave_one_out, 0};
  std::size_t k = 0;
  try {
    std::size_t used = 0;
    k = std::stoul(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    throw ConfigError(Stage::config, "folds must be an integer, 'loo' or 'none' (got '" + text + "')");
  }
  if (k < 2) throw ConfigError(Stage::config, "k-fold cross-fitting needs at least 2 folds");
  return {FoldMode::kfold, k};
}

inline std::string to_string(const FoldSpec& spec) {
  switch (spec.mode) {
    case FoldMode::none: return "none";
    case FoldMode::leave_one_out: return "loo";
    case FoldMode::kfold: return std::to_string(spec.k);
  }
  return "?";
}

}  // namespace latentdr
