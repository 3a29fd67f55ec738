#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "latentdr/crossfit.hpp"
#include "latentdr/matrix.hpp"
#include "latentdr/panel.hpp"

namespace testing {

using latentdr::Matrix;
using latentdr::Panel;

/// Panel from pre-period rows plus one post period with the given treatment.
inline Panel panel_with_post(const std::vector<std::vector<double>>& pre, const std::vector<double>& post,
                             const std::vector<int>& w) {
  const std::size_t n = pre.size(), t0 = pre.front().size();
  Matrix<double> y(n, t0 + 1);
  Matrix<std::uint8_t> d(n, t0 + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < t0; ++c) y(i, c) = pre[i][c];
    y(i, t0) = post[i];
    d(i, t0) = static_cast<std::uint8_t>(w[i]);
  }
  return Panel(std::move(y), std::move(d), t0);
}

/// Random panel with t0 pre periods, one post period and a nondegenerate treatment draw.
inline Panel random_panel(std::mt19937_64& gen, std::size_t n, std::size_t t0) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<std::vector<double>> pre(n, std::vector<double>(t0));
  std::vector<double> post(n);
  std::vector<int> w(n);
  for (auto& row : pre) {
    for (auto& v : row) v = z(gen);
  }
  for (auto& v : post) v = z(gen);
  std::bernoulli_distribution coin(0.5);
  for (auto& v : w) v = coin(gen) ? 1 : 0;
  w[0] = 1;
  w[1] = 0;
  return panel_with_post(pre, post, w);
}

/// Literal <Y_k, Y_i> / t0 double loop.
inline std::vector<std::vector<double>> naive_gram(const Panel& p) {
  const std::size_t n = p.units();
  std::vector<std::vector<double>> g(n, std::vector<double>(n, 0.0));
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t t = 1; t <= p.t0(); ++t) s += p.y(k, t) * p.y(i, t);
      g[k][i] = s / static_cast<double>(p.t0());
    }
  }
  return g;
}

/// Literal pseudo-distance: (1/t0) max over l in the donor pool of i, l not in {i, j},
/// of |<Y_l, Y_i - Y_j>|, with the inner product recomputed for every triple.
inline double naive_pseudo_distance(const Panel& p, const latentdr::FoldPlan& plan, std::size_t i, std::size_t j) {
  double best = 0.0;
  for (std::size_t l = 0; l < p.units(); ++l) {
    if (l == i || l == j || !plan.is_donor(i, l)) continue;
    double s = 0.0;
    for (std::size_t t = 1; t <= p.t0(); ++t) s += p.y(l, t) * (p.y(i, t) - p.y(j, t));
    best = std::max(best, std::abs(s) / static_cast<double>(p.t0()));
  }
  return best;
}

/// Fresh scratch directory under the build tree's temp area.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("latentdr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace testing
