#pragma once

// Independent reference implementations used to derive expected values.
// Deliberately naive: nested loops, no shared code with the library's
// accelerated paths beyond the PointCloud container.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pcq/common.hpp"
#include "pcq/geometry.hpp"
#include "pcq/scorer.hpp"

namespace pcq::testing {

inline PointCloud random_cloud(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<Point> pts(n);
  for (auto& p : pts) {
    p = Point(static_cast<float>(rng.uniform(-scale, scale)), static_cast<float>(rng.uniform(-scale, scale)),
              static_cast<float>(rng.uniform(-scale, scale)));
  }
  return PointCloud(std::move(pts));
}

inline double sq(const Point& a, const Point& b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

/// Mean over a of min over b of squared distance.
inline double naive_one_sided(const PointCloud& a, const PointCloud& b) {
  double total = 0.0;
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b) best = std::min(best, sq(p, q));
    total += best;
  }
  return total / static_cast<double>(a.size());
}

inline double naive_chamfer(const PointCloud& a, const PointCloud& b) {
  return naive_one_sided(a, b) + naive_one_sided(b, a);
}

/// Index and distance of the nearest entry by exhaustive naive chamfer.
inline std::pair<std::size_t, double> naive_min_match(const PointCloud& c, const std::vector<PointCloud>& bank) {
  std::size_t best_i = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const double d = naive_chamfer(c, bank[i]);
    if (d < best) {
      best = d;
      best_i = i;
    }
  }
  return {best_i, best};
}

/// Quadratic-time AUC: fraction of (positive, negative) pairs ordered
/// correctly, ties counting one half.
inline double naive_auc(const std::vector<double>& s, const std::vector<bool>& pos) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!pos[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (pos[j]) continue;
      pairs += 1.0;
      good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return good / pairs;
}

struct GradientMismatch {
  std::size_t block = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

inline bool gradient_close(double analytic, double numeric, double rel = 1e-4, double abs = 1e-7) {
  const double diff = std::abs(analytic - numeric);
  return diff <= abs || diff <= rel * std::max(std::abs(analytic), std::abs(numeric));
}

/// Central difference of the batch loss with respect to one parameter.
inline double numeric_partial(Params<double>& w, std::size_t block, std::size_t index,
                              std::span<const PreparedCloud<double>* const> batch, std::span<const double> targets,
                              double delta, double h = 1e-5) {
  auto blocks = w.blocks();
  double& x = blocks[block][index];
  const double saved = x;
  x = saved + h;
  const double up = loss_and_gradient<double>(w, batch, targets, delta, nullptr);
  x = saved - h;
  const double down = loss_and_gradient<double>(w, batch, targets, delta, nullptr);
  x = saved;
  return (up - down) / (2.0 * h);
}

/// A compact network: every parameter can be finite-differenced quickly.
inline ScorerShape tiny_shape() {
  ScorerShape s;
  s.a1 = 4;
  s.a2 = 5;
  s.f0 = 6;
  s.b1 = 7;
  s.g1 = 8;
  s.code = 9;
  s.head = 3;
  s.fps = {8, 4};
  return s;
}

/// Seeded double weights with nonzero biases, so bias paths are exercised.
inline Params<double> random_params(const ScorerShape& shape, std::uint64_t seed) {
  auto w = init_weights(shape, seed).cast<double>();
  Rng rng(derive_seed(seed, 99));
  for (auto& l : w.layers) {
    for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b(i) = rng.uniform(-0.1, 0.1);
  }
  return w;
}

}  // namespace pcq::testing
