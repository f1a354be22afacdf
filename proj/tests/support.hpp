#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance runner. Nothing here calls the code under test except to read
// inputs and outputs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "fgseg/geometry.hpp"
#include "fgseg/tensor.hpp"

namespace fgseg::testing {

/// Central-difference gradient check. `loss` rebuilds the scalar from the
/// current leaf values. At most `max_entries` entries per leaf are probed
/// (all when 0). Returns the largest error |a - n| / max(|a|, |n|, 1).
/// Entries whose estimate moves when the step shrinks are re-measured with
/// the smaller step.
inline double max_gradient_error(const std::function<Tensor()>& loss, std::vector<Tensor> leaves,
                                 std::mt19937_64& rng, std::size_t max_entries = 0, double step = 1e-5) {
  for (auto& t : leaves) t.zero_grad();
  backward(loss());
  std::vector<std::vector<Real>> analytic;
  for (auto& t : leaves) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.size(), 0.0);
    }
  }
  double worst = 0;
  NoGradGuard no_grad;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto w = leaves[li].mutable_data();
    std::vector<std::size_t> entries(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) entries[i] = i;
    if (max_entries != 0 && entries.size() > max_entries) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(max_entries);
    }
    for (auto i : entries) {
      const Real saved = w[i];
      auto central = [&](double h) {
        w[i] = saved + h;
        const Real up = loss().item();
        w[i] = saved - h;
        const Real down = loss().item();
        w[i] = saved;
        return (up - down) / (2 * h);
      };
      double numeric = central(step);
      // a relu kink inside [x - h, x + h] bends the estimate; a tenth of the
      // step moves it out unless the input sits right on the kink
      const double fine = central(step / 10);
      if (std::abs(fine - numeric) > 1e-5 * std::max({std::abs(fine), std::abs(numeric), 1.0})) numeric = fine;
      const double a = analytic[li][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0}));
    }
  }
  for (auto& t : leaves) t.zero_grad();
  return worst;
}

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, Real lo = -1, Real hi = 1,
                            bool requires_grad = true) {
  std::uniform_real_distribution<Real> u(lo, hi);
  std::vector<Real> v(rows * cols);
  for (auto& x : v) x = u(rng);
  return Tensor::from(rows, cols, std::move(v), requires_grad);
}

/// Values bounded away from zero, for probing ops with a kink at 0.
inline Tensor random_away_from_zero(std::size_t rows, std::size_t cols, std::mt19937_64& rng, Real gap = 0.05) {
  std::uniform_real_distribution<Real> u(gap, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<Real> v(rows * cols);
  for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return Tensor::from(rows, cols, std::move(v), true);
}

/// Farthest point sampling that recomputes every candidate's distance to the
/// whole selected set at each step.
inline std::vector<std::size_t> fps_reference(const std::vector<Point3>& pts, std::size_t count, std::size_t start) {
  std::vector<std::size_t> chosen{start};
  std::vector<char> taken(pts.size(), 0);
  taken[start] = 1;
  while (chosen.size() < count) {
    std::size_t best = pts.size();
    Real best_d = -1;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (taken[i]) continue;
      Real d = std::numeric_limits<Real>::infinity();
      for (auto s : chosen) {
        const Real dx = pts[i].x - pts[s].x, dy = pts[i].y - pts[s].y, dz = pts[i].z - pts[s].z;
        d = std::min(d, dx * dx + dy * dy + dz * dz);
      }
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    chosen.push_back(best);
    taken[best] = 1;
  }
  return chosen;
}

/// Rank by Gaussian elimination with partial pivoting.
inline std::size_t numerical_rank(std::vector<Real> a, std::size_t rows, std::size_t cols, Real tol = 1e-9) {
  std::size_t rank = 0;
  for (std::size_t c = 0; c < cols && rank < rows; ++c) {
    std::size_t piv = rank;
    for (std::size_t r = rank + 1; r < rows; ++r)
      if (std::abs(a[r * cols + c]) > std::abs(a[piv * cols + c])) piv = r;
    if (std::abs(a[piv * cols + c]) <= tol) continue;
    for (std::size_t k = 0; k < cols; ++k) std::swap(a[piv * cols + k], a[rank * cols + k]);
    for (std::size_t r = rank + 1; r < rows; ++r) {
      const Real f = a[r * cols + c] / a[rank * cols + c];
      for (std::size_t k = c; k < cols; ++k) a[r * cols + k] -= f * a[rank * cols + k];
    }
    ++rank;
  }
  return rank;
}

/// Best-match average IoU by direct set comparison.
inline double brute_force_avg_iou(const std::vector<int>& pred, const std::vector<int>& gt) {
  std::map<int, std::set<std::size_t>> P, G;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    P[pred[i]].insert(i);
    G[gt[i]].insert(i);
  }
  double total = 0;
  for (const auto& [p, ps] : P) {
    double best = 0;
    for (const auto& [g, gs] : G) {
      std::size_t inter = 0;
      for (auto i : ps) inter += gs.count(i);
      const std::size_t uni = ps.size() + gs.size() - inter;
      best = std::max(best, static_cast<double>(inter) / static_cast<double>(uni));
    }
    total += best;
  }
  return total / static_cast<double>(P.size());
}

/// Random labels with exactly `parts` distinct values, each used at least once.
inline std::vector<int> random_labeling(std::size_t n, int parts, std::mt19937_64& rng) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(parts));
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

/// One-hot N x R matrix from labels in 0..R-1.
inline std::vector<Real> one_hot(const std::vector<int>& labels, std::size_t cols) {
  std::vector<Real> m(labels.size() * cols, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) m[i * cols + static_cast<std::size_t>(labels[i])] = 1.0;
  return m;
}

}  // namespace fgseg::testing
