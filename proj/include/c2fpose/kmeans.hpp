#pragma once

#include <Eigen/Core>

#include <limits>
#include <random>
#include <vector>

#include "c2fpose/errors.hpp"
#include "c2fpose/pose.hpp"

namespace c2fpose {

template <typename S>
struct KMeansResult {
  MatX<S> centroids;             // k x d
  std::vector<int> assignments;  // n, values in [0, k)
  S cost{0};                     // sum of squared distances
  std::vector<S> cost_trace;     // cost after each Lloyd iteration
  int iterations{0};
};

namespace detail {

template <typename S>
int nearest_centroid(const MatX<S>& centroids, const Eigen::Ref<const VecX<S>>& p) {
  int best = 0;
  S best_d = (centroids.row(0).transpose() - p).squaredNorm();
  for (int c = 1; c < centroids.rows(); ++c) {
    const S d = (centroids.row(c).transpose() - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

template <typename S>
S clustering_cost(const MatX<S>& points, const MatX<S>& centroids,
                  const std::vector<int>& assignments) {
  S cost = 0;
  for (int i = 0; i < points.rows(); ++i) {
    cost += (points.row(i) - centroids.row(assignments[i])).squaredNorm();
  }
  return cost;
}

}  // namespace detail

/// Lloyd iterations from explicit initial centroids. Converges when the
/// assignment vector reaches a fixed point; empty clusters are reseeded to
/// the point currently farthest from its own centroid.
template <typename S>
KMeansResult<S> kmeans_lloyd(const MatX<S>& points, MatX<S> centroids,
                             int max_iterations = 300) {
  const int n = static_cast<int>(points.rows());
  const int k = static_cast<int>(centroids.rows());
  if (k < 1 || n < k) {
    throw InsufficientPointsError("kmeans: need n >= k >= 1, got n=" + std::to_string(n) +
                                  " k=" + std::to_string(k));
  }
  if (!points.allFinite()) throw InsufficientPointsError("kmeans: non-finite points");

  KMeansResult<S> result;
  result.assignments.assign(n, -1);
  std::vector<int> counts(k, 0);

  for (int iter = 0; iter < max_iterations; ++iter) {
    // Assignment step (ties to the lowest centroid index).
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      const int c = detail::nearest_centroid<S>(centroids, points.row(i).transpose());
      if (c != result.assignments[i]) {
        result.assignments[i] = c;
        changed = true;
      }
    }

    // Reseed empty clusters to the point farthest from its centroid.
    std::fill(counts.begin(), counts.end(), 0);
    for (int i = 0; i < n; ++i) ++counts[result.assignments[i]];
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      int farthest = -1;
      S far_d = S(-1);
      for (int i = 0; i < n; ++i) {
        if (counts[result.assignments[i]] <= 1) continue;  // keep donors non-empty
        const S d = (points.row(i) - centroids.row(result.assignments[i])).squaredNorm();
        if (d > far_d) {
          far_d = d;
          farthest = i;
        }
      }
      if (farthest < 0) continue;  // all clusters singletons; nothing to donate
      --counts[result.assignments[farthest]];
      result.assignments[farthest] = c;
      counts[c] = 1;
      centroids.row(c) = points.row(farthest);
      changed = true;
    }

    // Update step.
    MatX<S> sums = MatX<S>::Zero(k, points.cols());
    for (int i = 0; i < n; ++i) sums.row(result.assignments[i]) += points.row(i);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) centroids.row(c) = sums.row(c) / S(counts[c]);
    }

    result.iterations = iter + 1;
    result.cost_trace.push_back(detail::clustering_cost(points, centroids, result.assignments));
    if (!changed) break;
  }

  result.centroids = std::move(centroids);
  result.cost = result.cost_trace.back();
  return result;
}

/// k-means++ seeding, deterministic for a fixed seed.
template <typename S>
MatX<S> kmeans_pp_init(const MatX<S>& points, int k, std::uint64_t seed) {
  const int n = static_cast<int>(points.rows());
  if (k < 1 || n < k) {
    throw InsufficientPointsError("kmeans: need n >= k >= 1, got n=" + std::to_string(n) +
                                  " k=" + std::to_string(k));
  }
  std::mt19937_64 rng(seed);
  MatX<S> centroids(k, points.cols());
  std::uniform_int_distribution<int> first(0, n - 1);
  centroids.row(0) = points.row(first(rng));

  VecX<S> dist2(n);
  for (int i = 0; i < n; ++i) {
    dist2[i] = (points.row(i) - centroids.row(0)).squaredNorm();
  }
  for (int c = 1; c < k; ++c) {
    const S total = dist2.sum();
    int chosen;
    if (total > S(0)) {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const S target = S(u(rng)) * total;
      S acc = 0;
      chosen = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += dist2[i];
        if (acc >= target) {
          chosen = i;
          break;
        }
      }
    } else {
      std::uniform_int_distribution<int> any(0, n - 1);
      chosen = any(rng);
    }
    centroids.row(c) = points.row(chosen);
    for (int i = 0; i < n; ++i) {
      dist2[i] = std::min(dist2[i], S((points.row(i) - centroids.row(c)).squaredNorm()));
    }
  }
  return centroids;
}

template <typename S>
KMeansResult<S> kmeans(const MatX<S>& points, int k, std::uint64_t seed,
                       int max_iterations = 300) {
  return kmeans_lloyd<S>(points, kmeans_pp_init<S>(points, k, seed), max_iterations);
}

}  // namespace c2fpose
