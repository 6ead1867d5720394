#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "objcrop/datamodel.hpp"
#include "objcrop/error.hpp"

namespace objcrop {

struct SoftKMeansConfig {
  double beta = 5.0;  // inverse temperature on squared distances
  std::size_t max_iters = 100;
  double tol = 1e-6;  // max centroid displacement

  void validate() const {
    if (!(beta >= 0.0)) throw ValidationError("beta must be >= 0");
    if (max_iters == 0) throw ValidationError("max_iters must be positive");
    if (!(tol > 0.0)) throw ValidationError("tol must be > 0");
  }
};

/// Labelled support features (augments included), grouped by class.
using ClassFeatures = std::vector<std::vector<Vector>>;

struct ClusterState {
  std::vector<Vector> centroids;
  Matrix responsibilities;  // n_query x ways, rows sum to 1
};

struct SoftKMeansResult {
  std::vector<std::size_t> pseudolabels;
  ClusterState state;
  std::size_t iterations = 0;
  bool converged = false;
};

inline std::vector<Vector> init_centroids(const ClassFeatures& support) {
  std::vector<Vector> out;
  for (std::size_t c = 0; c < support.size(); ++c) {
    if (support[c].empty()) throw ValidationError("class " + std::to_string(c) + " has no support features");
    Vector sum = Vector::Zero(support[c].front().size());
    for (const auto& x : support[c]) {
      if (x.size() != sum.size()) throw ValidationError("support feature dimension mismatch");
      sum += x;
    }
    out.push_back(sum / static_cast<double>(support[c].size()));
  }
  return out;
}

/// r_ic proportional to exp(-beta * ||x_i - c_c||^2), computed in log space.
inline Matrix soft_assign(const std::vector<Vector>& features, const std::vector<Vector>& centroids, double beta) {
  if (centroids.empty()) throw ValidationError("no centroids");
  const auto w = static_cast<Eigen::Index>(centroids.size());
  Matrix r(static_cast<Eigen::Index>(features.size()), w);
  Vector score(w);
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (Eigen::Index c = 0; c < w; ++c) {
      if (features[i].size() != centroids[static_cast<std::size_t>(c)].size())
        throw ValidationError("query feature dimension mismatch");
      score[c] = -beta * (features[i] - centroids[static_cast<std::size_t>(c)]).squaredNorm();
    }
    const double m = score.maxCoeff();
    Vector e = (score.array() - m).exp().matrix();
    r.row(static_cast<Eigen::Index>(i)) = (e / e.sum()).transpose();
  }
  return r;
}

/**
 * Soft K-means seeded at the support class means. Each update recomputes a
 * centroid as the mean of its class's support features (weight 1) and of
 * all query features weighted by their responsibility. Stops when no
 * centroid moves by `tol` or more; hitting max_iters is reported through
 * `converged`, not an exception.
 */
inline SoftKMeansResult run_soft_kmeans(const ClassFeatures& support, const std::vector<Vector>& query,
                                        const SoftKMeansConfig& config) {
  config.validate();
  SoftKMeansResult res;
  res.state.centroids = init_centroids(support);
  const std::size_t w = support.size();

  std::vector<Vector> support_sum;
  std::vector<double> support_count;
  for (const auto& cls : support) {
    Vector s = Vector::Zero(cls.front().size());
    for (const auto& x : cls) s += x;
    support_sum.push_back(std::move(s));
    support_count.push_back(static_cast<double>(cls.size()));
  }

  for (res.iterations = 1; res.iterations <= config.max_iters; ++res.iterations) {
    res.state.responsibilities = soft_assign(query, res.state.centroids, config.beta);
    double moved = 0.0;
    for (std::size_t c = 0; c < w; ++c) {
      Vector num = support_sum[c];
      double den = support_count[c];
      for (std::size_t i = 0; i < query.size(); ++i) {
        const double r = res.state.responsibilities(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
        num += r * query[i];
        den += r;
      }
      Vector next = num / den;
      moved = std::max(moved, (next - res.state.centroids[c]).norm());
      res.state.centroids[c] = std::move(next);
    }
    if (moved < config.tol) {
      res.converged = true;
      break;
    }
  }
  res.iterations = std::min(res.iterations, config.max_iters);
  // Final assignment against the final centroids.
  res.state.responsibilities = soft_assign(query, res.state.centroids, config.beta);
  for (Eigen::Index i = 0; i < res.state.responsibilities.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < res.state.responsibilities.cols(); ++c)
      if (res.state.responsibilities(i, c) > res.state.responsibilities(i, best)) best = c;
    res.pseudolabels.push_back(static_cast<std::size_t>(best));
  }
  return res;
}

}  // namespace objcrop
