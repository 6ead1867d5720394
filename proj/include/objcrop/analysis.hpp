#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "objcrop/datamodel.hpp"
#include "objcrop/error.hpp"

namespace objcrop {

// Features grouped by class: outer index is the class.
using GroupedFeatures = std::vector<std::vector<Vector>>;

namespace detail {

inline Vector mean_of(const std::vector<Vector>& xs) {
  Vector s = Vector::Zero(xs.front().size());
  for (const auto& x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline void require_nonempty(const GroupedFeatures& g) {
  if (g.empty()) throw ValidationError("no classes");
  for (std::size_t c = 0; c < g.size(); ++c)
    if (g[c].empty()) throw ValidationError("class " + std::to_string(c) + " is empty");
}

}  // namespace detail

/// Mean over classes of the mean squared distance to the class centroid
/// (trace of the population covariance).
inline double class_variance(const GroupedFeatures& groups) {
  detail::require_nonempty(groups);
  double total = 0.0;
  for (const auto& cls : groups) {
    const Vector mu = detail::mean_of(cls);
    double s = 0.0;
    for (const auto& x : cls) s += (x - mu).squaredNorm();
    total += s / static_cast<double>(cls.size());
  }
  return total / static_cast<double>(groups.size());
}

inline std::vector<Vector> class_centroids(const GroupedFeatures& groups) {
  detail::require_nonempty(groups);
  std::vector<Vector> out;
  for (const auto& cls : groups) out.push_back(detail::mean_of(cls));
  return out;
}

/// Mean over classes of ||centroid(features) - reference||.
inline double centroid_shift(const GroupedFeatures& groups, const std::vector<Vector>& reference_centroids) {
  detail::require_nonempty(groups);
  if (groups.size() != reference_centroids.size())
    throw ValidationError("centroid_shift: " + std::to_string(groups.size()) + " classes vs " +
                          std::to_string(reference_centroids.size()) + " reference centroids");
  double total = 0.0;
  for (std::size_t c = 0; c < groups.size(); ++c) total += (detail::mean_of(groups[c]) - reference_centroids[c]).norm();
  return total / static_cast<double>(groups.size());
}

struct VariancePoint {
  double lambda = 0.0;
  double variance = 0.0;
  double centroid_distance = 0.0;
};

using VarianceCurve = std::vector<VariancePoint>;

/// `by_lambda[k]` holds the grouped features at `lambdas[k]`; `reference` is
/// the uncropped set. Rows at lambda = 1 report a distance of exactly 0.
inline VarianceCurve variance_curve(const std::vector<double>& lambdas, const std::vector<GroupedFeatures>& by_lambda,
                                    const GroupedFeatures& reference) {
  if (lambdas.size() != by_lambda.size()) throw ValidationError("lambda grid and feature sets differ in length");
  const auto ref = class_centroids(reference);
  VarianceCurve out;
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    const double dist = lambdas[k] == 1.0 ? 0.0 : centroid_shift(by_lambda[k], ref);
    out.push_back({lambdas[k], class_variance(by_lambda[k]), dist});
  }
  return out;
}

struct PcaBasis {
  Vector mean;
  Vector axis1;
  Vector axis2;
  double explained1 = 0.0;
  double explained2 = 0.0;
  double total_variance = 0.0;
};

/**
 * Top-two principal axes of the population covariance. Each axis is signed
 * so that its largest-magnitude component is positive.
 */
inline PcaBasis pca_fit(const std::vector<Vector>& reference) {
  if (reference.size() < 3) throw ValidationError("PCA needs at least 3 samples");
  const auto d = reference.front().size();
  if (d < 2) throw ValidationError("PCA needs dimension >= 2");
  for (const auto& x : reference)
    if (x.size() != d) throw ValidationError("PCA input dimension mismatch");
  PcaBasis basis;
  basis.mean = detail::mean_of(reference);
  Matrix centered(static_cast<Eigen::Index>(reference.size()), d);
  for (std::size_t i = 0; i < reference.size(); ++i) {
    centered.row(static_cast<Eigen::Index>(i)) = (reference[i] - basis.mean).transpose();
  }
  const Matrix cov = centered.transpose() * centered / static_cast<double>(reference.size());

  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) throw Error("eigendecomposition failed");
  const Vector& values = eig.eigenvalues();  // ascending
  const double top = std::max(values[d - 1], 0.0);
  const double cutoff = 1e-9 * top;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < d; ++i)
    if (top > 0.0 && values[i] > cutoff) ++rank;
  if (rank < 2)
    throw ValidationError("degenerate covariance: rank " + std::to_string(rank) + " < 2");

  auto orient = [](Vector v) {
    Eigen::Index idx = 0;
    v.cwiseAbs().maxCoeff(&idx);
    return v[idx] < 0 ? Vector(-v) : v;
  };
  basis.axis1 = orient(eig.eigenvectors().col(d - 1));
  basis.axis2 = orient(eig.eigenvectors().col(d - 2));
  basis.explained1 = values[d - 1];
  basis.explained2 = values[d - 2];
  basis.total_variance = cov.trace();
  return basis;
}

inline Eigen::Vector2d pca_project(const PcaBasis& basis, const Vector& x) {
  if (x.size() != basis.mean.size()) throw ValidationError("PCA projection dimension mismatch");
  const Vector c = x - basis.mean;
  return {basis.axis1.dot(c), basis.axis2.dot(c)};
}

}  // namespace objcrop
