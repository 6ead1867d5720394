#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "objcrop/datamodel.hpp"
#include "objcrop/error.hpp"

namespace objcrop {

/// Scales `x` to unit Euclidean norm.
inline Vector normalize(const Vector& x) {
  const double n = x.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw ValidationError("cannot normalize a zero or non-finite vector");
  return x / n;
}

/// Softmax classification head: logits = W x + b.
struct LinearHead {
  Matrix weights;  // ways x d
  Vector bias;     // ways
  bool normalize_inputs = false;

  std::size_t ways() const noexcept { return static_cast<std::size_t>(weights.rows()); }
  std::size_t dimension() const noexcept { return static_cast<std::size_t>(weights.cols()); }

  static LinearHead zeros(std::size_t ways, std::size_t dim, bool normalize_inputs = false) {
    return {Matrix::Zero(static_cast<Eigen::Index>(ways), static_cast<Eigen::Index>(dim)),
            Vector::Zero(static_cast<Eigen::Index>(ways)), normalize_inputs};
  }
};

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t epochs = 500;
  double l2_weight = 1e-4;
  bool normalize_features = true;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be > 0");
    if (epochs == 0) throw ValidationError("epochs must be positive");
    if (!(l2_weight >= 0.0)) throw ValidationError("l2_weight must be >= 0");
  }
};

/// Rows are samples. Weights default to 1.
struct TrainingSet {
  Matrix features;
  std::vector<std::size_t> labels;
  std::vector<double> weights;
  std::size_t ways = 0;

  std::size_t size() const noexcept { return labels.size(); }

  void add(const Vector& x, std::size_t label, double weight = 1.0) {
    if (features.rows() == 0) features.resize(0, x.size());
    if (x.size() != features.cols()) throw ValidationError("training feature dimension mismatch");
    features.conservativeResize(features.rows() + 1, Eigen::NoChange);
    features.row(features.rows() - 1) = x.transpose();
    labels.push_back(label);
    weights.push_back(weight);
  }
};

inline Vector logits(const LinearHead& head, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != head.dimension())
    throw ValidationError("feature dimension " + std::to_string(x.size()) + " does not match head dimension " +
                          std::to_string(head.dimension()));
  if (head.normalize_inputs) return head.weights * normalize(x) + head.bias;
  return head.weights * x + head.bias;
}

inline Vector softmax(const Vector& z) {
  const double m = z.maxCoeff();
  Vector p = (z.array() - m).exp().matrix();
  return p / p.sum();
}

inline Vector predict_proba(const LinearHead& head, const Vector& x) { return softmax(logits(head, x)); }

struct Prediction {
  std::size_t label = 0;
  double confidence = 0.0;
};

/// Argmax with lowest-index tie-break.
inline Prediction argmax(const Vector& proba) {
  Prediction p{0, proba[0]};
  for (Eigen::Index i = 1; i < proba.size(); ++i)
    if (proba[i] > p.confidence) p = {static_cast<std::size_t>(i), proba[i]};
  return p;
}

inline Prediction predict(const LinearHead& head, const Vector& x) { return argmax(predict_proba(head, x)); }

struct Objective {
  double loss = 0.0;
  Matrix grad_weights;
  Vector grad_bias;
};

/**
 * Weighted mean softmax cross-entropy plus l2_weight * ||W||_F^2, with its
 * analytic gradient. Features are used as given (no normalisation here).
 */
inline Objective objective(const LinearHead& head, const Matrix& features, const std::vector<std::size_t>& labels,
                           const std::vector<double>& weights, double l2_weight) {
  const auto n = features.rows();
  const Matrix z = (features * head.weights.transpose()).rowwise() + head.bias.transpose();
  double total_w = 0.0;
  for (double w : weights) total_w += w;

  Matrix g(n, z.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = z.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (z.row(i).array() - m).exp().matrix();
    const double s = e.sum();
    const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
    const double wi = weights[static_cast<std::size_t>(i)] / total_w;
    loss += wi * (std::log(s) + m - z(i, y));
    g.row(i) = e / s;
    g(i, y) -= 1.0;
    g.row(i) *= wi;
  }
  loss += l2_weight * head.weights.squaredNorm();
  return {loss, g.transpose() * features + 2.0 * l2_weight * head.weights, g.colwise().sum().transpose()};
}

struct TrainResult {
  LinearHead head;
  /// Objective before the first step, then after each epoch (epochs + 1 values).
  std::vector<double> loss_history;
};

/// Full-batch gradient descent from a zero head.
inline TrainResult train_head(const TrainingSet& data, const TrainConfig& config) {
  config.validate();
  const std::size_t n = data.size();
  if (n == 0) throw ValidationError("empty training set");
  if (static_cast<std::size_t>(data.features.rows()) != n || data.weights.size() != n)
    throw ValidationError("features, labels and weights must have equal length");
  if (data.ways < 2) throw ValidationError("training needs at least 2 classes");
  std::vector<bool> seen(data.ways, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (data.labels[i] >= data.ways) throw ValidationError("label " + std::to_string(data.labels[i]) + " out of range");
    if (!(data.weights[i] >= 0.0) || !std::isfinite(data.weights[i]))
      throw ValidationError("sample weights must be finite and non-negative");
    seen[data.labels[i]] = true;
  }
  for (std::size_t c = 0; c < data.ways; ++c)
    if (!seen[c]) throw ValidationError("class " + std::to_string(c) + " has no training samples");
  if (!data.features.allFinite()) throw ValidationError("training features contain NaN or Inf");

  Matrix x = data.features;
  if (config.normalize_features)
    for (Eigen::Index i = 0; i < x.rows(); ++i) x.row(i) = normalize(x.row(i).transpose()).transpose();

  TrainResult out{LinearHead::zeros(data.ways, static_cast<std::size_t>(x.cols()), config.normalize_features), {}};
  out.loss_history.reserve(config.epochs + 1);
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const auto obj = objective(out.head, x, data.labels, data.weights, config.l2_weight);
    out.loss_history.push_back(obj.loss);
    out.head.weights -= config.learning_rate * obj.grad_weights;
    out.head.bias -= config.learning_rate * obj.grad_bias;
  }
  out.loss_history.push_back(objective(out.head, x, data.labels, data.weights, config.l2_weight).loss);
  return out;
}

inline nlohmann::json head_to_json(const LinearHead& head, const std::vector<std::string>& classes) {
  nlohmann::json w = nlohmann::json::array();
  for (Eigen::Index r = 0; r < head.weights.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(head.weights.cols()));
    for (Eigen::Index c = 0; c < head.weights.cols(); ++c) row[static_cast<std::size_t>(c)] = head.weights(r, c);
    w.push_back(row);
  }
  std::vector<double> b(head.bias.data(), head.bias.data() + head.bias.size());
  return {{"classes", classes}, {"W", w}, {"b", b}, {"normalize_inputs", head.normalize_inputs}};
}

}  // namespace objcrop
