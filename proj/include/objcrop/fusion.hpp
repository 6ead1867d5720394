#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "objcrop/cropgeom.hpp"
#include "objcrop/error.hpp"
#include "objcrop/probe.hpp"

namespace objcrop {

struct FusionConfig {
  double threshold = 0.8;
  std::vector<double> crop_ladder{0.2, 0.5, 0.8};
  /// Whether the full image competes with the crops below threshold.
  bool include_original = true;

  void validate() const {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("threshold must lie in [0,1]");
    for (double l : crop_ladder) ContextFraction{l};
  }
};

struct FusedPrediction {
  std::size_t label = 0;
  double confidence = 0.0;
  double full_confidence = 0.0;
  /// -1 for the original image, otherwise the index of the winning crop.
  int provenance = -1;
  bool fell_back = false;  // below threshold with no crops available

  bool from_original() const noexcept { return provenance < 0; }
};

inline std::string provenance_name(const FusedPrediction& p) {
  return p.from_original() ? "original" : "crop_" + std::to_string(p.provenance);
}

/**
 * Predict from the full image; if its confidence is below the threshold,
 * take the most confident candidate among the crops (and the full image,
 * unless disabled). Ties go to the earliest candidate, original first.
 */
inline FusedPrediction fused_predict(const LinearHead& head, const Vector& full_feature,
                                     const std::vector<Vector>& crop_features, const FusionConfig& config) {
  config.validate();
  const auto base = predict(head, full_feature);
  FusedPrediction out{base.label, base.confidence, base.confidence, -1, false};
  if (base.confidence >= config.threshold) return out;
  if (crop_features.empty()) {
    out.fell_back = true;
    return out;
  }
  bool have = config.include_original;
  for (std::size_t k = 0; k < crop_features.size(); ++k) {
    const auto p = predict(head, crop_features[k]);
    if (!have || p.confidence > out.confidence) {
      out.label = p.label;
      out.confidence = p.confidence;
      out.provenance = static_cast<int>(k);
      have = true;
    }
  }
  return out;
}

}  // namespace objcrop
