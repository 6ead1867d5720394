#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "objcrop/datamodel.hpp"
#include "objcrop/error.hpp"

namespace objcrop {

/// Fraction of the remaining image context kept around a box: 0 is the
/// minimal crop, 1 the whole image.
class ContextFraction {
public:
  constexpr ContextFraction() = default;
  explicit ContextFraction(double v) : v_(v) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("context fraction " + std::to_string(v) + " outside [0,1]");
  }
  constexpr double value() const noexcept { return v_; }

private:
  double v_ = 0.0;
};

namespace detail {

inline void require_fits(const BoundingBox& box, std::uint32_t width, std::uint32_t height) {
  if (!box.fits(width, height))
    throw ValidationError("box " + to_string(box) + " invalid for " + std::to_string(width) + "x" +
                          std::to_string(height) + " image");
}

}  // namespace detail

/// Moves every edge outward by `pad_per_side`, clamped to the image.
inline BoundingBox pad_box(const BoundingBox& box, std::uint32_t pad_per_side, std::uint32_t width,
                           std::uint32_t height) {
  detail::require_fits(box, width, height);
  const std::uint32_t p = pad_per_side;
  return {box.x_min > p ? box.x_min - p : 0u, box.y_min > p ? box.y_min - p : 0u,
          static_cast<std::uint32_t>(std::min<std::uint64_t>(std::uint64_t{box.x_max} + p, width)),
          static_cast<std::uint32_t>(std::min<std::uint64_t>(std::uint64_t{box.y_max} + p, height))};
}

/**
 * Linear interpolation of each corner between `box` (lambda = 0) and the
 * full image (lambda = 1). Minimum corners round down and maximum corners
 * round up, so the result always contains `box` and crops are nested in
 * lambda. A 1e-9 slack absorbs floating-point noise on exact integers.
 */
inline BoundingBox interpolate_context(const BoundingBox& box, ContextFraction lambda, std::uint32_t width,
                                       std::uint32_t height) {
  detail::require_fits(box, width, height);
  const double l = lambda.value();
  constexpr double slack = 1e-9;
  auto lo = [&](std::uint32_t v) {
    const double t = (1.0 - l) * v;
    return std::min(v, static_cast<std::uint32_t>(std::floor(t + slack)));
  };
  auto hi = [&](std::uint32_t v, std::uint32_t extent) {
    const double t = (1.0 - l) * v + l * extent;
    const auto r = static_cast<std::uint32_t>(std::ceil(t - slack));
    return std::clamp(r, v, extent);
  };
  return {lo(box.x_min), lo(box.y_min), hi(box.x_max, width), hi(box.y_max, height)};
}

/// Row-major binary mask.
struct BinaryMask {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> pixels;

  BinaryMask() = default;
  BinaryMask(std::uint32_t w, std::uint32_t h) : width(w), height(h), pixels(std::size_t{w} * h, 0) {}

  bool at(std::uint32_t x, std::uint32_t y) const { return pixels[std::size_t{y} * width + x] != 0; }
  void set(std::uint32_t x, std::uint32_t y, bool v = true) { pixels[std::size_t{y} * width + x] = v ? 1 : 0; }
};

/// Tightest half-open box around the true pixels. Throws on an empty mask.
inline BoundingBox mask_to_box(const BinaryMask& mask) {
  if (mask.pixels.size() != std::size_t{mask.width} * mask.height)
    throw ValidationError("mask buffer does not match its dimensions");
  std::uint32_t x0 = mask.width, y0 = mask.height, x1 = 0, y1 = 0;
  bool any = false;
  for (std::uint32_t y = 0; y < mask.height; ++y) {
    for (std::uint32_t x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      any = true;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x + 1);
      y1 = std::max(y1, y + 1);
    }
  }
  if (!any) throw ValidationError("empty mask");
  return {x0, y0, x1, y1};
}

inline BoundingBox mask_to_box(const BinaryMask& mask, std::uint32_t image_width, std::uint32_t image_height) {
  if (mask.width != image_width || mask.height != image_height)
    throw ValidationError("mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                          ", image is " + std::to_string(image_width) + "x" + std::to_string(image_height));
  return mask_to_box(mask);
}

// ---------------------------------------------------------------------------
// Augmentation modes

struct AugmentMode {
  enum class Kind { replace, minimal, pad_px, context_pct, multiple };

  Kind kind = Kind::pad_px;
  double param = 60.0;  // pixels for pad_px, fraction for context_pct

  static AugmentMode replace() { return {Kind::replace, 60.0}; }
  static AugmentMode minimal() { return {Kind::minimal, 0.0}; }
  static AugmentMode pad_px(double total) { return {Kind::pad_px, total}; }
  static AugmentMode context(double fraction) { return {Kind::context_pct, fraction}; }
  static AugmentMode multiple() { return {Kind::multiple, 0.0}; }
  /// Ground-truth default: 60 extra pixels in each dimension.
  static AugmentMode gt_default() { return pad_px(60.0); }

  bool operator==(const AugmentMode&) const = default;
};

inline constexpr double kMultipleLadder[] = {0.2, 0.5, 0.8};

/// Names: replace, minimal, multiple, default (= pad60), pad<N>, ctx<percent>.
inline AugmentMode parse_augment_mode(std::string_view s) {
  auto number = [&](std::string_view digits) {
    if (digits.empty()) throw ValidationError("augment mode '" + std::string(s) + "' lacks a number");
    try {
      std::size_t used = 0;
      double v = std::stod(std::string(digits), &used);
      if (used != digits.size()) throw std::invalid_argument("junk");
      return v;
    } catch (const std::logic_error&) {
      throw ValidationError("augment mode '" + std::string(s) + "' has a malformed number");
    }
  };
  if (s == "replace") return AugmentMode::replace();
  if (s == "minimal") return AugmentMode::minimal();
  if (s == "multiple") return AugmentMode::multiple();
  if (s == "default") return AugmentMode::gt_default();
  if (s.starts_with("pad")) {
    double x = number(s.substr(3));
    if (x < 0) throw ValidationError("pad must be non-negative");
    return AugmentMode::pad_px(x);
  }
  if (s.starts_with("ctx")) {
    double p = number(s.substr(3)) / 100.0;
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("ctx percentage outside [0,100]");
    return AugmentMode::context(p);
  }
  throw ValidationError("unknown augment mode '" + std::string(s) + "'");
}

inline std::string to_string(const AugmentMode& m) {
  switch (m.kind) {
    case AugmentMode::Kind::replace: return "replace";
    case AugmentMode::Kind::minimal: return "minimal";
    case AugmentMode::Kind::multiple: return "multiple";
    case AugmentMode::Kind::pad_px: {
      if (m.param == 60.0) return "default";
      return "pad" + std::to_string(static_cast<long long>(m.param));
    }
    case AugmentMode::Kind::context_pct: {
      auto pct = m.param * 100.0;
      if (pct == std::floor(pct)) return "ctx" + std::to_string(static_cast<long long>(pct));
      return "ctx" + std::to_string(pct);
    }
  }
  return "?";
}

struct AugmentPlan {
  AugmentMode mode;
  std::vector<BoundingBox> crops;
  bool keep_original = true;

  bool operator==(const AugmentPlan&) const = default;
};

/**
 * Training crops generated from one image's object box.
 *
 * Crops are deduplicated; when the original is kept, a crop equal to the
 * whole image is dropped as a duplicate of it.
 */
inline AugmentPlan plan_augments(const AugmentMode& mode, const BoundingBox& source_box, std::uint32_t width,
                                 std::uint32_t height) {
  detail::require_fits(source_box, width, height);
  AugmentPlan plan{mode, {}, mode.kind != AugmentMode::Kind::replace};
  switch (mode.kind) {
    case AugmentMode::Kind::replace:
      plan.crops.push_back(pad_box(source_box, 30, width, height));
      break;
    case AugmentMode::Kind::minimal:
      plan.crops.push_back(source_box);
      break;
    case AugmentMode::Kind::pad_px: {
      if (!(mode.param >= 0.0) || !std::isfinite(mode.param)) throw ValidationError("pad must be non-negative");
      const auto per_side = static_cast<std::uint32_t>(std::min(mode.param / 2.0, 4294967295.0));
      plan.crops.push_back(pad_box(source_box, per_side, width, height));
      break;
    }
    case AugmentMode::Kind::context_pct:
      plan.crops.push_back(interpolate_context(source_box, ContextFraction(mode.param), width, height));
      break;
    case AugmentMode::Kind::multiple:
      for (double l : kMultipleLadder)
        plan.crops.push_back(interpolate_context(source_box, ContextFraction(l), width, height));
      break;
  }
  std::vector<BoundingBox> unique;
  const auto full = BoundingBox::full(width, height);
  for (const auto& c : plan.crops) {
    if (plan.keep_original && c == full) continue;
    if (std::find(unique.begin(), unique.end(), c) == unique.end()) unique.push_back(c);
  }
  plan.crops = std::move(unique);
  return plan;
}

}  // namespace objcrop
