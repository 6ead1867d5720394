#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "objcrop/cropgeom.hpp"
#include "objcrop/datamodel.hpp"
#include "objcrop/error.hpp"
#include "objcrop/rng.hpp"

namespace objcrop {

/**
 * Parameters of the synthetic embedding model
 *
 *     x(c, i, lambda) = f_c + lambda * (m + h_c + g_i) + eps
 *
 * where f_c is the class foreground, m a background shared by all images,
 * h_c class-specific context, g_i the background of image i and eps noise
 * drawn afresh for every crop. Every scale is the expected Euclidean norm
 * of its term; random terms are isotropic Gaussians with per-coordinate
 * standard deviation scale / sqrt(d). f_c and m have exactly the given norm.
 */
struct SynthConfig {
  std::size_t classes = 5;
  std::size_t dimension = 64;
  double foreground = 0.7;
  double background_mean = 0.5;
  double background_spread = 1.0;  // sigma_g
  double class_context = 0.5;      // sigma_h
  double noise = 1.0;              // sigma_eps
  std::uint64_t seed = 0;

  // Manifest geometry.
  std::size_t images_per_class = 200;
  std::uint32_t min_side = 320;
  std::uint32_t max_side = 480;
  double min_box_fraction = 0.25;
  double max_box_fraction = 0.6;

  void validate() const {
    if (classes < 2) throw ValidationError("synth needs at least 2 classes");
    if (dimension < 2) throw ValidationError("synth dimension must be >= 2");
    for (double s : {foreground, background_mean, background_spread, class_context, noise})
      if (!(s >= 0.0) || !std::isfinite(s)) throw ValidationError("synth scales must be finite and >= 0");
    if (min_side == 0 || min_side > max_side) throw ValidationError("invalid synth image side range");
    if (!(min_box_fraction > 0.0 && min_box_fraction <= max_box_fraction && max_box_fraction <= 1.0))
      throw ValidationError("invalid synth box fraction range");
  }

  /// Heavier per-image background; used where crops should matter at test time.
  static SynthConfig background_heavy() {
    SynthConfig c;
    c.foreground = 1.0;
    c.background_spread = 2.5;
    c.class_context = 0.3;
    c.noise = 0.5;
    return c;
  }

  /// Near noise-free crops: centroid shifts follow their closed form closely.
  static SynthConfig low_noise() {
    SynthConfig c;
    c.foreground = 1.0;
    c.background_spread = 1.0;
    c.class_context = 0.3;
    c.noise = 0.05;
    return c;
  }
};

inline nlohmann::json synth_config_to_json(const SynthConfig& c) {
  return {{"classes", c.classes},
          {"dimension", c.dimension},
          {"foreground", c.foreground},
          {"background_mean", c.background_mean},
          {"background_spread", c.background_spread},
          {"class_context", c.class_context},
          {"noise", c.noise},
          {"seed", c.seed},
          {"images_per_class", c.images_per_class},
          {"min_side", c.min_side},
          {"max_side", c.max_side},
          {"min_box_fraction", c.min_box_fraction},
          {"max_box_fraction", c.max_box_fraction}};
}

class SynthModel {
public:
  explicit SynthModel(SynthConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto d = static_cast<Eigen::Index>(config_.dimension);
    background_ = direction(stream(1, 0, 0)) * config_.background_mean;
    for (std::size_t c = 0; c < config_.classes; ++c) {
      foreground_.push_back(direction(stream(2, c, 0)) * config_.foreground);
      context_.push_back(gaussian(stream(3, c, 0), d, config_.class_context));
    }
  }

  const SynthConfig& config() const noexcept { return config_; }
  const Vector& foreground(std::size_t c) const { return foreground_.at(c); }
  const Vector& background_mean() const noexcept { return background_; }
  const Vector& class_context(std::size_t c) const { return context_.at(c); }

  Vector image_background(std::size_t c, std::size_t i) const {
    return gaussian(stream(4, c, i), static_cast<Eigen::Index>(config_.dimension), config_.background_spread);
  }

  /// Expected feature of class c at context fraction lambda.
  Vector expected(std::size_t c, double lambda) const {
    return foreground_.at(c) + lambda * (background_ + context_.at(c));
  }

  Vector generate(std::size_t c, std::size_t i, double lambda) const {
    ContextFraction{lambda};
    if (c >= config_.classes) throw ValidationError("synth class index out of range");
    const auto d = static_cast<Eigen::Index>(config_.dimension);
    const std::uint64_t salt = std::bit_cast<std::uint64_t>(lambda);
    Vector eps = gaussian(derive_seed(stream(5, c, i), salt), d, config_.noise);
    return foreground_[c] + lambda * (background_ + context_[c] + image_background(c, i)) + eps;
  }

private:
  std::uint64_t stream(std::uint64_t tag, std::uint64_t a, std::uint64_t b) const {
    return derive_seed(derive_seed(derive_seed(config_.seed, tag), a), b);
  }

  Vector gaussian(std::uint64_t seed, Eigen::Index d, double scale) const {
    Rng rng(seed);
    Vector v(d);
    const double s = scale / std::sqrt(static_cast<double>(d));
    for (Eigen::Index k = 0; k < d; ++k) v[k] = s * rng.normal();
    return v;
  }

  Vector direction(std::uint64_t seed) const {
    Vector v = gaussian(seed, static_cast<Eigen::Index>(config_.dimension), 1.0);
    return v / v.norm();
  }

  SynthConfig config_;
  Vector background_;
  std::vector<Vector> foreground_;
  std::vector<Vector> context_;
};

/**
 * Context fraction a crop keeps around `object` inside a width x height
 * image: extra width plus extra height, relative to the most either could
 * grow. Full-image crops map to 1.
 */
inline double effective_context(const BoundingBox& object, const BoundingBox& crop, std::uint32_t width,
                                 std::uint32_t height) {
  const double room = static_cast<double>(width - object.width()) + static_cast<double>(height - object.height());
  if (room <= 0.0) return 1.0;
  const double grown = (static_cast<double>(crop.width()) - object.width()) +
                       (static_cast<double>(crop.height()) - object.height());
  return std::clamp(grown / room, 0.0, 1.0);
}

/// Synthetic dataset: a manifest whose every image is backed by the model.
class SynthDataset {
public:
  explicit SynthDataset(const SynthConfig& config) : model_(config) {
    Rng geo(derive_seed(config.seed, 0x6e07));
    manifest_.name = "synthetic";
    for (std::size_t c = 0; c < config.classes; ++c) manifest_.classes.push_back("class_" + std::to_string(c));
    for (std::size_t c = 0; c < config.classes; ++c) {
      for (std::size_t i = 0; i < config.images_per_class; ++i) {
        ImageRecord r;
        r.image_id = "synth_c" + std::to_string(c) + "_" + std::to_string(i);
        r.class_label = manifest_.classes[c];
        auto side = [&] {
          return config.min_side + static_cast<std::uint32_t>(geo.below(config.max_side - config.min_side + 1));
        };
        r.width = side();
        r.height = side();
        auto extent = [&](std::uint32_t full) {
          const double f = geo.uniform(config.min_box_fraction, config.max_box_fraction);
          return std::clamp<std::uint32_t>(static_cast<std::uint32_t>(std::lround(f * full)), 1, full);
        };
        const auto bw = extent(r.width), bh = extent(r.height);
        const auto x0 = static_cast<std::uint32_t>(geo.below(r.width - bw + 1));
        const auto y0 = static_cast<std::uint32_t>(geo.below(r.height - bh + 1));
        r.gt_box = BoundingBox{x0, y0, x0 + bw, y0 + bh};
        r.point = r.click();
        r.sam_box = r.gt_box;
        r.salient_box = r.gt_box;
        index_.emplace(r.image_id, std::pair{c, i});
        manifest_.images.push_back(std::move(r));
      }
    }
    validate(manifest_);
  }

  const DatasetManifest& manifest() const noexcept { return manifest_; }
  const SynthModel& model() const noexcept { return model_; }

  /// Embedding of one crop request.
  Vector embed(const FeatureKey& key) const {
    auto it = index_.find(key.image_id);
    if (it == index_.end()) throw MissingDataError("unknown synthetic image '" + key.image_id + "'", {key.image_id});
    const auto [c, i] = it->second;
    const auto& rec = manifest_.images[c * model_.config().images_per_class + i];
    double lambda = 1.0;
    if (!key.is_full()) {
      const auto& crop = std::get<BoundingBox>(key.crop);
      if (!crop.fits(rec.width, rec.height))
        throw ValidationError("crop " + to_string(crop) + " outside image '" + rec.image_id + "'");
      lambda = effective_context(*rec.gt_box, crop, rec.width, rec.height);
    }
    return model_.generate(c, i, lambda);
  }

  FeatureStore embed_all(const std::vector<FeatureKey>& keys) const {
    FeatureStore store(static_cast<std::uint32_t>(model_.config().dimension));
    for (const auto& k : keys) store.insert(k, embed(k));
    return store;
  }

private:
  SynthModel model_;
  DatasetManifest manifest_;
  std::map<std::string, std::pair<std::size_t, std::size_t>> index_;
};

}  // namespace objcrop
