#include <cmath>

#include <gtest/gtest.h>

#include "objcrop/synth.hpp"

using namespace objcrop;

TEST(SynthModel, NoiseFreeClosedForm) {
  SynthConfig cfg;
  cfg.background_spread = cfg.class_context = cfg.noise = 0.0;
  const SynthModel model(cfg);
  for (std::size_t c = 0; c < cfg.classes; ++c)
    for (double l : {0.0, 0.3, 1.0}) {
      const Vector x = model.generate(c, 17, l);
      EXPECT_LT((x - (model.foreground(c) + l * model.background_mean())).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(SynthModel, TermNorms) {
  SynthConfig cfg;
  const SynthModel model(cfg);
  EXPECT_NEAR(model.background_mean().norm(), cfg.background_mean, 1e-12);
  for (std::size_t c = 0; c < cfg.classes; ++c) EXPECT_NEAR(model.foreground(c).norm(), cfg.foreground, 1e-12);
}

TEST(SynthModel, Deterministic) {
  const SynthModel a(SynthConfig{}), b(SynthConfig{});
  EXPECT_EQ(a.generate(3, 42, 0.25), b.generate(3, 42, 0.25));
  EXPECT_EQ(a.generate(3, 42, 0.25), a.generate(3, 42, 0.25));
  EXPECT_NE(a.generate(3, 42, 0.25), a.generate(3, 43, 0.25));
  SynthConfig other;
  other.seed = 1;
  EXPECT_NE(SynthModel(other).generate(3, 42, 0.25), a.generate(3, 42, 0.25));
}

TEST(SynthModel, BackgroundSharedAcrossLambda) {
  SynthConfig cfg;
  cfg.noise = 0.0;
  const SynthModel model(cfg);
  const Vector x0 = model.generate(1, 5, 0.0), x5 = model.generate(1, 5, 0.5), x1 = model.generate(1, 5, 1.0);
  // Without noise the sweep is affine in lambda.
  EXPECT_LT((x5 - 0.5 * (x0 + x1)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SynthModel, MonteCarloCentroid) {
  SynthConfig cfg;
  const SynthModel model(cfg);
  const std::size_t n = 10000;
  const double lambda = 0.4;
  const auto d = static_cast<double>(cfg.dimension);
  // Per-coordinate variance of one sample: (lambda sigma_g)^2/d + sigma_eps^2/d.
  const double var = (lambda * lambda * cfg.background_spread * cfg.background_spread + cfg.noise * cfg.noise) / d;
  for (std::size_t c = 0; c < 2; ++c) {
    Vector sum = Vector::Zero(static_cast<Eigen::Index>(cfg.dimension));
    for (std::size_t i = 0; i < n; ++i) sum += model.generate(c, i, lambda);
    const Vector err = sum / static_cast<double>(n) - model.expected(c, lambda);
    // Squared error in standard-error units is chi-square with d degrees of freedom.
    const double chi2 = err.squaredNorm() / (var / static_cast<double>(n));
    EXPECT_LT(chi2, d + 3.0 * std::sqrt(2.0 * d));
    EXPECT_LT(err.cwiseAbs().maxCoeff(), 4.5 * std::sqrt(var / static_cast<double>(n)));
  }
}

TEST(SynthModel, RejectsBadInput) {
  const SynthModel model(SynthConfig{});
  EXPECT_THROW(model.generate(0, 0, 1.5), ValidationError);
  EXPECT_THROW(model.generate(99, 0, 0.5), ValidationError);
  SynthConfig bad;
  bad.noise = -1;
  EXPECT_THROW(SynthModel{bad}, ValidationError);
}

TEST(EffectiveContext, Endpoints) {
  const BoundingBox obj{100, 100, 200, 180};
  EXPECT_EQ(effective_context(obj, obj, 400, 300), 0.0);
  EXPECT_EQ(effective_context(obj, BoundingBox::full(400, 300), 400, 300), 1.0);
  const auto mid = interpolate_context(obj, ContextFraction(0.5), 400, 300);
  EXPECT_NEAR(effective_context(obj, mid, 400, 300), 0.5, 0.01);
  EXPECT_EQ(effective_context(BoundingBox::full(50, 50), BoundingBox::full(50, 50), 50, 50), 1.0);
}

TEST(SynthDataset, ManifestIsValidAndComplete) {
  SynthConfig cfg;
  cfg.images_per_class = 30;
  const SynthDataset data(cfg);
  const auto& m = data.manifest();
  EXPECT_EQ(m.classes.size(), cfg.classes);
  EXPECT_EQ(m.images.size(), cfg.classes * 30);
  EXPECT_NO_THROW(validate(m));
  for (const auto& r : m.images) {
    ASSERT_TRUE(r.gt_box && r.sam_box && r.salient_box && r.point);
    EXPECT_TRUE(r.gt_box->contains_point(r.point->x, r.point->y));
  }
}

TEST(SynthDataset, EmbedsCropsAtTheirContext) {
  SynthConfig cfg;
  cfg.images_per_class = 5;
  const SynthDataset data(cfg);
  const auto& rec = data.manifest().images[7];
  const std::size_t c = 1, i = 2;  // images are laid out class-major
  ASSERT_EQ(rec.image_id, "synth_c1_2");
  EXPECT_EQ(data.embed(full_key(rec.image_id)), data.model().generate(c, i, 1.0));
  EXPECT_EQ(data.embed(crop_key(rec, *rec.gt_box)), data.model().generate(c, i, 0.0));
  EXPECT_EQ(data.embed(crop_key(rec, rec.full_box())), data.embed(full_key(rec.image_id)));
  EXPECT_THROW(data.embed(full_key("nope")), MissingDataError);
  EXPECT_THROW(data.embed(canonical_key(rec.image_id, BoundingBox{0, 0, rec.width + 1, 5})), ValidationError);
}
