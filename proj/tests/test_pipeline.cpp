#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "objcrop/pipeline.hpp"
#include "objcrop/synth.hpp"

using namespace objcrop;

namespace {

DatasetManifest ten_images() {
  DatasetManifest m;
  m.classes = {"a", "b"};
  for (int i = 0; i < 10; ++i)
    m.images.push_back({"img" + std::to_string(i), 400, 300, i % 2 ? "b" : "a", BoundingBox{100, 100, 200, 180},
                        std::nullopt, std::nullopt, std::nullopt});
  return m;
}

struct SmallSynth {
  SynthDataset data;
  FeatureStore store;

  explicit SmallSynth(SynthConfig cfg = small_config(), std::vector<double> lambdas = {0.2, 0.5, 0.8})
      : data(cfg), store(static_cast<std::uint32_t>(cfg.dimension)) {
    CropPlanConfig pc;
    pc.modes = {AugmentMode::gt_default(), AugmentMode::replace(), AugmentMode::multiple()};
    pc.lambdas = std::move(lambdas);
    std::vector<FeatureKey> keys;
    for (const auto& r : plan_crops(data.manifest(), pc).requests) keys.push_back(r.key);
    store = data.embed_all(keys);
  }

  static SynthConfig small_config() {
    SynthConfig cfg;
    cfg.images_per_class = 40;
    cfg.dimension = 16;
    return cfg;
  }
};

}  // namespace

TEST(ParseMethod, Names) {
  EXPECT_TRUE(parse_method("baseline").is_baseline());
  const auto gt = parse_method("gt");
  EXPECT_EQ(*gt.source, BoxSource::gt);
  EXPECT_EQ(*gt.mode, AugmentMode::gt_default());
  EXPECT_EQ(*parse_method("sam").mode, AugmentMode::multiple());
  EXPECT_EQ(*parse_method("replace").source, BoxSource::gt);
  const auto s = parse_method("salient-ctx40");
  EXPECT_EQ(*s.source, BoxSource::salient);
  EXPECT_EQ(*s.mode, AugmentMode::context(0.4));
  EXPECT_THROW(parse_method("bogus"), ValidationError);
}

TEST(PlanCrops, DefaultModeCounts) {
  const auto plan = plan_crops(ten_images(), {});
  std::size_t full = 0, crops = 0;
  for (const auto& r : plan.requests) (r.key.is_full() ? full : crops)++;
  EXPECT_EQ(full, 10u);
  EXPECT_EQ(crops, 10u);
  EXPECT_EQ(plan.requests.front().purpose, "full");
}

TEST(PlanCrops, MultipleGivesThreePerImage) {
  CropPlanConfig pc;
  pc.modes = {AugmentMode::multiple()};
  const auto plan = plan_crops(ten_images(), pc);
  std::size_t crops = 0;
  for (const auto& r : plan.requests) crops += !r.key.is_full();
  EXPECT_EQ(crops, 30u);
}

TEST(PlanCrops, DeduplicatesAcrossModes) {
  CropPlanConfig pc;
  pc.modes = {AugmentMode::gt_default(), AugmentMode::replace(), AugmentMode::pad_px(60)};
  const auto plan = plan_crops(ten_images(), pc);
  std::set<FeatureKey> keys;
  for (const auto& r : plan.requests) EXPECT_TRUE(keys.insert(r.key).second);
  EXPECT_EQ(plan.requests.size(), 20u);
}

TEST(PlanCrops, MissingSourceIsAnError) {
  CropPlanConfig pc;
  pc.sources = {BoxSource::sam};
  try {
    plan_crops(ten_images(), pc);
    FAIL();
  } catch (const MissingDataError& e) {
    EXPECT_EQ(e.missing().size(), 10u);
  }
  auto m = ten_images();
  m.images[3].gt_box.reset();
  try {
    plan_crops(m, {});
    FAIL();
  } catch (const MissingDataError& e) {
    ASSERT_EQ(e.missing().size(), 1u);
    EXPECT_EQ(e.missing()[0], "img3");
  }
}

TEST(PlanCrops, PartialDerivedBoxesFallBackToFullImage) {
  auto m = ten_images();
  for (int i = 0; i < 10; ++i)
    if (i != 4) m.images[static_cast<std::size_t>(i)].sam_box = BoundingBox{110, 110, 190, 170};
  CropPlanConfig pc;
  pc.sources = {BoxSource::sam};
  const auto plan = plan_crops(m, pc);
  ASSERT_EQ(plan.fallbacks, (std::vector<std::string>{"img4:sam"}));
}

TEST(RunBenchmark, RowsAggregatesAndOrder) {
  const SmallSynth s;
  BenchmarkConfig cfg;
  cfg.methods = {"baseline", "gt", "multiple"};
  cfg.support_sizes = {5, 10};
  cfg.runs = 6;
  cfg.n_test = 20;
  cfg.train.epochs = 50;
  const auto report = run_benchmark(s.data.manifest(), s.store, cfg);
  ASSERT_EQ(report.rows.size(), 3u * 2u * 6u);
  EXPECT_EQ(report.rows[0].method, "baseline");
  EXPECT_EQ(report.rows[0].n_labeled, 5u);
  EXPECT_EQ(report.rows[6].n_labeled, 10u);
  EXPECT_EQ(report.rows[12].method, "gt");
  for (const auto& agg : report.aggregates()) {
    const auto acc = report.accuracies(agg.method, agg.n_labeled);
    double sum = 0.0;
    for (double a : acc) sum += a;
    EXPECT_NEAR(agg.mean, sum / static_cast<double>(acc.size()), 1e-9);
    EXPECT_EQ(agg.runs, 6u);
  }
  EXPECT_EQ(report.metadata["config"]["train"]["epochs"], 50);
}

TEST(RunBenchmark, DeterministicAcrossThreadCounts) {
  const SmallSynth s;
  BenchmarkConfig cfg;
  cfg.support_sizes = {5};
  cfg.runs = 8;
  cfg.n_test = 20;
  cfg.train.epochs = 40;
  cfg.threads = 1;
  const auto a = run_benchmark(s.data.manifest(), s.store, cfg);
  cfg.threads = 4;
  const auto b = run_benchmark(s.data.manifest(), s.store, cfg);
  std::ostringstream oa, ob;
  write_runs_csv(a, oa);
  write_runs_csv(b, ob);
  EXPECT_EQ(oa.str(), ob.str());
  EXPECT_EQ(oa.str().substr(0, kRunCsvHeader.size()), kRunCsvHeader);
}

TEST(RunBenchmark, Transductive) {
  const SmallSynth s;
  BenchmarkConfig cfg;
  cfg.setting = Setting::transductive;
  cfg.support_sizes = {5, 10};
  cfg.runs = 3;
  cfg.n_test = 20;
  cfg.train.epochs = 40;
  const auto report = run_benchmark(s.data.manifest(), s.store, cfg);
  EXPECT_EQ(report.rows.size(), 2u * 2u * 3u);
  EXPECT_EQ(report.rows[0].setting, "transductive");
  EXPECT_EQ(cfg.episode(10, 0).n_query, 40u);
}

TEST(RunBenchmark, MissingFeaturesAreListed) {
  const SmallSynth s;
  FeatureStore partial(16);
  partial.insert(full_key("synth_c0_0"), s.store.lookup(full_key("synth_c0_0")));
  BenchmarkConfig cfg;
  cfg.support_sizes = {5};
  cfg.runs = 2;
  cfg.n_test = 10;
  try {
    run_benchmark(s.data.manifest(), partial, cfg);
    FAIL();
  } catch (const MissingDataError& e) {
    EXPECT_FALSE(e.missing().empty());
  }
}

TEST(FuseEval, ZeroThresholdMatchesBaselineExactly) {
  const SmallSynth s;
  FuseEvalConfig cfg;
  cfg.runs = 10;
  cfg.n_test = 20;
  cfg.train.epochs = 60;
  cfg.fusion.threshold = 0.0;
  const auto report = fuse_eval(s.data.manifest(), s.store, cfg);
  EXPECT_EQ(report.accuracies("baseline", 5), report.accuracies("fused", 5));
  EXPECT_EQ(report.metadata["provenance_counts"]["original"], 10 * 20);
}

TEST(FuseEval, AuditCoversEveryTestItem) {
  const SmallSynth s;
  FuseEvalConfig cfg;
  cfg.runs = 7;
  cfg.n_test = 15;
  cfg.train.epochs = 60;
  const auto report = fuse_eval(s.data.manifest(), s.store, cfg);
  EXPECT_EQ(report.audit.size(), 7u * 15u);
  std::size_t total = 0;
  for (const auto& [name, count] : report.metadata["provenance_counts"].items()) total += count.get<std::size_t>();
  EXPECT_EQ(total, 7u * 15u);
  std::ostringstream out;
  write_audit_csv(report, out);
  EXPECT_EQ(out.str().substr(0, kAuditCsvHeader.size()), kAuditCsvHeader);
}

TEST(Analyze, ScatterRowsAndEndpoint) {
  const SmallSynth s(SmallSynth::small_config(), {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0});
  AnalyzeConfig cfg;
  cfg.per_class = 30;
  const auto res = analyze(s.data.manifest(), s.store, cfg);
  ASSERT_EQ(res.curve.size(), 11u);
  EXPECT_EQ(res.curve.back().centroid_distance, 0.0);
  EXPECT_EQ(res.scatter.size(), 2u * 5u * 30u);
}

TEST(Analyze, BasisIgnoresCroppedFeatures) {
  const SmallSynth s(SmallSynth::small_config(), {0.0, 0.5, 1.0});
  AnalyzeConfig cfg;
  cfg.lambdas = {0.0, 0.5, 1.0};
  cfg.per_class = 20;
  const auto a = analyze(s.data.manifest(), s.store, cfg);

  // Scramble every cropped vector; uncropped ones stay put.
  FeatureStore changed(16);
  for (const auto& rec : s.data.manifest().images) {
    changed.insert(full_key(rec.image_id), s.store.lookup(full_key(rec.image_id)));
    for (const auto& k : context_keys(rec, BoxSource::gt, {0.0, 0.5}))
      changed.insert(k, Vector(s.store.lookup(k) * -3.0));
  }
  const auto b = analyze(s.data.manifest(), changed, cfg);
  EXPECT_EQ(a.basis.axis1, b.basis.axis1);
  EXPECT_EQ(a.basis.axis2, b.basis.axis2);
  EXPECT_EQ(a.basis.mean, b.basis.mean);
  EXPECT_NE(a.curve[0].variance, b.curve[0].variance);
}
