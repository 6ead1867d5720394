#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "objcrop/analysis.hpp"
#include "objcrop/cropgeom.hpp"
#include "objcrop/datamodel.hpp"
#include "objcrop/episodes.hpp"
#include "objcrop/error.hpp"
#include "objcrop/fusion.hpp"
#include "objcrop/parallel.hpp"
#include "objcrop/probe.hpp"
#include "objcrop/rng.hpp"
#include "objcrop/stats.hpp"
#include "objcrop/transduction.hpp"

// Experiment orchestration: crop planning, benchmark sweeps, fusion
// evaluation and latent analysis over a manifest + feature store.

namespace objcrop {

// ---------------------------------------------------------------------------
// Methods

/// A training recipe: "baseline" or a box source combined with an augment mode.
struct Method {
  std::string name;
  std::optional<BoxSource> source;
  std::optional<AugmentMode> mode;

  bool is_baseline() const noexcept { return !mode.has_value(); }
};

/**
 * Accepted spellings: `baseline`; a bare source (`gt` = gt-default,
 * `sam`/`salient` = multiple); a bare mode (applied to gt boxes); or
 * `<source>-<mode>` such as `sam-ctx50`.
 */
inline Method parse_method(std::string_view s) {
  Method m{std::string(s), std::nullopt, std::nullopt};
  if (s == "baseline") return m;
  if (s == "gt" || s == "sam" || s == "salient") {
    m.source = parse_box_source(s);
    m.mode = s == "gt" ? AugmentMode::gt_default() : AugmentMode::multiple();
    return m;
  }
  const auto dash = s.find('-');
  if (dash != std::string_view::npos) {
    m.source = parse_box_source(s.substr(0, dash));
    m.mode = parse_augment_mode(s.substr(dash + 1));
  } else {
    m.source = BoxSource::gt;
    m.mode = parse_augment_mode(s);
  }
  return m;
}

namespace detail {

/// Object box for `source`, or the whole image when a derived box is absent
/// (failed segmentation). A missing ground-truth box is an error.
inline BoundingBox object_box(const ImageRecord& rec, BoxSource source, std::vector<std::string>* fallbacks) {
  if (auto b = rec.box(source)) return *b;
  if (source == BoxSource::gt)
    throw MissingDataError("image '" + rec.image_id + "' has no gt_box", {rec.image_id});
  if (fallbacks) fallbacks->push_back(rec.image_id);
  return rec.full_box();
}

inline const ImageRecord& record(const DatasetManifest& m, const std::string& id) {
  const auto* r = m.find(id);
  if (!r) throw MissingDataError("image '" + id + "' not in manifest", {id});
  return *r;
}

inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace detail

/// Feature keys a method trains on for one support image.
inline std::vector<FeatureKey> training_keys(const ImageRecord& rec, const Method& method,
                                             std::vector<std::string>* fallbacks = nullptr) {
  if (method.is_baseline()) return {full_key(rec.image_id)};
  const auto box = detail::object_box(rec, *method.source, fallbacks);
  const auto plan = plan_augments(*method.mode, box, rec.width, rec.height);
  std::vector<FeatureKey> keys;
  if (plan.keep_original) keys.push_back(full_key(rec.image_id));
  for (const auto& c : plan.crops) {
    auto k = crop_key(rec, c);
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(std::move(k));
  }
  return keys;
}

/// Keys of context crops at each lambda; lambda = 1 resolves to FULL.
inline std::vector<FeatureKey> context_keys(const ImageRecord& rec, BoxSource source, const std::vector<double>& lambdas,
                                            std::vector<std::string>* fallbacks = nullptr) {
  const auto box = detail::object_box(rec, source, fallbacks);
  std::vector<FeatureKey> keys;
  for (double l : lambdas) keys.push_back(crop_key(rec, interpolate_context(box, ContextFraction(l), rec.width, rec.height)));
  return keys;
}

// ---------------------------------------------------------------------------
// Crop planning

struct CropPlanConfig {
  std::vector<BoxSource> sources{BoxSource::gt};
  std::vector<AugmentMode> modes{AugmentMode::gt_default()};
  /// Extra context-interpolated crops (test-time ladder, analysis grid).
  std::vector<double> lambdas;
};

struct CropPlan {
  std::vector<CropRequest> requests;
  /// Images whose derived box was absent and fell back to the full image.
  std::vector<std::string> fallbacks;
};

/**
 * Every crop the extractor must embed: one FULL entry per image, then the
 * augment crops of each (source, mode) pair and the context crops of each
 * extra lambda. Requests are unique by key; the first purpose wins.
 */
inline CropPlan plan_crops(const DatasetManifest& manifest, const CropPlanConfig& config) {
  for (auto s : config.sources) {
    std::vector<std::string> missing;
    bool any = false;
    for (const auto& r : manifest.images) {
      if (r.box(s))
        any = true;
      else
        missing.push_back(r.image_id);
    }
    if (s == BoxSource::gt ? !missing.empty() : !any)
      throw MissingDataError("box source '" + std::string(to_string(s)) + "' missing for " +
                                 std::to_string(missing.size()) + " image(s)",
                             missing);
  }
  CropPlan plan;
  std::set<FeatureKey> seen;
  auto emit = [&](FeatureKey k, std::string purpose) {
    if (seen.insert(k).second) plan.requests.push_back({std::move(k), std::move(purpose)});
  };
  for (const auto& rec : manifest.images) {
    emit(full_key(rec.image_id), "full");
    for (auto s : config.sources) {
      std::vector<std::string> fb;
      const auto box = detail::object_box(rec, s, &fb);
      if (!fb.empty()) plan.fallbacks.push_back(rec.image_id + ":" + std::string(to_string(s)));
      for (const auto& mode : config.modes) {
        const auto aug = plan_augments(mode, box, rec.width, rec.height);
        for (const auto& c : aug.crops)
          emit(crop_key(rec, c), "augment:" + std::string(to_string(s)) + "-" + to_string(mode));
      }
      for (double l : config.lambdas)
        emit(crop_key(rec, interpolate_context(box, ContextFraction(l), rec.width, rec.height)),
             "context:" + std::string(to_string(s)) + ":" + detail::format_real(l));
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Reports

struct RunRow {
  std::string dataset;
  std::string setting;
  std::string method;
  std::size_t n_labeled = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

struct AggregateRow {
  std::string dataset;
  std::string setting;
  std::string method;
  std::size_t n_labeled = 0;
  std::size_t runs = 0;
  double mean = 0.0;
  double ci95 = 0.0;
};

struct AuditRow {
  std::string image_id;
  double full_confidence = 0.0;
  std::string provenance;
  std::string label;
  bool correct = false;
};

struct RunReport {
  std::vector<RunRow> rows;
  nlohmann::json metadata;
  std::vector<std::string> warnings;
  std::vector<AuditRow> audit;  // fusion runs only

  /// Accuracies of `method` at `n_labeled`, in run order.
  std::vector<double> accuracies(std::string_view method, std::size_t n_labeled) const {
    std::vector<double> out;
    for (const auto& r : rows)
      if (r.method == method && r.n_labeled == n_labeled) out.push_back(r.accuracy);
    return out;
  }

  /// One row per (dataset, setting, method, n_labeled) in first-seen order.
  std::vector<AggregateRow> aggregates() const {
    std::vector<AggregateRow> out;
    std::vector<std::vector<double>> values;
    for (const auto& r : rows) {
      auto it = std::find_if(out.begin(), out.end(), [&](const AggregateRow& a) {
        return a.dataset == r.dataset && a.setting == r.setting && a.method == r.method && a.n_labeled == r.n_labeled;
      });
      if (it == out.end()) {
        out.push_back({r.dataset, r.setting, r.method, r.n_labeled, 0, 0.0, 0.0});
        values.emplace_back();
        it = out.end() - 1;
      }
      values[static_cast<std::size_t>(it - out.begin())].push_back(r.accuracy);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].runs = values[i].size();
      out[i].mean = stats::mean(values[i]);
      out[i].ci95 = stats::ci95_half_width(values[i]);
    }
    return out;
  }
};

inline constexpr std::string_view kRunCsvHeader = "dataset,setting,method,n_labeled,seed,accuracy";
inline constexpr std::string_view kSummaryCsvHeader = "dataset,setting,method,n_labeled,runs,mean,ci95_half_width";
inline constexpr std::string_view kAuditCsvHeader = "image_id,full_confidence,provenance,label,correct";

namespace detail {

/// RFC 4180 quoting when needed.
inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

inline void write_runs_csv(const RunReport& report, std::ostream& out) {
  out << kRunCsvHeader << '\n';
  for (const auto& r : report.rows)
    out << detail::csv_field(r.dataset) << ',' << r.setting << ',' << detail::csv_field(r.method) << ','
        << r.n_labeled << ',' << r.seed << ',' << detail::format_real(r.accuracy) << '\n';
}

inline void write_summary_csv(const RunReport& report, std::ostream& out) {
  out << kSummaryCsvHeader << '\n';
  for (const auto& a : report.aggregates())
    out << detail::csv_field(a.dataset) << ',' << a.setting << ',' << detail::csv_field(a.method) << ','
        << a.n_labeled << ',' << a.runs << ',' << detail::format_real(a.mean) << ','
        << detail::format_real(a.ci95) << '\n';
}

inline void write_audit_csv(const RunReport& report, std::ostream& out) {
  out << kAuditCsvHeader << '\n';
  for (const auto& a : report.audit)
    out << detail::csv_field(a.image_id) << ',' << detail::format_real(a.full_confidence) << ',' << a.provenance
        << ',' << detail::csv_field(a.label) << ',' << (a.correct ? 1 : 0) << '\n';
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"optimizer", "full-batch gradient descent"},
          {"initialization", "zeros"},
          {"loss", "weighted mean softmax cross-entropy + l2_weight*||W||^2"},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"l2_weight", c.l2_weight},
          {"normalize_features", c.normalize_features}};
}

inline nlohmann::json kmeans_config_to_json(const SoftKMeansConfig& c) {
  return {{"assignment", "softmax(-beta * squared euclidean distance)"},
          {"support_in_updates", true},
          {"pseudolabels", "hard argmax, weight 1"},
          {"beta", c.beta},
          {"max_iters", c.max_iters},
          {"tol", c.tol}};
}

// ---------------------------------------------------------------------------
// Benchmark

struct BenchmarkConfig {
  std::string dataset = "dataset";
  std::vector<std::string> methods{"baseline", "gt"};
  std::vector<std::size_t> support_sizes{5, 10, 15, 20, 25};
  Setting setting = Setting::inductive;
  std::size_t runs = 100;
  std::uint64_t seed = 0;
  std::size_t ways = 5;
  std::size_t n_test = 100;
  /// Labelled plus unlabelled pool size in the transductive setting.
  std::size_t transductive_pool = 50;
  TrainConfig train;
  SoftKMeansConfig kmeans;
  std::size_t threads = 0;

  EpisodeConfig episode(std::size_t n_support, std::uint64_t run_seed) const {
    EpisodeConfig e;
    e.ways = ways;
    e.n_support = n_support;
    e.n_test = n_test;
    e.seed = run_seed;
    e.setting = setting;
    if (setting == Setting::transductive) {
      if (transductive_pool < n_support)
        throw ValidationError("transductive pool " + std::to_string(transductive_pool) + " smaller than support " +
                              std::to_string(n_support));
      e.n_query = transductive_pool - n_support;
    }
    return e;
  }

  nlohmann::json to_json() const {
    return {{"dataset", dataset},
            {"methods", methods},
            {"support_sizes", support_sizes},
            {"setting", to_string(setting)},
            {"runs", runs},
            {"seed", seed},
            {"ways", ways},
            {"n_test", n_test},
            {"transductive_pool", transductive_pool},
            {"run_seed_derivation", "derive_seed(seed, run_index)"},
            {"train", train_config_to_json(train)},
            {"soft_kmeans", kmeans_config_to_json(kmeans)}};
  }
};

namespace detail {

inline std::uint64_t run_seed(std::uint64_t base, std::size_t run) { return derive_seed(base, run); }

inline double accuracy_on(const LinearHead& head, const FeatureStore& store, const std::vector<LabeledItem>& test) {
  std::size_t correct = 0;
  for (const auto& t : test)
    if (predict(head, store.lookup(full_key(t.image_id))).label == t.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

struct EpisodeOutcome {
  double accuracy = 0.0;
  bool kmeans_converged = true;
};

inline EpisodeOutcome evaluate_method(const DatasetManifest& manifest, const FeatureStore& store, const Episode& ep,
                                      const Method& method, const BenchmarkConfig& cfg) {
  TrainingSet data;
  data.ways = ep.classes.size();
  ClassFeatures per_class(data.ways);
  for (const auto& s : ep.support) {
    for (const auto& k : training_keys(record(manifest, s.image_id), method)) {
      auto x = store.lookup(k);
      data.add(x, s.label);
      per_class[s.label].push_back(cfg.train.normalize_features ? normalize(x) : x);
    }
  }
  EpisodeOutcome out;
  if (!ep.query.empty()) {
    std::vector<Vector> query, raw;
    for (const auto& q : ep.query) {
      raw.push_back(store.lookup(full_key(q.image_id)));
      query.push_back(cfg.train.normalize_features ? normalize(raw.back()) : raw.back());
    }
    const auto km = run_soft_kmeans(per_class, query, cfg.kmeans);
    out.kmeans_converged = km.converged;
    for (std::size_t i = 0; i < raw.size(); ++i) data.add(raw[i], km.pseudolabels[i]);
  }
  const auto trained = train_head(data, cfg.train);
  out.accuracy = accuracy_on(trained.head, store, ep.test);
  return out;
}

}  // namespace detail

/**
 * Sweep over support sizes and methods. Every (run, support size) cell
 * samples one episode shared by all methods, so method comparisons are
 * paired. All required features are checked before any training starts.
 */
inline RunReport run_benchmark(const DatasetManifest& manifest, const FeatureStore& store,
                               const BenchmarkConfig& cfg) {
  if (cfg.runs == 0) throw ValidationError("runs must be positive");
  if (cfg.support_sizes.empty()) throw ValidationError("empty support-size sweep");
  if (cfg.methods.empty()) throw ValidationError("no methods");
  cfg.train.validate();
  cfg.kmeans.validate();
  std::vector<Method> methods;
  for (const auto& m : cfg.methods) methods.push_back(parse_method(m));

  const std::size_t cells = cfg.support_sizes.size() * cfg.runs;
  std::vector<Episode> episodes(cells);
  std::vector<std::uint64_t> seeds(cells);
  std::vector<FeatureKey> needed;
  std::set<std::string> fallbacks;
  std::vector<std::string> missing_gt;
  for (std::size_t s = 0; s < cfg.support_sizes.size(); ++s) {
    for (std::size_t r = 0; r < cfg.runs; ++r) {
      const std::size_t cell = s * cfg.runs + r;
      seeds[cell] = detail::run_seed(cfg.seed, r);
      episodes[cell] = sample_episode(manifest, cfg.episode(cfg.support_sizes[s], seeds[cell]));
      const auto& ep = episodes[cell];
      for (const auto& it : ep.support) {
        const auto& rec = detail::record(manifest, it.image_id);
        for (const auto& m : methods) {
          std::vector<std::string> fb;
          try {
            for (auto& k : training_keys(rec, m, &fb)) needed.push_back(std::move(k));
          } catch (const MissingDataError&) {
            missing_gt.push_back(rec.image_id);
          }
          fallbacks.insert(fb.begin(), fb.end());
        }
      }
      for (const auto& it : ep.query) needed.push_back(full_key(it.image_id));
      for (const auto& it : ep.test) needed.push_back(full_key(it.image_id));
    }
  }
  if (!missing_gt.empty()) {
    std::sort(missing_gt.begin(), missing_gt.end());
    missing_gt.erase(std::unique(missing_gt.begin(), missing_gt.end()), missing_gt.end());
    throw MissingDataError("gt_box required but missing for " + std::to_string(missing_gt.size()) + " image(s)",
                           missing_gt);
  }
  require_keys(store, needed);

  std::vector<std::vector<detail::EpisodeOutcome>> outcomes(cells, std::vector<detail::EpisodeOutcome>(methods.size()));
  parallel_for(cells, cfg.threads, [&](std::size_t cell) {
    for (std::size_t m = 0; m < methods.size(); ++m)
      outcomes[cell][m] = detail::evaluate_method(manifest, store, episodes[cell], methods[m], cfg);
  });

  RunReport report;
  std::size_t nonconverged = 0;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    for (std::size_t s = 0; s < cfg.support_sizes.size(); ++s) {
      for (std::size_t r = 0; r < cfg.runs; ++r) {
        const auto& o = outcomes[s * cfg.runs + r][m];
        if (!o.kmeans_converged) ++nonconverged;
        report.rows.push_back({cfg.dataset, std::string(to_string(cfg.setting)), methods[m].name,
                               cfg.support_sizes[s], seeds[s * cfg.runs + r], o.accuracy});
      }
    }
  }
  for (const auto& id : fallbacks) report.warnings.push_back("no derived box for '" + id + "', using full image");
  report.metadata = {{"command", "run"}, {"config", cfg.to_json()}, {"kmeans_nonconverged", nonconverged},
                     {"full_image_fallbacks", fallbacks.size()}};
  return report;
}

// ---------------------------------------------------------------------------
// Inference-time fusion

struct FuseEvalConfig {
  std::string dataset = "dataset";
  /// Training recipe; automatic masks with the three-crop ladder by default.
  std::string train_method = "salient-multiple";
  BoxSource crop_source = BoxSource::salient;
  FusionConfig fusion;
  std::size_t runs = 1000;
  std::uint64_t seed = 0;
  std::size_t ways = 5;
  std::size_t n_support = 5;
  std::size_t n_test = 100;
  TrainConfig train;
  std::size_t threads = 0;

  nlohmann::json to_json() const {
    return {{"dataset", dataset},
            {"train_method", train_method},
            {"crop_source", to_string(crop_source)},
            {"threshold", fusion.threshold},
            {"crop_ladder", fusion.crop_ladder},
            {"include_original", fusion.include_original},
            {"runs", runs},
            {"seed", seed},
            {"ways", ways},
            {"n_support", n_support},
            {"n_test", n_test},
            {"run_seed_derivation", "derive_seed(seed, run_index)"},
            {"train", train_config_to_json(train)}};
  }
};

/// Baseline and fused accuracy on the same heads and episodes, one row each per run.
inline RunReport fuse_eval(const DatasetManifest& manifest, const FeatureStore& store, const FuseEvalConfig& cfg) {
  if (cfg.runs == 0) throw ValidationError("runs must be positive");
  cfg.fusion.validate();
  cfg.train.validate();
  const auto method = parse_method(cfg.train_method);

  BenchmarkConfig bench;
  bench.ways = cfg.ways;
  bench.n_test = cfg.n_test;
  bench.setting = Setting::inductive;

  std::vector<Episode> episodes(cfg.runs);
  std::vector<std::uint64_t> seeds(cfg.runs);
  std::vector<FeatureKey> needed;
  std::set<std::string> fallbacks;
  for (std::size_t r = 0; r < cfg.runs; ++r) {
    seeds[r] = detail::run_seed(cfg.seed, r);
    episodes[r] = sample_episode(manifest, bench.episode(cfg.n_support, seeds[r]));
    for (const auto& it : episodes[r].support) {
      std::vector<std::string> fb;
      for (auto& k : training_keys(detail::record(manifest, it.image_id), method, &fb)) needed.push_back(std::move(k));
      fallbacks.insert(fb.begin(), fb.end());
    }
    for (const auto& it : episodes[r].test) {
      const auto& rec = detail::record(manifest, it.image_id);
      needed.push_back(full_key(it.image_id));
      if (rec.box(cfg.crop_source) || cfg.crop_source == BoxSource::gt)
        for (auto& k : context_keys(rec, cfg.crop_source, cfg.fusion.crop_ladder)) needed.push_back(std::move(k));
    }
  }
  require_keys(store, needed);

  struct RunOut {
    double baseline = 0.0;
    double fused = 0.0;
    std::vector<AuditRow> audit;
    std::size_t fell_back = 0;
  };
  std::vector<RunOut> outs(cfg.runs);
  parallel_for(cfg.runs, cfg.threads, [&](std::size_t r) {
    const auto& ep = episodes[r];
    TrainingSet data;
    data.ways = ep.classes.size();
    for (const auto& s : ep.support)
      for (const auto& k : training_keys(detail::record(manifest, s.image_id), method)) data.add(store.lookup(k), s.label);
    const auto head = train_head(data, cfg.train).head;
    std::size_t base_ok = 0, fused_ok = 0;
    auto& out = outs[r];
    for (const auto& t : ep.test) {
      const auto& rec = detail::record(manifest, t.image_id);
      const Vector full = store.lookup(full_key(t.image_id));
      std::vector<Vector> crops;
      if (rec.box(cfg.crop_source))
        for (const auto& k : context_keys(rec, cfg.crop_source, cfg.fusion.crop_ladder)) crops.push_back(store.lookup(k));
      const auto base = predict(head, full);
      const auto fused = fused_predict(head, full, crops, cfg.fusion);
      if (fused.fell_back) ++out.fell_back;
      base_ok += base.label == t.label;
      fused_ok += fused.label == t.label;
      out.audit.push_back({t.image_id, fused.full_confidence, provenance_name(fused), ep.classes[fused.label],
                           fused.label == t.label});
    }
    out.baseline = static_cast<double>(base_ok) / static_cast<double>(ep.test.size());
    out.fused = static_cast<double>(fused_ok) / static_cast<double>(ep.test.size());
  });

  RunReport report;
  std::map<std::string, std::size_t> provenance;
  std::size_t fell_back = 0;
  for (std::size_t r = 0; r < cfg.runs; ++r)
    report.rows.push_back({cfg.dataset, "inductive", "baseline", cfg.n_support, seeds[r], outs[r].baseline});
  for (std::size_t r = 0; r < cfg.runs; ++r) {
    report.rows.push_back({cfg.dataset, "inductive", "fused", cfg.n_support, seeds[r], outs[r].fused});
    fell_back += outs[r].fell_back;
    for (auto& a : outs[r].audit) {
      ++provenance[a.provenance];
      report.audit.push_back(std::move(a));
    }
  }
  for (const auto& id : fallbacks) report.warnings.push_back("no derived box for '" + id + "', using full image");
  if (fell_back > 0)
    report.warnings.push_back(std::to_string(fell_back) + " low-confidence test item(s) had no crops; kept original");
  report.metadata = {{"command", "fuse"}, {"config", cfg.to_json()}, {"provenance_counts", provenance},
                     {"no_crop_fallbacks", fell_back}};
  return report;
}

// ---------------------------------------------------------------------------
// Latent analysis

struct AnalyzeConfig {
  std::vector<double> lambdas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::size_t per_class = 100;
  std::uint64_t seed = 0;
  BoxSource source = BoxSource::gt;
  /// Context level of the "cropped" points in the scatter export.
  double scatter_lambda = 0.0;
  bool normalize_features = false;

  nlohmann::json to_json() const {
    return {{"lambdas", lambdas},
            {"per_class", per_class},
            {"seed", seed},
            {"source", to_string(source)},
            {"scatter_lambda", scatter_lambda},
            {"normalize_features", normalize_features},
            {"variance", "mean over classes of mean squared distance to class centroid"},
            {"pca", "top-2 eigenvectors of population covariance of uncropped features; "
                    "largest-magnitude component positive"}};
  }
};

struct ScatterRow {
  double x = 0.0;
  double y = 0.0;
  std::string class_label;
  bool cropped = false;
};

struct AnalysisResult {
  VarianceCurve curve;
  PcaBasis basis;
  std::vector<ScatterRow> scatter;
  nlohmann::json metadata;
};

inline AnalysisResult analyze(const DatasetManifest& manifest, const FeatureStore& store, const AnalyzeConfig& cfg) {
  if (cfg.lambdas.empty()) throw ValidationError("empty lambda grid");
  if (cfg.per_class == 0) throw ValidationError("per_class must be positive");
  for (double l : cfg.lambdas) ContextFraction{l};
  ContextFraction{cfg.scatter_lambda};

  Rng rng(cfg.seed);
  std::vector<std::string> classes;
  std::vector<std::vector<const ImageRecord*>> chosen;
  for (const auto& c : manifest.classes) {
    std::vector<const ImageRecord*> recs;
    for (const auto& r : manifest.images)
      if (r.class_label == c && r.box(cfg.source)) recs.push_back(&r);
    if (recs.empty()) continue;
    rng.shuffle(recs);
    if (recs.size() > cfg.per_class) recs.resize(cfg.per_class);
    classes.push_back(c);
    chosen.push_back(std::move(recs));
  }
  if (classes.empty()) throw MissingDataError("no images with a " + std::string(to_string(cfg.source)) + " box");

  std::vector<double> grid = cfg.lambdas;
  grid.push_back(cfg.scatter_lambda);
  std::vector<FeatureKey> needed;
  for (const auto& recs : chosen)
    for (const auto* r : recs) {
      needed.push_back(full_key(r->image_id));
      for (auto& k : context_keys(*r, cfg.source, grid)) needed.push_back(std::move(k));
    }
  require_keys(store, needed);

  auto feature = [&](const FeatureKey& k) {
    Vector v = store.lookup(k);
    return cfg.normalize_features ? normalize(v) : v;
  };

  GroupedFeatures reference(classes.size());
  std::vector<GroupedFeatures> by_lambda(cfg.lambdas.size(), GroupedFeatures(classes.size()));
  GroupedFeatures scatter_cropped(classes.size());
  for (std::size_t c = 0; c < classes.size(); ++c) {
    for (const auto* r : chosen[c]) {
      reference[c].push_back(feature(full_key(r->image_id)));
      const auto keys = context_keys(*r, cfg.source, grid);
      for (std::size_t k = 0; k < cfg.lambdas.size(); ++k) by_lambda[k][c].push_back(feature(keys[k]));
      scatter_cropped[c].push_back(feature(keys.back()));
    }
  }

  AnalysisResult res;
  res.curve = variance_curve(cfg.lambdas, by_lambda, reference);
  std::vector<Vector> all_ref;
  for (const auto& cls : reference) all_ref.insert(all_ref.end(), cls.begin(), cls.end());
  res.basis = pca_fit(all_ref);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    for (std::size_t i = 0; i < reference[c].size(); ++i) {
      const auto a = pca_project(res.basis, reference[c][i]);
      res.scatter.push_back({a.x(), a.y(), classes[c], false});
      const auto b = pca_project(res.basis, scatter_cropped[c][i]);
      res.scatter.push_back({b.x(), b.y(), classes[c], true});
    }
  }
  res.metadata = {{"command", "analyze"},
                  {"config", cfg.to_json()},
                  {"classes", classes},
                  {"explained_variance", {res.basis.explained1, res.basis.explained2}},
                  {"total_variance", res.basis.total_variance}};
  return res;
}

inline constexpr std::string_view kVarianceCsvHeader = "lambda,variance,centroid_distance";
inline constexpr std::string_view kScatterCsvHeader = "x,y,class,cropped_flag";

inline void write_variance_csv(const VarianceCurve& curve, std::ostream& out) {
  out << kVarianceCsvHeader << '\n';
  for (const auto& p : curve)
    out << detail::format_real(p.lambda) << ',' << detail::format_real(p.variance) << ','
        << detail::format_real(p.centroid_distance) << '\n';
}

inline void write_scatter_csv(const std::vector<ScatterRow>& rows, std::ostream& out) {
  out << kScatterCsvHeader << '\n';
  for (const auto& r : rows)
    out << detail::format_real(r.x) << ',' << detail::format_real(r.y) << ',' << detail::csv_field(r.class_label)
        << ',' << (r.cropped ? 1 : 0) << '\n';
}

}  // namespace objcrop
