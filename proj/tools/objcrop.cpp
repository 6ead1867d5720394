// objcrop: command-line driver for crop planning, feature import,
// benchmark sweeps, inference-time fusion, latent analysis and the
// synthetic feature generator.
//
// Exit codes: 0 success, 1 validation error, 2 missing data, 3 internal error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "json_config.hpp"
#include "objcrop/objcrop.hpp"

namespace fs = std::filesystem;
using namespace objcrop;

namespace {

enum ExitCode : int { kOk = 0, kValidation = 1, kMissing = 2, kInternal = 3 };

void require_flag(const std::string& value, const char* name) {
  if (value.empty()) throw ValidationError(std::string("missing required option --") + name);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

fs::path prepare_dir(const std::string& dir) {
  require_flag(dir, "out-dir");
  fs::create_directories(dir);
  return fs::path(dir);
}

void write_metadata(const fs::path& path, const nlohmann::json& meta) { open_out(path) << meta.dump(2) << '\n'; }

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

std::vector<AugmentMode> parse_modes(const std::vector<std::string>& names) {
  std::vector<AugmentMode> out;
  for (const auto& n : names) out.push_back(parse_augment_mode(n));
  return out;
}

std::vector<BoxSource> parse_sources(const std::vector<std::string>& names) {
  std::vector<BoxSource> out;
  for (const auto& n : names) out.push_back(parse_box_source(n));
  return out;
}

std::vector<CropRequest> read_crop_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingDataError("cannot open crop manifest '" + path + "'");
  std::vector<CropRequest> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(parse_crop_request(line));
  return out;
}

void write_crop_manifest(const std::vector<CropRequest>& requests, const std::string& path) {
  auto out = open_out(path);
  for (const auto& r : requests) out << crop_request_line(r) << '\n';
}

// Reads either an FSCACHE1 file or JSON lines {image_id, crop, vector}.
FeatureStore read_feature_input(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw MissingDataError("cannot open feature input '" + path + "'");
  char head[8] = {};
  probe.read(head, sizeof head);
  if (probe.gcount() == 8 && std::string_view(head, 8) == kCacheMagic) return store_read(path);
  std::ifstream in(path);
  FeatureStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto req = parse_crop_request(line);
    nlohmann::json j = nlohmann::json::parse(line);
    if (!j.contains("vector") || !j["vector"].is_array())
      throw ValidationError(path + ":" + std::to_string(lineno) + ": missing 'vector' array");
    store.insert(req.key, j["vector"].get<std::vector<float>>());
  }
  return store;
}

void check_key_against_manifest(const DatasetManifest& m, const FeatureKey& key) {
  const auto* rec = m.find(key.image_id);
  if (!rec) throw ValidationError("feature key " + to_string(key) + " references an unknown image");
  if (!key.is_full() && !std::get<BoundingBox>(key.crop).fits(rec->width, rec->height))
    throw ValidationError("feature key " + to_string(key) + " lies outside its image");
}

void bind_train_flags(CLI::App* sub, TrainConfig& t) {
  sub->add_option("--lr", t.learning_rate, "Probe learning rate")->capture_default_str();
  sub->add_option("--epochs", t.epochs, "Full-batch gradient steps")->capture_default_str();
  sub->add_option("--l2", t.l2_weight, "L2 weight on W")->capture_default_str();
  sub->add_flag("!--no-normalize", t.normalize_features, "Train on raw (unnormalized) features");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object-centric crop augmentation toolkit for few-shot evaluation"};
  app.config_formatter(std::make_shared<cli::JsonConfig>());
  app.set_config("--config", "", "JSON config file; command-line flags take precedence");
  app.require_subcommand(1);

  // plan-crops ---------------------------------------------------------------
  std::string manifest_path, cache_path, out_path, out_dir, crops_path;
  std::vector<std::string> source_names{"gt"}, mode_names{"default"};
  std::vector<double> plan_lambdas;
  auto* plan = app.add_subcommand("plan-crops", "Write the crop manifest an extractor must embed");
  plan->add_option("--manifest", manifest_path, "Dataset manifest (JSON)");
  plan->add_option("--sources", source_names, "Box sources: gt, sam, salient")->delimiter(',')->capture_default_str();
  plan->add_option("--modes", mode_names, "Augment modes: default, replace, minimal, multiple, padN, ctxP")
      ->delimiter(',')
      ->capture_default_str();
  plan->add_option("--lambdas", plan_lambdas, "Extra context fractions (test-time ladder, analysis grid)")
      ->delimiter(',');
  plan->add_option("--out", out_path, "Output crop manifest (JSON lines)");

  // import-features ----------------------------------------------------------
  std::vector<std::string> inputs;
  auto* import = app.add_subcommand("import-features", "Validate and merge feature caches or JSON-lines vectors");
  import->add_option("--manifest", manifest_path, "Dataset manifest (JSON)");
  import->add_option("--crops", crops_path, "Crop manifest whose every request must be covered");
  import->add_option("--out", out_path, "Merged FSCACHE1 output");
  import->add_option("inputs", inputs, "FSCACHE1 files or .jsonl {image_id, crop, vector}");

  // run ----------------------------------------------------------------------
  BenchmarkConfig bench;
  bench.runs = 100;
  std::string setting_name = "inductive";
  auto* run = app.add_subcommand("run", "Few-shot benchmark sweep over support sizes and methods");
  run->add_option("--manifest", manifest_path, "Dataset manifest (JSON)");
  run->add_option("--cache", cache_path, "Feature cache (FSCACHE1)");
  run->add_option("--out-dir", out_dir, "Directory for runs.csv, summary.csv, metadata.json");
  run->add_option("--dataset", bench.dataset, "Dataset name for the report")->capture_default_str();
  run->add_option("--methods", bench.methods, "baseline, gt, sam, salient or <source>-<mode>")
      ->delimiter(',')
      ->capture_default_str();
  run->add_option("--support-sizes", bench.support_sizes, "Labelled samples per episode (sweep)")
      ->delimiter(',')
      ->capture_default_str();
  run->add_option("--setting", setting_name, "inductive or transductive")->capture_default_str();
  run->add_option("--runs", bench.runs, "Episodes per sweep point")->capture_default_str();
  run->add_option("--seed", bench.seed, "Base seed")->capture_default_str();
  run->add_option("--ways", bench.ways, "Classes per episode")->capture_default_str();
  run->add_option("--n-test", bench.n_test, "Test items per episode")->capture_default_str();
  run->add_option("--pool", bench.transductive_pool, "Labelled + unlabelled samples (transductive)")
      ->capture_default_str();
  run->add_option("--beta", bench.kmeans.beta, "Soft K-means inverse temperature")->capture_default_str();
  run->add_option("--kmeans-iters", bench.kmeans.max_iters, "Soft K-means iteration cap")->capture_default_str();
  run->add_option("--kmeans-tol", bench.kmeans.tol, "Soft K-means displacement tolerance")->capture_default_str();
  run->add_option("--threads", bench.threads, "Worker threads (0 = all cores)")->capture_default_str();
  bind_train_flags(run, bench.train);

  // fuse ---------------------------------------------------------------------
  FuseEvalConfig fuse_cfg;
  std::string crop_source_name = "salient";
  bool crops_only = false;
  auto* fuse = app.add_subcommand("fuse", "Inference-time crop fusion versus full-image prediction");
  fuse->add_option("--manifest", manifest_path, "Dataset manifest (JSON)");
  fuse->add_option("--cache", cache_path, "Feature cache (FSCACHE1)");
  fuse->add_option("--out-dir", out_dir, "Directory for runs.csv, summary.csv, audit.csv, metadata.json");
  fuse->add_option("--dataset", fuse_cfg.dataset, "Dataset name for the report")->capture_default_str();
  fuse->add_option("--threshold", fuse_cfg.fusion.threshold, "Confidence above which crops are ignored")
      ->capture_default_str();
  fuse->add_option("--ladder", fuse_cfg.fusion.crop_ladder, "Context fractions of test-time crops")
      ->delimiter(',')
      ->capture_default_str();
  fuse->add_flag("--crops-only", crops_only, "Exclude the full image from the below-threshold maximum");
  fuse->add_option("--train-method", fuse_cfg.train_method, "Training recipe")->capture_default_str();
  fuse->add_option("--crop-source", crop_source_name, "Box source for test-time crops")->capture_default_str();
  fuse->add_option("--runs", fuse_cfg.runs, "Episodes")->capture_default_str();
  fuse->add_option("--seed", fuse_cfg.seed, "Base seed")->capture_default_str();
  fuse->add_option("--ways", fuse_cfg.ways, "Classes per episode")->capture_default_str();
  fuse->add_option("--n-support", fuse_cfg.n_support, "Support size")->capture_default_str();
  fuse->add_option("--n-test", fuse_cfg.n_test, "Test items per episode")->capture_default_str();
  fuse->add_option("--threads", fuse_cfg.threads, "Worker threads (0 = all cores)")->capture_default_str();
  bind_train_flags(fuse, fuse_cfg.train);

  // analyze ------------------------------------------------------------------
  AnalyzeConfig an_cfg;
  std::string an_source = "gt";
  auto* analyze_cmd = app.add_subcommand("analyze", "Class variance / centroid shift curve and PCA scatter");
  analyze_cmd->add_option("--manifest", manifest_path, "Dataset manifest (JSON)");
  analyze_cmd->add_option("--cache", cache_path, "Feature cache (FSCACHE1)");
  analyze_cmd->add_option("--out-dir", out_dir, "Directory for variance.csv, scatter.csv, metadata.json");
  analyze_cmd->add_option("--lambdas", an_cfg.lambdas, "Context grid")->delimiter(',')->capture_default_str();
  analyze_cmd->add_option("--per-class", an_cfg.per_class, "Samples per class")->capture_default_str();
  analyze_cmd->add_option("--seed", an_cfg.seed, "Sampling seed")->capture_default_str();
  analyze_cmd->add_option("--source", an_source, "Box source")->capture_default_str();
  analyze_cmd->add_option("--scatter-lambda", an_cfg.scatter_lambda, "Context of cropped scatter points")
      ->capture_default_str();
  analyze_cmd->add_flag("--normalize", an_cfg.normalize_features, "Unit-normalize features first");

  // synth --------------------------------------------------------------------
  SynthConfig syn;
  std::string synth_preset = "default";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic manifest and feature cache");
  synth->add_option("--out-dir", out_dir, "Directory for manifest.json, features.bin, crops.jsonl");
  synth->add_option("--preset", synth_preset, "Starting parameters; explicit flags override them")
      ->check(CLI::IsMember({"default", "background-heavy", "low-noise"}))
      ->capture_default_str();
  synth->add_option("--classes", syn.classes, "Number of classes")->capture_default_str();
  synth->add_option("--dim", syn.dimension, "Embedding dimension")->capture_default_str();
  synth->add_option("--images-per-class", syn.images_per_class, "Images per class")->capture_default_str();
  synth->add_option("--foreground", syn.foreground, "Norm of class foreground f_c")->capture_default_str();
  synth->add_option("--background-mean", syn.background_mean, "Norm of shared background m")->capture_default_str();
  synth->add_option("--background-spread", syn.background_spread, "Scale of per-image background g_i")
      ->capture_default_str();
  synth->add_option("--class-context", syn.class_context, "Scale of class context h_c")->capture_default_str();
  synth->add_option("--noise", syn.noise, "Scale of per-crop noise")->capture_default_str();
  synth->add_option("--seed", syn.seed, "Generator seed")->capture_default_str();
  synth->add_option("--crops", crops_path, "Embed exactly this crop manifest instead of the default coverage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }

  try {
    if (*plan) {
      require_flag(manifest_path, "manifest");
      require_flag(out_path, "out");
      const auto manifest = load_manifest(manifest_path);
      const auto result =
          plan_crops(manifest, CropPlanConfig{parse_sources(source_names), parse_modes(mode_names), plan_lambdas});
      for (const auto& f : result.fallbacks) std::cerr << "warning: no derived box for " << f << ", full image used\n";
      write_crop_manifest(result.requests, out_path);
      std::cout << result.requests.size() << " crop requests written to " << out_path << '\n';
    } else if (*import) {
      require_flag(manifest_path, "manifest");
      require_flag(out_path, "out");
      if (inputs.empty()) throw ValidationError("no feature inputs given");
      const auto manifest = load_manifest(manifest_path);
      FeatureStore merged;
      for (const auto& in : inputs) {
        const auto part = read_feature_input(in);
        for (const auto& [key, vec] : part.entries()) {
          check_key_against_manifest(manifest, key);
          if (merged.contains(key) && merged.entries().at(key) != vec)
            throw ValidationError("conflicting vectors for " + to_string(key));
          merged.insert(key, vec);
        }
      }
      if (!crops_path.empty()) {
        std::vector<FeatureKey> keys;
        for (const auto& r : read_crop_manifest(crops_path)) keys.push_back(r.key);
        require_keys(merged, keys);
      }
      store_write(merged, out_path);
      std::cout << merged.size() << " records (d=" << merged.dimension() << ") written to " << out_path << '\n';
    } else if (*run) {
      require_flag(manifest_path, "manifest");
      require_flag(cache_path, "cache");
      const auto dir = prepare_dir(out_dir);
      bench.setting = parse_setting(setting_name);
      const auto manifest = load_manifest(manifest_path);
      const auto store = store_read(cache_path);
      const auto report = run_benchmark(manifest, store, bench);
      print_warnings(report.warnings);
      auto runs_out = open_out(dir / "runs.csv");
      write_runs_csv(report, runs_out);
      auto summary_out = open_out(dir / "summary.csv");
      write_summary_csv(report, summary_out);
      write_metadata(dir / "metadata.json", report.metadata);
      write_summary_csv(report, std::cout);
    } else if (*fuse) {
      require_flag(manifest_path, "manifest");
      require_flag(cache_path, "cache");
      const auto dir = prepare_dir(out_dir);
      fuse_cfg.crop_source = parse_box_source(crop_source_name);
      fuse_cfg.fusion.include_original = !crops_only;
      const auto manifest = load_manifest(manifest_path);
      const auto store = store_read(cache_path);
      const auto report = fuse_eval(manifest, store, fuse_cfg);
      print_warnings(report.warnings);
      auto runs_out = open_out(dir / "runs.csv");
      write_runs_csv(report, runs_out);
      auto summary_out = open_out(dir / "summary.csv");
      write_summary_csv(report, summary_out);
      auto audit_out = open_out(dir / "audit.csv");
      write_audit_csv(report, audit_out);
      write_metadata(dir / "metadata.json", report.metadata);
      write_summary_csv(report, std::cout);
    } else if (*analyze_cmd) {
      require_flag(manifest_path, "manifest");
      require_flag(cache_path, "cache");
      const auto dir = prepare_dir(out_dir);
      an_cfg.source = parse_box_source(an_source);
      const auto manifest = load_manifest(manifest_path);
      const auto store = store_read(cache_path);
      const auto result = analyze(manifest, store, an_cfg);
      auto var_out = open_out(dir / "variance.csv");
      write_variance_csv(result.curve, var_out);
      auto scatter_out = open_out(dir / "scatter.csv");
      write_scatter_csv(result.scatter, scatter_out);
      write_metadata(dir / "metadata.json", result.metadata);
      write_variance_csv(result.curve, std::cout);
    } else if (*synth) {
      const auto dir = prepare_dir(out_dir);
      if (synth_preset != "default") {
        // Preset first, then any explicitly given flag on top.
        const auto preset =
            synth_preset == "background-heavy" ? SynthConfig::background_heavy() : SynthConfig::low_noise();
        if (synth->get_option("--foreground")->count() == 0) syn.foreground = preset.foreground;
        if (synth->get_option("--background-spread")->count() == 0) syn.background_spread = preset.background_spread;
        if (synth->get_option("--class-context")->count() == 0) syn.class_context = preset.class_context;
        if (synth->get_option("--noise")->count() == 0) syn.noise = preset.noise;
      }
      const SynthDataset data(syn);
      std::vector<CropRequest> requests;
      if (!crops_path.empty()) {
        requests = read_crop_manifest(crops_path);
      } else {
        CropPlanConfig pc;
        pc.sources = {BoxSource::gt};
        pc.modes = {AugmentMode::gt_default(), AugmentMode::replace(), AugmentMode::minimal(), AugmentMode::multiple()};
        pc.lambdas = AnalyzeConfig{}.lambdas;
        requests = plan_crops(data.manifest(), pc).requests;
      }
      std::vector<FeatureKey> keys;
      for (const auto& r : requests) keys.push_back(r.key);
      const auto store = data.embed_all(keys);
      save_manifest(data.manifest(), (dir / "manifest.json").string());
      store_write(store, (dir / "features.bin").string());
      write_crop_manifest(requests, (dir / "crops.jsonl").string());
      write_metadata(dir / "synth.json", {{"command", "synth"}, {"config", synth_config_to_json(syn)}});
      std::cout << data.manifest().images.size() << " images, " << store.size() << " features written to "
                << dir.string() << '\n';
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const CodecError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == CodecError::Kind::io ? kMissing : kValidation;
  } catch (const MissingDataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissing;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kOk;
}
