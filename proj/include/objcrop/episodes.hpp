#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "objcrop/datamodel.hpp"
#include "objcrop/error.hpp"
#include "objcrop/rng.hpp"

namespace objcrop {

enum class Setting { inductive, transductive };

inline std::string_view to_string(Setting s) { return s == Setting::inductive ? "inductive" : "transductive"; }

inline Setting parse_setting(std::string_view s) {
  if (s == "inductive") return Setting::inductive;
  if (s == "transductive") return Setting::transductive;
  throw ValidationError("setting must be 'inductive' or 'transductive', got '" + std::string(s) + "'");
}

struct EpisodeConfig {
  std::size_t ways = 5;
  std::size_t n_support = 5;
  std::size_t n_query = 0;
  std::size_t n_test = 100;
  std::uint64_t seed = 0;
  Setting setting = Setting::inductive;

  void validate() const {
    if (ways < 2) throw ValidationError("episode needs at least 2 ways");
    if (n_support < ways || n_support % ways != 0)
      throw ValidationError("support size " + std::to_string(n_support) + " must be a positive multiple of ways (" +
                            std::to_string(ways) + ")");
    if (n_query % ways != 0) throw ValidationError("query size must be a multiple of ways");
    if (n_test % ways != 0) throw ValidationError("test size must be a multiple of ways");
    if (setting == Setting::inductive && n_query != 0)
      throw ValidationError("inductive episodes have no query set");
  }
};

struct LabeledItem {
  std::string image_id;
  std::size_t label = 0;  // index into Episode::classes

  bool operator==(const LabeledItem&) const = default;
};

/// One few-shot task. Query labels are kept only for scoring pseudolabels.
struct Episode {
  std::vector<std::string> classes;
  std::vector<LabeledItem> support;
  std::vector<LabeledItem> query;
  std::vector<LabeledItem> test;

  bool operator==(const Episode&) const = default;
};

/**
 * Class-balanced episode, a pure function of (manifest, config).
 *
 * Random draws happen in a fixed order: the w classes, then one shuffle per
 * class whose prefix is cut into support, query and test. Growing n_s or
 * n_t therefore extends the earlier splits without reshuffling them.
 */
inline Episode sample_episode(const DatasetManifest& manifest, const EpisodeConfig& config) {
  config.validate();
  if (manifest.classes.size() < config.ways)
    throw ValidationError("manifest has " + std::to_string(manifest.classes.size()) + " classes, episode needs " +
                          std::to_string(config.ways));
  Rng rng(config.seed);

  std::vector<std::size_t> order(manifest.classes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  order.resize(config.ways);
  std::sort(order.begin(), order.end());

  Episode ep;
  for (auto c : order) ep.classes.push_back(manifest.classes[c]);

  const std::size_t per_s = config.n_support / config.ways;
  const std::size_t per_q = config.n_query / config.ways;
  const std::size_t per_t = config.n_test / config.ways;
  const std::size_t need = per_s + per_q + per_t;

  for (std::size_t label = 0; label < ep.classes.size(); ++label) {
    std::vector<std::string> ids;
    for (const auto& r : manifest.images)
      if (r.class_label == ep.classes[label]) ids.push_back(r.image_id);
    if (ids.size() < need)
      throw ValidationError("class '" + ep.classes[label] + "' has " + std::to_string(ids.size()) +
                            " images, episode needs " + std::to_string(need));
    rng.shuffle(ids);
    std::size_t k = 0;
    for (std::size_t i = 0; i < per_s; ++i) ep.support.push_back({ids[k++], label});
    for (std::size_t i = 0; i < per_q; ++i) ep.query.push_back({ids[k++], label});
    for (std::size_t i = 0; i < per_t; ++i) ep.test.push_back({ids[k++], label});
  }
  return ep;
}

inline nlohmann::json episode_to_json(const Episode& ep) {
  auto items = [&](const std::vector<LabeledItem>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& it : v) a.push_back({{"image_id", it.image_id}, {"label", ep.classes[it.label]}});
    return a;
  };
  return {{"classes", ep.classes}, {"support", items(ep.support)}, {"query", items(ep.query)},
          {"test", items(ep.test)}};
}

}  // namespace objcrop
