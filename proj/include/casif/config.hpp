#pragma once

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "casif/corpus.hpp"
#include "casif/trainer.hpp"

namespace casif {

/// Effective settings of a run. Read from a flat JSON object whose keys are
/// listed in README.md; unknown keys are rejected.
///
/// The optional "preset" key ("yoochoose" | "diginetica") is applied first
/// and sets the split window, learning rate and column layout of that log
/// style; explicit keys override it.
struct Config {
  PreprocessConfig preprocess;
  TrainConfig train;
  std::size_t threads = 1;

  /// Throws ConfigError on unknown keys, wrong types or invalid values.
  static Config from_json(const nlohmann::json& j);
  static Config load(const std::filesystem::path& path);
  /// Applies the keys present in j on top of this config.
  void merge(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

}  // namespace casif
