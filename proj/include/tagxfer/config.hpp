#pragma once

// Experiment configuration shared by every CLI command.
//
// {
//   "paths":       {"source_train", "source_val", "target_train", "target_val",
//                   "target_test", "embeddings", "checkpoint", "output_dir"},
//   "model":       ModelConfig keys,
//   "train":       TrainConfig keys,
//   "synth":       SynthSpec keys,
//   "diagnostics": {"topk", "histogram_bins", "snapshot_epochs"},
//   "min_count":   words seen fewer times map to <unk>
// }
//
// Every section and key is optional; unknown keys are rejected. Relative paths
// in a file resolve against the directory holding that file.

#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tagxfer/errors.hpp"
#include "tagxfer/io.hpp"
#include "tagxfer/model.hpp"
#include "tagxfer/synth.hpp"
#include "tagxfer/training.hpp"

namespace tagxfer {

// Environment variable that overrides the output directory of every command.
inline constexpr const char* kOutputDirEnv = "TAGXFER_OUT";

struct PathsConfig {
  std::string source_train;
  std::string source_val;
  std::string target_train;
  std::string target_val;
  std::string target_test;
  std::string embeddings;
  std::string checkpoint;
  std::string output_dir = "out";

  // Inputs only; the output directory is created on demand.
  std::map<std::string, std::string*> inputs() {
    return {{"source_train", &source_train}, {"source_val", &source_val},
            {"target_train", &target_train}, {"target_val", &target_val},
            {"target_test", &target_test},   {"embeddings", &embeddings},
            {"checkpoint", &checkpoint}};
  }
};

struct DiagnosticsConfig {
  std::size_t topk = 10;
  std::size_t histogram_bins = 20;
};

struct ExperimentConfig {
  PathsConfig paths;
  ModelConfig model;
  TrainConfig train;
  SynthSpec synth;
  DiagnosticsConfig diagnostics;
  std::size_t min_count = 1;

  // Throws ConfigError naming the first referenced input that is missing.
  void check_paths() {
    for (const auto& [key, path] : paths.inputs()) {
      if (!path->empty() && !std::filesystem::exists(*path)) {
        throw ConfigError("paths." + key + " = '" + *path + "' does not exist");
      }
    }
  }

  void validate() const {
    train.validate();
    synth.validate();
    if (diagnostics.topk == 0) throw ConfigError("diagnostics.topk must be at least 1");
    if (diagnostics.histogram_bins == 0) throw ConfigError("diagnostics.histogram_bins must be at least 1");
    if (min_count == 0) throw ConfigError("min_count must be at least 1");
  }

  nlohmann::json to_json() {
    nlohmann::json p = nlohmann::json::object();
    for (const auto& [key, path] : paths.inputs()) {
      if (!path->empty()) p[key] = *path;
    }
    p["output_dir"] = paths.output_dir;
    return {{"paths", p},
            {"model", model.to_json()},
            {"train", train.to_json()},
            {"synth", synth.to_json()},
            {"diagnostics", {{"topk", diagnostics.topk}, {"histogram_bins", diagnostics.histogram_bins}}},
            {"min_count", min_count}};
  }

  // Applies the keys present in `j` on top of the current values.
  void merge_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    if (j.contains("diagnostics") && j["diagnostics"].contains("snapshot_epochs") && j.contains("train") &&
        j["train"].contains("snapshot_epochs")) {
      throw ConfigError("snapshot_epochs given in both train and diagnostics");
    }
    for (const auto& [section, value] : j.items()) {
      if (section != "min_count" && !value.is_object()) {
        throw ConfigError("config section '" + section + "' must be an object");
      }
      if (section == "paths") {
        auto inputs = paths.inputs();
        for (const auto& [key, v] : value.items()) {
          std::string* target = nullptr;
          if (key == "output_dir") {
            target = &paths.output_dir;
          } else if (auto it = inputs.find(key); it != inputs.end()) {
            target = it->second;
          } else {
            throw ConfigError("unknown paths key '" + key + "'");
          }
          std::filesystem::path raw = v.get<std::string>();
          *target = raw.is_relative() && !base_dir.empty() ? (base_dir / raw).lexically_normal().string()
                                                           : raw.string();
        }
      } else if (section == "model") {
        nlohmann::json merged = model.to_json();
        for (const auto& [key, v] : value.items()) merged[key] = v;
        model = ModelConfig::from_json(merged);
      } else if (section == "train") {
        train = TrainConfig::from_json(value, train);
      } else if (section == "synth") {
        synth = SynthSpec::from_json(value, synth);
      } else if (section == "diagnostics") {
        for (const auto& [key, v] : value.items()) {
          if (key == "topk") {
            diagnostics.topk = v.get<std::size_t>();
          } else if (key == "histogram_bins") {
            diagnostics.histogram_bins = v.get<std::size_t>();
          } else if (key == "snapshot_epochs") {
            // Alias for train.snapshot_epochs.
            train.snapshot_epochs = v.get<std::vector<std::size_t>>();
          } else {
            throw ConfigError("unknown diagnostics key '" + key + "'");
          }
        }
      } else if (section == "min_count") {
        min_count = value.get<std::size_t>();
      } else {
        throw ConfigError("unknown config section '" + section + "'");
      }
    }
  }

  // `check_inputs` is false only for commands that read no inputs.
  static ExperimentConfig load(const std::filesystem::path& file, bool check_inputs = true) {
    if (!std::filesystem::exists(file)) throw ConfigError("config file '" + file.string() + "' does not exist");
    ExperimentConfig c;
    try {
      c.merge_json(read_json(file), file.parent_path());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file '" + file.string() + "': " + e.what());
    }
    if (check_inputs) c.check_paths();
    return c;
  }
};

// Output directory after applying the environment override; flags passed on
// the command line win over both.
inline std::string resolve_output_dir(const std::string& configured, const std::optional<std::string>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return configured;
}

}  // namespace tagxfer
