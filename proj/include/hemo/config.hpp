#pragma once
// Declarative run configuration (YAML) shared by every subcommand.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "hemo/ablation.hpp"
#include "hemo/inference.hpp"
#include "hemo/model.hpp"
#include "hemo/pipeline.hpp"
#include "hemo/synthgen.hpp"
#include "hemo/training.hpp"

namespace hemo {

struct WeakSupervisionConfig {
  /// Carve an unlabeled pool out of the training split and merge its
  /// pseudo-labels into stage 2.
  bool enabled = true;
  /// Flip rate of simulated pseudo-labels when no response files are given.
  double noise_rate = 0.356;
  /// Responses with |confidence_win - confidence_loss| at or below this are excluded.
  double margin_threshold = 0.0;
  /// Share of the training split held out as the unlabeled pool.
  double pool_fraction = 0.4;
};

/// Every module config plus paths and the global seed. Default-constructed
/// values are the desk profile shipped as configs/default.yaml.
struct RunConfig {
  std::uint64_t seed = 1;
  int workers = 1;
  /// Default parent of every subcommand's output directory.
  std::filesystem::path run_dir = "runs";
  /// Synthetic data lands here; its manifest.jsonl is the default input.
  std::filesystem::path data_dir = "runs/data";
  double val_fraction = 0.25;

  SynthConfig synth;
  FeatureConfig features;
  TrimodalConfig model;
  FocalLossParams loss;
  /// Stage 1. The stage and seed fields are set per use.
  StageConfig pretrain;
  /// Stage 2. learning_rate mirrors pretrain.learning_rate.
  StageConfig finetune;
  VoteConfig votes;
  WeakSupervisionConfig weak_supervision;
  AblationGrid ablation;
  double ablation_budget_seconds = 0.0;

  RunConfig();

  /// Cross-field consistency on top of each module's own checks.
  void validate() const;

  /// Model config with the node feature width taken from the feature settings.
  TrimodalConfig model_config() const;
  /// Sub-seeds hashed from the global seed.
  std::uint64_t seed_for(std::string_view site) const;
  StageConfig stage_config(Stage stage) const;
  SynthConfig synth_config() const;
  VoteConfig vote_config() const;
  ExperimentSettings experiment() const;
  std::filesystem::path manifest_path() const { return data_dir / "manifest.jsonl"; }
};

/// Deterministic partition of one labeled manifest used by every stage.
struct DataPartition {
  DatasetManifest gold;
  DatasetManifest validation;
  /// Empty unless weak supervision is enabled.
  DatasetManifest pool;
};

/// Stratified validation split, then (with weak supervision enabled) a
/// stratified pool carved from the rest. Seeds hash from the global seed.
DataPartition partition_dataset(const DatasetManifest& labeled, const RunConfig& config);

/// Unknown keys are errors so that typos do not silently fall back to defaults.
RunConfig parse_run_config(std::string_view yaml_text, std::string_view origin = "<memory>");
RunConfig load_run_config(const std::filesystem::path& path);
/// Complete YAML echo of every field; parse_run_config(to_yaml(c)) reproduces c.
std::string to_yaml(const RunConfig& config);

}  // namespace hemo
