#pragma once
// Encoder-kind x offsets x training-strategy comparison tables.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hemo/datamodel.hpp"
#include "hemo/encoders.hpp"
#include "hemo/inference.hpp"
#include "hemo/training.hpp"

namespace hemo {

/// keypoint: stage-1 keypoint branch alone on gold records.
/// direct: full model from initialization on gold records.
/// weak_sup: full model from initialization on gold plus pseudo-labeled pool.
/// weak_sup+offsets: weak_sup with offset features forced on.
/// pretrain+weak_sup: stage-1 on gold for every branch, then stage 2 on gold plus pool.
enum class Strategy { keypoint, direct, weak_sup, weak_sup_offsets, pretrain_weak_sup };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);
/// Whether the strategy trains on pseudo-labeled pool records.
bool uses_pool(Strategy s);

struct AblationGrid {
  std::vector<SpatialKind> kinds{SpatialKind::mlp};
  std::vector<bool> offsets{true};
  std::vector<Strategy> strategies{Strategy::keypoint};
  std::vector<std::uint64_t> seeds{1, 2, 3};

  void validate() const;
};

/// Everything a single ablation run needs besides the grid cell.
struct ExperimentSettings {
  TrimodalConfig model;
  FeatureConfig features;
  StageConfig pretrain;
  StageConfig finetune;
  FocalLossParams loss;
  VoteConfig votes;
  double val_fraction = 0.25;
  /// Share of the training split held out as the unlabeled pool when a
  /// strategy in the grid needs one. Every row then trains on the same gold part.
  double pool_fraction = 0.4;
  double pseudo_noise = 0.356;
  int workers = 1;
};

struct AblationRow {
  SpatialKind kind = SpatialKind::mlp;
  bool offsets = true;
  Strategy strategy = Strategy::keypoint;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;

  double mean() const;
  /// Sample standard deviation; 0 with fewer than two runs.
  double spread() const;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  /// False when the budget ran out before every (row, seed) run finished.
  bool complete = true;
  double wall_seconds = 0.0;
};

/// Called after every finished run.
using AblationProgress = std::function<void(const AblationRow& row, std::uint64_t seed, double accuracy)>;

/// Runs every grid cell for every seed on splits of `labeled`. Each seed draws
/// its own train/val (and gold/pool) split, initialization, and pseudo-labels.
/// budget_seconds <= 0 means unlimited; otherwise no new run starts once it is spent.
AblationTable run_ablation(const AblationGrid& grid, const DatasetManifest& labeled, const ExperimentSettings& settings,
                           double budget_seconds = 0.0, const AblationProgress& progress = {});

/// kind,offsets,strategy,runs,mean_accuracy,std_accuracy,accuracies
void write_ablation_csv(const std::filesystem::path& path, const AblationTable& table);
std::string format_ablation(const AblationTable& table);

}  // namespace hemo
