#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hemo/inference.hpp"
#include "hemo/model.hpp"
#include "hemo/pipeline.hpp"

namespace hemo {

struct FocalLossParams {
  double gamma = 2.0;
  double alpha_win = 0.25;
  double alpha_loss = 0.75;
  double alpha(Label l) const { return l == Label::win ? alpha_win : alpha_loss; }
  void validate() const;
};

/// -alpha_t (1 - p_t)^gamma log p_t over the two-class softmax.
double focal_loss(const std::array<double, 2>& logits, Label label, const FocalLossParams& params);
/// Same as a tape op on [1 x 2] logits; returns 1x1.
ag::Var focal_loss(ag::Var logits, Label label, const FocalLossParams& params);

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay over a subset of a parameter set.
class AdamW {
 public:
  AdamW(ag::ParameterSet& params, std::vector<std::size_t> indices, AdamWConfig cfg);
  void step(const ag::Gradients& grads);
  int steps() const { return steps_; }

 private:
  ag::ParameterSet& params_;
  std::vector<std::size_t> indices_;
  AdamWConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  int steps_ = 0;
};

struct StageConfig {
  Stage stage = Stage::pretrain_keypoint;
  /// Stage-1 rate; the fine-tuning stage runs at learning_rate * finetune_lr_scale.
  double learning_rate = 1e-3;
  std::optional<double> learning_rate_override;
  int epochs = 15;
  int batch_size = 8;
  std::uint64_t seed = 0;
  int resample_views_per_epoch = 1;
  double finetune_lr_scale = 0.1;
  double weight_decay = 0.01;
  /// Loss weight of pseudo-labeled records.
  double pseudo_weight = 1.0;
  /// Voting views used for validation accuracy during checkpoint selection.
  int eval_views = 1;

  double effective_learning_rate() const;
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
  double validation_loss = 0.0;
  std::optional<double> gold_accuracy;
  std::optional<double> pseudo_accuracy;
};

struct TrainReport {
  Stage stage = Stage::pretrain_keypoint;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_validation_accuracy = 0.0;
  std::string best_checkpoint_path;
  double wall_seconds = 0.0;
  bool error = false;
  std::string error_message;
};

/// One JSON object per epoch, then a summary object.
void write_report(const std::filesystem::path& path, const TrainReport& report);
TrainReport read_report(const std::filesystem::path& path);
std::string format_report(const TrainReport& report);

struct TrainOptions {
  int workers = 1;
  /// When set, the best checkpoint and the report are written here.
  std::filesystem::path out_dir;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  TrainReport report;
  std::optional<Checkpoint> checkpoint;
};

/// Trains the parameters behind `target` and leaves the model at the best
/// validation epoch (ties go to the lower validation loss).
TrainResult train_model(TrimodalModel& model, Target target, const SampleStore& train, const SampleStore& validation,
                        const FeatureConfig& features, const StageConfig& stage, const FocalLossParams& loss,
                        const TrainOptions& options = {});

/// Fits the per-channel input standardization of the keypoint and/or visual
/// branch (as `target` requires) on one sampled view per training record:
/// mean and 1/std per channel, with constant channels left at scale 1.
void fit_input_normalization(TrimodalModel& model, Target target, const SampleStore& train,
                             const FeatureConfig& features, std::uint64_t seed, int workers = 1);

/// Stage 1: one branch and its temporary head on labeled data.
TrainResult pretrain_branch(TrimodalModel& model, Branch branch, const SampleStore& train,
                            const SampleStore& validation, const FeatureConfig& features, StageConfig stage,
                            const FocalLossParams& loss, const TrainOptions& options = {});

/// Stage 2: loads the given branch backbones (heads discarded; at most one per
/// branch) and trains the full model at the scaled rate on gold plus
/// pseudo-labeled records. Branches without a checkpoint keep their
/// initialization and get their input standardization fitted on `merged`.
TrainResult finetune_full(TrimodalModel& model, std::span<const Checkpoint> pretrained, const SampleStore& merged,
                          const SampleStore& validation, const FeatureConfig& features, StageConfig stage,
                          const FocalLossParams& loss, const TrainOptions& options = {});

/// Full model from its initialization at the unscaled rate.
TrainResult train_direct(TrimodalModel& model, const SampleStore& train, const SampleStore& validation,
                         const FeatureConfig& features, StageConfig stage, const FocalLossParams& loss,
                         const TrainOptions& options = {});

struct GradientCheckEntry {
  std::string block;
  double max_relative_error = 0.0;
  std::string worst_parameter;
};

struct GradientCheckSuite {
  std::vector<GradientCheckEntry> entries;
  double max_relative_error() const;
  bool passed(double tolerance = 1e-4) const { return max_relative_error() <= tolerance; }
};

/// Finite-difference checks at tiny dimensions for every spatial kind, the
/// temporal and text encoders, fusion plus head, the full model and focal loss.
GradientCheckSuite gradient_check_suite(std::uint64_t seed = 0);
std::string format_gradient_checks(const GradientCheckSuite& suite, double tolerance = 1e-4);

}  // namespace hemo
