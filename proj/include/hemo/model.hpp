#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hemo/encoders.hpp"
#include "hemo/graph_topology.hpp"
#include "hemo/streams.hpp"

namespace hemo {

struct TrimodalConfig {
  SpatialEncoderConfig spatial;
  TemporalEncoderConfig keypoint_temporal;
  TemporalEncoderConfig visual_temporal;
  TextEncoderConfig text;
  int visual_width = 768;
  int branch_dim = 256;
  ag::Activation fusion_activation = ag::Activation::relu;

  static constexpr int class_count = 2;
  int fused_dim() const { return 3 * branch_dim; }

  void validate() const;
  /// Canonical description of every architecture field.
  std::string describe() const;
  /// Hex digest of describe(); stored in checkpoints.
  std::string fingerprint() const;
};

/// Model inputs of one sample after sampling and feature construction.
struct SampleFeatures {
  /// [T x n_g*F] per keypoint group (skeleton, face, hands).
  std::array<Matrix, 3> keypoint_groups;
  /// [Tv x visual_width]
  Matrix visual;
  TextInput text;
};

enum class Branch { keypoint = 0, visual = 1, text = 2 };
inline constexpr std::array<Branch, 3> kAllBranches{Branch::keypoint, Branch::visual, Branch::text};

std::string_view to_string(Branch b);
Branch parse_branch(std::string_view name);

/// What a forward pass produces logits for: the fused model or one branch
/// through its temporary pretraining head.
enum class Target { full, keypoint, visual, text };

Target target_for(Branch b);

class TrimodalModel {
 public:
  TrimodalModel(TrimodalConfig cfg, std::uint64_t seed, const Topology& topology = default_topology());

  const TrimodalConfig& config() const { return cfg_; }
  ag::ParameterSet& parameters() { return params_; }
  const ag::ParameterSet& parameters() const { return params_; }
  const GroupGraph& graph(KeypointGroup g) const { return graphs_[static_cast<int>(g)]; }

  /// [1 x branch_dim]
  ag::Var keypoint_branch(ag::Tape& tape, const std::array<Matrix, 3>& groups, Rng* rng = nullptr) const;
  ag::Var visual_branch(ag::Tape& tape, const Matrix& visual, Rng* rng = nullptr) const;
  ag::Var text_branch(ag::Tape& tape, const TextInput& text, Rng* rng = nullptr) const;
  /// x = [k v t]; fused = x + act(x W + b); logits = fused H + c.
  ag::Var fuse_and_classify(ag::Tape& tape, ag::Var keypoint, ag::Var visual, ag::Var text) const;

  ag::Var forward_full(ag::Tape& tape, const SampleFeatures& sample, Rng* rng = nullptr) const;
  /// Branch vector through the branch's pretraining head, [1 x 2].
  ag::Var branch_logits(ag::Tape& tape, Branch branch, const SampleFeatures& sample, Rng* rng = nullptr) const;
  ag::Var forward(ag::Tape& tape, Target target, const SampleFeatures& sample, Rng* rng = nullptr) const;

  /// Inference without gradients.
  std::array<double, 2> logits(const SampleFeatures& sample, Target target = Target::full) const;

  /// Backbone parameters of a branch (no pretraining head).
  std::vector<std::size_t> branch_parameters(Branch b) const;
  std::vector<std::size_t> head_parameters(Branch b) const;
  /// Parameters trained in the joint stage: all but the pretraining heads and
  /// the input standardization tensors.
  std::vector<std::size_t> full_parameters() const;
  /// Fixed per-channel standardization of a branch's input ("<branch>.input_norm.*").
  /// Keypoint channels are the F per-node features; visual channels are the
  /// frame dimensions. The text branch has none.
  std::vector<std::size_t> normalization_parameters(Branch b) const;
  void set_input_normalization(Branch b, const Matrix& mean, const Matrix& scale);
  /// Everything a checkpoint of `target` has to carry.
  std::vector<std::size_t> checkpoint_parameters(Target target) const;
  std::vector<std::size_t> trainable_parameters(Target target) const;

 private:
  TrimodalConfig cfg_;
  ag::ParameterSet params_;
  std::array<GroupGraph, 3> graphs_;
  std::vector<SpatialEncoder> spatial_;
  std::vector<TemporalEncoder> keypoint_temporal_;
  std::unique_ptr<TemporalEncoder> visual_temporal_;
  std::unique_ptr<TextEncoder> text_encoder_;
};

enum class Stage { pretrain_keypoint, pretrain_visual, pretrain_text, finetune_full };

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view name);
Stage pretrain_stage(Branch b);

/// Named-tensor container with a config fingerprint header.
struct Checkpoint {
  std::string fingerprint;
  Stage stage = Stage::finetune_full;
  int epoch = -1;
  double validation_accuracy = 0.0;
  std::vector<std::pair<std::string, Matrix>> tensors;
};

Checkpoint make_checkpoint(const TrimodalModel& model, Stage stage, int epoch, double validation_accuracy,
                           const std::vector<std::size_t>& parameter_indices);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies tensors whose names start with one of `prefixes` (all tensors when
/// empty) into the model. Returns the names written. A fingerprint mismatch
/// is an error unless `allow_mismatch` is set.
std::vector<std::string> apply_checkpoint(TrimodalModel& model, const Checkpoint& ckpt,
                                          const std::vector<std::string>& prefixes = {},
                                          bool allow_mismatch = false);

/// Branch backbone prefix ("keypoint.", "visual.", "text.").
std::string branch_prefix(Branch b);

}  // namespace hemo
