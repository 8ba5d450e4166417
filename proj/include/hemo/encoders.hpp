#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hemo/autograd.hpp"
#include "hemo/graph_topology.hpp"

namespace hemo {

enum class SpatialKind { mlp, gcn, gat, gin };

SpatialKind parse_spatial_kind(std::string_view name);
std::string_view to_string(SpatialKind k);

struct SpatialEncoderConfig {
  SpatialKind kind = SpatialKind::mlp;
  int node_feature_dim = 8;
  int hidden_dim = 64;
  int layer_count = 2;
  int frame_embedding_dim = 64;
  ag::Activation activation = ag::Activation::relu;
  int attention_heads = 2;  // gat only
  bool epsilon_learnable = true;  // gin only

  void validate() const;
};

struct TemporalEncoderConfig {
  int model_dim = 128;
  int layer_count = 2;
  int head_count = 4;
  int feedforward_dim = 256;
  int max_sequence_length = 4000;
  double dropout_rate = 0.0;

  void validate() const;
};

struct TextEncoderConfig {
  int vocabulary_size = 1024;
  int token_embedding_dim = 64;
  int layer_count = 1;
  int head_count = 4;
  int feedforward_dim = 128;
  int max_tokens = 256;
  /// When positive, the text branch consumes precomputed embeddings of this width.
  int embedding_input_dim = 0;

  void validate() const;
};

/// Glorot-uniform initializer, seeded per parameter name.
Matrix glorot(int rows, int cols, std::uint64_t seed);

/// Per-frame spatial encoder over one keypoint group.
///
/// Input rows are frames, each holding n*F node features (node-major).
/// Output is [T x frame_embedding_dim].
class SpatialEncoder {
 public:
  SpatialEncoder(std::string prefix, SpatialEncoderConfig cfg, int node_count, ag::ParameterSet& params,
                 std::uint64_t seed);

  ag::Var forward(ag::Tape& tape, ag::Var frames, const GroupGraph* graph) const;

  const SpatialEncoderConfig& config() const { return cfg_; }
  int node_count() const { return nodes_; }

 private:
  ag::Var forward_mlp(ag::Tape& tape, ag::Var frames) const;
  ag::Var forward_graph(ag::Tape& tape, ag::Var frames, const GroupGraph& graph) const;

  std::string prefix_;
  SpatialEncoderConfig cfg_;
  int nodes_;
};

/// Pre-norm transformer encoder layers shared by the temporal and text encoders.
class TransformerStack {
 public:
  TransformerStack(std::string prefix, int model_dim, int layer_count, int head_count, int feedforward_dim,
                   double dropout_rate, ag::ParameterSet& params, std::uint64_t seed);

  /// x: [T x d]. Rows at or beyond `valid_length` are padding: they are never
  /// attended to. Dropout is applied only when `rng` is non-null.
  ag::Var forward(ag::Tape& tape, ag::Var x, int valid_length, Rng* rng) const;

 private:
  std::string prefix_;
  int model_dim_;
  int layers_;
  int heads_;
  double dropout_;
};

Matrix sinusoidal_encoding(int length, int dim);

/// Projects [T x d_in] to d, adds positions, runs the stack and mean-pools.
class TemporalEncoder {
 public:
  TemporalEncoder(std::string prefix, TemporalEncoderConfig cfg, int input_dim, ag::ParameterSet& params,
                  std::uint64_t seed);

  /// [T x d] before pooling.
  ag::Var encode(ag::Tape& tape, ag::Var sequence, int valid_length = -1, Rng* rng = nullptr) const;
  /// [1 x d], mean over the valid rows.
  ag::Var forward(ag::Tape& tape, ag::Var sequence, int valid_length = -1, Rng* rng = nullptr) const;

  const TemporalEncoderConfig& config() const { return cfg_; }
  int input_dim() const { return input_dim_; }

 private:
  std::string prefix_;
  TemporalEncoderConfig cfg_;
  int input_dim_;
  TransformerStack stack_;
  Matrix positions_;
};

class TextEncoder {
 public:
  TextEncoder(std::string prefix, TextEncoderConfig cfg, ag::ParameterSet& params, std::uint64_t seed);

  /// [1 x token_embedding_dim]. Sequences longer than max_tokens are truncated.
  ag::Var forward(ag::Tape& tape, std::span<const int> tokens, Rng* rng = nullptr) const;

  const TextEncoderConfig& config() const { return cfg_; }

 private:
  std::string prefix_;
  TextEncoderConfig cfg_;
  TransformerStack stack_;
  Matrix positions_;
};

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::vector<std::pair<std::string, double>> per_parameter;
};

/// Central finite differences against the tape's analytic gradient for every
/// parameter tensor in `params`. Per tensor the error is
/// ||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-4).
GradientCheckResult gradient_check(ag::ParameterSet& params, const std::function<ag::Var(ag::Tape&)>& loss,
                                   double step = 1e-5);

}  // namespace hemo
