#include "hemo/encoders.hpp"

#include <cmath>

namespace hemo {

using ag::Var;

SpatialKind parse_spatial_kind(std::string_view name) {
  if (name == "mlp") return SpatialKind::mlp;
  if (name == "gcn") return SpatialKind::gcn;
  if (name == "gat") return SpatialKind::gat;
  if (name == "gin") return SpatialKind::gin;
  throw ValidationError("unknown spatial encoder kind '" + std::string(name) + "'");
}

std::string_view to_string(SpatialKind k) {
  switch (k) {
    case SpatialKind::mlp: return "mlp";
    case SpatialKind::gcn: return "gcn";
    case SpatialKind::gat: return "gat";
    case SpatialKind::gin: return "gin";
  }
  return "?";
}

void SpatialEncoderConfig::validate() const {
  if (node_feature_dim <= 0 || hidden_dim <= 0 || layer_count <= 0 || frame_embedding_dim <= 0) {
    throw ValidationError("spatial encoder dimensions must be positive");
  }
  if (kind == SpatialKind::gat) {
    if (attention_heads < 1) throw ValidationError("gat needs at least one attention head");
    if (hidden_dim % attention_heads != 0) throw ValidationError("gat hidden_dim must be divisible by attention_heads");
  }
}

void TemporalEncoderConfig::validate() const {
  if (model_dim <= 0 || layer_count < 0 || head_count <= 0 || feedforward_dim <= 0 || max_sequence_length <= 0) {
    throw ValidationError("temporal encoder dimensions must be positive");
  }
  if (model_dim % head_count != 0) throw ValidationError("model_dim must be divisible by head_count");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ValidationError("dropout_rate must lie in [0,1)");
}

void TextEncoderConfig::validate() const {
  if (vocabulary_size <= 0 || token_embedding_dim <= 0 || layer_count < 0 || head_count <= 0 ||
      feedforward_dim <= 0 || max_tokens <= 0 || embedding_input_dim < 0) {
    throw ValidationError("text encoder dimensions must be positive");
  }
  if (token_embedding_dim % head_count != 0) {
    throw ValidationError("token_embedding_dim must be divisible by head_count");
  }
}

Matrix glorot(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

namespace {

std::size_t add_weight(ag::ParameterSet& params, const std::string& name, int rows, int cols, std::uint64_t seed) {
  return params.add(name, glorot(rows, cols, derive_seed(seed, name)));
}

std::size_t add_zeros(ag::ParameterSet& params, const std::string& name, int rows, int cols) {
  return params.add(name, Matrix::Zero(rows, cols));
}

Var linear(ag::Tape& tape, Var x, const std::string& name) {
  return ag::affine(x, tape.param(name + ".weight"), tape.param(name + ".bias"));
}

void add_linear(ag::ParameterSet& params, const std::string& name, int in, int out, std::uint64_t seed) {
  add_weight(params, name + ".weight", in, out, seed);
  add_zeros(params, name + ".bias", 1, out);
}

}  // namespace

// ---- spatial ----------------------------------------------------------------

SpatialEncoder::SpatialEncoder(std::string prefix, SpatialEncoderConfig cfg, int node_count,
                               ag::ParameterSet& params, std::uint64_t seed)
    : prefix_(std::move(prefix)), cfg_(cfg), nodes_(node_count) {
  cfg_.validate();
  if (nodes_ <= 0) throw ValidationError("spatial encoder needs at least one node");
  const int f = cfg_.node_feature_dim;
  const int h = cfg_.hidden_dim;
  const int e = cfg_.frame_embedding_dim;

  switch (cfg_.kind) {
    case SpatialKind::mlp:
      for (int l = 0; l < cfg_.layer_count; ++l) {
        const int in = l == 0 ? nodes_ * f : h;
        const int out = l == cfg_.layer_count - 1 ? e : h;
        add_linear(params, prefix_ + ".l" + std::to_string(l), in, out, seed);
      }
      return;
    case SpatialKind::gcn:
      for (int l = 0; l < cfg_.layer_count; ++l) add_linear(params, prefix_ + ".l" + std::to_string(l), l ? h : f, h, seed);
      break;
    case SpatialKind::gat:
      for (int l = 0; l < cfg_.layer_count; ++l) {
        const std::string name = prefix_ + ".l" + std::to_string(l);
        add_weight(params, name + ".weight", l ? h : f, h, seed);
        const int head_dim = h / cfg_.attention_heads;
        for (int k = 0; k < cfg_.attention_heads; ++k) {
          add_weight(params, name + ".att_src" + std::to_string(k), head_dim, 1, seed);
          add_weight(params, name + ".att_dst" + std::to_string(k), head_dim, 1, seed);
        }
        add_zeros(params, name + ".bias", 1, h);
      }
      break;
    case SpatialKind::gin:
      for (int l = 0; l < cfg_.layer_count; ++l) {
        const std::string name = prefix_ + ".l" + std::to_string(l);
        if (cfg_.epsilon_learnable) add_zeros(params, name + ".eps", 1, 1);
        add_linear(params, name + ".mlp0", l ? h : f, h, seed);
        add_linear(params, name + ".mlp1", h, h, seed);
      }
      break;
  }
  add_linear(params, prefix_ + ".flatten", nodes_ * h, e, seed);
}

Var SpatialEncoder::forward(ag::Tape& tape, Var frames, const GroupGraph* graph) const {
  if (frames.cols() != static_cast<Eigen::Index>(nodes_) * cfg_.node_feature_dim) {
    throw ValidationError("spatial encoder " + prefix_ + ": expected " + std::to_string(nodes_) + "x" +
                          std::to_string(cfg_.node_feature_dim) + " features per frame, got " +
                          std::to_string(frames.cols()));
  }
  if (cfg_.kind == SpatialKind::mlp) return forward_mlp(tape, frames);
  if (graph == nullptr) throw ValidationError("spatial encoder " + prefix_ + ": graph kinds need an adjacency");
  if (graph->node_count != nodes_) throw ValidationError("spatial encoder " + prefix_ + ": graph size mismatch");
  return forward_graph(tape, frames, *graph);
}

Var SpatialEncoder::forward_mlp(ag::Tape& tape, Var frames) const {
  Var x = frames;
  for (int l = 0; l < cfg_.layer_count; ++l) {
    x = ag::activate(linear(tape, x, prefix_ + ".l" + std::to_string(l)), cfg_.activation);
  }
  return x;
}

Var SpatialEncoder::forward_graph(ag::Tape& tape, Var frames, const GroupGraph& graph) const {
  const int frame_count = static_cast<int>(frames.rows());
  // Node rows: [T*n x F].
  Var x = ag::reshape(frames, frame_count * nodes_, cfg_.node_feature_dim);
  const int h = cfg_.hidden_dim;

  for (int l = 0; l < cfg_.layer_count; ++l) {
    const std::string name = prefix_ + ".l" + std::to_string(l);
    switch (cfg_.kind) {
      case SpatialKind::gcn: {
        Var xw = ag::matmul(x, tape.param(name + ".weight"));
        x = ag::activate(ag::add_row(ag::block_propagate(xw, graph.normalized), tape.param(name + ".bias")),
                         cfg_.activation);
        break;
      }
      case SpatialKind::gat: {
        Var hw = ag::matmul(x, tape.param(name + ".weight"));
        const int head_dim = h / cfg_.attention_heads;
        std::vector<Var> heads;
        for (int k = 0; k < cfg_.attention_heads; ++k) {
          Var hk = cfg_.attention_heads == 1 ? hw : ag::slice_cols(hw, k * head_dim, head_dim);
          Var src = ag::matmul(hk, tape.param(name + ".att_src" + std::to_string(k)));
          Var dst = ag::matmul(hk, tape.param(name + ".att_dst" + std::to_string(k)));
          heads.push_back(ag::graph_attention(hk, src, dst, graph.neighbors));
        }
        Var merged = heads.size() == 1 ? heads[0] : ag::concat_cols(heads);
        x = ag::activate(ag::add_row(merged, tape.param(name + ".bias")), cfg_.activation);
        break;
      }
      case SpatialKind::gin: {
        Var agg = ag::block_propagate(x, graph.adjacency);
        Var self = cfg_.epsilon_learnable ? ag::add(x, ag::scale_by(x, tape.param(name + ".eps"))) : x;
        Var z = ag::add(agg, self);
        z = ag::activate(linear(tape, z, name + ".mlp0"), cfg_.activation);
        z = linear(tape, z, name + ".mlp1");
        x = ag::activate(z, cfg_.activation);
        break;
      }
      case SpatialKind::mlp:
        break;
    }
  }
  Var flat = ag::reshape(x, frame_count, nodes_ * h);
  return linear(tape, flat, prefix_ + ".flatten");
}

// ---- transformer ------------------------------------------------------------

Matrix sinusoidal_encoding(int length, int dim) {
  Matrix pe(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return pe;
}

TransformerStack::TransformerStack(std::string prefix, int model_dim, int layer_count, int head_count,
                                   int feedforward_dim, double dropout_rate, ag::ParameterSet& params,
                                   std::uint64_t seed)
    : prefix_(std::move(prefix)), model_dim_(model_dim), layers_(layer_count), heads_(head_count),
      dropout_(dropout_rate) {
  const int d = model_dim_;
  for (int l = 0; l < layers_; ++l) {
    const std::string name = prefix_ + ".layer" + std::to_string(l);
    for (const char* ln : {".ln1", ".ln2"}) {
      params.add(name + ln + ".gamma", Matrix::Ones(1, d));
      add_zeros(params, name + ln + ".beta", 1, d);
    }
    for (const char* proj : {".wq", ".wk", ".wv", ".wo"}) add_linear(params, name + proj, d, d, seed);
    add_linear(params, name + ".ff1", d, feedforward_dim, seed);
    add_linear(params, name + ".ff2", feedforward_dim, d, seed);
  }
}

Var TransformerStack::forward(ag::Tape& tape, Var x, int valid_length, Rng* rng) const {
  const int length = static_cast<int>(x.rows());
  const int valid = valid_length < 0 ? length : valid_length;
  if (valid < 1 || valid > length) throw ValidationError("valid_length out of range");
  const int head_dim = model_dim_ / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  for (int l = 0; l < layers_; ++l) {
    const std::string name = prefix_ + ".layer" + std::to_string(l);
    Var h = ag::layer_norm(x, tape.param(name + ".ln1.gamma"), tape.param(name + ".ln1.beta"));
    Var q = linear(tape, h, name + ".wq");
    Var k = linear(tape, h, name + ".wk");
    Var v = linear(tape, h, name + ".wv");
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(heads_));
    for (int i = 0; i < heads_; ++i) {
      Var qi = heads_ == 1 ? q : ag::slice_cols(q, i * head_dim, head_dim);
      Var ki = heads_ == 1 ? k : ag::slice_cols(k, i * head_dim, head_dim);
      Var vi = heads_ == 1 ? v : ag::slice_cols(v, i * head_dim, head_dim);
      Var weights = ag::softmax_rows(ag::scale(ag::matmul_bt(qi, ki), inv_sqrt), valid);
      heads.push_back(ag::matmul(weights, vi));
    }
    Var attn = linear(tape, heads_ == 1 ? heads[0] : ag::concat_cols(heads), name + ".wo");
    if (rng) attn = ag::dropout(attn, dropout_, *rng);
    x = ag::add(x, attn);

    Var h2 = ag::layer_norm(x, tape.param(name + ".ln2.gamma"), tape.param(name + ".ln2.beta"));
    Var ff = linear(tape, ag::activate(linear(tape, h2, name + ".ff1"), ag::Activation::relu), name + ".ff2");
    if (rng) ff = ag::dropout(ff, dropout_, *rng);
    x = ag::add(x, ff);
  }
  return x;
}

TemporalEncoder::TemporalEncoder(std::string prefix, TemporalEncoderConfig cfg, int input_dim,
                                 ag::ParameterSet& params, std::uint64_t seed)
    : prefix_(std::move(prefix)), cfg_((cfg.validate(), cfg)), input_dim_(input_dim),
      stack_(prefix_ + ".stack", cfg_.model_dim, cfg_.layer_count, cfg_.head_count, cfg_.feedforward_dim,
             cfg_.dropout_rate, params, seed),
      positions_(sinusoidal_encoding(cfg_.max_sequence_length, cfg_.model_dim)) {
  if (input_dim_ <= 0) throw ValidationError("temporal encoder input_dim must be positive");
  add_linear(params, prefix_ + ".input", input_dim_, cfg_.model_dim, seed);
}

Var TemporalEncoder::encode(ag::Tape& tape, Var sequence, int valid_length, Rng* rng) const {
  const int length = static_cast<int>(sequence.rows());
  if (length < 1) throw ValidationError("temporal encoder " + prefix_ + ": empty sequence");
  if (length > cfg_.max_sequence_length) {
    throw ValidationError("temporal encoder " + prefix_ + ": sequence length " + std::to_string(length) +
                          " exceeds max_sequence_length " + std::to_string(cfg_.max_sequence_length));
  }
  if (sequence.cols() != input_dim_) {
    throw ValidationError("temporal encoder " + prefix_ + ": expected width " + std::to_string(input_dim_) +
                          ", got " + std::to_string(sequence.cols()));
  }
  Var x = linear(tape, sequence, prefix_ + ".input");
  x = ag::add(x, tape.constant(positions_.topRows(length)));
  return stack_.forward(tape, x, valid_length, rng);
}

Var TemporalEncoder::forward(ag::Tape& tape, Var sequence, int valid_length, Rng* rng) const {
  return ag::mean_rows(encode(tape, sequence, valid_length, rng), valid_length);
}

TextEncoder::TextEncoder(std::string prefix, TextEncoderConfig cfg, ag::ParameterSet& params, std::uint64_t seed)
    : prefix_(std::move(prefix)), cfg_((cfg.validate(), cfg)),
      stack_(prefix_ + ".stack", cfg_.token_embedding_dim, cfg_.layer_count, cfg_.head_count, cfg_.feedforward_dim,
             0.0, params, seed),
      positions_(sinusoidal_encoding(cfg_.max_tokens, cfg_.token_embedding_dim)) {
  add_weight(params, prefix_ + ".embedding", cfg_.vocabulary_size, cfg_.token_embedding_dim, seed);
}

Var TextEncoder::forward(ag::Tape& tape, std::span<const int> tokens, Rng* rng) const {
  if (tokens.empty()) throw ValidationError("text encoder: empty token list");
  for (int id : tokens) {
    if (id < 0 || id >= cfg_.vocabulary_size) {
      throw ValidationError("text encoder: token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(cfg_.vocabulary_size));
    }
  }
  const auto used = tokens.first(std::min<std::size_t>(tokens.size(), static_cast<std::size_t>(cfg_.max_tokens)));
  Var x = ag::gather_rows(tape.param(prefix_ + ".embedding"), used);
  x = ag::add(x, tape.constant(positions_.topRows(static_cast<Eigen::Index>(used.size()))));
  return ag::mean_rows(stack_.forward(tape, x, -1, rng));
}

// ---- gradient check -----------------------------------------------------------

// Tensors whose gradient vanishes identically (a key bias under softmax shift
// invariance, say) would otherwise report rounding noise over rounding noise.
constexpr double kGradientNormFloor = 1e-4;

GradientCheckResult gradient_check(ag::ParameterSet& params, const std::function<Var(ag::Tape&)>& loss,
                                   double step) {
  ag::Gradients analytic(params);
  {
    ag::Tape tape(&params);
    tape.backward(loss(tape), analytic);
  }
  auto evaluate = [&] {
    ag::Tape tape(&params);
    return loss(tape).value()(0, 0);
  };

  GradientCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& value = params[p].value;
    Matrix numeric(value.rows(), value.cols());
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + step;
      const double up = evaluate();
      value.data()[i] = saved - step;
      const double down = evaluate();
      value.data()[i] = saved;
      numeric.data()[i] = (up - down) / (2.0 * step);
    }
    const double denom = std::max(analytic[p].norm() + numeric.norm(), kGradientNormFloor);
    const double err = (analytic[p] - numeric).norm() / denom;
    result.per_parameter.emplace_back(params[p].name, err);
    if (err >= result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_parameter = params[p].name;
    }
  }
  return result;
}

}  // namespace hemo
