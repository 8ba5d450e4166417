#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
//
// A Tape records one forward pass. Parameters are borrowed from a
// ParameterSet (never copied); backward() writes their gradients into a
// Gradients buffer aligned with the set. One tape per sample and thread.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hemo/common.hpp"
#include "hemo/tensor.hpp"

namespace hemo::ag {

struct Parameter {
  std::string name;
  Matrix value;
};

class ParameterSet {
 public:
  /// Registers a new tensor; names are unique.
  std::size_t add(std::string name, Matrix init);

  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const;

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Matrix& value(std::string_view name) { return params_[index(name)].value; }
  const Matrix& value(std::string_view name) const { return params_[index(name)].value; }

  /// Indices of parameters whose name starts with any of the prefixes.
  std::vector<std::size_t> with_prefix(std::initializer_list<std::string_view> prefixes) const;
  std::vector<std::size_t> all() const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> lookup_;
};

class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParameterSet& params);

  Matrix& operator[](std::size_t i) { return grads_[i]; }
  const Matrix& operator[](std::size_t i) const { return grads_[i]; }
  std::size_t size() const { return grads_.size(); }

  void zero();
  void add_scaled(const Gradients& other, double scale);

 private:
  std::vector<Matrix> grads_;
};

enum class Activation { relu, tanh, linear };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation a);

class Tape;

/// Handle to a recorded value.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  explicit Tape(const ParameterSet* params = nullptr) : params_(params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Same parameter requested twice yields the same node.
  Var param(std::size_t index);
  Var param(std::string_view name);

  /// Records an op output. `backward` runs only if the output needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var record(Matrix value, std::span<const Var> parents, Backward backward);

  const Matrix& value(int id) const;
  const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Backpropagates from a 1x1 output, adding `seed * d(out)/d(param)` into grads.
  void backward(Var out, Gradients& grads, double seed = 1.0);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* borrowed = nullptr;
    Matrix grad;
    Backward backward;
    int param = -1;
    bool requires_grad = false;
    bool has_grad = false;
  };

  const ParameterSet* params_;
  std::deque<Node> nodes_;
  std::map<std::size_t, int> param_nodes_;
};

// ---- ops ------------------------------------------------------------------

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_bt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a 1 x c row to every row of a.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
/// Multiplies by a 1x1 variable.
Var scale_by(Var a, Var s);
Var activate(Var a, Activation act);
/// x * w + b, with w [in x out] and b [1 x out].
Var affine(Var x, Var w, Var b);
/// Row-wise softmax over the first `valid_cols` columns; the rest become 0.
Var softmax_rows(Var a, int valid_cols = -1);
/// Mean of the first `valid_rows` rows, as 1 x c.
Var mean_rows(Var a, int valid_rows = -1);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, int start, int count);
/// Row-major reinterpretation; element count must match.
Var reshape(Var a, int rows, int cols);
Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);
Var gather_rows(Var table, std::span<const int> ids);
/// x is [blocks*n x h]; each n-row block is left-multiplied by `op` (n x n).
/// `op` must outlive the tape.
Var block_propagate(Var x, const Matrix& op);
/// Graph attention over n-row blocks: row i of a block attends to the rows j
/// with mask(i,j) != 0, with logits leaky_relu(src_i + dst_j).
Var graph_attention(Var h, Var src, Var dst, const Matrix& mask, double negative_slope = 0.2);
Var dropout(Var a, double rate, Rng& rng);
/// x is [r x n*period]; column c becomes (x - mean[c % period]) * scale[c % period],
/// with mean and scale [1 x period].
Var standardize_channels(Var x, Var mean, Var scale);
/// Sum of all elements as 1x1.
Var sum(Var a);

}  // namespace hemo::ag
