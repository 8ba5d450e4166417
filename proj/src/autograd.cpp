#include "hemo/autograd.hpp"

#include <cmath>
#include <limits>
#include <memory>

namespace hemo::ag {

// ---- ParameterSet / Gradients ---------------------------------------------

std::size_t ParameterSet::add(std::string name, Matrix init) {
  if (lookup_.contains(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  lookup_.emplace(name, params_.size());
  params_.push_back({std::move(name), std::move(init)});
  return params_.size() - 1;
}

std::size_t ParameterSet::index(std::string_view name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) throw ValidationError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

bool ParameterSet::contains(std::string_view name) const { return lookup_.find(name) != lookup_.end(); }

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::vector<std::size_t> ParameterSet::with_prefix(std::initializer_list<std::string_view> prefixes) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    for (auto p : prefixes) {
      if (params_[i].name.starts_with(p)) {
        out.push_back(i);
        break;
      }
    }
  }
  return out;
}

std::vector<std::size_t> ParameterSet::all() const {
  std::vector<std::size_t> out(params_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

Gradients::Gradients(const ParameterSet& params) {
  grads_.reserve(params.size());
  for (const auto& p : params) grads_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
}

void Gradients::zero() {
  for (auto& g : grads_) g.setZero();
}

void Gradients::add_scaled(const Gradients& other, double scale) {
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += scale * other.grads_[i];
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "linear") return Activation::linear;
  throw ValidationError("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::linear: return "linear";
  }
  return "?";
}

// ---- Tape -----------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(id_); }

const Matrix& Tape::value(int id) const {
  const auto& n = nodes_[static_cast<std::size_t>(id)];
  return n.borrowed ? *n.borrowed : n.value;
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(std::size_t index) {
  if (params_ == nullptr || index >= params_->size()) throw ValidationError("tape has no such parameter");
  if (auto it = param_nodes_.find(index); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.borrowed = &(*params_)[index].value;
  n.param = static_cast<int>(index);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  param_nodes_.emplace(index, id);
  return {this, id};
}

Var Tape::param(std::string_view name) {
  if (params_ == nullptr) throw ValidationError("tape has no parameter set");
  return param(params_->index(name));
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> parents, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const auto& p : parents) {
    if (p.tape() != this) throw ValidationError("mixing variables from different tapes");
    n.requires_grad = n.requires_grad || requires_grad(p.id());
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::backward(Var out, Gradients& grads, double seed) {
  if (out.tape() != this) throw ValidationError("backward on a foreign variable");
  if (out.rows() != 1 || out.cols() != 1) throw ValidationError("backward requires a 1x1 output");
  if (!requires_grad(out.id())) return;
  accumulate(out.id(), Matrix::Constant(1, 1, seed));
  for (int id = out.id(); id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) continue;
    if (n.param >= 0) {
      grads[static_cast<std::size_t>(n.param)] += n.grad;
    } else if (n.backward) {
      n.backward(*this, id);
    }
    // Intermediate gradients are no longer needed once propagated.
    if (n.param < 0) n.grad.resize(0, 0);
  }
}

// ---- ops ------------------------------------------------------------------

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ValidationError(std::string("shape mismatch: ") + what);
}

}  // namespace

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul");
  Tape& t = *a.tape();
  return t.record(a.value() * b.value(), {a, b}, [ai = a.id(), bi = b.id()](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ai)) tp.accumulate(ai, g * tp.value(bi).transpose());
    if (tp.requires_grad(bi)) tp.accumulate(bi, tp.value(ai).transpose() * g);
  });
}

Var matmul_bt(Var a, Var b) {
  require(a.cols() == b.cols(), "matmul_bt");
  Tape& t = *a.tape();
  return t.record(a.value() * b.value().transpose(), {a, b}, [ai = a.id(), bi = b.id()](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ai)) tp.accumulate(ai, g * tp.value(bi));
    if (tp.requires_grad(bi)) tp.accumulate(bi, g.transpose() * tp.value(ai));
  });
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Tape& t = *a.tape();
  return t.record(a.value() + b.value(), {a, b}, [ai = a.id(), bi = b.id()](Tape& tp, int self) {
    tp.accumulate(ai, tp.grad(self));
    tp.accumulate(bi, tp.grad(self));
  });
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  Tape& t = *a.tape();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.record(std::move(out), {a, row}, [ai = a.id(), ri = row.id()](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.accumulate(ai, g);
    if (tp.requires_grad(ri)) tp.accumulate(ri, g.colwise().sum());
  });
}

Var standardize_channels(Var x, Var mean, Var scale) {
  const auto period = mean.cols();
  require(mean.rows() == 1 && scale.rows() == 1 && scale.cols() == period && period > 0 &&
              x.cols() % period == 0,
          "standardize_channels");
  // Row-major [r x n*period] viewed as [r*n x period].
  const auto rows = x.rows() * (x.cols() / period);
  using View = Eigen::Map<const Matrix>;
  Matrix out = ((View(x.value().data(), rows, period).rowwise() - mean.value().row(0)).array().rowwise() *
                scale.value().row(0).array())
                   .matrix();
  out.resize(x.rows(), x.cols());
  Tape& t = *x.tape();
  return t.record(std::move(out), {x, mean, scale},
                  [xi = x.id(), mi = mean.id(), si = scale.id(), rows, period](Tape& tp, int self) {
                    const View g(tp.grad(self).data(), rows, period);
                    const Matrix& sv = tp.value(si);
                    if (tp.requires_grad(xi)) {
                      Matrix gx = (g.array().rowwise() * sv.row(0).array()).matrix();
                      gx.resize(tp.value(xi).rows(), tp.value(xi).cols());
                      tp.accumulate(xi, gx);
                    }
                    if (tp.requires_grad(mi)) tp.accumulate(mi, -(g.colwise().sum().array() * sv.row(0).array()).matrix());
                    if (tp.requires_grad(si)) {
                      const View xv(tp.value(xi).data(), rows, period);
                      const Matrix centered = xv.rowwise() - tp.value(mi).row(0);
                      tp.accumulate(si, g.cwiseProduct(centered).colwise().sum());
                    }
                  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  return t.record(s * a.value(), {a}, [ai = a.id(), s](Tape& tp, int self) { tp.accumulate(ai, s * tp.grad(self)); });
}

Var scale_by(Var a, Var s) {
  require(s.rows() == 1 && s.cols() == 1, "scale_by");
  Tape& t = *a.tape();
  return t.record(s.value()(0, 0) * a.value(), {a, s}, [ai = a.id(), si = s.id()](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.accumulate(ai, tp.value(si)(0, 0) * g);
    if (tp.requires_grad(si)) tp.accumulate(si, Matrix::Constant(1, 1, g.cwiseProduct(tp.value(ai)).sum()));
  });
}

Var activate(Var a, Activation act) {
  Tape& t = *a.tape();
  switch (act) {
    case Activation::linear:
      return a;
    case Activation::relu:
      return t.record(a.value().cwiseMax(0.0), {a}, [ai = a.id()](Tape& tp, int self) {
        const Matrix& x = tp.value(ai);
        tp.accumulate(ai, tp.grad(self).cwiseProduct((x.array() > 0.0).cast<double>().matrix()));
      });
    case Activation::tanh:
      return t.record(a.value().array().tanh().matrix(), {a}, [ai = a.id()](Tape& tp, int self) {
        const Matrix& y = tp.value(self);
        tp.accumulate(ai, tp.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
      });
  }
  return a;
}

Var affine(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

Var softmax_rows(Var a, int valid_cols) {
  const int cols = static_cast<int>(a.cols());
  const int valid = valid_cols < 0 ? cols : valid_cols;
  require(valid >= 1 && valid <= cols, "softmax_rows valid_cols");
  const Matrix& x = a.value();
  Matrix y = Matrix::Zero(x.rows(), cols);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    auto head = x.row(r).head(valid);
    const double m = head.maxCoeff();
    auto e = (head.array() - m).exp();
    y.row(r).head(valid) = e / e.sum();
  }
  Tape& t = *a.tape();
  return t.record(std::move(y), {a}, [ai = a.id()](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    Matrix gx = y.cwiseProduct(g.colwise() - dot);
    tp.accumulate(ai, gx);
  });
}

Var mean_rows(Var a, int valid_rows) {
  const int rows = static_cast<int>(a.rows());
  const int valid = valid_rows < 0 ? rows : valid_rows;
  require(valid >= 1 && valid <= rows, "mean_rows valid_rows");
  Matrix out = a.value().topRows(valid).colwise().mean();
  Tape& t = *a.tape();
  return t.record(std::move(out), {a}, [ai = a.id(), rows, valid](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix gx = Matrix::Zero(rows, g.cols());
    gx.topRows(valid).rowwise() = g.row(0) / static_cast<double>(valid);
    tp.accumulate(ai, gx);
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols of nothing");
  const auto rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols rows");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Tape& t = *parts[0].tape();
  return t.record(std::move(out), parts, [ids, widths](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (tp.requires_grad(ids[i])) tp.accumulate(ids[i], g.middleCols(at, widths[i]));
      at += widths[i];
    }
  });
}

Var slice_cols(Var a, int start, int count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols");
  Tape& t = *a.tape();
  return t.record(a.value().middleCols(start, count), {a},
                  [ai = a.id(), start, count, rows = a.rows(), cols = a.cols()](Tape& tp, int self) {
                    Matrix gx = Matrix::Zero(rows, cols);
                    gx.middleCols(start, count) = tp.grad(self);
                    tp.accumulate(ai, gx);
                  });
}

Var reshape(Var a, int rows, int cols) {
  require(static_cast<Eigen::Index>(rows) * cols == a.value().size(), "reshape");
  const Matrix& x = a.value();
  Matrix out = Eigen::Map<const Matrix>(x.data(), rows, cols);
  Tape& t = *a.tape();
  return t.record(std::move(out), {a}, [ai = a.id(), r = a.rows(), c = a.cols()](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.accumulate(ai, Eigen::Map<const Matrix>(g.data(), r, c));
  });
}

Var layer_norm(Var a, Var gamma, Var beta, double eps) {
  require(gamma.rows() == 1 && gamma.cols() == a.cols() && beta.rows() == 1 && beta.cols() == a.cols(),
          "layer_norm");
  const Matrix& x = a.value();
  const auto n = static_cast<double>(x.cols());
  Eigen::VectorXd mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  Eigen::VectorXd inv_std = ((centered.array().square().rowwise().sum() / n) + eps).rsqrt();
  auto xhat = std::make_shared<Matrix>(centered.array().colwise() * inv_std.array());
  Matrix out = (xhat->array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  Tape& t = *a.tape();
  return t.record(std::move(out), {a, gamma, beta},
                  [ai = a.id(), gi = gamma.id(), bi = beta.id(), xhat, inv_std, n](Tape& tp, int self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.requires_grad(gi)) tp.accumulate(gi, g.cwiseProduct(*xhat).colwise().sum());
                    if (tp.requires_grad(bi)) tp.accumulate(bi, g.colwise().sum());
                    if (tp.requires_grad(ai)) {
                      Matrix gh = g.array().rowwise() * tp.value(gi).row(0).array();
                      Eigen::VectorXd m1 = gh.rowwise().mean();
                      Eigen::VectorXd m2 = gh.cwiseProduct(*xhat).rowwise().sum() / n;
                      Matrix gx = gh.colwise() - m1;
                      gx -= (xhat->array().colwise() * m2.array()).matrix();
                      gx = (gx.array().colwise() * inv_std.array()).matrix();
                      tp.accumulate(ai, gx);
                    }
                  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const Matrix& tab = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tab.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < tab.rows(), "gather_rows id");
    out.row(static_cast<Eigen::Index>(i)) = tab.row(ids[i]);
  }
  Tape& t = *table.tape();
  return t.record(std::move(out), {table},
                  [ti = table.id(), idv = std::vector<int>(ids.begin(), ids.end()), r = tab.rows(),
                   c = tab.cols()](Tape& tp, int self) {
                    const Matrix& g = tp.grad(self);
                    Matrix gt = Matrix::Zero(r, c);
                    for (std::size_t i = 0; i < idv.size(); ++i) gt.row(idv[i]) += g.row(static_cast<Eigen::Index>(i));
                    tp.accumulate(ti, gt);
                  });
}

Var block_propagate(Var x, const Matrix& op) {
  const auto n = op.rows();
  require(op.cols() == n && n > 0 && x.rows() % n == 0, "block_propagate");
  const Matrix& xv = x.value();
  const auto blocks = xv.rows() / n;
  Matrix out(xv.rows(), xv.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) out.middleRows(b * n, n).noalias() = op * xv.middleRows(b * n, n);
  Tape& t = *x.tape();
  return t.record(std::move(out), {x}, [xi = x.id(), &op, n, blocks](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix gx(g.rows(), g.cols());
    for (Eigen::Index b = 0; b < blocks; ++b) gx.middleRows(b * n, n).noalias() = op.transpose() * g.middleRows(b * n, n);
    tp.accumulate(xi, gx);
  });
}

Var graph_attention(Var h, Var src, Var dst, const Matrix& mask, double negative_slope) {
  const auto n = mask.rows();
  require(mask.cols() == n && n > 0 && h.rows() % n == 0, "graph_attention mask");
  require(src.rows() == h.rows() && dst.rows() == h.rows() && src.cols() == 1 && dst.cols() == 1,
          "graph_attention scores");
  const Matrix& hv = h.value();
  const Matrix& sv = src.value();
  const Matrix& dv = dst.value();
  const auto blocks = hv.rows() / n;
  // Per block: pre-activation logits and attention weights, kept for backward.
  auto pre = std::make_shared<Matrix>(hv.rows(), n);
  auto alpha = std::make_shared<Matrix>(hv.rows(), n);
  Matrix out(hv.rows(), hv.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto row = b * n + i;
      double m = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        const double z = sv(row, 0) + dv(b * n + j, 0);
        (*pre)(row, j) = z;
        if (mask(i, j) != 0.0) m = std::max(m, z > 0.0 ? z : negative_slope * z);
      }
      double total = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        double w = 0.0;
        if (mask(i, j) != 0.0) {
          const double z = (*pre)(row, j);
          w = std::exp((z > 0.0 ? z : negative_slope * z) - m);
        }
        (*alpha)(row, j) = w;
        total += w;
      }
      (*alpha).row(row) /= total;
    }
    out.middleRows(b * n, n).noalias() = alpha->middleRows(b * n, n) * hv.middleRows(b * n, n);
  }
  Tape& t = *h.tape();
  return t.record(std::move(out), {h, src, dst},
                  [hi = h.id(), si = src.id(), di = dst.id(), &mask, n, blocks, pre, alpha,
                   negative_slope](Tape& tp, int self) {
                    const Matrix& g = tp.grad(self);
                    const Matrix& hv = tp.value(hi);
                    Matrix gh(hv.rows(), hv.cols());
                    Matrix gs = Matrix::Zero(hv.rows(), 1);
                    Matrix gd = Matrix::Zero(hv.rows(), 1);
                    for (Eigen::Index b = 0; b < blocks; ++b) {
                      const auto a = alpha->middleRows(b * n, n);
                      const auto gb = g.middleRows(b * n, n);
                      const auto hb = hv.middleRows(b * n, n);
                      gh.middleRows(b * n, n).noalias() = a.transpose() * gb;
                      Matrix galpha = gb * hb.transpose();  // n x n
                      for (Eigen::Index i = 0; i < n; ++i) {
                        const auto row = b * n + i;
                        const double dot = galpha.row(i).dot(a.row(i));
                        for (Eigen::Index j = 0; j < n; ++j) {
                          if (mask(i, j) == 0.0) continue;
                          const double gz = a(i, j) * (galpha(i, j) - dot);
                          const double gpre = (*pre)(row, j) > 0.0 ? gz : negative_slope * gz;
                          gs(row, 0) += gpre;
                          gd(b * n + j, 0) += gpre;
                        }
                      }
                    }
                    tp.accumulate(hi, gh);
                    tp.accumulate(si, gs);
                    tp.accumulate(di, gd);
                  });
}

Var dropout(Var a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  require(rate < 1.0, "dropout rate");
  std::bernoulli_distribution keep(1.0 - rate);
  auto mask = std::make_shared<Matrix>(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask->size(); ++i) mask->data()[i] = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  Tape& t = *a.tape();
  return t.record(a.value().cwiseProduct(*mask), {a},
                  [ai = a.id(), mask](Tape& tp, int self) { tp.accumulate(ai, tp.grad(self).cwiseProduct(*mask)); });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  return t.record(Matrix::Constant(1, 1, a.value().sum()), {a}, [ai = a.id(), r = a.rows(), c = a.cols()](Tape& tp, int self) {
    tp.accumulate(ai, Matrix::Constant(r, c, tp.grad(self)(0, 0)));
  });
}

}  // namespace hemo::ag
