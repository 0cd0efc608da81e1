// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense row-major Eigen matrices.
//
// A Tape records every operation in creation order, so a reverse sweep over
// the node list is a reverse topological order. Values are immutable once
// recorded; gradients are allocated at backward() time.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "graphormer/common.hpp"

namespace graphormer::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a tape.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Matrix<Scalar>& value() const { return tape->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using VarT = Var<Scalar>;
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  VarT leaf(Mat value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad, nullptr});
    return VarT{this, static_cast<int>(nodes_.size()) - 1};
  }

  VarT constant(Mat value) { return leaf(std::move(value), false); }

  /// Records the output of an operation. The node requires a gradient when
  /// any input does; `backward` is dropped otherwise.
  VarT record(Mat value, std::initializer_list<VarT> inputs, Backward backward) {
    return record(std::move(value), std::span<const VarT>(inputs.begin(), inputs.size()), std::move(backward));
  }

  VarT record(Mat value, std::span<const VarT> inputs, Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.tape != this) throw Error("operand recorded on a different tape");
      needs = needs || nodes_[in.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Mat(), needs, needs ? std::move(backward) : nullptr});
    return VarT{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat& value(VarT v) const { return nodes_[v.id].value; }
  const Mat& value(int id) const { return nodes_[id].value; }
  bool requires_grad(VarT v) const { return nodes_[v.id].requires_grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  /// Gradient of the last backward() output with respect to v. Zero-sized
  /// when v does not require a gradient.
  const Mat& grad(VarT v) const { return nodes_[v.id].grad; }
  const Mat& grad(int id) const { return nodes_[id].grad; }
  Mat& grad_mut(int id) { return nodes_[id].grad; }

  void backward(VarT out) {
    if (value(out).size() != 1) throw Error("backward() without a seed needs a scalar output");
    backward(out, Mat::Ones(1, 1));
  }

  void backward(VarT out, const Mat& seed) {
    for (auto& n : nodes_) {
      if (n.requires_grad) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    }
    if (!nodes_[out.id].requires_grad) return;
    nodes_[out.id].grad = seed;
    visits_ = 0;
    for (int id = out.id; id >= 0; --id) {
      auto& n = nodes_[id];
      if (!n.requires_grad || !n.backward) continue;
      ++visits_;
      n.backward(*this, id);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t backward_visits() const { return visits_; }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad;
    Backward backward;
  };
  std::deque<Node> nodes_;
  std::size_t visits_ = 0;
};

namespace detail {

template <typename Scalar>
void check_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

template <typename Scalar>
Scalar normal_cdf(Scalar x) {
  return Scalar(0.5) * (Scalar(1) + std::erf(x * Scalar(M_SQRT1_2)));
}

template <typename Scalar>
Scalar normal_pdf(Scalar x) {
  return std::exp(Scalar(-0.5) * x * x) * Scalar(0.3989422804014327);
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  if (a.cols() != b.rows()) {
    throw Error("matmul: inner dimensions " + std::to_string(a.cols()) + " and " + std::to_string(b.rows()) +
                " differ");
  }
  Matrix<Scalar> out = a.value() * b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a)) t.grad_mut(a.id).noalias() += g * t.value(b).transpose();
    if (t.requires_grad(b)) t.grad_mut(b.id).noalias() += t.value(a).transpose() * g;
  });
}

/// Batched product: a holds `batch` stacked [m x k] blocks, b holds `batch`
/// stacked [k x n] blocks.
template <typename Scalar>
Var<Scalar> batched_matmul(Var<Scalar> a, Var<Scalar> b, Eigen::Index batch) {
  if (batch <= 0 || a.rows() % batch != 0 || b.rows() % batch != 0) throw Error("batched_matmul: bad batch size");
  const Eigen::Index m = a.rows() / batch, k = a.cols(), n = b.cols();
  if (b.rows() / batch != k) throw Error("batched_matmul: inner dimensions differ");
  Matrix<Scalar> out(batch * m, n);
  for (Eigen::Index i = 0; i < batch; ++i) {
    out.middleRows(i * m, m).noalias() = a.value().middleRows(i * m, m) * b.value().middleRows(i * k, k);
  }
  return a.tape->record(std::move(out), {a, b}, [a, b, batch, m, k](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    for (Eigen::Index i = 0; i < batch; ++i) {
      const auto gi = g.middleRows(i * m, m);
      if (t.requires_grad(a)) {
        t.grad_mut(a.id).middleRows(i * m, m).noalias() += gi * t.value(b).middleRows(i * k, k).transpose();
      }
      if (t.requires_grad(b)) {
        t.grad_mut(b.id).middleRows(i * k, k).noalias() += t.value(a).middleRows(i * m, m).transpose() * gi;
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::check_same_shape(a, b, "add");
  Matrix<Scalar> out = a.value() + b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, int self) {
    if (t.requires_grad(a)) t.grad_mut(a.id) += t.grad(self);
    if (t.requires_grad(b)) t.grad_mut(b.id) += t.grad(self);
  });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  detail::check_same_shape(a, b, "sub");
  Matrix<Scalar> out = a.value() - b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, int self) {
    if (t.requires_grad(a)) t.grad_mut(a.id) += t.grad(self);
    if (t.requires_grad(b)) t.grad_mut(b.id) -= t.grad(self);
  });
}

template <typename Scalar>
Var<Scalar> hadamard(Var<Scalar> a, Var<Scalar> b) {
  detail::check_same_shape(a, b, "hadamard");
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, int self) {
    if (t.requires_grad(a)) t.grad_mut(a.id) += t.grad(self).cwiseProduct(t.value(b));
    if (t.requires_grad(b)) t.grad_mut(b.id) += t.grad(self).cwiseProduct(t.value(a));
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar s) {
  Matrix<Scalar> out = a.value() * s;
  return a.tape->record(std::move(out), {a}, [a, s](Tape<Scalar>& t, int self) {
    t.grad_mut(a.id) += t.grad(self) * s;
  });
}

/// a + row, with the [1 x c] row broadcast over every row of a.
template <typename Scalar>
Var<Scalar> add_row(Var<Scalar> a, Var<Scalar> row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error("add_row: expected a [1 x cols] row");
  Matrix<Scalar> out = a.value().rowwise() + row.value().row(0);
  return a.tape->record(std::move(out), {a, row}, [a, row](Tape<Scalar>& t, int self) {
    if (t.requires_grad(a)) t.grad_mut(a.id) += t.grad(self);
    if (t.requires_grad(row)) t.grad_mut(row.id) += t.grad(self).colwise().sum();
  });
}

/// Exact (erf-based) GELU.
template <typename Scalar>
Var<Scalar> gelu(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar x) { return x * detail::normal_cdf(x); });
  return a.tape->record(std::move(out), {a}, [a](Tape<Scalar>& t, int self) {
    const auto& x = t.value(a);
    t.grad_mut(a.id).array() +=
        t.grad(self).array() *
        x.unaryExpr([](Scalar v) { return detail::normal_cdf(v) + v * detail::normal_pdf(v); }).array();
  });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().cwiseMax(Scalar(0));
  return a.tape->record(std::move(out), {a}, [a](Tape<Scalar>& t, int self) {
    t.grad_mut(a.id).array() += (t.value(a).array() > Scalar(0)).select(t.grad(self).array(), Scalar(0));
  });
}

/// Inverted dropout. Identity (no new node) when not training or p == 0.
template <typename Scalar>
Var<Scalar> dropout(Var<Scalar> a, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw Error("dropout: rate must be in [0, 1)");
  if (!training || p == 0.0) return a;
  const Scalar keep_scale = Scalar(1.0 / (1.0 - p));
  Matrix<Scalar> mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < p ? Scalar(0) : keep_scale;
  Matrix<Scalar> out = a.value().cwiseProduct(mask);
  return a.tape->record(std::move(out), {a}, [a, mask = std::move(mask)](Tape<Scalar>& t, int self) {
    t.grad_mut(a.id) += t.grad(self).cwiseProduct(mask);
  });
}

/// Row-wise layer normalization followed by the affine map gamma * x + beta.
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta, double eps = 1e-5) {
  const Eigen::Index d = x.cols();
  if (d == 0) throw Error("layer_norm: empty feature dimension");
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw Error("layer_norm: gamma/beta must be [1 x d]");
  }
  const auto& xv = x.value();
  Matrix<Scalar> xhat(xv.rows(), d);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rstd(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const Scalar mean = xv.row(r).mean();
    const Scalar var = (xv.row(r).array() - mean).square().mean();
    rstd(r) = Scalar(1) / std::sqrt(var + Scalar(eps));
    xhat.row(r) = (xv.row(r).array() - mean) * rstd(r);
  }
  Matrix<Scalar> out =
      (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return x.tape->record(std::move(out), {x, gamma, beta},
                        [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<Scalar>& t, int self) {
                          const auto& g = t.grad(self);
                          if (t.requires_grad(gamma)) t.grad_mut(gamma.id) += g.cwiseProduct(xhat).colwise().sum();
                          if (t.requires_grad(beta)) t.grad_mut(beta.id) += g.colwise().sum();
                          if (!t.requires_grad(x)) return;
                          const Matrix<Scalar> gh = g.array().rowwise() * t.value(gamma).row(0).array();
                          auto& gx = t.grad_mut(x.id);
                          for (Eigen::Index r = 0; r < gh.rows(); ++r) {
                            const Scalar m1 = gh.row(r).mean();
                            const Scalar m2 = gh.row(r).dot(xhat.row(r)) / Scalar(gh.cols());
                            gx.row(r).array() += rstd(r) * (gh.row(r).array() - m1 - xhat.row(r).array() * m2);
                          }
                        });
}

/// Rows of `table` selected by `indices`; backward scatters into the rows.
template <typename Scalar>
Var<Scalar> embedding_lookup(Var<Scalar> table, std::vector<int> indices) {
  const Eigen::Index rows = table.rows();
  Matrix<Scalar> out(static_cast<Eigen::Index>(indices.size()), table.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= rows) {
      throw Error("embedding_lookup: index " + std::to_string(indices[i]) + " outside table of " +
                  std::to_string(rows) + " rows");
    }
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(indices[i]);
  }
  return table.tape->record(std::move(out), {table}, [table, indices = std::move(indices)](Tape<Scalar>& t, int self) {
    auto& gt = t.grad_mut(table.id);
    const auto& g = t.grad(self);
    for (std::size_t i = 0; i < indices.size(); ++i) gt.row(indices[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

/// Row i of the output is the sum of table rows bags[i] (zero for an empty bag).
template <typename Scalar>
Var<Scalar> embedding_bag(Var<Scalar> table, std::vector<std::vector<int>> bags) {
  const Eigen::Index rows = table.rows();
  Matrix<Scalar> out = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(bags.size()), table.cols());
  for (std::size_t i = 0; i < bags.size(); ++i) {
    for (int idx : bags[i]) {
      if (idx < 0 || idx >= rows) {
        throw Error("embedding_bag: index " + std::to_string(idx) + " outside table of " + std::to_string(rows) +
                    " rows");
      }
      out.row(static_cast<Eigen::Index>(i)) += table.value().row(idx);
    }
  }
  return table.tape->record(std::move(out), {table}, [table, bags = std::move(bags)](Tape<Scalar>& t, int self) {
    auto& gt = t.grad_mut(table.id);
    const auto& g = t.grad(self);
    for (std::size_t i = 0; i < bags.size(); ++i) {
      for (int idx : bags[i]) gt.row(idx) += g.row(static_cast<Eigen::Index>(i));
    }
  });
}

template <typename Scalar>
Var<Scalar> gather_rows(Var<Scalar> x, std::vector<int> rows) {
  return embedding_lookup(x, std::move(rows));
}

/// out(r, c) = flat source value at index(r, c), or 0 where the index is -1.
template <typename Scalar>
Var<Scalar> index_gather(Var<Scalar> source, std::vector<int> index, Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(index.size()) != rows * cols) throw Error("index_gather: index size mismatch");
  const auto& src = source.value();
  Matrix<Scalar> out(rows, cols);
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= src.size()) throw Error("index_gather: index out of range");
    out.data()[k] = index[k] < 0 ? Scalar(0) : src.data()[index[k]];
  }
  return source.tape->record(std::move(out), {source}, [source, index = std::move(index)](Tape<Scalar>& t, int self) {
    auto& gs = t.grad_mut(source.id);
    const auto& g = t.grad(self);
    for (std::size_t k = 0; k < index.size(); ++k) {
      if (index[k] >= 0) gs.data()[index[k]] += g.data()[k];
    }
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> x, Eigen::Index start, Eigen::Index width) {
  if (start < 0 || width < 0 || start + width > x.cols()) throw Error("slice_cols: range out of bounds");
  Matrix<Scalar> out = x.value().middleCols(start, width);
  return x.tape->record(std::move(out), {x}, [x, start, width](Tape<Scalar>& t, int self) {
    t.grad_mut(x.id).middleCols(start, width) += t.grad(self);
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw Error("concat_cols: nothing to concatenate");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw Error("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix<Scalar> out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return parts.front().tape->record(std::move(out), std::span<const Var<Scalar>>(parts),
                                    [parts](Tape<Scalar>& t, int self) {
                                      Eigen::Index c = 0;
                                      for (const auto& p : parts) {
                                        if (t.requires_grad(p)) t.grad_mut(p.id) += t.grad(self).middleCols(c, p.cols());
                                        c += p.cols();
                                      }
                                    });
}

/// [n x (heads * d_head)] -> heads x [n x d_head].
template <typename Scalar>
std::vector<Var<Scalar>> split_heads(Var<Scalar> x, int heads) {
  if (heads <= 0 || x.cols() % heads != 0) throw Error("split_heads: width not divisible by head count");
  const Eigen::Index w = x.cols() / heads;
  std::vector<Var<Scalar>> out;
  for (int h = 0; h < heads; ++h) out.push_back(slice_cols(x, h * w, w));
  return out;
}

template <typename Scalar>
Var<Scalar> concat_heads(const std::vector<Var<Scalar>>& heads) {
  return concat_cols(heads);
}

/// Row-wise softmax of (logits + bias) restricted to mask == true; masked
/// entries get weight exactly 0. Throws on a row with no unmasked entry.
template <typename Scalar>
Var<Scalar> biased_masked_softmax(Var<Scalar> logits, Var<Scalar> bias,
                                  const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& mask) {
  detail::check_same_shape(logits, bias, "biased_masked_softmax");
  if (mask.rows() != logits.rows() || mask.cols() != logits.cols()) throw Error("biased_masked_softmax: mask shape");
  const Matrix<Scalar> z = logits.value() + bias.value();
  Matrix<Scalar> p = Matrix<Scalar>::Zero(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    if (!mask.row(r).any()) throw Error("biased_masked_softmax: row " + std::to_string(r) + " is fully masked");
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      if (mask(r, c)) mx = std::max(mx, z(r, c));
    }
    Scalar denom = 0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      if (mask(r, c)) denom += (p(r, c) = std::exp(z(r, c) - mx));
    }
    p.row(r) /= denom;
  }
  Matrix<Scalar> saved = p;
  return logits.tape->record(std::move(p), {logits, bias}, [logits, bias, saved = std::move(saved)](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot = g.cwiseProduct(saved).rowwise().sum();
    const Matrix<Scalar> dz = saved.cwiseProduct(g - dot.replicate(1, g.cols()));
    if (t.requires_grad(logits)) t.grad_mut(logits.id) += dz;
    if (t.requires_grad(bias)) t.grad_mut(bias.id) += dz;
  });
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->record(std::move(out), {a}, [a](Tape<Scalar>& t, int self) {
    t.grad_mut(a.id).array() += t.grad(self)(0, 0);
  });
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> a) {
  return scale(sum(a), Scalar(1) / Scalar(a.value().size()));
}

/// Mean absolute error against a constant target of the same shape.
template <typename Scalar>
Var<Scalar> l1_loss(Var<Scalar> pred, const Matrix<Scalar>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw Error("l1_loss: shape mismatch");
  const Matrix<Scalar> diff = pred.value() - target;
  const auto n = static_cast<Scalar>(diff.size());
  Matrix<Scalar> out(1, 1);
  out(0, 0) = diff.cwiseAbs().sum() / n;
  return pred.tape->record(std::move(out), {pred}, [pred, diff, n](Tape<Scalar>& t, int self) {
    const Scalar g = t.grad(self)(0, 0) / n;
    t.grad_mut(pred.id).array() += diff.array().sign() * g;
  });
}

/// Mean binary cross-entropy on logits against 0/1 targets.
template <typename Scalar>
Var<Scalar> bce_with_logits(Var<Scalar> logits, const Matrix<Scalar>& target) {
  if (logits.rows() != target.rows() || logits.cols() != target.cols()) throw Error("bce_with_logits: shape mismatch");
  const auto& x = logits.value();
  const auto n = static_cast<Scalar>(x.size());
  Scalar total = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Scalar v = x.data()[i];
    total += std::max(v, Scalar(0)) - v * target.data()[i] + std::log1p(std::exp(-std::abs(v)));
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total / n;
  return logits.tape->record(std::move(out), {logits}, [logits, target, n](Tape<Scalar>& t, int self) {
    const Scalar g = t.grad(self)(0, 0) / n;
    const auto& x = t.value(logits);
    auto& gx = t.grad_mut(logits.id);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const Scalar sig = Scalar(1) / (Scalar(1) + std::exp(-x.data()[i]));
      gx.data()[i] += (sig - target.data()[i]) * g;
    }
  });
}

}  // namespace graphormer::ad
