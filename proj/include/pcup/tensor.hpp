// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Tape records every node created through it; backward() walks
// the record in reverse, so gradients are accumulated in a fixed order and
// results are bitwise reproducible.
#pragma once

#include "pcup/core.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace pcup::ad {

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  std::function<void()> backward;

  Matrix& grad_buffer() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
  bool has_grad() const { return grad.size() != 0; }
};

using Tensor = std::shared_ptr<Node>;
using Index = Eigen::Index;

class Tape {
 public:
  Tensor constant(Matrix v) { return push(std::move(v), false); }
  Tensor leaf(Matrix v) { return push(std::move(v), true); }

  /// Registers an op result. `bw` runs during backward() if any input needs
  /// gradients; it reads out->grad and accumulates into its inputs.
  Tensor record(Matrix v, bool requires_grad, std::function<void(Node&)> bw) {
    Tensor t = push(std::move(v), requires_grad);
    if (requires_grad) {
      Node* self = t.get();
      t->backward = [self, f = std::move(bw)] {
        if (self->has_grad()) f(*self);
      };
    }
    return t;
  }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and back-propagates.
  void backward(const Tensor& out) {
    if (out->value.size() != 1) throw NumericError("tensor", "backward() needs a scalar output");
    out->grad_buffer().setOnes();
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if ((*it)->backward) (*it)->backward();
    }
  }

  /// Back-propagates an explicit output gradient (same shape as out).
  void backward(const Tensor& out, const Matrix& seed) {
    out->grad_buffer() += seed;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if ((*it)->backward) (*it)->backward();
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  Tensor push(Matrix v, bool requires_grad) {
    auto t = std::make_shared<Node>();
    t->value = std::move(v);
    t->requires_grad = requires_grad;
    nodes_.push_back(t);
    return t;
  }

  std::vector<Tensor> nodes_;
};

inline bool any_grad(std::initializer_list<const Tensor*> ts) {
  for (auto* t : ts)
    if ((*t)->requires_grad) return true;
  return false;
}

// -- elementary ops -----------------------------------------------------------

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  Matrix v;
  v.noalias() = a->value * b->value;
  Node* pa = a.get();
  Node* pb = b.get();
  return tape.record(std::move(v), any_grad({&a, &b}), [pa, pb](Node& self) {
    if (pa->requires_grad) pa->grad_buffer().noalias() += self.grad * pb->value.transpose();
    if (pb->requires_grad) pb->grad_buffer().noalias() += pa->value.transpose() * self.grad;
  });
}

/// X + 1 * b for a 1 x n row b.
inline Tensor add_row(Tape& tape, const Tensor& x, const Tensor& b) {
  Matrix v = x->value;
  v.rowwise() += b->value.row(0);
  Node* px = x.get();
  Node* pb = b.get();
  return tape.record(std::move(v), any_grad({&x, &b}), [px, pb](Node& self) {
    if (px->requires_grad) px->grad_buffer() += self.grad;
    if (pb->requires_grad) pb->grad_buffer() += self.grad.colwise().sum();
  });
}

inline Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_row(tape, matmul(tape, x, w), b);
}

inline Tensor relu(Tape& tape, const Tensor& x) {
  Matrix v = x->value.cwiseMax(real(0));
  Node* px = x.get();
  return tape.record(std::move(v), x->requires_grad, [px](Node& self) {
    px->grad_buffer().array() += (px->value.array() > 0).select(self.grad.array(), real(0));
  });
}

/// log(1 + exp(x)), computed without overflow.
inline real softplus(real x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline real sigmoid(real x) {
  if (x >= 0) return 1 / (1 + std::exp(-x));
  const real e = std::exp(x);
  return e / (1 + e);
}

inline Tensor softplus(Tape& tape, const Tensor& x) {
  Matrix v = x->value.unaryExpr([](real s) { return softplus(s); });
  Node* px = x.get();
  return tape.record(std::move(v), x->requires_grad, [px](Node& self) {
    px->grad_buffer().array() += self.grad.array() * px->value.unaryExpr([](real s) { return sigmoid(s); }).array();
  });
}

inline Tensor hadamard(Tape& tape, const Tensor& a, const Tensor& b) {
  Matrix v = a->value.cwiseProduct(b->value);
  Node* pa = a.get();
  Node* pb = b.get();
  return tape.record(std::move(v), any_grad({&a, &b}), [pa, pb](Node& self) {
    if (pa->requires_grad) pa->grad_buffer() += self.grad.cwiseProduct(pb->value);
    if (pb->requires_grad) pb->grad_buffer() += self.grad.cwiseProduct(pa->value);
  });
}

/// out.row(r) = x.row(rows[r]).
inline Tensor gather_rows(Tape& tape, const Tensor& x, std::shared_ptr<const std::vector<Index>> rows) {
  Matrix v(static_cast<Index>(rows->size()), x->value.cols());
  for (Index r = 0; r < v.rows(); ++r) v.row(r) = x->value.row((*rows)[static_cast<std::size_t>(r)]);
  Node* px = x.get();
  return tape.record(std::move(v), x->requires_grad, [px, rows](Node& self) {
    Matrix& g = px->grad_buffer();
    for (Index r = 0; r < self.grad.rows(); ++r) g.row((*rows)[static_cast<std::size_t>(r)]) += self.grad.row(r);
  });
}

/// Sums consecutive blocks of `group` rows: (n*group) x c -> n x c.
inline Tensor group_sum(Tape& tape, const Tensor& x, Index group) {
  const Index n = x->value.rows() / group;
  Matrix v = Matrix::Zero(n, x->value.cols());
  for (Index i = 0; i < n; ++i) v.row(i) = x->value.middleRows(i * group, group).colwise().sum();
  Node* px = x.get();
  return tape.record(std::move(v), x->requires_grad, [px, group, n](Node& self) {
    Matrix& g = px->grad_buffer();
    for (Index i = 0; i < n; ++i) g.middleRows(i * group, group).rowwise() += self.grad.row(i);
  });
}

inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  Index cols = 0;
  bool rg = false;
  for (const auto& p : parts) {
    cols += p->value.cols();
    rg = rg || p->requires_grad;
  }
  const Index rows = parts.front()->value.rows();
  Matrix v(rows, cols);
  Index at = 0;
  std::vector<Node*> ptrs;
  for (const auto& p : parts) {
    v.middleCols(at, p->value.cols()) = p->value;
    at += p->value.cols();
    ptrs.push_back(p.get());
  }
  return tape.record(std::move(v), rg, [ptrs](Node& self) {
    Index off = 0;
    for (Node* p : ptrs) {
      if (p->requires_grad) p->grad_buffer() += self.grad.middleCols(off, p->value.cols());
      off += p->value.cols();
    }
  });
}

/// Column-wise max over rows; the gradient goes to the first maximal row.
inline Tensor col_max(Tape& tape, const Tensor& x) {
  const Index cols = x->value.cols();
  Matrix v(1, cols);
  std::vector<Index> arg(static_cast<std::size_t>(cols));
  for (Index c = 0; c < cols; ++c) {
    Index r = 0;
    v(0, c) = x->value.col(c).maxCoeff(&r);
    arg[static_cast<std::size_t>(c)] = r;
  }
  Node* px = x.get();
  return tape.record(std::move(v), x->requires_grad, [px, arg = std::move(arg)](Node& self) {
    Matrix& g = px->grad_buffer();
    for (std::size_t c = 0; c < arg.size(); ++c) g(arg[c], static_cast<Index>(c)) += self.grad(0, static_cast<Index>(c));
  });
}

/// Repeats a 1 x c row m times.
inline Tensor broadcast_rows(Tape& tape, const Tensor& x, Index m) {
  Matrix v = x->value.row(0).replicate(m, 1);
  Node* px = x.get();
  return tape.record(std::move(v), x->requires_grad,
                     [px](Node& self) { px->grad_buffer() += self.grad.colwise().sum(); });
}

/// out.row(r) = sum_j weights(r, j) * x.row(rows(r, j)), weights constant.
inline Tensor weighted_gather(Tape& tape, const Tensor& x, std::shared_ptr<const Eigen::Matrix<Index, -1, -1, Eigen::RowMajor>> rows,
                              std::shared_ptr<const Matrix> weights) {
  const Index m = rows->rows(), width = rows->cols();
  Matrix v = Matrix::Zero(m, x->value.cols());
  for (Index r = 0; r < m; ++r)
    for (Index j = 0; j < width; ++j) v.row(r) += (*weights)(r, j) * x->value.row((*rows)(r, j));
  Node* px = x.get();
  return tape.record(std::move(v), x->requires_grad, [px, rows, weights](Node& self) {
    Matrix& g = px->grad_buffer();
    for (Index r = 0; r < rows->rows(); ++r)
      for (Index j = 0; j < rows->cols(); ++j) g.row((*rows)(r, j)) += (*weights)(r, j) * self.grad.row(r);
  });
}

/// mean_i |pred_i - target_i| over an m x 1 column; subgradient 0 at 0.
inline Tensor mean_abs_error(Tape& tape, const Tensor& pred, const Matrix& target) {
  const Matrix resid = pred->value - target;
  Matrix v(1, 1);
  v(0, 0) = resid.cwiseAbs().sum() / static_cast<real>(resid.rows());
  Node* pp = pred.get();
  return tape.record(std::move(v), pred->requires_grad, [pp, resid](Node& self) {
    const real scale = self.grad(0, 0) / static_cast<real>(resid.rows());
    pp->grad_buffer().array() +=
        resid.array().unaryExpr([](real r) { return r > 0 ? real(1) : (r < 0 ? real(-1) : real(0)); }) * scale;
  });
}

/// mean over rows of the squared row norm of (pred - target).
inline Tensor mean_squared_error(Tape& tape, const Tensor& pred, const Matrix& target) {
  const Matrix resid = pred->value - target;
  Matrix v(1, 1);
  v(0, 0) = resid.squaredNorm() / static_cast<real>(resid.rows());
  Node* pp = pred.get();
  return tape.record(std::move(v), pred->requires_grad, [pp, resid](Node& self) {
    pp->grad_buffer() += resid * (2 * self.grad(0, 0) / static_cast<real>(resid.rows()));
  });
}

}  // namespace pcup::ad
