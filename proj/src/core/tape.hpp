#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tensor.hpp"

namespace m3pt {

// Reverse-mode tape. Each op appends a node holding its output value and a
// backward closure that scatters the node's gradient into its inputs. Nodes
// only ever reference earlier nodes, so reverse insertion order is a valid
// topological order for backprop.
//
// Leaves can either own their value or borrow it from an external tensor
// (used for model parameters, which would otherwise be copied every forward).
template <typename S>
class Tape {
 public:
  struct Node {
    Tensor<S> value;
    const Tensor<S>* borrowed = nullptr;  // if set, value lives elsewhere
    Tensor<S> grad;
    bool needs_grad = false;
    bool grad_live = false;
    std::function<void(Tape&, int)> backward;  // empty for leaves
  };

  int leaf(Tensor<S> v, bool needs_grad = false) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int borrow_leaf(const Tensor<S>* v, bool needs_grad = false) {
    Node n;
    n.borrowed = v;
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor<S>& val(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.borrowed ? *n.borrowed : n.value;
  }

  Tensor<S>& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_live) {
      n.grad = Tensor<S>(val(id).shape);
      n.grad_live = true;
    }
    return n.grad;
  }

  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

  // Seeds d(root)/d(root) = 1 (root must be a scalar, shape [1]) and runs the
  // tape backwards. Gradients accumulate across fan-out.
  void backward(int root) {
    const Tensor<S>& rv = val(root);
    if (rv.numel() != 1) fail(ErrorKind::Shape, "backward root must be scalar");
    grad(root)[0] = S(1);
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.needs_grad || !n.grad_live || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  size_t size() const { return nodes_.size(); }

  // ---- op helpers -------------------------------------------------------

  int make(Tensor<S> value, std::vector<int> inputs,
           std::function<void(Tape&, int)> back) {
    Node n;
    n.value = std::move(value);
    for (int i : inputs)
      if (nodes_[static_cast<size_t>(i)].needs_grad) n.needs_grad = true;
    if (n.needs_grad) n.backward = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

 private:
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename S>
int op_add(Tape<S>& t, int a, int b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (!A.same_shape(B)) fail(ErrorKind::Shape, "add: shape mismatch");
  Tensor<S> y = A;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] += B[i];
  return t.make(std::move(y), {a, b}, [a, b](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    if (tt.needs_grad(a)) {
      auto& ga = tt.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (tt.needs_grad(b)) {
      auto& gb = tt.grad(b);
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
    }
  });
}

template <typename S>
int op_sub(Tape<S>& t, int a, int b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (!A.same_shape(B)) fail(ErrorKind::Shape, "sub: shape mismatch");
  Tensor<S> y = A;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] -= B[i];
  return t.make(std::move(y), {a, b}, [a, b](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    if (tt.needs_grad(a)) {
      auto& ga = tt.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (tt.needs_grad(b)) {
      auto& gb = tt.grad(b);
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename S>
int op_mul(Tape<S>& t, int a, int b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (!A.same_shape(B)) fail(ErrorKind::Shape, "mul: shape mismatch");
  Tensor<S> y = A;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] *= B[i];
  return t.make(std::move(y), {a, b}, [a, b](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& A2 = tt.val(a);
    const auto& B2 = tt.val(b);
    if (tt.needs_grad(a)) {
      auto& ga = tt.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * B2[i];
    }
    if (tt.needs_grad(b)) {
      auto& gb = tt.grad(b);
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * A2[i];
    }
  });
}

template <typename S>
int op_div(Tape<S>& t, int a, int b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (!A.same_shape(B)) fail(ErrorKind::Shape, "div: shape mismatch");
  Tensor<S> y = A;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] /= B[i];
  return t.make(std::move(y), {a, b}, [a, b](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& A2 = tt.val(a);
    const auto& B2 = tt.val(b);
    if (tt.needs_grad(a)) {
      auto& ga = tt.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / B2[i];
    }
    if (tt.needs_grad(b)) {
      auto& gb = tt.grad(b);
      for (int64_t i = 0; i < g.numel(); ++i)
        gb[i] -= g[i] * A2[i] / (B2[i] * B2[i]);
    }
  });
}

template <typename S>
int op_scale(Tape<S>& t, int a, S s) {
  Tensor<S> y = t.val(a);
  for (int64_t i = 0; i < y.numel(); ++i) y[i] *= s;
  return t.make(std::move(y), {a}, [a, s](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * s;
  });
}

template <typename S>
int op_add_scalar(Tape<S>& t, int a, S s) {
  Tensor<S> y = t.val(a);
  for (int64_t i = 0; i < y.numel(); ++i) y[i] += s;
  return t.make(std::move(y), {a}, [a](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

template <typename S>
int op_neg(Tape<S>& t, int a) {
  return op_scale(t, a, S(-1));
}

template <typename S>
int op_sigmoid(Tape<S>& t, int a) {
  Tensor<S> y = t.val(a);
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = S(1) / (S(1) + std::exp(-y[i]));
  return t.make(std::move(y), {a}, [a](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& y2 = tt.val(id);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y2[i] * (S(1) - y2[i]);
  });
}

// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
template <typename S>
int op_gelu(Tape<S>& t, int a) {
  const S inv_sqrt2 = S(0.70710678118654752440084436210485L);
  Tensor<S> y = t.val(a);
  for (int64_t i = 0; i < y.numel(); ++i) {
    S x = y[i];
    y[i] = x * S(0.5) * (S(1) + std::erf(x * inv_sqrt2));
  }
  return t.make(std::move(y), {a}, [a, inv_sqrt2](Tape<S>& tt, int id) {
    const S inv_sqrt2pi = S(0.39894228040143267793994605993438L);
    const auto& g = tt.grad(id);
    const auto& x2 = tt.val(a);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) {
      S x = x2[i];
      S phi = S(0.5) * (S(1) + std::erf(x * inv_sqrt2));
      S pdf = inv_sqrt2pi * std::exp(S(-0.5) * x * x);
      ga[i] += g[i] * (phi + x * pdf);
    }
  });
}

template <typename S>
int op_relu(Tape<S>& t, int a) {
  Tensor<S> y = t.val(a);
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = y[i] > S(0) ? y[i] : S(0);
  return t.make(std::move(y), {a}, [a](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& x2 = tt.val(a);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i)
      if (x2[i] > S(0)) ga[i] += g[i];
  });
}

template <typename S>
int op_log(Tape<S>& t, int a) {
  Tensor<S> y = t.val(a);
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::log(y[i]);
  return t.make(std::move(y), {a}, [a](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& x2 = tt.val(a);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / x2[i];
  });
}

// log(1 + exp(x)), computed without overflow.
template <typename S>
int op_softplus(Tape<S>& t, int a) {
  Tensor<S> y = t.val(a);
  for (int64_t i = 0; i < y.numel(); ++i) {
    S x = y[i];
    y[i] = std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x)));
  }
  return t.make(std::move(y), {a}, [a](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& x2 = tt.val(a);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) {
      S s = S(1) / (S(1) + std::exp(-x2[i]));
      ga[i] += g[i] * s;
    }
  });
}

template <typename S>
int op_pow_const(Tape<S>& t, int a, S p) {
  Tensor<S> y = t.val(a);
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::pow(y[i], p);
  return t.make(std::move(y), {a, }, [a, p](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& x2 = tt.val(a);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i)
      ga[i] += g[i] * p * std::pow(x2[i], p - S(1));
  });
}

template <typename S>
int op_abs(Tape<S>& t, int a) {
  Tensor<S> y = t.val(a);
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::abs(y[i]);
  return t.make(std::move(y), {a}, [a](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& x2 = tt.val(a);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i)
      ga[i] += x2[i] >= S(0) ? g[i] : -g[i];
  });
}

template <typename S>
int op_maximum(Tape<S>& t, int a, int b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (!A.same_shape(B)) fail(ErrorKind::Shape, "maximum: shape mismatch");
  Tensor<S> y = A;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::max(A[i], B[i]);
  return t.make(std::move(y), {a, b}, [a, b](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& A2 = tt.val(a);
    const auto& B2 = tt.val(b);
    for (int64_t i = 0; i < g.numel(); ++i) {
      if (A2[i] >= B2[i]) {
        if (tt.needs_grad(a)) tt.grad(a)[i] += g[i];
      } else {
        if (tt.needs_grad(b)) tt.grad(b)[i] += g[i];
      }
    }
  });
}

template <typename S>
int op_minimum(Tape<S>& t, int a, int b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (!A.same_shape(B)) fail(ErrorKind::Shape, "minimum: shape mismatch");
  Tensor<S> y = A;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::min(A[i], B[i]);
  return t.make(std::move(y), {a, b}, [a, b](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& A2 = tt.val(a);
    const auto& B2 = tt.val(b);
    for (int64_t i = 0; i < g.numel(); ++i) {
      if (A2[i] <= B2[i]) {
        if (tt.needs_grad(a)) tt.grad(a)[i] += g[i];
      } else {
        if (tt.needs_grad(b)) tt.grad(b)[i] += g[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and indexing
// ---------------------------------------------------------------------------

template <typename S>
int op_sum(Tape<S>& t, int a) {
  const auto& A = t.val(a);
  S acc = S(0);
  for (int64_t i = 0; i < A.numel(); ++i) acc += A[i];
  Tensor<S> y({1});
  y[0] = acc;
  return t.make(std::move(y), {a}, [a](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g[0];
  });
}

template <typename S>
int op_mean(Tape<S>& t, int a) {
  int64_t n = t.val(a).numel();
  return op_scale(t, op_sum(t, a), S(1) / static_cast<S>(n));
}

// y[k] = flat(a)[idx[k]]
template <typename S>
int op_gather(Tape<S>& t, int a, std::vector<int64_t> idx) {
  const auto& A = t.val(a);
  Tensor<S> y({static_cast<int64_t>(idx.size())});
  for (size_t k = 0; k < idx.size(); ++k) y[static_cast<int64_t>(k)] = A[idx[k]];
  return t.make(std::move(y), {a}, [a, idx](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    auto& ga = tt.grad(a);
    for (size_t k = 0; k < idx.size(); ++k)
      ga[idx[k]] += g[static_cast<int64_t>(k)];
  });
}

// ---------------------------------------------------------------------------
// Matrix / sequence ops (2D tensors [rows, cols])
// ---------------------------------------------------------------------------

template <typename S>
int op_matmul(Tape<S>& t, int a, int b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
    fail(ErrorKind::Shape, "matmul: incompatible shapes " + shape_str(A.shape) +
                               " x " + shape_str(B.shape));
  int64_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor<S> y({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t p = 0; p < k; ++p) {
      S av = A.at(i, p);
      if (av == S(0)) continue;
      for (int64_t j = 0; j < n; ++j) y.at(i, j) += av * B.at(p, j);
    }
  return t.make(std::move(y), {a, b}, [a, b, m, k, n](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& A2 = tt.val(a);
    const auto& B2 = tt.val(b);
    if (tt.needs_grad(a)) {
      auto& ga = tt.grad(a);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          S gv = g.at(i, j);
          if (gv == S(0)) continue;
          for (int64_t p = 0; p < k; ++p) ga.at(i, p) += gv * B2.at(p, j);
        }
    }
    if (tt.needs_grad(b)) {
      auto& gb = tt.grad(b);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
          S av = A2.at(i, p);
          if (av == S(0)) continue;
          for (int64_t j = 0; j < n; ++j) gb.at(p, j) += av * g.at(i, j);
        }
    }
  });
}

template <typename S>
int op_transpose(Tape<S>& t, int a) {
  const auto& A = t.val(a);
  if (A.rank() != 2) fail(ErrorKind::Shape, "transpose: rank-2 expected");
  int64_t m = A.dim(0), n = A.dim(1);
  Tensor<S> y({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) y.at(j, i) = A.at(i, j);
  return t.make(std::move(y), {a}, [a, m, n](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) ga.at(i, j) += g.at(j, i);
  });
}

// y = x * W^T + b, with x [n, din], W [dout, din], b [dout]
template <typename S>
int op_linear(Tape<S>& t, int x, int w, int b) {
  const auto& X = t.val(x);
  const auto& W = t.val(w);
  const auto& B = t.val(b);
  if (X.rank() != 2 || W.rank() != 2 || X.dim(1) != W.dim(1) ||
      B.dim(0) != W.dim(0))
    fail(ErrorKind::Shape, "linear: incompatible shapes");
  int64_t n = X.dim(0), din = X.dim(1), dout = W.dim(0);
  Tensor<S> y({n, dout});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t o = 0; o < dout; ++o) y.at(i, o) = B[o];
    for (int64_t p = 0; p < din; ++p) {
      S xv = X.at(i, p);
      if (xv == S(0)) continue;
      for (int64_t o = 0; o < dout; ++o) y.at(i, o) += xv * W.at(o, p);
    }
  }
  return t.make(std::move(y), {x, w, b}, [x, w, b, n, din, dout](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& X2 = tt.val(x);
    const auto& W2 = tt.val(w);
    if (tt.needs_grad(x)) {
      auto& gx = tt.grad(x);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t o = 0; o < dout; ++o) {
          S gv = g.at(i, o);
          if (gv == S(0)) continue;
          for (int64_t p = 0; p < din; ++p) gx.at(i, p) += gv * W2.at(o, p);
        }
    }
    if (tt.needs_grad(w)) {
      auto& gw = tt.grad(w);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t o = 0; o < dout; ++o) {
          S gv = g.at(i, o);
          if (gv == S(0)) continue;
          for (int64_t p = 0; p < din; ++p) gw.at(o, p) += gv * X2.at(i, p);
        }
    }
    if (tt.needs_grad(b)) {
      auto& gb = tt.grad(b);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t o = 0; o < dout; ++o) gb[o] += g.at(i, o);
    }
  });
}

template <typename S>
int op_slice_rows(Tape<S>& t, int a, int64_t r0, int64_t r1) {
  const auto& A = t.val(a);
  if (A.rank() != 2 || r0 < 0 || r1 > A.dim(0) || r0 > r1)
    fail(ErrorKind::Shape, "slice_rows: bad range");
  int64_t cols = A.dim(1);
  Tensor<S> y({r1 - r0, cols});
  for (int64_t i = r0; i < r1; ++i)
    for (int64_t j = 0; j < cols; ++j) y.at(i - r0, j) = A.at(i, j);
  return t.make(std::move(y), {a}, [a, r0, r1, cols](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    auto& ga = tt.grad(a);
    for (int64_t i = r0; i < r1; ++i)
      for (int64_t j = 0; j < cols; ++j) ga.at(i, j) += g.at(i - r0, j);
  });
}

template <typename S>
int op_concat_rows(Tape<S>& t, const std::vector<int>& parts) {
  int64_t cols = t.val(parts[0]).dim(1);
  int64_t rows = 0;
  for (int p : parts) {
    const auto& P = t.val(p);
    if (P.rank() != 2 || P.dim(1) != cols)
      fail(ErrorKind::Shape, "concat_rows: column mismatch");
    rows += P.dim(0);
  }
  Tensor<S> y({rows, cols});
  int64_t r = 0;
  for (int p : parts) {
    const auto& P = t.val(p);
    for (int64_t i = 0; i < P.dim(0); ++i)
      for (int64_t j = 0; j < cols; ++j) y.at(r + i, j) = P.at(i, j);
    r += P.dim(0);
  }
  return t.make(std::move(y), parts, [parts, cols](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    int64_t r2 = 0;
    for (int p : parts) {
      int64_t pr = tt.val(p).dim(0);
      if (tt.needs_grad(p)) {
        auto& gp = tt.grad(p);
        for (int64_t i = 0; i < pr; ++i)
          for (int64_t j = 0; j < cols; ++j) gp.at(i, j) += g.at(r2 + i, j);
      }
      r2 += pr;
    }
  });
}

template <typename S>
int op_slice_cols(Tape<S>& t, int a, int64_t c0, int64_t c1) {
  const auto& A = t.val(a);
  if (A.rank() != 2 || c0 < 0 || c1 > A.dim(1) || c0 > c1)
    fail(ErrorKind::Shape, "slice_cols: bad range");
  int64_t rows = A.dim(0);
  Tensor<S> y({rows, c1 - c0});
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = c0; j < c1; ++j) y.at(i, j - c0) = A.at(i, j);
  return t.make(std::move(y), {a}, [a, c0, c1, rows](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = c0; j < c1; ++j) ga.at(i, j) += g.at(i, j - c0);
  });
}

template <typename S>
int op_concat_cols(Tape<S>& t, const std::vector<int>& parts) {
  int64_t rows = t.val(parts[0]).dim(0);
  int64_t cols = 0;
  for (int p : parts) {
    const auto& P = t.val(p);
    if (P.rank() != 2 || P.dim(0) != rows)
      fail(ErrorKind::Shape, "concat_cols: row mismatch");
    cols += P.dim(1);
  }
  Tensor<S> y({rows, cols});
  int64_t c = 0;
  for (int p : parts) {
    const auto& P = t.val(p);
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < P.dim(1); ++j) y.at(i, c + j) = P.at(i, j);
    c += P.dim(1);
  }
  return t.make(std::move(y), parts, [parts, rows](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    int64_t c2 = 0;
    for (int p : parts) {
      int64_t pc = tt.val(p).dim(1);
      if (tt.needs_grad(p)) {
        auto& gp = tt.grad(p);
        for (int64_t i = 0; i < rows; ++i)
          for (int64_t j = 0; j < pc; ++j) gp.at(i, j) += g.at(i, c2 + j);
      }
      c2 += pc;
    }
  });
}

// Row-wise softmax on [n, d].
template <typename S>
int op_softmax_rows(Tape<S>& t, int a) {
  const auto& A = t.val(a);
  if (A.rank() != 2) fail(ErrorKind::Shape, "softmax_rows: rank-2 expected");
  int64_t n = A.dim(0), d = A.dim(1);
  Tensor<S> y({n, d});
  for (int64_t i = 0; i < n; ++i) {
    S mx = A.at(i, 0);
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, A.at(i, j));
    S denom = S(0);
    for (int64_t j = 0; j < d; ++j) {
      S e = std::exp(A.at(i, j) - mx);
      y.at(i, j) = e;
      denom += e;
    }
    for (int64_t j = 0; j < d; ++j) y.at(i, j) /= denom;
  }
  return t.make(std::move(y), {a}, [a, n, d](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& y2 = tt.val(id);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < n; ++i) {
      S dot = S(0);
      for (int64_t j = 0; j < d; ++j) dot += g.at(i, j) * y2.at(i, j);
      for (int64_t j = 0; j < d; ++j)
        ga.at(i, j) += y2.at(i, j) * (g.at(i, j) - dot);
    }
  });
}

// LayerNorm over the last dim of [n, d] with per-feature affine.
template <typename S>
int op_layernorm(Tape<S>& t, int x, int gamma, int beta, S eps) {
  const auto& X = t.val(x);
  const auto& G = t.val(gamma);
  const auto& B = t.val(beta);
  if (X.rank() != 2 || G.dim(0) != X.dim(1) || B.dim(0) != X.dim(1))
    fail(ErrorKind::Shape, "layernorm: incompatible shapes");
  int64_t n = X.dim(0), d = X.dim(1);
  Tensor<S> y({n, d});
  for (int64_t i = 0; i < n; ++i) {
    S mu = S(0);
    for (int64_t j = 0; j < d; ++j) mu += X.at(i, j);
    mu /= static_cast<S>(d);
    S var = S(0);
    for (int64_t j = 0; j < d; ++j) {
      S c = X.at(i, j) - mu;
      var += c * c;
    }
    var /= static_cast<S>(d);
    S inv = S(1) / std::sqrt(var + eps);
    for (int64_t j = 0; j < d; ++j)
      y.at(i, j) = (X.at(i, j) - mu) * inv * G[j] + B[j];
  }
  return t.make(std::move(y), {x, gamma, beta},
                [x, gamma, beta, eps, n, d](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& X2 = tt.val(x);
    const auto& G2 = tt.val(gamma);
    for (int64_t i = 0; i < n; ++i) {
      S mu = S(0);
      for (int64_t j = 0; j < d; ++j) mu += X2.at(i, j);
      mu /= static_cast<S>(d);
      S var = S(0);
      for (int64_t j = 0; j < d; ++j) {
        S c = X2.at(i, j) - mu;
        var += c * c;
      }
      var /= static_cast<S>(d);
      S inv = S(1) / std::sqrt(var + eps);
      // dy w.r.t. normalized value
      S sum_dn = S(0), sum_dn_xn = S(0);
      for (int64_t j = 0; j < d; ++j) {
        S xn = (X2.at(i, j) - mu) * inv;
        S dn = g.at(i, j) * G2[j];
        sum_dn += dn;
        sum_dn_xn += dn * xn;
        if (tt.needs_grad(gamma)) tt.grad(gamma)[j] += g.at(i, j) * xn;
        if (tt.needs_grad(beta)) tt.grad(beta)[j] += g.at(i, j);
      }
      if (tt.needs_grad(x)) {
        auto& gx = tt.grad(x);
        for (int64_t j = 0; j < d; ++j) {
          S xn = (X2.at(i, j) - mu) * inv;
          S dn = g.at(i, j) * G2[j];
          gx.at(i, j) += inv * (dn - sum_dn / static_cast<S>(d) -
                                xn * sum_dn_xn / static_cast<S>(d));
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Grid ops (3D tensors [C, H, W])
// ---------------------------------------------------------------------------

// tokens [H*W, D] -> grid [D, H, W], row-major token order.
template <typename S>
int op_tokens_to_grid(Tape<S>& t, int a, int64_t h, int64_t w) {
  const auto& A = t.val(a);
  if (A.rank() != 2 || A.dim(0) != h * w)
    fail(ErrorKind::Shape, "tokens_to_grid: token count " +
                               std::to_string(A.dim(0)) + " is not " +
                               std::to_string(h) + "x" + std::to_string(w));
  int64_t d = A.dim(1);
  Tensor<S> y({d, h, w});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t c = 0; c < d; ++c) y.at(c, i, j) = A.at(i * w + j, c);
  return t.make(std::move(y), {a}, [a, h, w, d](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j)
        for (int64_t c = 0; c < d; ++c) ga.at(i * w + j, c) += g.at(c, i, j);
  });
}

template <typename S>
int op_grid_to_tokens(Tape<S>& t, int a) {
  const auto& A = t.val(a);
  if (A.rank() != 3) fail(ErrorKind::Shape, "grid_to_tokens: rank-3 expected");
  int64_t d = A.dim(0), h = A.dim(1), w = A.dim(2);
  Tensor<S> y({h * w, d});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t c = 0; c < d; ++c) y.at(i * w + j, c) = A.at(c, i, j);
  return t.make(std::move(y), {a}, [a, h, w, d](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j)
        for (int64_t c = 0; c < d; ++c) ga.at(c, i, j) += g.at(i * w + j, c);
  });
}

// 1x1 convolution: x [Cin, H, W], w [Cout, Cin], b [Cout].
template <typename S>
int op_conv1x1(Tape<S>& t, int x, int w, int b) {
  const auto& X = t.val(x);
  const auto& W = t.val(w);
  const auto& B = t.val(b);
  if (X.rank() != 3 || W.rank() != 2 || W.dim(1) != X.dim(0) ||
      B.dim(0) != W.dim(0))
    fail(ErrorKind::Shape, "conv1x1: incompatible shapes");
  int64_t cin = X.dim(0), h = X.dim(1), wd = X.dim(2), cout = W.dim(0);
  Tensor<S> y({cout, h, wd});
  for (int64_t o = 0; o < cout; ++o)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < wd; ++j) {
        S acc = B[o];
        for (int64_t c = 0; c < cin; ++c) acc += W.at(o, c) * X.at(c, i, j);
        y.at(o, i, j) = acc;
      }
  return t.make(std::move(y), {x, w, b},
                [x, w, b, cin, h, wd, cout](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& X2 = tt.val(x);
    const auto& W2 = tt.val(w);
    for (int64_t o = 0; o < cout; ++o)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < wd; ++j) {
          S gv = g.at(o, i, j);
          if (gv == S(0)) continue;
          if (tt.needs_grad(b)) tt.grad(b)[o] += gv;
          for (int64_t c = 0; c < cin; ++c) {
            if (tt.needs_grad(x)) tt.grad(x).at(c, i, j) += gv * W2.at(o, c);
            if (tt.needs_grad(w)) tt.grad(w).at(o, c) += gv * X2.at(c, i, j);
          }
        }
  });
}

// Depthwise kxk convolution with same-padding: x [C,H,W], w [C,k,k], b [C].
template <typename S>
int op_conv_depthwise(Tape<S>& t, int x, int w, int b, int64_t dilation = 1) {
  const auto& X = t.val(x);
  const auto& W = t.val(w);
  const auto& B = t.val(b);
  if (X.rank() != 3 || W.rank() != 3 || W.dim(0) != X.dim(0) ||
      B.dim(0) != X.dim(0) || W.dim(1) != W.dim(2))
    fail(ErrorKind::Shape, "conv_depthwise: incompatible shapes");
  int64_t c = X.dim(0), h = X.dim(1), wd = X.dim(2), k = W.dim(1);
  int64_t half = k / 2;
  Tensor<S> y({c, h, wd});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < wd; ++j) {
        S acc = B[ch];
        for (int64_t u = 0; u < k; ++u)
          for (int64_t v = 0; v < k; ++v) {
            int64_t ii = i + (u - half) * dilation;
            int64_t jj = j + (v - half) * dilation;
            if (ii < 0 || ii >= h || jj < 0 || jj >= wd) continue;
            acc += W.at(ch, u, v) * X.at(ch, ii, jj);
          }
        y.at(ch, i, j) = acc;
      }
  return t.make(std::move(y), {x, w, b},
                [x, w, b, c, h, wd, k, half, dilation](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& X2 = tt.val(x);
    const auto& W2 = tt.val(w);
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < wd; ++j) {
          S gv = g.at(ch, i, j);
          if (gv == S(0)) continue;
          if (tt.needs_grad(b)) tt.grad(b)[ch] += gv;
          for (int64_t u = 0; u < k; ++u)
            for (int64_t v = 0; v < k; ++v) {
              int64_t ii = i + (u - half) * dilation;
              int64_t jj = j + (v - half) * dilation;
              if (ii < 0 || ii >= h || jj < 0 || jj >= wd) continue;
              if (tt.needs_grad(w))
                tt.grad(w).at(ch, u, v) += gv * X2.at(ch, ii, jj);
              if (tt.needs_grad(x))
                tt.grad(x).at(ch, ii, jj) += gv * W2.at(ch, u, v);
            }
        }
  });
}

// Dense kxk convolution with same-padding and dilation:
// x [Cin,H,W], w [Cout,Cin,k,k], b [Cout].
template <typename S>
int op_conv_dense(Tape<S>& t, int x, int w, int b, int64_t dilation = 1) {
  const auto& X = t.val(x);
  const auto& W = t.val(w);
  const auto& B = t.val(b);
  if (X.rank() != 3 || W.rank() != 4 || W.dim(1) != X.dim(0) ||
      B.dim(0) != W.dim(0) || W.dim(2) != W.dim(3))
    fail(ErrorKind::Shape, "conv_dense: incompatible shapes");
  int64_t cin = X.dim(0), h = X.dim(1), wd = X.dim(2);
  int64_t cout = W.dim(0), k = W.dim(2), half = k / 2;
  Tensor<S> y({cout, h, wd});
  for (int64_t o = 0; o < cout; ++o)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < wd; ++j) {
        S acc = B[o];
        for (int64_t c = 0; c < cin; ++c)
          for (int64_t u = 0; u < k; ++u)
            for (int64_t v = 0; v < k; ++v) {
              int64_t ii = i + (u - half) * dilation;
              int64_t jj = j + (v - half) * dilation;
              if (ii < 0 || ii >= h || jj < 0 || jj >= wd) continue;
              acc += W.at(o, c, u, v) * X.at(c, ii, jj);
            }
        y.at(o, i, j) = acc;
      }
  return t.make(std::move(y), {x, w, b},
                [x, w, b, cin, h, wd, cout, k, half, dilation](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& X2 = tt.val(x);
    const auto& W2 = tt.val(w);
    for (int64_t o = 0; o < cout; ++o)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < wd; ++j) {
          S gv = g.at(o, i, j);
          if (gv == S(0)) continue;
          if (tt.needs_grad(b)) tt.grad(b)[o] += gv;
          for (int64_t c = 0; c < cin; ++c)
            for (int64_t u = 0; u < k; ++u)
              for (int64_t v = 0; v < k; ++v) {
                int64_t ii = i + (u - half) * dilation;
                int64_t jj = j + (v - half) * dilation;
                if (ii < 0 || ii >= h || jj < 0 || jj >= wd) continue;
                if (tt.needs_grad(w))
                  tt.grad(w).at(o, c, u, v) += gv * X2.at(c, ii, jj);
                if (tt.needs_grad(x))
                  tt.grad(x).at(c, ii, jj) += gv * W2.at(o, c, u, v);
              }
        }
  });
}

template <typename S>
int op_concat_channels(Tape<S>& t, const std::vector<int>& parts) {
  int64_t h = t.val(parts[0]).dim(1), w = t.val(parts[0]).dim(2);
  int64_t cs = 0;
  for (int p : parts) {
    const auto& P = t.val(p);
    if (P.rank() != 3 || P.dim(1) != h || P.dim(2) != w)
      fail(ErrorKind::Shape, "concat_channels: spatial mismatch");
    cs += P.dim(0);
  }
  Tensor<S> y({cs, h, w});
  int64_t c = 0;
  for (int p : parts) {
    const auto& P = t.val(p);
    for (int64_t pc = 0; pc < P.dim(0); ++pc)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) y.at(c + pc, i, j) = P.at(pc, i, j);
    c += P.dim(0);
  }
  return t.make(std::move(y), parts, [parts, h, w](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    int64_t c2 = 0;
    for (int p : parts) {
      int64_t pc = tt.val(p).dim(0);
      if (tt.needs_grad(p)) {
        auto& gp = tt.grad(p);
        for (int64_t cc = 0; cc < pc; ++cc)
          for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) gp.at(cc, i, j) += g.at(c2 + cc, i, j);
      }
      c2 += pc;
    }
  });
}

template <typename S>
int op_slice_channels(Tape<S>& t, int a, int64_t c0, int64_t c1) {
  const auto& A = t.val(a);
  if (A.rank() != 3 || c0 < 0 || c1 > A.dim(0) || c0 > c1)
    fail(ErrorKind::Shape, "slice_channels: bad range");
  int64_t h = A.dim(1), w = A.dim(2);
  Tensor<S> y({c1 - c0, h, w});
  for (int64_t c = c0; c < c1; ++c)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) y.at(c - c0, i, j) = A.at(c, i, j);
  return t.make(std::move(y), {a}, [a, c0, c1, h, w](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    auto& ga = tt.grad(a);
    for (int64_t c = c0; c < c1; ++c)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) ga.at(c, i, j) += g.at(c - c0, i, j);
  });
}

// Mean over channels: [C,H,W] -> [1,H,W]. The paper's average channel pooling.
template <typename S>
int op_mean_channels(Tape<S>& t, int a) {
  const auto& A = t.val(a);
  if (A.rank() != 3) fail(ErrorKind::Shape, "mean_channels: rank-3 expected");
  int64_t c = A.dim(0), h = A.dim(1), w = A.dim(2);
  Tensor<S> y({1, h, w});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      S acc = S(0);
      for (int64_t ch = 0; ch < c; ++ch) acc += A.at(ch, i, j);
      y.at(0, i, j) = acc / static_cast<S>(c);
    }
  return t.make(std::move(y), {a}, [a, c, h, w](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        S gv = g.at(0, i, j) / static_cast<S>(c);
        for (int64_t ch = 0; ch < c; ++ch) ga.at(ch, i, j) += gv;
      }
  });
}

// Softmax across channels at each spatial location: [C,H,W].
template <typename S>
int op_softmax_channels(Tape<S>& t, int a) {
  const auto& A = t.val(a);
  if (A.rank() != 3) fail(ErrorKind::Shape, "softmax_channels: rank-3 expected");
  int64_t c = A.dim(0), h = A.dim(1), w = A.dim(2);
  Tensor<S> y({c, h, w});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      S mx = A.at(0, i, j);
      for (int64_t ch = 1; ch < c; ++ch) mx = std::max(mx, A.at(ch, i, j));
      S denom = S(0);
      for (int64_t ch = 0; ch < c; ++ch) {
        S e = std::exp(A.at(ch, i, j) - mx);
        y.at(ch, i, j) = e;
        denom += e;
      }
      for (int64_t ch = 0; ch < c; ++ch) y.at(ch, i, j) /= denom;
    }
  return t.make(std::move(y), {a}, [a, c, h, w](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& y2 = tt.val(id);
    auto& ga = tt.grad(a);
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        S dot = S(0);
        for (int64_t ch = 0; ch < c; ++ch) dot += g.at(ch, i, j) * y2.at(ch, i, j);
        for (int64_t ch = 0; ch < c; ++ch)
          ga.at(ch, i, j) += y2.at(ch, i, j) * (g.at(ch, i, j) - dot);
      }
  });
}

// Softmax over the spatial positions of each channel: [C,H,W].
template <typename S>
int op_spatial_softmax(Tape<S>& t, int a) {
  const auto& A = t.val(a);
  if (A.rank() != 3) fail(ErrorKind::Shape, "spatial_softmax: rank-3 expected");
  int64_t c = A.dim(0), h = A.dim(1), w = A.dim(2);
  Tensor<S> y({c, h, w});
  for (int64_t ch = 0; ch < c; ++ch) {
    S mx = A.at(ch, 0, 0);
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) mx = std::max(mx, A.at(ch, i, j));
    S denom = S(0);
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        S e = std::exp(A.at(ch, i, j) - mx);
        y.at(ch, i, j) = e;
        denom += e;
      }
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) y.at(ch, i, j) /= denom;
  }
  return t.make(std::move(y), {a}, [a, c, h, w](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& y2 = tt.val(id);
    auto& ga = tt.grad(a);
    for (int64_t ch = 0; ch < c; ++ch) {
      S dot = S(0);
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) dot += g.at(ch, i, j) * y2.at(ch, i, j);
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
          ga.at(ch, i, j) += y2.at(ch, i, j) * (g.at(ch, i, j) - dot);
    }
  });
}

// Multiply every channel of x [C,H,W] by a single-channel map w [1,H,W].
template <typename S>
int op_mul_broadcast_channel(Tape<S>& t, int x, int w) {
  const auto& X = t.val(x);
  const auto& W = t.val(w);
  if (X.rank() != 3 || W.rank() != 3 || W.dim(0) != 1 || W.dim(1) != X.dim(1) ||
      W.dim(2) != X.dim(2))
    fail(ErrorKind::Shape, "mul_broadcast_channel: incompatible shapes");
  int64_t c = X.dim(0), h = X.dim(1), wd = X.dim(2);
  Tensor<S> y({c, h, wd});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < wd; ++j) y.at(ch, i, j) = X.at(ch, i, j) * W.at(0, i, j);
  return t.make(std::move(y), {x, w}, [x, w, c, h, wd](Tape<S>& tt, int id) {
    const auto& g = tt.grad(id);
    const auto& X2 = tt.val(x);
    const auto& W2 = tt.val(w);
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < wd; ++j) {
          S gv = g.at(ch, i, j);
          if (tt.needs_grad(x)) tt.grad(x).at(ch, i, j) += gv * W2.at(0, i, j);
          if (tt.needs_grad(w)) tt.grad(w).at(0, i, j) += gv * X2.at(ch, i, j);
        }
  });
}

}  // namespace m3pt
