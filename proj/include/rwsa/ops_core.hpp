// Copyright 2026 the rwsaunet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "rwsa/graph.hpp"
#include "rwsa/tensor.hpp"

// Differentiable primitives. Broadcasting is restricted to scalar-with-array
// and suffix (trailing-axis) expansion; everything else is a shape error.

namespace rwsa {

namespace detail {

template <class T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                             const char* op) {
  check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

template <class T>
inline void accumulate(Var<T>& p, const Tensor<T>& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  p->grad.array() += g.array();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Arithmetic
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a->value, b->value, "add");
  Tensor<T> out(a->value.shape());
  out.array() = a->value.array() + b->value.array();
  return make_op_node<T>("add", std::move(out), {a, b}, [](Node<T>& n) {
    detail::accumulate(n.parents[0], n.grad);
    detail::accumulate(n.parents[1], n.grad);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a->value, b->value, "sub");
  Tensor<T> out(a->value.shape());
  out.array() = a->value.array() - b->value.array();
  return make_op_node<T>("sub", std::move(out), {a, b}, [](Node<T>& n) {
    detail::accumulate(n.parents[0], n.grad);
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      n.parents[1]->grad.array() -= n.grad.array();
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a->value, b->value, "mul");
  Tensor<T> out(a->value.shape());
  out.array() = a->value.array() * b->value.array();
  Tensor<T> av = a->value, bv = b->value;
  return make_op_node<T>("mul", std::move(out), {a, b}, [av, bv](Node<T>& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      n.parents[0]->grad.array() += n.grad.array() * bv.array();
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      n.parents[1]->grad.array() += n.grad.array() * av.array();
    }
  });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a->value, b->value, "div");
  Tensor<T> out(a->value.shape());
  out.array() = a->value.array() / b->value.array();
  Tensor<T> av = a->value, bv = b->value;
  return make_op_node<T>("div", std::move(out), {a, b}, [av, bv](Node<T>& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      n.parents[0]->grad.array() += n.grad.array() / bv.array();
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      n.parents[1]->grad.array() -=
          n.grad.array() * av.array() / (bv.array() * bv.array());
    }
  });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T c) {
  Tensor<T> out(a->value.shape());
  out.array() = a->value.array() + c;
  return make_op_node<T>("add_scalar", std::move(out), {a}, [](Node<T>& n) {
    detail::accumulate(n.parents[0], n.grad);
  });
}

template <class T>
Var<T> mul_scalar(const Var<T>& a, T c) {
  Tensor<T> out(a->value.shape());
  out.array() = a->value.array() * c;
  return make_op_node<T>("mul_scalar", std::move(out), {a}, [c](Node<T>& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      n.parents[0]->grad.array() += n.grad.array() * c;
    }
  });
}

template <class T>
Var<T> neg(const Var<T>& a) {
  return mul_scalar(a, T(-1));
}

// b's shape must equal a suffix of a's shape (trailing-axis expansion).
template <class T>
inline void check_suffix(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  bool ok = bs.size() <= as.size();
  if (ok)
    for (std::size_t i = 0; i < bs.size(); ++i)
      ok = ok && bs[bs.size() - 1 - i] == as[as.size() - 1 - i];
  check(ok, std::string(op) + ": " + shape_str(bs) +
                " is not a trailing-axis suffix of " + shape_str(as));
}

template <class T>
Var<T> add_suffix(const Var<T>& a, const Var<T>& b) {
  check_suffix(a->value, b->value, "add_suffix");
  const std::size_t m = b->value.size();
  const std::size_t reps = a->value.size() / m;
  Tensor<T> out(a->value.shape());
  const T* ap = a->value.data();
  const T* bp = b->value.data();
  T* op_ = out.data();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t i = 0; i < m; ++i) op_[r * m + i] = ap[r * m + i] + bp[i];
  return make_op_node<T>("add_suffix", std::move(out), {a, b},
                         [m, reps](Node<T>& n) {
                           detail::accumulate(n.parents[0], n.grad);
                           if (n.parents[1]->requires_grad) {
                             n.parents[1]->ensure_grad();
                             T* gb = n.parents[1]->grad.data();
                             const T* g = n.grad.data();
                             for (std::size_t r = 0; r < reps; ++r)
                               for (std::size_t i = 0; i < m; ++i)
                                 gb[i] += g[r * m + i];
                           }
                         });
}

template <class T>
Var<T> mul_suffix(const Var<T>& a, const Var<T>& b) {
  check_suffix(a->value, b->value, "mul_suffix");
  const std::size_t m = b->value.size();
  const std::size_t reps = a->value.size() / m;
  Tensor<T> out(a->value.shape());
  const T* ap = a->value.data();
  const T* bp = b->value.data();
  T* op_ = out.data();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t i = 0; i < m; ++i) op_[r * m + i] = ap[r * m + i] * bp[i];
  Tensor<T> av = a->value, bv = b->value;
  return make_op_node<T>(
      "mul_suffix", std::move(out), {a, b}, [m, reps, av, bv](Node<T>& n) {
        const T* g = n.grad.data();
        if (n.parents[0]->requires_grad) {
          n.parents[0]->ensure_grad();
          T* ga = n.parents[0]->grad.data();
          const T* bp = bv.data();
          for (std::size_t r = 0; r < reps; ++r)
            for (std::size_t i = 0; i < m; ++i)
              ga[r * m + i] += g[r * m + i] * bp[i];
        }
        if (n.parents[1]->requires_grad) {
          n.parents[1]->ensure_grad();
          T* gb = n.parents[1]->grad.data();
          const T* ap = av.data();
          for (std::size_t r = 0; r < reps; ++r)
            for (std::size_t i = 0; i < m; ++i)
              gb[i] += g[r * m + i] * ap[r * m + i];
        }
      });
}

// ---------------------------------------------------------------------------
// Matmul / linear
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
using MatMap = Eigen::Map<
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class T>
ConstMatMap<T> as_mat(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(t.data(), rows, cols);
}
template <class T>
MatMap<T> as_mat(Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return MatMap<T>(t.data(), rows, cols);
}

}  // namespace detail

// x: [..., k] times w: [k, n], plus optional bias [n]. Leading axes of x are
// flattened into the row dimension.
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = nullptr) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  check(ws.size() == 2, "linear: weight must be rank 2");
  check(!xs.empty() && xs.back() == ws[0],
        "linear: inner extents differ: " + shape_str(xs) + " x " +
            shape_str(ws));
  const std::size_t k = ws[0], n = ws[1];
  const std::size_t rows = x->value.size() / k;
  Shape out_shape(xs.begin(), xs.end() - 1);
  out_shape.push_back(n);
  Tensor<T> out(out_shape);
  detail::as_mat(out, rows, n).noalias() =
      detail::as_mat(x->value, rows, k) * detail::as_mat(w->value, k, n);
  if (b) {
    check(b->value.shape() == Shape{n}, "linear: bias extent mismatch");
    detail::as_mat(out, rows, n).rowwise() +=
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b->value.data(), n);
  }
  Tensor<T> xv = x->value, wv = w->value;
  std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b}
                                  : std::vector<Var<T>>{x, w};
  return make_op_node<T>(
      "linear", std::move(out), std::move(parents),
      [xv, wv, rows, k, n](Node<T>& n_) {
        auto gy = detail::as_mat(n_.grad, rows, n);
        if (n_.parents[0]->requires_grad) {
          n_.parents[0]->ensure_grad();
          detail::as_mat(n_.parents[0]->grad, rows, k).noalias() +=
              gy * detail::as_mat(wv, k, n).transpose();
        }
        if (n_.parents[1]->requires_grad) {
          n_.parents[1]->ensure_grad();
          detail::as_mat(n_.parents[1]->grad, k, n).noalias() +=
              detail::as_mat(xv, rows, k).transpose() * gy;
        }
        if (n_.parents.size() > 2 && n_.parents[2]->requires_grad) {
          n_.parents[2]->ensure_grad();
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(
              n_.parents[2]->grad.data(), n) += gy.colwise().sum();
        }
      });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  return linear<T>(a, b);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Var<T> reduce_sum(const Var<T>& x) {
  Tensor<T> out = Tensor<T>::scalar(x->value.array().sum());
  return make_op_node<T>("reduce_sum", std::move(out), {x}, [](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad.array() += n.grad[0];
  });
}

template <class T>
Var<T> reduce_mean(const Var<T>& x) {
  const T inv = T(1) / static_cast<T>(x->value.size());
  return mul_scalar(reduce_sum(x), inv);
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

// Row-major metadata reshape; the buffer is shared, not copied.
template <class T>
Var<T> reshape(const Var<T>& x, Shape s, std::string axes = "") {
  Tensor<T> out = x->value.reshaped(std::move(s), std::move(axes));
  return make_op_node<T>("reshape", std::move(out), {x}, [](Node<T>& n) {
    detail::accumulate(n.parents[0], n.grad.reshaped(n.parents[0]->value.shape()));
  });
}

namespace detail {

inline std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

template <class T>
void permute_copy(const Tensor<T>& in, Tensor<T>& out,
                  const std::vector<std::size_t>& perm) {
  const auto& is = in.shape();
  const auto ist = strides_of(is);
  const auto ost = strides_of(out.shape());
  const std::size_t r = is.size();
  const std::size_t n = in.size();
  const T* src = in.data();
  T* dst = out.data();
  // Walk the output linearly and gather from the permuted source index.
  std::vector<std::size_t> idx(r, 0);
  std::vector<std::size_t> in_stride_for_out(r);
  for (std::size_t i = 0; i < r; ++i) in_stride_for_out[i] = ist[perm[i]];
  std::size_t src_off = 0;
  for (std::size_t o = 0; o < n; ++o) {
    dst[o] = src[src_off];
    for (std::size_t i = r; i-- > 0;) {
      idx[i]++;
      src_off += in_stride_for_out[i];
      if (idx[i] < out.shape()[i]) break;
      src_off -= in_stride_for_out[i] * idx[i];
      idx[i] = 0;
    }
  }
  (void)ost;
}

}  // namespace detail

template <class T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm) {
  const auto& is = x->value.shape();
  check(perm.size() == is.size(), "permute: rank mismatch");
  Shape os(perm.size());
  std::string oaxes;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    check(perm[i] < is.size(), "permute: bad axis");
    os[i] = is[perm[i]];
    if (!x->value.axes().empty()) oaxes += x->value.axes()[perm[i]];
  }
  Tensor<T> out(os);
  out.set_axes(oaxes);
  detail::permute_copy(x->value, out, perm);
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return make_op_node<T>("permute", std::move(out), {x}, [inv](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor<T> gx(n.parents[0]->value.shape());
    detail::permute_copy(n.grad, gx, inv);
    detail::accumulate(n.parents[0], gx);
  });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis) {
  check(!xs.empty(), "concat: no inputs");
  const auto& s0 = xs[0]->value.shape();
  check(axis < s0.size(), "concat: bad axis");
  Shape os = s0;
  std::size_t total = 0;
  for (const auto& x : xs) {
    const auto& s = x->value.shape();
    check(s.size() == s0.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis) check(s[i] == s0[i], "concat: extent mismatch off-axis");
    total += s[axis];
  }
  os[axis] = total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  Tensor<T> out(os);
  std::vector<std::size_t> spans;
  std::size_t off = 0;
  for (const auto& x : xs) {
    const std::size_t span = x->value.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * total * inner + off,
                  x->value.data() + o * span, span * sizeof(T));
    spans.push_back(span);
    off += span;
  }
  return make_op_node<T>(
      "concat", std::move(out), xs, [outer, inner, total, spans](Node<T>& n) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
          auto& p = n.parents[pi];
          const std::size_t span = spans[pi];
          if (p->requires_grad) {
            p->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
              const T* g = n.grad.data() + o * total * inner + off;
              T* gp = p->grad.data() + o * span;
              for (std::size_t i = 0; i < span; ++i) gp[i] += g[i];
            }
          }
          off += span;
        }
      });
}

template <class T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start,
             std::size_t len) {
  const auto& s = x->value.shape();
  check(axis < s.size() && start + len <= s[axis], "slice: out of range");
  Shape os = s;
  os[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Tensor<T> out(os);
  const std::size_t in_span = s[axis] * inner;
  const std::size_t out_span = len * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * out_span,
                x->value.data() + o * in_span + start * inner,
                out_span * sizeof(T));
  return make_op_node<T>(
      "slice", std::move(out), {x},
      [outer, inner, in_span, out_span, start](Node<T>& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          const T* g = n.grad.data() + o * out_span;
          T* gp = n.parents[0]->grad.data() + o * in_span + start * inner;
          for (std::size_t i = 0; i < out_span; ++i) gp[i] += g[i];
        }
      });
}

template <class T>
Var<T> flip(const Var<T>& x, std::size_t axis) {
  const auto& s = x->value.shape();
  check(axis < s.size(), "flip: bad axis");
  std::size_t outer = 1, inner = 1;
  const std::size_t m = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  auto do_flip = [outer, inner, m](const Tensor<T>& in, Tensor<T>& out) {
    const T* src = in.data();
    T* dst = out.data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < m; ++j)
        std::memcpy(dst + (o * m + j) * inner,
                    src + (o * m + (m - 1 - j)) * inner, inner * sizeof(T));
  };
  Tensor<T> out(s);
  out.set_axes(x->value.axes());
  do_flip(x->value, out);
  return make_op_node<T>("flip", std::move(out), {x}, [do_flip](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor<T> gx(n.grad.shape());
    do_flip(n.grad, gx);
    detail::accumulate(n.parents[0], gx);
  });
}

template <class T>
Var<T> pad_zero(const Var<T>& x, std::size_t axis, std::size_t before,
                std::size_t after) {
  const auto& s = x->value.shape();
  check(axis < s.size(), "pad_zero: bad axis");
  Shape os = s;
  os[axis] = s[axis] + before + after;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t m = s[axis];
  Tensor<T> out(os, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + (o * os[axis] + before) * inner,
                x->value.data() + o * m * inner, m * inner * sizeof(T));
  return make_op_node<T>(
      "pad_zero", std::move(out), {x},
      [outer, inner, m, before, total = os[axis]](Node<T>& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          const T* g = n.grad.data() + (o * total + before) * inner;
          T* gp = n.parents[0]->grad.data() + o * m * inner;
          for (std::size_t i = 0; i < m * inner; ++i) gp[i] += g[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Unary nonlinearities
// ---------------------------------------------------------------------------

template <class T>
Var<T> exp(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  out.array() = x->value.array().exp();
  Tensor<T> y = out;
  return make_op_node<T>("exp", std::move(out), {x}, [y](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad.array() += n.grad.array() * y.array();
  });
}

template <class T>
Var<T> log(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  out.array() = x->value.array().log();
  Tensor<T> xv = x->value;
  return make_op_node<T>("log", std::move(out), {x}, [xv](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad.array() += n.grad.array() / xv.array();
  });
}

template <class T>
Var<T> sqrt(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  out.array() = x->value.array().sqrt();
  Tensor<T> y = out;
  return make_op_node<T>("sqrt", std::move(out), {x}, [y](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad.array() +=
        n.grad.array() / (T(2) * y.array()).max(T(1e-30));
  });
}

template <class T>
Var<T> abs(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  out.array() = x->value.array().abs();
  Tensor<T> xv = x->value;
  return make_op_node<T>("abs", std::move(out), {x}, [xv](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad.array() +=
        n.grad.array() * xv.array().sign();
  });
}

template <class T>
Var<T> sin(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  out.array() = x->value.array().sin();
  Tensor<T> xv = x->value;
  return make_op_node<T>("sin", std::move(out), {x}, [xv](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad.array() += n.grad.array() * xv.array().cos();
  });
}

template <class T>
Var<T> cos(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  out.array() = x->value.array().cos();
  Tensor<T> xv = x->value;
  return make_op_node<T>("cos", std::move(out), {x}, [xv](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad.array() -= n.grad.array() * xv.array().sin();
  });
}

// x^p for x >= 0. The derivative base is clamped away from zero so that
// exponents < 1 (power-law compression) stay finite at the origin.
template <class T>
Var<T> pow_const(const Var<T>& x, T p) {
  Tensor<T> out(x->value.shape());
  out.array() = x->value.array().pow(p);
  Tensor<T> xv = x->value;
  return make_op_node<T>("pow_const", std::move(out), {x}, [xv, p](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad.array() +=
        n.grad.array() * p * xv.array().max(T(1e-12)).pow(p - T(1));
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  out.array() = T(1) / (T(1) + (-x->value.array()).exp());
  Tensor<T> y = out;
  return make_op_node<T>("sigmoid", std::move(out), {x}, [y](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad.array() +=
        n.grad.array() * y.array() * (T(1) - y.array());
  });
}

template <class T>
Var<T> softplus(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  // log1p(exp(x)) with a linear tail to avoid overflow.
  out.array() = (x->value.array() < T(20))
                    .select((x->value.array().exp() + T(1)).log(),
                            x->value.array());
  Tensor<T> xv = x->value;
  return make_op_node<T>("softplus", std::move(out), {x}, [xv](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad.array() +=
        n.grad.array() / (T(1) + (-xv.array()).exp());
  });
}

template <class T>
Var<T> silu(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  out.array() =
      x->value.array() / (T(1) + (-x->value.array()).exp());
  Tensor<T> xv = x->value;
  return make_op_node<T>("silu", std::move(out), {x}, [xv](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    auto s = T(1) / (T(1) + (-xv.array()).exp());
    n.parents[0]->grad.array() +=
        n.grad.array() * (s + xv.array() * s * (T(1) - s));
  });
}

// Two-argument arctangent; atan2(0, 0) is defined as 0 with zero gradients.
template <class T>
Var<T> atan2(const Var<T>& y, const Var<T>& x) {
  detail::check_same_shape(y->value, x->value, "atan2");
  Tensor<T> out(y->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    T yv = y->value[i], xv = x->value[i];
    out[i] = (yv == T(0) && xv == T(0)) ? T(0) : std::atan2(yv, xv);
  }
  Tensor<T> yv = y->value, xv = x->value;
  return make_op_node<T>("atan2", std::move(out), {y, x}, [yv, xv](Node<T>& n) {
    const std::size_t m = yv.size();
    auto add_grads = [&](Node<T>& p, bool wrt_y) {
      if (!p.requires_grad) return;
      p.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        T r2 = xv[i] * xv[i] + yv[i] * yv[i];
        if (r2 == T(0)) continue;
        T d = wrt_y ? xv[i] / r2 : -yv[i] / r2;
        p.grad[i] += n.grad[i] * d;
      }
    };
    add_grads(*n.parents[0], true);
    add_grads(*n.parents[1], false);
  });
}

// Anti-wrapping distance |x mod 2pi| mapped to [0, pi]: the absolute value of
// x wrapped into (-pi, pi]. Derivative is the sign of the wrapped value.
template <class T>
Var<T> wrapped_abs(const Var<T>& x) {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  Tensor<T> out(x->value.shape());
  Tensor<T> sign(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = static_cast<double>(x->value[i]);
    double w = v - kTwoPi * std::round(v / kTwoPi);
    out[i] = static_cast<T>(std::fabs(w));
    sign[i] = w > 0 ? T(1) : (w < 0 ? T(-1) : T(0));
  }
  return make_op_node<T>("wrapped_abs", std::move(out), {x},
                         [sign](Node<T>& n) {
                           if (!n.parents[0]->requires_grad) return;
                           n.parents[0]->ensure_grad();
                           n.parents[0]->grad.array() +=
                               n.grad.array() * sign.array();
                         });
}

}  // namespace rwsa
