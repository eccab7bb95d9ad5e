// Copyright 2026 the rwsaunet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "rwsa/graph.hpp"
#include "rwsa/ops_core.hpp"

namespace rwsa {

struct Conv2dSpec {
  std::size_t in_ch = 0, out_ch = 0;
  std::size_t kT = 1, kF = 1;
  std::size_t sT = 1, sF = 1;
  std::size_t dT = 1, dF = 1;
  std::size_t groups = 1;
  bool transposed = false;
  bool bias = true;

  void validate() const {
    check(in_ch > 0 && out_ch > 0, "conv2d: channel counts must be positive");
    check(kT >= 1 && kF >= 1 && sT >= 1 && sF >= 1 && dT >= 1 && dF >= 1,
          "conv2d: kernel/stride/dilation must be >= 1");
    check(in_ch % groups == 0 && out_ch % groups == 0,
          "conv2d: channels must be divisible by groups");
  }

  // Normal convs use "same"-style zero padding of (k-1)*d total per axis,
  // which keeps extents at stride 1 and yields ceil(in/s) otherwise.
  // Transposed convs use no padding: out = (in-1)*s + (k-1)*d + 1.
  Shape weight_shape() const {
    return transposed ? Shape{in_ch, out_ch / groups, kT, kF}
                      : Shape{out_ch, in_ch / groups, kT, kF};
  }
};

namespace convdetail {

struct Geom {
  // Geometry of a NORMAL convolution; transposed convs run the adjoint.
  std::size_t Cin, Cout, groups;
  std::size_t kT, kF, sT, sF, dT, dF;
  std::size_t Tin, Fin, Tout, Fout;
  std::size_t padT, padF;  // left pad; right pad is (k-1)*d - left
  std::size_t K() const { return (Cin / groups) * kT * kF; }
};

inline Geom normal_geom(const Conv2dSpec& c, std::size_t Tin, std::size_t Fin) {
  Geom g;
  g.Cin = c.in_ch;
  g.Cout = c.out_ch;
  g.groups = c.groups;
  g.kT = c.kT; g.kF = c.kF;
  g.sT = c.sT; g.sF = c.sF;
  g.dT = c.dT; g.dF = c.dF;
  g.Tin = Tin; g.Fin = Fin;
  const std::size_t eT = (c.kT - 1) * c.dT + 1, eF = (c.kF - 1) * c.dF + 1;
  g.padT = (eT - 1) / 2;
  g.padF = (eF - 1) / 2;
  const std::size_t totT = Tin + (eT - 1), totF = Fin + (eF - 1);
  check(totT >= eT && totF >= eF, "conv2d: non-positive output extent");
  g.Tout = (totT - eT) / c.sT + 1;
  g.Fout = (totF - eF) / c.sF + 1;
  return g;
}

// Geometry whose adjoint realizes the transposed convolution x -> y.
inline Geom transposed_geom(const Conv2dSpec& c, std::size_t Tin,
                            std::size_t Fin) {
  Geom g;
  g.Cin = c.out_ch;   // data side of the underlying normal conv
  g.Cout = c.in_ch;   // y side of the underlying normal conv
  g.groups = c.groups;
  g.kT = c.kT; g.kF = c.kF;
  g.sT = c.sT; g.sF = c.sF;
  g.dT = c.dT; g.dF = c.dF;
  g.Tout = Tin; g.Fout = Fin;  // the transposed INPUT plays the dY role
  g.Tin = (Tin - 1) * c.sT + (c.kT - 1) * c.dT + 1;
  g.Fin = (Fin - 1) * c.sF + (c.kF - 1) * c.dF + 1;
  g.padT = 0; g.padF = 0;
  return g;
}

// col layout: [K, P] with K = Cin/g * kT * kF, P a tile of output positions.
template <class T>
void im2col_tile(const T* x, const Geom& g, std::size_t group, std::size_t p0,
                 std::size_t np, T* col) {
  const std::size_t cpg = g.Cin / g.groups;
  const std::size_t c0 = group * cpg;
  for (std::size_t ci = 0; ci < cpg; ++ci) {
    const T* xc = x + (c0 + ci) * g.Tin * g.Fin;
    for (std::size_t kt = 0; kt < g.kT; ++kt)
      for (std::size_t kf = 0; kf < g.kF; ++kf) {
        T* crow = col + ((ci * g.kT + kt) * g.kF + kf) * np;
        for (std::size_t p = 0; p < np; ++p) {
          const std::size_t pos = p0 + p;
          const std::size_t to = pos / g.Fout, fo = pos % g.Fout;
          const std::ptrdiff_t ti =
              static_cast<std::ptrdiff_t>(to * g.sT + kt * g.dT) -
              static_cast<std::ptrdiff_t>(g.padT);
          const std::ptrdiff_t fi =
              static_cast<std::ptrdiff_t>(fo * g.sF + kf * g.dF) -
              static_cast<std::ptrdiff_t>(g.padF);
          crow[p] = (ti >= 0 && ti < static_cast<std::ptrdiff_t>(g.Tin) &&
                     fi >= 0 && fi < static_cast<std::ptrdiff_t>(g.Fin))
                        ? xc[ti * g.Fin + fi]
                        : T(0);
        }
      }
  }
}

template <class T>
void col2im_tile(const T* col, const Geom& g, std::size_t group,
                 std::size_t p0, std::size_t np, T* dx) {
  const std::size_t cpg = g.Cin / g.groups;
  const std::size_t c0 = group * cpg;
  for (std::size_t ci = 0; ci < cpg; ++ci) {
    T* xc = dx + (c0 + ci) * g.Tin * g.Fin;
    for (std::size_t kt = 0; kt < g.kT; ++kt)
      for (std::size_t kf = 0; kf < g.kF; ++kf) {
        const T* crow = col + ((ci * g.kT + kt) * g.kF + kf) * np;
        for (std::size_t p = 0; p < np; ++p) {
          const std::size_t pos = p0 + p;
          const std::size_t to = pos / g.Fout, fo = pos % g.Fout;
          const std::ptrdiff_t ti =
              static_cast<std::ptrdiff_t>(to * g.sT + kt * g.dT) -
              static_cast<std::ptrdiff_t>(g.padT);
          const std::ptrdiff_t fi =
              static_cast<std::ptrdiff_t>(fo * g.sF + kf * g.dF) -
              static_cast<std::ptrdiff_t>(g.padF);
          if (ti >= 0 && ti < static_cast<std::ptrdiff_t>(g.Tin) && fi >= 0 &&
              fi < static_cast<std::ptrdiff_t>(g.Fin))
            xc[ti * g.Fin + fi] += crow[p];
        }
      }
  }
}

inline std::size_t tile_positions(const Geom& g) {
  const std::size_t K = std::max<std::size_t>(g.K(), 1);
  const std::size_t cap = (2u << 20) / K;  // keep the col buffer ~8 MB
  return std::max<std::size_t>(g.Fout, std::min<std::size_t>(g.Tout * g.Fout,
                                                             std::max<std::size_t>(cap, 1)));
}

template <class T>
using CMat = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using MMat =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// y[Cout, Tout*Fout] = W * col(x), one image.
template <class T>
void conv_fwd(const T* x, const T* w, const Geom& g, T* y) {
  const std::size_t P = g.Tout * g.Fout, K = g.K();
  const std::size_t opg = g.Cout / g.groups;
  const std::size_t tile = tile_positions(g);
  std::vector<T> col(K * tile);
  for (std::size_t grp = 0; grp < g.groups; ++grp) {
    CMat<T> W(w + grp * opg * K, opg, K);
    for (std::size_t p0 = 0; p0 < P; p0 += tile) {
      const std::size_t np = std::min(tile, P - p0);
      im2col_tile(x, g, grp, p0, np, col.data());
      // Output rows are strided by P; write through a per-row map.
      Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> prod =
          W * CMat<T>(col.data(), K, np);
      for (std::size_t co = 0; co < opg; ++co)
        std::memcpy(y + (grp * opg + co) * P + p0, prod.data() + co * np,
                    np * sizeof(T));
    }
  }
}

// dx += adjoint(W) applied to dy, one image.
template <class T>
void conv_bwd_data(const T* dy, const T* w, const Geom& g, T* dx) {
  const std::size_t P = g.Tout * g.Fout, K = g.K();
  const std::size_t opg = g.Cout / g.groups;
  const std::size_t tile = tile_positions(g);
  std::vector<T> colg(K * tile);
  std::vector<T> dyt(opg * tile);
  for (std::size_t grp = 0; grp < g.groups; ++grp) {
    CMat<T> W(w + grp * opg * K, opg, K);
    for (std::size_t p0 = 0; p0 < P; p0 += tile) {
      const std::size_t np = std::min(tile, P - p0);
      for (std::size_t co = 0; co < opg; ++co)
        std::memcpy(dyt.data() + co * np, dy + (grp * opg + co) * P + p0,
                    np * sizeof(T));
      MMat<T>(colg.data(), K, np).noalias() =
          W.transpose() * CMat<T>(dyt.data(), opg, np);
      col2im_tile(colg.data(), g, grp, p0, np, dx);
    }
  }
}

// dw += dy * col(x)^T, one image.
template <class T>
void conv_bwd_weight(const T* x, const T* dy, const Geom& g, T* dw) {
  const std::size_t P = g.Tout * g.Fout, K = g.K();
  const std::size_t opg = g.Cout / g.groups;
  const std::size_t tile = tile_positions(g);
  std::vector<T> col(K * tile);
  std::vector<T> dyt(opg * tile);
  for (std::size_t grp = 0; grp < g.groups; ++grp) {
    MMat<T> dW(dw + grp * opg * K, opg, K);
    for (std::size_t p0 = 0; p0 < P; p0 += tile) {
      const std::size_t np = std::min(tile, P - p0);
      im2col_tile(x, g, grp, p0, np, col.data());
      for (std::size_t co = 0; co < opg; ++co)
        std::memcpy(dyt.data() + co * np, dy + (grp * opg + co) * P + p0,
                    np * sizeof(T));
      dW.noalias() += CMat<T>(dyt.data(), opg, np) *
                      CMat<T>(col.data(), K, np).transpose();
    }
  }
}

}  // namespace convdetail

// 2D (transposed) convolution on a [B, Cin, T, F] map.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b,
              const Conv2dSpec& spec) {
  spec.validate();
  const auto& s = x->value.shape();
  check(s.size() == 4, "conv2d: expected [B,C,T,F]");
  check(s[1] == spec.in_ch, "conv2d: channel mismatch: input has " +
                                std::to_string(s[1]) + ", spec wants " +
                                std::to_string(spec.in_ch));
  check(w->value.shape() == spec.weight_shape(),
        "conv2d: weight shape mismatch, want " +
            shape_str(spec.weight_shape()) + " got " +
            shape_str(w->value.shape()));
  if (spec.bias)
    check(b && b->value.shape() == Shape{spec.out_ch},
          "conv2d: bias shape mismatch");

  const std::size_t B = s[0];
  const bool tr = spec.transposed;
  convdetail::Geom g = tr ? convdetail::transposed_geom(spec, s[2], s[3])
                          : convdetail::normal_geom(spec, s[2], s[3]);
  const std::size_t To = tr ? g.Tin : g.Tout;
  const std::size_t Fo = tr ? g.Fin : g.Fout;
  Tensor<T> out({B, spec.out_ch, To, Fo}, T(0));

  const std::size_t x_img = s[1] * s[2] * s[3];
  const std::size_t y_img = spec.out_ch * To * Fo;
  for (std::size_t bi = 0; bi < B; ++bi) {
    if (!tr)
      convdetail::conv_fwd(x->value.data() + bi * x_img, w->value.data(), g,
                           out.data() + bi * y_img);
    else
      convdetail::conv_bwd_data(x->value.data() + bi * x_img, w->value.data(),
                                g, out.data() + bi * y_img);
  }
  if (spec.bias) {
    const std::size_t plane = To * Fo;
    for (std::size_t bi = 0; bi < B; ++bi)
      for (std::size_t c = 0; c < spec.out_ch; ++c) {
        T* yp = out.data() + (bi * spec.out_ch + c) * plane;
        const T bv = b->value[c];
        for (std::size_t i = 0; i < plane; ++i) yp[i] += bv;
      }
  }

  Tensor<T> xv = x->value, wv = w->value;
  std::vector<Var<T>> parents =
      spec.bias ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
  return make_op_node<T>(
      "conv2d", std::move(out), std::move(parents),
      [xv, wv, g, tr, B, x_img, y_img, spec](Node<T>& n) {
        const std::size_t To = tr ? g.Tin : g.Tout;
        const std::size_t Fo = tr ? g.Fin : g.Fout;
        const std::size_t plane = To * Fo;
        if (n.parents[0]->requires_grad) {
          n.parents[0]->ensure_grad();
          for (std::size_t bi = 0; bi < B; ++bi) {
            if (!tr)
              convdetail::conv_bwd_data(n.grad.data() + bi * y_img, wv.data(),
                                        g, n.parents[0]->grad.data() + bi * x_img);
            else
              convdetail::conv_fwd(n.grad.data() + bi * y_img, wv.data(), g,
                                   n.parents[0]->grad.data() + bi * x_img);
          }
        }
        if (n.parents[1]->requires_grad) {
          n.parents[1]->ensure_grad();
          for (std::size_t bi = 0; bi < B; ++bi) {
            // For the transposed direction the roles of x and dy swap.
            if (!tr)
              convdetail::conv_bwd_weight(xv.data() + bi * x_img,
                                          n.grad.data() + bi * y_img, g,
                                          n.parents[1]->grad.data());
            else
              convdetail::conv_bwd_weight(n.grad.data() + bi * y_img,
                                          xv.data() + bi * x_img, g,
                                          n.parents[1]->grad.data());
          }
        }
        if (spec.bias && n.parents[2]->requires_grad) {
          n.parents[2]->ensure_grad();
          for (std::size_t bi = 0; bi < B; ++bi)
            for (std::size_t c = 0; c < spec.out_ch; ++c) {
              const T* gp = n.grad.data() + (bi * spec.out_ch + c) * plane;
              T acc = 0;
              for (std::size_t i = 0; i < plane; ++i) acc += gp[i];
              n.parents[2]->grad[c] += acc;
            }
        }
      });
}

// Causal depthwise 1D convolution over [S, L, C] sequences (zero left pad).
template <class T>
Var<T> conv1d_causal_depthwise(const Var<T>& x, const Var<T>& w,
                               const Var<T>& b) {
  const auto& s = x->value.shape();
  check(s.size() == 3, "conv1d: expected [S,L,C]");
  const std::size_t S = s[0], L = s[1], C = s[2];
  const auto& ws = w->value.shape();
  check(ws.size() == 2 && ws[0] == C, "conv1d: weight must be [C,K]");
  const std::size_t K = ws[1];
  check(b->value.shape() == Shape{C}, "conv1d: bias extent mismatch");

  Tensor<T> out(s);
  const T* xp = x->value.data();
  const T* wp = w->value.data();
  T* op_ = out.data();
  for (std::size_t si = 0; si < S; ++si)
    for (std::size_t l = 0; l < L; ++l) {
      T* orow = op_ + (si * L + l) * C;
      for (std::size_t c = 0; c < C; ++c) orow[c] = b->value[c];
      for (std::size_t j = 0; j < K; ++j) {
        const std::ptrdiff_t li =
            static_cast<std::ptrdiff_t>(l) - static_cast<std::ptrdiff_t>(K - 1) +
            static_cast<std::ptrdiff_t>(j);
        if (li < 0) continue;
        const T* xrow = xp + (si * L + li) * C;
        for (std::size_t c = 0; c < C; ++c) orow[c] += wp[c * K + j] * xrow[c];
      }
    }
  Tensor<T> xv = x->value, wv = w->value;
  return make_op_node<T>(
      "conv1d_causal", std::move(out), {x, w, b},
      [xv, wv, S, L, C, K](Node<T>& n) {
        const T* g = n.grad.data();
        const T* xp = xv.data();
        const T* wp = wv.data();
        if (n.parents[0]->requires_grad) {
          n.parents[0]->ensure_grad();
          T* gx = n.parents[0]->grad.data();
          for (std::size_t si = 0; si < S; ++si)
            for (std::size_t l = 0; l < L; ++l)
              for (std::size_t j = 0; j < K; ++j) {
                const std::ptrdiff_t li = static_cast<std::ptrdiff_t>(l) -
                                          static_cast<std::ptrdiff_t>(K - 1) +
                                          static_cast<std::ptrdiff_t>(j);
                if (li < 0) continue;
                const T* grow = g + (si * L + l) * C;
                T* gxrow = gx + (si * L + li) * C;
                for (std::size_t c = 0; c < C; ++c)
                  gxrow[c] += grow[c] * wp[c * K + j];
              }
        }
        if (n.parents[1]->requires_grad) {
          n.parents[1]->ensure_grad();
          T* gw = n.parents[1]->grad.data();
          for (std::size_t si = 0; si < S; ++si)
            for (std::size_t l = 0; l < L; ++l)
              for (std::size_t j = 0; j < K; ++j) {
                const std::ptrdiff_t li = static_cast<std::ptrdiff_t>(l) -
                                          static_cast<std::ptrdiff_t>(K - 1) +
                                          static_cast<std::ptrdiff_t>(j);
                if (li < 0) continue;
                const T* grow = g + (si * L + l) * C;
                const T* xrow = xp + (si * L + li) * C;
                for (std::size_t c = 0; c < C; ++c)
                  gw[c * K + j] += grow[c] * xrow[c];
              }
        }
        if (n.parents[2]->requires_grad) {
          n.parents[2]->ensure_grad();
          T* gb = n.parents[2]->grad.data();
          for (std::size_t si = 0; si < S; ++si)
            for (std::size_t l = 0; l < L; ++l) {
              const T* grow = g + (si * L + l) * C;
              for (std::size_t c = 0; c < C; ++c) gb[c] += grow[c];
            }
        }
      });
}

// Periodic shuffle along the frequency axis:
// [B, r*C', T, F] -> [B, C', T, r*F], out[b,c',t,f*r+j] = in[b, j*C'+c', t, f].
template <class T>
Var<T> freq_shuffle(const Var<T>& x, std::size_t r) {
  const auto& s = x->value.shape();
  check(s.size() == 4, "freq_shuffle: expected [B,C,T,F]");
  check(s[1] % r == 0, "freq_shuffle: channels not divisible by factor");
  const std::size_t B = s[0], C = s[1], Tn = s[2], F = s[3];
  const std::size_t Cp = C / r;
  Tensor<T> out({B, Cp, Tn, F * r});
  const T* xp = x->value.data();
  T* op_ = out.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t cp = 0; cp < Cp; ++cp)
      for (std::size_t t = 0; t < Tn; ++t)
        for (std::size_t f = 0; f < F; ++f)
          for (std::size_t j = 0; j < r; ++j)
            op_[((b * Cp + cp) * Tn + t) * (F * r) + f * r + j] =
                xp[((b * C + j * Cp + cp) * Tn + t) * F + f];
  return make_op_node<T>(
      "freq_shuffle", std::move(out), {x}, [B, C, Cp, Tn, F, r](Node<T>& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        const T* g = n.grad.data();
        T* gx = n.parents[0]->grad.data();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t cp = 0; cp < Cp; ++cp)
            for (std::size_t t = 0; t < Tn; ++t)
              for (std::size_t f = 0; f < F; ++f)
                for (std::size_t j = 0; j < r; ++j)
                  gx[((b * C + j * Cp + cp) * Tn + t) * F + f] +=
                      g[((b * Cp + cp) * Tn + t) * (F * r) + f * r + j];
      });
}

// Deformable 2D convolution (stride 1, same padding). offsets holds per-tap
// (dT, dF) pairs: channel 2k is the time offset of tap k, channel 2k+1 the
// frequency offset. Out-of-bounds bilinear corners read as zero.
template <class T>
Var<T> deformable_conv2d(const Var<T>& x, const Var<T>& offsets,
                         const Var<T>& w, const Var<T>& b,
                         const Conv2dSpec& spec) {
  spec.validate();
  check(!spec.transposed && spec.sT == 1 && spec.sF == 1,
        "deformable_conv2d: stride-1 non-transposed only");
  const auto& s = x->value.shape();
  check(s.size() == 4 && s[1] == spec.in_ch, "deformable_conv2d: bad input");
  const std::size_t B = s[0], Tn = s[2], F = s[3];
  const std::size_t nk = spec.kT * spec.kF;
  check(offsets->value.shape() == Shape{B, 2 * nk, Tn, F},
        "deformable_conv2d: offsets must have 2*kT*kF channels, want " +
            shape_str(Shape{B, 2 * nk, Tn, F}) + " got " +
            shape_str(offsets->value.shape()));
  check(w->value.shape() == spec.weight_shape(),
        "deformable_conv2d: weight shape mismatch");
  check(b->value.shape() == Shape{spec.out_ch},
        "deformable_conv2d: bias shape mismatch");

  const std::size_t cpg = spec.in_ch / spec.groups;
  const std::size_t opg = spec.out_ch / spec.groups;
  const std::ptrdiff_t padT = ((spec.kT - 1) * spec.dT) / 2;
  const std::ptrdiff_t padF = ((spec.kF - 1) * spec.dF) / 2;
  const std::size_t plane = Tn * F;

  struct Corner {
    std::ptrdiff_t t0, f0;
    T at, af;  // fractional parts
  };
  auto corner_of = [&](std::size_t to, std::size_t fo, std::size_t kt,
                       std::size_t kf, const T* off_img) {
    const std::size_t k = kt * spec.kF + kf;
    const T dt = off_img[(2 * k) * plane + to * F + fo];
    const T df = off_img[(2 * k + 1) * plane + to * F + fo];
    const T pt = static_cast<T>(static_cast<std::ptrdiff_t>(to + kt * spec.dT) -
                                padT) + dt;
    const T pf = static_cast<T>(static_cast<std::ptrdiff_t>(fo + kf * spec.dF) -
                                padF) + df;
    Corner c;
    c.t0 = static_cast<std::ptrdiff_t>(std::floor(static_cast<double>(pt)));
    c.f0 = static_cast<std::ptrdiff_t>(std::floor(static_cast<double>(pf)));
    c.at = pt - static_cast<T>(c.t0);
    c.af = pf - static_cast<T>(c.f0);
    return c;
  };
  auto sample = [&](const T* xc, const Corner& c) -> T {
    auto rd = [&](std::ptrdiff_t t, std::ptrdiff_t f) -> T {
      return (t >= 0 && t < static_cast<std::ptrdiff_t>(Tn) && f >= 0 &&
              f < static_cast<std::ptrdiff_t>(F))
                 ? xc[t * F + f]
                 : T(0);
    };
    const T x00 = rd(c.t0, c.f0), x01 = rd(c.t0, c.f0 + 1);
    const T x10 = rd(c.t0 + 1, c.f0), x11 = rd(c.t0 + 1, c.f0 + 1);
    return (T(1) - c.at) * ((T(1) - c.af) * x00 + c.af * x01) +
           c.at * ((T(1) - c.af) * x10 + c.af * x11);
  };

  Tensor<T> out({B, spec.out_ch, Tn, F});
  for (std::size_t bi = 0; bi < B; ++bi) {
    const T* x_img = x->value.data() + bi * spec.in_ch * plane;
    const T* off_img = offsets->value.data() + bi * 2 * nk * plane;
    T* y_img = out.data() + bi * spec.out_ch * plane;
    for (std::size_t grp = 0; grp < spec.groups; ++grp)
      for (std::size_t co = 0; co < opg; ++co) {
        T* yc = y_img + (grp * opg + co) * plane;
        const T* wrow = w->value.data() + (grp * opg + co) * cpg * nk;
        for (std::size_t to = 0; to < Tn; ++to)
          for (std::size_t fo = 0; fo < F; ++fo) {
            T acc = b->value[grp * opg + co];
            for (std::size_t kt = 0; kt < spec.kT; ++kt)
              for (std::size_t kf = 0; kf < spec.kF; ++kf) {
                const Corner c = corner_of(to, fo, kt, kf, off_img);
                const std::size_t k = kt * spec.kF + kf;
                for (std::size_t ci = 0; ci < cpg; ++ci)
                  acc += wrow[ci * nk + k] *
                         sample(x_img + (grp * cpg + ci) * plane, c);
              }
            yc[to * F + fo] = acc;
          }
      }
  }

  Tensor<T> xv = x->value, ov = offsets->value, wv = w->value;
  return make_op_node<T>(
      "deformable_conv2d", std::move(out), {x, offsets, w, b},
      [xv, ov, wv, spec, B, Tn, F, nk, cpg, opg, padT, padF, plane,
       corner_of](Node<T>& n) {
        auto rd = [&](const T* xc, std::ptrdiff_t t, std::ptrdiff_t f) -> T {
          return (t >= 0 && t < static_cast<std::ptrdiff_t>(Tn) && f >= 0 &&
                  f < static_cast<std::ptrdiff_t>(F))
                     ? xc[t * F + f]
                     : T(0);
        };
        auto scatter = [&](T* gxc, std::ptrdiff_t t, std::ptrdiff_t f, T v) {
          if (t >= 0 && t < static_cast<std::ptrdiff_t>(Tn) && f >= 0 &&
              f < static_cast<std::ptrdiff_t>(F))
            gxc[t * F + f] += v;
        };
        const bool need_x = n.parents[0]->requires_grad;
        const bool need_off = n.parents[1]->requires_grad;
        const bool need_w = n.parents[2]->requires_grad;
        const bool need_b = n.parents[3]->requires_grad;
        if (need_x) n.parents[0]->ensure_grad();
        if (need_off) n.parents[1]->ensure_grad();
        if (need_w) n.parents[2]->ensure_grad();
        if (need_b) n.parents[3]->ensure_grad();
        for (std::size_t bi = 0; bi < B; ++bi) {
          const T* x_img = xv.data() + bi * spec.in_ch * plane;
          const T* off_img = ov.data() + bi * 2 * nk * plane;
          const T* g_img = n.grad.data() + bi * spec.out_ch * plane;
          T* gx_img = need_x ? n.parents[0]->grad.data() + bi * spec.in_ch * plane
                             : nullptr;
          T* goff_img = need_off
                            ? n.parents[1]->grad.data() + bi * 2 * nk * plane
                            : nullptr;
          for (std::size_t grp = 0; grp < spec.groups; ++grp)
            for (std::size_t co = 0; co < opg; ++co) {
              const T* gc = g_img + (grp * opg + co) * plane;
              const T* wrow = wv.data() + (grp * opg + co) * cpg * nk;
              T* gwrow = need_w ? n.parents[2]->grad.data() +
                                      (grp * opg + co) * cpg * nk
                                : nullptr;
              if (need_b) {
                T acc = 0;
                for (std::size_t i = 0; i < plane; ++i) acc += gc[i];
                n.parents[3]->grad[grp * opg + co] += acc;
              }
              for (std::size_t to = 0; to < Tn; ++to)
                for (std::size_t fo = 0; fo < F; ++fo) {
                  const T gy = gc[to * F + fo];
                  if (gy == T(0)) continue;
                  for (std::size_t kt = 0; kt < spec.kT; ++kt)
                    for (std::size_t kf = 0; kf < spec.kF; ++kf) {
                      const Corner c = corner_of(to, fo, kt, kf, off_img);
                      const std::size_t k = kt * spec.kF + kf;
                      T dpt_acc = 0, dpf_acc = 0;
                      for (std::size_t ci = 0; ci < cpg; ++ci) {
                        const T* xc = x_img + (grp * cpg + ci) * plane;
                        const T x00 = rd(xc, c.t0, c.f0);
                        const T x01 = rd(xc, c.t0, c.f0 + 1);
                        const T x10 = rd(xc, c.t0 + 1, c.f0);
                        const T x11 = rd(xc, c.t0 + 1, c.f0 + 1);
                        const T sv =
                            (T(1) - c.at) * ((T(1) - c.af) * x00 + c.af * x01) +
                            c.at * ((T(1) - c.af) * x10 + c.af * x11);
                        const T wk = wrow[ci * nk + k];
                        if (gwrow) gwrow[ci * nk + k] += gy * sv;
                        if (need_x) {
                          T* gxc = gx_img + (grp * cpg + ci) * plane;
                          const T gw_ = gy * wk;
                          scatter(gxc, c.t0, c.f0,
                                  gw_ * (T(1) - c.at) * (T(1) - c.af));
                          scatter(gxc, c.t0, c.f0 + 1, gw_ * (T(1) - c.at) * c.af);
                          scatter(gxc, c.t0 + 1, c.f0, gw_ * c.at * (T(1) - c.af));
                          scatter(gxc, c.t0 + 1, c.f0 + 1, gw_ * c.at * c.af);
                        }
                        if (need_off) {
                          dpt_acc += gy * wk *
                                     ((T(1) - c.af) * (x10 - x00) +
                                      c.af * (x11 - x01));
                          dpf_acc += gy * wk *
                                     ((T(1) - c.at) * (x01 - x00) +
                                      c.at * (x11 - x10));
                        }
                      }
                      if (need_off) {
                        goff_img[(2 * k) * plane + to * F + fo] += dpt_acc;
                        goff_img[(2 * k + 1) * plane + to * F + fo] += dpf_acc;
                      }
                    }
                }
            }
        }
      });
}

}  // namespace rwsa
