#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "msp/tensor.hpp"

// Differentiable tensor operations. Network tensors are rank-4 [C,X,Y,Z]
// row-major with z contiguous. Every op optionally records its backward
// step on a tape; with tape == nullptr it is a pure forward computation.
//
// All spatial accumulations run in a fixed loop nest (co, ci, kz, ky, kx,
// x, y, z) so results do not depend on thread count or scheduling.

namespace msp {

namespace detail {

// Valid range [lo, hi) of the looped index o such that
// 0 <= o*stride + kpos - padding < indexed_extent.
inline void axis_range(int indexed_extent, int loop_extent, int kpos,
                       int stride, int padding, int& lo, int& hi) {
  const int shift = padding - kpos;
  lo = shift <= 0 ? 0 : (shift + stride - 1) / stride;
  const int last = indexed_extent - 1 + shift;
  hi = last < 0 ? 0 : std::min(loop_extent, last / stride + 1);
  if (hi < lo) hi = lo;
}

template <typename S>
bool needs_grad(const Tape<S>& tape, const Tensor<S>& t) {
  return t.requires_grad() || tape.saw(t);
}

template <typename S>
void require_rank(const Tensor<S>& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw shape_error(std::string(what) + ": expected rank " +
                      std::to_string(rank) + " tensor, got " +
                      shape_str(t.shape()));
  }
}

// out[co,...] (+)= w[co,ci,k,k,k] * in[ci,...], gathered with the conv
// index map. Shared by conv forward and tconv input-gradient.
template <typename S>
void conv_gather(const S* in, int C, int X, int Y, int Z, const S* w, int Co,
                 int k, int stride, int padding, S* out, int Xo, int Yo,
                 int Zo) {
  for (int co = 0; co < Co; ++co) {
    for (int ci = 0; ci < C; ++ci) {
      for (int kz = 0; kz < k; ++kz) {
        int zlo, zhi;
        axis_range(Z, Zo, kz, stride, padding, zlo, zhi);
        for (int ky = 0; ky < k; ++ky) {
          int ylo, yhi;
          axis_range(Y, Yo, ky, stride, padding, ylo, yhi);
          for (int kx = 0; kx < k; ++kx) {
            int xlo, xhi;
            axis_range(X, Xo, kx, stride, padding, xlo, xhi);
            const S wv = w[(((co * C + ci) * k + kx) * k + ky) * k + kz];
            const int dz = kz - padding;
            for (int xo = xlo; xo < xhi; ++xo) {
              const int xi = xo * stride + kx - padding;
              for (int yo = ylo; yo < yhi; ++yo) {
                const int yi = yo * stride + ky - padding;
                const S* irow = in + ((static_cast<int64_t>(ci) * X + xi) * Y + yi) * Z;
                S* orow = out + ((static_cast<int64_t>(co) * Xo + xo) * Yo + yo) * Zo;
                if (stride == 1) {
                  const S* ish = irow + dz;
#pragma omp simd
                  for (int zo = zlo; zo < zhi; ++zo) orow[zo] += wv * ish[zo];
                } else {
#pragma omp simd
                  for (int zo = zlo; zo < zhi; ++zo) {
                    orow[zo] += wv * irow[zo * stride + dz];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

// out[ci,...] += w[co,ci,k,k,k] * g[co,...] scattered with the conv index
// map. Shared by conv input-gradient and tconv forward.
template <typename S>
void conv_scatter(const S* g, int Co, int Xo, int Yo, int Zo, const S* w,
                  int C, int k, int stride, int padding, S* out, int X, int Y,
                  int Z) {
  for (int co = 0; co < Co; ++co) {
    for (int ci = 0; ci < C; ++ci) {
      for (int kz = 0; kz < k; ++kz) {
        int zlo, zhi;
        axis_range(Z, Zo, kz, stride, padding, zlo, zhi);
        for (int ky = 0; ky < k; ++ky) {
          int ylo, yhi;
          axis_range(Y, Yo, ky, stride, padding, ylo, yhi);
          for (int kx = 0; kx < k; ++kx) {
            int xlo, xhi;
            axis_range(X, Xo, kx, stride, padding, xlo, xhi);
            const S wv = w[(((co * C + ci) * k + kx) * k + ky) * k + kz];
            const int dz = kz - padding;
            for (int xo = xlo; xo < xhi; ++xo) {
              const int xi = xo * stride + kx - padding;
              for (int yo = ylo; yo < yhi; ++yo) {
                const int yi = yo * stride + ky - padding;
                const S* grow = g + ((static_cast<int64_t>(co) * Xo + xo) * Yo + yo) * Zo;
                S* orow = out + ((static_cast<int64_t>(ci) * X + xi) * Y + yi) * Z;
                if (stride == 1) {
                  S* osh = orow + dz;
#pragma omp simd
                  for (int zo = zlo; zo < zhi; ++zo) osh[zo] += wv * grow[zo];
                } else {
                  for (int zo = zlo; zo < zhi; ++zo) {
                    orow[zo * stride + dz] += wv * grow[zo];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

// gw[co,ci,k,k,k] += sum over positions of in[ci,...] * g[co,...] paired by
// the conv index map.
template <typename S>
void conv_weight_grad(const S* in, int C, int X, int Y, int Z, const S* g,
                      int Co, int Xo, int Yo, int Zo, int k, int stride,
                      int padding, S* gw) {
  for (int co = 0; co < Co; ++co) {
    for (int ci = 0; ci < C; ++ci) {
      for (int kz = 0; kz < k; ++kz) {
        int zlo, zhi;
        axis_range(Z, Zo, kz, stride, padding, zlo, zhi);
        for (int ky = 0; ky < k; ++ky) {
          int ylo, yhi;
          axis_range(Y, Yo, ky, stride, padding, ylo, yhi);
          for (int kx = 0; kx < k; ++kx) {
            int xlo, xhi;
            axis_range(X, Xo, kx, stride, padding, xlo, xhi);
            const int dz = kz - padding;
            S acc = S(0);
            for (int xo = xlo; xo < xhi; ++xo) {
              const int xi = xo * stride + kx - padding;
              for (int yo = ylo; yo < yhi; ++yo) {
                const int yi = yo * stride + ky - padding;
                const S* irow = in + ((static_cast<int64_t>(ci) * X + xi) * Y + yi) * Z;
                const S* grow = g + ((static_cast<int64_t>(co) * Xo + xo) * Yo + yo) * Zo;
                if (stride == 1) {
                  const S* ish = irow + dz;
#pragma omp simd reduction(+ : acc)
                  for (int zo = zlo; zo < zhi; ++zo) acc += ish[zo] * grow[zo];
                } else {
                  for (int zo = zlo; zo < zhi; ++zo) {
                    acc += irow[zo * stride + dz] * grow[zo];
                  }
                }
              }
            }
            gw[(((co * C + ci) * k + kx) * k + ky) * k + kz] += acc;
          }
        }
      }
    }
  }
}

template <typename S>
void add_bias(S* out, const S* bias, int Co, int64_t spatial) {
  for (int co = 0; co < Co; ++co) {
    S* row = out + co * spatial;
    const S b = bias[co];
#pragma omp simd
    for (int64_t i = 0; i < spatial; ++i) row[i] += b;
  }
}

template <typename S>
void bias_grad(const S* g, int Co, int64_t spatial, S* gb) {
  for (int co = 0; co < Co; ++co) {
    const S* row = g + co * spatial;
    S acc = S(0);
#pragma omp simd reduction(+ : acc)
    for (int64_t i = 0; i < spatial; ++i) acc += row[i];
    gb[co] += acc;
  }
}

}  // namespace detail

// 3D convolution (cross-correlation, zero padding).
// x [Ci,X,Y,Z], weight [Co,Ci,k,k,k], bias [Co] -> [Co,Xo,Yo,Zo] with
// Xo = (X + 2*padding - k) / stride + 1.
template <typename S>
Tensor<S> conv3d(const Tensor<S>& x, const Tensor<S>& weight,
                 const Tensor<S>& bias, int stride, int padding,
                 Tape<S>* tape = nullptr) {
  detail::require_rank(x, 4, "conv3d input");
  detail::require_rank(weight, 5, "conv3d weight");
  detail::require_rank(bias, 1, "conv3d bias");
  const int Ci = x.dim(0), X = x.dim(1), Y = x.dim(2), Z = x.dim(3);
  const int Co = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != Ci) {
    throw shape_error("conv3d: weight expects " + std::to_string(weight.dim(1)) +
                      " input channels, input has " + std::to_string(Ci));
  }
  if (weight.dim(3) != k || weight.dim(4) != k) {
    throw shape_error("conv3d: kernel must be cubic, got " +
                      shape_str(weight.shape()));
  }
  if (bias.dim(0) != Co) throw shape_error("conv3d: bias size mismatch");
  if (stride < 1) throw value_error("conv3d: stride must be >= 1");
  if (padding < 0) throw value_error("conv3d: padding must be >= 0");
  auto out_extent = [&](int e) { return (e + 2 * padding - k) / stride + 1; };
  const int Xo = out_extent(X), Yo = out_extent(Y), Zo = out_extent(Z);
  if (std::min({X, Y, Z}) + 2 * padding < k || std::min({Xo, Yo, Zo}) < 1) {
    throw shape_error("conv3d: kernel does not fit input " +
                      shape_str(x.shape()));
  }

  Tensor<S> out = Tensor<S>::zeros({Co, Xo, Yo, Zo});
  detail::add_bias(out.data_mut(), bias.data(), Co,
                   static_cast<int64_t>(Xo) * Yo * Zo);
  detail::conv_gather(x.data(), Ci, X, Y, Z, weight.data(), Co, k, stride,
                      padding, out.data_mut(), Xo, Yo, Zo);

  if (tape) {
    tape->note_output(out);
    tape->record({x, weight, bias, out}, [=](Tape<S>& t) {
      const auto* gout = t.local_grad(out);
      if (!gout) return;
      if (detail::needs_grad(t, x)) {
        detail::conv_scatter(gout->data(), Co, Xo, Yo, Zo, weight.data(), Ci,
                             k, stride, padding, t.grad_accum(x.node()).data(),
                             X, Y, Z);
      }
      if (detail::needs_grad(t, weight)) {
        detail::conv_weight_grad(x.data(), Ci, X, Y, Z, gout->data(), Co, Xo,
                                 Yo, Zo, k, stride, padding,
                                 t.grad_accum(weight.node()).data());
      }
      if (detail::needs_grad(t, bias)) {
        detail::bias_grad(gout->data(), Co, static_cast<int64_t>(Xo) * Yo * Zo,
                          t.grad_accum(bias.node()).data());
      }
    });
  }
  return out;
}

// Transposed 3D convolution (adjoint of conv3d with the same geometry).
// x [Ci,X,Y,Z], weight [Ci,Co,k,k,k], bias [Co] -> [Co,Xo,Yo,Zo] with
// Xo = (X - 1) * stride - 2*padding + k.
template <typename S>
Tensor<S> transposed_conv3d(const Tensor<S>& x, const Tensor<S>& weight,
                            const Tensor<S>& bias, int stride, int padding,
                            Tape<S>* tape = nullptr) {
  detail::require_rank(x, 4, "transposed_conv3d input");
  detail::require_rank(weight, 5, "transposed_conv3d weight");
  detail::require_rank(bias, 1, "transposed_conv3d bias");
  const int Ci = x.dim(0), X = x.dim(1), Y = x.dim(2), Z = x.dim(3);
  const int Co = weight.dim(1), k = weight.dim(2);
  if (weight.dim(0) != Ci) {
    throw shape_error("transposed_conv3d: weight expects " +
                      std::to_string(weight.dim(0)) +
                      " input channels, input has " + std::to_string(Ci));
  }
  if (weight.dim(3) != k || weight.dim(4) != k) {
    throw shape_error("transposed_conv3d: kernel must be cubic, got " +
                      shape_str(weight.shape()));
  }
  if (bias.dim(0) != Co) throw shape_error("transposed_conv3d: bias size mismatch");
  if (stride < 1) throw value_error("transposed_conv3d: stride must be >= 1");
  if (padding < 0) throw value_error("transposed_conv3d: padding must be >= 0");
  auto out_extent = [&](int e) { return (e - 1) * stride - 2 * padding + k; };
  const int Xo = out_extent(X), Yo = out_extent(Y), Zo = out_extent(Z);
  if (std::min({Xo, Yo, Zo}) < 1) {
    throw shape_error("transposed_conv3d: output collapses for input " +
                      shape_str(x.shape()));
  }

  Tensor<S> out = Tensor<S>::zeros({Co, Xo, Yo, Zo});
  detail::add_bias(out.data_mut(), bias.data(), Co,
                   static_cast<int64_t>(Xo) * Yo * Zo);
  // weight viewed as [Ci(co-role), Co(ci-role), k,k,k] matches the scatter map
  detail::conv_scatter(x.data(), Ci, X, Y, Z, weight.data(), Co, k, stride,
                       padding, out.data_mut(), Xo, Yo, Zo);

  if (tape) {
    tape->note_output(out);
    tape->record({x, weight, bias, out}, [=](Tape<S>& t) {
      const auto* gout = t.local_grad(out);
      if (!gout) return;
      if (detail::needs_grad(t, x)) {
        detail::conv_gather(gout->data(), Co, Xo, Yo, Zo, weight.data(), Ci, k,
                            stride, padding, t.grad_accum(x.node()).data(), X,
                            Y, Z);
      }
      if (detail::needs_grad(t, weight)) {
        detail::conv_weight_grad(gout->data(), Co, Xo, Yo, Zo, x.data(), Ci, X,
                                 Y, Z, k, stride, padding,
                                 t.grad_accum(weight.node()).data());
      }
      if (detail::needs_grad(t, bias)) {
        detail::bias_grad(gout->data(), Co, static_cast<int64_t>(Xo) * Yo * Zo,
                          t.grad_accum(bias.node()).data());
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x, Tape<S>* tape = nullptr) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* in = x.data();
  S* o = out.data_mut();
  const int64_t n = x.numel();
#pragma omp simd
  for (int64_t i = 0; i < n; ++i) o[i] = in[i] > S(0) ? in[i] : S(0);
  if (tape) {
    tape->note_output(out);
    tape->record({x, out}, [=](Tape<S>& t) {
      const auto* gout = t.local_grad(out);
      if (!gout || !detail::needs_grad(t, x)) return;
      auto& gx = t.grad_accum(x.node());
      const S* in2 = x.data();
      const S* g = gout->data();
#pragma omp simd
      for (int64_t i = 0; i < n; ++i) {
        gx[i] += in2[i] > S(0) ? g[i] : S(0);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr) {
  if (!a.same_shape(b)) {
    throw shape_error("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* o = out.data_mut();
  const int64_t n = a.numel();
#pragma omp simd
  for (int64_t i = 0; i < n; ++i) o[i] = pa[i] + pb[i];
  if (tape) {
    tape->note_output(out);
    tape->record({a, b, out}, [=](Tape<S>& t) {
      const auto* gout = t.local_grad(out);
      if (!gout) return;
      const S* g = gout->data();
      for (const Tensor<S>* in : {&a, &b}) {
        if (!detail::needs_grad(t, *in)) continue;
        auto& gi = t.grad_accum(in->node());
#pragma omp simd
        for (int64_t i = 0; i < n; ++i) gi[i] += g[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor, Tape<S>* tape = nullptr) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* in = x.data();
  S* o = out.data_mut();
  const int64_t n = x.numel();
#pragma omp simd
  for (int64_t i = 0; i < n; ++i) o[i] = factor * in[i];
  if (tape) {
    tape->note_output(out);
    tape->record({x, out}, [=](Tape<S>& t) {
      const auto* gout = t.local_grad(out);
      if (!gout || !detail::needs_grad(t, x)) return;
      auto& gx = t.grad_accum(x.node());
      const S* g = gout->data();
#pragma omp simd
      for (int64_t i = 0; i < n; ++i) gx[i] += factor * g[i];
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr) {
  if (!a.same_shape(b)) {
    throw shape_error("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* o = out.data_mut();
  const int64_t n = a.numel();
#pragma omp simd
  for (int64_t i = 0; i < n; ++i) o[i] = pa[i] * pb[i];
  if (tape) {
    tape->note_output(out);
    tape->record({a, b, out}, [=](Tape<S>& t) {
      const auto* gout = t.local_grad(out);
      if (!gout) return;
      const S* g = gout->data();
      if (detail::needs_grad(t, a)) {
        auto& ga = t.grad_accum(a.node());
        const S* vb = b.data();
#pragma omp simd
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * vb[i];
      }
      if (detail::needs_grad(t, b)) {
        auto& gb = t.grad_accum(b.node());
        const S* va = a.data();
#pragma omp simd
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * va[i];
      }
    });
  }
  return out;
}

// (1 - alpha) * a + alpha * b. The endpoints are exact: alpha == 0
// reproduces a bitwise and alpha == 1 reproduces b bitwise, and the
// excluded branch receives a zero gradient contribution.
template <typename S>
Tensor<S> linear_blend(const Tensor<S>& a, const Tensor<S>& b, S alpha,
                       Tape<S>* tape = nullptr) {
  if (!a.same_shape(b)) {
    throw shape_error("linear_blend: shape mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
  }
  if (!(alpha >= S(0) && alpha <= S(1))) {
    throw value_error("linear_blend: alpha must lie in [0, 1]");
  }
  const int64_t n = a.numel();
  Tensor<S> out;
  if (alpha == S(0)) {
    out = a.clone();
    out.set_requires_grad(false);
  } else if (alpha == S(1)) {
    out = b.clone();
    out.set_requires_grad(false);
  } else {
    out = Tensor<S>::zeros(a.shape());
    const S* pa = a.data();
    const S* pb = b.data();
    S* o = out.data_mut();
    const S ca = S(1) - alpha;
#pragma omp simd
    for (int64_t i = 0; i < n; ++i) o[i] = ca * pa[i] + alpha * pb[i];
  }
  if (tape) {
    tape->note_output(out);
    tape->record({a, b, out}, [=](Tape<S>& t) {
      const auto* gout = t.local_grad(out);
      if (!gout) return;
      const S* g = gout->data();
      const S ca = S(1) - alpha;
      if (ca != S(0) && detail::needs_grad(t, a)) {
        auto& ga = t.grad_accum(a.node());
#pragma omp simd
        for (int64_t i = 0; i < n; ++i) ga[i] += ca * g[i];
      }
      if (alpha != S(0) && detail::needs_grad(t, b)) {
        auto& gb = t.grad_accum(b.node());
#pragma omp simd
        for (int64_t i = 0; i < n; ++i) gb[i] += alpha * g[i];
      }
    });
  }
  return out;
}

// Mean squared error over all elements, accumulated in double.
template <typename S>
Tensor<S> mse_loss(const Tensor<S>& pred, const Tensor<S>& target,
                   Tape<S>* tape = nullptr) {
  if (!pred.same_shape(target)) {
    throw shape_error("mse_loss: shape mismatch " + shape_str(pred.shape()) +
                      " vs " + shape_str(target.shape()));
  }
  const int64_t n = pred.numel();
  const S* p = pred.data();
  const S* y = target.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(y[i]);
    acc += d * d;
  }
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc / static_cast<double>(n)));
  if (tape) {
    tape->note_output(out);
    tape->record({pred, target, out}, [=](Tape<S>& t) {
      const auto* gout = t.local_grad(out);
      if (!gout) return;
      const S g = (*gout)[0];
      const S c = g * S(2) / static_cast<S>(n);
      if (detail::needs_grad(t, pred)) {
        auto& gp = t.grad_accum(pred.node());
#pragma omp simd
        for (int64_t i = 0; i < n; ++i) gp[i] += c * (p[i] - y[i]);
      }
      if (detail::needs_grad(t, target)) {
        auto& gy = t.grad_accum(target.node());
#pragma omp simd
        for (int64_t i = 0; i < n; ++i) gy[i] -= c * (p[i] - y[i]);
      }
    });
  }
  return out;
}

// Concatenate rank-4 tensors along the channel axis. Channels are the
// outermost axis, so each input occupies one contiguous block.
template <typename S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& parts,
                          Tape<S>* tape = nullptr) {
  if (parts.empty()) throw value_error("concat_channels: no inputs");
  detail::require_rank(parts[0], 4, "concat_channels input");
  int C = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 4, "concat_channels input");
    if (p.dim(1) != parts[0].dim(1) || p.dim(2) != parts[0].dim(2) ||
        p.dim(3) != parts[0].dim(3)) {
      throw shape_error("concat_channels: spatial mismatch " +
                        shape_str(p.shape()) + " vs " +
                        shape_str(parts[0].shape()));
    }
    C += p.dim(0);
  }
  Tensor<S> out = Tensor<S>::zeros(
      {C, parts[0].dim(1), parts[0].dim(2), parts[0].dim(3)});
  S* o = out.data_mut();
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), o + off);
    off += p.numel();
  }
  if (tape) {
    tape->note_output(out);
    tape->record({}, [parts, out](Tape<S>& t) {
      const auto* gout = t.local_grad(out);
      if (!gout) return;
      const S* g = gout->data();
      int64_t off2 = 0;
      for (const auto& p : parts) {
        const int64_t n = p.numel();
        if (detail::needs_grad(t, p)) {
          auto& gp = t.grad_accum(p.node());
          for (int64_t i = 0; i < n; ++i) gp[i] += g[off2 + i];
        }
        off2 += n;
      }
    });
  }
  return out;
}

// Channels [c0, c1) of a rank-4 tensor.
template <typename S>
Tensor<S> channel_slice(const Tensor<S>& x, int c0, int c1,
                        Tape<S>* tape = nullptr) {
  detail::require_rank(x, 4, "channel_slice input");
  if (c0 < 0 || c1 > x.dim(0) || c0 >= c1) {
    throw shape_error("channel_slice: invalid range [" + std::to_string(c0) +
                      ", " + std::to_string(c1) + ") for " +
                      shape_str(x.shape()));
  }
  const int64_t spatial =
      static_cast<int64_t>(x.dim(1)) * x.dim(2) * x.dim(3);
  Tensor<S> out = Tensor<S>::zeros({c1 - c0, x.dim(1), x.dim(2), x.dim(3)});
  std::copy(x.data() + c0 * spatial, x.data() + c1 * spatial, out.data_mut());
  if (tape) {
    tape->note_output(out);
    tape->record({x, out}, [=](Tape<S>& t) {
      const auto* gout = t.local_grad(out);
      if (!gout || !detail::needs_grad(t, x)) return;
      auto& gx = t.grad_accum(x.node());
      const S* g = gout->data();
      const int64_t n = out.numel();
      S* dst = gx.data() + c0 * spatial;
#pragma omp simd
      for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
    });
  }
  return out;
}

}  // namespace msp
