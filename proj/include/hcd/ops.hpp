// Differentiable ops over (C,H,W) tensors: convolutions (plain, strided,
// transposed, deformable), activations, attention plumbing, bilinear resize,
// reductions, and scalar arithmetic. Each op returns a Var whose closure
// implements the exact vector-Jacobian product; every one of them is pinned
// by a central-difference check in the test suite.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "hcd/autograd.hpp"
#include "hcd/common.hpp"
#include "hcd/image.hpp"
#include "hcd/tensor.hpp"

namespace hcd {

enum class Pad { Zero, Reflect };

// ---- elementwise activations ----

inline Var relu(const Var& x) {
  Tensor out = x.val();
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  auto xn = x.n;
  return make_op(std::move(out), {x}, [xn](const Tensor& g, GradMap& gm) {
    if (!xn->requires_grad) return;
    Tensor& gx = grad_slot(gm, xn.get());
    const Tensor& xv = xn->value;
    for (size_t i = 0; i < gx.data.size(); ++i)
      if (xv.data[i] > 0.0) gx.data[i] += g.data[i];
  });
}

inline Var sigmoid(const Var& x) {
  Tensor out = x.val();
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  auto xn = x.n;
  Tensor saved = out;
  return make_op(std::move(out), {x}, [xn, saved](const Tensor& g, GradMap& gm) {
    if (!xn->requires_grad) return;
    Tensor& gx = grad_slot(gm, xn.get());
    for (size_t i = 0; i < gx.data.size(); ++i) {
      double s = saved.data[i];
      gx.data[i] += g.data[i] * s * (1.0 - s);
    }
  });
}

// ---- binary elementwise with size-1 broadcasting ----
// Shapes must agree rank-wise; every dim pair must match or one side be 1.
// Covers the attention gates: (C,H,W)*(C,1,1) and (C,H,W)*(1,H,W).

namespace detail {

inline std::vector<int> broadcast_shape(const Tensor& a, const Tensor& b, const char* ctx) {
  require(a.rank() == b.rank(), std::string(ctx) + ": rank mismatch " + a.shape_str() + " vs " + b.shape_str());
  std::vector<int> out(a.shape.size());
  for (size_t i = 0; i < out.size(); ++i) {
    int da = a.shape[i], db = b.shape[i];
    require(da == db || da == 1 || db == 1,
            std::string(ctx) + ": incompatible shapes " + a.shape_str() + " vs " + b.shape_str());
    out[i] = std::max(da, db);
  }
  return out;
}

// Flat index into t for an output coordinate, collapsing broadcast dims.
struct BcIndex {
  long long stride[3] = {0, 0, 0};
  int rank = 0;
  explicit BcIndex(const Tensor& t) {
    rank = t.rank();
    long long s = 1;
    for (int i = rank - 1; i >= 0; --i) {
      stride[i] = (t.shape[i] == 1) ? 0 : s;
      s *= t.shape[i];
    }
  }
};

template <typename F>
inline void for_each_bc3(const std::vector<int>& shape, F&& f) {
  const int d0 = shape[0], d1 = shape[1], d2 = shape[2];
  long long i = 0;
  for (int a = 0; a < d0; ++a)
    for (int b = 0; b < d1; ++b)
      for (int c = 0; c < d2; ++c) f(i++, a, b, c);
}

}  // namespace detail

template <typename FwdF, typename BwdAF, typename BwdBF>
inline Var binary_bc(const Var& a, const Var& b, const char* ctx, FwdF fwd, BwdAF dfa, BwdBF dfb) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  require(av.rank() == 3 || av.rank() == 1, std::string(ctx) + ": expected rank 1 or 3");
  if (av.rank() == 1) {
    require(bv.rank() == 1 && av.shape == bv.shape, std::string(ctx) + ": shape mismatch");
    Tensor out(av.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = fwd(av.data[i], bv.data[i]);
    auto an = a.n, bn = b.n;
    return make_op(std::move(out), {a, b}, [an, bn, dfa, dfb](const Tensor& g, GradMap& gm) {
      if (an->requires_grad) {
        Tensor& ga = grad_slot(gm, an.get());
        for (size_t i = 0; i < g.data.size(); ++i)
          ga.data[i] += g.data[i] * dfa(an->value.data[i], bn->value.data[i]);
      }
      if (bn->requires_grad) {
        Tensor& gb = grad_slot(gm, bn.get());
        for (size_t i = 0; i < g.data.size(); ++i)
          gb.data[i] += g.data[i] * dfb(an->value.data[i], bn->value.data[i]);
      }
    });
  }

  auto shape = detail::broadcast_shape(av, bv, ctx);
  Tensor out(shape);
  detail::BcIndex ia(av), ib(bv);
  detail::for_each_bc3(shape, [&](long long i, int c, int y, int x) {
    out.data[i] = fwd(av.data[c * ia.stride[0] + y * ia.stride[1] + x * ia.stride[2]],
                      bv.data[c * ib.stride[0] + y * ib.stride[1] + x * ib.stride[2]]);
  });
  auto an = a.n, bn = b.n;
  return make_op(std::move(out), {a, b},
                 [an, bn, shape, ia, ib, dfa, dfb](const Tensor& g, GradMap& gm) {
    const Tensor& avv = an->value;
    const Tensor& bvv = bn->value;
    Tensor* ga = an->requires_grad ? &grad_slot(gm, an.get()) : nullptr;
    Tensor* gb = bn->requires_grad ? &grad_slot(gm, bn.get()) : nullptr;
    detail::for_each_bc3(shape, [&](long long i, int c, int y, int x) {
      long long ja = c * ia.stride[0] + y * ia.stride[1] + x * ia.stride[2];
      long long jb = c * ib.stride[0] + y * ib.stride[1] + x * ib.stride[2];
      if (ga) ga->data[ja] += g.data[i] * dfa(avv.data[ja], bvv.data[jb]);
      if (gb) gb->data[jb] += g.data[i] * dfb(avv.data[ja], bvv.data[jb]);
    });
  });
}

inline Var add(const Var& a, const Var& b) {
  return binary_bc(a, b, "add",
                   [](double x, double y) { return x + y; },
                   [](double, double) { return 1.0; },
                   [](double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return binary_bc(a, b, "sub",
                   [](double x, double y) { return x - y; },
                   [](double, double) { return 1.0; },
                   [](double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
  return binary_bc(a, b, "mul",
                   [](double x, double y) { return x * y; },
                   [](double, double y) { return y; },
                   [](double x, double) { return x; });
}

inline Var add_const(const Var& a, const Tensor& c) { return add(a, constant(c)); }

// ---- channel concatenation ----

inline Var concat_channels(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_channels: empty input");
  const int h = parts[0].val().height(), w = parts[0].val().width();
  int ctot = 0;
  for (const auto& p : parts) {
    ensure_chw(p.val(), "concat_channels");
    require(p.val().height() == h && p.val().width() == w,
            "concat_channels: spatial dims mismatch");
    ctot += p.val().channels();
  }
  Tensor out = Tensor::chw(ctot, h, w);
  size_t off = 0;
  for (const auto& p : parts) {
    const auto& d = p.val().data;
    std::copy(d.begin(), d.end(), out.data.begin() + off);
    off += d.size();
  }
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.n);
  return make_op(std::move(out), parts, [nodes](const Tensor& g, GradMap& gm) {
    size_t off = 0;
    for (const auto& n : nodes) {
      size_t sz = n->value.data.size();
      if (n->requires_grad) {
        Tensor& gp = grad_slot(gm, n.get());
        for (size_t i = 0; i < sz; ++i) gp.data[i] += g.data[off + i];
      }
      off += sz;
    }
  });
}

// ---- pooling ----

inline Var global_avg_pool(const Var& x) {
  const Tensor& xv = x.val();
  ensure_chw(xv, "global_avg_pool");
  const int c = xv.channels(), h = xv.height(), w = xv.width();
  Tensor out = Tensor::chw(c, 1, 1);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (int y = 0; y < h; ++y) {
      const double* r = xv.row(ch, y);
      for (int xx = 0; xx < w; ++xx) s += r[xx];
    }
    out.at(ch, 0, 0) = s * inv;
  }
  auto xn = x.n;
  return make_op(std::move(out), {x}, [xn, c, h, w, inv](const Tensor& g, GradMap& gm) {
    if (!xn->requires_grad) return;
    Tensor& gx = grad_slot(gm, xn.get());
    for (int ch = 0; ch < c; ++ch) {
      double gv = g.at(ch, 0, 0) * inv;
      for (int y = 0; y < h; ++y) {
        double* r = gx.row(ch, y);
        for (int xx = 0; xx < w; ++xx) r[xx] += gv;
      }
    }
  });
}

// 2x2 max pool, stride 2, floor semantics (odd trailing row/col dropped).
inline Var maxpool2(const Var& x) {
  const Tensor& xv = x.val();
  ensure_chw(xv, "maxpool2");
  const int c = xv.channels(), h = xv.height(), w = xv.width();
  const int oh = h / 2, ow = w / 2;
  require(oh >= 1 && ow >= 1, "maxpool2: input too small " + xv.shape_str());
  Tensor out = Tensor::chw(c, oh, ow);
  std::vector<long long> argmax(out.data.size());
  long long o = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++o) {
        double best = -1e308;
        long long bi = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            long long idx = (static_cast<long long>(ch) * h + 2 * oy + dy) * w + 2 * ox + dx;
            if (xv.data[idx] > best) best = xv.data[idx], bi = idx;
          }
        out.data[o] = best;
        argmax[o] = bi;
      }
  auto xn = x.n;
  return make_op(std::move(out), {x}, [xn, argmax](const Tensor& g, GradMap& gm) {
    if (!xn->requires_grad) return;
    Tensor& gx = grad_slot(gm, xn.get());
    for (size_t i = 0; i < g.data.size(); ++i) gx.data[argmax[i]] += g.data[i];
  });
}

// ---- convolution ----

namespace detail {

// Materialized border padding for conv inputs; keeps inner loops contiguous.
inline Tensor pad_for_conv(const Tensor& x, int p, Pad mode) {
  if (p == 0) return x;
  if (mode == Pad::Reflect) return pad_reflect(x, p, p, p, p);
  const int c = x.channels(), h = x.height(), w = x.width();
  Tensor out = Tensor::chw(c, h + 2 * p, w + 2 * p, 0.0);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      const double* src = x.row(ch, y);
      double* dst = out.row(ch, y + p) + p;
      for (int xx = 0; xx < w; ++xx) dst[xx] = src[xx];
    }
  return out;
}

// Folds a padded-space gradient back onto the unpadded input gradient.
inline void unpad_accumulate(Tensor& gx, const Tensor& gpad, int p, Pad mode) {
  const int c = gx.channels(), h = gx.height(), w = gx.width();
  if (p == 0) {
    for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gpad.data[i];
    return;
  }
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < gpad.height(); ++y) {
      const double* src = gpad.row(ch, y);
      int ty = y - p;
      if (mode == Pad::Zero) {
        if (ty < 0 || ty >= h) continue;
        double* dst = gx.row(ch, ty);
        for (int xx = 0; xx < w; ++xx) dst[xx] += src[xx + p];
      } else {
        double* dst = gx.row(ch, reflect_index(ty, h));
        for (int xx = 0; xx < gpad.width(); ++xx)
          dst[reflect_index(xx - p, w)] += src[xx];
      }
    }
}

inline int conv_out_dim(int in, int k, int p, int s) { return (in + 2 * p - k) / s + 1; }

}  // namespace detail

// Plain 2D convolution. x:(Ci,H,W), w:(Co,Ci,K,K), b:(Co) or empty Var.
// Padding is always (K-1)/2, so stride 1 preserves the spatial size.
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, Pad pad_mode) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  ensure_chw(xv, "conv2d");
  require(wv.rank() == 4 && wv.dim(2) == wv.dim(3), "conv2d: weight must be (Co,Ci,K,K)");
  require(wv.dim(1) == xv.channels(),
          "conv2d: weight expects " + std::to_string(wv.dim(1)) + " input channels, got " + xv.shape_str());
  require(stride >= 1, "conv2d: stride must be >= 1");
  const int co = wv.dim(0), ci = wv.dim(1), k = wv.dim(2), p = (k - 1) / 2;
  const bool has_bias = b.defined();
  if (has_bias)
    require(b.val().rank() == 1 && b.val().dim(0) == co, "conv2d: bias must be (Co)");

  const Tensor xp = detail::pad_for_conv(xv, p, pad_mode);
  const int hp = xp.height(), wp = xp.width();
  const int oh = detail::conv_out_dim(xv.height(), k, p, stride);
  const int ow = detail::conv_out_dim(xv.width(), k, p, stride);
  require(oh >= 1 && ow >= 1, "conv2d: input too small " + xv.shape_str());

  Tensor out = Tensor::chw(co, oh, ow);
  for (int oc = 0; oc < co; ++oc) {
    double bias = has_bias ? b.val().data[oc] : 0.0;
    for (double* r = out.row(oc, 0); r != out.row(oc, 0) + static_cast<size_t>(oh) * ow; ++r)
      *r = bias;
    for (int ic = 0; ic < ci; ++ic)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double wgt = wv.at4(oc, ic, ky, kx);
          for (int oy = 0; oy < oh; ++oy) {
            const double* xr = xp.row(ic, oy * stride + ky) + kx;
            double* orow = out.row(oc, oy);
            if (stride == 1) {
              for (int ox = 0; ox < ow; ++ox) orow[ox] += wgt * xr[ox];
            } else {
              for (int ox = 0; ox < ow; ++ox) orow[ox] += wgt * xr[ox * stride];
            }
          }
        }
  }

  auto xn = x.n, wn = w.n, bn = b.n;
  std::vector<Var> parents = {x, w};
  if (has_bias) parents.push_back(b);
  return make_op(std::move(out), std::move(parents),
                 [xn, wn, bn, xp, stride, pad_mode, k, p, co, ci, oh, ow, hp, wp](
                     const Tensor& g, GradMap& gm) {
    const bool need_x = xn->requires_grad;
    const bool need_w = wn->requires_grad;
    Tensor gpad = need_x ? Tensor::chw(ci, hp, wp) : Tensor();
    Tensor* gw = need_w ? &grad_slot(gm, wn.get()) : nullptr;
    const Tensor& wv = wn->value;
    for (int oc = 0; oc < co; ++oc) {
      for (int ic = 0; ic < ci; ++ic)
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const double wgt = wv.at4(oc, ic, ky, kx);
            double acc = 0.0;
            for (int oy = 0; oy < oh; ++oy) {
              const double* grow = g.row(oc, oy);
              const double* xr = xp.row(ic, oy * stride + ky) + kx;
              double* gr = need_x ? gpad.row(ic, oy * stride + ky) + kx : nullptr;
              if (need_x && need_w) {
                for (int ox = 0; ox < ow; ++ox) {
                  acc += grow[ox] * xr[ox * stride];
                  gr[ox * stride] += wgt * grow[ox];
                }
              } else if (need_w) {
                for (int ox = 0; ox < ow; ++ox) acc += grow[ox] * xr[ox * stride];
              } else if (need_x) {
                for (int ox = 0; ox < ow; ++ox) gr[ox * stride] += wgt * grow[ox];
              }
            }
            if (gw) gw->at4(oc, ic, ky, kx) += acc;
          }
    }
    if (need_x) detail::unpad_accumulate(grad_slot(gm, xn.get()), gpad, p, pad_mode);
    if (bn && bn->requires_grad) {
      Tensor& gb = grad_slot(gm, bn.get());
      for (int oc = 0; oc < co; ++oc) {
        double s = 0.0;
        for (int oy = 0; oy < oh; ++oy) {
          const double* grow = g.row(oc, oy);
          for (int ox = 0; ox < ow; ++ox) s += grow[ox];
        }
        gb.data[oc] += s;
      }
    }
  });
}

// Transposed convolution, kernel 4, stride 2, pad 1: exact 2x upsampler shape
// (H,W) -> (2H,2W). Weight layout (Ci,Co,4,4). Forward scatters input pixels.
inline Var conv_transpose2d(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  ensure_chw(xv, "conv_transpose2d");
  require(wv.rank() == 4 && wv.dim(2) == 4 && wv.dim(3) == 4,
          "conv_transpose2d: weight must be (Ci,Co,4,4)");
  require(wv.dim(0) == xv.channels(), "conv_transpose2d: channel mismatch");
  const int ci = wv.dim(0), co = wv.dim(1), h = xv.height(), wd = xv.width();
  const int oh = 2 * h, ow = 2 * wd;
  const bool has_bias = b.defined();
  if (has_bias)
    require(b.val().rank() == 1 && b.val().dim(0) == co, "conv_transpose2d: bias must be (Co)");

  Tensor out = Tensor::chw(co, oh, ow);
  for (int oc = 0; oc < co; ++oc) {
    double bias = has_bias ? b.val().data[oc] : 0.0;
    double* base = out.row(oc, 0);
    for (long long i = 0; i < static_cast<long long>(oh) * ow; ++i) base[i] = bias;
  }
  for (int ic = 0; ic < ci; ++ic)
    for (int oc = 0; oc < co; ++oc)
      for (int ky = 0; ky < 4; ++ky)
        for (int kx = 0; kx < 4; ++kx) {
          const double wgt = wv.at4(ic, oc, ky, kx);
          for (int iy = 0; iy < h; ++iy) {
            const int oy = 2 * iy + ky - 1;
            if (oy < 0 || oy >= oh) continue;
            const double* xr = xv.row(ic, iy);
            double* orow = out.row(oc, oy);
            int ix0 = (kx - 1 < 0) ? 1 : 0;  // keep ox = 2*ix+kx-1 in range
            int ix1 = (2 * (wd - 1) + kx - 1 >= ow) ? wd - 1 : wd;
            for (int ix = ix0; ix < ix1; ++ix) orow[2 * ix + kx - 1] += wgt * xr[ix];
          }
        }

  auto xn = x.n, wn = w.n, bn = b.n;
  std::vector<Var> parents = {x, w};
  if (has_bias) parents.push_back(b);
  return make_op(std::move(out), std::move(parents),
                 [xn, wn, bn, ci, co, h, wd, oh, ow](const Tensor& g, GradMap& gm) {
    const Tensor& xv = xn->value;
    const Tensor& wv = wn->value;
    Tensor* gx = xn->requires_grad ? &grad_slot(gm, xn.get()) : nullptr;
    Tensor* gw = wn->requires_grad ? &grad_slot(gm, wn.get()) : nullptr;
    for (int ic = 0; ic < ci; ++ic)
      for (int oc = 0; oc < co; ++oc)
        for (int ky = 0; ky < 4; ++ky)
          for (int kx = 0; kx < 4; ++kx) {
            const double wgt = wv.at4(ic, oc, ky, kx);
            double acc = 0.0;
            for (int iy = 0; iy < h; ++iy) {
              const int oy = 2 * iy + ky - 1;
              if (oy < 0 || oy >= oh) continue;
              const double* grow = g.row(oc, oy);
              const double* xr = xv.row(ic, iy);
              double* gxr = gx ? gx->row(ic, iy) : nullptr;
              int ix0 = (kx - 1 < 0) ? 1 : 0;
              int ix1 = (2 * (wd - 1) + kx - 1 >= ow) ? wd - 1 : wd;
              for (int ix = ix0; ix < ix1; ++ix) {
                const double gv = grow[2 * ix + kx - 1];
                acc += gv * xr[ix];
                if (gxr) gxr[ix] += wgt * gv;
              }
            }
            if (gw) gw->at4(ic, oc, ky, kx) += acc;
          }
    if (bn && bn->requires_grad) {
      Tensor& gb = grad_slot(gm, bn.get());
      for (int oc = 0; oc < co; ++oc) {
        double s = 0.0;
        const double* base = g.row(oc, 0);
        for (long long i = 0; i < static_cast<long long>(oh) * ow; ++i) s += base[i];
        gb.data[oc] += s;
      }
    }
  });
}

// ---- deformable convolution ----

namespace detail {

// Continuous reflect-101 fold onto [0, size-1]; dsign is the derivative of
// the mapping (+1 or -1, 0 for size 1).
inline void reflect_fold(double t, int size, double& out, double& dsign) {
  if (size == 1) {
    out = 0.0;
    dsign = 0.0;
    return;
  }
  const double p = 2.0 * (size - 1);
  double m = std::fmod(t, p);
  if (m < 0.0) m += p;
  // fmod keeps the local slope of t -> m at +1, so only the final fold flips
  // the derivative sign.
  if (m > static_cast<double>(size - 1)) {
    out = p - m;
    dsign = -1.0;
  } else {
    out = m;
    dsign = 1.0;
  }
}

struct BilinearSample {
  int y0, y1, x0, x1;
  double fy, fx;
  double sy, sx;  // fold signs for the offset gradient
};

inline BilinearSample plan_sample(double py, double px, int h, int w) {
  BilinearSample s;
  double my, mx;
  reflect_fold(py, h, my, s.sy);
  reflect_fold(px, w, mx, s.sx);
  double fy0 = std::floor(my), fx0 = std::floor(mx);
  s.y0 = static_cast<int>(fy0);
  s.x0 = static_cast<int>(fx0);
  if (s.y0 > h - 1) s.y0 = h - 1;
  if (s.x0 > w - 1) s.x0 = w - 1;
  s.y1 = s.y0 + 1 > h - 1 ? h - 1 : s.y0 + 1;
  s.x1 = s.x0 + 1 > w - 1 ? w - 1 : s.x0 + 1;
  s.fy = my - fy0;
  s.fx = mx - fx0;
  return s;
}

}  // namespace detail

// Deformable 3x3 convolution (v1: learned offsets, no modulation masks),
// stride 1, reflect-101 boundary sampling. offsets:(18,H,W) hold per-tap
// (dy,dx) pairs in row-major tap order. With all offsets zero the sampling
// lands on the integer lattice and the op reduces to conv2d with reflect
// padding, accumulating in the same channel/tap order.
inline Var deform_conv2d(const Var& x, const Var& w, const Var& b, const Var& offsets) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  const Tensor& off = offsets.val();
  ensure_chw(xv, "deform_conv2d");
  require(wv.rank() == 4 && wv.dim(2) == 3 && wv.dim(3) == 3,
          "deform_conv2d: weight must be (Co,Ci,3,3)");
  require(wv.dim(1) == xv.channels(), "deform_conv2d: channel mismatch");
  require(off.rank() == 3 && off.channels() == 18 && off.height() == xv.height() &&
              off.width() == xv.width(),
          "deform_conv2d: offsets must be (18,H,W) matching the input");
  const int co = wv.dim(0), ci = wv.dim(1), h = xv.height(), wd = xv.width();
  const bool has_bias = b.defined();
  if (has_bias)
    require(b.val().rank() == 1 && b.val().dim(0) == co, "deform_conv2d: bias must be (Co)");

  Tensor out = Tensor::chw(co, h, wd);
  std::vector<double> samples(static_cast<size_t>(ci) * 9);
  std::vector<detail::BilinearSample> plans(9);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < wd; ++xx) {
      for (int t = 0; t < 9; ++t) {
        double py = y + t / 3 - 1 + off.at(2 * t, y, xx);
        double px = xx + t % 3 - 1 + off.at(2 * t + 1, y, xx);
        plans[t] = detail::plan_sample(py, px, h, wd);
      }
      for (int ic = 0; ic < ci; ++ic)
        for (int t = 0; t < 9; ++t) {
          const auto& s = plans[t];
          double a = xv.at(ic, s.y0, s.x0) + s.fx * (xv.at(ic, s.y0, s.x1) - xv.at(ic, s.y0, s.x0));
          double bb = xv.at(ic, s.y1, s.x0) + s.fx * (xv.at(ic, s.y1, s.x1) - xv.at(ic, s.y1, s.x0));
          samples[static_cast<size_t>(ic) * 9 + t] = a + s.fy * (bb - a);
        }
      for (int oc = 0; oc < co; ++oc) {
        double acc = has_bias ? b.val().data[oc] : 0.0;
        const double* wrow = wv.data.data() + static_cast<size_t>(oc) * ci * 9;
        for (size_t i = 0; i < static_cast<size_t>(ci) * 9; ++i) acc += wrow[i] * samples[i];
        out.at(oc, y, xx) = acc;
      }
    }

  auto xn = x.n, wn = w.n, bn = b.n, on = offsets.n;
  std::vector<Var> parents = {x, w, offsets};
  if (has_bias) parents.push_back(b);
  return make_op(std::move(out), std::move(parents),
                 [xn, wn, bn, on, co, ci, h, wd](const Tensor& g, GradMap& gm) {
    const Tensor& xv = xn->value;
    const Tensor& wv = wn->value;
    const Tensor& off = on->value;
    Tensor* gx = xn->requires_grad ? &grad_slot(gm, xn.get()) : nullptr;
    Tensor* gw = wn->requires_grad ? &grad_slot(gm, wn.get()) : nullptr;
    Tensor* go = on->requires_grad ? &grad_slot(gm, on.get()) : nullptr;
    Tensor* gb = (bn && bn->requires_grad) ? &grad_slot(gm, bn.get()) : nullptr;

    std::vector<detail::BilinearSample> plans(9);
    std::vector<double> gs(static_cast<size_t>(ci) * 9);
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < wd; ++xx) {
        for (int t = 0; t < 9; ++t) {
          double py = y + t / 3 - 1 + off.at(2 * t, y, xx);
          double px = xx + t % 3 - 1 + off.at(2 * t + 1, y, xx);
          plans[t] = detail::plan_sample(py, px, h, wd);
        }
        // gs[ic][t] = sum_oc w(oc,ic,t) * gout(oc); also feed gw and gb.
        std::fill(gs.begin(), gs.end(), 0.0);
        for (int oc = 0; oc < co; ++oc) {
          const double gv = g.at(oc, y, xx);
          if (gb) gb->data[oc] += gv;
          const double* wrow = wv.data.data() + static_cast<size_t>(oc) * ci * 9;
          double* gwrow = gw ? gw->data.data() + static_cast<size_t>(oc) * ci * 9 : nullptr;
          for (int ic = 0; ic < ci; ++ic)
            for (int t = 0; t < 9; ++t) {
              const size_t i = static_cast<size_t>(ic) * 9 + t;
              gs[i] += wrow[i] * gv;
              if (gwrow) {
                const auto& s = plans[t];
                double a = xv.at(ic, s.y0, s.x0) +
                           s.fx * (xv.at(ic, s.y0, s.x1) - xv.at(ic, s.y0, s.x0));
                double bb = xv.at(ic, s.y1, s.x0) +
                            s.fx * (xv.at(ic, s.y1, s.x1) - xv.at(ic, s.y1, s.x0));
                gwrow[i] += gv * (a + s.fy * (bb - a));
              }
            }
        }
        if (!gx && !go) continue;
        for (int t = 0; t < 9; ++t) {
          const auto& s = plans[t];
          double dpy = 0.0, dpx = 0.0;
          for (int ic = 0; ic < ci; ++ic) {
            const double gsv = gs[static_cast<size_t>(ic) * 9 + t];
            if (gsv == 0.0 && !gx) continue;
            const double v00 = xv.at(ic, s.y0, s.x0), v01 = xv.at(ic, s.y0, s.x1);
            const double v10 = xv.at(ic, s.y1, s.x0), v11 = xv.at(ic, s.y1, s.x1);
            if (gx) {
              gx->at(ic, s.y0, s.x0) += gsv * (1.0 - s.fy) * (1.0 - s.fx);
              gx->at(ic, s.y0, s.x1) += gsv * (1.0 - s.fy) * s.fx;
              gx->at(ic, s.y1, s.x0) += gsv * s.fy * (1.0 - s.fx);
              gx->at(ic, s.y1, s.x1) += gsv * s.fy * s.fx;
            }
            if (go) {
              dpy += gsv * ((1.0 - s.fx) * (v10 - v00) + s.fx * (v11 - v01));
              dpx += gsv * ((1.0 - s.fy) * (v01 - v00) + s.fy * (v11 - v10));
            }
          }
          if (go) {
            go->at(2 * t, y, xx) += dpy * s.sy;
            go->at(2 * t + 1, y, xx) += dpx * s.sx;
          }
        }
      }
  });
}

// ---- differentiable bilinear resize ----

inline Var resize_bilinear_ag(const Var& x, int out_h, int out_w) {
  Tensor out = resize_bilinear(x.val(), out_h, out_w);
  const int c = x.val().channels(), h = x.val().height(), w = x.val().width();
  auto ty = resize_taps(h, out_h);
  auto tx = resize_taps(w, out_w);
  auto xn = x.n;
  return make_op(std::move(out), {x},
                 [xn, ty, tx, c, out_h, out_w](const Tensor& g, GradMap& gm) {
    if (!xn->requires_grad) return;
    Tensor& gx = grad_slot(gm, xn.get());
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < out_h; ++oy) {
        const double fy = ty[oy].t;
        double* g0 = gx.row(ch, ty[oy].lo);
        double* g1 = gx.row(ch, ty[oy].hi);
        const double* grow = g.row(ch, oy);
        for (int ox = 0; ox < out_w; ++ox) {
          const auto& t = tx[ox];
          const double gv = grow[ox];
          g0[t.lo] += gv * (1.0 - fy) * (1.0 - t.t);
          g0[t.hi] += gv * (1.0 - fy) * t.t;
          g1[t.lo] += gv * fy * (1.0 - t.t);
          g1[t.hi] += gv * fy * t.t;
        }
      }
  });
}

// Per-channel affine with constant coefficients: out[c] = x[c]*scale[c]+shift[c].
inline Var scale_shift_channels(const Var& x, const Tensor& scale, const Tensor& shift) {
  const Tensor& xv = x.val();
  ensure_chw(xv, "scale_shift_channels");
  require(scale.rank() == 1 && shift.rank() == 1 && scale.dim(0) == xv.channels() &&
              shift.dim(0) == xv.channels(),
          "scale_shift_channels: coefficient shape mismatch");
  Tensor out = xv;
  const int c = xv.channels();
  const long long plane = static_cast<long long>(xv.height()) * xv.width();
  for (int ch = 0; ch < c; ++ch) {
    double* base = out.row(ch, 0);
    const double s = scale.data[ch], sh = shift.data[ch];
    for (long long i = 0; i < plane; ++i) base[i] = base[i] * s + sh;
  }
  auto xn = x.n;
  return make_op(std::move(out), {x}, [xn, scale, c, plane](const Tensor& g, GradMap& gm) {
    if (!xn->requires_grad) return;
    Tensor& gx = grad_slot(gm, xn.get());
    for (int ch = 0; ch < c; ++ch) {
      double* base = gx.row(ch, 0);
      const double* grow = g.row(ch, 0);
      const double s = scale.data[ch];
      for (long long i = 0; i < plane; ++i) base[i] += grow[i] * s;
    }
  });
}

// ---- reductions to scalars ----

// Mean absolute difference over all elements; shapes must match.
inline Var mean_abs_diff(const Var& a, const Var& b) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  require(av.same_shape(bv),
          "mean_abs_diff: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  const double inv = 1.0 / static_cast<double>(av.numel());
  double s = 0.0;
  for (size_t i = 0; i < av.data.size(); ++i) s += std::abs(av.data[i] - bv.data[i]);
  auto an = a.n, bn = b.n;
  return make_op(Tensor::scalar(s * inv), {a, b}, [an, bn, inv](const Tensor& g, GradMap& gm) {
    const double gv = g.data[0] * inv;
    const Tensor& av = an->value;
    const Tensor& bv = bn->value;
    Tensor* ga = an->requires_grad ? &grad_slot(gm, an.get()) : nullptr;
    Tensor* gb = bn->requires_grad ? &grad_slot(gm, bn.get()) : nullptr;
    for (size_t i = 0; i < av.data.size(); ++i) {
      const double d = av.data[i] - bv.data[i];
      const double sg = (d > 0.0) ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (ga) ga->data[i] += gv * sg;
      if (gb) gb->data[i] -= gv * sg;
    }
  });
}

// Smooth L1 surrogate: mean over pixels of sqrt((a-t)^2 + eps^2).
// At a == t this is exactly eps, and the gradient is exactly zero.
inline Var charbonnier_mean(const Var& a, const Tensor& target, double eps) {
  const Tensor& av = a.val();
  require(av.same_shape(target),
          "charbonnier_mean: shape mismatch " + av.shape_str() + " vs " + target.shape_str());
  require(eps > 0.0, "charbonnier_mean: eps must be positive");
  const double inv = 1.0 / static_cast<double>(av.numel());
  const double e2 = eps * eps;
  // Compensated summation, then a true division: with a == target every term
  // is exactly eps (sqrt(fl(eps^2)) == eps) and the mean comes out bitwise
  // equal to eps, which plain accumulation does not guarantee.
  double s = 0.0, comp = 0.0;
  for (size_t i = 0; i < av.data.size(); ++i) {
    const double d = av.data[i] - target.data[i];
    const double y = std::sqrt(d * d + e2) - comp;
    const double t = s + y;
    comp = (t - s) - y;
    s = t;
  }
  s /= static_cast<double>(av.numel());
  auto an = a.n;
  Tensor tgt = target;
  return make_op(Tensor::scalar(s), {a},
                 [an, tgt, inv, e2](const Tensor& g, GradMap& gm) {
    if (!an->requires_grad) return;
    Tensor& ga = grad_slot(gm, an.get());
    const double gv = g.data[0] * inv;
    const Tensor& av = an->value;
    for (size_t i = 0; i < av.data.size(); ++i) {
      const double d = av.data[i] - tgt.data[i];
      ga.data[i] += gv * d / std::sqrt(d * d + e2);
    }
  });
}

// ---- scalar (shape (1)) arithmetic ----

inline void check_scalar(const Var& v, const char* ctx) {
  require(v.defined() && v.val().numel() == 1, std::string(ctx) + ": expected scalar");
}

inline Var s_add(const Var& a, const Var& b) {
  check_scalar(a, "s_add");
  check_scalar(b, "s_add");
  auto an = a.n, bn = b.n;
  return make_op(Tensor::scalar(a.val().data[0] + b.val().data[0]), {a, b},
                 [an, bn](const Tensor& g, GradMap& gm) {
    if (an->requires_grad) grad_slot(gm, an.get()).data[0] += g.data[0];
    if (bn->requires_grad) grad_slot(gm, bn.get()).data[0] += g.data[0];
  });
}

inline Var s_mul(const Var& a, const Var& b) {
  check_scalar(a, "s_mul");
  check_scalar(b, "s_mul");
  auto an = a.n, bn = b.n;
  return make_op(Tensor::scalar(a.val().data[0] * b.val().data[0]), {a, b},
                 [an, bn](const Tensor& g, GradMap& gm) {
    if (an->requires_grad) grad_slot(gm, an.get()).data[0] += g.data[0] * bn->value.data[0];
    if (bn->requires_grad) grad_slot(gm, bn.get()).data[0] += g.data[0] * an->value.data[0];
  });
}

inline Var s_scale(const Var& a, double c) {
  check_scalar(a, "s_scale");
  auto an = a.n;
  return make_op(Tensor::scalar(a.val().data[0] * c), {a}, [an, c](const Tensor& g, GradMap& gm) {
    if (an->requires_grad) grad_slot(gm, an.get()).data[0] += g.data[0] * c;
  });
}

// 1 / max(x, floor); gradient is zero in the clamped region.
inline Var s_inv_clamped(const Var& a, double floor_val) {
  check_scalar(a, "s_inv_clamped");
  require(floor_val > 0.0, "s_inv_clamped: floor must be positive");
  const double xv = a.val().data[0];
  const double denom = xv < floor_val ? floor_val : xv;
  auto an = a.n;
  return make_op(Tensor::scalar(1.0 / denom), {a},
                 [an, floor_val](const Tensor& g, GradMap& gm) {
    if (!an->requires_grad) return;
    const double x = an->value.data[0];
    if (x >= floor_val) grad_slot(gm, an.get()).data[0] -= g.data[0] / (x * x);
  });
}

inline Var s_sum(const std::vector<Var>& terms) {
  require(!terms.empty(), "s_sum: empty");
  Var acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = s_add(acc, terms[i]);
  return acc;
}

}  // namespace hcd
