#pragma once

#include <Eigen/Dense>

#include "gaunet/autodiff.hpp"

namespace gau::ad {

namespace detail {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapRM = Eigen::Map<MatRM<S>>;
template <typename S>
using CMapRM = Eigen::Map<const MatRM<S>>;

// Strides of `shape` as seen from broadcast coordinates of `out` (0 where the
// input extent is 1, trailing-aligned).
inline std::vector<long> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<long> st(out.size(), 0);
  long stride = 1;
  size_t off = out.size() - shape.size();
  for (int i = (int)shape.size() - 1; i >= 0; --i) {
    st[i + off] = (shape[i] == 1) ? 0 : stride;
    stride *= shape[i];
  }
  return st;
}

// Most broadcasts here have all their broadcast dims in one contiguous run
// (biases {C}, per-sample scalars {N,1,1,1}, channel stats {1,1,1,C}, spatial
// means {N,1,1,C}): then the operand's flat index for flat output index o is
// (o / bc) * c + (o % c), which admits blockwise kernels instead of the
// per-element odometer.
struct RunIdx {
  bool found = false;  // single-run decomposition applies
  bool full = false;   // no broadcast dims at all (sizes equal)
  long bc = 1, c = 1;
};

inline RunIdx run_index(const Shape& shape, const Shape& out) {
  auto st = broadcast_strides(shape, out);
  int lo = -1, hi = -1;
  for (int d = 0; d < (int)out.size(); ++d)
    if (st[d] == 0 && out[d] > 1) {
      if (lo < 0) lo = d;
      hi = d;
    }
  RunIdx r;
  if (lo < 0) {
    r.found = r.full = true;
    return r;
  }
  for (int d = lo; d <= hi; ++d)
    if (st[d] != 0 && out[d] > 1) return r;  // gap in the run: fall back
  r.found = true;
  for (int d = hi + 1; d < (int)out.size(); ++d) r.c *= out[d];
  r.bc = r.c;
  for (int d = lo; d <= hi; ++d) r.bc *= out[d];
  return r;
}

template <typename S, typename F>
Tensor<S> ew_binary(const Tensor<S>& a, const Tensor<S>& b, F f) {
  if (a.shape == b.shape) {
    Tensor<S> out(a.shape);
    for (long i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  Shape os = broadcast_shape(a.shape, b.shape);
  Tensor<S> out(os);
  RunIdx ra = run_index(a.shape, os), rb = run_index(b.shape, os);
  if (ra.found && rb.full) {  // b is full-sized, a repeats
    for (long o = 0; o < out.size();) {
      long base = (o / ra.bc) * ra.c;
      if (ra.c == 1) {
        S av = a[base];
        for (long j = 0; j < ra.bc; ++j, ++o) out[o] = f(av, b[o]);
      } else {
        for (long rep = 0; rep < ra.bc / ra.c; ++rep)
          for (long j = 0; j < ra.c; ++j, ++o) out[o] = f(a[base + j], b[o]);
      }
    }
    return out;
  }
  if (rb.found && ra.full) {  // a is full-sized, b repeats
    for (long o = 0; o < out.size();) {
      long base = (o / rb.bc) * rb.c;
      if (rb.c == 1) {
        S bv = b[base];
        for (long j = 0; j < rb.bc; ++j, ++o) out[o] = f(a[o], bv);
      } else {
        for (long rep = 0; rep < rb.bc / rb.c; ++rep)
          for (long j = 0; j < rb.c; ++j, ++o) out[o] = f(a[o], b[base + j]);
      }
    }
    return out;
  }

  auto sa = broadcast_strides(a.shape, os);
  auto sb = broadcast_strides(b.shape, os);
  int r = (int)os.size();
  std::vector<int> idx(r, 0);
  long ia = 0, ib = 0;
  for (long o = 0; o < out.size(); ++o) {
    out[o] = f(a[ia], b[ib]);
    for (int d = r - 1; d >= 0; --d) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < os[d]) break;
      ia -= (long)os[d] * sa[d];
      ib -= (long)os[d] * sb[d];
      idx[d] = 0;
    }
  }
  return out;
}

template <typename S>
Tensor<S> reduce_to(const Tensor<S>& a, const Shape& target) {
  if (a.shape == target) return a;
  if (!broadcastable_to(target, a.shape))
    throw std::invalid_argument("sum_to: target " + shape_str(target) +
                                " not broadcastable to " + shape_str(a.shape));
  Tensor<S> out(target);
  RunIdx r = run_index(target, a.shape);
  if (r.found && !r.full) {
    if (r.c == 1) {
      for (long i = 0, io = 0; i < a.size(); i += r.bc, ++io) {
        S s = 0;
        const S* p = &a[i];
        for (long j = 0; j < r.bc; ++j) s += p[j];
        out[io] = s;
      }
    } else {
      for (long i = 0; i < a.size();) {
        S* q = &out[(i / r.bc) * r.c];
        for (long rep = 0; rep < r.bc / r.c; ++rep, i += r.c) {
          const S* p = &a[i];
          for (long j = 0; j < r.c; ++j) q[j] += p[j];
        }
      }
    }
    return out;
  }
  if (r.full) {  // rank promotion only
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    return out;
  }

  auto st = broadcast_strides(target, a.shape);
  int rk = (int)a.shape.size();
  std::vector<int> idx(rk, 0);
  long io = 0;
  for (long i = 0; i < a.size(); ++i) {
    out[io] += a[i];
    for (int d = rk - 1; d >= 0; --d) {
      ++idx[d];
      io += st[d];
      if (idx[d] < a.shape[d]) break;
      io -= (long)a.shape[d] * st[d];
      idx[d] = 0;
    }
  }
  return out;
}

template <typename S>
Tensor<S> expand_to(const Tensor<S>& a, const Shape& target) {
  if (a.shape == target) return a;
  if (!broadcastable_to(a.shape, target))
    throw std::invalid_argument("broadcast_to: " + shape_str(a.shape) + " -> " + shape_str(target));
  Tensor<S> out(target);
  RunIdx r = run_index(a.shape, target);
  if (r.found && !r.full) {
    if (r.c == 1) {
      for (long o = 0, ia = 0; o < out.size(); o += r.bc, ++ia)
        std::fill_n(&out[o], r.bc, a[ia]);
    } else {
      for (long o = 0; o < out.size();) {
        const S* p = &a[(o / r.bc) * r.c];
        for (long rep = 0; rep < r.bc / r.c; ++rep, o += r.c) std::copy_n(p, r.c, &out[o]);
      }
    }
    return out;
  }
  if (r.full) {
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    return out;
  }

  auto st = broadcast_strides(a.shape, target);
  int rk = (int)target.size();
  std::vector<int> idx(rk, 0);
  long ia = 0;
  for (long o = 0; o < out.size(); ++o) {
    out[o] = a[ia];
    for (int d = rk - 1; d >= 0; --d) {
      ++idx[d];
      ia += st[d];
      if (idx[d] < target[d]) break;
      ia -= (long)target[d] * st[d];
      idx[d] = 0;
    }
  }
  return out;
}

struct ConvGeom {
  int n, h, w, ci;    // input
  int k, stride;      // square kernel
  int ho, wo;         // output spatial
  int pad_h0, pad_w0; // leading pads ("same" rule)
};

inline ConvGeom conv_geom(const Shape& x, int k, int stride) {
  if (x.size() != 4) throw std::invalid_argument("conv expects rank-4 NHWC, got " + shape_str(x));
  ConvGeom g;
  g.n = x[0]; g.h = x[1]; g.w = x[2]; g.ci = x[3];
  g.k = k; g.stride = stride;
  g.ho = (g.h + stride - 1) / stride;
  g.wo = (g.w + stride - 1) / stride;
  int pt_h = std::max((g.ho - 1) * stride + k - g.h, 0);
  int pt_w = std::max((g.wo - 1) * stride + k - g.w, 0);
  g.pad_h0 = pt_h / 2;
  g.pad_w0 = pt_w / 2;
  return g;
}

// Patch matrix: rows (n,oh,ow), cols (ky,kx,ci).
template <typename S>
std::vector<S> im2col(const Tensor<S>& x, const ConvGeom& g) {
  long rows = (long)g.n * g.ho * g.wo;
  long cols = (long)g.k * g.k * g.ci;
  std::vector<S> m(rows * cols, S(0));
  for (int n = 0; n < g.n; ++n)
    for (int oh = 0; oh < g.ho; ++oh)
      for (int ow = 0; ow < g.wo; ++ow) {
        S* row = m.data() + (((long)n * g.ho + oh) * g.wo + ow) * cols;
        int ih0 = oh * g.stride - g.pad_h0;
        int iw0 = ow * g.stride - g.pad_w0;
        for (int ky = 0; ky < g.k; ++ky) {
          int ih = ih0 + ky;
          if (ih < 0 || ih >= g.h) continue;
          const S* src = &x.data[(((long)n * g.h + ih) * g.w) * g.ci];
          for (int kx = 0; kx < g.k; ++kx) {
            int iw = iw0 + kx;
            if (iw < 0 || iw >= g.w) continue;
            std::copy(src + (long)iw * g.ci, src + (long)(iw + 1) * g.ci,
                      row + ((long)ky * g.k + kx) * g.ci);
          }
        }
      }
  return m;
}

// Adjoint of im2col: scatter-add patch rows back into an image tensor.
template <typename S>
Tensor<S> col2im(const std::vector<S>& m, const ConvGeom& g) {
  Tensor<S> x(Shape{g.n, g.h, g.w, g.ci});
  long cols = (long)g.k * g.k * g.ci;
  for (int n = 0; n < g.n; ++n)
    for (int oh = 0; oh < g.ho; ++oh)
      for (int ow = 0; ow < g.wo; ++ow) {
        const S* row = m.data() + (((long)n * g.ho + oh) * g.wo + ow) * cols;
        int ih0 = oh * g.stride - g.pad_h0;
        int iw0 = ow * g.stride - g.pad_w0;
        for (int ky = 0; ky < g.k; ++ky) {
          int ih = ih0 + ky;
          if (ih < 0 || ih >= g.h) continue;
          S* dst = &x.data[(((long)n * g.h + ih) * g.w) * g.ci];
          for (int kx = 0; kx < g.k; ++kx) {
            int iw = iw0 + kx;
            if (iw < 0 || iw >= g.w) continue;
            const S* src = row + ((long)ky * g.k + kx) * g.ci;
            S* d = dst + (long)iw * g.ci;
            for (int c = 0; c < g.ci; ++c) d[c] += src[c];
          }
        }
      }
  return x;
}

// y[n,oh,ow,co] = sum_{ky,kx,ci} x[patch] * w[ky,kx,ci,co]
// `cache` (optional) holds the im2col patch matrix: filled when empty, reused
// when already populated — the backward pass revisits the same columns.
template <typename S>
Tensor<S> conv_fwd(const Tensor<S>& x, const Tensor<S>& w, int stride,
                   std::vector<S>* cache = nullptr) {
  if (w.rank() != 4 || w.shape[0] != w.shape[1])
    throw std::invalid_argument("conv weights must be {k,k,ci,co}, got " + shape_str(w.shape));
  ConvGeom g = conv_geom(x.shape, w.shape[0], stride);
  if (w.shape[2] != g.ci)
    throw std::invalid_argument("conv channel mismatch: input " + shape_str(x.shape) +
                                " weights " + shape_str(w.shape));
  int co = w.shape[3];
  std::vector<S> local;
  std::vector<S>& m = cache ? *cache : local;
  if (m.empty()) m = im2col(x, g);
  long rows = (long)g.n * g.ho * g.wo, cols = (long)g.k * g.k * g.ci;
  Tensor<S> y(Shape{g.n, g.ho, g.wo, co});
  CMapRM<S> M(m.data(), rows, cols), W(w.data.data(), cols, co);
  MapRM<S> Y(y.data.data(), rows, co);
  Y.noalias() = M * W;
  return y;
}

// Adjoint of conv_fwd in its image argument: maps {n,ho,wo,co} back to
// {n,h,w,ci}. Also serves as the forward pass of stride-1/2 deconvolution.
template <typename S>
Tensor<S> convT_fwd(const Tensor<S>& u, const Tensor<S>& w, int stride, int h, int wsp) {
  if (w.rank() != 4 || w.shape[0] != w.shape[1])
    throw std::invalid_argument("conv weights must be {k,k,ci,co}, got " + shape_str(w.shape));
  ConvGeom g = conv_geom(Shape{u.shape[0], h, wsp, w.shape[2]}, w.shape[0], stride);
  int co = w.shape[3];
  if (u.shape[1] != g.ho || u.shape[2] != g.wo || u.shape[3] != co)
    throw std::invalid_argument("convT shape mismatch: got " + shape_str(u.shape));
  long rows = (long)g.n * g.ho * g.wo, cols = (long)g.k * g.k * g.ci;
  std::vector<S> m(rows * cols);
  CMapRM<S> U(u.data.data(), rows, co), W(w.data.data(), cols, co);
  MapRM<S> M(m.data(), rows, cols);
  M.noalias() = U * W.transpose();
  return col2im(m, g);
}

// Gradient of conv_fwd in its weight argument; same column-cache contract.
template <typename S>
Tensor<S> conv_wgrad(const Tensor<S>& x, const Tensor<S>& u, int stride, int k,
                     std::vector<S>* cache = nullptr) {
  ConvGeom g = conv_geom(x.shape, k, stride);
  int co = u.shape[3];
  if (u.shape[0] != g.n || u.shape[1] != g.ho || u.shape[2] != g.wo)
    throw std::invalid_argument("conv_wgrad shape mismatch");
  std::vector<S> local;
  std::vector<S>& m = cache ? *cache : local;
  if (m.empty()) m = im2col(x, g);
  long rows = (long)g.n * g.ho * g.wo, cols = (long)g.k * g.k * g.ci;
  Tensor<S> w(Shape{k, k, g.ci, co});
  CMapRM<S> M(m.data(), rows, cols), U(u.data.data(), rows, co);
  MapRM<S> W(w.data.data(), cols, co);
  W.noalias() = M.transpose() * U;
  return w;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise / scalar ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sum_to(const Var<S>& a, Shape target);
template <typename S>
Var<S> broadcast_to(const Var<S>& a, Shape target);
template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S>
Var<S> neg(const Var<S>& a);
template <typename S>
Var<S> scale(const Var<S>& a, S c);

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  Tensor<S> v = detail::ew_binary<S>(a.value(), b.value(), [](S x, S y) { return x + y; });
  return Var<S>::op(std::move(v), {a, b}, [a, b](const Var<S>& g) {
    return std::vector<Var<S>>{sum_to(g, a.shape()), sum_to(g, b.shape())};
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  Tensor<S> v = detail::ew_binary<S>(a.value(), b.value(), [](S x, S y) { return x - y; });
  return Var<S>::op(std::move(v), {a, b}, [a, b](const Var<S>& g) {
    return std::vector<Var<S>>{sum_to(g, a.shape()), neg(sum_to(g, b.shape()))};
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  Tensor<S> v = detail::ew_binary<S>(a.value(), b.value(), [](S x, S y) { return x * y; });
  return Var<S>::op(std::move(v), {a, b}, [a, b](const Var<S>& g) {
    return std::vector<Var<S>>{sum_to(mul(g, b), a.shape()), sum_to(mul(g, a), b.shape())};
  });
}

template <typename S>
Var<S> neg(const Var<S>& a) {
  Tensor<S> v = a.value();
  for (S& x : v.data) x = -x;
  return Var<S>::op(std::move(v), {a},
                    [](const Var<S>& g) { return std::vector<Var<S>>{neg(g)}; });
}

template <typename S>
Var<S> scale(const Var<S>& a, S c) {
  Tensor<S> v = a.value();
  for (S& x : v.data) x *= c;
  return Var<S>::op(std::move(v), {a},
                    [c](const Var<S>& g) { return std::vector<Var<S>>{scale(g, c)}; });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S c) {
  Tensor<S> v = a.value();
  for (S& x : v.data) x += c;
  return Var<S>::op(std::move(v), {a},
                    [](const Var<S>& g) { return std::vector<Var<S>>{g}; });
}

template <typename S>
Var<S> pow_scalar(const Var<S>& a, S p) {
  Tensor<S> v = a.value();
  for (S& x : v.data) x = (S)std::pow((double)x, (double)p);
  return Var<S>::op(std::move(v), {a}, [a, p](const Var<S>& g) {
    return std::vector<Var<S>>{mul(g, scale(pow_scalar(a, (S)(p - 1)), p))};
  });
}

template <typename S>
Var<S> square(const Var<S>& a) {
  Tensor<S> v = a.value();
  for (S& x : v.data) x = x * x;
  return Var<S>::op(std::move(v), {a}, [a](const Var<S>& g) {
    return std::vector<Var<S>>{mul(g, scale(a, S(2)))};
  });
}

template <typename S>
Var<S> exp_(const Var<S>& a) {
  Tensor<S> v = a.value();
  for (S& x : v.data) x = (S)std::exp((double)x);
  return Var<S>::op(std::move(v), {a}, [a](const Var<S>& g) {
    return std::vector<Var<S>>{mul(g, exp_(a))};
  });
}

template <typename S>
Var<S> log_(const Var<S>& a) {
  Tensor<S> v = a.value();
  for (S& x : v.data) x = (S)std::log((double)x);
  return Var<S>::op(std::move(v), {a}, [a](const Var<S>& g) {
    return std::vector<Var<S>>{mul(g, pow_scalar(a, S(-1)))};
  });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  Tensor<S> v = a.value();
  for (S& x : v.data) x = (S)(1.0 / (1.0 + std::exp(-(double)x)));
  return Var<S>::op(std::move(v), {a}, [a](const Var<S>& g) {
    Var<S> s = sigmoid(a);  // recomputed so the rule stays differentiable
    return std::vector<Var<S>>{mul(g, mul(s, add_scalar(neg(s), S(1))))};
  });
}

template <typename S>
Var<S> leaky_relu(const Var<S>& a, S slope = S(0.01)) {
  Tensor<S> v = a.value();
  Tensor<S> mask(a.shape());
  for (long i = 0; i < v.size(); ++i) {
    mask[i] = v[i] > S(0) ? S(1) : slope;
    v[i] *= mask[i];
  }
  Var<S> m = constant(std::move(mask));  // piecewise-constant slope
  return Var<S>::op(std::move(v), {a}, [m](const Var<S>& g) {
    return std::vector<Var<S>>{mul(g, m)};
  });
}

// Clamp with straight-through gradient inside the range, zero outside.
template <typename S>
Var<S> clamp(const Var<S>& a, S lo, S hi) {
  Tensor<S> v = a.value();
  Tensor<S> mask(a.shape());
  for (long i = 0; i < v.size(); ++i) {
    mask[i] = (v[i] > lo && v[i] < hi) ? S(1) : S(0);
    v[i] = std::min(hi, std::max(lo, v[i]));
  }
  Var<S> m = constant(std::move(mask));
  return Var<S>::op(std::move(v), {a}, [m](const Var<S>& g) {
    return std::vector<Var<S>>{mul(g, m)};
  });
}

template <typename S>
Var<S> stop_grad(const Var<S>& a) {
  return constant(a.value());
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sum_to(const Var<S>& a, Shape target) {
  if (a.shape() == target) return a;
  Tensor<S> v = detail::reduce_to(a.value(), target);
  Shape src = a.shape();
  return Var<S>::op(std::move(v), {a}, [src](const Var<S>& g) {
    return std::vector<Var<S>>{broadcast_to(g, src)};
  });
}

template <typename S>
Var<S> broadcast_to(const Var<S>& a, Shape target) {
  if (a.shape() == target) return a;
  Tensor<S> v = detail::expand_to(a.value(), target);
  Shape src = a.shape();
  return Var<S>::op(std::move(v), {a}, [src](const Var<S>& g) {
    return std::vector<Var<S>>{sum_to(g, src)};
  });
}

template <typename S>
Var<S> sum_all(const Var<S>& a) {
  return sum_to(a, Shape{1});
}

template <typename S>
Var<S> mean_all(const Var<S>& a) {
  return scale(sum_all(a), S(1.0 / (double)numel(a.shape())));
}

// Mean over the given axes, extents kept as 1.
template <typename S>
Var<S> mean_axes(const Var<S>& a, const std::vector<int>& axes) {
  Shape t = a.shape();
  long n = 1;
  for (int ax : axes) {
    n *= t[ax];
    t[ax] = 1;
  }
  return scale(sum_to(a, t), S(1.0 / (double)n));
}

template <typename S>
Var<S> reshape(const Var<S>& a, Shape target) {
  if (numel(target) != numel(a.shape()))
    throw std::invalid_argument("reshape element count mismatch: " + shape_str(a.shape()) +
                                " -> " + shape_str(target));
  Tensor<S> v(target, a.value().data);
  Shape src = a.shape();
  return Var<S>::op(std::move(v), {a}, [src](const Var<S>& g) {
    return std::vector<Var<S>>{reshape(g, src)};
  });
}

template <typename S>
Var<S> transpose2d(const Var<S>& a) {
  const Shape& s = a.shape();
  if (s.size() != 2) throw std::invalid_argument("transpose2d expects rank 2");
  Tensor<S> v(Shape{s[1], s[0]});
  detail::CMapRM<S> A(a.value().data.data(), s[0], s[1]);
  detail::MapRM<S> V(v.data.data(), s[1], s[0]);
  V = A.transpose();
  return Var<S>::op(std::move(v), {a},
                    [](const Var<S>& g) { return std::vector<Var<S>>{transpose2d(g)}; });
}

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw std::invalid_argument("matmul shape mismatch: " + shape_str(sa) + " * " + shape_str(sb));
  Tensor<S> v(Shape{sa[0], sb[1]});
  detail::CMapRM<S> A(a.value().data.data(), sa[0], sa[1]);
  detail::CMapRM<S> B(b.value().data.data(), sb[0], sb[1]);
  detail::MapRM<S> V(v.data.data(), sa[0], sb[1]);
  V.noalias() = A * B;
  return Var<S>::op(std::move(v), {a, b}, [a, b](const Var<S>& g) {
    return std::vector<Var<S>>{matmul(g, transpose2d(b)), matmul(transpose2d(a), g)};
  });
}

template <typename S>
Var<S> slice_last(const Var<S>& a, int c0, int c1);

// Concatenate along the last axis.
template <typename S>
Var<S> concat_last(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last: empty input");
  Shape s = parts[0].shape();
  int ctot = 0;
  for (const auto& p : parts) {
    const Shape& q = p.shape();
    if (q.size() != s.size()) throw std::invalid_argument("concat_last rank mismatch");
    for (size_t i = 0; i + 1 < s.size(); ++i)
      if (q[i] != s[i]) throw std::invalid_argument("concat_last extent mismatch");
    ctot += q.back();
  }
  Shape os = s;
  os.back() = ctot;
  Tensor<S> v(os);
  long outer = numel(os) / ctot;
  long off = 0;
  for (const auto& p : parts) {
    int c = p.shape().back();
    const auto& pd = p.value().data;
    for (long o = 0; o < outer; ++o)
      std::copy(pd.begin() + o * c, pd.begin() + (o + 1) * c, v.data.begin() + o * ctot + off);
    off += c;
  }
  std::vector<int> splits;
  int acc = 0;
  for (const auto& p : parts) {
    splits.push_back(acc);
    acc += p.shape().back();
  }
  splits.push_back(acc);
  return Var<S>::op(std::move(v), parts, [splits](const Var<S>& g) {
    std::vector<Var<S>> out;
    for (size_t i = 0; i + 1 < splits.size(); ++i)
      out.push_back(slice_last(g, splits[i], splits[i + 1]));
    return out;
  });
}

template <typename S>
Var<S> pad_last(const Var<S>& a, int total, int offset);

template <typename S>
Var<S> slice_last(const Var<S>& a, int c0, int c1) {
  const Shape& s = a.shape();
  int c = s.back();
  if (c0 < 0 || c1 > c || c0 >= c1) throw std::invalid_argument("slice_last bad range");
  Shape os = s;
  os.back() = c1 - c0;
  Tensor<S> v(os);
  long outer = numel(s) / c;
  const auto& ad = a.value().data;
  for (long o = 0; o < outer; ++o)
    std::copy(ad.begin() + o * c + c0, ad.begin() + o * c + c1, v.data.begin() + o * (c1 - c0));
  return Var<S>::op(std::move(v), {a}, [c, c0](const Var<S>& g) {
    return std::vector<Var<S>>{pad_last(g, c, c0)};
  });
}

template <typename S>
Var<S> pad_last(const Var<S>& a, int total, int offset) {
  const Shape& s = a.shape();
  int c = s.back();
  Shape os = s;
  os.back() = total;
  Tensor<S> v(os);
  long outer = numel(s) / c;
  const auto& ad = a.value().data;
  for (long o = 0; o < outer; ++o)
    std::copy(ad.begin() + o * c, ad.begin() + (o + 1) * c, v.data.begin() + o * total + offset);
  return Var<S>::op(std::move(v), {a}, [c, offset](const Var<S>& g) {
    return std::vector<Var<S>>{slice_last(g, offset, offset + c)};
  });
}

// ---------------------------------------------------------------------------
// Convolution family (mutually adjoint, closed under differentiation)
// ---------------------------------------------------------------------------

template <typename S>
Var<S> conv2d_raw(const Var<S>& x, const Var<S>& w, int stride);
template <typename S>
Var<S> conv2d_transpose_raw(const Var<S>& u, const Var<S>& w, int stride, int h, int wsp);
template <typename S>
Var<S> conv2d_wgrad_raw(const Var<S>& x, const Var<S>& u, int stride, int k);

namespace detail {
// conv/wgrad nodes share one im2col matrix between the forward pass and every
// backward revisit of the same image (the GP double pass makes these hot)
template <typename S>
using ColCache = std::shared_ptr<std::vector<S>>;

template <typename S>
Var<S> conv2d_raw_cached(const Var<S>& x, const Var<S>& w, int stride, ColCache<S> cache);
template <typename S>
Var<S> conv2d_wgrad_cached(const Var<S>& x, const Var<S>& u, int stride, int k, ColCache<S> cache);

template <typename S>
Var<S> conv2d_raw_cached(const Var<S>& x, const Var<S>& w, int stride, ColCache<S> cache) {
  Tensor<S> v = detail::conv_fwd(x.value(), w.value(), stride, cache.get());
  int h = x.shape()[1], wsp = x.shape()[2], k = w.shape()[0];
  return Var<S>::op(std::move(v), {x, w}, [x, w, stride, h, wsp, k, cache](const Var<S>& g) {
    return std::vector<Var<S>>{conv2d_transpose_raw(g, w, stride, h, wsp),
                               conv2d_wgrad_cached(x, g, stride, k, cache)};
  });
}

template <typename S>
Var<S> conv2d_wgrad_cached(const Var<S>& x, const Var<S>& u, int stride, int k,
                           ColCache<S> cache) {
  Tensor<S> v = detail::conv_wgrad(x.value(), u.value(), stride, k, cache.get());
  int h = x.shape()[1], wsp = x.shape()[2];
  return Var<S>::op(std::move(v), {x, u}, [x, u, stride, h, wsp, cache](const Var<S>& g) {
    return std::vector<Var<S>>{conv2d_transpose_raw(u, g, stride, h, wsp),
                               conv2d_raw_cached(x, g, stride, cache)};
  });
}
}  // namespace detail

template <typename S>
Var<S> conv2d_raw(const Var<S>& x, const Var<S>& w, int stride) {
  return detail::conv2d_raw_cached(x, w, stride, std::make_shared<std::vector<S>>());
}

template <typename S>
Var<S> conv2d_transpose_raw(const Var<S>& u, const Var<S>& w, int stride, int h, int wsp) {
  Tensor<S> v = detail::convT_fwd(u.value(), w.value(), stride, h, wsp);
  int k = w.shape()[0];
  return Var<S>::op(std::move(v), {u, w}, [u, w, stride, k](const Var<S>& g) {
    auto gcols = std::make_shared<std::vector<S>>();  // shared by both adjoints
    Var<S> du = detail::conv2d_raw_cached(g, w, stride, gcols);
    Var<S> dw = detail::conv2d_wgrad_cached(g, u, stride, k, gcols);
    return std::vector<Var<S>>{du, dw};
  });
}

template <typename S>
Var<S> conv2d_wgrad_raw(const Var<S>& x, const Var<S>& u, int stride, int k) {
  return detail::conv2d_wgrad_cached(x, u, stride, k, std::make_shared<std::vector<S>>());
}

// ---------------------------------------------------------------------------
// 2x2 average pooling (stride 2); input spatial extents must be even
// ---------------------------------------------------------------------------

template <typename S>
Var<S> avg_unpool2x2(const Var<S>& a);

template <typename S>
Var<S> avg_pool2x2(const Var<S>& a) {
  const Shape& s = a.shape();
  if (s.size() != 4 || s[1] % 2 || s[2] % 2)
    throw std::invalid_argument("avg_pool2x2 expects NHWC with even spatial extents, got " +
                                shape_str(s));
  int n = s[0], h = s[1], w = s[2], c = s[3];
  Tensor<S> v(Shape{n, h / 2, w / 2, c});
  const Tensor<S>& x = a.value();
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < h / 2; ++i)
      for (int j = 0; j < w / 2; ++j)
        for (int ch = 0; ch < c; ++ch)
          v.at4(b, i, j, ch) = (x.at4(b, 2 * i, 2 * j, ch) + x.at4(b, 2 * i, 2 * j + 1, ch) +
                                x.at4(b, 2 * i + 1, 2 * j, ch) + x.at4(b, 2 * i + 1, 2 * j + 1, ch)) /
                               S(4);
  return Var<S>::op(std::move(v), {a},
                    [](const Var<S>& g) { return std::vector<Var<S>>{avg_unpool2x2(g)}; });
}

template <typename S>
Var<S> avg_unpool2x2(const Var<S>& a) {
  const Shape& s = a.shape();
  if (s.size() != 4) throw std::invalid_argument("avg_unpool2x2 expects NHWC");
  int n = s[0], h = s[1], w = s[2], c = s[3];
  Tensor<S> v(Shape{n, 2 * h, 2 * w, c});
  const Tensor<S>& x = a.value();
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int ch = 0; ch < c; ++ch) {
          S q = x.at4(b, i, j, ch) / S(4);
          v.at4(b, 2 * i, 2 * j, ch) = q;
          v.at4(b, 2 * i, 2 * j + 1, ch) = q;
          v.at4(b, 2 * i + 1, 2 * j, ch) = q;
          v.at4(b, 2 * i + 1, 2 * j + 1, ch) = q;
        }
  return Var<S>::op(std::move(v), {a},
                    [](const Var<S>& g) { return std::vector<Var<S>>{avg_pool2x2(g)}; });
}

}  // namespace gau::ad
