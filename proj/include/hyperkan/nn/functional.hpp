#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hyperkan/basis.hpp"
#include "hyperkan/ops.hpp"

namespace hyperkan {

/// Fixed-form part b(u) of a KAN edge function.
enum class BaseFn { prelu, identity, silu };

inline std::string to_string(BaseFn f) {
  switch (f) {
    case BaseFn::prelu:
      return "prelu";
    case BaseFn::identity:
      return "identity";
    case BaseFn::silu:
      return "silu";
  }
  return "?";
}

inline BaseFn parse_base_fn(const std::string& s) {
  if (s == "prelu") return BaseFn::prelu;
  if (s == "identity") return BaseFn::identity;
  if (s == "silu") return BaseFn::silu;
  throw ContractError("unknown base function '" + s + "'");
}

/// x if x >= 0 else a*x, with one learnable slope `a` of shape [1].
template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& a) {
  if (a.numel() != 1) throw ShapeError("prelu: slope must hold one value");
  const T s = a.values()[0];
  const auto xv = x.values();
  std::vector<T> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] >= T(0) ? xv[i] : s * xv[i];
  return make_result<T>(x.shape(), std::move(y), {x, a}, [](TensorNode<T>& n) {
    const auto& xv = n.inputs[0]->values;
    const T s = n.inputs[1]->values[0];
    T* gx = input_grad(n, 0);
    T* ga = input_grad(n, 1);
    T acc = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const bool pos = xv[i] >= T(0);
      if (gx) gx[i] += pos ? n.grad[i] : s * n.grad[i];
      if (!pos) acc += n.grad[i] * xv[i];
    }
    if (ga) ga[0] += acc;
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s + v * s * (T(1) - s);
      });
}

/// Per-element KAN edge features: for x of shape [N, C, rest...] returns
/// [N, C, 1 + K, rest...] holding b(x) followed by the K basis values.
/// `slope` is the PReLU parameter and is only read when base == prelu.
template <typename T>
Tensor<T> edge_features(const Tensor<T>& x, const Basis& basis, BaseFn base, const Tensor<T>& slope = {}) {
  if (x.rank() < 2) throw ShapeError("edge_features: input needs [batch, channels, ...]");
  if (base == BaseFn::prelu && (!slope.defined() || slope.numel() != 1)) {
    throw ContractError("edge_features: PReLU base needs a slope tensor");
  }
  const std::size_t k = basis.count();
  const std::size_t f = k + 1;
  const std::size_t nc = x.dim(0) * x.dim(1);
  const std::size_t rest = x.numel() / nc;
  Shape shape = x.shape();
  shape.insert(shape.begin() + 2, f);
  const auto xv = x.values();
  const T a = base == BaseFn::prelu ? slope.values()[0] : T(0);
  std::vector<T> y(x.numel() * f);
  std::vector<T> dbasis(x.numel() * k);
  std::vector<T> scratch(k);
  for (std::size_t b = 0; b < nc; ++b) {
    for (std::size_t r = 0; r < rest; ++r) {
      const std::size_t xi = b * rest + r;
      const T u = xv[xi];
      T bu = u;
      switch (base) {
        case BaseFn::prelu:
          bu = u >= T(0) ? u : a * u;
          break;
        case BaseFn::identity:
          break;
        case BaseFn::silu:
          bu = u / (T(1) + std::exp(-u));
          break;
      }
      y[(b * f) * rest + r] = bu;
      basis.evaluate(u, scratch.data(), dbasis.data() + xi * k);
      for (std::size_t t = 0; t < k; ++t) y[(b * f + 1 + t) * rest + r] = scratch[t];
    }
  }
  auto rule = [base, k, f, nc, rest, dbasis = std::move(dbasis)](TensorNode<T>& n) {
    const auto& xv = n.inputs[0]->values;
    T* gx = input_grad(n, 0);
    T* ga = n.inputs.size() > 1 && n.inputs[1] ? input_grad(n, 1) : nullptr;
    const T a = base == BaseFn::prelu ? n.inputs[1]->values[0] : T(0);
    T ga_acc = 0;
    for (std::size_t b = 0; b < nc; ++b)
      for (std::size_t r = 0; r < rest; ++r) {
        const std::size_t xi = b * rest + r;
        const T u = xv[xi];
        const T gbase = n.grad[(b * f) * rest + r];
        T db = 1;
        switch (base) {
          case BaseFn::prelu:
            db = u >= T(0) ? T(1) : a;
            if (u < T(0)) ga_acc += gbase * u;
            break;
          case BaseFn::identity:
            break;
          case BaseFn::silu: {
            const T s = T(1) / (T(1) + std::exp(-u));
            db = s + u * s * (T(1) - s);
            break;
          }
        }
        if (gx) {
          T acc = gbase * db;
          for (std::size_t t = 0; t < k; ++t) acc += n.grad[(b * f + 1 + t) * rest + r] * dbasis[xi * k + t];
          gx[xi] += acc;
        }
      }
    if (ga) ga[0] += ga_acc;
  };
  if (base == BaseFn::prelu) return make_result<T>(std::move(shape), std::move(y), {x, slope}, rule);
  return make_result<T>(std::move(shape), std::move(y), {x}, rule);
}

/// Expands per-edge parameters into a dense weight over edge features.
/// w_b, w_s: [O, I, taps...]; c: [O, I, taps..., K]. Result: [O, I * (1 + K), taps...]
/// with feature slot 0 = w_b and slot 1 + t = w_s * c_t, matching edge_features().
template <typename T>
Tensor<T> kan_weight(const Tensor<T>& w_b, const Tensor<T>& w_s, const Tensor<T>& c) {
  if (w_b.shape() != w_s.shape() || w_b.rank() < 2) throw ShapeError("kan_weight: w_b/w_s shape mismatch");
  if (c.rank() != w_b.rank() + 1) throw ShapeError("kan_weight: coefficient rank mismatch");
  for (std::size_t d = 0; d < w_b.rank(); ++d)
    if (c.dim(d) != w_b.dim(d)) throw ShapeError("kan_weight: coefficient extents mismatch");
  const std::size_t o = w_b.dim(0), in = w_b.dim(1), k = c.shape().back(), f = k + 1;
  const std::size_t taps = w_b.numel() / (o * in);
  Shape shape = w_b.shape();
  shape[1] = in * f;
  const auto wb = w_b.values();
  const auto ws = w_s.values();
  const auto cv = c.values();
  std::vector<T> y(o * in * f * taps);
  for (std::size_t e = 0; e < o * in; ++e)
    for (std::size_t p = 0; p < taps; ++p) {
      const std::size_t edge = e * taps + p;
      y[(e * f) * taps + p] = wb[edge];
      for (std::size_t t = 0; t < k; ++t) y[(e * f + 1 + t) * taps + p] = ws[edge] * cv[edge * k + t];
    }
  return make_result<T>(std::move(shape), std::move(y), {w_b, w_s, c}, [o, in, k, f, taps](TensorNode<T>& n) {
    const auto& ws = n.inputs[1]->values;
    const auto& cv = n.inputs[2]->values;
    T* gwb = input_grad(n, 0);
    T* gws = input_grad(n, 1);
    T* gc = input_grad(n, 2);
    for (std::size_t e = 0; e < o * in; ++e)
      for (std::size_t p = 0; p < taps; ++p) {
        const std::size_t edge = e * taps + p;
        if (gwb) gwb[edge] += n.grad[(e * f) * taps + p];
        T acc = 0;
        for (std::size_t t = 0; t < k; ++t) {
          const T g = n.grad[(e * f + 1 + t) * taps + p];
          acc += g * cv[edge * k + t];
          if (gc) gc[edge * k + t] += g * ws[edge];
        }
        if (gws) gws[edge] += acc;
      }
  });
}

namespace detail {

struct Extents3 {
  std::size_t d = 1, h = 1, w = 1;
  std::size_t count() const { return d * h * w; }
};

inline Extents3 to3(const std::vector<std::size_t>& e) {
  Extents3 r;
  std::size_t v[3] = {1, 1, 1};
  for (std::size_t i = 0; i < e.size(); ++i) v[3 - e.size() + i] = e[i];
  r.d = v[0];
  r.h = v[1];
  r.w = v[2];
  return r;
}

}  // namespace detail

/// Valid cross-correlation over the trailing dims: x [N, C, S...], w [Co, C, k...], optional bias [Co].
template <typename T>
Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, const std::vector<std::size_t>& stride) {
  const std::size_t dims = w.rank() - 2;
  if (w.rank() < 3 || w.rank() > 5 || x.rank() != w.rank()) {
    throw ShapeError("conv: input " + to_string(x.shape()) + " incompatible with kernel " + to_string(w.shape()));
  }
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("conv: input has " + std::to_string(x.dim(1)) + " channels, kernel expects " +
                     std::to_string(w.dim(1)));
  }
  if (stride.size() != dims) throw ShapeError("conv: stride rank mismatch");
  std::vector<std::size_t> in_sp(x.shape().begin() + 2, x.shape().end());
  std::vector<std::size_t> k_sp(w.shape().begin() + 2, w.shape().end());
  std::vector<std::size_t> out_sp(dims);
  for (std::size_t d = 0; d < dims; ++d) {
    if (stride[d] == 0) throw ShapeError("conv: stride must be positive");
    if (in_sp[d] < k_sp[d]) {
      throw ShapeError("conv: spatial extent " + to_string(Shape(in_sp)) + " smaller than kernel " +
                       to_string(Shape(k_sp)));
    }
    out_sp[d] = (in_sp[d] - k_sp[d]) / stride[d] + 1;
  }
  if (bias.defined() && bias.numel() != w.dim(0)) throw ShapeError("conv: bias length mismatch");
  const auto I = detail::to3(in_sp), K = detail::to3(k_sp), O = detail::to3(out_sp);
  std::vector<std::size_t> st3{1, 1, 1};
  for (std::size_t d = 0; d < dims; ++d) st3[3 - dims + d] = stride[d];
  const std::size_t N = x.dim(0), C = x.dim(1), Co = w.dim(0);
  Shape out_shape{N, Co};
  out_shape.insert(out_shape.end(), out_sp.begin(), out_sp.end());

  struct Geometry {
    detail::Extents3 I, K, O;
    std::size_t sd, sh, sw, N, C, Co;
  } g{I, K, O, st3[0], st3[1], st3[2], N, C, Co};

  // visit(n, co, ci, kernel_index, out_index, in_index) over all contributing pairs.
  auto for_each_tap = [](const Geometry& g, auto&& fn) {
    for (std::size_t n = 0; n < g.N; ++n)
      for (std::size_t co = 0; co < g.Co; ++co)
        for (std::size_t ci = 0; ci < g.C; ++ci)
          for (std::size_t a = 0; a < g.K.d; ++a)
            for (std::size_t b = 0; b < g.K.h; ++b)
              for (std::size_t c = 0; c < g.K.w; ++c) {
                const std::size_t widx = (((co * g.C + ci) * g.K.d + a) * g.K.h + b) * g.K.w + c;
                const std::size_t xbase = (n * g.C + ci) * g.I.count();
                const std::size_t obase = (n * g.Co + co) * g.O.count();
                for (std::size_t z = 0; z < g.O.d; ++z)
                  for (std::size_t yy = 0; yy < g.O.h; ++yy) {
                    const std::size_t xrow = xbase + ((z * g.sd + a) * g.I.h + yy * g.sh + b) * g.I.w + c;
                    const std::size_t orow = obase + (z * g.O.h + yy) * g.O.w;
                    fn(widx, xrow, orow);
                  }
              }
  };

  const auto xv = x.values();
  const auto wv = w.values();
  std::vector<T> y(numel(out_shape), T(0));
  if (bias.defined()) {
    const auto bv = bias.values();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t co = 0; co < Co; ++co) std::fill_n(y.data() + (n * Co + co) * O.count(), O.count(), bv[co]);
  }
  for_each_tap(g, [&](std::size_t widx, std::size_t xrow, std::size_t orow) {
    const T wt = wv[widx];
    const T* xr = xv.data() + xrow;
    T* yr = y.data() + orow;
    for (std::size_t xx = 0; xx < g.O.w; ++xx) yr[xx] += wt * xr[xx * g.sw];
  });

  auto rule = [g, for_each_tap](TensorNode<T>& node) {
    const auto& xv = node.inputs[0]->values;
    const auto& wv = node.inputs[1]->values;
    T* gx = input_grad(node, 0);
    T* gw = input_grad(node, 1);
    T* gb = node.inputs.size() > 2 && node.inputs[2] ? input_grad(node, 2) : nullptr;
    const T* G = node.grad.data();
    if (gb) {
      for (std::size_t n = 0; n < g.N; ++n)
        for (std::size_t co = 0; co < g.Co; ++co) {
          T acc = 0;
          const T* gr = G + (n * g.Co + co) * g.O.count();
          for (std::size_t i = 0; i < g.O.count(); ++i) acc += gr[i];
          gb[co] += acc;
        }
    }
    for_each_tap(g, [&](std::size_t widx, std::size_t xrow, std::size_t orow) {
      const T* gr = G + orow;
      if (gw) {
        T acc = 0;
        const T* xr = xv.data() + xrow;
        for (std::size_t xx = 0; xx < g.O.w; ++xx) acc += gr[xx] * xr[xx * g.sw];
        gw[widx] += acc;
      }
      if (gx) {
        const T wt = wv[widx];
        T* gxr = gx + xrow;
        for (std::size_t xx = 0; xx < g.O.w; ++xx) gxr[xx * g.sw] += wt * gr[xx];
      }
    });
  };
  if (bias.defined()) return make_result<T>(std::move(out_shape), std::move(y), {x, w, bias}, rule);
  return make_result<T>(std::move(out_shape), std::move(y), {x, w}, rule);
}

/// Non-overlapping max pooling over the trailing window.size() dims; remainders are dropped.
template <typename T>
Tensor<T> maxpool(const Tensor<T>& x, const std::vector<std::size_t>& window) {
  const std::size_t dims = window.size();
  if (dims == 0 || dims > 3 || x.rank() < dims + 1) throw ShapeError("maxpool: bad window rank");
  const std::size_t lead = x.rank() - dims;
  std::vector<std::size_t> in_sp(x.shape().begin() + static_cast<long>(lead), x.shape().end());
  std::vector<std::size_t> out_sp(dims);
  for (std::size_t d = 0; d < dims; ++d) {
    if (window[d] == 0 || window[d] > in_sp[d]) {
      throw ShapeError("maxpool: window " + to_string(Shape(window)) + " larger than input " + to_string(Shape(in_sp)));
    }
    out_sp[d] = in_sp[d] / window[d];
  }
  const auto I = detail::to3(in_sp), W = detail::to3(window), O = detail::to3(out_sp);
  std::size_t planes = 1;
  for (std::size_t d = 0; d < lead; ++d) planes *= x.dim(d);
  Shape out_shape(x.shape().begin(), x.shape().begin() + static_cast<long>(lead));
  out_shape.insert(out_shape.end(), out_sp.begin(), out_sp.end());
  const auto xv = x.values();
  std::vector<T> y(planes * O.count());
  std::vector<std::size_t> arg(y.size());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t z = 0; z < O.d; ++z)
      for (std::size_t r = 0; r < O.h; ++r)
        for (std::size_t c = 0; c < O.w; ++c) {
          std::size_t best = 0;
          bool first = true;
          for (std::size_t a = 0; a < W.d; ++a)
            for (std::size_t b = 0; b < W.h; ++b)
              for (std::size_t e = 0; e < W.w; ++e) {
                const std::size_t i = p * I.count() + ((z * W.d + a) * I.h + r * W.h + b) * I.w + c * W.w + e;
                if (first || xv[i] > xv[best]) {
                  best = i;
                  first = false;
                }
              }
          const std::size_t o = p * O.count() + (z * O.h + r) * O.w + c;
          y[o] = xv[best];
          arg[o] = best;
        }
  return make_result<T>(std::move(out_shape), std::move(y), {x}, [arg = std::move(arg)](TensorNode<T>& n) {
    T* gx = input_grad(n, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += n.grad[o];
  });
}

/// Softmax along `axis` with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  detail::check_axis(x.shape(), axis, "softmax");
  const auto s = detail::split_at(x.shape(), axis);
  const auto xv = x.values();
  std::vector<T> y(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t e) { return (o * s.extent + e) * s.inner + i; };
      T m = xv[at(0)];
      for (std::size_t e = 1; e < s.extent; ++e) m = std::max(m, xv[at(e)]);
      T z = 0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        y[at(e)] = std::exp(xv[at(e)] - m);
        z += y[at(e)];
      }
      for (std::size_t e = 0; e < s.extent; ++e) y[at(e)] /= z;
    }
  return make_result<T>(x.shape(), std::move(y), {x}, [s](TensorNode<T>& n) {
    T* gx = input_grad(n, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        auto at = [&](std::size_t e) { return (o * s.extent + e) * s.inner + i; };
        T dot = 0;
        for (std::size_t e = 0; e < s.extent; ++e) dot += n.grad[at(e)] * n.values[at(e)];
        for (std::size_t e = 0; e < s.extent; ++e) gx[at(e)] += n.values[at(e)] * (n.grad[at(e)] - dot);
      }
  });
}

/// Batch normalization over x [N, C, rest...] with per-channel statistics.
/// Training mode normalizes with the biased batch variance and folds the batch
/// statistics into the running buffers (unbiased variance, as is customary);
/// evaluation mode reads the buffers only.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, bool training, T momentum, T eps) {
  if (x.rank() < 2) throw ShapeError("batch_norm: input needs [batch, features, ...]");
  const std::size_t N = x.dim(0), C = x.dim(1), R = x.numel() / (N * C);
  if (gamma.numel() != C || beta.numel() != C) {
    throw ShapeError("batch_norm: expected " + std::to_string(gamma.numel()) + " features, input has " +
                     std::to_string(C));
  }
  if (training && N < 2) throw ContractError("batch_norm: training mode needs a batch of at least 2");
  const std::size_t M = N * R;
  const auto xv = x.values();
  std::vector<T> mu(C), inv(C);
  if (training) {
    auto rm = running_mean.mutable_values();
    auto rv = running_var.mutable_values();
    for (std::size_t c = 0; c < C; ++c) {
      T s = 0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t r = 0; r < R; ++r) s += xv[(n * C + c) * R + r];
      const T m = s / static_cast<T>(M);
      T v = 0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t r = 0; r < R; ++r) {
          const T d = xv[(n * C + c) * R + r] - m;
          v += d * d;
        }
      const T var = v / static_cast<T>(M);
      mu[c] = m;
      inv[c] = T(1) / std::sqrt(var + eps);
      rm[c] = (T(1) - momentum) * rm[c] + momentum * m;
      rv[c] = (T(1) - momentum) * rv[c] + momentum * (M > 1 ? v / static_cast<T>(M - 1) : var);
    }
  } else {
    const auto rm = running_mean.values();
    const auto rv = running_var.values();
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = rm[c];
      inv[c] = T(1) / std::sqrt(rv[c] + eps);
    }
  }
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<T> y(xv.size()), xhat(xv.size());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t r = 0; r < R; ++r) {
        const std::size_t i = (n * C + c) * R + r;
        xhat[i] = (xv[i] - mu[c]) * inv[c];
        y[i] = gv[c] * xhat[i] + bv[c];
      }
  return make_result<T>(
      x.shape(), std::move(y), {x, gamma, beta},
      [N, C, R, M, training, inv = std::move(inv), xhat = std::move(xhat)](TensorNode<T>& n) {
        const auto& gv = n.inputs[1]->values;
        T* gx = input_grad(n, 0);
        T* gg = input_grad(n, 1);
        T* gb = input_grad(n, 2);
        for (std::size_t c = 0; c < C; ++c) {
          T sum_g = 0, sum_gx = 0;
          for (std::size_t b = 0; b < N; ++b)
            for (std::size_t r = 0; r < R; ++r) {
              const std::size_t i = (b * C + c) * R + r;
              sum_g += n.grad[i];
              sum_gx += n.grad[i] * xhat[i];
            }
          if (gg) gg[c] += sum_gx;
          if (gb) gb[c] += sum_g;
          if (!gx) continue;
          const T scale = gv[c] * inv[c];
          for (std::size_t b = 0; b < N; ++b)
            for (std::size_t r = 0; r < R; ++r) {
              const std::size_t i = (b * C + c) * R + r;
              if (training) {
                gx[i] += scale * (n.grad[i] - sum_g / static_cast<T>(M) - xhat[i] * sum_gx / static_cast<T>(M));
              } else {
                gx[i] += scale * n.grad[i];
              }
            }
        }
      });
}

/// Layer normalization over the last axis.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  const std::size_t D = x.shape().back();
  if (gamma.numel() != D || beta.numel() != D) throw ShapeError("layer_norm: parameter length mismatch");
  const std::size_t rows = x.numel() / D;
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<T> y(xv.size()), xhat(xv.size()), inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * D;
    T m = 0;
    for (std::size_t d = 0; d < D; ++d) m += xr[d];
    m /= static_cast<T>(D);
    T v = 0;
    for (std::size_t d = 0; d < D; ++d) v += (xr[d] - m) * (xr[d] - m);
    v /= static_cast<T>(D);
    inv[r] = T(1) / std::sqrt(v + eps);
    for (std::size_t d = 0; d < D; ++d) {
      xhat[r * D + d] = (xr[d] - m) * inv[r];
      y[r * D + d] = gv[d] * xhat[r * D + d] + bv[d];
    }
  }
  return make_result<T>(x.shape(), std::move(y), {x, gamma, beta},
                        [rows, D, inv = std::move(inv), xhat = std::move(xhat)](TensorNode<T>& n) {
                          const auto& gv = n.inputs[1]->values;
                          T* gx = input_grad(n, 0);
                          T* gg = input_grad(n, 1);
                          T* gb = input_grad(n, 2);
                          std::vector<T> gh(D);
                          for (std::size_t r = 0; r < rows; ++r) {
                            T sum_h = 0, sum_hx = 0;
                            for (std::size_t d = 0; d < D; ++d) {
                              const std::size_t i = r * D + d;
                              if (gg) gg[d] += n.grad[i] * xhat[i];
                              if (gb) gb[d] += n.grad[i];
                              gh[d] = n.grad[i] * gv[d];
                              sum_h += gh[d];
                              sum_hx += gh[d] * xhat[i];
                            }
                            if (!gx) continue;
                            for (std::size_t d = 0; d < D; ++d) {
                              const std::size_t i = r * D + d;
                              gx[i] +=
                                  inv[r] * (gh[d] - sum_h / static_cast<T>(D) - xhat[i] * sum_hx / static_cast<T>(D));
                            }
                          }
                        });
}

}  // namespace hyperkan
