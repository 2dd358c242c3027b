#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "hyperkan/tensor.hpp"

namespace hyperkan {

namespace detail {

template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
  const auto xv = x.values();
  std::vector<T> y(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  return make_result<T>(x.shape(), std::move(y), {x}, [df](TensorNode<T>& n) {
    const auto& xv = n.inputs[0]->values;
    T* gx = input_grad(n, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += n.grad[i] * df(xv[i], n.values[i]);
  });
}

enum class BinaryKind { add, sub, mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind) {
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw ShapeError("elementwise: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
  }
  const Shape shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = numel(shape);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<T> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T l = av[a_scalar ? 0 : i];
    const T r = bv[b_scalar ? 0 : i];
    switch (kind) {
      case BinaryKind::add:
        y[i] = l + r;
        break;
      case BinaryKind::sub:
        y[i] = l - r;
        break;
      case BinaryKind::mul:
        y[i] = l * r;
        break;
    }
  }
  return make_result<T>(shape, std::move(y), {a, b}, [kind, a_scalar, b_scalar](TensorNode<T>& node) {
    const auto& av = node.inputs[0]->values;
    const auto& bv = node.inputs[1]->values;
    T* ga = input_grad(node, 0);
    T* gb = input_grad(node, 1);
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      const T g = node.grad[i];
      const std::size_t ia = a_scalar ? 0 : i;
      const std::size_t ib = b_scalar ? 0 : i;
      switch (kind) {
        case BinaryKind::add:
          if (ga) ga[ia] += g;
          if (gb) gb[ib] += g;
          break;
        case BinaryKind::sub:
          if (ga) ga[ia] += g;
          if (gb) gb[ib] -= g;
          break;
        case BinaryKind::mul:
          if (ga) ga[ia] += g * bv[ib];
          if (gb) gb[ib] += g * av[ia];
          break;
      }
    }
  });
}

inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

/// (outer, extent, inner) split of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline void check_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::add);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::sub);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::mul);
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.values()) {
    if (!(v > T(0))) throw DomainError("log: non-positive argument " + std::to_string(v));
  }
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

/// max(x, s) elementwise; the gradient goes to x where x > s.
template <typename T>
Tensor<T> max_scalar(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v > s ? v : s; }, [s](T v, T) { return v > s ? T(1) : T(0); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return max_scalar(x, T(0));
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

/// Multiplies by a constant (non-differentiable) mask of the same shape.
template <typename T>
Tensor<T> mul_constant(const Tensor<T>& x, std::vector<T> mask) {
  if (mask.size() != x.numel()) throw ShapeError("mul_constant: mask size mismatch");
  std::vector<T> y(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * mask[i];
  return make_result<T>(x.shape(), std::move(y), {x}, [mask = std::move(mask)](TensorNode<T>& n) {
    T* gx = input_grad(n, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += n.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [m,k] x [k,n] -> [m,n]; each output is accumulated over k in increasing order.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<T> c(m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = av[i * k + p];
      const T* bp = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
  return make_result<T>({m, n}, std::move(c), {a, b}, [m, k, n](TensorNode<T>& node) {
    const auto& av = node.inputs[0]->values;
    const auto& bv = node.inputs[1]->values;
    const auto& g = node.grad;
    if (T* ga = input_grad(node, 0)) {  // G * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T s = 0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (T* gb = input_grad(node, 1)) {  // A^T * G
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

/// Batched product [b,m,k] x [b,k,n] -> [b,m,n].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("bmm: incompatible shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<T> c(bs * m * n, T(0));
  for (std::size_t s = 0; s < bs; ++s) {
    const T* A = av.data() + s * m * k;
    const T* B = bv.data() + s * k * n;
    T* C = c.data() + s * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = A[i * k + p];
        for (std::size_t j = 0; j < n; ++j) C[i * n + j] += aip * B[p * n + j];
      }
  }
  return make_result<T>({bs, m, n}, std::move(c), {a, b}, [bs, m, k, n](TensorNode<T>& node) {
    const auto& av = node.inputs[0]->values;
    const auto& bv = node.inputs[1]->values;
    T* ga = input_grad(node, 0);
    T* gb = input_grad(node, 1);
    for (std::size_t s = 0; s < bs; ++s) {
      const T* A = av.data() + s * m * k;
      const T* B = bv.data() + s * k * n;
      const T* G = node.grad.data() + s * m * n;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          if (ga) {
            T acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
            ga[s * m * k + i * k + p] += acc;
          }
          if (gb) {
            const T aip = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[s * k * n + p * n + j] += aip * G[i * n + j];
          }
        }
    }
  });
}

/// x [..., in] * w^T + bias: w is [out, in], bias [out] (may be undefined).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
  if (w.rank() != 2 || x.shape().back() != w.dim(1)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " + to_string(w.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != w.dim(0))) {
    throw ShapeError("linear: bias shape " + to_string(bias.shape()));
  }
  const std::size_t in = w.dim(1), out = w.dim(0), rows = x.numel() / in;
  Shape shape = x.shape();
  shape.back() = out;
  const auto xv = x.values();
  const auto wv = w.values();
  std::vector<T> y(rows * out);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const T* wo = wv.data() + o * in;
      T acc = bias.defined() ? bias.values()[o] : T(0);
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wo[i];
      y[r * out + o] = acc;
    }
  }
  auto rule = [rows, in, out](TensorNode<T>& node) {
    const auto& xv = node.inputs[0]->values;
    const auto& wv = node.inputs[1]->values;
    T* gx = input_grad(node, 0);
    T* gw = input_grad(node, 1);
    T* gb = node.inputs.size() > 2 && node.inputs[2] ? input_grad(node, 2) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < out; ++o) {
        const T g = node.grad[r * out + o];
        if (gb) gb[o] += g;
        if (gx)
          for (std::size_t i = 0; i < in; ++i) gx[r * in + i] += g * wv[o * in + i];
        if (gw)
          for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += g * xv[r * in + i];
      }
    }
  };
  if (bias.defined()) return make_result<T>(std::move(shape), std::move(y), {x, w, bias}, rule);
  return make_result<T>(std::move(shape), std::move(y), {x, w}, rule);
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape) + " changes size");
  }
  return make_result<T>(std::move(shape), x.vector(), {x}, [](TensorNode<T>& n) {
    T* gx = input_grad(n, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i];
  });
}

/// Output axis i takes input axis axes[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  if (axes.size() != in.size()) throw ShapeError("permute: axes rank mismatch");
  std::vector<bool> used(in.size(), false);
  Shape out(in.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= in.size() || used[axes[i]]) throw ShapeError("permute: invalid axes");
    used[axes[i]] = true;
    out[i] = in[axes[i]];
  }
  const auto in_strides = detail::strides_of(in);
  // Map every output linear index to its input linear index.
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(out.size(), 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t s = 0;
    for (std::size_t d = 0; d < out.size(); ++d) s += idx[d] * in_strides[axes[d]];
    src[o] = s;
    for (std::size_t d = out.size(); d-- > 0;) {
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
    }
  }
  const auto xv = x.values();
  std::vector<T> y(n);
  for (std::size_t o = 0; o < n; ++o) y[o] = xv[src[o]];
  return make_result<T>(std::move(out), std::move(y), {x}, [src = std::move(src)](TensorNode<T>& node) {
    T* gx = input_grad(node, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < src.size(); ++o) gx[src[o]] += node.grad[o];
  });
}

/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("transpose: needs rank >= 2");
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts[0].shape();
  detail::check_axis(shape, axis, "concat");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < shape.size(); ++d) {
      if (d != axis && p.dim(d) != shape[d]) {
        throw ShapeError("concat: extent mismatch on axis " + std::to_string(d));
      }
    }
    total += p.dim(axis);
  }
  shape[axis] = total;
  const auto split = detail::split_at(shape, axis);
  std::vector<T> y(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t ext = p.dim(axis);
    const auto pv = p.values();
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(pv.data() + o * ext * split.inner, ext * split.inner, y.data() + (o * total + off) * split.inner);
    off += ext;
  }
  return make_result<T>(std::move(shape), std::move(y), parts, [split, total, offsets](TensorNode<T>& node) {
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      T* gp = input_grad(node, k);
      if (!gp) continue;
      const std::size_t ext = node.inputs[k]->values.size() / (split.outer * split.inner);
      for (std::size_t o = 0; o < split.outer; ++o)
        for (std::size_t e = 0; e < ext * split.inner; ++e)
          gp[o * ext * split.inner + e] += node.grad[(o * total + offsets[k]) * split.inner + e];
    }
  });
}

/// Elements [start, start+length) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  detail::check_axis(x.shape(), axis, "slice");
  if (length == 0 || start + length > x.dim(axis)) throw ShapeError("slice: range out of bounds");
  Shape shape = x.shape();
  const auto split = detail::split_at(shape, axis);
  shape[axis] = length;
  std::vector<T> y(numel(shape));
  const auto xv = x.values();
  for (std::size_t o = 0; o < split.outer; ++o)
    std::copy_n(xv.data() + (o * split.extent + start) * split.inner, length * split.inner,
                y.data() + o * length * split.inner);
  return make_result<T>(std::move(shape), std::move(y), {x}, [split, start, length](TensorNode<T>& node) {
    T* gx = input_grad(node, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t e = 0; e < length * split.inner; ++e)
        gx[(o * split.extent + start) * split.inner + e] += node.grad[o * length * split.inner + e];
  });
}

/// Repeats a [1, ...] tensor n times along axis 0.
template <typename T>
Tensor<T> expand_batch(const Tensor<T>& x, std::size_t n) {
  if (x.dim(0) != 1) throw ShapeError("expand_batch: leading extent must be 1");
  Shape shape = x.shape();
  shape[0] = n;
  const std::size_t block = x.numel();
  std::vector<T> y(block * n);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(x.values().data(), block, y.data() + i * block);
  return make_result<T>(std::move(shape), std::move(y), {x}, [block, n](TensorNode<T>& node) {
    T* gx = input_grad(node, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < block; ++j) gx[j] += node.grad[i * block + j];
  });
}

enum class PadMode { zero, reflect };

/// Reflect index without edge repetition (…, 2, 1, [0, 1, …, n-1], n-2, …).
inline std::size_t reflect_index(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < n ? m : period - m);
}

/// Pads the trailing `pads.size()` axes by pads[d] on both sides.
template <typename T>
Tensor<T> pad(const Tensor<T>& x, const std::vector<std::size_t>& pads, PadMode mode) {
  const std::size_t nd = pads.size();
  if (nd > x.rank()) throw ShapeError("pad: more padded axes than rank");
  const Shape& in = x.shape();
  Shape out = in;
  const std::size_t lead = in.size() - nd;
  for (std::size_t d = 0; d < nd; ++d) out[lead + d] += 2 * pads[d];
  const std::size_t n = numel(out);
  // src[o] = input index or npos for zero padding.
  constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> src(n);
  const auto in_strides = detail::strides_of(in);
  std::vector<std::size_t> idx(out.size(), 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t s = 0;
    bool inside = true;
    for (std::size_t d = 0; d < out.size(); ++d) {
      long i = static_cast<long>(idx[d]);
      if (d >= lead) {
        i -= static_cast<long>(pads[d - lead]);
        const long ext = static_cast<long>(in[d]);
        if (i < 0 || i >= ext) {
          if (mode == PadMode::zero) {
            inside = false;
            break;
          }
          i = static_cast<long>(reflect_index(i, ext));
        }
      }
      s += static_cast<std::size_t>(i) * in_strides[d];
    }
    src[o] = inside ? s : npos;
    for (std::size_t d = out.size(); d-- > 0;) {
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
    }
  }
  const auto xv = x.values();
  std::vector<T> y(n, T(0));
  for (std::size_t o = 0; o < n; ++o)
    if (src[o] != npos) y[o] = xv[src[o]];
  return make_result<T>(std::move(out), std::move(y), {x}, [src = std::move(src)](TensorNode<T>& node) {
    T* gx = input_grad(node, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < src.size(); ++o)
      if (src[o] != npos) gx[src[o]] += node.grad[o];
  });
}

/// Adds a per-index vector along `axis` (e.g. a per-channel bias).
template <typename T>
Tensor<T> add_along(const Tensor<T>& x, const Tensor<T>& v, std::size_t axis) {
  detail::check_axis(x.shape(), axis, "add_along");
  if (v.numel() != x.dim(axis)) throw ShapeError("add_along: vector length mismatch");
  const auto split = detail::split_at(x.shape(), axis);
  std::vector<T> y = x.vector();
  const auto vv = v.values();
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t e = 0; e < split.extent; ++e)
      for (std::size_t i = 0; i < split.inner; ++i) y[(o * split.extent + e) * split.inner + i] += vv[e];
  return make_result<T>(x.shape(), std::move(y), {x, v}, [split](TensorNode<T>& node) {
    T* gx = input_grad(node, 0);
    T* gv = input_grad(node, 1);
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t e = 0; e < split.extent; ++e)
        for (std::size_t i = 0; i < split.inner; ++i) {
          const T g = node.grad[(o * split.extent + e) * split.inner + i];
          if (gx) gx[(o * split.extent + e) * split.inner + i] += g;
          if (gv) gv[e] += g;
        }
  });
}

// ---------------------------------------------------------------------------
// Reductions (left-to-right accumulation)

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.values()) acc += v;
  return make_result<T>({1}, {acc}, {x}, [](TensorNode<T>& n) {
    T* gx = input_grad(n, 0);
    if (!gx) return;
    const T g = n.grad[0];
    for (std::size_t i = 0; i < n.inputs[0]->values.size(); ++i) gx[i] += g;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis) {
  detail::check_axis(x.shape(), axis, "sum");
  const auto split = detail::split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<long>(axis));
  if (shape.empty()) shape = {1};
  const auto xv = x.values();
  std::vector<T> y(split.outer * split.inner, T(0));
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t e = 0; e < split.extent; ++e)
      for (std::size_t i = 0; i < split.inner; ++i)
        y[o * split.inner + i] += xv[(o * split.extent + e) * split.inner + i];
  return make_result<T>(std::move(shape), std::move(y), {x}, [split](TensorNode<T>& n) {
    T* gx = input_grad(n, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t e = 0; e < split.extent; ++e)
        for (std::size_t i = 0; i < split.inner; ++i)
          gx[(o * split.extent + e) * split.inner + i] += n.grad[o * split.inner + i];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
  detail::check_axis(x.shape(), axis, "mean");
  return scale(sum(x, axis), T(1) / static_cast<T>(x.dim(axis)));
}

/// Maximum; the gradient goes to the first maximal element.
template <typename T>
Tensor<T> max(const Tensor<T>& x, std::optional<std::size_t> axis = std::nullopt) {
  Shape shape{1};
  detail::AxisSplit split{1, x.numel(), 1};
  if (axis) {
    detail::check_axis(x.shape(), *axis, "max");
    split = detail::split_at(x.shape(), *axis);
    shape = x.shape();
    shape.erase(shape.begin() + static_cast<long>(*axis));
    if (shape.empty()) shape = {1};
  }
  const auto xv = x.values();
  std::vector<T> y(split.outer * split.inner);
  std::vector<std::size_t> arg(y.size());
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t i = 0; i < split.inner; ++i) {
      std::size_t best = o * split.extent * split.inner + i;
      for (std::size_t e = 1; e < split.extent; ++e) {
        const std::size_t j = (o * split.extent + e) * split.inner + i;
        if (xv[j] > xv[best]) best = j;
      }
      y[o * split.inner + i] = xv[best];
      arg[o * split.inner + i] = best;
    }
  return make_result<T>(std::move(shape), std::move(y), {x}, [arg = std::move(arg)](TensorNode<T>& n) {
    T* gx = input_grad(n, 0);
    if (!gx) return;
    for (std::size_t k = 0; k < arg.size(); ++k) gx[arg[k]] += n.grad[k];
  });
}

/// Casts values to another precision (no graph).
template <typename U, typename T>
Tensor<U> cast(const Tensor<T>& x) {
  std::vector<U> v(x.values().begin(), x.values().end());
  return Tensor<U>(x.shape(), std::move(v));
}

}  // namespace hyperkan
