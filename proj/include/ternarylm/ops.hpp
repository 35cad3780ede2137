#pragma once

// Differentiable primitives over Tensor<T>.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ternarylm/kernels.hpp"
#include "ternarylm/tensor.hpp"

namespace ternarylm {

enum class ElementwiseOp { add, sub, mul, silu, gelu, tanh, exp, log };

inline const char* to_string(ElementwiseOp op) {
  switch (op) {
    case ElementwiseOp::add: return "add";
    case ElementwiseOp::sub: return "sub";
    case ElementwiseOp::mul: return "mul";
    case ElementwiseOp::silu: return "silu";
    case ElementwiseOp::gelu: return "gelu";
    case ElementwiseOp::tanh: return "tanh";
    case ElementwiseOp::exp: return "exp";
    case ElementwiseOp::log: return "log";
  }
  return "?";
}

namespace detail {

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <class T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

enum class Broadcast { same, scalar, trailing };

template <class T>
Broadcast classify_broadcast(const Tensor<T>& x, const Tensor<T>& y, ElementwiseOp op) {
  if (x.shape() == y.shape()) return Broadcast::same;
  if (y.numel() == 1) return Broadcast::scalar;
  if (y.rank() == 1 && y.extent(0) == x.cols()) return Broadcast::trailing;
  throw DimensionError(std::string("cannot broadcast ") + shape_str(y.shape()) + " onto " +
                       shape_str(x.shape()) + " in " + to_string(op));
}

}  // namespace detail

/// Unary elementwise op (silu, gelu, tanh, exp, log).
template <class T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& x) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  switch (op) {
    case ElementwiseOp::silu:
      for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] * detail::sigmoid(xs[i]);
      break;
    case ElementwiseOp::gelu:
      for (std::size_t i = 0; i < xs.size(); ++i) out[i] = detail::gelu_value(xs[i]);
      break;
    case ElementwiseOp::tanh:
      for (std::size_t i = 0; i < xs.size(); ++i) out[i] = std::tanh(xs[i]);
      break;
    case ElementwiseOp::exp:
      for (std::size_t i = 0; i < xs.size(); ++i) out[i] = std::exp(xs[i]);
      break;
    case ElementwiseOp::log:
      for (std::size_t i = 0; i < xs.size(); ++i) out[i] = std::log(xs[i]);
      break;
    default:
      throw DimensionError(std::string(to_string(op)) + " needs two operands");
  }
  return make_result<T>(x.shape(), std::move(out), {x}, to_string(op),
                        [op](TensorImpl<T>& o, std::span<const typename Tensor<T>::ImplPtr> in) {
                          auto& a = *in[0];
                          if (!a.requires_grad) return;
                          const std::size_t n = a.data.size();
                          for (std::size_t i = 0; i < n; ++i) {
                            const T xv = a.data[i];
                            T d = 0;
                            switch (op) {
                              case ElementwiseOp::silu: {
                                const T s = detail::sigmoid(xv);
                                d = s * (T(1) + xv * (T(1) - s));
                                break;
                              }
                              case ElementwiseOp::gelu: d = detail::gelu_derivative(xv); break;
                              case ElementwiseOp::tanh: d = T(1) - o.data[i] * o.data[i]; break;
                              case ElementwiseOp::exp: d = o.data[i]; break;
                              case ElementwiseOp::log: d = T(1) / xv; break;
                              default: break;
                            }
                            a.grad[i] += o.grad[i] * d;
                          }
                        });
}

/// Binary elementwise op (add, sub, mul). The second operand may be a
/// single-element tensor or a vector matching the trailing axis of the first.
template <class T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& x, const Tensor<T>& y) {
  if (op != ElementwiseOp::add && op != ElementwiseOp::sub && op != ElementwiseOp::mul) {
    throw DimensionError(std::string(to_string(op)) + " takes one operand");
  }
  const auto mode = detail::classify_broadcast(x, y, op);
  const auto xs = x.data();
  const auto ys = y.data();
  const std::size_t cols = x.cols();
  auto y_at = [mode, cols](std::size_t i) -> std::size_t {
    switch (mode) {
      case detail::Broadcast::same: return i;
      case detail::Broadcast::scalar: return 0;
      case detail::Broadcast::trailing: return i % cols;
    }
    return i;
  };
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const T b = ys[y_at(i)];
    out[i] = op == ElementwiseOp::add ? xs[i] + b : op == ElementwiseOp::sub ? xs[i] - b : xs[i] * b;
  }
  return make_result<T>(
      x.shape(), std::move(out), {x, y}, to_string(op),
      [op, y_at](TensorImpl<T>& o, std::span<const typename Tensor<T>::ImplPtr> in) {
        auto& a = *in[0];
        auto& b = *in[1];
        const std::size_t n = o.data.size();
        if (a.requires_grad) {
          for (std::size_t i = 0; i < n; ++i) {
            a.grad[i] += op == ElementwiseOp::mul ? o.grad[i] * b.data[y_at(i)] : o.grad[i];
          }
        }
        if (b.requires_grad) {
          for (std::size_t i = 0; i < n; ++i) {
            const T g = op == ElementwiseOp::add   ? o.grad[i]
                        : op == ElementwiseOp::sub ? -o.grad[i]
                                                   : o.grad[i] * a.data[i];
            b.grad[y_at(i)] += g;
          }
        }
      });
}

template <class T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) { return elementwise(ElementwiseOp::add, x, y); }
template <class T>
Tensor<T> sub(const Tensor<T>& x, const Tensor<T>& y) { return elementwise(ElementwiseOp::sub, x, y); }
template <class T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y) { return elementwise(ElementwiseOp::mul, x, y); }
template <class T>
Tensor<T> silu(const Tensor<T>& x) { return elementwise(ElementwiseOp::silu, x); }
template <class T>
Tensor<T> gelu(const Tensor<T>& x) { return elementwise(ElementwiseOp::gelu, x); }
template <class T>
Tensor<T> tanh(const Tensor<T>& x) { return elementwise(ElementwiseOp::tanh, x); }
template <class T>
Tensor<T> exp(const Tensor<T>& x) { return elementwise(ElementwiseOp::exp, x); }
template <class T>
Tensor<T> log(const Tensor<T>& x) { return elementwise(ElementwiseOp::log, x); }

/// x * c for a constant c.
template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= c;
  return make_result<T>(x.shape(), std::move(out), {x}, "scale",
                        [c](TensorImpl<T>& o, std::span<const typename Tensor<T>::ImplPtr> in) {
                          auto& a = *in[0];
                          if (!a.requires_grad) return;
                          for (std::size_t i = 0; i < o.grad.size(); ++i) a.grad[i] += o.grad[i] * c;
                        });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return make_result<T>({1}, {total}, {x}, "sum",
                        [](TensorImpl<T>& o, std::span<const typename Tensor<T>::ImplPtr> in) {
                          auto& a = *in[0];
                          if (!a.requires_grad) return;
                          for (auto& g : a.grad) g += o.grad[0];
                        });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// a[m x k] * b[k x n].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  std::vector<T> out(m * n);
  kernels::gemm(m, n, k, a.data().data(), k, false, b.data().data(), n, out.data(), n, false);
  return make_result<T>({m, n}, std::move(out), {a, b}, "matmul",
                        [m, k, n](TensorImpl<T>& o, std::span<const typename Tensor<T>::ImplPtr> in) {
                          auto& A = *in[0];
                          auto& B = *in[1];
                          if (A.requires_grad) {
                            std::vector<T> bt(n * k);
                            kernels::transpose(k, n, B.data.data(), bt.data());
                            kernels::gemm(m, k, n, o.grad.data(), n, false, bt.data(), k, A.grad.data(), k, true);
                          }
                          if (B.requires_grad) {
                            kernels::gemm(k, n, m, A.data.data(), k, true, o.grad.data(), n, B.grad.data(), n, true);
                          }
                        });
}

/// x[..., in] * w^T for w[out x in]; the layout of every projection weight.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  if (w.rank() != 2 || x.cols() != w.extent(1)) {
    throw DimensionError("linear shape mismatch: input " + shape_str(x.shape()) + ", weight " +
                         shape_str(w.shape()));
  }
  const std::size_t rows = x.rows(), in_dim = w.extent(1), out_dim = w.extent(0);
  std::vector<T> wt(in_dim * out_dim);
  kernels::transpose(out_dim, in_dim, w.data().data(), wt.data());
  std::vector<T> out(rows * out_dim);
  kernels::gemm(rows, out_dim, in_dim, x.data().data(), in_dim, false, wt.data(), out_dim, out.data(),
                out_dim, false);
  Shape shape = x.shape();
  shape.back() = out_dim;
  return make_result<T>(
      std::move(shape), std::move(out), {x, w}, "linear",
      [rows, in_dim, out_dim](TensorImpl<T>& o, std::span<const typename Tensor<T>::ImplPtr> in) {
        auto& X = *in[0];
        auto& W = *in[1];
        if (X.requires_grad) {
          kernels::gemm(rows, in_dim, out_dim, o.grad.data(), out_dim, false, W.data.data(), in_dim,
                        X.grad.data(), in_dim, true);
        }
        if (W.requires_grad) {
          kernels::gemm(out_dim, in_dim, rows, o.grad.data(), out_dim, true, X.data.data(), in_dim,
                        W.grad.data(), in_dim, true);
        }
      });
}

/// Keep-mask over the trailing two axes of a softmax input.
struct SoftmaxMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> keep;  // rows*cols, 1 = participates

  static SoftmaxMask causal(std::size_t n) {
    SoftmaxMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) m.keep[i * n + j] = 1;
    return m;
  }
};

/// Softmax over the trailing axis. Masked entries behave as -inf.
template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x, const std::optional<SoftmaxMask>& mask = std::nullopt) {
  const std::size_t cols = x.cols();
  const std::size_t rows = x.rows();
  if (mask) {
    const std::size_t mask_rows = x.rank() >= 2 ? x.extent(x.rank() - 2) : 1;
    if (mask->cols != cols || mask->rows != mask_rows || mask->keep.size() != mask->rows * mask->cols) {
      throw DimensionError("softmax mask [" + std::to_string(mask->rows) + "x" + std::to_string(mask->cols) +
                           "] does not match trailing dims of " + shape_str(x.shape()));
    }
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * cols;
    const std::uint8_t* keep = mask ? mask->keep.data() + (r % mask->rows) * cols : nullptr;
    T mx = -std::numeric_limits<T>::infinity();
    std::size_t kept = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (keep && !keep[j]) continue;
      mx = std::max(mx, row[j]);
      ++kept;
    }
    if (kept == 0) throw DimensionError("softmax row " + std::to_string(r) + " is fully masked");
    T total = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = (keep && !keep[j]) ? T(0) : std::exp(row[j] - mx);
      total += row[j];
    }
    for (std::size_t j = 0; j < cols; ++j) row[j] /= total;
  }
  return make_result<T>(x.shape(), std::move(out), {x}, "softmax",
                        [rows, cols](TensorImpl<T>& o, std::span<const typename Tensor<T>::ImplPtr> in) {
                          auto& a = *in[0];
                          if (!a.requires_grad) return;
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* p = o.data.data() + r * cols;
                            const T* g = o.grad.data() + r * cols;
                            T dot = 0;
                            for (std::size_t j = 0; j < cols; ++j) dot += p[j] * g[j];
                            for (std::size_t j = 0; j < cols; ++j) a.grad[r * cols + j] += p[j] * (g[j] - dot);
                          }
                        });
}

/// Row gather: out[i] = table[ids[i]].
template <class T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  if (table.rank() != 2) throw DimensionError("embedding table must be 2-D, got " + shape_str(table.shape()));
  if (ids.empty()) throw DimensionError("embedding lookup with no ids");
  const std::size_t vocab = table.extent(0), dim = table.extent(1);
  std::vector<T> out(ids.size() * dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw DimensionError("token id " + std::to_string(ids[i]) + " out of range for vocabulary of " +
                           std::to_string(vocab));
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * dim, dim, out.data() + i * dim);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return make_result<T>({ids.size(), dim}, std::move(out), {table}, "embedding",
                        [saved = std::move(saved), dim](TensorImpl<T>& o,
                                                        std::span<const typename Tensor<T>::ImplPtr> in) {
                          auto& tab = *in[0];
                          if (!tab.requires_grad) return;
                          for (std::size_t i = 0; i < saved.size(); ++i) {
                            T* dst = tab.grad.data() + static_cast<std::size_t>(saved[i]) * dim;
                            const T* src = o.grad.data() + i * dim;
                            for (std::size_t j = 0; j < dim; ++j) dst[j] += src[j];
                          }
                        });
}

/// gain * x / sqrt(mean(x^2) + eps) along the trailing axis.
template <class T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& gain, T eps) {
  const std::size_t d = x.cols(), rows = x.rows();
  if (gain.numel() != d) {
    throw DimensionError("rmsnorm gain " + shape_str(gain.shape()) + " does not match input " + shape_str(x.shape()));
  }
  std::vector<T> out(x.numel());
  std::vector<T> inv(rows);
  const T* xs = x.data().data();
  const T* g = gain.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T ms = 0;
    for (std::size_t j = 0; j < d; ++j) ms += xs[r * d + j] * xs[r * d + j];
    inv[r] = T(1) / std::sqrt(ms / static_cast<T>(d) + eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = g[j] * xs[r * d + j] * inv[r];
  }
  return make_result<T>(x.shape(), std::move(out), {x, gain}, "rmsnorm",
                        [inv = std::move(inv), rows, d](TensorImpl<T>& o,
                                                        std::span<const typename Tensor<T>::ImplPtr> in) {
                          auto& X = *in[0];
                          auto& G = *in[1];
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* xr = X.data.data() + r * d;
                            const T* gr = o.grad.data() + r * d;
                            if (X.requires_grad) {
                              T dot = 0;
                              for (std::size_t j = 0; j < d; ++j) dot += G.data[j] * gr[j] * xr[j];
                              const T coef = inv[r] * inv[r] * inv[r] * dot / static_cast<T>(d);
                              for (std::size_t j = 0; j < d; ++j)
                                X.grad[r * d + j] += inv[r] * G.data[j] * gr[j] - coef * xr[j];
                            }
                            if (G.requires_grad) {
                              for (std::size_t j = 0; j < d; ++j) G.grad[j] += gr[j] * xr[j] * inv[r];
                            }
                          }
                        });
}

/// Mean-subtracting layer normalization with gain and bias.
template <class T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t d = x.cols(), rows = x.rows();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layernorm parameters do not match input " + shape_str(x.shape()));
  }
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv(rows);
  const T* xs = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xs[r * d + j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xs[r * d + j] - mu) * (xs[r * d + j] - mu);
    var /= static_cast<T>(d);
    inv[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xs[r * d + j] - mu) * inv[r];
      out[r * d + j] = gain.data()[j] * xhat[r * d + j] + bias.data()[j];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {x, gain, bias}, "layernorm",
      [xhat = std::move(xhat), inv = std::move(inv), rows, d](TensorImpl<T>& o,
                                                              std::span<const typename Tensor<T>::ImplPtr> in) {
        auto& X = *in[0];
        auto& G = *in[1];
        auto& B = *in[2];
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = o.grad.data() + r * d;
          const T* xh = xhat.data() + r * d;
          if (X.requires_grad) {
            T s1 = 0, s2 = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const T dxh = gr[j] * G.data[j];
              s1 += dxh;
              s2 += dxh * xh[j];
            }
            const T n = static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T dxh = gr[j] * G.data[j];
              X.grad[r * d + j] += inv[r] / n * (n * dxh - s1 - xh[j] * s2);
            }
          }
          if (G.requires_grad)
            for (std::size_t j = 0; j < d; ++j) G.grad[j] += gr[j] * xh[j];
          if (B.requires_grad)
            for (std::size_t j = 0; j < d; ++j) B.grad[j] += gr[j];
        }
      });
}

/// Mean over rows of the cross-entropy between softmax(logits) and a
/// smoothed target: (1 - smoothing) on the target id, smoothing / (V - 1)
/// spread over every other id.
template <class T>
Tensor<T> smoothed_cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets, T smoothing) {
  const std::size_t vocab = logits.cols(), rows = logits.rows();
  if (targets.size() != rows) {
    throw DimensionError("loss: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) +
                         " logit rows");
  }
  if (vocab < 2) throw DimensionError("loss needs a vocabulary of at least 2");
  if (!(smoothing >= T(0) && smoothing < T(1))) throw DimensionError("label smoothing must lie in [0, 1)");
  const T on = T(1) - smoothing;
  const T off = smoothing / static_cast<T>(vocab - 1);
  std::vector<T> probs(logits.numel());
  T total = 0;
  const T* z = logits.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw DimensionError("target id " + std::to_string(t) + " out of range");
    }
    const T* zr = z + r * vocab;
    T mx = zr[0];
    for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, zr[j]);
    T s = 0;
    for (std::size_t j = 0; j < vocab; ++j) {
      probs[r * vocab + j] = std::exp(zr[j] - mx);
      s += probs[r * vocab + j];
    }
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < vocab; ++j) probs[r * vocab + j] /= s;
    T row_loss = 0;
    for (std::size_t j = 0; j < vocab; ++j) {
      const T q = static_cast<std::size_t>(t) == j ? on : off;
      if (q != T(0)) row_loss += q * (lse - zr[j]);
    }
    total += row_loss;
  }
  std::vector<std::int32_t> saved(targets.begin(), targets.end());
  return make_result<T>(
      {1}, {total / static_cast<T>(rows)}, {logits}, "cross_entropy",
      [probs = std::move(probs), saved = std::move(saved), rows, vocab, on, off](
          TensorImpl<T>& o, std::span<const typename Tensor<T>::ImplPtr> in) {
        auto& L = *in[0];
        if (!L.requires_grad) return;
        const T g = o.grad[0] / static_cast<T>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < vocab; ++j) {
            const T q = static_cast<std::size_t>(saved[r]) == j ? on : off;
            L.grad[r * vocab + j] += g * (probs[r * vocab + j] - q);
          }
        }
      });
}

}  // namespace ternarylm
