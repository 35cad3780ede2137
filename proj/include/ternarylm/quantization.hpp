#pragma once

// Ternary projection layer: latent full-precision weights W, a learnable
// positive scale alpha, and W_q = alpha * sign_tau(W) with
// tau = 0.5 * std(W) recomputed on every forward. The backward pass is the
// straight-through estimator.

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ternarylm/error.hpp"
#include "ternarylm/ops.hpp"
#include "ternarylm/packed.hpp"
#include "ternarylm/random.hpp"
#include "ternarylm/tensor.hpp"

namespace ternarylm {

inline constexpr double kAlphaFloor = 1e-6;
inline constexpr double kInitStd = 0.02;

/// 0.5 * population standard deviation of all entries.
template <class T>
T compute_threshold(std::span<const T> w) {
  if (w.empty()) throw DimensionError("threshold of an empty weight matrix");
  double mean = 0;
  for (T v : w) mean += v;
  mean /= static_cast<double>(w.size());
  double var = 0;
  for (T v : w) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size());
  return static_cast<T>(0.5 * std::sqrt(var));
}

/// +1 where w > tau, -1 where w < -tau, 0 otherwise.
template <class T>
std::vector<std::int8_t> ternary_sign(std::span<const T> w, T tau) {
  if (tau < T(0)) throw InvariantError("ternary threshold must be non-negative");
  std::vector<std::int8_t> s(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) s[i] = w[i] > tau ? 1 : (w[i] < -tau ? -1 : 0);
  return s;
}

/// Two-level variant: sign(w) with sign(0) = +1.
template <class T>
std::vector<std::int8_t> binary_sign(std::span<const T> w) {
  std::vector<std::int8_t> s(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) s[i] = w[i] < T(0) ? -1 : 1;
  return s;
}

struct QuantStats {
  std::string layer_id;
  std::size_t count = 0;
  double sparsity = 0;
  double fraction_pos = 0;
  double fraction_neg = 0;
  double tau = 0;
  double alpha = 0;

  static constexpr const char* csv_header = "layer_id,sparsity,fraction_pos,fraction_neg,tau,alpha";

  std::string csv_row() const {
    std::ostringstream os;
    os.precision(9);
    os << layer_id << ',' << sparsity << ',' << fraction_pos << ',' << fraction_neg << ',' << tau << ',' << alpha;
    return os.str();
  }
};

inline QuantStats stats_from_signs(std::string id, std::span<const std::int8_t> signs, double tau, double alpha) {
  if (signs.empty()) throw InvariantError("layer " + id + " has no cached sign pattern");
  std::size_t pos = 0, neg = 0;
  for (auto s : signs) {
    pos += s > 0;
    neg += s < 0;
  }
  const double n = static_cast<double>(signs.size());
  QuantStats st;
  st.layer_id = std::move(id);
  st.count = signs.size();
  st.fraction_pos = static_cast<double>(pos) / n;
  st.fraction_neg = static_cast<double>(neg) / n;
  st.sparsity = static_cast<double>(signs.size() - pos - neg) / n;
  st.tau = tau;
  st.alpha = alpha;
  return st;
}

struct QuantOptions {
  bool enabled = true;          // false: plain full-precision projection
  bool binary = false;          // forbid the zero code
  bool learnable_alpha = true;  // false: alpha frozen at its init value
  bool ste_scale_alpha = true;  // STE grad(W) = alpha * upstream (else upstream)
};

/// Gradients produced by the straight-through estimator.
template <class T>
struct SteGrads {
  std::vector<T> weight;
  T alpha = 0;
};

template <class T>
class TernaryLinear {
 public:
  TernaryLinear() = default;

  /// Weight layout is [out x in]; embedding tables use [vocab x dim].
  TernaryLinear(std::string name, std::size_t out_dim, std::size_t in_dim, QuantOptions options)
      : name_(std::move(name)),
        options_(options),
        weight_(Tensor<T>::zeros({out_dim, in_dim}, true)),
        alpha_(Tensor<T>::scalar(T(1), options.enabled && options.learnable_alpha)) {}

  const std::string& name() const { return name_; }
  const QuantOptions& options() const { return options_; }
  std::size_t out_dim() const { return weight_.extent(0); }
  std::size_t in_dim() const { return weight_.extent(1); }
  std::size_t weight_count() const { return weight_.numel(); }
  bool quantized() const { return options_.enabled; }

  Tensor<T>& weight() { return weight_; }
  const Tensor<T>& weight() const { return weight_; }
  Tensor<T>& alpha() { return alpha_; }
  const Tensor<T>& alpha() const { return alpha_; }

  /// Truncated-normal latent init followed by the alpha init.
  void init(Rng& rng, double std = kInitStd) {
    for (auto& v : weight_.data()) v = static_cast<T>(rng.truncated_normal(std));
    init_alpha();
  }

  /// alpha = mean |w| over entries with |w| > tau (the surviving weights).
  void init_alpha() {
    const auto w = weight_.data();
    const T tau = compute_threshold<T>(w);
    double total = 0;
    std::size_t n = 0;
    for (T v : w) {
      if (std::abs(v) > tau) {
        total += std::abs(v);
        ++n;
      }
    }
    if (n == 0) {
      for (T v : w) total += std::abs(v);
      n = w.size();
    }
    alpha_[0] = static_cast<T>(std::max(total / static_cast<double>(n), kAlphaFloor));
  }

  /// Clamp alpha into R+ after an optimizer update.
  void clamp_alpha() {
    if (alpha_[0] < static_cast<T>(kAlphaFloor)) alpha_[0] = static_cast<T>(kAlphaFloor);
  }

  /// Recomputes tau and the sign pattern from the current latent weights,
  /// caches both, and returns the effective weight values alpha * signs.
  std::vector<T> quantize() {
    if (!options_.enabled) throw InvariantError("quantize() on layer " + name_ + " with quantization disabled");
    const T a = alpha_[0];
    if (!(a > T(0))) throw InvariantError("layer " + name_ + " has non-positive alpha");
    const auto w = weight_.data();
    last_tau_ = compute_threshold<T>(w);
    last_signs_ = options_.binary ? binary_sign<T>(w) : ternary_sign<T>(w, last_tau_);
    cache_valid_ = true;
    std::vector<T> wq(w.size());
    for (std::size_t i = 0; i < wq.size(); ++i) wq[i] = a * static_cast<T>(last_signs_[i]);
    return wq;
  }

  /// Straight-through gradients for an upstream gradient of W_q, using the
  /// sign pattern cached by the most recent quantize().
  SteGrads<T> ste_backward(std::span<const T> upstream) const {
    if (!cache_valid_) throw InvariantError("ste_backward on layer " + name_ + " without a matching forward");
    if (upstream.size() != last_signs_.size()) throw DimensionError("ste_backward: upstream size mismatch");
    return ste_grads(upstream, last_signs_, alpha_[0], options_.ste_scale_alpha);
  }

  static SteGrads<T> ste_grads(std::span<const T> upstream, std::span<const std::int8_t> signs, T alpha,
                               bool scale_by_alpha) {
    SteGrads<T> g;
    g.weight.resize(upstream.size());
    const T c = scale_by_alpha ? alpha : T(1);
    T ga = 0;
    for (std::size_t i = 0; i < upstream.size(); ++i) {
      g.weight[i] = c * upstream[i];
      ga += upstream[i] * static_cast<T>(signs[i]);
    }
    g.alpha = ga;
    return g;
  }

  /// Effective weight as a graph node: W itself when quantization is off,
  /// otherwise alpha * signs with straight-through gradients.
  Tensor<T> effective_weight() {
    if (packed_) throw InvariantError("layer " + name_ + " is inference-only (packed)");
    if (!options_.enabled) return weight_;
    if (frozen_) return frozen_effective_weight();
    std::vector<T> wq = quantize();
    const bool scale_by_alpha = options_.ste_scale_alpha;
    return make_result<T>(
        weight_.shape(), std::move(wq), {weight_, alpha_}, "ternary",
        [signs = last_signs_, scale_by_alpha](TensorImpl<T>& o, std::span<const typename Tensor<T>::ImplPtr> in) {
          auto& w = *in[0];
          auto& a = *in[1];
          const auto g = ste_grads(o.grad, signs, a.data[0], scale_by_alpha);
          if (w.requires_grad)
            for (std::size_t i = 0; i < g.weight.size(); ++i) w.grad[i] += g.weight[i];
          if (a.requires_grad) a.grad[0] += g.alpha;
        });
  }

  /// y = x * W_q^T.
  Tensor<T> forward(const Tensor<T>& x) {
    if (packed_) {
      if (x.cols() != in_dim()) {
        throw DimensionError("linear shape mismatch: input " + shape_str(x.shape()) + ", packed weight " +
                             shape_str(weight_.shape()));
      }
      Shape shape = x.shape();
      shape.back() = out_dim();
      return Tensor<T>(std::move(shape), packed_linear<T>(*packed_, x.data(), x.rows()));
    }
    return linear(x, effective_weight());
  }

  /// Row lookup into W_q, for layers used as embedding tables.
  Tensor<T> lookup(std::span<const std::int32_t> ids) {
    if (packed_) {
      const std::size_t dim = in_dim();
      std::vector<T> out(ids.size() * dim);
      std::vector<std::int8_t> row(dim);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= out_dim()) {
          throw DimensionError("token id " + std::to_string(ids[i]) + " out of range for vocabulary of " +
                               std::to_string(out_dim()));
        }
        packed_->decode_row(static_cast<std::size_t>(ids[i]), row);
        for (std::size_t j = 0; j < dim; ++j) out[i * dim + j] = static_cast<T>(packed_->alpha()) * row[j];
      }
      return Tensor<T>({ids.size(), dim}, std::move(out));
    }
    return embedding(effective_weight(), ids);
  }

  /// Holds the current sign pattern fixed and makes the forward the
  /// straight-through surrogate alpha * (S + W - W_anchor), which equals
  /// alpha * S at the anchor and whose exact derivatives are the STE
  /// gradients. Used by gradient checks.
  void freeze_signs() {
    if (!options_.enabled) return;
    quantize();
    frozen_ = true;
    anchor_.assign(weight_.data().begin(), weight_.data().end());
  }
  void unfreeze_signs() { frozen_ = false; }

  QuantStats stats() const {
    if (!options_.enabled && !packed_) throw InvariantError("layer " + name_ + " is not quantized");
    return stats_from_signs(name_, last_signs_, static_cast<double>(last_tau_), static_cast<double>(alpha_[0]));
  }

  bool has_signs() const { return !last_signs_.empty(); }
  std::span<const std::int8_t> last_signs() const { return last_signs_; }
  T last_tau() const { return last_tau_; }

  /// Called after an optimizer step changes W.
  void invalidate_cache() { cache_valid_ = false; }

  /// Switches the layer to inference from packed codes; the latent weights
  /// are replaced by the sign pattern.
  void set_packed(PackedTernaryMatrix packed) {
    if (packed.rows() != out_dim() || packed.cols() != in_dim()) {
      throw DimensionError("packed weights do not match layer " + name_);
    }
    last_signs_ = packed.unpack();
    last_tau_ = T(0);
    alpha_[0] = static_cast<T>(packed.alpha());
    auto w = weight_.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(last_signs_[i]);
    weight_.set_requires_grad(false);
    alpha_.set_requires_grad(false);
    packed_ = std::make_shared<const PackedTernaryMatrix>(std::move(packed));
  }
  bool is_packed() const { return static_cast<bool>(packed_); }
  const PackedTernaryMatrix* packed() const { return packed_.get(); }

  /// Packs the current sign pattern (requantizing first).
  PackedTernaryMatrix to_packed() {
    if (packed_) return *packed_;
    quantize();
    return pack(last_signs_, out_dim(), in_dim(), static_cast<float>(alpha_[0]));
  }

 private:
  Tensor<T> frozen_effective_weight() {
    const T a = alpha_[0];
    const auto w = weight_.data();
    std::vector<T> wq(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) wq[i] = a * (static_cast<T>(last_signs_[i]) + (w[i] - anchor_[i]));
    cache_valid_ = true;
    return make_result<T>(
        weight_.shape(), std::move(wq), {weight_, alpha_}, "ternary_frozen",
        [signs = last_signs_, anchor = anchor_](TensorImpl<T>& o, std::span<const typename Tensor<T>::ImplPtr> in) {
          auto& w = *in[0];
          auto& a = *in[1];
          T ga = 0;
          for (std::size_t i = 0; i < o.grad.size(); ++i) {
            if (w.requires_grad) w.grad[i] += a.data[0] * o.grad[i];
            ga += o.grad[i] * (static_cast<T>(signs[i]) + (w.data[i] - anchor[i]));
          }
          if (a.requires_grad) a.grad[0] += ga;
        });
  }

  std::string name_;
  QuantOptions options_;
  Tensor<T> weight_;
  Tensor<T> alpha_;
  T last_tau_ = T(0);
  std::vector<std::int8_t> last_signs_;
  bool cache_valid_ = false;
  bool frozen_ = false;
  std::vector<T> anchor_;
  std::shared_ptr<const PackedTernaryMatrix> packed_;
};

}  // namespace ternarylm
