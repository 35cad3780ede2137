#pragma once

// Decoder-only transformer: full-precision token embedding, pre-norm blocks
// of rotary causal attention and a GELU MLP built from ternary projections,
// a final norm and a full-precision output projection.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ternarylm/config.hpp"
#include "ternarylm/kernels.hpp"
#include "ternarylm/ops.hpp"
#include "ternarylm/quantization.hpp"
#include "ternarylm/random.hpp"
#include "ternarylm/tensor.hpp"

namespace ternarylm {

namespace detail {

/// cos/sin tables [positions x head_dim/2] for angle pos * theta^(-2i/head_dim).
struct RopeTable {
  std::size_t half = 0;
  std::vector<double> cos;
  std::vector<double> sin;
};

inline RopeTable make_rope_table(std::span<const std::size_t> positions, std::size_t head_dim, double theta) {
  if (head_dim % 2 != 0) throw ConfigError("rotary embedding needs an even head_dim, got " + std::to_string(head_dim));
  RopeTable t;
  t.half = head_dim / 2;
  t.cos.resize(positions.size() * t.half);
  t.sin.resize(positions.size() * t.half);
  for (std::size_t p = 0; p < positions.size(); ++p) {
    for (std::size_t i = 0; i < t.half; ++i) {
      const double freq = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double angle = static_cast<double>(positions[p]) * freq;
      t.cos[p * t.half + i] = std::cos(angle);
      t.sin[p * t.half + i] = std::sin(angle);
    }
  }
  return t;
}

/// Rotates pairs (x[2i], x[2i+1]) of one head vector; sign = -1 applies the
/// inverse rotation (used for gradients).
template <class T>
void rope_rotate(T* x, const RopeTable& table, std::size_t pos_index, int sign) {
  const double* c = table.cos.data() + pos_index * table.half;
  const double* s = table.sin.data() + pos_index * table.half;
  for (std::size_t i = 0; i < table.half; ++i) {
    const T cs = static_cast<T>(c[i]);
    const T sn = static_cast<T>(sign * s[i]);
    const T a = x[2 * i], b = x[2 * i + 1];
    x[2 * i] = a * cs - b * sn;
    x[2 * i + 1] = a * sn + b * cs;
  }
}

/// Applies rope to rows [n x n_heads*head_dim]; row r uses table entry row_pos(r).
template <class T, class RowPos>
Tensor<T> rope_op(const Tensor<T>& x, std::size_t n_heads, std::size_t head_dim, RopeTable table, RowPos row_pos) {
  const std::size_t rows = x.rows(), width = x.cols();
  if (width != n_heads * head_dim) {
    throw DimensionError("rope: width " + std::to_string(width) + " != heads*head_dim");
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t h = 0; h < n_heads; ++h) rope_rotate(out.data() + r * width + h * head_dim, table, row_pos(r), 1);
  return make_result<T>(x.shape(), std::move(out), {x}, "rope",
                        [table = std::move(table), row_pos, rows, width, n_heads, head_dim](
                            TensorImpl<T>& o, std::span<const typename Tensor<T>::ImplPtr> in) {
                          auto& a = *in[0];
                          if (!a.requires_grad) return;
                          std::vector<T> g(o.grad.begin(), o.grad.end());
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t h = 0; h < n_heads; ++h)
                              rope_rotate(g.data() + r * width + h * head_dim, table, row_pos(r), -1);
                          for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i];
                        });
}

}  // namespace detail

/// Rotary embedding of one head: x is [seq x head_dim], positions has seq entries.
template <class T>
Tensor<T> rope_apply(const Tensor<T>& x, std::span<const std::size_t> positions, double theta) {
  if (positions.size() != x.rows()) throw DimensionError("rope_apply: one position per row required");
  auto table = detail::make_rope_table(positions, x.cols(), theta);
  return detail::rope_op(x, 1, x.cols(), std::move(table), [](std::size_t r) { return r; });
}

/// Rotary embedding of packed heads: x is [batch*seq x n_heads*head_dim] and
/// row b*seq+t sits at position t.
template <class T>
Tensor<T> rope_heads(const Tensor<T>& x, std::size_t seq, std::size_t n_heads, double theta) {
  const std::size_t head_dim = x.cols() / n_heads;
  std::vector<std::size_t> positions(seq);
  for (std::size_t t = 0; t < seq; ++t) positions[t] = t;
  auto table = detail::make_rope_table(positions, head_dim, theta);
  return detail::rope_op(x, n_heads, head_dim, std::move(table), [seq](std::size_t r) { return r % seq; });
}

/// Multi-head causal attention with 1/sqrt(head_dim) scaling. q, k, v are
/// [batch*seq x n_heads*head_dim]; so is the result.
template <class T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t batch,
                           std::size_t seq, std::size_t n_heads) {
  if (q.shape() != k.shape() || q.shape() != v.shape() || q.rows() != batch * seq || q.cols() % n_heads != 0) {
    throw DimensionError("attention shape mismatch: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()));
  }
  const std::size_t d = q.cols(), hd = d / n_heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(hd));
  std::vector<T> out(q.numel());
  std::vector<T> probs(batch * n_heads * seq * seq);
  std::vector<T> qh(seq * hd), kt(hd * seq), vh(seq * hd), oh(seq * hd);
  const T* qs = q.data().data();
  const T* ks = k.data().data();
  const T* vs = v.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t t = 0; t < seq; ++t) {
        const std::size_t row = (b * seq + t) * d + h * hd;
        for (std::size_t c = 0; c < hd; ++c) {
          qh[t * hd + c] = qs[row + c];
          kt[c * seq + t] = ks[row + c];
          vh[t * hd + c] = vs[row + c];
        }
      }
      T* p = probs.data() + (b * n_heads + h) * seq * seq;
      kernels::gemm(seq, seq, hd, qh.data(), hd, false, kt.data(), seq, p, seq, false);
      for (std::size_t i = 0; i < seq; ++i) {
        T* prow = p + i * seq;
        for (std::size_t j = 0; j <= i; ++j) prow[j] *= scale_factor;
        kernels::softmax_row(prow, seq, i + 1);
      }
      kernels::gemm(seq, hd, seq, p, seq, false, vh.data(), hd, oh.data(), hd, false);
      for (std::size_t t = 0; t < seq; ++t)
        for (std::size_t c = 0; c < hd; ++c) out[(b * seq + t) * d + h * hd + c] = oh[t * hd + c];
    }
  }
  return make_result<T>(
      q.shape(), std::move(out), {q, k, v}, "attention",
      [probs = std::move(probs), batch, seq, n_heads, d, hd, scale_factor](
          TensorImpl<T>& o, std::span<const typename Tensor<T>::ImplPtr> in) {
        auto& Q = *in[0];
        auto& K = *in[1];
        auto& V = *in[2];
        std::vector<T> qh(seq * hd), kh(seq * hd), vt(hd * seq), go(seq * hd);
        std::vector<T> dp(seq * seq), dq(seq * hd), dk(seq * hd), dv(seq * hd);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            for (std::size_t t = 0; t < seq; ++t) {
              const std::size_t row = (b * seq + t) * d + h * hd;
              for (std::size_t c = 0; c < hd; ++c) {
                qh[t * hd + c] = Q.data[row + c];
                kh[t * hd + c] = K.data[row + c];
                vt[c * seq + t] = V.data[row + c];
                go[t * hd + c] = o.grad[row + c];
              }
            }
            const T* p = probs.data() + (b * n_heads + h) * seq * seq;
            // dP = dO V^T, dV = P^T dO
            kernels::gemm(seq, seq, hd, go.data(), hd, false, vt.data(), seq, dp.data(), seq, false);
            kernels::gemm(seq, hd, seq, p, seq, true, go.data(), hd, dv.data(), hd, false);
            // dS = P * (dP - rowsum(P * dP)), folded with the score scale
            for (std::size_t i = 0; i < seq; ++i) {
              T dot = 0;
              for (std::size_t j = 0; j <= i; ++j) dot += p[i * seq + j] * dp[i * seq + j];
              for (std::size_t j = 0; j < seq; ++j)
                dp[i * seq + j] = j <= i ? p[i * seq + j] * (dp[i * seq + j] - dot) * scale_factor : T(0);
            }
            kernels::gemm(seq, hd, seq, dp.data(), seq, false, kh.data(), hd, dq.data(), hd, false);
            kernels::gemm(seq, hd, seq, dp.data(), seq, true, qh.data(), hd, dk.data(), hd, false);
            for (std::size_t t = 0; t < seq; ++t) {
              const std::size_t row = (b * seq + t) * d + h * hd;
              for (std::size_t c = 0; c < hd; ++c) {
                if (Q.requires_grad) Q.grad[row + c] += dq[t * hd + c];
                if (K.requires_grad) K.grad[row + c] += dk[t * hd + c];
                if (V.requires_grad) V.grad[row + c] += dv[t * hd + c];
              }
            }
          }
        }
      });
}

template <class T>
struct NormLayer {
  NormKind kind = NormKind::rmsnorm;
  T eps = T(1e-6);
  Tensor<T> gain;
  Tensor<T> bias;  // layernorm only

  NormLayer() = default;
  NormLayer(NormKind k, std::size_t dim, T e) : kind(k), eps(e), gain(Tensor<T>::full({dim}, T(1), true)) {
    if (kind == NormKind::layernorm) bias = Tensor<T>::zeros({dim}, true);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return kind == NormKind::rmsnorm ? rmsnorm(x, gain, eps) : layernorm(x, gain, bias, eps);
  }
};

/// A trainable tensor with its checkpoint name and optimizer policy.
template <class T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
  bool decay = false;  // decoupled weight decay applies
  TernaryLinear<T>* owner = nullptr;
};

template <class T>
struct TransformerBlock {
  NormLayer<T> attn_norm;
  TernaryLinear<T> q, k, v, o;
  NormLayer<T> mlp_norm;
  TernaryLinear<T> up, down;

  std::vector<TernaryLinear<T>*> projections() { return {&q, &k, &v, &o, &up, &down}; }
};

template <class T>
class LanguageModel {
 public:
  LanguageModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const std::size_t d = config_.d_model, f = config_.d_intermediate, vocab = config_.vocab_size;
    QuantOptions proj;
    proj.enabled = config_.quantize;
    proj.binary = config_.binary_mode;
    proj.learnable_alpha = config_.learnable_alpha;
    proj.ste_scale_alpha = config_.ste_scale_alpha;
    QuantOptions edge = proj;
    edge.enabled = config_.quantize && config_.quantize_embeddings;
    const T eps = static_cast<T>(config_.rmsnorm_eps);

    embed_ = TernaryLinear<T>("embed", vocab, d, edge);
    blocks_.reserve(config_.n_layers);
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      const std::string p = "blocks." + std::to_string(l) + ".";
      TransformerBlock<T> b{NormLayer<T>(config_.norm, d, eps),
                            TernaryLinear<T>(p + "attn.q", d, d, proj),
                            TernaryLinear<T>(p + "attn.k", d, d, proj),
                            TernaryLinear<T>(p + "attn.v", d, d, proj),
                            TernaryLinear<T>(p + "attn.o", d, d, proj),
                            NormLayer<T>(config_.norm, d, eps),
                            TernaryLinear<T>(p + "mlp.up", f, d, proj),
                            TernaryLinear<T>(p + "mlp.down", d, f, proj)};
      blocks_.push_back(std::move(b));
    }
    final_norm_ = NormLayer<T>(config_.norm, d, eps);
    output_ = TernaryLinear<T>("output", vocab, d, edge);

    Rng rng(seed);
    embed_.init(rng);
    for (auto& b : blocks_)
      for (auto* layer : b.projections()) layer->init(rng);
    output_.init(rng);
  }

  LanguageModel(const LanguageModel&) = delete;
  LanguageModel& operator=(const LanguageModel&) = delete;
  LanguageModel(LanguageModel&&) noexcept = default;
  LanguageModel& operator=(LanguageModel&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  std::vector<TransformerBlock<T>>& blocks() { return blocks_; }
  TernaryLinear<T>& embed() { return embed_; }
  TernaryLinear<T>& output() { return output_; }
  NormLayer<T>& final_norm() { return final_norm_; }

  /// Final normalized hidden states [batch*seq x d_model].
  Tensor<T> hidden_states(std::span<const std::int32_t> tokens, std::size_t batch = 1) {
    if (tokens.empty() || batch == 0 || tokens.size() % batch != 0) {
      throw DimensionError("forward: " + std::to_string(tokens.size()) + " tokens do not split into " +
                           std::to_string(batch) + " sequences");
    }
    const std::size_t seq = tokens.size() / batch;
    if (seq > config_.context_len) {
      throw DimensionError("sequence length " + std::to_string(seq) + " exceeds context_len " +
                           std::to_string(config_.context_len));
    }
    for (auto id : tokens) {
      if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
        throw DimensionError("token id " + std::to_string(id) + " out of range for vocab_size " +
                             std::to_string(config_.vocab_size));
      }
    }
    Tensor<T> x = embed_.lookup(tokens);
    for (auto& b : blocks_) x = block_forward(b, x, batch, seq);
    return final_norm_(x);
  }

  /// Logits [batch*seq x vocab].
  Tensor<T> forward(std::span<const std::int32_t> tokens, std::size_t batch = 1) {
    return output_.forward(hidden_states(tokens, batch));
  }

  Tensor<T> block_forward(TransformerBlock<T>& b, const Tensor<T>& x, std::size_t batch, std::size_t seq) {
    const std::size_t heads = config_.n_heads;
    const Tensor<T> h = b.attn_norm(x);
    const Tensor<T> q = rope_heads(b.q.forward(h), seq, heads, config_.rope_theta);
    const Tensor<T> k = rope_heads(b.k.forward(h), seq, heads, config_.rope_theta);
    const Tensor<T> v = b.v.forward(h);
    Tensor<T> attn = b.o.forward(causal_attention(q, k, v, batch, seq, heads));
    if (config_.attn_activation) attn = silu(attn);
    const Tensor<T> x1 = add(x, attn);
    const Tensor<T> m = b.down.forward(gelu(b.up.forward(b.mlp_norm(x1))));
    return add(x1, m);
  }

  /// Every projection layer: embedding, block projections in depth order, output.
  std::vector<TernaryLinear<T>*> all_layers() {
    std::vector<TernaryLinear<T>*> out{&embed_};
    for (auto& b : blocks_)
      for (auto* layer : b.projections()) out.push_back(layer);
    out.push_back(&output_);
    return out;
  }

  /// Layers running in ternary mode, in depth order.
  std::vector<TernaryLinear<T>*> quantized_layers() {
    std::vector<TernaryLinear<T>*> out;
    for (auto* layer : all_layers())
      if (layer->quantized()) out.push_back(layer);
    return out;
  }

  /// Trainable tensors in a fixed order. Decay applies to the latent block
  /// projection weights only.
  std::vector<NamedParameter<T>> parameters() {
    std::vector<NamedParameter<T>> out;
    auto add_layer = [&](TernaryLinear<T>& layer, bool decay) {
      out.push_back({layer.name() + ".weight", layer.weight(), decay, &layer});
      if (layer.quantized()) out.push_back({layer.name() + ".alpha", layer.alpha(), false, &layer});
    };
    auto add_norm = [&](const std::string& name, NormLayer<T>& n) {
      out.push_back({name + ".gain", n.gain, false, nullptr});
      if (n.kind == NormKind::layernorm) out.push_back({name + ".bias", n.bias, false, nullptr});
    };
    add_layer(embed_, false);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const std::string p = "blocks." + std::to_string(l) + ".";
      auto& b = blocks_[l];
      add_norm(p + "attn_norm", b.attn_norm);
      for (auto* layer : {&b.q, &b.k, &b.v, &b.o}) add_layer(*layer, true);
      add_norm(p + "mlp_norm", b.mlp_norm);
      add_layer(b.up, true);
      add_layer(b.down, true);
    }
    add_norm("final_norm", final_norm_);
    add_layer(output_, false);
    return out;
  }

  /// Parameters the optimizer updates (alpha excluded when frozen).
  std::vector<NamedParameter<T>> trainable_parameters() {
    std::vector<NamedParameter<T>> out;
    for (auto& p : parameters())
      if (p.tensor.requires_grad()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }

  /// Clamps every alpha into R+ and drops stale sign caches.
  void after_update() {
    for (auto* layer : all_layers()) {
      if (layer->quantized() && !layer->is_packed()) layer->clamp_alpha();
      layer->invalidate_cache();
    }
  }

  void freeze_signs() {
    for (auto* layer : quantized_layers()) layer->freeze_signs();
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

 private:
  ModelConfig config_;
  TernaryLinear<T> embed_;
  std::vector<TransformerBlock<T>> blocks_;
  NormLayer<T> final_norm_;
  TernaryLinear<T> output_;
};

/// Label-smoothed next-token loss.
template <class T>
Tensor<T> lm_loss(const Tensor<T>& logits, std::span<const std::int32_t> targets, T smoothing) {
  return smoothed_cross_entropy(logits, targets, smoothing);
}

struct PerplexityResult {
  double ppl = 0;
  double mean_nll = 0;
  std::size_t count = 0;
  std::vector<double> token_nll;  // filled when requested
};

/// exp(mean next-token NLL) over non-overlapping windows of `window` inputs.
/// The final window may be shorter so every target is scored exactly once.
template <class T>
PerplexityResult perplexity(LanguageModel<T>& model, std::span<const std::int32_t> stream, std::size_t window = 0,
                            bool keep_token_nll = false) {
  if (stream.size() < 2) throw DimensionError("perplexity needs a stream of at least 2 tokens");
  if (window == 0 || window > model.config().context_len) window = model.config().context_len;
  NoGradGuard no_grad;
  PerplexityResult res;
  double total = 0;
  const std::size_t targets = stream.size() - 1;
  const std::size_t vocab = model.config().vocab_size;
  for (auto id : stream) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw DimensionError("token id " + std::to_string(id) + " out of range for vocab_size " + std::to_string(vocab));
    }
  }
  constexpr std::size_t kWindowsPerBatch = 16;
  for (std::size_t start = 0; start < targets;) {
    std::size_t rows = 1;
    std::size_t len = std::min(window, targets - start);
    if (len == window) rows = std::min(kWindowsPerBatch, (targets - start) / window);
    const Tensor<T> logits = model.forward(stream.subspan(start, rows * len), rows);
    len *= rows;
    for (std::size_t t = 0; t < len; ++t) {
      const T* z = logits.data().data() + t * vocab;
      double mx = z[0];
      for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, static_cast<double>(z[j]));
      double s = 0;
      for (std::size_t j = 0; j < vocab; ++j) s += std::exp(static_cast<double>(z[j]) - mx);
      const double nll = mx + std::log(s) - static_cast<double>(z[stream[start + t + 1]]);
      total += nll;
      if (keep_token_nll) res.token_nll.push_back(nll);
    }
    start += len;
  }
  res.count = targets;
  res.mean_nll = total / static_cast<double>(targets);
  res.ppl = std::exp(res.mean_nll);
  return res;
}

}  // namespace ternarylm
