#pragma once

// Diagnostics over trained or fresh models: layer-wise sparsity profiles,
// the ablation grid, and a dense-versus-packed latency benchmark.

#include <algorithm>
#include <chrono>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ternarylm/storage.hpp"
#include "ternarylm/train.hpp"

namespace ternarylm {

struct BlockAggregate {
  std::size_t block = 0;
  std::size_t count = 0;
  double sparsity = 0;
  double fraction_pos = 0;
  double fraction_neg = 0;

  static constexpr const char* csv_header = "block,count,sparsity,fraction_pos,fraction_neg";
};

struct SparsityProfile {
  std::vector<QuantStats> layers;  // depth order
  std::vector<BlockAggregate> blocks;
  std::optional<QuantStats> embedding_probe;

  std::string layers_csv() const {
    std::string out = std::string(QuantStats::csv_header) + "\n";
    for (const auto& s : layers) out += s.csv_row() + "\n";
    if (embedding_probe) out += embedding_probe->csv_row() + "\n";
    return out;
  }

  std::string blocks_csv() const {
    std::ostringstream os;
    os.precision(9);
    os << BlockAggregate::csv_header << '\n';
    for (const auto& b : blocks)
      os << b.block << ',' << b.count << ',' << b.sparsity << ',' << b.fraction_pos << ',' << b.fraction_neg << '\n';
    return os.str();
  }
};

/// Quantization statistics of a hypothetical ternary copy of a weight matrix;
/// the matrix itself is not touched.
template <class T>
QuantStats quantization_probe(std::string id, std::span<const T> w) {
  const T tau = compute_threshold<T>(w);
  const auto signs = ternary_sign<T>(w, tau);
  double total = 0;
  std::size_t n = 0;
  for (T v : w) {
    if (std::abs(v) > tau) {
      total += std::abs(v);
      ++n;
    }
  }
  return stats_from_signs(std::move(id), signs, tau, n ? total / static_cast<double>(n) : 0.0);
}

/// Per-layer stats of every ternary layer plus weight-count-weighted block
/// aggregates. Layers that have not run a forward yet are quantized from
/// their current latent weights.
template <class T>
SparsityProfile sparsity_profile(LanguageModel<T>& model, bool embedding_probe = false) {
  if (model.quantized_layers().empty()) throw ConfigError("sparsity profile of a model with no ternary layers");
  SparsityProfile prof;
  auto layer_stats = [](TernaryLinear<T>& layer) {
    if (!layer.has_signs()) layer.quantize();
    return layer.stats();
  };
  if (model.embed().quantized()) prof.layers.push_back(layer_stats(model.embed()));
  for (std::size_t l = 0; l < model.blocks().size(); ++l) {
    BlockAggregate agg;
    agg.block = l;
    for (auto* layer : model.blocks()[l].projections()) {
      if (!layer->quantized()) continue;
      const QuantStats s = layer_stats(*layer);
      const double n = static_cast<double>(s.count);
      agg.count += s.count;
      agg.sparsity += s.sparsity * n;
      agg.fraction_pos += s.fraction_pos * n;
      agg.fraction_neg += s.fraction_neg * n;
      prof.layers.push_back(s);
    }
    if (agg.count) {
      const double n = static_cast<double>(agg.count);
      agg.sparsity /= n;
      agg.fraction_pos /= n;
      agg.fraction_neg /= n;
      prof.blocks.push_back(agg);
    }
  }
  if (model.output().quantized()) prof.layers.push_back(layer_stats(model.output()));
  if (embedding_probe && !model.embed().quantized()) {
    prof.embedding_probe = quantization_probe<T>("embed(probe)", model.embed().weight().data());
  }
  return prof;
}

struct AblationVariant {
  std::string name;
  RunConfig config;
};

/// The full configuration and its five single-factor variants.
inline std::vector<AblationVariant> ablation_variants(const RunConfig& base) {
  std::vector<AblationVariant> out{{"full", base}};
  auto variant = [&](std::string name, std::string_view key, std::string_view value) {
    RunConfig c = base;
    c.set(key, value);
    const auto diff = config_diff(base, c);
    if (diff.size() != 1) {
      throw ConfigError("ablation '" + name + "' must differ from the base config in exactly one key, differs in " +
                        std::to_string(diff.size()));
    }
    out.push_back({std::move(name), std::move(c)});
  };
  variant("no_learnable_alpha", "learnable_alpha", "false");
  variant("layernorm", "norm", "layernorm");
  variant("no_label_smoothing", "label_smoothing", "0");
  variant("binary", "binary_mode", "true");
  variant("quantized_embeddings", "quantize_embeddings", "true");
  return out;
}

struct AblationResult {
  std::string name;
  std::vector<std::string> changed_keys;
  TrainStatus status = TrainStatus::completed;
  std::string message;
  double final_val_ppl = 0;
  double final_val_loss = 0;
  double final_train_loss = 0;
  double zero_fraction = 0;  // weight-count-weighted over ternary layers
  std::vector<EpochRecord> curve;

  static constexpr const char* csv_header =
      "config,changed_key,status,final_train_loss,final_val_loss,final_val_ppl,zero_fraction";
};

template <class T = float>
AblationResult run_one_ablation(const AblationVariant& v, const RunConfig& base, std::span<const std::int32_t> train_tokens,
                                std::span<const std::int32_t> val_tokens, const TrainHooks<T>& hooks = {}) {
  AblationResult r;
  r.name = v.name;
  r.changed_keys = config_diff(base, v.config);
  LanguageModel<T> model(v.config.model, v.config.train.seed);
  TrainHooks<T> h = hooks;
  h.record_histograms = false;
  const TrainResult tr = train(model, train_tokens, val_tokens, v.config.train, h);
  r.status = tr.status;
  r.message = tr.message;
  r.curve = tr.epochs;
  if (!tr.epochs.empty()) {
    r.final_val_ppl = tr.epochs.back().val_ppl;
    r.final_val_loss = tr.epochs.back().val_nll;
    r.final_train_loss = tr.epochs.back().train_loss;
  }
  std::size_t zeros = 0, total = 0;
  for (auto* layer : model.quantized_layers()) {
    if (!layer->has_signs()) layer->quantize();
    const auto s = layer->stats();
    zeros += static_cast<std::size_t>(std::llround(s.sparsity * static_cast<double>(s.count)));
    total += s.count;
  }
  r.zero_fraction = total ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
  return r;
}

/// Trains every variant with the base seed and step budget. Divergent runs
/// are recorded, not raised.
template <class T = float>
std::vector<AblationResult> run_ablations(const RunConfig& base, std::span<const std::int32_t> train_tokens,
                                          std::span<const std::int32_t> val_tokens, const TrainHooks<T>& hooks = {}) {
  std::vector<AblationResult> out;
  for (const auto& v : ablation_variants(base)) out.push_back(run_one_ablation<T>(v, base, train_tokens, val_tokens, hooks));
  return out;
}

inline std::string ablation_csv(const std::vector<AblationResult>& results) {
  std::ostringstream os;
  os.precision(9);
  os << AblationResult::csv_header << '\n';
  for (const auto& r : results) {
    os << r.name << ',' << (r.changed_keys.empty() ? "" : r.changed_keys.front()) << ','
       << (r.status == TrainStatus::completed ? "completed" : "diverged") << ',' << r.final_train_loss << ','
       << r.final_val_loss << ',' << r.final_val_ppl << ',' << r.zero_fraction << '\n';
  }
  return os.str();
}

inline std::string ablation_curves_csv(const std::vector<AblationResult>& results) {
  std::ostringstream os;
  os.precision(9);
  os << "config,epoch,train_loss,val_loss,val_ppl\n";
  for (const auto& r : results)
    for (const auto& e : r.curve)
      os << r.name << ',' << e.epoch << ',' << e.train_loss << ',' << e.val_nll << ',' << e.val_ppl << '\n';
  return os.str();
}

struct BenchOptions {
  std::size_t repeats = 10;
  std::size_t seq_len = 512;  // 0: context_len
  std::uint64_t seed = 0;
};

struct BenchResult {
  std::string config;
  std::string path;  // "dense_fp32" or "packed_ternary"
  std::size_t seq_len = 0;
  std::vector<double> ms_per_token;
  double median_ms_per_token = 0;
  double iqr_ms = 0;
  std::uint64_t weight_bytes = 0;
  std::uint64_t peak_bytes_estimate = 0;
  std::uint64_t bytes_fp32 = 0;
  std::uint64_t bytes_packed = 0;
  double ratio = 0;
};

/// Linear-interpolated quantile of unsorted samples.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Per-token forward latency at batch 1 for the dense materialized-W_q path
/// and the packed path of the same weights.
template <class T = float>
std::vector<BenchResult> efficiency_bench(const ModelConfig& cfg, const std::string& name, const BenchOptions& opts) {
  if (opts.repeats < 10) throw ConfigError("efficiency_bench needs at least 10 repeats");
  if (!cfg.quantize) throw ConfigError("efficiency_bench compares ternary paths; quantize must be on");
  const std::size_t seq = opts.seq_len ? std::min(opts.seq_len, cfg.context_len) : cfg.context_len;
  const StorageReport storage = storage_report(cfg);

  LanguageModel<T> dense(cfg, opts.seed);
  LanguageModel<T> packed(cfg, opts.seed);
  for (auto* layer : packed.quantized_layers()) layer->set_packed(layer->to_packed());

  Rng rng(derive_seed(opts.seed, 0xbe7c));
  std::vector<std::int32_t> tokens(seq);
  for (auto& t : tokens) t = static_cast<std::int32_t>(rng.index(cfg.vocab_size));

  // Activations held live in one forward at batch 1: residual stream, q/k/v,
  // attention probabilities and the MLP hidden layer.
  const std::uint64_t activations =
      4ULL * seq * (6ULL * cfg.d_model + cfg.n_heads * seq + cfg.d_intermediate + cfg.vocab_size);

  auto measure = [&](LanguageModel<T>& model, std::string path, std::uint64_t weight_bytes) {
    NoGradGuard no_grad;
    BenchResult r;
    r.config = name;
    r.path = std::move(path);
    r.seq_len = seq;
    (void)model.forward(tokens, 1);
    for (std::size_t i = 0; i < opts.repeats; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      const Tensor<T> logits = model.forward(tokens, 1);
      const auto t1 = std::chrono::steady_clock::now();
      r.ms_per_token.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(seq));
    }
    r.median_ms_per_token = quantile(r.ms_per_token, 0.5);
    r.iqr_ms = quantile(r.ms_per_token, 0.75) - quantile(r.ms_per_token, 0.25);
    r.weight_bytes = weight_bytes;
    r.peak_bytes_estimate = weight_bytes + activations;
    r.bytes_fp32 = storage.bytes_fp32;
    r.bytes_packed = storage.bytes_packed;
    r.ratio = storage.ratio();
    return r;
  };
  return {measure(dense, "dense_fp32", storage.bytes_fp32), measure(packed, "packed_ternary", storage.bytes_packed)};
}

inline nlohmann::json bench_json(const std::vector<BenchResult>& results) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : results) {
    out.push_back({{"config", r.config},
                   {"path", r.path},
                   {"seq_len", r.seq_len},
                   {"median_ms_per_token", r.median_ms_per_token},
                   {"iqr_ms", r.iqr_ms},
                   {"peak_bytes_estimate", r.peak_bytes_estimate},
                   {"bytes_fp32", r.bytes_fp32},
                   {"bytes_packed", r.bytes_packed},
                   {"ratio", r.ratio}});
  }
  return out;
}

}  // namespace ternarylm
