#pragma once

// The ternary training loop: per minibatch, requantize every ternary layer,
// run the forward, the label-smoothed loss and the straight-through backward,
// clip, and update latent weights and scales with AdamW.

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ternarylm/config.hpp"
#include "ternarylm/data.hpp"
#include "ternarylm/histogram.hpp"
#include "ternarylm/model.hpp"
#include "ternarylm/optim.hpp"

namespace ternarylm {

struct StepRecord {
  std::size_t step = 0;
  double lr = 0;
  double loss = 0;
  double grad_norm = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;  // mean training loss over the epoch's steps
  double val_ppl = 0;
  double val_nll = 0;
};

struct EpochQuantStats {
  std::size_t epoch = 0;
  std::vector<QuantStats> layers;
};

enum class TrainStatus { completed, diverged };

struct TrainResult {
  TrainStatus status = TrainStatus::completed;
  std::string message;
  double initial_loss = 0;
  std::size_t steps_done = 0;
  std::size_t total_steps = 0;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::vector<EpochQuantStats> quant_stats;
  std::vector<LayerHistogram> histograms;
};

template <class T>
struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called every checkpoint_interval steps.
  std::function<void(std::size_t step, LanguageModel<T>&)> on_checkpoint;
  bool record_histograms = true;
};

inline AdamWConfig adamw_config(const TrainConfig& cfg) {
  return AdamWConfig{cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
}

/// Number of optimizer steps a run takes.
inline std::size_t planned_steps(const TrainConfig& cfg, std::size_t batches_per_epoch) {
  return cfg.total_steps ? cfg.total_steps : cfg.epochs * batches_per_epoch;
}

/// One optimizer step on a batch. Returns the step record; throws
/// NumericError on non-finite gradients.
template <class T>
StepRecord train_step(LanguageModel<T>& model, AdamW<T>& opt, const Batch& batch, double lr, const TrainConfig& cfg,
                      std::size_t step) {
  model.zero_grad();
  const Tensor<T> logits = model.forward(batch.inputs, batch.sequences);
  const Tensor<T> loss = lm_loss(logits, batch.targets, static_cast<T>(cfg.label_smoothing));
  StepRecord rec;
  rec.step = step;
  rec.lr = lr;
  rec.loss = static_cast<double>(loss.item());
  if (!std::isfinite(rec.loss)) return rec;
  backward(loss);
  auto params = model.trainable_parameters();
  rec.grad_norm = clip_grad_norm(params, cfg.grad_clip).norm;
  opt.step(params, lr);
  model.after_update();
  return rec;
}

template <class T>
TrainResult train(LanguageModel<T>& model, std::span<const std::int32_t> train_tokens,
                  std::span<const std::int32_t> val_tokens, const TrainConfig& cfg, const TrainHooks<T>& hooks = {}) {
  cfg.validate();
  if (cfg.seq_len > model.config().context_len) {
    throw ConfigError("seq_len " + std::to_string(cfg.seq_len) + " exceeds context_len " +
                      std::to_string(model.config().context_len));
  }
  const std::size_t batches_per_epoch =
      (window_starts(train_tokens.size(), cfg.seq_len).size() + cfg.batch_size - 1) / cfg.batch_size;
  TrainResult result;
  result.total_steps = planned_steps(cfg, batches_per_epoch);
  const std::size_t n_epochs =
      cfg.total_steps ? (cfg.total_steps + batches_per_epoch - 1) / batches_per_epoch : cfg.epochs;

  AdamW<T> opt(adamw_config(cfg));
  std::size_t step = 0;
  std::size_t over_limit = 0;
  bool have_initial = false;

  auto abort_run = [&](std::string message) {
    result.status = TrainStatus::diverged;
    result.message = std::move(message);
  };

  for (std::size_t epoch = 1; epoch <= n_epochs && step < result.total_steps; ++epoch) {
    const auto batches = make_batches(train_tokens, cfg.batch_size, cfg.seq_len, cfg.seed, epoch);
    double epoch_loss = 0;
    std::size_t epoch_steps = 0;
    for (const auto& batch : batches) {
      if (step >= result.total_steps) break;
      ++step;
      const double lr = lr_at(step, cfg.peak_lr, cfg.warmup_steps, result.total_steps);
      StepRecord rec;
      try {
        rec = train_step(model, opt, batch, lr, cfg, step);
      } catch (const NumericError& e) {
        abort_run(std::string("step ") + std::to_string(step) + ": " + e.what());
        return result;
      }
      result.steps.push_back(rec);
      result.steps_done = step;
      if (hooks.on_step) hooks.on_step(rec);
      if (!std::isfinite(rec.loss)) {
        abort_run("non-finite loss at step " + std::to_string(step));
        return result;
      }
      if (!have_initial) {
        result.initial_loss = rec.loss;
        have_initial = true;
      }
      over_limit = rec.loss > cfg.divergence_factor * result.initial_loss ? over_limit + 1 : 0;
      if (cfg.divergence_patience > 0 && over_limit >= cfg.divergence_patience) {
        abort_run("loss above " + std::to_string(cfg.divergence_factor) + "x initial for " +
                  std::to_string(over_limit) + " consecutive steps");
        return result;
      }
      epoch_loss += rec.loss;
      ++epoch_steps;
      if (cfg.checkpoint_interval && hooks.on_checkpoint && step % cfg.checkpoint_interval == 0) {
        hooks.on_checkpoint(step, model);
      }
    }

    EpochRecord er;
    er.epoch = epoch;
    er.train_loss = epoch_steps ? epoch_loss / static_cast<double>(epoch_steps) : 0.0;
    if (val_tokens.size() >= 2) {
      const auto pr = perplexity(model, val_tokens, cfg.seq_len);
      er.val_ppl = pr.ppl;
      er.val_nll = pr.mean_nll;
    } else {
      er.val_ppl = std::numeric_limits<double>::quiet_NaN();
      er.val_nll = std::numeric_limits<double>::quiet_NaN();
    }
    result.epochs.push_back(er);
    if (hooks.on_epoch) hooks.on_epoch(er);

    // The validation forward refreshed every sign cache from the current W.
    EpochQuantStats qs;
    qs.epoch = epoch;
    for (auto* layer : model.quantized_layers()) {
      if (!layer->has_signs()) layer->quantize();
      qs.layers.push_back(layer->stats());
    }
    result.quant_stats.push_back(std::move(qs));
    if (hooks.record_histograms) {
      for (auto* layer : model.quantized_layers()) result.histograms.push_back(weight_histogram(*layer, epoch));
    }
  }
  return result;
}

}  // namespace ternarylm
