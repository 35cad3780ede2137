#pragma once

// Warmup-cosine schedule, global-norm clipping and AdamW with decoupled
// weight decay.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "ternarylm/error.hpp"
#include "ternarylm/model.hpp"

namespace ternarylm {

/// Linear warmup 0 -> peak over warmup_steps, then cosine decay to 0 at
/// total_steps. Steps past total_steps clamp to the final value.
inline double lr_at(std::size_t step, double peak, std::size_t warmup_steps, std::size_t total_steps) {
  if (step > total_steps) step = total_steps;
  if (step < warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return peak;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct ClipResult {
  double norm = 0;   // global L2 norm before clipping
  double scale = 1;  // factor applied to every gradient
};

template <class T>
ClipResult clip_grad_norm(std::vector<NamedParameter<T>>& params, double max_norm) {
  if (!(max_norm > 0)) throw InvariantError("max_norm must be positive");
  double sq = 0;
  for (auto& p : params)
    for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  ClipResult r;
  r.norm = std::sqrt(sq);
  if (!std::isfinite(r.norm)) {
    for (auto& p : params) {
      for (T g : p.tensor.grad()) {
        if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in " + p.name);
      }
    }
    throw NumericError("gradient norm overflowed");
  }
  if (r.norm > max_norm) {
    r.scale = max_norm / r.norm;
    for (auto& p : params)
      for (T& g : p.tensor.grad()) g = static_cast<T>(static_cast<double>(g) * r.scale);
  }
  return r;
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config) : config_(config) {}

  std::size_t steps() const { return t_; }

  /// One update of every parameter from its accumulated gradient. Decay is
  /// applied only to parameters flagged for it.
  void step(std::vector<NamedParameter<T>>& params, double lr) {
    if (slots_.empty()) {
      for (auto& p : params) slots_.push_back({p.name, std::vector<double>(p.tensor.numel(), 0.0),
                                               std::vector<double>(p.tensor.numel(), 0.0)});
    }
    if (slots_.size() != params.size()) throw DimensionError("optimizer state does not match parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (slots_[i].m.size() != params[i].tensor.numel() || slots_[i].name != params[i].name) {
        throw DimensionError("optimizer state mismatch for " + params[i].name);
      }
      for (T g : params[i].tensor.grad()) {
        if (!std::isfinite(static_cast<double>(g))) {
          throw NumericError("non-finite gradient in " + params[i].name + "; step aborted");
        }
      }
    }
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      auto data = p.tensor.data();
      const auto grad = p.tensor.grad();
      auto& m = slots_[i].m;
      auto& v = slots_[i].v;
      const double decay = p.decay ? 1.0 - lr * config_.weight_decay : 1.0;
      for (std::size_t j = 0; j < data.size(); ++j) {
        const double g = grad[j];
        m[j] = b1 * m[j] + (1.0 - b1) * g;
        v[j] = b2 * v[j] + (1.0 - b2) * g * g;
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        double theta = static_cast<double>(data[j]) * decay;
        theta -= lr * mhat / (std::sqrt(vhat) + config_.eps);
        data[j] = static_cast<T>(theta);
      }
    }
  }

 private:
  struct Slot {
    std::string name;
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamWConfig config_;
  std::vector<Slot> slots_;
  std::size_t t_ = 0;
};

}  // namespace ternarylm
