#pragma once

// Autoregressive generation with temperature and nucleus (top-p) sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "ternarylm/model.hpp"
#include "ternarylm/random.hpp"
#include "ternarylm/vocab.hpp"

namespace ternarylm {

/// Token ids of the smallest probability-sorted prefix whose mass reaches p.
/// Sorting is by descending probability, ties by ascending id.
inline std::vector<std::int32_t> nucleus_set(std::span<const double> probs, double p) {
  if (!(p > 0 && p <= 1)) throw ConfigError("nucleus p must lie in (0, 1]");
  if (probs.empty()) throw DimensionError("nucleus_set on an empty distribution");
  std::vector<std::int32_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) { return probs[a] > probs[b]; });
  double mass = 0;
  std::size_t n = 0;
  while (n < order.size()) {
    mass += probs[order[n]];
    ++n;
    if (mass >= p) break;
  }
  order.resize(n);
  return order;
}

/// softmax(logits / temperature) in double precision.
template <class T>
std::vector<double> tempered_softmax(std::span<const T> logits, double temperature) {
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
  std::vector<double> p(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (T z : logits) mx = std::max(mx, static_cast<double>(z) / temperature);
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) / temperature - mx);
    s += p[i];
  }
  for (auto& v : p) v /= s;
  return p;
}

struct NucleusDraw {
  std::int32_t token = 0;
  std::vector<std::int32_t> nucleus;
};

/// Draws from the renormalized nucleus of `probs`.
inline NucleusDraw sample_from_nucleus(std::span<const double> probs, double p, Rng& rng) {
  NucleusDraw d;
  d.nucleus = nucleus_set(probs, p);
  double mass = 0;
  for (auto id : d.nucleus) mass += probs[static_cast<std::size_t>(id)];
  const double u = rng.uniform() * mass;
  double acc = 0;
  d.token = d.nucleus.back();
  for (auto id : d.nucleus) {
    acc += probs[static_cast<std::size_t>(id)];
    if (u < acc) {
      d.token = id;
      break;
    }
  }
  return d;
}

struct GenerateOptions {
  std::size_t max_new = 200;
  double top_p = 0.9;
  double temperature = 0.8;
  std::uint64_t seed = 0;
  bool stop_at_eot = true;
};

struct GenerateStep {
  std::size_t position = 0;
  std::int32_t token = 0;
  std::vector<std::int32_t> nucleus;
  std::vector<double> probs;  // tempered distribution the draw used
};

struct GenerateResult {
  std::vector<std::int32_t> tokens;  // prompt followed by generated ids
  std::size_t prompt_len = 0;
  std::vector<GenerateStep> trace;   // filled when requested
};

/// Samples up to max_new tokens. The model sees at most context_len trailing
/// tokens; generation stops early on the end-of-text id.
template <class T>
GenerateResult generate(LanguageModel<T>& model, std::span<const std::int32_t> prompt, const GenerateOptions& opts,
                        bool keep_trace = false) {
  if (prompt.empty()) throw ConfigError("generate: empty prompt");
  if (!(opts.top_p > 0 && opts.top_p <= 1)) throw ConfigError("generate: p must lie in (0, 1]");
  if (!(opts.temperature > 0)) throw ConfigError("generate: temperature must be positive");
  NoGradGuard no_grad;
  Rng rng(derive_seed(opts.seed, 0x6e75636cULL));
  GenerateResult res;
  res.tokens.assign(prompt.begin(), prompt.end());
  res.prompt_len = prompt.size();
  const std::size_t ctx = model.config().context_len;
  const std::size_t vocab = model.config().vocab_size;
  for (std::size_t i = 0; i < opts.max_new; ++i) {
    const std::size_t start = res.tokens.size() > ctx ? res.tokens.size() - ctx : 0;
    const std::span<const std::int32_t> window(res.tokens.data() + start, res.tokens.size() - start);
    const Tensor<T> logits = model.forward(window, 1);
    const auto last = logits.data().subspan((window.size() - 1) * vocab, vocab);
    auto probs = tempered_softmax(last, opts.temperature);
    auto draw = sample_from_nucleus(probs, opts.top_p, rng);
    res.tokens.push_back(draw.token);
    if (keep_trace) res.trace.push_back({res.tokens.size() - 1, draw.token, std::move(draw.nucleus), std::move(probs)});
    if (opts.stop_at_eot && draw.token == Vocab::eot_id) break;
  }
  return res;
}

}  // namespace ternarylm
