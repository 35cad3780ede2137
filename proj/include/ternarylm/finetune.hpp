#pragma once

// Classifier-head fine-tuning on a frozen backbone: the final hidden state at
// the last non-pad position feeds tanh(W1 h + b1), then a C-way output layer.
// Only the head is trained.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ternarylm/model.hpp"
#include "ternarylm/optim.hpp"
#include "ternarylm/vocab.hpp"

namespace ternarylm {

struct LabeledExample {
  std::vector<std::int32_t> tokens;
  std::int32_t label = 0;
};

struct FinetuneConfig {
  std::size_t hidden = 0;  // 0: d_model
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  std::uint64_t seed = 0;
};

template <class T>
struct ClassifierHead {
  Tensor<T> w1, b1, w2, b2;

  ClassifierHead(std::size_t in, std::size_t hidden, std::size_t classes, Rng& rng) {
    auto init = [&](std::size_t rows, std::size_t cols) {
      std::vector<T> v(rows * cols);
      for (auto& x : v) x = static_cast<T>(rng.truncated_normal(kInitStd));
      return Tensor<T>({rows, cols}, std::move(v), true);
    };
    w1 = init(hidden, in);
    b1 = Tensor<T>::zeros({hidden}, true);
    w2 = init(classes, hidden);
    b2 = Tensor<T>::zeros({classes}, true);
  }

  std::size_t classes() const { return w2.extent(0); }

  /// Logits [n x classes] for pooled features [n x in].
  Tensor<T> operator()(const Tensor<T>& features) const {
    return add(linear(tanh(add(linear(features, w1), b1)), w2), b2);
  }

  std::vector<NamedParameter<T>> parameters() {
    return {{"head.w1", w1, false, nullptr}, {"head.b1", b1, false, nullptr},
            {"head.w2", w2, false, nullptr}, {"head.b2", b2, false, nullptr}};
  }
};

/// Final hidden state of each example at its last non-pad position. Inputs
/// longer than the context keep their trailing tokens.
template <class T>
Tensor<T> pooled_features(LanguageModel<T>& model, std::span<const LabeledExample> examples) {
  NoGradGuard no_grad;
  const std::size_t d = model.config().d_model, ctx = model.config().context_len;
  std::vector<T> out;
  out.reserve(examples.size() * d);
  for (const auto& ex : examples) {
    std::size_t end = ex.tokens.size();
    while (end > 0 && ex.tokens[end - 1] == Vocab::pad_id) --end;
    if (end == 0) throw DimensionError("example has no non-pad tokens");
    const std::size_t start = end > ctx ? end - ctx : 0;
    const Tensor<T> h = model.hidden_states(std::span<const std::int32_t>(ex.tokens.data() + start, end - start), 1);
    const auto row = h.data().subspan((end - start - 1) * d, d);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor<T>({examples.size(), d}, std::move(out));
}

struct ClassificationMetrics {
  double accuracy = 0;
  double macro_f1 = 0;
  std::vector<double> per_class_f1;
  std::vector<std::string> warnings;
};

/// Accuracy and macro-F1 over classes 0..C-1. A class with no true and no
/// predicted examples has undefined F1; it is scored 0 and reported.
inline ClassificationMetrics classification_metrics(std::span<const std::int32_t> truth,
                                                    std::span<const std::int32_t> pred, std::size_t classes) {
  if (truth.size() != pred.size()) throw DimensionError("metrics: label count mismatch");
  if (truth.empty()) throw DimensionError("metrics: empty dataset");
  ClassificationMetrics m;
  std::vector<std::size_t> tp(classes), fp(classes), fn(classes), support(classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]), p = static_cast<std::size_t>(pred[i]);
    ++support[t];
    if (t == p) {
      ++correct;
      ++tp[t];
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    present += support[c] > 0;
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom == 0) {
      m.per_class_f1.push_back(0.0);
      m.warnings.push_back("class " + std::to_string(c) + " has no true or predicted examples; F1 undefined");
    } else {
      m.per_class_f1.push_back(2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom));
    }
  }
  if (present < 2) m.warnings.push_back("fewer than two classes present; macro-F1 is degenerate");
  double s = 0;
  for (double f : m.per_class_f1) s += f;
  m.macro_f1 = s / static_cast<double>(classes);
  return m;
}

template <class T>
struct FinetuneResult {
  ClassifierHead<T> head;
  std::vector<double> epoch_loss;
  ClassificationMetrics train_metrics;
  ClassificationMetrics eval_metrics;  // on `eval` when given, else on `train`
};

template <class T>
std::vector<std::int32_t> predict(const ClassifierHead<T>& head, const Tensor<T>& features) {
  NoGradGuard no_grad;
  const Tensor<T> logits = head(features);
  const std::size_t c = head.classes();
  std::vector<std::int32_t> pred(features.rows());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto row = logits.data().subspan(i * c, c);
    pred[i] = static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return pred;
}

/// Trains a head on pooled backbone features. The backbone is only read.
template <class T>
FinetuneResult<T> finetune_classifier(LanguageModel<T>& model, std::span<const LabeledExample> train_set,
                                      std::span<const LabeledExample> eval_set, const FinetuneConfig& cfg,
                                      std::size_t classes = 0) {
  if (train_set.empty()) throw ConfigError("finetune: empty dataset");
  std::int32_t max_label = 0;
  for (const auto& ex : train_set) {
    if (ex.label < 0) throw ConfigError("finetune: negative label");
    max_label = std::max(max_label, ex.label);
  }
  for (const auto& ex : eval_set) max_label = std::max(max_label, ex.label);
  if (classes == 0) classes = std::max<std::size_t>(2, static_cast<std::size_t>(max_label) + 1);
  if (classes < 2) throw ConfigError("finetune: a classifier needs at least 2 classes");
  if (static_cast<std::size_t>(max_label) >= classes) throw ConfigError("finetune: label out of range");

  const Tensor<T> features = pooled_features(model, train_set);
  const std::size_t d = model.config().d_model;
  Rng rng(derive_seed(cfg.seed, 0xf17e));
  FinetuneResult<T> res{ClassifierHead<T>(d, cfg.hidden ? cfg.hidden : d, classes, rng), {}, {}, {}};
  AdamW<T> opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  auto params = res.head.parameters();

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - s);
      std::vector<T> x(n * d);
      std::vector<std::int32_t> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t idx = order[s + i];
        std::copy_n(features.data().begin() + static_cast<std::ptrdiff_t>(idx * d), d, x.begin() + static_cast<std::ptrdiff_t>(i * d));
        y[i] = train_set[idx].label;
      }
      for (auto& p : params) p.tensor.zero_grad();
      const Tensor<T> loss = smoothed_cross_entropy(res.head(Tensor<T>({n, d}, std::move(x))), y, T(0));
      backward(loss);
      opt.step(params, cfg.lr);
      total += static_cast<double>(loss.item());
      ++batches;
    }
    res.epoch_loss.push_back(total / static_cast<double>(batches));
  }

  auto labels = [](std::span<const LabeledExample> set) {
    std::vector<std::int32_t> y;
    for (const auto& ex : set) y.push_back(ex.label);
    return y;
  };
  res.train_metrics = classification_metrics(labels(train_set), predict(res.head, features), classes);
  if (eval_set.empty()) {
    res.eval_metrics = res.train_metrics;
  } else {
    res.eval_metrics =
        classification_metrics(labels(eval_set), predict(res.head, pooled_features(model, eval_set)), classes);
  }
  return res;
}

}  // namespace ternarylm
