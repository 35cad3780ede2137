#pragma once

// Model and training hyperparameters with a flat `key=value` text form.
// Defaults are the full-size reference settings; desk-scale runs override
// them from a config file or --set flags.

#include <charconv>
#include <cstdint>
#include <type_traits>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ternarylm/error.hpp"

namespace ternarylm {

enum class NormKind { rmsnorm, layernorm };

struct ModelConfig {
  std::size_t n_layers = 12;
  std::size_t d_model = 768;
  std::size_t n_heads = 12;
  std::size_t d_intermediate = 2048;
  double rope_theta = 10000.0;
  double rmsnorm_eps = 1e-6;
  std::size_t vocab_size = 30522;
  std::size_t context_len = 512;
  bool quantize = true;
  bool quantize_embeddings = false;
  bool binary_mode = false;
  bool attn_activation = true;
  NormKind norm = NormKind::rmsnorm;
  bool learnable_alpha = true;
  bool ste_scale_alpha = true;

  std::size_t head_dim() const { return n_heads == 0 ? 0 : d_model / n_heads; }

  void validate() const {
    if (n_layers == 0) throw ConfigError("n_layers must be >= 1");
    if (d_model == 0 || n_heads == 0) throw ConfigError("d_model and n_heads must be positive");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be a multiple of n_heads");
    if (head_dim() % 2 != 0) throw ConfigError("head_dim must be even for rotary embeddings");
    if (d_intermediate == 0) throw ConfigError("d_intermediate must be positive");
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (context_len == 0) throw ConfigError("context_len must be >= 1");
    if (!(rope_theta > 0)) throw ConfigError("rope_theta must be positive");
    if (!(rmsnorm_eps > 0)) throw ConfigError("rmsnorm_eps must be positive");
  }
};

struct TrainConfig {
  double peak_lr = 1e-3;
  std::size_t warmup_steps = 1000;
  std::size_t epochs = 15;
  std::size_t total_steps = 0;  // 0: epochs * batches per epoch
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 1e-5;
  double grad_clip = 1.0;
  std::size_t batch_size = 64;
  std::size_t seq_len = 512;
  double label_smoothing = 0.1;
  std::size_t seed = 0;
  std::size_t eval_interval = 0;        // extra validation every N steps; 0 = per epoch only
  std::size_t checkpoint_interval = 0;  // 0 = final checkpoint only
  double val_fraction = 0.1;
  double divergence_factor = 3.0;
  std::size_t divergence_patience = 200;

  void validate() const {
    if (!(peak_lr >= 0)) throw ConfigError("peak_lr must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0, 1)");
    if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
    if (!(grad_clip > 0)) throw ConfigError("grad_clip must be positive");
    if (batch_size == 0 || seq_len == 0) throw ConfigError("batch_size and seq_len must be positive");
    if (!(label_smoothing >= 0 && label_smoothing < 1)) throw ConfigError("label_smoothing must lie in [0, 1)");
    if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("val_fraction must lie in [0, 1)");
  }
};

namespace detail {

inline std::string format_value(std::size_t v) { return std::to_string(v); }
inline std::string format_value(bool v) { return v ? "true" : "false"; }
inline std::string format_value(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}
inline std::string format_value(NormKind v) { return v == NormKind::rmsnorm ? "rmsnorm" : "layernorm"; }

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class U>
void parse_unsigned(std::string_view key, std::string_view text, U& out) {
  U v{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("invalid integer for '" + std::string(key) + "': " + std::string(text));
  }
  out = v;
}

inline void parse_value(std::string_view key, std::string_view text, std::size_t& out) { parse_unsigned(key, text, out); }
inline void parse_value(std::string_view key, std::string_view text, double& out) {
  double v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("invalid number for '" + std::string(key) + "': " + std::string(text));
  }
  out = v;
}
inline void parse_value(std::string_view key, std::string_view text, bool& out) {
  if (text == "true" || text == "1") {
    out = true;
  } else if (text == "false" || text == "0") {
    out = false;
  } else {
    throw ConfigError("invalid boolean for '" + std::string(key) + "': " + std::string(text));
  }
}
inline void parse_value(std::string_view key, std::string_view text, NormKind& out) {
  if (text == "rmsnorm") {
    out = NormKind::rmsnorm;
  } else if (text == "layernorm") {
    out = NormKind::layernorm;
  } else {
    throw ConfigError("invalid norm for '" + std::string(key) + "': " + std::string(text));
  }
}

}  // namespace detail

template <class F>
void visit_fields(ModelConfig& c, F&& f) {
  f("n_layers", c.n_layers);
  f("d_model", c.d_model);
  f("n_heads", c.n_heads);
  f("d_intermediate", c.d_intermediate);
  f("rope_theta", c.rope_theta);
  f("rmsnorm_eps", c.rmsnorm_eps);
  f("vocab_size", c.vocab_size);
  f("context_len", c.context_len);
  f("quantize", c.quantize);
  f("quantize_embeddings", c.quantize_embeddings);
  f("binary_mode", c.binary_mode);
  f("attn_activation", c.attn_activation);
  f("norm", c.norm);
  f("learnable_alpha", c.learnable_alpha);
  f("ste_scale_alpha", c.ste_scale_alpha);
}

template <class F>
void visit_fields(TrainConfig& c, F&& f) {
  f("peak_lr", c.peak_lr);
  f("warmup_steps", c.warmup_steps);
  f("epochs", c.epochs);
  f("total_steps", c.total_steps);
  f("beta1", c.beta1);
  f("beta2", c.beta2);
  f("adam_eps", c.adam_eps);
  f("weight_decay", c.weight_decay);
  f("grad_clip", c.grad_clip);
  f("batch_size", c.batch_size);
  f("seq_len", c.seq_len);
  f("label_smoothing", c.label_smoothing);
  f("seed", c.seed);
  f("eval_interval", c.eval_interval);
  f("checkpoint_interval", c.checkpoint_interval);
  f("val_fraction", c.val_fraction);
  f("divergence_factor", c.divergence_factor);
  f("divergence_patience", c.divergence_patience);
}

/// Ordered key/value pairs as they appear in config text.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

template <class Config>
KeyValues to_key_values(const Config& config) {
  KeyValues out;
  Config copy = config;
  visit_fields(copy, [&](const char* key, auto& value) {
    out.emplace_back(key, detail::format_value(value));
  });
  return out;
}

/// Sets `key` if the config has it; returns false for foreign keys.
template <class Config>
bool try_set(Config& config, std::string_view key, std::string_view value) {
  bool found = false;
  visit_fields(config, [&](const char* k, auto& field) {
    if (!found && key == k) {
      detail::parse_value(key, detail::trim(value), field);
      found = true;
    }
  });
  return found;
}

/// Parses `key=value` lines. Blank lines and lines starting with '#' are
/// skipped. Duplicate keys are rejected.
inline KeyValues parse_key_values(std::string_view text) {
  KeyValues out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = detail::trim(line);
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
    }
    std::string key(detail::trim(line.substr(0, eq)));
    std::string value(detail::trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    for (const auto& kv : out) {
      if (kv.first == key) throw ConfigError("duplicate config key '" + key + "'");
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline std::string format_key_values(const KeyValues& kvs) {
  std::string out;
  for (const auto& [k, v] : kvs) out += k + "=" + v + "\n";
  return out;
}

/// Model plus training settings, the unit a run is configured by.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  void set(std::string_view key, std::string_view value) {
    if (try_set(model, key, value)) return;
    if (try_set(train, key, value)) return;
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }

  void apply(const KeyValues& kvs) {
    for (const auto& [k, v] : kvs) set(k, v);
  }

  KeyValues key_values() const {
    KeyValues out = to_key_values(model);
    for (auto& kv : to_key_values(train)) out.push_back(std::move(kv));
    return out;
  }

  void validate() const {
    model.validate();
    train.validate();
  }
};

/// Keys whose values differ between two configs.
inline std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b) {
  const auto ka = a.key_values();
  const auto kb = b.key_values();
  std::vector<std::string> diff;
  for (std::size_t i = 0; i < ka.size(); ++i) {
    if (ka[i].second != kb[i].second) diff.push_back(ka[i].first);
  }
  return diff;
}

}  // namespace ternarylm
