// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance [--only NAME]... [--work DIR]

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ternarylm.hpp"

namespace fs = std::filesystem;
using namespace ternarylm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_work;

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

void note(const std::string& s) { std::cerr << "  " << s << std::endl; }

ModelConfig desk_model(std::size_t vocab) {
  ModelConfig c;
  c.n_layers = 4;
  c.d_model = 128;
  c.n_heads = 4;
  c.d_intermediate = 342;
  c.context_len = 64;
  c.vocab_size = vocab;
  return c;
}

// ---------------------------------------------------------------- 1

Outcome gradient_correctness() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_intermediate = 32;
  c.vocab_size = 11;
  c.context_len = 8;
  Rng rng(101);
  std::vector<std::int32_t> ids(16), targets(16);
  for (auto& v : ids) v = static_cast<std::int32_t>(rng.index(11));
  for (auto& v : targets) v = static_cast<std::int32_t>(rng.index(11));

  // Straight-through gradients from the live quantizer.
  LanguageModel<double> live(c, 7);
  live.zero_grad();
  backward(lm_loss(live.forward(ids, 2), targets, 0.1));

  // Same weights with signs frozen: the surrogate is differentiable, so its
  // gradients can be checked numerically.
  LanguageModel<double> frozen(c, 7);
  frozen.freeze_signs();
  std::vector<std::pair<std::string, Tensor<double>>> params;
  for (auto& p : frozen.trainable_parameters()) params.emplace_back(p.name, p.tensor);
  const auto rep = finite_diff_check<double>([&] { return lm_loss(frozen.forward(ids, 2), targets, 0.1); }, params);

  double worst = 0;
  std::string worst_name;
  std::size_t alphas = 0;
  for (const auto& e : rep.entries) {
    if (e.max_rel_error > worst) {
      worst = e.max_rel_error;
      worst_name = e.name;
    }
    alphas += e.name.ends_with(".alpha");
  }

  // Live STE gradients must equal the verified surrogate gradients.
  double ste_gap = 0;
  auto lp = live.trainable_parameters();
  auto fp = frozen.trainable_parameters();
  for (std::size_t i = 0; i < lp.size(); ++i) {
    const auto a = lp[i].tensor.grad();
    const auto b = fp[i].tensor.grad();
    for (std::size_t k = 0; k < a.size(); ++k)
      ste_gap = std::max(ste_gap, std::abs(a[k] - b[k]) / (std::abs(b[k]) + 1e-6));
  }
  // And each layer's alpha gradient equals sum(g * S) from ste_backward on
  // the upstream gradient recovered from the weight gradient (g = grad_W / alpha).
  double alpha_gap = 0;
  for (auto* layer : live.quantized_layers()) {
    const double alpha = layer->alpha()[0];
    std::vector<double> up(layer->weight().grad().begin(), layer->weight().grad().end());
    for (auto& g : up) g /= alpha;
    const auto ste = layer->ste_backward(up);
    alpha_gap = std::max(alpha_gap, std::abs(ste.alpha - layer->alpha().grad()[0]) / (std::abs(ste.alpha) + 1e-6));
  }

  Outcome o;
  o.pass = worst < 1e-4 && ste_gap < 1e-10 && alpha_gap < 1e-8 && alphas == 12;
  o.detail = std::to_string(rep.entries.size()) + " tensors (" + std::to_string(alphas) +
             " alphas), max rel err " + fmt(worst) + " at " + worst_name + "; STE vs surrogate " + fmt(ste_gap) +
             "; ste_backward alpha " + fmt(alpha_gap);
  return o;
}

// ---------------------------------------------------------------- 2

Outcome init_sparsity() {
  const double analytic = std::erf(0.5 / std::sqrt(2.0));  // 2*Phi(0.5) - 1
  using Shape = std::pair<std::size_t, std::size_t>;
  const std::vector<Shape> shapes{{128, 128}, {342, 128}, {128, 342}, {768, 768}, {2048, 768}, {768, 2048}};
  std::size_t layers = 0;
  double worst = 0, lo = 1, hi = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (auto [out, in] : shapes) {
      Rng rng(derive_seed(seed, out * 7919 + in));
      TernaryLinear<float> layer("gauss", out, in, QuantOptions{});
      for (auto& v : layer.weight().data()) v = static_cast<float>(rng.normal() * 0.02);
      layer.init_alpha();
      layer.quantize();
      const double f = layer.stats().sparsity;
      worst = std::max(worst, std::abs(f - analytic));
      lo = std::min(lo, f);
      hi = std::max(hi, f);
      ++layers;
    }
  }
  // The model itself draws from a normal truncated at 3 sigma, which removes
  // tail mass and lowers the expected zero fraction slightly. Reported only.
  double model_zeros = 0, model_weights = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    LanguageModel<float> m(desk_model(64), seed);
    for (auto* layer : m.quantized_layers()) {
      layer->quantize();
      model_zeros += layer->stats().sparsity * static_cast<double>(layer->weight_count());
      model_weights += static_cast<double>(layer->weight_count());
    }
  }
  Outcome o;
  o.pass = worst <= 0.01;
  o.detail = std::to_string(layers) + " gaussian layers, zero fraction in [" + fmt(lo, 5) + ", " + fmt(hi, 5) +
             "], analytic " + fmt(analytic, 5) + ", max |dev| " + fmt(worst, 4) + "; truncated-init model " +
             fmt(model_zeros / model_weights, 5);
  return o;
}

// ---------------------------------------------------------------- 3

/// Character-unigram perplexity of the validation tail under add-one
/// smoothed training counts, over the same targets the model is scored on.
double unigram_perplexity(const std::string& train_text, const std::string& val_text) {
  std::map<unsigned char, double> counts;
  for (unsigned char c : train_text) counts[c] += 1;
  for (unsigned char c : val_text) counts.emplace(c, 0.0);
  const double total = static_cast<double>(train_text.size()) + static_cast<double>(counts.size());
  double nll = 0;
  for (std::size_t i = 1; i < val_text.size(); ++i)
    nll -= std::log((counts[static_cast<unsigned char>(val_text[i])] + 1.0) / total);
  return std::exp(nll / static_cast<double>(val_text.size() - 1));
}

Outcome training_stability() {
  const std::string text = synthetic_corpus(1'000'000, 3);
  const Vocab vocab = Vocab::from_corpus(text);
  const auto ids = vocab.encode(text);
  RunConfig cfg;
  cfg.model = desk_model(vocab.size());
  cfg.train.epochs = 5;
  cfg.train.batch_size = 16;
  cfg.train.seq_len = 64;
  cfg.train.warmup_steps = 200;
  cfg.train.peak_lr = 2e-3;
  cfg.train.seed = 3;
  const auto [train_ids, val_ids] = split_stream(ids, cfg.train.val_fraction);
  const std::size_t n_val = val_ids.size();
  const double unigram = unigram_perplexity(text.substr(0, text.size() - n_val), text.substr(text.size() - n_val));
  note("corpus " + std::to_string(text.size()) + " bytes, vocab " + std::to_string(vocab.size()) +
       ", unigram ppl " + fmt(unigram, 5));

  LanguageModel<float> model(cfg.model, cfg.train.seed);
  TrainHooks<float> hooks;
  hooks.record_histograms = false;
  hooks.on_epoch = [](const EpochRecord& e) {
    note("epoch " + std::to_string(e.epoch) + ": train loss " + fmt(e.train_loss, 5) + ", val ppl " +
         fmt(e.val_ppl, 5));
  };
  bool finite = true;
  hooks.on_step = [&](const StepRecord& r) { finite = finite && std::isfinite(r.loss); };
  const TrainResult res = train(model, train_ids, val_ids, cfg.train, hooks);

  bool decreasing = res.epochs.size() >= 5;
  std::string losses;
  for (std::size_t i = 0; i < res.epochs.size(); ++i) {
    if (i > 0 && !(res.epochs[i].train_loss < res.epochs[i - 1].train_loss)) decreasing = false;
    losses += (i ? " " : "") + fmt(res.epochs[i].train_loss, 5);
  }
  const double val_ppl = res.epochs.empty() ? NAN : res.epochs.back().val_ppl;
  Outcome o;
  o.pass = res.status == TrainStatus::completed && finite && decreasing && val_ppl < unigram;
  o.detail = std::to_string(res.steps_done) + " steps, epoch losses [" + losses + "], val ppl " + fmt(val_ppl, 5) +
             " vs unigram " + fmt(unigram, 5) + (res.status == TrainStatus::completed ? "" : ", " + res.message);
  return o;
}

// ---------------------------------------------------------------- 4

Outcome packed_equivalence() {
  const std::string text = synthetic_corpus(60'000, 4);
  const Vocab vocab = Vocab::from_corpus(text);
  const auto ids = vocab.encode(text);
  RunConfig cfg;
  cfg.model = desk_model(vocab.size());
  cfg.train.epochs = 1;
  cfg.train.total_steps = 40;
  cfg.train.batch_size = 16;
  cfg.train.seq_len = 64;
  cfg.train.warmup_steps = 10;
  cfg.train.seed = 4;
  LanguageModel<float> model(cfg.model, cfg.train.seed);
  TrainHooks<float> hooks;
  hooks.record_histograms = false;
  train(model, std::span<const std::int32_t>(ids), {}, cfg.train, hooks);

  Rng rng(44);
  double layer_gap = 0;
  std::size_t layers = 0;
  for (auto* layer : model.quantized_layers()) {
    std::vector<float> xv(9 * layer->in_dim());
    for (auto& v : xv) v = static_cast<float>(rng.normal());
    const Tensor<float> x({9, layer->in_dim()}, xv);
    NoGradGuard g;
    const auto dense = layer->forward(x);
    TernaryLinear<float> packed(layer->name(), layer->out_dim(), layer->in_dim(), QuantOptions{});
    packed.set_packed(layer->to_packed());
    const auto y = packed.forward(x);
    for (std::size_t i = 0; i < y.numel(); ++i) layer_gap = std::max(layer_gap, double(std::abs(y.data()[i] - dense.data()[i])));
    ++layers;
  }

  auto loaded = parse_checkpoint<float>(serialize_checkpoint(model, cfg, vocab, true));
  double logit_gap = 0;
  for (int p = 0; p < 10; ++p) {
    const std::size_t len = 8 + 6 * static_cast<std::size_t>(p);
    const std::size_t start = rng.index(ids.size() - len);
    const std::span<const std::int32_t> prompt(ids.data() + start, len);
    NoGradGuard g;
    const auto a = model.forward(prompt, 1);
    const auto b = loaded.model.forward(prompt, 1);
    for (std::size_t i = 0; i < a.numel(); ++i) logit_gap = std::max(logit_gap, double(std::abs(a.data()[i] - b.data()[i])));
  }
  Outcome o;
  o.pass = layers == 24 && layer_gap <= 1e-4 && logit_gap <= 1e-4;
  o.detail = std::to_string(layers) + " layers max |diff| " + fmt(layer_gap, 3) + "; 10 prompts logits max |diff| " +
             fmt(logit_gap, 3);
  return o;
}

// ---------------------------------------------------------------- 5

Outcome layer_compression() {
  const ModelConfig c;
  const auto r = storage_report(c);
  double worst = 1e300;
  for (const auto& l : r.layers)
    if (l.ternary) worst = std::min(worst, l.ratio());
  // Cross-check the accounting against real serialized layers.
  Rng rng(5);
  double wire_worst = 1e300;
  for (auto [out, in] : {std::pair<std::size_t, std::size_t>{768, 768}, {2048, 768}, {768, 2048}}) {
    TernaryLinear<float> layer("l", out, in, QuantOptions{});
    layer.init(rng);
    const auto bytes = layer.to_packed().serialize();
    // the wire form adds 8 bytes of shape the in-memory figure leaves out
    wire_worst = std::min(wire_worst, 4.0 * static_cast<double>(out * in) / static_cast<double>(bytes.size()));
  }
  Outcome o;
  o.pass = worst >= 14.0 && wire_worst >= 14.0;
  o.detail = "min per-layer ratio " + fmt(worst, 5) + "x over " + std::to_string(r.ternary_params) +
             " ternary params; serialized layers " + fmt(wire_worst, 5) + "x";
  return o;
}

Outcome model_compression() {
  const ModelConfig c;
  const auto r = storage_report(c);
  Outcome o;
  o.pass = r.ratio() >= 3.32;
  std::string sections;
  for (const auto& s : r.sections) sections += std::string(", ") + to_string(s.section) + " " + fmt(s.ratio(), 4) + "x";
  o.detail = "whole model " + fmt(r.ratio(), 5) + "x (" + std::to_string(r.bytes_fp32) + " -> " +
             std::to_string(r.bytes_packed) + " bytes), target 3.32x" + sections;
  return o;
}

// ---------------------------------------------------------------- 6

Outcome ablation_direction() {
  const std::string text = synthetic_corpus(300'000, 6);
  const Vocab vocab = Vocab::from_corpus(text);
  const auto ids = vocab.encode(text);
  RunConfig base;
  base.model = desk_model(vocab.size());
  base.train.epochs = 2;
  base.train.batch_size = 16;
  base.train.seq_len = 64;
  base.train.warmup_steps = 50;
  base.train.peak_lr = 2e-3;
  base.train.seed = 6;
  const auto [train_ids, val_ids] = split_stream(ids, base.train.val_fraction);
  std::map<std::string, AblationResult> results;
  for (const auto& v : ablation_variants(base)) {
    auto r = run_one_ablation<float>(v, base, train_ids, val_ids);
    note(v.name + ": val loss " + fmt(r.final_val_loss, 5) + ", val ppl " + fmt(r.final_val_ppl, 5) + ", zeros " +
         fmt(r.zero_fraction, 4) + (r.status == TrainStatus::completed ? "" : " (" + r.message + ")"));
    results.emplace(v.name, std::move(r));
  }
  const auto& full = results.at("full");
  const auto& qe = results.at("quantized_embeddings");
  std::string others;
  for (const auto& [name, r] : results) {
    if (name == "full" || name == "quantized_embeddings") continue;
    others += "; " + name + " " + fmt(r.final_val_loss, 5) + (r.final_val_loss > full.final_val_loss ? " (worse)" : " (not worse)");
  }
  Outcome o;
  o.pass = full.status == TrainStatus::completed && std::isfinite(full.final_val_loss) &&
           (qe.status == TrainStatus::diverged || qe.final_val_loss > full.final_val_loss);
  o.detail = "val loss full " + fmt(full.final_val_loss, 5) + " vs quantized_embeddings " + fmt(qe.final_val_loss, 5) +
             others;
  return o;
}

// ---------------------------------------------------------------- 7

int run(const std::string& cmd) {
  note("$ " + cmd);
  return std::system(cmd.c_str());
}

std::string read_or_empty(const fs::path& p) {
  try {
    return read_text_file(p);
  } catch (const IoError&) {
    return {};
  }
}

Outcome determinism() {
  const fs::path dir = g_work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_file_atomic(dir / "corpus.txt", synthetic_corpus(40'000, 7));
  const std::string tlm = TLM_BINARY;
  const std::string sets =
      " --set n_layers=2 --set d_model=32 --set n_heads=2 --set d_intermediate=64 --set context_len=32"
      " --set seq_len=32 --set batch_size=8 --set epochs=2 --set warmup_steps=20 --seed 11";
  bool ok = true;
  for (const char* run_name : {"a", "b"}) {
    ok &= run(tlm + " train --corpus " + (dir / "corpus.txt").string() + " --out " + (dir / run_name).string() + sets +
              " 2>/dev/null") == 0;
  }
  const std::string ck_a = read_or_empty(dir / "a" / "checkpoint.tlm");
  const std::string ck_b = read_or_empty(dir / "b" / "checkpoint.tlm");
  const bool same_ck = ok && !ck_a.empty() && ck_a == ck_b;

  for (const char* name : {"gen1", "gen2"}) {
    ok &= run(tlm + " generate --checkpoint " + (dir / "a" / "checkpoint.tlm").string() +
              " --prompt 'Lily saw a ' --max-new 120 --seed 5 > " + (dir / (std::string(name) + ".txt")).string() +
              " 2>/dev/null") == 0;
  }
  const std::string g1 = read_or_empty(dir / "gen1.txt");
  const std::string g2 = read_or_empty(dir / "gen2.txt");
  const bool same_gen = ok && !g1.empty() && g1 == g2;

  Outcome o;
  o.pass = same_ck && same_gen;
  o.detail = "checkpoints " + std::to_string(ck_a.size()) + " bytes " + (same_ck ? "identical" : "DIFFER") +
             "; generation " + std::to_string(g1.size()) + " bytes " + (same_gen ? "identical" : "DIFFER");
  return o;
}

// ---------------------------------------------------------------- 8

Outcome nucleus_sampling() {
  const std::vector<double> probs{0.5, 0.3, 0.15, 0.05};
  const std::size_t n = 100'000;
  Rng rng(8);
  std::vector<std::size_t> counts(4, 0);
  for (std::size_t i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_from_nucleus(probs, 0.9, rng).token)];
  const double mass = probs[0] + probs[1] + probs[2];
  bool pass = counts[3] == 0;
  double worst_z = 0;
  std::string freq;
  for (std::size_t k = 0; k < 3; ++k) {
    const double q = probs[k] / mass;
    const double sigma = std::sqrt(static_cast<double>(n) * q * (1 - q));
    const double z = std::abs(static_cast<double>(counts[k]) - static_cast<double>(n) * q) / sigma;
    worst_z = std::max(worst_z, z);
    pass = pass && z <= 3.0;
    freq += (k ? " " : "") + fmt(static_cast<double>(counts[k]) / static_cast<double>(n), 5) + "/" + fmt(q, 5);
  }
  Outcome o;
  o.pass = pass;
  o.detail = "observed/expected " + freq + ", max z " + fmt(worst_z, 3) + ", token 3 drawn " +
             std::to_string(counts[3]) + " times";
  return o;
}

// ---------------------------------------------------------------- 9

/// Full-precision transformer written directly against the tensor ops, with
/// its own parameters, initialization, schedule and optimizer.
struct PlainTransformer {
  struct Block {
    Tensor<float> attn_gain, wq, wk, wv, wo, mlp_gain, up, down;
  };
  ModelConfig c;
  Tensor<float> embed, final_gain, output;
  std::vector<Block> blocks;

  PlainTransformer(const ModelConfig& cfg, std::uint64_t seed) : c(cfg) {
    const std::size_t d = c.d_model, f = c.d_intermediate, v = c.vocab_size;
    Rng rng(seed);
    auto init = [&](std::size_t rows, std::size_t cols) {
      std::vector<float> w(rows * cols);
      for (auto& x : w) x = static_cast<float>(rng.truncated_normal(0.02));
      return Tensor<float>({rows, cols}, std::move(w), true);
    };
    auto ones = [&] { return Tensor<float>::full({d}, 1.0f, true); };
    embed = init(v, d);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      Block b;
      b.attn_gain = ones();
      b.wq = init(d, d);
      b.wk = init(d, d);
      b.wv = init(d, d);
      b.wo = init(d, d);
      b.mlp_gain = ones();
      b.up = init(f, d);
      b.down = init(d, f);
      blocks.push_back(std::move(b));
    }
    final_gain = ones();
    output = init(v, d);
  }

  /// (tensor, decay) in update order.
  std::vector<std::pair<Tensor<float>, bool>> params() {
    std::vector<std::pair<Tensor<float>, bool>> out{{embed, false}};
    for (auto& b : blocks) {
      out.emplace_back(b.attn_gain, false);
      for (auto* w : {&b.wq, &b.wk, &b.wv, &b.wo}) out.emplace_back(*w, true);
      out.emplace_back(b.mlp_gain, false);
      out.emplace_back(b.up, true);
      out.emplace_back(b.down, true);
    }
    out.emplace_back(final_gain, false);
    out.emplace_back(output, false);
    return out;
  }

  Tensor<float> forward(std::span<const std::int32_t> ids, std::size_t batch) {
    const std::size_t seq = ids.size() / batch;
    const float eps = static_cast<float>(c.rmsnorm_eps);
    Tensor<float> x = embedding(embed, ids);
    for (auto& b : blocks) {
      const auto h = rmsnorm(x, b.attn_gain, eps);
      const auto q = rope_heads(linear(h, b.wq), seq, c.n_heads, c.rope_theta);
      const auto k = rope_heads(linear(h, b.wk), seq, c.n_heads, c.rope_theta);
      const auto v = linear(h, b.wv);
      const auto a = silu(linear(causal_attention(q, k, v, batch, seq, c.n_heads), b.wo));
      const auto x1 = add(x, a);
      x = add(x1, linear(gelu(linear(rmsnorm(x1, b.mlp_gain, eps), b.up)), b.down));
    }
    return linear(rmsnorm(x, final_gain, eps), output);
  }
};

double plain_lr(std::size_t step, double peak, std::size_t warmup, std::size_t total) {
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Outcome quantize_off_equivalence() {
  const std::string text = synthetic_corpus(30'000, 9);
  const Vocab vocab = Vocab::from_corpus(text);
  const auto ids = vocab.encode(text);
  RunConfig cfg;
  cfg.model.n_layers = 2;
  cfg.model.d_model = 64;
  cfg.model.n_heads = 4;
  cfg.model.d_intermediate = 128;
  cfg.model.context_len = 32;
  cfg.model.vocab_size = vocab.size();
  cfg.model.quantize = false;
  cfg.train.total_steps = 50;
  cfg.train.batch_size = 8;
  cfg.train.seq_len = 32;
  cfg.train.warmup_steps = 10;
  cfg.train.seed = 9;
  const std::size_t steps = cfg.train.total_steps;

  LanguageModel<float> model(cfg.model, cfg.train.seed);
  std::vector<double> model_losses;
  TrainHooks<float> hooks;
  hooks.record_histograms = false;
  hooks.on_step = [&](const StepRecord& r) { model_losses.push_back(r.loss); };
  train(model, std::span<const std::int32_t>(ids), {}, cfg.train, hooks);

  PlainTransformer plain(cfg.model, cfg.train.seed);
  auto params = plain.params();
  std::vector<std::vector<double>> m, v;
  for (auto& [t, decay] : params) {
    m.emplace_back(t.numel(), 0.0);
    v.emplace_back(t.numel(), 0.0);
  }
  std::vector<double> plain_losses;
  const double b1 = 0.9, b2 = 0.95, eps = 1e-8, wd = 1e-5;
  std::size_t step = 0;
  for (std::size_t epoch = 1; step < steps; ++epoch) {
    for (const auto& batch : make_batches(ids, cfg.train.batch_size, cfg.train.seq_len, cfg.train.seed, epoch)) {
      if (step >= steps) break;
      ++step;
      for (auto& [t, decay] : params) t.zero_grad();
      const auto loss = smoothed_cross_entropy(plain.forward(batch.inputs, batch.sequences), batch.targets, 0.1f);
      plain_losses.push_back(static_cast<double>(loss.item()));
      backward(loss);
      double sq = 0;
      for (auto& [t, decay] : params)
        for (float g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
      const double norm = std::sqrt(sq);
      if (norm > 1.0) {
        const double s = 1.0 / norm;
        for (auto& [t, decay] : params)
          for (float& g : t.grad()) g = static_cast<float>(static_cast<double>(g) * s);
      }
      const double lr = plain_lr(step, cfg.train.peak_lr, cfg.train.warmup_steps, steps);
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [t, decay] = params[i];
        auto data = t.data();
        const auto grad = t.grad();
        const double shrink = decay ? 1.0 - lr * wd : 1.0;
        for (std::size_t j = 0; j < data.size(); ++j) {
          const double g = grad[j];
          m[i][j] = b1 * m[i][j] + (1.0 - b1) * g;
          v[i][j] = b2 * v[i][j] + (1.0 - b2) * g * g;
          const double mhat = m[i][j] / c1;
          const double vhat = v[i][j] / c2;
          double theta = static_cast<double>(data[j]) * shrink;
          theta -= lr * mhat / (std::sqrt(vhat) + eps);
          data[j] = static_cast<float>(theta);
        }
      }
    }
  }

  std::size_t loss_mismatch = 0;
  for (std::size_t i = 0; i < steps; ++i)
    if (i >= model_losses.size() || model_losses[i] != plain_losses[i]) {
      ++loss_mismatch;
    }
  std::size_t weight_mismatch = 0, weights = 0;
  auto mp = model.parameters();
  if (mp.size() != params.size()) return {false, "parameter lists differ in length"};
  for (std::size_t i = 0; i < mp.size(); ++i) {
    const auto a = mp[i].tensor.data();
    const auto b = params[i].first.data();
    if (a.size() != b.size()) return {false, "shape mismatch at " + mp[i].name};
    for (std::size_t k = 0; k < a.size(); ++k) {
      weight_mismatch += std::bit_cast<std::uint32_t>(a[k]) != std::bit_cast<std::uint32_t>(b[k]);
      ++weights;
    }
  }
  Outcome o;
  o.pass = model_losses.size() == steps && loss_mismatch == 0 && weight_mismatch == 0;
  o.detail = std::to_string(steps) + " steps, " + std::to_string(loss_mismatch) + " loss mismatches, " +
             std::to_string(weight_mismatch) + "/" + std::to_string(weights) + " weights differ; final loss " +
             fmt(plain_losses.back(), 7);
  return o;
}

// ---------------------------------------------------------------- 10

Outcome checkpoint_robustness() {
  RunConfig cfg;
  cfg.model.n_layers = 2;
  cfg.model.d_model = 16;
  cfg.model.n_heads = 2;
  cfg.model.d_intermediate = 24;
  cfg.model.vocab_size = 11;
  cfg.model.context_len = 8;
  LanguageModel<float> model(cfg.model, 10);
  const Vocab vocab = Vocab::from_corpus("abcdefgh");
  const std::vector<std::vector<std::uint8_t>> originals{serialize_checkpoint(model, cfg, vocab, false),
                                                         serialize_checkpoint(model, cfg, vocab, true)};
  Rng rng(1010);
  std::size_t clean_errors = 0, valid_loads = 0, bad = 0, resealed = 0;
  std::string first_bad;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto& good = originals[static_cast<std::size_t>(trial) % 2];
    const std::size_t header = read_checkpoint_header(good).header_size;
    auto b = good;
    const std::size_t kind = rng.index(4);
    if (kind == 0) {  // random bytes
      for (std::size_t k = 0, n = 1 + rng.index(4); k < n; ++k)
        b[rng.index(header)] = static_cast<std::uint8_t>(rng.index(256));
    } else if (kind == 1) {  // single bit flip
      b[rng.index(header)] ^= static_cast<std::uint8_t>(1u << rng.index(8));
    } else if (kind == 2) {  // truncate inside the header
      b.resize(rng.index(header));
    } else {  // saturate a 4- or 8-byte window
      const std::size_t at = rng.index(header - 8);
      for (std::size_t k = 0; k < (rng.index(2) ? 4u : 8u); ++k) b[at + k] = 0xff;
    }
    if (b == good) b[rng.index(header)] ^= 0x01;
    // Half the mutations recompute the header hash so the structural checks
    // are exercised, not only the checksum.
    const bool reseal = kind != 2 && rng.index(2) == 1;
    if (reseal) {
      const std::size_t hashed = header - 8;
      const std::uint64_t h = fnv1a64(std::span<const std::uint8_t>(b.data(), hashed));
      for (int i = 0; i < 8; ++i) b[hashed + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(h >> (8 * i));
      ++resealed;
    }
    try {
      auto loaded = parse_checkpoint<float>(b);
      // A re-sealed mutation may still describe a valid model (a changed
      // learning rate, say); it must then be complete and usable.
      const std::vector<std::int32_t> prompt{1, 2, 3};
      const auto logits = loaded.model.forward(prompt, 1);
      bool finite = true;
      for (float x : logits.data()) finite = finite && std::isfinite(x);
      if (reseal && finite) {
        ++valid_loads;
      } else {
        ++bad;
        if (first_bad.empty()) first_bad = "trial " + std::to_string(trial) + " loaded without error";
      }
    } catch (const CheckpointError&) {
      ++clean_errors;
    } catch (const std::exception& e) {
      ++bad;
      if (first_bad.empty()) first_bad = "trial " + std::to_string(trial) + ": " + e.what();
    }
  }
  Outcome o;
  o.pass = bad == 0 && clean_errors + valid_loads == 1000;
  o.detail = "1000 mutations (" + std::to_string(resealed) + " re-sealed): " + std::to_string(clean_errors) +
             " CheckpointError, " + std::to_string(valid_loads) + " still-valid loads, " + std::to_string(bad) +
             " bad" + (first_bad.empty() ? "" : " (" + first_bad + ")");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<std::string> only;
  std::string work = "acceptance_work";
  app.add_option("--only", only, "run only these criteria");
  app.add_option("--work", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);
  g_work = work;
  fs::create_directories(g_work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1_gradient_correctness", gradient_correctness},
      {"2_init_sparsity", init_sparsity},
      {"3_training_stability", training_stability},
      {"4_packed_equivalence", packed_equivalence},
      {"5a_layer_compression", layer_compression},
      {"5b_model_compression", model_compression},
      {"6_ablation_direction", ablation_direction},
      {"7_determinism", determinism},
      {"8_nucleus_sampling", nucleus_sampling},
      {"9_quantize_off_equivalence", quantize_off_equivalence},
      {"10_checkpoint_robustness", checkpoint_robustness},
  };
  for (const auto& name : only) {
    bool known = false;
    for (const auto& c : criteria) known |= c.first == name;
    if (!known) {
      std::cerr << "unknown criterion '" << name << "'\n";
      return 2;
    }
  }

  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << name << " (" << fmt(secs, 3) << " s): " << o.detail
              << std::endl;
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
