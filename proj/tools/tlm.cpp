// tlm: command-line front end for training, evaluating, sampling from and
// analyzing ternary language models.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "ternarylm.hpp"

namespace fs = std::filesystem;
using namespace ternarylm;
using nlohmann::json;

namespace {

constexpr int kExitError = 1;
constexpr int kExitMissingFile = 2;
constexpr int kExitDiverged = 3;

std::shared_ptr<spdlog::logger> logger;

void setup_logging() {
  logger = spdlog::stderr_color_mt("tlm");
  logger->set_pattern("[%l] %v");
  logger->set_level(spdlog::level::info);
  if (const char* env = std::getenv("TLM_LOG_LEVEL")) {
    const auto level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string(env) != "off") {
      logger->warn("unknown TLM_LOG_LEVEL '{}', using info", env);
    } else {
      logger->set_level(level);
    }
  }
}

/// Exclusive claim on an output directory for the lifetime of a command.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".tlm.lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw Error("output directory '" + dir.string() + "' is in use (remove " + path_.string() + " if stale)");
    std::fclose(f);
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw IoError(std::string("no ") + what + " given");
  if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " '" + path + "' not found");
}

struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::size_t> seed;
};

void add_config_args(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.config_path, "key=value config file (defaults: full-size reference settings)");
  cmd->add_option("--set", a.sets, "override one config key, as key=value (repeatable)");
  cmd->add_option("--seed", a.seed, "seed for every random stream (overrides the config)");
}

RunConfig resolve_config(const ConfigArgs& a) {
  RunConfig cfg;
  if (!a.config_path.empty()) {
    require_file(a.config_path, "config file");
    cfg.apply(parse_key_values(read_text_file(a.config_path)));
  }
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (a.seed) cfg.train.seed = *a.seed;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

LoadedCheckpoint<float> load_model(const std::string& path) {
  require_file(path, "checkpoint");
  return load_checkpoint<float>(path);
}

const Vocab& require_vocab(const LoadedCheckpoint<float>& ck) {
  if (!ck.vocab) throw CheckpointError("checkpoint carries no vocabulary");
  return *ck.vocab;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  ConfigArgs config;
  std::optional<double> lr;
  std::string corpus;
  std::string out = "run";
};

int cmd_train(const TrainArgs& a) {
  require_file(a.corpus, "corpus");
  RunConfig cfg = resolve_config(a.config);
  if (a.lr) cfg.train.peak_lr = *a.lr;
  const fs::path out(a.out);
  OutputLock lock(out);

  const std::string text = read_text_file(a.corpus);
  const Vocab vocab = Vocab::from_corpus(text);
  if (cfg.model.vocab_size != vocab.size()) {
    logger->info("vocab_size set to {} from the corpus alphabet", vocab.size());
    cfg.model.vocab_size = vocab.size();
  }
  cfg.validate();
  const auto tokens = vocab.encode(text);
  const auto [train_tokens, val_tokens] = split_stream(tokens, cfg.train.val_fraction);

  std::string manifest = "# tlm run manifest\n";
  manifest += "tool_version=" + std::string(kVersion) + "\n";
  manifest += "corpus_path=" + fs::absolute(a.corpus).string() + "\n";
  manifest += "corpus_fnv1a64=" + hex64(fnv1a64(text)) + "\n";
  manifest += "corpus_bytes=" + std::to_string(text.size()) + "\n";
  manifest += "train_tokens=" + std::to_string(train_tokens.size()) + "\n";
  manifest += "val_tokens=" + std::to_string(val_tokens.size()) + "\n";
  manifest += "out_dir=" + fs::absolute(out).string() + "\n";
  manifest += "vocab=" + vocab.to_hex() + "\n";
  manifest += format_key_values(cfg.key_values());
  write_text(out / "manifest.txt", manifest);

  std::ofstream step_log(out / "train_log.csv", std::ios::trunc);
  step_log << "step,lr,loss,grad_norm\n";
  std::ofstream val_log(out / "val_log.csv", std::ios::trunc);
  val_log << "epoch,train_loss,val_nll,val_ppl\n";
  if (!step_log || !val_log) throw IoError("cannot write logs under '" + out.string() + "'");

  LanguageModel<float> model(cfg.model, cfg.train.seed);
  logger->info("model: {} parameters, {} ternary layers; {} train / {} val tokens", model.parameter_count(),
               model.quantized_layers().size(), train_tokens.size(), val_tokens.size());

  TrainHooks<float> hooks;
  hooks.on_step = [&](const StepRecord& r) {
    step_log << r.step << ',' << fmt_double(r.lr) << ',' << fmt_double(r.loss) << ',' << fmt_double(r.grad_norm)
             << '\n';
    step_log.flush();
    if (r.step % 50 == 0) logger->debug("step {} lr {:.3g} loss {:.4f}", r.step, r.lr, r.loss);
  };
  hooks.on_epoch = [&](const EpochRecord& e) {
    val_log << e.epoch << ',' << fmt_double(e.train_loss) << ',' << fmt_double(e.val_nll) << ','
            << fmt_double(e.val_ppl) << '\n';
    val_log.flush();
    logger->info("epoch {}: train loss {:.4f}, val ppl {:.3f}", e.epoch, e.train_loss, e.val_ppl);
  };
  hooks.on_checkpoint = [&](std::size_t step, LanguageModel<float>& m) {
    save_checkpoint(m, out / ("checkpoint_step" + std::to_string(step) + ".tlm"), cfg, vocab, false);
  };

  const TrainResult result = train(model, train_tokens, val_tokens, cfg.train, hooks);

  std::string qs = std::string("epoch,") + QuantStats::csv_header + "\n";
  for (const auto& e : result.quant_stats)
    for (const auto& s : e.layers) qs += std::to_string(e.epoch) + "," + s.csv_row() + "\n";
  write_text(out / "quant_stats.csv", qs);
  std::string hist = std::string(LayerHistogram::csv_header) + "\n";
  for (const auto& h : result.histograms) hist += h.csv_rows();
  write_text(out / "histograms.csv", hist);

  if (result.status == TrainStatus::diverged) {
    logger->error("training aborted: {}", result.message);
    return kExitDiverged;
  }
  save_checkpoint(model, out / "checkpoint.tlm", cfg, vocab, false);
  logger->info("finished {} steps; checkpoint written to {}", result.steps_done, (out / "checkpoint.tlm").string());
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string corpus;
  std::string out;
  std::string split = "all";
  std::size_t window = 0;
  std::string dump_nll;
};

int cmd_eval(const EvalArgs& a) {
  require_file(a.corpus, "corpus");
  auto ck = load_model(a.checkpoint);
  const Vocab& vocab = require_vocab(ck);
  const std::string text = read_text_file(a.corpus);
  const auto tokens = vocab.encode(text);
  std::span<const std::int32_t> stream(tokens);
  if (a.split == "val") {
    stream = split_stream(tokens, ck.config.train.val_fraction).second;
  } else if (a.split == "train") {
    stream = split_stream(tokens, ck.config.train.val_fraction).first;
  }
  const std::size_t window = a.window ? a.window : ck.model.config().context_len;
  const auto res = perplexity(ck.model, stream, window, !a.dump_nll.empty());
  std::printf("val_ppl=%.9g\n", res.ppl);

  if (!a.dump_nll.empty()) {
    std::string dump;
    char buf[64];
    for (double v : res.token_nll) {
      std::snprintf(buf, sizeof(buf), "%.17g\n", v);
      dump += buf;
    }
    write_text(a.dump_nll, dump);
  }
  const fs::path out = a.out.empty() ? fs::path(a.checkpoint).parent_path() : fs::path(a.out);
  std::optional<OutputLock> lock;
  if (!a.out.empty()) lock.emplace(out);
  const json j = {{"checkpoint", a.checkpoint}, {"corpus", a.corpus},   {"split", a.split},
                  {"window", window},           {"tokens", res.count},  {"mean_nll", res.mean_nll},
                  {"val_ppl", res.ppl},         {"packed", ck.packed}};
  write_text(out / "eval.json", j.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::string checkpoint;
  std::string prompt;
  std::size_t max_new = 200;
  double top_p = 0.9;
  double temperature = 0.8;
  std::uint64_t seed = 0;
  std::string trace;
};

int cmd_generate(const GenerateArgs& a) {
  auto ck = load_model(a.checkpoint);
  const Vocab& vocab = require_vocab(ck);
  const auto prompt = vocab.encode(a.prompt);
  GenerateOptions opts;
  opts.max_new = a.max_new;
  opts.top_p = a.top_p;
  opts.temperature = a.temperature;
  opts.seed = a.seed;
  const auto res = generate(ck.model, prompt, opts, !a.trace.empty());
  std::cout << vocab.decode(res.tokens) << '\n';
  if (!a.trace.empty()) {
    std::string lines;
    for (const auto& s : res.trace) {
      lines += json{{"position", s.position}, {"token", s.token}, {"nucleus", s.nucleus}, {"probs", s.probs}}.dump();
      lines += '\n';
    }
    write_text(a.trace, lines);
  }
  return 0;
}

// ---------------------------------------------------------------- finetune

struct FinetuneArgs {
  std::string checkpoint;
  std::string data;
  std::size_t toy = 0;
  double eval_fraction = 0.25;
  std::string out = "finetune";
  FinetuneConfig cfg;
};

std::vector<std::pair<std::string, std::int32_t>> read_labeled_tsv(const std::string& path) {
  require_file(path, "labeled data");
  const std::string text = read_text_file(path);
  std::vector<std::pair<std::string, std::int32_t>> out;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ConfigError(path + ":" + std::to_string(line_no) + ": expected label<TAB>text");
    out.emplace_back(line.substr(tab + 1), std::stoi(line.substr(0, tab)));
  }
  return out;
}

int cmd_finetune(FinetuneArgs a) {
  auto ck = load_model(a.checkpoint);
  const Vocab& vocab = require_vocab(ck);
  OutputLock lock(a.out);
  auto texts = a.toy ? toy_classification_texts(a.toy, a.cfg.seed) : read_labeled_tsv(a.data);
  if (texts.empty()) throw ConfigError("finetune: empty dataset");
  Rng rng(derive_seed(a.cfg.seed, 0x5b17));
  rng.shuffle(std::span(texts));
  const auto n_eval = static_cast<std::size_t>(static_cast<double>(texts.size()) * a.eval_fraction);
  const auto examples = encode_examples(vocab, texts);
  std::span<const LabeledExample> all(examples);
  const auto train_set = all.first(examples.size() - n_eval);
  const auto eval_set = all.subspan(examples.size() - n_eval);
  const auto res = finetune_classifier(ck.model, train_set, eval_set, a.cfg);
  for (const auto& w : res.eval_metrics.warnings) logger->warn("{}", w);
  std::printf("accuracy=%.6f macro_f1=%.6f\n", res.eval_metrics.accuracy, res.eval_metrics.macro_f1);
  const json j = {{"train_examples", train_set.size()},
                  {"eval_examples", eval_set.size()},
                  {"train_accuracy", res.train_metrics.accuracy},
                  {"accuracy", res.eval_metrics.accuracy},
                  {"macro_f1", res.eval_metrics.macro_f1},
                  {"per_class_f1", res.eval_metrics.per_class_f1},
                  {"warnings", res.eval_metrics.warnings},
                  {"epoch_loss", res.epoch_loss}};
  write_text(fs::path(a.out) / "finetune.json", j.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeArgs {
  std::string checkpoint;
  ConfigArgs config;
  std::string out = "analysis";
  bool embedding_probe = false;
  std::size_t epoch_tag = 0;
};

int cmd_analyze(const AnalyzeArgs& a) {
  std::optional<LoadedCheckpoint<float>> ck;
  std::optional<LanguageModel<float>> fresh;
  LanguageModel<float>* model = nullptr;
  if (!a.checkpoint.empty()) {
    ck.emplace(load_model(a.checkpoint));
    model = &ck->model;
  } else {
    const RunConfig cfg = resolve_config(a.config);
    cfg.validate();
    fresh.emplace(cfg.model, cfg.train.seed);
    model = &*fresh;
  }
  const fs::path out(a.out);
  OutputLock lock(out);
  const auto prof = sparsity_profile(*model, a.embedding_probe);
  write_text(out / "sparsity_layers.csv", prof.layers_csv());
  write_text(out / "sparsity_blocks.csv", prof.blocks_csv());
  std::string hist = std::string(LayerHistogram::csv_header) + "\n";
  std::string tri = "layer,trimodality\n";
  for (auto* layer : model->quantized_layers()) {
    const auto h = weight_histogram(*layer, a.epoch_tag);
    hist += h.csv_rows();
    tri += layer->name() + "," + fmt_double(trimodality(h)) + "\n";
  }
  write_text(out / "histograms.csv", hist);
  write_text(out / "trimodality.csv", tri);
  const auto storage = storage_report(model->config());
  write_text(out / "storage.csv", storage.csv());
  std::cout << prof.layers_csv();
  return 0;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  ConfigArgs config;
  std::string corpus;
  std::string out = "ablation";
  std::vector<std::string> only;
};

int cmd_ablate(const AblateArgs& a) {
  require_file(a.corpus, "corpus");
  RunConfig base = resolve_config(a.config);
  const fs::path out(a.out);
  OutputLock lock(out);
  const std::string text = read_text_file(a.corpus);
  const Vocab vocab = Vocab::from_corpus(text);
  base.model.vocab_size = vocab.size();
  base.validate();
  const auto tokens = vocab.encode(text);
  const auto [train_tokens, val_tokens] = split_stream(tokens, base.train.val_fraction);
  std::vector<AblationResult> results;
  for (const auto& v : ablation_variants(base)) {
    if (!a.only.empty() && std::find(a.only.begin(), a.only.end(), v.name) == a.only.end()) continue;
    logger->info("ablation '{}'", v.name);
    results.push_back(run_one_ablation<float>(v, base, train_tokens, val_tokens));
    const auto& r = results.back();
    if (r.status == TrainStatus::diverged) logger->warn("'{}' diverged: {}", r.name, r.message);
    write_text(out / "ablation.csv", ablation_csv(results));
    write_text(out / "ablation_curves.csv", ablation_curves_csv(results));
  }
  std::cout << ablation_csv(results);
  return 0;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  ConfigArgs config;
  std::string out = "bench";
  std::string name = "custom";
  BenchOptions opts;
};

int cmd_bench(BenchArgs a) {
  const RunConfig cfg = resolve_config(a.config);
  cfg.validate();
  a.opts.seed = cfg.train.seed;
  const fs::path out(a.out);
  OutputLock lock(out);
  const auto results = efficiency_bench<float>(cfg.model, a.name, a.opts);
  const json j = bench_json(results);
  write_text(out / "bench.json", j.dump(2) + "\n");
  for (const auto& r : results) {
    std::printf("%-15s median %.4f ms/token, IQR %.4f ms, weights %llu bytes\n", r.path.c_str(),
                r.median_ms_per_token, r.iqr_ms, static_cast<unsigned long long>(r.weight_bytes));
  }
  std::cout << storage_report(cfg.model).summary();
  return 0;
}

// ---------------------------------------------------------------- pack

struct PackArgs {
  std::string checkpoint;
  std::string out = "packed";
};

int cmd_pack(const PackArgs& a) {
  auto ck = load_model(a.checkpoint);
  if (ck.packed) throw CheckpointError("'" + a.checkpoint + "' is already packed");
  const fs::path out(a.out);
  OutputLock lock(out);
  save_checkpoint(ck.model, out / "checkpoint.tlm", ck.config, ck.vocab, true);
  const auto report = storage_report(ck.model.config());
  write_text(out / "storage.csv", report.csv());
  std::cout << report.summary();
  std::printf("packed checkpoint: %s (%llu bytes)\n", (out / "checkpoint.tlm").c_str(),
              static_cast<unsigned long long>(fs::file_size(out / "checkpoint.tlm")));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Ternary-weight transformer language models: train, evaluate, sample, analyze."};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model on a text corpus");
  add_config_args(train_cmd, train_args.config);
  train_cmd->add_option("--corpus", train_args.corpus, "UTF-8 text corpus")->required();
  train_cmd->add_option("--out", train_args.out, "output directory")->capture_default_str();
  train_cmd->add_option("--lr", train_args.lr, "peak learning rate [default: 0.001]");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "perplexity of a checkpoint on a corpus");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--corpus", eval_args.corpus, "UTF-8 text corpus")->required();
  eval_cmd->add_option("--out", eval_args.out, "directory for eval.json (default: the checkpoint's)");
  eval_cmd->add_option("--split", eval_args.split, "all, train or val")
      ->check(CLI::IsMember({"all", "train", "val"}))
      ->capture_default_str();
  eval_cmd->add_option("--window", eval_args.window, "tokens per evaluation window (0: context_len)")
      ->capture_default_str();
  eval_cmd->add_option("--dump-nll", eval_args.dump_nll, "write each token's NLL to this file");

  GenerateArgs gen_args;
  auto* gen_cmd = app.add_subcommand("generate", "sample text with nucleus sampling");
  gen_cmd->add_option("--checkpoint", gen_args.checkpoint, "checkpoint file")->required();
  gen_cmd->add_option("--prompt", gen_args.prompt, "prompt text")->required();
  gen_cmd->add_option("--max-new", gen_args.max_new, "tokens to generate")->capture_default_str();
  gen_cmd->add_option("--p", gen_args.top_p, "nucleus mass")->capture_default_str();
  gen_cmd->add_option("--temp", gen_args.temperature, "sampling temperature")->capture_default_str();
  gen_cmd->add_option("--seed", gen_args.seed, "sampling seed")->capture_default_str();
  gen_cmd->add_option("--trace", gen_args.trace, "write per-step nucleus sets and distributions (JSON lines)");

  FinetuneArgs ft_args;
  auto* ft_cmd = app.add_subcommand("finetune", "train a classifier head on a frozen backbone");
  ft_cmd->add_option("--checkpoint", ft_args.checkpoint, "checkpoint file")->required();
  auto* data_opt = ft_cmd->add_option("--data", ft_args.data, "labeled examples, one label<TAB>text per line");
  auto* toy_opt = ft_cmd->add_option("--toy", ft_args.toy, "use the built-in two-pattern task with N examples per class");
  data_opt->excludes(toy_opt);
  ft_cmd->add_option("--eval-fraction", ft_args.eval_fraction, "held-out fraction")->capture_default_str();
  ft_cmd->add_option("--epochs", ft_args.cfg.epochs, "head training epochs")->capture_default_str();
  ft_cmd->add_option("--lr", ft_args.cfg.lr, "head learning rate")->capture_default_str();
  ft_cmd->add_option("--batch-size", ft_args.cfg.batch_size, "head batch size")->capture_default_str();
  ft_cmd->add_option("--hidden", ft_args.cfg.hidden, "head hidden width (0: d_model)")->capture_default_str();
  ft_cmd->add_option("--seed", ft_args.cfg.seed, "seed")->capture_default_str();
  ft_cmd->add_option("--out", ft_args.out, "output directory")->capture_default_str();

  AnalyzeArgs an_args;
  auto* an_cmd = app.add_subcommand("analyze", "sparsity profile, weight histograms and storage report");
  an_cmd->add_option("--checkpoint", an_args.checkpoint, "checkpoint file (omit to analyze a fresh init)");
  add_config_args(an_cmd, an_args.config);
  an_cmd->add_option("--out", an_args.out, "output directory")->capture_default_str();
  an_cmd->add_flag("--embedding-probe", an_args.embedding_probe, "also report a what-if ternary embedding");
  an_cmd->add_option("--epoch-tag", an_args.epoch_tag, "epoch value written to histograms.csv")
      ->capture_default_str();

  AblateArgs ab_args;
  auto* ab_cmd = app.add_subcommand("ablate", "train the full config and its single-factor variants");
  add_config_args(ab_cmd, ab_args.config);
  ab_cmd->add_option("--corpus", ab_args.corpus, "UTF-8 text corpus")->required();
  ab_cmd->add_option("--out", ab_args.out, "output directory")->capture_default_str();
  ab_cmd->add_option("--only", ab_args.only, "run only these variants");

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "dense versus packed forward latency");
  add_config_args(bench_cmd, bench_args.config);
  bench_cmd->add_option("--repeats", bench_args.opts.repeats, "timed forwards per path (>= 10)")
      ->capture_default_str();
  bench_cmd->add_option("--seq-len", bench_args.opts.seq_len, "tokens per forward, batch 1")->capture_default_str();
  bench_cmd->add_option("--name", bench_args.name, "label for the config in bench.json")->capture_default_str();
  bench_cmd->add_option("--out", bench_args.out, "output directory")->capture_default_str();

  PackArgs pack_args;
  auto* pack_cmd = app.add_subcommand("pack", "convert an fp32 checkpoint to packed ternary form");
  pack_cmd->add_option("--checkpoint", pack_args.checkpoint, "fp32 checkpoint file")->required();
  pack_cmd->add_option("--out", pack_args.out, "output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*eval_cmd) return cmd_eval(eval_args);
    if (*gen_cmd) return cmd_generate(gen_args);
    if (*ft_cmd) {
      if (ft_args.data.empty() && ft_args.toy == 0) throw ConfigError("finetune needs --data or --toy");
      return cmd_finetune(ft_args);
    }
    if (*an_cmd) return cmd_analyze(an_args);
    if (*ab_cmd) return cmd_ablate(ab_args);
    if (*bench_cmd) return cmd_bench(bench_args);
    if (*pack_cmd) return cmd_pack(pack_args);
  } catch (const IoError& e) {
    logger->error("{}", e.what());
    return kExitMissingFile;
  } catch (const std::exception& e) {
    logger->error("{}", e.what());
    return kExitError;
  }
  return kExitError;
}
