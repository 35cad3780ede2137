#include <gtest/gtest.h>

#include <string>

#include "ternarylm/config.hpp"
#include "ternarylm/storage.hpp"
#include "ternarylm/vocab.hpp"

using namespace ternarylm;

TEST(Config, DefaultsAreFullSize) {
  RunConfig c;
  EXPECT_EQ(c.model.n_layers, 12u);
  EXPECT_EQ(c.model.d_model, 768u);
  EXPECT_EQ(c.model.n_heads, 12u);
  EXPECT_EQ(c.model.d_intermediate, 2048u);
  EXPECT_EQ(c.model.context_len, 512u);
  EXPECT_EQ(c.model.vocab_size, 30522u);
  EXPECT_DOUBLE_EQ(c.train.peak_lr, 1e-3);
  EXPECT_DOUBLE_EQ(c.train.beta2, 0.95);
  EXPECT_DOUBLE_EQ(c.train.weight_decay, 1e-5);
  EXPECT_DOUBLE_EQ(c.train.label_smoothing, 0.1);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, TextRoundTrip) {
  RunConfig a;
  a.set("d_model", "96");
  a.set("norm", "layernorm");
  a.set("peak_lr", "0.00125");
  a.set("binary_mode", "true");
  a.set("rope_theta", "500000");
  const std::string text = format_key_values(a.key_values());
  RunConfig b;
  b.apply(parse_key_values(text));
  EXPECT_TRUE(config_diff(a, b).empty());
  EXPECT_EQ(format_key_values(b.key_values()), text);
  EXPECT_EQ(config_diff(RunConfig{}, a),
            (std::vector<std::string>{"d_model", "rope_theta", "binary_mode", "norm", "peak_lr"}));
}

TEST(Config, ParserSkipsCommentsAndTrims) {
  const auto kv = parse_key_values("# comment\n\n  d_model = 32 \r\nquantize=false\n");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"d_model", "32"}));
  RunConfig c;
  c.apply(kv);
  EXPECT_EQ(c.model.d_model, 32u);
  EXPECT_FALSE(c.model.quantize);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_key_values("a=1\na=2\n"), ConfigError);
  EXPECT_THROW(parse_key_values("no equals sign\n"), ConfigError);
  EXPECT_THROW(parse_key_values("=3\n"), ConfigError);
  RunConfig c;
  EXPECT_THROW(c.set("nope", "1"), ConfigError);
  EXPECT_THROW(c.set("d_model", "-4"), ConfigError);
  EXPECT_THROW(c.set("d_model", "12x"), ConfigError);
  EXPECT_THROW(c.set("peak_lr", "fast"), ConfigError);
  EXPECT_THROW(c.set("quantize", "yes"), ConfigError);
  EXPECT_THROW(c.set("norm", "batchnorm"), ConfigError);
  c.set("label_smoothing", "1");
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.set("val_fraction", "1");
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.set("batch_size", "0");
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Vocab, SpecialsThenSortedBytes) {
  const Vocab v = Vocab::from_corpus("cabbage");
  EXPECT_EQ(v.size(), 3u + 5u);
  EXPECT_EQ(v.id('a'), 3);
  EXPECT_EQ(v.id('b'), 4);
  EXPECT_EQ(v.id('g'), 7);
  EXPECT_EQ(v.id('z'), Vocab::unk_id);
  const auto ids = v.encode("bag");
  EXPECT_EQ(ids, (std::vector<std::int32_t>{4, 3, 7}));
  std::vector<std::int32_t> with_specials{Vocab::pad_id, 4, Vocab::eot_id, 3, Vocab::unk_id, 7, 99};
  EXPECT_EQ(v.decode(with_specials), "bag");
}

TEST(Vocab, MissingCharactersAreListed) {
  const Vocab v = Vocab::from_corpus("abc");
  try {
    v.encode("abxzx\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("x z 0x0a"), std::string::npos) << msg;
  }
}

TEST(Vocab, HexRoundTrip) {
  const Vocab v = Vocab::from_corpus(std::string("hello\n\xff", 7));
  EXPECT_EQ(v.to_hex(), "0a65686c6fff");
  const Vocab w = Vocab::from_hex(v.to_hex());
  EXPECT_EQ(w.size(), v.size());
  EXPECT_EQ(w.encode("hole"), v.encode("hole"));
  EXPECT_THROW(Vocab::from_hex("abc"), ConfigError);
  EXPECT_THROW(Vocab::from_hex("zz"), ConfigError);
  EXPECT_THROW(Vocab::from_hex("6161"), ConfigError);
}

TEST(Storage, FullSizeConfigArithmetic) {
  const ModelConfig c;
  const std::uint64_t d = 768, f = 2048, v = 30522, L = 12;
  const std::uint64_t embed = 2 * v * d;
  const std::uint64_t per_block_ternary = 4 * d * d + 2 * d * f;
  const std::uint64_t norms = (2 * L + 1) * d;
  const auto r = storage_report(c);
  EXPECT_EQ(r.params, embed + L * per_block_ternary + norms);
  EXPECT_EQ(r.ternary_params, L * per_block_ternary);
  const std::uint64_t packed_block = 4 * ((d * d + 3) / 4 + 4) + 2 * ((d * f + 3) / 4 + 4);
  EXPECT_EQ(r.bytes_packed, L * packed_block + 4 * (embed + norms));
  EXPECT_GE(r.ternary_ratio(), 15.9);
  // fp32 embeddings and output head bound the whole-model ratio well below
  // the per-layer one.
  EXPECT_NEAR(r.ratio(), 2.2136, 1e-3);
}
