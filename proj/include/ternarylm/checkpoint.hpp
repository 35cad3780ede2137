#pragma once

// Checkpoint container, little-endian throughout:
//
//   "TLM1" | u32 version | u32 config_len | config text
//   | u32 entry_count | entries | u64 payload_hash | u64 header_hash | payload
//
//   entry: u16 name_len | name | u8 dtype | u8 rank | u64 dims[rank]
//          | u64 offset | u64 nbytes
//
// Offsets are absolute file positions. dtype 0 is raw fp32, dtype 1 is a
// packed ternary layer in its wire layout (rows, cols, alpha, codes).
// header_hash is FNV-1a over every byte before it; payload_hash covers the
// bytes after it.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ternarylm/config.hpp"
#include "ternarylm/io.hpp"
#include "ternarylm/model.hpp"
#include "ternarylm/packed.hpp"
#include "ternarylm/vocab.hpp"

namespace ternarylm {

inline constexpr char kCheckpointMagic[4] = {'T', 'L', 'M', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class TensorDtype : std::uint8_t { fp32 = 0, packed = 1 };

struct ManifestEntry {
  std::string name;
  TensorDtype dtype = TensorDtype::fp32;
  std::vector<std::uint64_t> shape;
  std::uint64_t offset = 0;
  std::uint64_t nbytes = 0;
};

struct CheckpointHeader {
  std::uint32_t version = 0;
  std::string config_text;
  std::vector<ManifestEntry> entries;
  std::uint64_t payload_hash = 0;
  std::uint64_t header_hash = 0;
  std::size_t header_size = 0;
};

namespace detail {

class ByteWriter {
 public:
  std::vector<std::uint8_t> bytes;

  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(std::span<const std::uint8_t> b) { bytes.insert(bytes.end(), b.begin(), b.end()); }
  void raw(std::string_view s) { bytes.insert(bytes.end(), s.begin(), s.end()); }
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (n > remaining()) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t uint(std::size_t width, const char* what) {
    auto s = take(width, what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
    return v;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_mul_overflow(a, b, &r)) throw CheckpointError("checkpoint shape overflows");
  return r;
}

struct ExpectedEntry {
  std::string name;
  TensorDtype dtype;
  std::vector<std::uint64_t> shape;

  std::uint64_t nbytes() const {
    if (dtype == TensorDtype::packed) {
      const std::uint64_t n = checked_mul(shape[0], shape[1]);
      return 12 + (n + 3) / 4;
    }
    std::uint64_t n = 1;
    for (auto d : shape) n = checked_mul(n, d);
    return checked_mul(n, 4);
  }
};

/// Number of manifest entries a config implies, without enumerating them.
inline std::uint64_t expected_entry_count(const ModelConfig& c, bool packed) {
  const std::uint64_t norm = c.norm == NormKind::layernorm ? 2 : 1;
  const std::uint64_t proj = (c.quantize && !packed) ? 2 : 1;
  const std::uint64_t edge = (c.quantize && c.quantize_embeddings && !packed) ? 2 : 1;
  return 2 * edge + norm + checked_mul(c.n_layers, 2 * norm + 6 * proj);
}

/// Entry list in parameter order. In packed form each ternary layer is one
/// "<layer>.packed" entry holding codes and alpha.
inline std::vector<ExpectedEntry> expected_entries(const ModelConfig& c, bool packed) {
  std::vector<ExpectedEntry> out;
  const std::uint64_t d = c.d_model, f = c.d_intermediate, v = c.vocab_size;
  auto layer = [&](const std::string& name, std::uint64_t rows, std::uint64_t cols, bool quantized) {
    if (quantized && packed) {
      out.push_back({name + ".packed", TensorDtype::packed, {rows, cols}});
      return;
    }
    out.push_back({name + ".weight", TensorDtype::fp32, {rows, cols}});
    if (quantized) out.push_back({name + ".alpha", TensorDtype::fp32, {1}});
  };
  auto norm = [&](const std::string& name) {
    out.push_back({name + ".gain", TensorDtype::fp32, {d}});
    if (c.norm == NormKind::layernorm) out.push_back({name + ".bias", TensorDtype::fp32, {d}});
  };
  const bool edge = c.quantize && c.quantize_embeddings;
  layer("embed", v, d, edge);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    norm(p + "attn_norm");
    for (const char* name : {"attn.q", "attn.k", "attn.v", "attn.o"}) layer(p + name, d, d, c.quantize);
    norm(p + "mlp_norm");
    layer(p + "mlp.up", f, d, c.quantize);
    layer(p + "mlp.down", d, f, c.quantize);
  }
  norm("final_norm");
  layer("output", v, d, edge);
  return out;
}

inline std::vector<std::uint8_t> floats_to_bytes(std::span<const float> values) {
  std::vector<std::uint8_t> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i)
    PackedTernaryMatrix::put_u32(out.data() + 4 * i, std::bit_cast<std::uint32_t>(values[i]));
  return out;
}

}  // namespace detail

/// Parses and validates the header: structure, hashes, and that every
/// manifest region lies inside the file without overlapping another.
inline CheckpointHeader read_checkpoint_header(std::span<const std::uint8_t> file) {
  detail::ByteReader r(file);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  CheckpointHeader h;
  h.version = static_cast<std::uint32_t>(r.uint(4, "version"));
  if (h.version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(h.version));
  }
  const std::size_t config_len = r.uint(4, "config length");
  const auto config = r.take(config_len, "config block");
  h.config_text.assign(config.begin(), config.end());
  const std::uint64_t count = r.uint(4, "entry count");
  // Smallest possible entry is 2 + 1 + 1 + 1 + 8 + 8 bytes.
  if (count > r.remaining() / 21) throw CheckpointError("manifest entry count exceeds file size");
  h.entries.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    ManifestEntry e;
    const std::size_t name_len = r.uint(2, "entry name length");
    const auto name = r.take(name_len, "entry name");
    e.name.assign(name.begin(), name.end());
    const auto dtype = r.uint(1, "entry dtype");
    if (dtype > 1) throw CheckpointError("entry '" + e.name + "' has unknown dtype " + std::to_string(dtype));
    e.dtype = static_cast<TensorDtype>(dtype);
    const auto rank = r.uint(1, "entry rank");
    if (rank == 0 || rank > 2) throw CheckpointError("entry '" + e.name + "' has unsupported rank " + std::to_string(rank));
    for (std::uint64_t k = 0; k < rank; ++k) e.shape.push_back(r.uint(8, "entry shape"));
    e.offset = r.uint(8, "entry offset");
    e.nbytes = r.uint(8, "entry size");
    h.entries.push_back(std::move(e));
  }
  h.payload_hash = r.uint(8, "payload hash");
  const std::size_t hashed = r.pos();
  h.header_hash = r.uint(8, "header hash");
  h.header_size = r.pos();
  if (fnv1a64(file.first(hashed)) != h.header_hash) throw CheckpointError("checkpoint header hash mismatch");

  std::vector<std::pair<std::uint64_t, std::uint64_t>> regions;
  for (const auto& e : h.entries) {
    if (e.offset < h.header_size || e.offset > file.size() || e.nbytes > file.size() - e.offset) {
      throw CheckpointError("entry '" + e.name + "' lies outside the payload");
    }
    regions.emplace_back(e.offset, e.nbytes);
  }
  std::sort(regions.begin(), regions.end());
  for (std::size_t i = 1; i < regions.size(); ++i) {
    if (regions[i - 1].first + regions[i - 1].second > regions[i].first) {
      throw CheckpointError("manifest regions overlap");
    }
  }
  if (fnv1a64(file.subspan(h.header_size)) != h.payload_hash) throw CheckpointError("checkpoint payload hash mismatch");
  return h;
}

template <class T>
struct LoadedCheckpoint {
  RunConfig config;
  std::optional<Vocab> vocab;
  bool packed = false;
  LanguageModel<T> model;
};

/// Serializes the model. With `packed`, ternary layers are stored as packed
/// codes of their current quantization and the latent weights are dropped.
template <class T>
std::vector<std::uint8_t> serialize_checkpoint(LanguageModel<T>& model, const RunConfig& run,
                                               const std::optional<Vocab>& vocab, bool packed) {
  RunConfig cfg = run;
  cfg.model = model.config();
  KeyValues kvs = cfg.key_values();
  kvs.emplace_back("packed", packed ? "true" : "false");
  kvs.emplace_back("vocab", vocab ? vocab->to_hex() : "");
  const std::string config_text = format_key_values(kvs);

  struct Blob {
    ManifestEntry entry;
    std::vector<std::uint8_t> bytes;
  };
  std::vector<Blob> blobs;
  auto add_fp32 = [&](const std::string& name, const Tensor<T>& t) {
    std::vector<float> values(t.data().begin(), t.data().end());
    Blob b;
    b.entry.name = name;
    b.entry.dtype = TensorDtype::fp32;
    b.entry.shape.assign(t.shape().begin(), t.shape().end());
    b.bytes = detail::floats_to_bytes(values);
    blobs.push_back(std::move(b));
  };
  std::vector<TernaryLinear<T>*> done;
  for (auto& p : model.parameters()) {
    if (packed && p.owner && p.owner->quantized()) {
      if (std::find(done.begin(), done.end(), p.owner) != done.end()) continue;
      done.push_back(p.owner);
      Blob b;
      b.entry.name = p.owner->name() + ".packed";
      b.entry.dtype = TensorDtype::packed;
      b.entry.shape = {p.owner->out_dim(), p.owner->in_dim()};
      b.bytes = p.owner->to_packed().serialize();
      blobs.push_back(std::move(b));
      continue;
    }
    add_fp32(p.name, p.tensor);
  }

  detail::ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(config_text.size()));
  w.raw(config_text);
  w.u32(static_cast<std::uint32_t>(blobs.size()));
  std::size_t header_size = w.bytes.size() + 16;
  for (const auto& b : blobs) header_size += 2 + b.entry.name.size() + 2 + 8 * b.entry.shape.size() + 16;
  std::uint64_t offset = header_size;
  std::vector<std::uint8_t> payload;
  for (auto& b : blobs) {
    b.entry.offset = offset;
    b.entry.nbytes = b.bytes.size();
    offset += b.bytes.size();
    payload.insert(payload.end(), b.bytes.begin(), b.bytes.end());
    w.u16(static_cast<std::uint16_t>(b.entry.name.size()));
    w.raw(b.entry.name);
    w.u8(static_cast<std::uint8_t>(b.entry.dtype));
    w.u8(static_cast<std::uint8_t>(b.entry.shape.size()));
    for (auto d : b.entry.shape) w.u64(d);
    w.u64(b.entry.offset);
    w.u64(b.entry.nbytes);
  }
  w.u64(fnv1a64(payload));
  w.u64(fnv1a64(w.bytes));
  if (w.bytes.size() != header_size) throw InvariantError("checkpoint header size miscomputed");
  w.raw(payload);
  return std::move(w.bytes);
}

template <class T>
void save_checkpoint(LanguageModel<T>& model, const std::filesystem::path& path, const RunConfig& run,
                     const std::optional<Vocab>& vocab, bool packed) {
  write_file_atomic(path, serialize_checkpoint(model, run, vocab, packed));
}

/// Validates everything (structure, hashes, config, manifest against the
/// config's expected tensors) before a model is constructed. Every failure
/// is a CheckpointError.
template <class T>
LoadedCheckpoint<T> parse_checkpoint(std::span<const std::uint8_t> file) {
  const CheckpointHeader h = read_checkpoint_header(file);
  RunConfig cfg;
  bool packed = false;
  std::optional<Vocab> vocab;
  try {
    for (const auto& [k, v] : parse_key_values(h.config_text)) {
      if (k == "packed") {
        detail::parse_value(k, v, packed);
      } else if (k == "vocab") {
        if (!v.empty()) vocab = Vocab::from_hex(v);
      } else {
        cfg.set(k, v);
      }
    }
    cfg.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  if (vocab && vocab->size() != cfg.model.vocab_size) {
    throw CheckpointError("checkpoint vocabulary has " + std::to_string(vocab->size()) + " symbols but vocab_size is " +
                          std::to_string(cfg.model.vocab_size));
  }
  if (detail::expected_entry_count(cfg.model, packed) != h.entries.size()) {
    throw CheckpointError("manifest has " + std::to_string(h.entries.size()) + " entries, config implies " +
                          std::to_string(detail::expected_entry_count(cfg.model, packed)));
  }
  const auto expected = detail::expected_entries(cfg.model, packed);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& e = h.entries[i];
    const auto& x = expected[i];
    if (e.name != x.name || e.dtype != x.dtype || e.shape != x.shape || e.nbytes != x.nbytes()) {
      throw CheckpointError("manifest entry " + std::to_string(i) + " ('" + e.name + "') does not match expected '" +
                            x.name + "'");
    }
  }

  std::vector<PackedTernaryMatrix> packed_layers;
  for (const auto& e : h.entries) {
    if (e.dtype != TensorDtype::packed) continue;
    auto m = PackedTernaryMatrix::deserialize(file.subspan(e.offset, e.nbytes));
    if (m.rows() != e.shape[0] || m.cols() != e.shape[1]) {
      throw CheckpointError("entry '" + e.name + "' packed shape disagrees with the manifest");
    }
    if (!(m.alpha() > 0.0f) || !std::isfinite(m.alpha())) {
      throw CheckpointError("entry '" + e.name + "' has invalid alpha");
    }
    packed_layers.push_back(std::move(m));
  }

  LanguageModel<T> model(cfg.model, cfg.train.seed);
  auto params = model.parameters();
  std::size_t entry = 0, packed_index = 0;
  std::vector<TernaryLinear<T>*> done;
  for (auto& p : params) {
    if (packed && p.owner && p.owner->quantized()) {
      if (std::find(done.begin(), done.end(), p.owner) != done.end()) continue;
      done.push_back(p.owner);
      p.owner->set_packed(std::move(packed_layers[packed_index++]));
      ++entry;
      continue;
    }
    const auto& e = h.entries[entry++];
    auto dst = p.tensor.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = static_cast<T>(std::bit_cast<float>(PackedTernaryMatrix::get_u32(file.data() + e.offset + 4 * i)));
    }
  }
  for (auto* layer : model.all_layers()) {
    if (layer->quantized() && !(layer->alpha()[0] > T(0))) {
      throw CheckpointError("layer " + layer->name() + " has non-positive alpha");
    }
  }
  return LoadedCheckpoint<T>{std::move(cfg), std::move(vocab), packed, std::move(model)};
}

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_binary_file(path);
  return parse_checkpoint<T>(bytes);
}

}  // namespace ternarylm
