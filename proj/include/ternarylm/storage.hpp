#pragma once

// Analytic byte accounting: fp32 at 4 bytes per parameter versus the packed
// form at 2 bits per ternary weight plus a 4-byte alpha per layer.

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "ternarylm/config.hpp"

namespace ternarylm {

enum class StorageSection { embeddings, transformer, norms };

inline const char* to_string(StorageSection s) {
  switch (s) {
    case StorageSection::embeddings: return "embeddings";
    case StorageSection::transformer: return "transformer";
    case StorageSection::norms: return "norms";
  }
  return "?";
}

struct LayerStorage {
  std::string name;
  StorageSection section = StorageSection::transformer;
  std::uint64_t params = 0;
  bool ternary = false;
  std::uint64_t bytes_fp32 = 0;
  std::uint64_t bytes_packed = 0;

  double ratio() const { return static_cast<double>(bytes_fp32) / static_cast<double>(bytes_packed); }
};

struct SectionStorage {
  StorageSection section;
  std::uint64_t params = 0;
  std::uint64_t bytes_fp32 = 0;
  std::uint64_t bytes_packed = 0;

  double ratio() const {
    return bytes_packed == 0 ? 1.0 : static_cast<double>(bytes_fp32) / static_cast<double>(bytes_packed);
  }
};

struct StorageReport {
  std::vector<LayerStorage> layers;
  std::vector<SectionStorage> sections;
  std::uint64_t params = 0;
  std::uint64_t bytes_fp32 = 0;
  std::uint64_t bytes_packed = 0;
  std::uint64_t ternary_params = 0;
  std::uint64_t ternary_bytes_fp32 = 0;
  std::uint64_t ternary_bytes_packed = 0;

  double ratio() const { return static_cast<double>(bytes_fp32) / static_cast<double>(bytes_packed); }
  /// Compression over the ternary layers alone (1 when there are none).
  double ternary_ratio() const {
    return ternary_bytes_packed == 0 ? 1.0
                                     : static_cast<double>(ternary_bytes_fp32) / static_cast<double>(ternary_bytes_packed);
  }

  static constexpr const char* csv_header = "layer,section,params,ternary,bytes_fp32,bytes_packed,ratio";

  std::string csv() const {
    std::ostringstream os;
    os.precision(6);
    os << csv_header << '\n';
    for (const auto& l : layers) {
      os << l.name << ',' << to_string(l.section) << ',' << l.params << ',' << (l.ternary ? 1 : 0) << ','
         << l.bytes_fp32 << ',' << l.bytes_packed << ',' << l.ratio() << '\n';
    }
    for (const auto& s : sections) {
      os << "total:" << to_string(s.section) << ',' << to_string(s.section) << ',' << s.params << ",," << s.bytes_fp32
         << ',' << s.bytes_packed << ',' << s.ratio() << '\n';
    }
    os << "total,all," << params << ",," << bytes_fp32 << ',' << bytes_packed << ',' << ratio() << '\n';
    return os.str();
  }

  std::string summary() const {
    std::ostringstream os;
    os.precision(4);
    const double mb = 1e6;
    for (const auto& s : sections) {
      os << to_string(s.section) << ": " << s.params << " params, fp32 " << static_cast<double>(s.bytes_fp32) / mb
         << " MB, packed " << static_cast<double>(s.bytes_packed) / mb << " MB (" << s.ratio() << "x)\n";
    }
    os << "ternary layers: " << ternary_ratio() << "x\n";
    os << "total: " << params << " params, fp32 " << static_cast<double>(bytes_fp32) / mb << " MB, packed "
       << static_cast<double>(bytes_packed) / mb << " MB (" << ratio() << "x)\n";
    return os.str();
  }
};

/// Bytes one ternary matrix of n weights takes when packed.
inline std::uint64_t packed_layer_bytes(std::uint64_t n) { return (n + 3) / 4 + 4; }

inline StorageReport storage_report(const ModelConfig& c) {
  StorageReport r;
  const std::uint64_t d = c.d_model, f = c.d_intermediate, v = c.vocab_size;
  auto add = [&](std::string name, StorageSection section, std::uint64_t params, bool ternary) {
    LayerStorage l;
    l.name = std::move(name);
    l.section = section;
    l.params = params;
    l.ternary = ternary;
    l.bytes_fp32 = 4 * params;
    l.bytes_packed = ternary ? packed_layer_bytes(params) : 4 * params;
    r.layers.push_back(std::move(l));
  };
  const std::uint64_t norm_params = c.norm == NormKind::layernorm ? 2 * d : d;
  const bool edge = c.quantize && c.quantize_embeddings;
  add("embed", StorageSection::embeddings, v * d, edge);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    add(p + "attn_norm", StorageSection::norms, norm_params, false);
    for (const char* name : {"attn.q", "attn.k", "attn.v", "attn.o"}) add(p + name, StorageSection::transformer, d * d, c.quantize);
    add(p + "mlp_norm", StorageSection::norms, norm_params, false);
    add(p + "mlp.up", StorageSection::transformer, f * d, c.quantize);
    add(p + "mlp.down", StorageSection::transformer, d * f, c.quantize);
  }
  add("final_norm", StorageSection::norms, norm_params, false);
  add("output", StorageSection::embeddings, v * d, edge);

  for (auto s : {StorageSection::embeddings, StorageSection::transformer, StorageSection::norms}) {
    SectionStorage agg{s};
    for (const auto& l : r.layers) {
      if (l.section != s) continue;
      agg.params += l.params;
      agg.bytes_fp32 += l.bytes_fp32;
      agg.bytes_packed += l.bytes_packed;
    }
    r.sections.push_back(agg);
  }
  for (const auto& l : r.layers) {
    r.params += l.params;
    r.bytes_fp32 += l.bytes_fp32;
    r.bytes_packed += l.bytes_packed;
    if (l.ternary) {
      r.ternary_params += l.params;
      r.ternary_bytes_fp32 += l.bytes_fp32;
      r.ternary_bytes_packed += l.bytes_packed;
    }
  }
  return r;
}

}  // namespace ternarylm
