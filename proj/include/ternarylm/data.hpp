#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <string>
#include <vector>

#include "ternarylm/error.hpp"
#include "ternarylm/random.hpp"

namespace ternarylm {

/// Row-major [sequences x seq_len] inputs and next-token targets.
struct Batch {
  std::size_t sequences = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> inputs;
  std::vector<std::int32_t> targets;
  std::vector<std::size_t> window_starts;
};

/// Start offsets of the non-overlapping windows: inputs [s, s+L), targets
/// [s+1, s+L+1). The tail that cannot fill a window is dropped.
inline std::vector<std::size_t> window_starts(std::size_t stream_len, std::size_t seq_len) {
  if (seq_len == 0) throw DimensionError("seq_len must be positive");
  if (stream_len <= seq_len) {
    throw DimensionError("token stream of " + std::to_string(stream_len) + " is too short for seq_len " +
                         std::to_string(seq_len));
  }
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + seq_len + 1 <= stream_len; s += seq_len) starts.push_back(s);
  return starts;
}

/// One epoch of batches. Window order is shuffled with a stream derived from
/// (seed, epoch); the last batch may hold fewer sequences.
inline std::vector<Batch> make_batches(std::span<const std::int32_t> stream, std::size_t batch_size,
                                       std::size_t seq_len, std::uint64_t seed, std::size_t epoch = 0) {
  if (batch_size == 0) throw DimensionError("batch_size must be positive");
  std::vector<std::size_t> starts = window_starts(stream.size(), seq_len);
  Rng rng(derive_seed(seed, 0x5eed0000ULL + epoch));
  rng.shuffle(std::span<std::size_t>(starts));
  std::vector<Batch> batches;
  for (std::size_t i = 0; i < starts.size(); i += batch_size) {
    Batch b;
    b.seq_len = seq_len;
    b.sequences = std::min(batch_size, starts.size() - i);
    b.inputs.reserve(b.sequences * seq_len);
    b.targets.reserve(b.sequences * seq_len);
    for (std::size_t j = 0; j < b.sequences; ++j) {
      const std::size_t s = starts[i + j];
      b.window_starts.push_back(s);
      b.inputs.insert(b.inputs.end(), stream.begin() + static_cast<std::ptrdiff_t>(s),
                      stream.begin() + static_cast<std::ptrdiff_t>(s + seq_len));
      b.targets.insert(b.targets.end(), stream.begin() + static_cast<std::ptrdiff_t>(s + 1),
                       stream.begin() + static_cast<std::ptrdiff_t>(s + seq_len + 1));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

/// Train and validation parts of a stream; validation is the tail.
inline std::pair<std::span<const std::int32_t>, std::span<const std::int32_t>> split_stream(
    std::span<const std::int32_t> tokens, double val_fraction) {
  if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("val_fraction must lie in [0, 1)");
  const auto n_val = static_cast<std::size_t>(static_cast<double>(tokens.size()) * val_fraction);
  return {tokens.first(tokens.size() - n_val), tokens.subspan(tokens.size() - n_val)};
}

}  // namespace ternarylm
