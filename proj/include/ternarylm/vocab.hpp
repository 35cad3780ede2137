#pragma once

// Character-level vocabulary over the bytes of a corpus.

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ternarylm/error.hpp"

namespace ternarylm {

class Vocab {
 public:
  static constexpr std::int32_t pad_id = 0;
  static constexpr std::int32_t unk_id = 1;
  static constexpr std::int32_t eot_id = 2;
  static constexpr std::size_t num_specials = 3;

  Vocab() { index_.fill(-1); }

  /// Symbols are the distinct bytes of `corpus` in ascending byte order.
  static Vocab from_corpus(std::string_view corpus) {
    std::array<bool, 256> seen{};
    for (unsigned char c : corpus) seen[c] = true;
    std::vector<unsigned char> symbols;
    for (int b = 0; b < 256; ++b)
      if (seen[static_cast<std::size_t>(b)]) symbols.push_back(static_cast<unsigned char>(b));
    return from_symbols(symbols);
  }

  static Vocab from_symbols(std::span<const unsigned char> symbols) {
    Vocab v;
    for (unsigned char c : symbols) {
      if (v.index_[c] >= 0) throw ConfigError("duplicate vocabulary symbol");
      v.index_[c] = static_cast<std::int32_t>(num_specials + v.symbols_.size());
      v.symbols_.push_back(c);
    }
    return v;
  }

  std::size_t size() const { return num_specials + symbols_.size(); }
  std::span<const unsigned char> symbols() const { return symbols_; }

  bool contains(unsigned char c) const { return index_[c] >= 0; }
  std::int32_t id(unsigned char c) const { return index_[c] >= 0 ? index_[c] : unk_id; }

  /// Every character must be in the vocabulary; the error lists the ones
  /// that are not.
  std::vector<std::int32_t> encode(std::string_view text) const {
    std::vector<std::int32_t> ids;
    ids.reserve(text.size());
    std::string missing;
    for (unsigned char c : text) {
      if (index_[c] < 0) {
        if (missing.find(static_cast<char>(c)) == std::string::npos) missing.push_back(static_cast<char>(c));
        continue;
      }
      ids.push_back(index_[c]);
    }
    if (!missing.empty()) throw ConfigError("characters not in vocabulary: " + printable(missing));
    return ids;
  }

  /// Special ids decode to nothing.
  std::string decode(std::span<const std::int32_t> ids) const {
    std::string out;
    for (auto id : ids) {
      if (id >= static_cast<std::int32_t>(num_specials) && static_cast<std::size_t>(id) < size()) {
        out.push_back(static_cast<char>(symbols_[static_cast<std::size_t>(id) - num_specials]));
      }
    }
    return out;
  }

  /// Symbols as lowercase hex, two digits per byte.
  std::string to_hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned char c : symbols_) {
      out.push_back(digits[c >> 4]);
      out.push_back(digits[c & 15]);
    }
    return out;
  }

  static Vocab from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0) throw ConfigError("vocabulary hex string has odd length");
    auto nibble = [](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      throw ConfigError("invalid hex digit in vocabulary");
    };
    std::vector<unsigned char> symbols;
    for (std::size_t i = 0; i < hex.size(); i += 2) {
      symbols.push_back(static_cast<unsigned char>(nibble(hex[i]) * 16 + nibble(hex[i + 1])));
    }
    return from_symbols(symbols);
  }

  static std::string printable(std::string_view chars) {
    std::string out;
    for (unsigned char c : chars) {
      if (!out.empty()) out += ' ';
      if (c >= 0x21 && c < 0x7f) {
        out.push_back(static_cast<char>(c));
      } else {
        static constexpr char digits[] = "0123456789abcdef";
        out += "0x";
        out.push_back(digits[c >> 4]);
        out.push_back(digits[c & 15]);
      }
    }
    return out;
  }

 private:
  std::array<std::int32_t, 256> index_{};
  std::vector<unsigned char> symbols_;
};

}  // namespace ternarylm
