#pragma once

// Deterministic synthetic text: short templated stories for language-model
// runs and a two-pattern toy classification task.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ternarylm/finetune.hpp"
#include "ternarylm/random.hpp"
#include "ternarylm/vocab.hpp"

namespace ternarylm {

namespace detail {

template <std::size_t N>
std::string_view pick(Rng& rng, const std::array<std::string_view, N>& words) {
  return words[rng.index(N)];
}

}  // namespace detail

/// About `target_bytes` of story-like English built from a small grammar.
inline std::string synthetic_corpus(std::size_t target_bytes, std::uint64_t seed = 0) {
  static constexpr std::array<std::string_view, 12> names = {"Tom", "Lily", "Max", "Anna", "Ben", "Mia",
                                                             "Sam", "Lucy", "Leo", "Emma", "Jack", "Rosa"};
  static constexpr std::array<std::string_view, 10> animals = {"cat", "dog", "bird", "fox", "frog",
                                                               "bear", "duck", "mouse", "rabbit", "fish"};
  static constexpr std::array<std::string_view, 10> things = {"ball", "kite", "box", "hat", "book",
                                                              "cake", "boat", "drum", "shoe", "apple"};
  static constexpr std::array<std::string_view, 8> adjectives = {"red", "big", "small", "happy",
                                                                 "old", "shiny", "soft", "green"};
  static constexpr std::array<std::string_view, 8> places = {"park", "garden", "forest", "house",
                                                             "river", "school", "beach", "hill"};
  static constexpr std::array<std::string_view, 6> feelings = {"happy", "sad", "tired", "proud", "scared", "glad"};

  Rng rng(derive_seed(seed, 0xc0de));
  std::string out;
  out.reserve(target_bytes + 512);
  while (out.size() < target_bytes) {
    const auto hero = detail::pick(rng, names);
    auto friend_name = detail::pick(rng, names);
    while (friend_name == hero) friend_name = detail::pick(rng, names);
    const auto animal = detail::pick(rng, animals);
    const auto thing = detail::pick(rng, things);
    const auto adj = detail::pick(rng, adjectives);
    const auto place = detail::pick(rng, places);
    std::string s;
    s += "Once upon a time, ";
    s += hero;
    s += " had a ";
    s += adj;
    s += " ";
    s += thing;
    s += ". ";
    switch (rng.index(4)) {
      case 0:
        s += hero; s += " went to the "; s += place; s += " with "; s += friend_name; s += ". ";
        break;
      case 1:
        s += hero; s += " saw a "; s += animal; s += " in the "; s += place; s += ". ";
        break;
      case 2:
        s += "One day, "; s += hero; s += " and "; s += friend_name; s += " played in the "; s += place; s += ". ";
        break;
      default:
        s += "The "; s += animal; s += " wanted the "; s += thing; s += " too. ";
        break;
    }
    switch (rng.index(3)) {
      case 0:
        s += "The "; s += thing; s += " fell into the "; s += place; s += ", and "; s += hero; s += " was ";
        s += detail::pick(rng, feelings); s += ". ";
        break;
      case 1:
        s += friend_name; s += " said, \"Can I play with your "; s += thing; s += "?\" "; s += hero;
        s += " said, \"Yes, let us share.\" ";
        break;
      default:
        s += "The "; s += animal; s += " was "; s += detail::pick(rng, feelings); s += " and ran away. ";
        break;
    }
    s += "In the end, ";
    s += hero;
    s += " felt ";
    s += detail::pick(rng, feelings);
    s += ".\n";
    out += s;
  }
  return out;
}

/// Two classes of strings drawn from disjoint character sets: class 0 from
/// "abcd", class 1 from "wxy".
inline std::vector<std::pair<std::string, std::int32_t>> toy_classification_texts(std::size_t per_class,
                                                                                  std::uint64_t seed = 0) {
  Rng rng(derive_seed(seed, 0x70e));
  std::vector<std::pair<std::string, std::int32_t>> out;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::int32_t label = 0; label < 2; ++label) {
      const std::string_view alphabet = label == 0 ? "abcd" : "wxy";
      std::string s;
      const std::size_t len = 4 + rng.index(8);
      for (std::size_t k = 0; k < len; ++k) s.push_back(alphabet[rng.index(alphabet.size())]);
      out.emplace_back(std::move(s), label);
    }
  }
  return out;
}

inline std::vector<LabeledExample> encode_examples(const Vocab& vocab,
                                                   const std::vector<std::pair<std::string, std::int32_t>>& texts) {
  std::vector<LabeledExample> out;
  out.reserve(texts.size());
  for (const auto& [text, label] : texts) out.push_back({vocab.encode(text), label});
  return out;
}

}  // namespace ternarylm
