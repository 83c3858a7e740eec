#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

namespace traitlens {

// Independent generator stream keyed by a tuple of integers and an optional
// tag. Uses std::seed_seq, whose mixing algorithm is fixed by the standard, so
// a stream depends only on its key, never on the order streams are created.
inline std::mt19937_64 derive_rng(std::initializer_list<std::uint64_t> key,
                                  std::string_view tag = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(key.size() * 2 + tag.size() + 1);
  for (std::uint64_t k : key) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  words.push_back(static_cast<std::uint32_t>(tag.size()));
  for (unsigned char c : tag) words.push_back(c);
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

// 64-bit seed drawn from a derived stream; convenient for nesting.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> key,
                                 std::string_view tag = {}) {
  return derive_rng(key, tag)();
}

}  // namespace traitlens
