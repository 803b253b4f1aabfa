#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dreamnet/rng.hpp"

namespace dreamnet {

// Word-level vocabulary. Ids 0..3 are reserved.
class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kCls = 2;
  static constexpr std::size_t kMask = 3;
  static constexpr std::size_t kReserved = 4;

  Vocab();
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(std::string_view token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static bool is_special(std::size_t id) { return id < kReserved && id != kUnk; }

  // One token per line, line number == id.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Lowercased runs of ASCII alphanumerics; everything else separates words.
std::vector<std::string> split_words(std::string_view text);

// Tokens with frequency >= min_freq, ordered by frequency desc then lexicographically.
Vocab build_vocab(std::span<const std::string> corpus, std::size_t min_freq = 2);

struct TokenSequence {
  std::vector<std::size_t> ids;  // length max_len, ids[0] == CLS
  std::size_t true_len = 0;      // non-PAD positions, CLS included
};

// Keeps the head of over-long texts.
TokenSequence tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len = 256);

std::string detokenize(const TokenSequence& seq, const Vocab& vocab);

struct MaskedSequence {
  TokenSequence masked;
  std::vector<std::pair<std::size_t, std::size_t>> targets;  // (position, original id)
};

// Each non-special, non-PAD position is independently replaced by MASK with
// probability `rate`.
MaskedSequence mask_tokens(const TokenSequence& seq, double rate, Rng& rng);

}  // namespace dreamnet
