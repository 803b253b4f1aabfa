#include <doctest.h>

#include <set>
#include <string>
#include <vector>

#include "dreamnet/dataset.hpp"
#include "dreamnet/errors.hpp"
#include "dreamnet/text.hpp"
#include "support.hpp"

using namespace dreamnet;

namespace {

std::vector<std::string> fixture_texts(std::size_t n) {
  GeneratorSpec spec = dntest::small_spec(n, 21, 0.0);
  std::vector<std::string> texts;
  for (const auto& r : generate(spec).records) texts.push_back(r.text);
  return texts;
}

}  // namespace

TEST_CASE("split_words lowercases and breaks on punctuation") {
  CHECK(split_words("I was FLYING, over-the sea!") ==
        std::vector<std::string>{"i", "was", "flying", "over", "the", "sea"});
  CHECK(split_words("  ...  ").empty());
}

TEST_CASE("build_vocab keeps tokens at or above min_freq") {
  const std::vector<std::string> one = {"a a b"};
  const Vocab v = build_vocab(one, 2);
  CHECK(v.size() == Vocab::kReserved + 1);
  CHECK(v.id("a") == 4);
  CHECK(v.id("b") == Vocab::kUnk);

  const std::vector<std::string> x = {"x"};
  CHECK(build_vocab(x, 1).size() == 5);
  CHECK_THROWS_AS(build_vocab(std::vector<std::string>{}, 1), InputError);
}

TEST_CASE("build_vocab orders by frequency then lexicographically") {
  const std::vector<std::string> corpus = {"b a c", "c b", "c"};
  const Vocab v = build_vocab(corpus, 1);
  CHECK(v.tokens() == std::vector<std::string>{"[PAD]", "[UNK]", "[CLS]", "[MASK]", "c", "b", "a"});
}

TEST_CASE("build_vocab is deterministic over a synthetic corpus") {
  const auto texts = fixture_texts(100);
  CHECK(build_vocab(texts, 2) == build_vocab(texts, 2));
}

TEST_CASE("vocab file round trip keeps ids") {
  dntest::TempDir dir("vocab");
  const auto texts = fixture_texts(50);
  const Vocab v = build_vocab(texts, 1);
  v.save(dir.path() / "v.txt");
  const Vocab back = Vocab::load(dir.path() / "v.txt");
  CHECK(back == v);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(back.id(v.token(i)) == i);
}

TEST_CASE("tokenize fixed cases") {
  const std::vector<std::string> corpus = {"i was flying", "i was", "i"};
  const Vocab v = build_vocab(corpus, 1);
  const TokenSequence empty = tokenize("", v, 8);
  CHECK(empty.true_len == 1);
  CHECK(empty.ids == std::vector<std::size_t>{Vocab::kCls, 0, 0, 0, 0, 0, 0, 0});

  // i (3 occurrences) -> 4, was (2) -> 5, flying (1) -> 6
  const TokenSequence s = tokenize("I was flying.", v, 6);
  CHECK(s.ids == std::vector<std::size_t>{Vocab::kCls, 4, 5, 6, Vocab::kPad, Vocab::kPad});
  CHECK(s.true_len == 4);
  CHECK(tokenize("i swam", v, 4).ids[2] == Vocab::kUnk);
}

TEST_CASE("over-long text keeps the head at exactly max_len") {
  std::string text;
  for (int i = 0; i < 300; ++i) text += "w" + std::to_string(i) + " ";
  const std::vector<std::string> corpus = {text};
  const Vocab v = build_vocab(corpus, 1);
  const TokenSequence s = tokenize(text, v, 256);
  CHECK(s.ids.size() == 256);
  CHECK(s.true_len == 256);
  CHECK(v.token(s.ids[1]) == "w0");
  CHECK(v.token(s.ids[255]) == "w254");
}

TEST_CASE("tokenize and detokenize round trip known words") {
  const auto texts = fixture_texts(40);
  const Vocab v = build_vocab(texts, 1);
  for (const auto& t : texts) {
    std::string joined;
    for (const auto& w : split_words(t)) joined += (joined.empty() ? "" : " ") + w;
    CHECK(detokenize(tokenize(t, v, 256), v) == joined);
  }
}

TEST_CASE("mask_tokens edge rates") {
  const std::vector<std::string> corpus = {"a b c d e"};
  const Vocab v = build_vocab(corpus, 1);
  const TokenSequence s = tokenize("a b c d e", v, 10);
  Rng rng(1);
  const MaskedSequence none = mask_tokens(s, 0.0, rng);
  CHECK(none.masked.ids == s.ids);
  CHECK(none.targets.empty());

  const MaskedSequence all = mask_tokens(s, 1.0, rng);
  CHECK(all.targets.size() == 5);
  CHECK(all.masked.ids[0] == Vocab::kCls);
  for (std::size_t p = 1; p <= 5; ++p) CHECK(all.masked.ids[p] == Vocab::kMask);
  for (std::size_t p = 6; p < 10; ++p) CHECK(all.masked.ids[p] == Vocab::kPad);
  for (const auto& [pos, id] : all.targets) CHECK(s.ids[pos] == id);

  CHECK_THROWS_AS(mask_tokens(s, 1.5, rng), InputError);
  CHECK_THROWS_AS(mask_tokens(s, -0.1, rng), InputError);
}

TEST_CASE("unknown tokens are eligible for masking") {
  const std::vector<std::string> corpus = {"a"};
  const Vocab v = build_vocab(corpus, 1);
  Rng rng(2);
  CHECK(mask_tokens(tokenize("zzz", v, 4), 1.0, rng).targets.size() == 1);
}

TEST_CASE("masked fraction concentrates near the rate") {
  // 10,000 eligible positions: 100 sequences of 100 words.
  std::string text;
  for (int i = 0; i < 100; ++i) text += "w ";
  const std::vector<std::string> corpus = {text};
  const Vocab v = build_vocab(corpus, 1);
  const TokenSequence s = tokenize(text, v, 128);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    std::size_t masked = 0;
    for (int r = 0; r < 100; ++r) masked += mask_tokens(s, 0.15, rng).targets.size();
    const double frac = masked / 10000.0;
    CAPTURE(frac);
    CHECK(frac >= 0.14);
    CHECK(frac <= 0.16);
  }
}

TEST_CASE("masking is reproducible and never touches CLS or PAD") {
  const auto texts = fixture_texts(30);
  const Vocab v = build_vocab(texts, 2);
  for (const auto& t : texts) {
    const TokenSequence s = tokenize(t, v, 64);
    Rng a(9), b(9);
    const MaskedSequence ma = mask_tokens(s, 0.3, a), mb = mask_tokens(s, 0.3, b);
    CHECK(ma.targets == mb.targets);
    CHECK(ma.masked.ids[0] == Vocab::kCls);
    for (std::size_t p = s.true_len; p < 64; ++p) CHECK(ma.masked.ids[p] == Vocab::kPad);
    for (const auto& [pos, id] : ma.targets) {
      CHECK(pos > 0);
      CHECK(pos < s.true_len);
    }
  }
}
