#include "dreamnet/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "dreamnet/errors.hpp"

namespace dreamnet {

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> names = {"[PAD]", "[UNK]", "[CLS]", "[MASK]"};
  return names;
}

}  // namespace

Vocab::Vocab() : Vocab(reserved_tokens()) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kReserved ||
      !std::equal(reserved_tokens().begin(), reserved_tokens().end(), tokens_.begin())) {
    throw InputError("vocabulary must start with [PAD] [UNK] [CLS] [MASK]");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) throw InputError("duplicate vocabulary token: " + tokens_[i]);
  }
}

std::size_t Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read vocabulary " + path.string());
  std::vector<std::string> tokens;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

Vocab build_vocab(std::span<const std::string> corpus, std::size_t min_freq) {
  if (corpus.empty()) throw InputError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& text : corpus) {
    for (auto& w : split_words(text)) ++counts[std::move(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, c] : counts) {
    if (c >= min_freq) kept.emplace_back(w, c);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = reserved_tokens();
  // split_words never yields bracketed names, so reserved tokens cannot collide.
  for (auto& [w, c] : kept) tokens.push_back(std::move(w));
  return Vocab(std::move(tokens));
}

TokenSequence tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  if (max_len == 0) throw InputError("tokenize: max_len must be positive");
  TokenSequence seq;
  seq.ids.assign(max_len, Vocab::kPad);
  seq.ids[0] = Vocab::kCls;
  seq.true_len = 1;
  for (const auto& w : split_words(text)) {
    if (seq.true_len == max_len) break;
    seq.ids[seq.true_len++] = vocab.id(w);
  }
  return seq;
}

std::string detokenize(const TokenSequence& seq, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 1; i < seq.true_len; ++i) {
    if (!out.empty()) out += ' ';
    out += vocab.token(seq.ids[i]);
  }
  return out;
}

MaskedSequence mask_tokens(const TokenSequence& seq, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw InputError("mask_tokens: rate must lie in [0, 1]");
  MaskedSequence out{seq, {}};
  for (std::size_t pos = 0; pos < seq.true_len; ++pos) {
    const std::size_t id = seq.ids[pos];
    if (Vocab::is_special(id)) continue;
    if (rng.uniform() < rate) {
      out.masked.ids[pos] = Vocab::kMask;
      out.targets.emplace_back(pos, id);
    }
  }
  return out;
}

}  // namespace dreamnet
