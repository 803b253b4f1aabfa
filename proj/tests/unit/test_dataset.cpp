#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "dreamnet/dataset.hpp"
#include "dreamnet/errors.hpp"
#include "dreamnet/evaluation.hpp"
#include "dreamnet/text.hpp"
#include "support.hpp"

using namespace dreamnet;

namespace {

const std::size_t kFalling = index(Theme::kFalling);
const std::size_t kAnxiety = index(Emotion::kAnxiety);

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("empty and degenerate generator specs") {
  GeneratorSpec spec = GeneratorSpec::defaults();
  spec.n = 0;
  CHECK(generate(spec).records.empty());

  spec = dntest::small_spec(300, 1, 0.0);
  for (auto& row : spec.conditional) row[kAnxiety] = 0.0;
  spec.conditional[kFalling][kAnxiety] = 1.0;
  std::size_t falling = 0;
  for (const auto& r : generate(spec).records) {
    if (!r.themes[kFalling]) continue;
    ++falling;
    CHECK(r.emotions[kAnxiety] == 1);
  }
  CHECK(falling > 0);
}

TEST_CASE("generator spec validation") {
  GeneratorSpec spec = GeneratorSpec::defaults();
  spec.theme_marginals[0] = 1.2;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = GeneratorSpec::defaults();
  spec.eeg_fraction = -0.1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = GeneratorSpec::defaults();
  spec.theme_mentions_min = 3;
  spec.theme_mentions_max = 2;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = GeneratorSpec::defaults();
  spec.negated_mention_prob = 2.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("generator config round trip") {
  GeneratorSpec spec = GeneratorSpec::defaults();
  spec.n = 77;
  spec.theme_mentions_max = 4;
  spec.negated_mention_prob = 0.25;
  const GeneratorSpec back = GeneratorSpec::from_config(spec.to_config());
  CHECK(back.to_config().to_string() == spec.to_config().to_string());
  CHECK(back.conditional == spec.conditional);
}

TEST_CASE("planted correlation is recovered from gold labels") {
  GeneratorSpec spec = GeneratorSpec::defaults();
  CHECK(expected_phi(spec, kFalling, kAnxiety) == doctest::Approx(0.9).epsilon(1e-6));
  spec.eeg_fraction = 0.0;
  const auto data = generate(spec);
  std::vector<double> t, e;
  for (const auto& r : data.records) {
    t.push_back(r.themes[kFalling]);
    e.push_back(r.emotions[kAnxiety]);
  }
  const double r = pearson(t, e);
  CHECK(r >= 0.8);
  CHECK(r <= 1.0);

  GeneratorSpec other = GeneratorSpec::defaults();
  plant_correlation(other, kFalling, kAnxiety, 0.5);
  CHECK(expected_phi(other, kFalling, kAnxiety) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK_THROWS_AS(plant_correlation(other, kFalling, kAnxiety, 1.5), ConfigError);
}

TEST_CASE("empirical frequencies stay within 3 sigma of the spec") {
  GeneratorSpec spec = GeneratorSpec::defaults();
  spec.eeg_fraction = 0.0;
  const auto records = generate(spec).records;
  const double n = static_cast<double>(records.size());
  for (std::size_t k = 0; k < kNumThemes; ++k) {
    double count = 0;
    for (const auto& r : records) count += r.themes[k];
    const double p = spec.theme_marginals[k];
    CAPTURE(k);
    CHECK(std::abs(count / n - p) <= 3.0 * std::sqrt(p * (1 - p) / n));
  }
  for (std::size_t j = 0; j < kNumEmotions; ++j) {
    double count = 0;
    for (const auto& r : records) count += r.emotions[j];
    const double p = expected_emotion_rate(spec, j);
    CAPTURE(j);
    CHECK(std::abs(count / n - p) <= 3.0 * std::sqrt(p * (1 - p) / n));
  }
}

TEST_CASE("every active theme is named in the narrative") {
  const auto records = generate(dntest::small_spec(400, 2, 0.0)).records;
  const auto& lexicon = theme_keywords();
  for (const auto& r : records) {
    const auto words = split_words(r.text);
    const std::set<std::string> present(words.begin(), words.end());
    for (std::size_t k = 0; k < kNumThemes; ++k) {
      if (!r.themes[k]) continue;
      const bool named = std::any_of(lexicon[k].begin(), lexicon[k].end(),
                                     [&](const std::string& w) { return present.count(w) > 0; });
      CHECK(named);
    }
  }
}

TEST_CASE("narrative lengths respect the word bounds") {
  GeneratorSpec spec = GeneratorSpec::defaults();
  spec.n = 300;
  spec.eeg_fraction = 0.0;
  double total = 0.0;
  for (const auto& r : generate(spec).records) {
    const std::size_t words = split_words(r.text).size();
    CHECK(words >= spec.min_words);
    CHECK(words <= spec.max_words);
    total += static_cast<double>(words);
  }
  // Mentions ride on top of the sampled filler, so the mean sits a little above 150.
  CHECK(total / 300.0 == doctest::Approx(150.0).epsilon(0.1));
}

TEST_CASE("EEG fraction and determinism") {
  GeneratorSpec spec = dntest::small_spec(45, 3, 0.4);
  const auto a = generate(spec), b = generate(spec);
  CHECK(a.records == b.records);
  CHECK(a.eeg.size() == 18);
  std::size_t with_path = 0;
  for (const auto& r : a.records) {
    if (!r.eeg_path) continue;
    ++with_path;
    CHECK(a.eeg.count(r.id) == 1);
    CHECK(a.eeg.at(r.id).channels == b.eeg.at(r.id).channels);
  }
  CHECK(with_path == 18);
}

TEST_CASE("split sizes") {
  const SplitRatios paper;
  CHECK(split_sizes(1500, paper) == std::array<std::size_t, 3>{1050, 300, 150});
  CHECK(split_sizes(10, paper) == std::array<std::size_t, 3>{7, 2, 1});
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = rng.below(500);
    const auto s = split_sizes(n, paper);
    CHECK(s[0] + s[1] + s[2] == n);
  }
  CHECK_THROWS_AS(split_sizes(10, SplitRatios{0.5, 0.2, 0.1}), InputError);
}

TEST_CASE("split is exact, stratified and deterministic") {
  GeneratorSpec spec = GeneratorSpec::defaults();
  spec.eeg_fraction = 0.0;
  const auto records = generate(spec).records;
  const Splits a = split(records, {}, 11), b = split(records, {}, 11), c = split(records, {}, 12);
  CHECK(a.train.size() == 1050);
  CHECK(a.val.size() == 300);
  CHECK(a.test.size() == 150);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.test != c.test);

  std::set<std::string> ids;
  for (const auto* part : {&a.train, &a.val, &a.test})
    for (const auto& r : *part) ids.insert(r.id);
  CHECK(ids.size() == 1500);

  std::array<double, kNumDreamTypes> overall{};
  for (const auto& r : records) overall[index(r.dream_type)] += 1.0 / 1500.0;
  for (const auto* part : {&a.train, &a.val, &a.test}) {
    std::array<double, kNumDreamTypes> share{};
    for (const auto& r : *part) share[index(r.dream_type)] += 1.0 / static_cast<double>(part->size());
    for (std::size_t t = 0; t < kNumDreamTypes; ++t) CHECK(std::abs(share[t] - overall[t]) <= 0.02);
  }
}

TEST_CASE("split keeps the original relative order") {
  const auto records = generate(dntest::small_spec(60, 5, 0.0)).records;
  const Splits s = split(records, {}, 1);
  auto position = [&](const std::string& id) {
    return std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.id == id; }) - records.begin();
  };
  for (std::size_t i = 1; i < s.train.size(); ++i) CHECK(position(s.train[i - 1].id) < position(s.train[i].id));
}

TEST_CASE("dataset save and load round trip") {
  dntest::TempDir dir("data");
  const auto data = generate(dntest::small_spec(25, 6, 0.4));
  save_dataset(dir.path() / "d.jsonl", data.records, data.eeg);
  CHECK(load_dataset(dir.path() / "d.jsonl") == data.records);
  for (const auto& [id, rec] : data.eeg) CHECK(std::filesystem::exists(dir.path() / (id + ".eeg")));

  save_dataset(dir.path() / "e.jsonl", data.records, data.eeg);
  CHECK(read_all(dir.path() / "d.jsonl") == read_all(dir.path() / "e.jsonl"));

  const std::string line = record_to_json(data.records[0]);
  CHECK(line.find("\"id\"") < line.find("\"text\""));
  CHECK(line.find("\"text\"") < line.find("\"themes\""));
  CHECK(line.find("\"emotions\"") < line.find("\"dream_type\""));
  CHECK(line.find("\"dream_type\"") < line.find("\"eeg_path\""));
}

TEST_CASE("record parsing errors name the line") {
  const std::string ok =
      R"({"id":"d1","text":"x","themes":[0,0,0,0,0,0,0,0,0,0,0,0],"emotions":[0,0,0,0,0,0,0,0],"dream_type":"lucid"})";
  const DreamRecord r = record_from_json(ok, 1);
  CHECK_FALSE(r.eeg_path.has_value());
  CHECK(r.dream_type == DreamType::kLucid);

  const std::string eleven =
      R"({"id":"d1","text":"x","themes":[0,0,0,0,0,0,0,0,0,0,0],"emotions":[0,0,0,0,0,0,0,0],"dream_type":"lucid"})";
  try {
    record_from_json(eleven, 4);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("line 4") != std::string::npos);
  }
  CHECK_THROWS_AS(record_from_json("{not json", 2), ParseError);
  CHECK_THROWS_AS(record_from_json(R"({"id":"d1"})", 2), SchemaError);

  dntest::TempDir dir("bad");
  {
    std::ofstream out(dir.path() / "bad.jsonl");
    out << ok << "\n" << eleven << "\n";
  }
  try {
    load_dataset(dir.path() / "bad.jsonl");
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(load_dataset(dir.path() / "missing.jsonl"), InputError);
}

TEST_CASE("key=value config parsing") {
  const KeyValueConfig cfg = KeyValueConfig::parse("# comment\n\n  a = 1.5 \nb=7\nflag=true\nlist=1,2,3\n");
  CHECK(cfg.get_double("a", 0.0) == 1.5);
  CHECK(cfg.get_size("b", 0) == 7);
  CHECK(cfg.get_bool("flag", false));
  CHECK(cfg.get_doubles("list", {}) == std::vector<double>{1, 2, 3});
  CHECK(cfg.get_string("missing", "x") == "x");
  CHECK_THROWS_AS(cfg.get_size("a", 0), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::parse("no equals sign"), ConfigError);
  CHECK(KeyValueConfig::parse(cfg.to_string()).entries() == cfg.entries());
}
