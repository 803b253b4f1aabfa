#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dreamnet/config.hpp"
#include "dreamnet/eeg.hpp"
#include "dreamnet/labels.hpp"

namespace dreamnet {

struct DreamRecord {
  std::string id;
  std::string text;
  std::array<std::uint8_t, kNumThemes> themes{};
  std::array<std::uint8_t, kNumEmotions> emotions{};
  DreamType dream_type = DreamType::kGeneral;
  std::optional<std::string> eeg_path;  // relative to the dataset file's directory

  friend bool operator==(const DreamRecord&, const DreamRecord&) = default;
};

// Synthetic-corpus parameters. Emotions follow a noisy-OR over active themes:
// P(emotion j) = 1 - (1 - base_j) * prod_k (1 - conditional[k][j]) over active themes k.
struct GeneratorSpec {
  std::size_t n = 1500;
  std::uint64_t seed = 7;
  std::array<double, kNumThemes> theme_marginals{};
  std::array<double, kNumEmotions> emotion_base{};
  std::array<std::array<double, kNumEmotions>, kNumThemes> conditional{};
  // Chance that an active emotion is also named in the narrative.
  double emotion_mention_prob = 0.5;
  // Keyword mentions per active theme, drawn uniformly from [min, max].
  std::size_t theme_mentions_min = 1;
  std::size_t theme_mentions_max = 2;
  // Chance that an inactive theme is mentioned in negated form ("no water").
  double negated_mention_prob = 0.1;
  double eeg_fraction = 400.0 / 1500.0;
  double mean_words = 150.0;
  double sd_words = 45.0;
  std::size_t min_words = 20;
  std::size_t max_words = 255;
  double eeg_emotion_gain = 1.0;
  std::size_t eeg_channels = 8;
  double eeg_seconds = 32.0;
  double eeg_sample_rate = 256.0;

  // Defaults with the falling -> anxiety phi coefficient planted at 0.9.
  static GeneratorSpec defaults();

  void validate() const;

  KeyValueConfig to_config() const;
  // Unknown keys are ignored; missing keys keep the defaults() value.
  static GeneratorSpec from_config(const KeyValueConfig& cfg);
};

// Closed-form population statistics of the generator.
double expected_emotion_rate(const GeneratorSpec& spec, std::size_t emotion);
// Pearson (phi) correlation between a theme indicator and an emotion indicator.
double expected_phi(const GeneratorSpec& spec, std::size_t theme, std::size_t emotion);
// Sets conditional[theme][emotion] so that expected_phi hits `target`.
// Throws ConfigError when the target is out of reach.
void plant_correlation(GeneratorSpec& spec, std::size_t theme, std::size_t emotion, double target);

// Keyword lexicon used by the generator for rendering and by the rule baseline.
const std::array<std::vector<std::string>, kNumThemes>& theme_keywords();
const std::array<std::vector<std::string>, kNumEmotions>& emotion_words();

struct GeneratedDataset {
  std::vector<DreamRecord> records;
  std::map<std::string, eeg::EegRecording> eeg;  // keyed by record id
};

GeneratedDataset generate(const GeneratorSpec& spec);

struct SplitRatios {
  double train = 0.70;
  double val = 0.20;
  double test = 0.10;
};

struct Splits {
  std::vector<DreamRecord> train;
  std::vector<DreamRecord> val;
  std::vector<DreamRecord> test;
};

// Largest-remainder split sizes for n items.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios);

// Stratified by dream type, deterministic per seed; records keep their
// original relative order inside each split.
Splits split(std::span<const DreamRecord> records, const SplitRatios& ratios, std::uint64_t seed);

// JSON-lines IO. EEG sidecars are written next to the dataset file as <id>.eeg.
void save_dataset(const std::filesystem::path& path, std::span<const DreamRecord> records,
                  const std::map<std::string, eeg::EegRecording>& eeg = {});
std::vector<DreamRecord> load_dataset(const std::filesystem::path& path);

std::string record_to_json(const DreamRecord& rec);
// Throws ParseError/SchemaError; `line` is used in messages.
DreamRecord record_from_json(const std::string& text, std::size_t line);

}  // namespace dreamnet
