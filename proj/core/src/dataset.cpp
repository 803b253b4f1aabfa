#include "dreamnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "dreamnet/errors.hpp"
#include "dreamnet/rng.hpp"

namespace dreamnet {

namespace {

using ordered_json = nlohmann::ordered_json;

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = {
      "i",      "was",    "in",     "the",    "a",      "and",     "then",    "there",  "my",     "old",
      "house",  "room",   "street", "light",  "door",   "window",  "someone", "friend", "mother", "brother",
      "it",     "felt",   "like",   "we",     "were",   "walking", "looking", "around", "at",     "big",
      "small",  "red",    "blue",   "green",  "night",  "morning", "after",   "before", "saw",    "heard",
      "voice",  "music",  "table",  "chair",  "road",   "hill",    "field",   "city",   "town",   "car",
      "phone",  "book",   "letter", "strange", "quiet", "loud",    "bright",  "dark",   "long",   "short",
      "down",   "up",     "through", "toward", "inside", "outside", "again",  "suddenly", "slowly", "everyone",
      "nobody", "people", "place",  "time",   "color",  "wall",    "floor",   "stairs", "garden", "sky"};
  return words;
}

double solve_bisect(double lo, double hi, double target, const auto& f) {
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) < target) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

// P(emotion absent | theme state) under the noisy-OR with other themes marginalised.
double absent_given(const GeneratorSpec& spec, std::size_t theme, std::size_t emotion, bool theme_on) {
  double p = 1.0 - spec.emotion_base[emotion];
  for (std::size_t k = 0; k < kNumThemes; ++k) {
    if (k == theme) {
      if (theme_on) p *= 1.0 - spec.conditional[k][emotion];
    } else {
      p *= 1.0 - spec.theme_marginals[k] * spec.conditional[k][emotion];
    }
  }
  return p;
}

std::size_t sample_length(Rng& rng, const GeneratorSpec& spec, double scale) {
  const double mean = spec.mean_words * scale;
  const double sd = spec.sd_words * scale;
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double v = std::round(rng.normal(mean, sd));
    if (v >= static_cast<double>(spec.min_words) && v <= static_cast<double>(spec.max_words)) {
      return static_cast<std::size_t>(v);
    }
  }
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(0.0, std::round(mean))), spec.min_words,
                                 spec.max_words);
}

std::string render_text(Rng& rng, const GeneratorSpec& spec, const DreamRecord& rec) {
  std::vector<std::string> required;
  for (std::size_t k = 0; k < kNumThemes; ++k) {
    if (!rec.themes[k]) continue;
    const auto& kws = theme_keywords()[k];
    const std::size_t count = spec.theme_mentions_min + rng.below(spec.theme_mentions_max - spec.theme_mentions_min + 1);
    for (std::size_t c = 0; c < count; ++c) required.push_back(kws[rng.below(kws.size())]);
  }
  for (std::size_t j = 0; j < kNumEmotions; ++j) {
    if (rec.emotions[j] && rng.bernoulli(spec.emotion_mention_prob)) {
      const auto& ws = emotion_words()[j];
      required.push_back(ws[rng.below(ws.size())]);
    }
  }
  for (std::size_t k = 0; k < kNumThemes; ++k) {
    if (rec.themes[k] || !rng.bernoulli(spec.negated_mention_prob)) continue;
    const auto& kws = theme_keywords()[k];
    required.push_back("no " + kws[rng.below(kws.size())]);
  }
  const double scale = rec.dream_type == DreamType::kSparse ? 0.5 : 1.0;
  std::size_t required_words = 0;
  for (const auto& w : required) required_words += 1 + static_cast<std::size_t>(std::count(w.begin(), w.end(), ' '));
  // Mentions are added on top of the sampled filler length rather than
  // displacing filler; otherwise the amount of filler would leak how many
  // labels are active.
  const std::size_t budget = spec.max_words > required_words ? spec.max_words - required_words : 0;
  const std::size_t filler_count = std::min(sample_length(rng, spec, scale), budget);
  std::vector<std::string> words;
  words.reserve(filler_count + required.size());
  const auto& filler = filler_words();
  for (std::size_t i = 0; i < filler_count; ++i) words.push_back(filler[rng.below(filler.size())]);
  for (auto& w : required) {
    const std::size_t pos = rng.below(words.size() + 1);
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos), w);
  }
  std::string text;
  std::size_t since_period = 0;
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::string w = words[i];
    if (since_period == 0 && !w.empty()) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    if (!text.empty()) text += ' ';
    text += w;
    ++since_period;
    if (since_period >= 8 && rng.bernoulli(0.2)) {
      text += '.';
      since_period = 0;
    }
  }
  if (!text.empty() && text.back() != '.') text += '.';
  return text;
}

// Band-limited noise whose delta/theta/alpha power per channel is shifted by
// the active emotions.
eeg::EegRecording synthesize_eeg(Rng& rng, const GeneratorSpec& spec, const DreamRecord& rec) {
  const double fs = spec.eeg_sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(spec.eeg_seconds * fs));
  const std::array<eeg::Band, 3> bands = {eeg::kDelta, eeg::kTheta, eeg::kAlpha};
  const std::array<double, 3> base_power = {1.0, 0.6, 0.4};
  eeg::EegRecording out;
  out.sample_rate = fs;
  const double df = fs / static_cast<double>(n);
  for (std::size_t c = 0; c < spec.eeg_channels; ++c) {
    std::array<double, 3> power{};
    for (std::size_t b = 0; b < 3; ++b) {
      power[b] = base_power[b] * std::exp(0.25 * rng.normal());
      for (std::size_t j = 0; j < kNumEmotions; ++j) {
        if (!rec.emotions[j]) continue;
        // emotion j marks band j % 3 on channels j and j + 3
        const bool on_channel = (c % kNumEmotions == j) || (c % kNumEmotions == (j + 3) % kNumEmotions);
        if (on_channel && b == j % 3) power[b] *= 1.0 + spec.eeg_emotion_gain;
      }
    }
    std::vector<std::complex<double>> spec_bins(n);
    for (auto& v : spec_bins) v = {rng.normal(), 0.0};
    spec_bins = eeg::fft(std::move(spec_bins));
    for (std::size_t k = 0; k < n; ++k) {
      const double f = static_cast<double>(std::min(k, n - k)) * df;
      double amp = 0.05;
      for (std::size_t b = 0; b < 3; ++b) {
        if (f >= bands[b].lo_hz && f < bands[b].hi_hz) {
          amp = std::sqrt(power[b] / (bands[b].hi_hz - bands[b].lo_hz));
        }
      }
      spec_bins[k] *= amp;
    }
    spec_bins = eeg::fft(std::move(spec_bins), true);
    std::vector<double> signal(n);
    // 10 uV nominal scale
    for (std::size_t i = 0; i < n; ++i) signal[i] = 10.0 * spec_bins[i].real() / static_cast<double>(n);
    out.channels.push_back(std::move(signal));
  }
  return out;
}

void check_probability(double p, const std::string& what) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("generator spec: " + what + " must lie in [0, 1]");
}

std::string record_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "dream_%05zu", i + 1);
  return buf;
}

}  // namespace

const std::array<std::vector<std::string>, kNumThemes>& theme_keywords() {
  static const std::array<std::vector<std::string>, kNumThemes> kws = {{
      {"flying", "soaring", "wings", "floated"},
      {"falling", "fell", "cliff", "plunged"},
      {"chased", "pursued", "running", "escape"},
      {"lost", "missing", "gone", "vanished"},
      {"party", "conversation", "crowd", "meeting"},
      {"water", "ocean", "river", "swimming"},
      {"dog", "cat", "snake", "horse"},
      {"death", "funeral", "dying", "grave"},
      {"transformed", "became", "changed", "morphing"},
      {"school", "exam", "teacher", "classroom"},
      {"food", "eating", "bread", "feast"},
      {"train", "airport", "journey", "suitcase"},
  }};
  return kws;
}

const std::array<std::vector<std::string>, kNumEmotions>& emotion_words() {
  static const std::array<std::vector<std::string>, kNumEmotions> words = {{
      {"happy", "joyful"},
      {"scared", "terrified"},
      {"anxious", "nervous"},
      {"sad", "crying"},
      {"angry", "furious"},
      {"surprised", "astonished"},
      {"disgusted", "revolted"},
      {"calm", "peaceful"},
  }};
  return words;
}

GeneratorSpec GeneratorSpec::defaults() {
  GeneratorSpec s;
  s.theme_marginals = {0.25, 0.25, 0.20, 0.15, 0.30, 0.15, 0.15, 0.10, 0.10, 0.15, 0.15, 0.20};
  s.emotion_base = {0.03, 0.03, 0.02, 0.03, 0.03, 0.03, 0.03, 0.03};
  auto set = [&s](Theme t, Emotion e, double p) { s.conditional[index(t)][index(e)] = p; };
  set(Theme::kFlying, Emotion::kJoy, 0.7);
  set(Theme::kFlying, Emotion::kSurprise, 0.4);
  set(Theme::kFlying, Emotion::kCalmness, 0.3);
  set(Theme::kFalling, Emotion::kFear, 0.4);
  set(Theme::kPursuit, Emotion::kFear, 0.8);
  set(Theme::kPursuit, Emotion::kAnger, 0.2);
  set(Theme::kLoss, Emotion::kSadness, 0.8);
  set(Theme::kSocialInteraction, Emotion::kJoy, 0.5);
  set(Theme::kSocialInteraction, Emotion::kAnger, 0.3);
  set(Theme::kSocialInteraction, Emotion::kSurprise, 0.2);
  set(Theme::kWater, Emotion::kCalmness, 0.6);
  set(Theme::kWater, Emotion::kFear, 0.2);
  set(Theme::kAnimals, Emotion::kSurprise, 0.4);
  set(Theme::kAnimals, Emotion::kFear, 0.3);
  set(Theme::kAnimals, Emotion::kJoy, 0.3);
  set(Theme::kDeath, Emotion::kSadness, 0.7);
  set(Theme::kDeath, Emotion::kFear, 0.5);
  set(Theme::kTransformation, Emotion::kSurprise, 0.7);
  set(Theme::kTransformation, Emotion::kDisgust, 0.3);
  set(Theme::kSchool, Emotion::kAnger, 0.3);
  set(Theme::kSchool, Emotion::kSadness, 0.2);
  set(Theme::kFood, Emotion::kJoy, 0.5);
  set(Theme::kFood, Emotion::kDisgust, 0.4);
  set(Theme::kTravel, Emotion::kCalmness, 0.5);
  set(Theme::kTravel, Emotion::kJoy, 0.4);
  plant_correlation(s, index(Theme::kFalling), index(Emotion::kAnxiety), 0.9);
  return s;
}

void GeneratorSpec::validate() const {
  for (double p : theme_marginals) check_probability(p, "theme marginal");
  for (double p : emotion_base) check_probability(p, "emotion base rate");
  for (const auto& row : conditional)
    for (double p : row) check_probability(p, "conditional probability");
  check_probability(emotion_mention_prob, "emotion_mention_prob");
  check_probability(negated_mention_prob, "negated_mention_prob");
  if (theme_mentions_min == 0 || theme_mentions_max < theme_mentions_min) {
    throw ConfigError("theme_mentions_min must be >= 1 and <= theme_mentions_max");
  }
  check_probability(eeg_fraction, "eeg_fraction");
  if (min_words == 0 || min_words > max_words) throw ConfigError("generator spec: invalid word-count bounds");
  if (!(sd_words >= 0.0)) throw ConfigError("generator spec: sd_words must be non-negative");
  if (!(eeg_emotion_gain >= 0.0)) throw ConfigError("generator spec: eeg_emotion_gain must be non-negative");
  if (eeg_channels == 0) throw ConfigError("generator spec: eeg_channels must be positive");
  if (!(eeg_sample_rate > 2.0 * eeg::kAnalysisBand.hi_hz)) throw ConfigError("generator spec: sample rate too low");
  if (!(eeg_seconds >= 2.0)) throw ConfigError("generator spec: eeg_seconds must cover one 2 s window");
}

KeyValueConfig GeneratorSpec::to_config() const {
  KeyValueConfig cfg;
  auto join = [](auto begin, auto end) {
    std::string s;
    for (auto it = begin; it != end; ++it) {
      if (!s.empty()) s += ',';
      s += format_double(*it);
    }
    return s;
  };
  cfg.set("n", std::to_string(n));
  cfg.set("seed", std::to_string(seed));
  cfg.set("theme_marginals", join(theme_marginals.begin(), theme_marginals.end()));
  cfg.set("emotion_base", join(emotion_base.begin(), emotion_base.end()));
  for (std::size_t k = 0; k < kNumThemes; ++k) {
    cfg.set("conditional." + std::string(kThemeNames[k]), join(conditional[k].begin(), conditional[k].end()));
  }
  cfg.set("emotion_mention_prob", format_double(emotion_mention_prob));
  cfg.set("negated_mention_prob", format_double(negated_mention_prob));
  cfg.set("theme_mentions_min", std::to_string(theme_mentions_min));
  cfg.set("theme_mentions_max", std::to_string(theme_mentions_max));
  cfg.set("eeg_fraction", format_double(eeg_fraction));
  cfg.set("mean_words", format_double(mean_words));
  cfg.set("sd_words", format_double(sd_words));
  cfg.set("min_words", std::to_string(min_words));
  cfg.set("max_words", std::to_string(max_words));
  cfg.set("eeg_emotion_gain", format_double(eeg_emotion_gain));
  cfg.set("eeg_channels", std::to_string(eeg_channels));
  cfg.set("eeg_seconds", format_double(eeg_seconds));
  cfg.set("eeg_sample_rate", format_double(eeg_sample_rate));
  return cfg;
}

GeneratorSpec GeneratorSpec::from_config(const KeyValueConfig& cfg) {
  GeneratorSpec s = defaults();
  auto fill = [&cfg](const std::string& key, auto& arr) {
    std::vector<double> fallback(arr.begin(), arr.end());
    const auto v = cfg.get_doubles(key, fallback);
    if (v.size() != arr.size()) {
      throw ConfigError("config key '" + key + "': expected " + std::to_string(arr.size()) + " values");
    }
    std::copy(v.begin(), v.end(), arr.begin());
  };
  s.n = cfg.get_size("n", s.n);
  s.seed = static_cast<std::uint64_t>(cfg.get_size("seed", static_cast<std::size_t>(s.seed)));
  fill("theme_marginals", s.theme_marginals);
  fill("emotion_base", s.emotion_base);
  for (std::size_t k = 0; k < kNumThemes; ++k) fill("conditional." + std::string(kThemeNames[k]), s.conditional[k]);
  s.emotion_mention_prob = cfg.get_double("emotion_mention_prob", s.emotion_mention_prob);
  s.negated_mention_prob = cfg.get_double("negated_mention_prob", s.negated_mention_prob);
  s.theme_mentions_min = cfg.get_size("theme_mentions_min", s.theme_mentions_min);
  s.theme_mentions_max = cfg.get_size("theme_mentions_max", s.theme_mentions_max);
  s.eeg_fraction = cfg.get_double("eeg_fraction", s.eeg_fraction);
  s.mean_words = cfg.get_double("mean_words", s.mean_words);
  s.sd_words = cfg.get_double("sd_words", s.sd_words);
  s.min_words = cfg.get_size("min_words", s.min_words);
  s.max_words = cfg.get_size("max_words", s.max_words);
  s.eeg_emotion_gain = cfg.get_double("eeg_emotion_gain", s.eeg_emotion_gain);
  s.eeg_channels = cfg.get_size("eeg_channels", s.eeg_channels);
  s.eeg_seconds = cfg.get_double("eeg_seconds", s.eeg_seconds);
  s.eeg_sample_rate = cfg.get_double("eeg_sample_rate", s.eeg_sample_rate);
  if (cfg.contains("plant_falling_anxiety")) {
    plant_correlation(s, index(Theme::kFalling), index(Emotion::kAnxiety),
                      cfg.get_double("plant_falling_anxiety", 0.9));
  }
  s.validate();
  return s;
}

double expected_emotion_rate(const GeneratorSpec& spec, std::size_t emotion) {
  double absent = 1.0 - spec.emotion_base[emotion];
  for (std::size_t k = 0; k < kNumThemes; ++k) absent *= 1.0 - spec.theme_marginals[k] * spec.conditional[k][emotion];
  return 1.0 - absent;
}

double expected_phi(const GeneratorSpec& spec, std::size_t theme, std::size_t emotion) {
  const double a = spec.theme_marginals[theme];
  const double p1 = 1.0 - absent_given(spec, theme, emotion, true);
  const double p0 = 1.0 - absent_given(spec, theme, emotion, false);
  const double q = a * p1 + (1.0 - a) * p0;
  const double denom = std::sqrt(a * (1.0 - a) * q * (1.0 - q));
  if (denom <= 0.0) return 0.0;
  return (a * p1 - a * q) / denom;
}

void plant_correlation(GeneratorSpec& spec, std::size_t theme, std::size_t emotion, double target) {
  auto phi_at = [&](double c) {
    GeneratorSpec trial = spec;
    trial.conditional[theme][emotion] = c;
    return expected_phi(trial, theme, emotion);
  };
  const double lo = phi_at(0.0), hi = phi_at(1.0);
  if (target < lo || target > hi) {
    throw ConfigError("cannot plant correlation " + format_double(target) + " for " +
                      std::string(kThemeNames[theme]) + "/" + std::string(kEmotionNames[emotion]) +
                      "; reachable range is [" + format_double(lo) + ", " + format_double(hi) + "]");
  }
  spec.conditional[theme][emotion] = solve_bisect(0.0, 1.0, target, phi_at);
}

GeneratedDataset generate(const GeneratorSpec& spec) {
  spec.validate();
  GeneratedDataset out;
  Rng rng(spec.seed);

  const auto eeg_count = static_cast<std::size_t>(std::llround(spec.eeg_fraction * static_cast<double>(spec.n)));
  std::vector<std::size_t> order(spec.n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<bool> has_eeg(spec.n, false);
  for (std::size_t i = 0; i < std::min(eeg_count, spec.n); ++i) has_eeg[order[i]] = true;

  out.records.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    DreamRecord rec;
    rec.id = record_id(i);
    for (std::size_t k = 0; k < kNumThemes; ++k) rec.themes[k] = rng.bernoulli(spec.theme_marginals[k]) ? 1 : 0;
    for (std::size_t j = 0; j < kNumEmotions; ++j) {
      double absent = 1.0 - spec.emotion_base[j];
      for (std::size_t k = 0; k < kNumThemes; ++k) {
        if (rec.themes[k]) absent *= 1.0 - spec.conditional[k][j];
      }
      rec.emotions[j] = rng.bernoulli(1.0 - absent) ? 1 : 0;
    }
    rec.dream_type = static_cast<DreamType>(rng.below(kNumDreamTypes));
    rec.text = render_text(rng, spec, rec);
    if (has_eeg[i]) {
      rec.eeg_path = rec.id + ".eeg";
      Rng eeg_rng(mix_seed(spec.seed, i));
      out.eeg.emplace(rec.id, synthesize_eeg(eeg_rng, spec, rec));
    }
    out.records.push_back(std::move(rec));
  }
  return out;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios) {
  const std::array<double, 3> r = {ratios.train, ratios.val, ratios.test};
  for (double v : r) {
    if (!(v >= 0.0)) throw InputError("split ratios must be non-negative");
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw InputError("split ratios must sum to 1");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const double exact = r[s] * static_cast<double>(n);
    // tolerate representation error such as 0.7 * 1500 = 1049.999...
    const double fl = std::floor(exact + 1e-9);
    sizes[s] = static_cast<std::size_t>(fl);
    frac[s] = exact - fl;
    assigned += sizes[s];
  }
  std::array<std::size_t, 3> idx = {0, 1, 2};
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++sizes[idx[i % 3]];
  return sizes;
}

Splits split(std::span<const DreamRecord> records, const SplitRatios& ratios, std::uint64_t seed) {
  const std::size_t n = records.size();
  const auto totals = split_sizes(n, ratios);
  const std::array<double, 3> r = {ratios.train, ratios.val, ratios.test};

  std::array<std::vector<std::size_t>, kNumDreamTypes> groups;
  for (std::size_t i = 0; i < n; ++i) groups[index(records[i].dream_type)].push_back(i);
  Rng rng(seed);
  for (auto& g : groups) rng.shuffle(g);

  // Per-group floors, then hand out the leftovers by largest fractional part
  // while respecting the exact overall totals.
  std::array<std::array<std::size_t, 3>, kNumDreamTypes> quota{};
  std::array<std::size_t, kNumDreamTypes> group_left{};
  std::array<std::size_t, 3> need = totals;
  struct Cell {
    double frac;
    std::size_t group, split;
  };
  std::vector<Cell> cells;
  for (std::size_t g = 0; g < kNumDreamTypes; ++g) {
    std::size_t used = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      const double exact = r[s] * static_cast<double>(groups[g].size());
      const auto fl = static_cast<std::size_t>(std::floor(exact + 1e-9));
      quota[g][s] = std::min(fl, need[s]);
      need[s] -= quota[g][s];
      used += quota[g][s];
      cells.push_back({exact - std::floor(exact + 1e-9), g, s});
    }
    group_left[g] = groups[g].size() - used;
  }
  std::stable_sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) { return a.frac > b.frac; });
  for (const Cell& c : cells) {
    if (group_left[c.group] > 0 && need[c.split] > 0) {
      ++quota[c.group][c.split];
      --group_left[c.group];
      --need[c.split];
    }
  }
  for (std::size_t g = 0; g < kNumDreamTypes; ++g) {
    for (std::size_t s = 0; s < 3 && group_left[g] > 0; ++s) {
      const std::size_t take = std::min(group_left[g], need[s]);
      quota[g][s] += take;
      group_left[g] -= take;
      need[s] -= take;
    }
  }

  std::array<std::vector<std::size_t>, 3> members;
  for (std::size_t g = 0; g < kNumDreamTypes; ++g) {
    std::size_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t k = 0; k < quota[g][s]; ++k) members[s].push_back(groups[g][pos++]);
    }
  }
  Splits out;
  std::array<std::vector<DreamRecord>*, 3> dst = {&out.train, &out.val, &out.test};
  for (std::size_t s = 0; s < 3; ++s) {
    std::sort(members[s].begin(), members[s].end());
    for (std::size_t i : members[s]) dst[s]->push_back(records[i]);
  }
  return out;
}

std::string record_to_json(const DreamRecord& rec) {
  ordered_json j;
  j["id"] = rec.id;
  j["text"] = rec.text;
  j["themes"] = std::vector<int>(rec.themes.begin(), rec.themes.end());
  j["emotions"] = std::vector<int>(rec.emotions.begin(), rec.emotions.end());
  j["dream_type"] = std::string(name(rec.dream_type));
  j["eeg_path"] = rec.eeg_path ? ordered_json(*rec.eeg_path) : ordered_json(nullptr);
  return j.dump();
}

DreamRecord record_from_json(const std::string& text, std::size_t line) {
  const std::string where = "line " + std::to_string(line);
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(where + ": malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw SchemaError(where + ": expected a JSON object");
  auto require = [&](const char* key) -> const ordered_json& {
    if (!j.contains(key)) throw SchemaError(where + ": missing key '" + key + "'");
    return j.at(key);
  };
  DreamRecord rec;
  const auto& id = require("id");
  const auto& txt = require("text");
  if (!id.is_string() || !txt.is_string()) throw SchemaError(where + ": 'id' and 'text' must be strings");
  rec.id = id.get<std::string>();
  rec.text = txt.get<std::string>();
  auto read_bits = [&](const char* key, auto& dst) {
    const auto& arr = require(key);
    if (!arr.is_array() || arr.size() != dst.size()) {
      throw SchemaError(where + ": '" + key + "' must hold exactly " + std::to_string(dst.size()) + " entries");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (!arr[i].is_number_integer() || (arr[i].get<int>() != 0 && arr[i].get<int>() != 1)) {
        throw SchemaError(where + ": '" + key + "' entries must be 0 or 1");
      }
      dst[i] = static_cast<std::uint8_t>(arr[i].get<int>());
    }
  };
  read_bits("themes", rec.themes);
  read_bits("emotions", rec.emotions);
  const auto& type = require("dream_type");
  const auto parsed = type.is_string() ? parse_dream_type(type.get<std::string>()) : std::nullopt;
  if (!parsed) throw SchemaError(where + ": unknown dream_type");
  rec.dream_type = *parsed;
  if (j.contains("eeg_path") && !j["eeg_path"].is_null()) {
    if (!j["eeg_path"].is_string()) throw SchemaError(where + ": 'eeg_path' must be a string");
    rec.eeg_path = j["eeg_path"].get<std::string>();
  }
  return rec;
}

void save_dataset(const std::filesystem::path& path, std::span<const DreamRecord> records,
                  const std::map<std::string, eeg::EegRecording>& eeg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write dataset " + path.string());
  for (const auto& rec : records) out << record_to_json(rec) << '\n';
  if (!out) throw InputError("failed writing dataset " + path.string());
  const auto dir = path.parent_path();
  for (const auto& rec : records) {
    if (!rec.eeg_path) continue;
    auto it = eeg.find(rec.id);
    if (it != eeg.end()) eeg::write_eeg(dir / *rec.eeg_path, it->second);
  }
}

std::vector<DreamRecord> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read dataset " + path.string());
  std::vector<DreamRecord> records;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    try {
      records.push_back(record_from_json(line, line_no));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": " + e.what());
    } catch (const SchemaError& e) {
      throw SchemaError(path.string() + ": " + e.what());
    }
  }
  return records;
}

}  // namespace dreamnet
