#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

namespace dreamnet {

inline constexpr std::size_t kNumThemes = 12;
inline constexpr std::size_t kNumEmotions = 8;
inline constexpr std::size_t kNumLabels = kNumEmotions + kNumThemes;
inline constexpr std::size_t kNumDreamTypes = 6;

inline constexpr std::array<std::string_view, kNumThemes> kThemeNames = {
    "flying", "falling", "pursuit", "loss",           "social_interaction", "water",
    "animals", "death",  "transformation", "school", "food",               "travel"};

inline constexpr std::array<std::string_view, kNumEmotions> kEmotionNames = {
    "joy", "fear", "anxiety", "sadness", "anger", "surprise", "disgust", "calmness"};

inline constexpr std::array<std::string_view, kNumDreamTypes> kDreamTypeNames = {
    "general", "lucid", "nightmare", "recurrent", "sparse", "surreal"};

enum class Theme : std::size_t {
  kFlying, kFalling, kPursuit, kLoss, kSocialInteraction, kWater,
  kAnimals, kDeath, kTransformation, kSchool, kFood, kTravel
};

enum class Emotion : std::size_t { kJoy, kFear, kAnxiety, kSadness, kAnger, kSurprise, kDisgust, kCalmness };

enum class DreamType : std::size_t { kGeneral, kLucid, kNightmare, kRecurrent, kSparse, kSurreal };

constexpr std::size_t index(Theme t) { return static_cast<std::size_t>(t); }
constexpr std::size_t index(Emotion e) { return static_cast<std::size_t>(e); }
constexpr std::size_t index(DreamType d) { return static_cast<std::size_t>(d); }

constexpr std::string_view name(DreamType d) { return kDreamTypeNames[index(d)]; }

constexpr std::optional<DreamType> parse_dream_type(std::string_view s) {
  for (std::size_t i = 0; i < kNumDreamTypes; ++i) {
    if (kDreamTypeNames[i] == s) return static_cast<DreamType>(i);
  }
  return std::nullopt;
}

template <std::size_t N>
constexpr std::optional<std::size_t> find_name(const std::array<std::string_view, N>& names, std::string_view s) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return i;
  }
  return std::nullopt;
}

}  // namespace dreamnet
