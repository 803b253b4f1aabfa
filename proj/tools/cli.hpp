#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dreamnet/config.hpp"
#include "dreamnet/dataset.hpp"
#include "dreamnet/eeg.hpp"
#include "dreamnet/model.hpp"
#include "dreamnet/training.hpp"

namespace dreamnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

// Everything a subcommand needs, as one flat key=value namespace. The
// generator, model and training sections share the `seed` and `dropout` keys.
struct RunConfig {
  GeneratorSpec gen = GeneratorSpec::defaults();
  ModelConfig model;
  TrainConfig train;
  SplitRatios split;
  eeg::FeatureOptions features;

  std::filesystem::path data;
  std::filesystem::path out = "data/dreams.jsonl";
  std::filesystem::path ckpt;
  std::filesystem::path init_ckpt;
  std::filesystem::path report_dir = "reports";

  std::uint64_t seed = 7;
  std::size_t vocab_min_freq = 2;
  std::vector<std::uint64_t> ablation_seeds = {1, 2, 3, 4, 5};
  std::size_t n_perm = 10000;
  std::size_t kfold_k = 5;
  std::size_t gradcheck_coords = 40;
  double gradcheck_eps = 1e-4;
  double gradcheck_min_scale = 1e-6;
  double gradcheck_tolerance = 1e-4;

  // Throws ConfigError on unknown keys or malformed values.
  static RunConfig from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;
};

// Every key RunConfig understands.
std::vector<std::string> known_keys();

// Runs one subcommand; returns the process exit code. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dreamnet::cli
