#pragma once

// Shared fixtures for the unit tests: seeded generators and scratch directories.

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "dreamnet/dataset.hpp"
#include "dreamnet/rng.hpp"
#include "dreamnet/tensor.hpp"

namespace dntest {

inline dreamnet::Tensor random_tensor(dreamnet::Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  dreamnet::Tensor t = dreamnet::Tensor::zeros(rows, cols);
  for (double& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("dreamnet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Short narratives keep model tests fast.
inline dreamnet::GeneratorSpec small_spec(std::size_t n, std::uint64_t seed, double eeg_fraction = 0.5) {
  auto spec = dreamnet::GeneratorSpec::defaults();
  spec.n = n;
  spec.seed = seed;
  spec.eeg_fraction = eeg_fraction;
  spec.mean_words = 12;
  spec.sd_words = 3;
  spec.min_words = 6;
  spec.eeg_seconds = 8;
  spec.eeg_channels = 4;
  return spec;
}

}  // namespace dntest
