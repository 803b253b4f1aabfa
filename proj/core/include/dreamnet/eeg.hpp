#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace dreamnet::eeg {

struct Band {
  double lo_hz;
  double hi_hz;
};

inline constexpr Band kDelta{0.5, 4.0};
inline constexpr Band kTheta{4.0, 8.0};
inline constexpr Band kAlpha{8.0, 12.0};
inline constexpr Band kAnalysisBand{0.5, 12.0};

struct EegRecording {
  double sample_rate = 256.0;
  std::vector<std::vector<double>> channels;  // microvolts

  std::size_t samples() const { return channels.empty() ? 0 : channels.front().size(); }
  // Throws InputError/ConfigError when the invariants do not hold.
  void validate() const;
};

// Binary sidecar format: ASCII header line "EEG1 <fs> <channels> <samples>\n"
// followed by little-endian float32 samples, channel-major.
void write_eeg(const std::filesystem::path& path, const EegRecording& rec);
EegRecording read_eeg(const std::filesystem::path& path);

// Discrete Fourier transform of arbitrary length (radix-2, Bluestein otherwise).
std::vector<std::complex<double>> fft(std::vector<std::complex<double>> x, bool inverse = false);

// Zero-phase brick-wall filter keeping bins with lo <= f <= hi.
std::vector<double> bandpass(std::span<const double> signal, double fs, Band band = kAnalysisBand);

struct Psd {
  double bin_hz = 0.0;         // spacing; bin k is centred on k * bin_hz
  std::vector<double> power;   // one-sided density, window_len/2 + 1 bins
};

// Hann-windowed, overlapping, averaged periodograms.
Psd welch_psd(std::span<const double> signal, double fs, std::size_t window_len = 512, double overlap = 0.5);

// Sum of PSD bins whose centre frequency lies in [lo, hi).
double band_power(const Psd& psd, Band band);

struct FeatureOptions {
  std::size_t dim = 768;
  double window_sec = 2.0;
  double hop_sec = 1.0;
};

std::size_t window_count(std::size_t samples, double fs, const FeatureOptions& opts);

// Per sliding window and channel, delta/theta/alpha power of the band-passed
// signal, laid out window-major then channel then band. The raw vector is
// zero-padded (or mean-pooled) to opts.dim and then min-max scaled to [0, 1]
// over the whole length-dim vector.
std::vector<double> featurize(const EegRecording& rec, const FeatureOptions& opts = {});

}  // namespace dreamnet::eeg
