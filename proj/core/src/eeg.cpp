#include "dreamnet/eeg.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "dreamnet/errors.hpp"

namespace dreamnet::eeg {

namespace {

using cd = std::complex<double>;

void fft_pow2(std::vector<cd>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        // Twiddles from std::polar each time; avoids drift from repeated multiplication.
        const cd w = std::polar(1.0, ang * static_cast<double>(k));
        const cd u = a[i + k];
        const cd v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

std::vector<cd> bluestein(const std::vector<cd>& x, bool inverse) {
  const std::size_t n = x.size();
  const std::size_t m = std::bit_ceil(2 * n - 1);
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<cd> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small
    const auto k2 = static_cast<std::uint64_t>(k) * k % (2 * n);
    chirp[k] = std::polar(1.0, sign * std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n));
  }
  std::vector<cd> a(m), b(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * chirp[k];
  b[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) b[k] = b[m - k] = std::conj(chirp[k]);
  fft_pow2(a, false);
  fft_pow2(b, false);
  for (std::size_t i = 0; i < m; ++i) a[i] *= b[i];
  fft_pow2(a, true);
  std::vector<cd> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * chirp[k] / static_cast<double>(m);
  return out;
}

void hann_periodic(std::vector<double>& w) {
  const std::size_t n = w.size();
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n)));
  }
}

}  // namespace

void EegRecording::validate() const {
  if (!(sample_rate > 2.0 * kAnalysisBand.hi_hz)) {
    throw ConfigError("EEG sample rate " + std::to_string(sample_rate) + " Hz must exceed " +
                      std::to_string(2.0 * kAnalysisBand.hi_hz) + " Hz");
  }
  for (const auto& ch : channels) {
    if (ch.size() != samples()) throw InputError("EEG channels have unequal lengths");
  }
}

std::vector<cd> fft(std::vector<cd> x, bool inverse) {
  if (x.size() <= 1) return x;
  if (std::has_single_bit(x.size())) {
    fft_pow2(x, inverse);
    return x;
  }
  return bluestein(x, inverse);
}

std::vector<double> bandpass(std::span<const double> signal, double fs, Band band) {
  if (!(fs > 2.0 * band.hi_hz)) {
    throw ConfigError("bandpass: sample rate " + std::to_string(fs) + " Hz must exceed twice the upper cutoff");
  }
  if (signal.size() < 2) throw InputError("bandpass: signal needs at least 2 samples");
  const std::size_t n = signal.size();
  std::vector<cd> spec(signal.begin(), signal.end());
  spec = fft(std::move(spec));
  const double df = fs / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    // Bin k and its mirror n-k share frequency min(k, n-k) * df.
    const double f = static_cast<double>(std::min(k, n - k)) * df;
    if (f < band.lo_hz || f > band.hi_hz) spec[k] = 0.0;
  }
  spec = fft(std::move(spec), true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = spec[i].real() / static_cast<double>(n);
  return out;
}

Psd welch_psd(std::span<const double> signal, double fs, std::size_t window_len, double overlap) {
  if (window_len < 2) throw InputError("welch_psd: window must hold at least 2 samples");
  if (signal.size() < window_len) {
    throw InputError("welch_psd: signal of " + std::to_string(signal.size()) + " samples is shorter than one " +
                     std::to_string(window_len) + "-sample window");
  }
  if (!(overlap >= 0.0 && overlap < 1.0)) throw InputError("welch_psd: overlap must lie in [0, 1)");
  const auto hop = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(static_cast<double>(window_len) * (1.0 - overlap))));
  std::vector<double> window(window_len);
  hann_periodic(window);
  double wss = 0.0;
  for (double w : window) wss += w * w;
  const double scale = 1.0 / (fs * wss);

  const std::size_t bins = window_len / 2 + 1;
  Psd psd{fs / static_cast<double>(window_len), std::vector<double>(bins, 0.0)};
  std::size_t segments = 0;
  for (std::size_t start = 0; start + window_len <= signal.size(); start += hop) {
    std::vector<cd> seg(window_len);
    for (std::size_t i = 0; i < window_len; ++i) seg[i] = signal[start + i] * window[i];
    seg = fft(std::move(seg));
    for (std::size_t k = 0; k < bins; ++k) {
      double p = std::norm(seg[k]) * scale;
      // one-sided: fold negative frequencies except DC and Nyquist
      if (k != 0 && !(window_len % 2 == 0 && k == window_len / 2)) p *= 2.0;
      psd.power[k] += p;
    }
    ++segments;
  }
  for (double& p : psd.power) p /= static_cast<double>(segments);
  return psd;
}

double band_power(const Psd& psd, Band band) {
  if (!(band.lo_hz < band.hi_hz)) throw InputError("band_power: inverted band");
  const double nyquist = psd.bin_hz * static_cast<double>(psd.power.size() - 1);
  if (band.lo_hz < 0.0 || band.lo_hz > nyquist) throw InputError("band_power: band outside PSD range");
  double total = 0.0;
  for (std::size_t k = 0; k < psd.power.size(); ++k) {
    const double f = static_cast<double>(k) * psd.bin_hz;
    if (f >= band.lo_hz && f < band.hi_hz) total += psd.power[k];
  }
  return total;
}

std::size_t window_count(std::size_t samples, double fs, const FeatureOptions& opts) {
  const auto win = static_cast<std::size_t>(std::lround(opts.window_sec * fs));
  const auto hop = static_cast<std::size_t>(std::lround(opts.hop_sec * fs));
  if (win == 0 || hop == 0) throw ConfigError("featurize: window and hop must be positive");
  if (samples < win) return 0;
  return (samples - win) / hop + 1;
}

std::vector<double> featurize(const EegRecording& rec, const FeatureOptions& opts) {
  rec.validate();
  if (opts.dim == 0) throw ConfigError("featurize: feature dimension must be positive");
  const double fs = rec.sample_rate;
  const std::size_t windows = window_count(rec.samples(), fs, opts);
  if (windows == 0 || rec.channels.empty()) throw InputError("featurize: recording shorter than one window");
  const auto win = static_cast<std::size_t>(std::lround(opts.window_sec * fs));
  const auto hop = static_cast<std::size_t>(std::lround(opts.hop_sec * fs));

  std::vector<std::vector<double>> filtered;
  filtered.reserve(rec.channels.size());
  for (const auto& ch : rec.channels) filtered.push_back(bandpass(ch, fs));

  std::vector<double> raw;
  raw.reserve(windows * rec.channels.size() * 3);
  for (std::size_t w = 0; w < windows; ++w) {
    for (const auto& ch : filtered) {
      const Psd psd = welch_psd(std::span<const double>(ch).subspan(w * hop, win), fs, win, 0.5);
      raw.push_back(band_power(psd, kDelta));
      raw.push_back(band_power(psd, kTheta));
      raw.push_back(band_power(psd, kAlpha));
    }
  }

  std::vector<double> out(opts.dim, 0.0);
  if (raw.size() <= opts.dim) {
    std::copy(raw.begin(), raw.end(), out.begin());
  } else {
    const std::size_t r = raw.size();
    for (std::size_t j = 0; j < opts.dim; ++j) {
      const std::size_t b = j * r / opts.dim;
      const std::size_t e = (j + 1) * r / opts.dim;
      double acc = 0.0;
      for (std::size_t i = b; i < e; ++i) acc += raw[i];
      out[j] = acc / static_cast<double>(e - b);
    }
  }
  const auto [mn, mx] = std::minmax_element(out.begin(), out.end());
  const double lo = *mn, range = *mx - *mn;
  if (range <= 0.0) return std::vector<double>(opts.dim, 0.0);
  for (double& v : out) v = std::clamp((v - lo) / range, 0.0, 1.0);
  return out;
}

void write_eeg(const std::filesystem::path& path, const EegRecording& rec) {
  rec.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write EEG file " + path.string());
  std::ostringstream header;
  header << "EEG1 " << rec.sample_rate << ' ' << rec.channels.size() << ' ' << rec.samples() << '\n';
  out << header.str();
  std::string buf;
  buf.reserve(rec.channels.size() * rec.samples() * 4);
  for (const auto& ch : rec.channels) {
    for (double v : ch) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw InputError("failed writing EEG file " + path.string());
}

EegRecording read_eeg(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read EEG file " + path.string());
  std::string line;
  std::getline(in, line);
  std::istringstream hs(line);
  std::string magic;
  double fs = 0.0;
  std::size_t channels = 0, samples = 0;
  if (!(hs >> magic >> fs >> channels >> samples) || magic != "EEG1") {
    throw ParseError("EEG file " + path.string() + ": malformed header");
  }
  EegRecording rec;
  rec.sample_rate = fs;
  rec.channels.assign(channels, std::vector<double>(samples));
  std::string buf(channels * samples * 4, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
    throw ParseError("EEG file " + path.string() + ": truncated sample data");
  }
  std::size_t pos = 0;
  for (auto& ch : rec.channels) {
    for (double& v : ch) {
      std::uint32_t bits = 0;
      for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
      v = std::bit_cast<float>(bits);
    }
  }
  return rec;
}

}  // namespace dreamnet::eeg
