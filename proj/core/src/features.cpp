#include "hakw/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "hakw/error.hpp"

namespace hakw {

std::string_view to_string(WindowKind w) noexcept { return w == WindowKind::Hann ? "hann" : "rect"; }

std::string_view to_string(FeatureKind k) noexcept {
  switch (k) {
    case FeatureKind::Spectrogram: return "spectrogram";
    case FeatureKind::LogMel: return "logmel";
    case FeatureKind::Mfcc: return "mfcc";
  }
  return "spectrogram";
}

WindowKind window_from_string(std::string_view s) {
  if (s == "hann") return WindowKind::Hann;
  if (s == "rect") return WindowKind::Rect;
  throw Error(Errc::BadConfig, "unknown window '" + std::string(s) + "'");
}

FeatureKind feature_kind_from_string(std::string_view s) {
  if (s == "spectrogram") return FeatureKind::Spectrogram;
  if (s == "logmel") return FeatureKind::LogMel;
  if (s == "mfcc") return FeatureKind::Mfcc;
  throw Error(Errc::BadConfig, "unknown feature kind '" + std::string(s) + "'");
}

void FeatureConfig::validate() const {
  if (sample_rate <= 0) throw Error(Errc::BadConfig, "sample_rate must be positive");
  if (frame_len <= 0 || hop <= 0) throw Error(Errc::BadConfig, "frame_len and hop must be positive");
  if (fft_size < frame_len) throw Error(Errc::BadConfig, "fft_size must be >= frame_len");
  if (!std::has_single_bit(static_cast<unsigned>(fft_size))) {
    throw Error(Errc::BadConfig, "fft_size must be a power of two");
  }
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) {
    throw Error(Errc::BadConfig, "need 0 <= fmin < fmax <= sample_rate/2");
  }
  if (n_mels <= 0 || n_mfcc <= 0 || n_mfcc > n_mels) throw Error(Errc::BadConfig, "need 0 < n_mfcc <= n_mels");
  if (!(log_floor > 0.0)) throw Error(Errc::BadConfig, "log_floor must be positive");
}

std::size_t FeatureConfig::frames_for(std::size_t clip_len) const noexcept {
  const auto len = static_cast<std::size_t>(frame_len);
  if (clip_len < len) return 0;
  return 1 + (clip_len - len) / static_cast<std::size_t>(hop);
}

std::uint64_t FeatureConfig::digest() const noexcept {
  std::ostringstream os;
  os.precision(17);
  os << sample_rate << '|' << frame_len << '|' << hop << '|' << fft_size << '|' << n_mels << '|' << fmin << '|'
     << fmax << '|' << n_mfcc << '|' << log_floor << '|' << to_string(window);
  std::uint64_t h = 1469598103934665603ull;
  for (char c : os.str()) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

void fft_inplace(std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  if (!std::has_single_bit(n)) throw Error(Errc::BadConfig, "FFT size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  // Twiddles from the exact angle rather than a running product keep error at ~1 ulp.
  std::vector<std::complex<double>> twiddle(n / 2);
  for (std::size_t k = 0; k < twiddle.size(); ++k) {
    const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    twiddle[k] = {std::cos(ang), std::sin(ang)};
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n / len;
    for (std::size_t k = 0; k < half; ++k) {
      const std::complex<double> w = twiddle[k * stride];
      for (std::size_t i = k; i < n; i += len) {
        const std::complex<double> u = x[i];
        const std::complex<double> v = x[i + half] * w;
        x[i] = u + v;
        x[i + half] = u - v;
      }
    }
  }
}

std::vector<double> make_window(WindowKind kind, int length) {
  std::vector<double> w(static_cast<std::size_t>(length), 1.0);
  if (kind == WindowKind::Hann) {
    // Periodic Hann, the usual choice for STFT analysis.
    for (int i = 0; i < length; ++i) {
      w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / length);
    }
  }
  return w;
}

double hz_to_mel(double hz) noexcept { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) noexcept { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<std::vector<double>> mel_filterbank(const FeatureConfig& cfg) {
  cfg.validate();
  const int n_bins = cfg.n_bins();
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(edges.size() - 1));
  }
  std::vector<std::vector<double>> bank(static_cast<std::size_t>(cfg.n_mels),
                                        std::vector<double>(static_cast<std::size_t>(n_bins), 0.0));
  for (std::size_t m = 0; m < bank.size(); ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      bank[m][static_cast<std::size_t>(k)] = w;
    }
  }
  return bank;
}

FeatureMatrix stft_power(const AudioClip& clip, const FeatureConfig& cfg) {
  cfg.validate();
  if (clip.size() < static_cast<std::size_t>(cfg.frame_len)) {
    throw Error(Errc::ClipTooShort, std::to_string(clip.size()) + " samples < frame_len " +
                                        std::to_string(cfg.frame_len));
  }
  FeatureMatrix out;
  out.kind = FeatureKind::Spectrogram;
  out.config = cfg;
  out.frames = cfg.frames_for(clip.size());
  out.coeffs = static_cast<std::size_t>(cfg.n_bins());
  out.data.resize(out.frames * out.coeffs);

  const auto window = make_window(cfg.window, cfg.frame_len);
  const auto& samples = clip.samples();
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.fft_size));
  for (std::size_t t = 0; t < out.frames; ++t) {
    const std::size_t start = t * static_cast<std::size_t>(cfg.hop);
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    for (std::size_t i = 0; i < window.size(); ++i) buf[i] = samples[start + i] * window[i];
    fft_inplace(buf);
    double* row = out.data.data() + t * out.coeffs;
    for (std::size_t k = 0; k < out.coeffs; ++k) row[k] = std::norm(buf[k]);
  }
  return out;
}

FeatureMatrix log_mel(const FeatureMatrix& spec, const FeatureConfig& cfg) {
  if (spec.kind != FeatureKind::Spectrogram) throw Error(Errc::ConfigMismatch, "log_mel needs a spectrogram");
  if (spec.coeffs != static_cast<std::size_t>(cfg.n_bins()) || spec.config.fft_size != cfg.fft_size ||
      spec.config.sample_rate != cfg.sample_rate) {
    throw Error(Errc::ConfigMismatch, "spectrogram was computed with a different FFT layout");
  }
  const auto bank = mel_filterbank(cfg);
  FeatureMatrix out;
  out.kind = FeatureKind::LogMel;
  out.config = cfg;
  out.frames = spec.frames;
  out.coeffs = bank.size();
  out.data.resize(out.frames * out.coeffs);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const auto row = spec.row(t);
    for (std::size_t m = 0; m < bank.size(); ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < row.size(); ++k) e += bank[m][k] * row[k];
      out.data[t * out.coeffs + m] = std::log(std::max(e, cfg.log_floor));
    }
  }
  return out;
}

FeatureMatrix mfcc(const AudioClip& clip, const FeatureConfig& cfg) {
  const FeatureMatrix mel = log_mel(stft_power(clip, cfg), cfg);
  const auto n = static_cast<std::size_t>(cfg.n_mels);
  const auto keep = static_cast<std::size_t>(cfg.n_mfcc);

  // Orthonormal DCT-II basis.
  std::vector<double> basis(keep * n);
  for (std::size_t k = 0; k < keep; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (std::size_t i = 0; i < n; ++i) {
      basis[k * n + i] = scale * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * i + 1.0) / (2.0 * n));
    }
  }

  FeatureMatrix out;
  out.kind = FeatureKind::Mfcc;
  out.config = cfg;
  out.frames = mel.frames;
  out.coeffs = keep;
  out.data.resize(out.frames * keep);
  for (std::size_t t = 0; t < mel.frames; ++t) {
    const auto row = mel.row(t);
    for (std::size_t k = 0; k < keep; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += basis[k * n + i] * row[i];
      out.data[t * keep + k] = acc;
    }
  }
  return out;
}

FeatureMatrix compute_features(const AudioClip& clip, FeatureKind kind, const FeatureConfig& cfg) {
  switch (kind) {
    case FeatureKind::Spectrogram: return stft_power(clip, cfg);
    case FeatureKind::LogMel: return log_mel(stft_power(clip, cfg), cfg);
    case FeatureKind::Mfcc: return mfcc(clip, cfg);
  }
  throw Error(Errc::BadConfig, "unknown feature kind");
}

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw Error(Errc::BadCache, "truncated feature cache");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void write_feature_cache(const std::filesystem::path& path, const FeatureMatrix& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(Errc::Io, "cannot write " + path.string());
  os.write("HKFC", 4);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.kind));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.frames));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.coeffs));
  put_le<std::uint64_t>(os, m.config.digest());
  for (double v : m.data) put_le<float>(os, static_cast<float>(v));
  if (!os) throw Error(Errc::Io, "short write to " + path.string());
}

FeatureMatrix read_feature_cache(const std::filesystem::path& path, const FeatureConfig& expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::Io, "cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "HKFC", 4) != 0) throw Error(Errc::BadCache, "bad cache magic");
  FeatureMatrix m;
  const auto kind = get_le<std::uint32_t>(is);
  if (kind > static_cast<std::uint32_t>(FeatureKind::Mfcc)) throw Error(Errc::BadCache, "bad feature kind");
  m.kind = static_cast<FeatureKind>(kind);
  m.frames = get_le<std::uint32_t>(is);
  m.coeffs = get_le<std::uint32_t>(is);
  if (get_le<std::uint64_t>(is) != expected.digest()) {
    throw Error(Errc::ConfigMismatch, "cache was built with a different feature config");
  }
  m.config = expected;
  m.data.resize(m.frames * m.coeffs);
  for (double& v : m.data) v = get_le<float>(is);
  return m;
}

}  // namespace hakw
