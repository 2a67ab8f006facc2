#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hakw/audio_io.hpp"

namespace hakw {

enum class WindowKind { Hann, Rect };
enum class FeatureKind { Spectrogram, LogMel, Mfcc };

std::string_view to_string(WindowKind w) noexcept;
std::string_view to_string(FeatureKind k) noexcept;
WindowKind window_from_string(std::string_view s);
FeatureKind feature_kind_from_string(std::string_view s);

struct FeatureConfig {
  int sample_rate = kCanonicalRate;
  int frame_len = 400;  // 25 ms
  int hop = 160;        // 10 ms
  int fft_size = 512;
  int n_mels = 40;
  double fmin = 20.0;
  double fmax = 7600.0;
  int n_mfcc = 13;
  double log_floor = 1e-10;
  WindowKind window = WindowKind::Hann;

  void validate() const;
  int n_bins() const noexcept { return fft_size / 2 + 1; }
  std::size_t frames_for(std::size_t clip_len) const noexcept;
  // Stable 64-bit digest of every field, used to key feature caches.
  std::uint64_t digest() const noexcept;

  friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

// frames x coeffs, row-major.
struct FeatureMatrix {
  FeatureKind kind = FeatureKind::Spectrogram;
  FeatureConfig config;
  std::size_t frames = 0;
  std::size_t coeffs = 0;
  std::vector<double> data;

  double at(std::size_t frame, std::size_t coeff) const { return data[frame * coeffs + coeff]; }
  std::span<const double> row(std::size_t frame) const { return {data.data() + frame * coeffs, coeffs}; }
};

// In-place iterative radix-2 FFT. Size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& x);

std::vector<double> make_window(WindowKind kind, int length);

// n_mels x n_bins triangular filters on the HTK mel scale.
std::vector<std::vector<double>> mel_filterbank(const FeatureConfig& cfg);
double hz_to_mel(double hz) noexcept;
double mel_to_hz(double mel) noexcept;

FeatureMatrix stft_power(const AudioClip& clip, const FeatureConfig& cfg);
FeatureMatrix log_mel(const FeatureMatrix& spec, const FeatureConfig& cfg);
FeatureMatrix mfcc(const AudioClip& clip, const FeatureConfig& cfg);

// Dispatch on the requested front end.
FeatureMatrix compute_features(const AudioClip& clip, FeatureKind kind, const FeatureConfig& cfg);

// Cache file: "HKFC" magic, u32 kind, u32 frames, u32 coeffs, u64 config digest, float32 LE payload.
void write_feature_cache(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix read_feature_cache(const std::filesystem::path& path, const FeatureConfig& expected);

}  // namespace hakw
