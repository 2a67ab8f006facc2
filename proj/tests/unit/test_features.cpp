#include <gtest/gtest.h>

#include <cmath>
#include <complex>

#include "hakw/error.hpp"
#include "hakw/features.hpp"
#include "hakw/random.hpp"
#include "oracles.hpp"
#include "synth.hpp"

using namespace hakw;

namespace {

AudioClip noise_clip(std::uint64_t seed, std::size_t n = 16000) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = rng.uniform(-0.5, 0.5);
  return AudioClip(std::move(x), 16000);
}

}  // namespace

TEST(Features, FftMatchesNaiveDft) {
  Rng rng(2);
  for (std::size_t n : {1u, 2u, 8u, 64u, 512u}) {
    std::vector<std::complex<double>> x(n);
    for (auto& v : x) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto y = x;
    fft_inplace(y);
    for (std::size_t k = 0; k < n; ++k) {
      std::complex<double> acc;
      for (std::size_t j = 0; j < n; ++j) acc += x[j] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * j) / double(n));
      EXPECT_NEAR(std::abs(y[k] - acc), 0.0, 1e-9 * n);
    }
  }
  std::vector<std::complex<double>> bad(12);
  EXPECT_THROW(fft_inplace(bad), Error);
}

TEST(Features, FrameCountAndShapes) {
  const FeatureConfig cfg;
  EXPECT_EQ(cfg.frames_for(16000), 98u);
  EXPECT_EQ(cfg.frames_for(400), 1u);
  const AudioClip clip = noise_clip(1);
  const auto spec = stft_power(clip, cfg);
  EXPECT_EQ(spec.frames, 98u);
  EXPECT_EQ(spec.coeffs, 257u);
  EXPECT_EQ(log_mel(spec, cfg).coeffs, 40u);
  EXPECT_EQ(mfcc(clip, cfg).coeffs, 13u);
  try {
    stft_power(AudioClip(std::vector<double>(399), 16000), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ClipTooShort);
  }
}

TEST(Features, PipelineMatchesNaiveOracle) {
  const FeatureConfig cfg;
  for (std::uint64_t seed : {1u, 2u}) {
    const AudioClip clip = noise_clip(seed, 4000);
    const auto spec = stft_power(clip, cfg);
    const auto spec_ref = testkit::naive_power_spectrum(clip.samples(), cfg);
    ASSERT_EQ(spec.frames, spec_ref.size());
    for (std::size_t t = 0; t < spec.frames; ++t)
      for (std::size_t k = 0; k < spec.coeffs; ++k) EXPECT_NEAR(spec.at(t, k), spec_ref[t][k], 1e-8 * (1 + spec_ref[t][k]));

    const auto mel = log_mel(spec, cfg);
    const auto mel_ref = testkit::naive_log_mel(clip.samples(), cfg);
    for (std::size_t t = 0; t < mel.frames; ++t)
      for (std::size_t m = 0; m < mel.coeffs; ++m) EXPECT_NEAR(mel.at(t, m), mel_ref[t][m], 1e-9);

    const auto cc = mfcc(clip, cfg);
    const auto cc_ref = testkit::naive_mfcc(clip.samples(), cfg);
    for (std::size_t t = 0; t < cc.frames; ++t)
      for (std::size_t k = 0; k < cc.coeffs; ++k) EXPECT_NEAR(cc.at(t, k), cc_ref[t][k], 1e-9);
  }
}

TEST(Features, SilenceHitsTheLogFloor) {
  const FeatureConfig cfg;
  const auto mel = compute_features(AudioClip(std::vector<double>(1600), 16000), FeatureKind::LogMel, cfg);
  for (double v : mel.data) EXPECT_DOUBLE_EQ(v, std::log(cfg.log_floor));
}

TEST(Features, FilterbankProperties) {
  const FeatureConfig cfg;
  const auto bank = mel_filterbank(cfg);
  ASSERT_EQ(bank.size(), 40u);
  std::size_t prev_peak = 0;
  for (const auto& tri : bank) {
    ASSERT_EQ(tri.size(), 257u);
    double peak = 0.0;
    std::size_t arg = 0;
    for (std::size_t k = 0; k < tri.size(); ++k) {
      EXPECT_GE(tri[k], 0.0);
      EXPECT_LE(tri[k], 1.0);
      if (tri[k] > peak) peak = tri[k], arg = k;
    }
    EXPECT_GT(peak, 0.0);
    EXPECT_GE(arg, prev_peak);
    prev_peak = arg;
    for (std::size_t k = 0; k < tri.size(); ++k) {
      const double f = static_cast<double>(k) * 16000 / 512;
      if (f <= cfg.fmin || f >= cfg.fmax) EXPECT_EQ(tri[k], 0.0);
    }
  }
  EXPECT_NEAR(mel_to_hz(hz_to_mel(1234.5)), 1234.5, 1e-9);
  EXPECT_NEAR(hz_to_mel(1000.0), 1000.0, 0.1);
}

TEST(Features, PeriodicHannWindow) {
  const auto w = make_window(WindowKind::Hann, 400);
  EXPECT_DOUBLE_EQ(w[0], 0.0);
  EXPECT_NEAR(w[200], 1.0, 1e-15);
  EXPECT_NEAR(w[100], w[300], 1e-12);
  for (double v : make_window(WindowKind::Rect, 10)) EXPECT_EQ(v, 1.0);
}

TEST(Features, ConfigValidation) {
  FeatureConfig cfg;
  cfg.fft_size = 300;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.n_mfcc = 41;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.fmax = 9000;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_NO_THROW(FeatureConfig{}.validate());

  FeatureConfig other;
  other.n_mels = 32;
  EXPECT_NE(FeatureConfig{}.digest(), other.digest());
  EXPECT_EQ(FeatureConfig{}.digest(), FeatureConfig{}.digest());
}

TEST(Features, CacheRoundTripAndMismatch) {
  testkit::TempDir dir;
  const FeatureConfig cfg;
  const auto m = mfcc(noise_clip(4, 8000), cfg);
  const auto path = dir.path() / "x.hkfc";
  write_feature_cache(path, m);
  const auto back = read_feature_cache(path, cfg);
  EXPECT_EQ(back.kind, FeatureKind::Mfcc);
  ASSERT_EQ(back.frames, m.frames);
  ASSERT_EQ(back.coeffs, m.coeffs);
  for (std::size_t i = 0; i < m.data.size(); ++i) EXPECT_EQ(back.data[i], static_cast<double>(static_cast<float>(m.data[i])));

  FeatureConfig other = cfg;
  other.hop = 80;
  try {
    read_feature_cache(path, other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ConfigMismatch);
  }
  const Bytes junk = {'J', 'U', 'N', 'K', 0, 0, 0, 0};
  write_file(dir.path() / "junk.hkfc", junk);
  try {
    read_feature_cache(dir.path() / "junk.hkfc", cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BadCache);
  }
}
