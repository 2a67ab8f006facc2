#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstring>

#include "hakw/deploy.hpp"
#include "hakw/error.hpp"
#include "synth.hpp"

using namespace hakw;

namespace {

template <typename F>
Errc error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no hakw::Error thrown";
  return Errc::Io;
}

ModelConfig small_cnn() {
  ModelConfig c;
  c.arch = Arch::Cnn;
  c.input_frames = 98;
  c.input_coeffs = 257;
  c.classes = 4;
  c.feature_kind = FeatureKind::Spectrogram;
  c.cnn.conv1_filters = 4;
  c.cnn.conv2_filters = 8;
  c.cnn.dense = 16;
  return c;
}

ModelConfig mfcc_lstm(std::size_t classes, int hidden = 16) {
  ModelConfig c;
  c.arch = Arch::Lstm;
  c.input_frames = 98;
  c.input_coeffs = 13;
  c.classes = classes;
  c.lstm.hidden = hidden;
  return c;
}

std::vector<std::string> labels_for(std::size_t n) {
  const std::vector<std::string> all = {"yego", "oya", "_silence_", "tangira", "genda", "_unknown_"};
  std::vector<std::string> out(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(std::min(n, all.size())));
  for (std::size_t i = out.size(); i < n; ++i) out.push_back("class" + std::to_string(i));
  return out;
}

ModelArtifact random_artifact(const ModelConfig& cfg, std::uint64_t seed) {
  Network net(cfg, seed);
  Rng rng(seed);
  for (auto& p : net.params())
    for (double& v : p.value.data) v += 0.01 * rng.normal();
  return net.to_artifact(FeatureConfig{}, labels_for(cfg.classes));
}

// LSTM whose output ignores the input: all weights zero, output bias picks the winner.
std::shared_ptr<const Classifier> constant_model(const std::vector<double>& bias) {
  auto cfg = mfcc_lstm(bias.size(), 2);
  Network net(cfg, 0);
  for (auto& p : net.params())
    if (p.trainable) p.value.zero();
  auto& b = net.params()[*net.param_index("out.bias")].value.data;
  std::copy(bias.begin(), bias.end(), b.begin());
  return std::make_shared<const Classifier>(net.to_artifact(FeatureConfig{}, labels_for(bias.size())));
}

Tensor random_features(std::size_t n, std::size_t frames, std::size_t coeffs, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, frames, coeffs});
  for (double& v : t.data) v = rng.normal() * 3.0;
  return t;
}

}  // namespace

TEST(Artifact, RoundTripIsByteIdentical) {
  for (const auto& cfg : {small_cnn(), mfcc_lstm(3)}) {
    const ModelArtifact a = random_artifact(cfg, 5);
    const Bytes bytes = serialize_model(a);
    ASSERT_EQ(std::memcmp(bytes.data(), "HAKW", 4), 0);
    const ModelArtifact back = deserialize_model(bytes);
    EXPECT_EQ(back, a);
    EXPECT_EQ(serialize_model(back), bytes);
  }
  testkit::TempDir dir;
  const ModelArtifact q = quantize_int8(random_artifact(mfcc_lstm(3), 6), random_features(8, 98, 13, 1));
  save_model(q, dir.path() / "q.hakw");
  const ModelArtifact qb = load_model(dir.path() / "q.hakw");
  EXPECT_EQ(qb, q);
  for (const auto& t : qb.tensors) {
    if (t.dtype != DType::I8) continue;
    const NamedTensor* orig = q.find(t.name);
    EXPECT_EQ(t.i8, orig->i8);
    EXPECT_EQ(t.scale, orig->scale);
    EXPECT_EQ(t.zero_point, orig->zero_point);
  }
}

TEST(Artifact, Errors) {
  const Bytes good = serialize_model(random_artifact(mfcc_lstm(2), 1));
  Bytes magic = good;
  std::memcpy(magic.data(), "XXXX", 4);
  EXPECT_EQ(error_code([&] { deserialize_model(magic); }), Errc::BadMagic);
  Bytes version = good;
  version[4] = 2;
  EXPECT_EQ(error_code([&] { deserialize_model(version); }), Errc::VersionUnsupported);
  const Bytes truncated(good.begin(), good.end() - 10);
  EXPECT_EQ(error_code([&] { deserialize_model(truncated); }), Errc::CorruptDirectory);
  Bytes extra = good;
  extra.push_back(0);
  EXPECT_EQ(error_code([&] { deserialize_model(extra); }), Errc::CorruptDirectory);
  EXPECT_EQ(error_code([&] { deserialize_model(Bytes(good.begin(), good.begin() + 10)); }), Errc::CorruptDirectory);
  Bytes header = good;
  header[20] = '!';
  EXPECT_EQ(error_code([&] { deserialize_model(header); }), Errc::CorruptDirectory);
}

TEST(Quantize, ZeroTensorDequantizesToZero) {
  NamedTensor t;
  t.name = "w";
  t.shape = {5};
  t.f32.assign(5, 0.0f);
  const NamedTensor q = quantize_tensor(t);
  EXPECT_EQ(q.dtype, DType::I8);
  EXPECT_GT(q.scale, 0.0f);
  EXPECT_NEAR(q.scale, 2e-8 / 255, 1e-15);
  for (double v : tensor_values(q)) EXPECT_EQ(v, 0.0);
}

TEST(Quantize, ErrorBoundedByHalfScale) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    NamedTensor t;
    t.name = "w";
    const std::size_t n = 1 + rng.index(300);
    t.shape = {n};
    const double lo = rng.uniform(-5, 2), span = std::pow(10.0, rng.uniform(-6, 1));
    for (std::size_t i = 0; i < n; ++i) t.f32.push_back(static_cast<float>(lo + span * rng.uniform()));
    const NamedTensor q = quantize_tensor(t);
    EXPECT_GE(q.zero_point, -128);
    EXPECT_LE(q.zero_point, 127);
    const auto deq = tensor_values(q);
    for (std::size_t i = 0; i < n; ++i) {
      // The 1e-12 relative slack only absorbs double rounding in the comparison itself.
      EXPECT_LE(std::abs(deq[i] - t.f32[i]), q.scale / 2.0 * (1 + 1e-12)) << trial;
    }
  }
  const QuantParams p = choose_quant_params(-1.0f, 3.0f);
  EXPECT_EQ(quantize_value(-1.0, p), -128);
  EXPECT_EQ(quantize_value(3.0, p), 127);
  EXPECT_EQ(quantize_value(1e9, p), 127);
  EXPECT_EQ(dequantize_value(quantize_value(0.0, p), p), 0.0);
  EXPECT_THROW(choose_quant_params(1.0f, -1.0f), Error);
}

TEST(Quantize, ArtifactShapeAndRanges) {
  const ModelArtifact f = random_artifact(small_cnn(), 3);
  const ModelArtifact q = quantize_int8(f, random_features(6, 98, 257, 2));
  EXPECT_TRUE(q.quantized);
  for (const auto& t : q.tensors) EXPECT_EQ(t.dtype, t.name.starts_with("input.") ? DType::F32 : DType::I8) << t.name;
  for (const char* layer : {"conv1", "conv2", "fc1", "out"}) {
    ASSERT_TRUE(q.activation_ranges.count(layer)) << layer;
    EXPECT_LE(q.activation_ranges.at(layer).min, q.activation_ranges.at(layer).max);
  }
  EXPECT_LT(serialize_model(q).size(), serialize_model(f).size());
  EXPECT_EQ(error_code([&] { quantize_int8(f, Tensor({0, 98, 257})); }), Errc::EmptyCalibration);

  const ModelArtifact lq = quantize_int8(random_artifact(mfcc_lstm(3), 1), random_features(4, 98, 13, 3));
  EXPECT_EQ(lq.activation_ranges.at("lstm1.h").min, -1.0f);
  EXPECT_EQ(lq.activation_ranges.at("lstm1.h").max, 1.0f);
}

TEST(Quantize, DefaultLstmIsAtLeastThreeTimesSmaller) {
  const ModelArtifact f = random_artifact(mfcc_lstm(10, 128), 4);
  const ModelArtifact q = quantize_int8(f, random_features(16, 98, 13, 4));
  EXPECT_GE(static_cast<double>(serialize_model(f).size()) / serialize_model(q).size(), 3.0);
}

TEST(Quantize, Int8PathTracksFloatPath) {
  for (const auto& cfg : {small_cnn(), mfcc_lstm(4, 32)}) {
    const ModelArtifact f = random_artifact(cfg, 7);
    const Tensor calib = random_features(64, cfg.input_frames, cfg.input_coeffs, 9);
    const Classifier fc(f), qc(quantize_int8(f, calib));
    EXPECT_TRUE(qc.quantized());
    const Tensor batch = random_features(64, cfg.input_frames, cfg.input_coeffs, 10);
    const Tensor pf = fc.predict_proba(batch), pq = qc.predict_proba(batch);
    std::size_t agree = 0;
    for (std::size_t r = 0; r < 64; ++r) {
      const std::span<const double> a(pf.ptr() + r * cfg.classes, cfg.classes), b(pq.ptr() + r * cfg.classes, cfg.classes);
      agree += argmax(a) == argmax(b);
      for (std::size_t c = 0; c < cfg.classes; ++c) EXPECT_NEAR(a[c], b[c], 0.1);
    }
    EXPECT_GE(agree, 61u) << to_string(cfg.arch);
  }
}

TEST(Classifier, FloatMatchesNetwork) {
  const ModelArtifact a = random_artifact(mfcc_lstm(3), 2);
  const Classifier c(a);
  const Network net = Network::from_artifact(a);
  const Tensor batch = random_features(5, 98, 13, 1);
  const Tensor x = c.logits(batch), y = net.logits(batch);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x.data[i], y.data[i], 1e-6);
  EXPECT_EQ(c.features(AudioClip(std::vector<double>(16000), 16000)).frames, 98u);
  EXPECT_EQ(c.features(AudioClip(std::vector<double>(12000), 16000)).frames, 98u);
  EXPECT_EQ(error_code([&] { c.features(AudioClip(std::vector<double>(8000), 8000)); }), Errc::RateMismatch);
}

TEST(Detector, ZerosGiveNoEvents) {
  const auto model = constant_model({0.0, 0.0, 6.0});  // _silence_ wins
  const auto events = stream_detect(AudioClip(std::vector<double>(160000), 16000), model, {});
  EXPECT_TRUE(events.empty());
}

TEST(Detector, RefractoryAndTiming) {
  const auto model = constant_model({6.0, 0.0, 0.0});  // yego always
  StreamDetector det(model, {}, 16000);
  std::vector<DetectionEvent> events;
  const std::vector<double> chunk(1000, 0.0);
  for (int i = 0; i < 160; ++i) {
    auto e = det.feed(chunk);
    events.insert(events.end(), e.begin(), e.end());
  }
  EXPECT_EQ(det.samples_seen(), 160000);
  ASSERT_EQ(events.size(), 10u);
  for (std::size_t i = 0; i < events.size(); ++i) {
    EXPECT_EQ(events[i].label, "yego");
    EXPECT_EQ(events[i].time_ms, static_cast<std::int64_t>(1000 * (i + 1)));
    EXPECT_GE(events[i].confidence, 0.7);
  }
  DetectorConfig no_refractory;
  no_refractory.refractory_ms = 0;
  EXPECT_EQ(stream_detect(AudioClip(std::vector<double>(32000), 16000), model, no_refractory).size(), 5u);
}

TEST(Detector, ChunkingDoesNotMatter) {
  const auto model = std::make_shared<const Classifier>(random_artifact(mfcc_lstm(3), 3));
  Rng rng(1);
  std::vector<double> x(40000);
  for (double& v : x) v = 0.1 * rng.normal();
  DetectorConfig cfg;
  cfg.threshold = 0.34;
  cfg.refractory_ms = 0;
  StreamDetector one(model, cfg, 16000), many(model, cfg, 16000);
  const auto a = one.feed(x);
  std::vector<DetectionEvent> b;
  for (std::size_t i = 0; i < x.size(); i += 333) {
    auto e = many.feed(std::span<const double>(x).subspan(i, std::min<std::size_t>(333, x.size() - i)));
    b.insert(b.end(), e.begin(), e.end());
  }
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].label, b[i].label);
    EXPECT_EQ(a[i].time_ms, b[i].time_ms);
    EXPECT_EQ(a[i].confidence, b[i].confidence);
  }
  EXPECT_EQ(one.last_posterior(), many.last_posterior());
}

TEST(Detector, SmoothingAveragesLastK) {
  const auto model = std::make_shared<const Classifier>(random_artifact(mfcc_lstm(3), 8));
  Rng rng(2);
  std::vector<double> x(16000 + 4000 * 3);
  for (double& v : x) v = 0.2 * rng.normal();
  DetectorConfig cfg;
  cfg.smooth_k = 3;
  StreamDetector det(model, cfg, 16000);
  std::vector<std::vector<double>> raw;
  for (std::size_t end = 16000; end <= x.size(); end += 4000) {
    const AudioClip window(std::vector<double>(x.begin() + static_cast<std::ptrdiff_t>(end - 16000),
                                               x.begin() + static_cast<std::ptrdiff_t>(end)), 16000);
    const auto f = model->features(window);
    raw.push_back(model->predict_proba(Tensor({1, f.frames, f.coeffs}, f.data)).data);
  }
  det.feed(x);
  ASSERT_EQ(raw.size(), 4u);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(det.last_posterior()[c], (raw[1][c] + raw[2][c] + raw[3][c]) / 3.0, 1e-12);
  }
}

TEST(Detector, ConfigValidationAndRate) {
  DetectorConfig cfg;
  cfg.hop_ms = 2000;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.threshold = 1.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.smooth_k = 0;
  EXPECT_THROW(cfg.validate(), Error);
  const auto model = constant_model({0.0, 1.0});
  EXPECT_EQ(error_code([&] { StreamDetector(model, {}, 8000); }), Errc::RateMismatch);
}

TEST(Detector, HopFitsTheRealTimeBudget) {
  ModelConfig mc;
  mc.classes = 10;
  const auto model = std::make_shared<const Classifier>(Network(mc, 1).to_artifact(FeatureConfig{}, labels_for(10)));
  StreamDetector det(model, {}, 16000);
  det.feed(random_features(1, 1, 16000, 2).data);
  const std::vector<double> hop(4000, 0.01);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 8; ++i) det.feed(hop);
  const double per_hop_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / 8;
  EXPECT_LT(per_hop_ms, 250.0);
}
