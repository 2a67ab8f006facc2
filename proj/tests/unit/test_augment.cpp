#include <gtest/gtest.h>

#include <cmath>

#include "hakw/augment.hpp"
#include "hakw/error.hpp"
#include "synth.hpp"

using namespace hakw;

namespace {

AudioClip random_clip(std::uint64_t seed, std::size_t n, double amp = 0.3) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = rng.uniform(-amp, amp);
  return AudioClip(std::move(x), 16000);
}

double rms(const AudioClip& c) {
  double e = 0.0;
  for (double v : c.samples()) e += v * v;
  return std::sqrt(e / static_cast<double>(c.size()));
}

Manifest train_manifest(std::size_t n) {
  Manifest m;
  for (std::size_t i = 0; i < n; ++i) {
    SampleRecord r;
    r.id = "r" + std::to_string(i);
    r.path = "local/yego/spk" + std::to_string(i % 4) + "__" + std::to_string(i) + ".wav";
    r.label = "yego";
    r.speaker = "spk" + std::to_string(i % 4);
    r.split = i % 5 == 0 ? Split::Val : Split::Train;
    r.checksum = "x";
    m.records.push_back(r);
  }
  return m;
}

}  // namespace

TEST(Augment, ShiftMovesSamplesAndKeepsLength) {
  const AudioClip clip = random_clip(1, 1600);
  const AudioClip right = time_shift(clip, 5.0);  // 80 samples
  ASSERT_EQ(right.size(), clip.size());
  for (std::size_t i = 0; i < 80; ++i) EXPECT_EQ(right.samples()[i], 0.0);
  for (std::size_t i = 80; i < clip.size(); ++i) EXPECT_EQ(right.samples()[i], clip.samples()[i - 80]);
  const AudioClip left = time_shift(clip, -5.0);
  ASSERT_EQ(left.size(), clip.size());
  for (std::size_t i = 0; i + 80 < clip.size(); ++i) EXPECT_EQ(left.samples()[i], clip.samples()[i + 80]);
  EXPECT_EQ(time_shift(clip, 0.0), clip);
}

TEST(Augment, AmplifyScalesRms) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const AudioClip clip = random_clip(rng.next(), 4000, 0.05);
    const double db = rng.uniform(-6.0, 6.0);
    const AudioClip out = amplify(clip, db);
    ASSERT_EQ(out.size(), clip.size());
    EXPECT_NEAR(rms(out) / rms(clip), std::pow(10.0, db / 20.0), 1e-9);
  }
  const AudioClip loud = amplify(AudioClip({0.9, -0.9}, 16000), 6.0);
  EXPECT_EQ(loud.samples(), (std::vector<double>{1.0, -1.0}));
}

TEST(Augment, SpeedChangesLength) {
  const AudioClip clip = random_clip(2, 16000);
  EXPECT_EQ(change_speed(clip, 1.25).size(), 12800u);
  EXPECT_EQ(change_speed(clip, 0.8).size(), 20000u);
  EXPECT_EQ(change_speed(clip, 1.0), clip);
  const AudioClip fast = change_speed(clip, 2.0);
  for (std::size_t i = 0; i < fast.size(); ++i) EXPECT_EQ(fast.samples()[i], clip.samples()[2 * i]);
  EXPECT_THROW(change_speed(clip, 0.0), Error);
  EXPECT_THROW(change_speed(clip, -1.0), Error);
}

TEST(Augment, ZeroPadSilencesEdges) {
  const AudioClip clip = random_clip(3, 1600);
  const AudioClip out = zero_pad(clip, 10.0);  // 160 samples per edge
  ASSERT_EQ(out.size(), clip.size());
  for (std::size_t i = 0; i < 160; ++i) {
    EXPECT_EQ(out.samples()[i], 0.0);
    EXPECT_EQ(out.samples()[clip.size() - 1 - i], 0.0);
  }
  for (std::size_t i = 160; i < clip.size() - 160; ++i) EXPECT_EQ(out.samples()[i], clip.samples()[i]);
  for (double v : zero_pad(clip, 60.0).samples()) EXPECT_EQ(v, 0.0);
}

TEST(Augment, ApplyReturnsInputLength) {
  const AudioClip clip = random_clip(5, 16000);
  for (const char* kind : {"shift", "zero_pad", "speed", "gain"}) {
    const double value = std::string_view(kind) == "speed" ? 1.1 : 20.0;
    EXPECT_EQ(apply_augmentation(clip, {kind, value, 1}).size(), clip.size()) << kind;
  }
  EXPECT_THROW(apply_augmentation(clip, {"reverb", 1.0, 1}), Error);
}

TEST(Augment, ManifestCountDeterminismAndProvenance) {
  for (std::size_t n : {0u, 1u, 7u, 10u, 33u, 100u}) {
    const Manifest m = train_manifest(n);
    std::size_t train = 0;
    for (const auto& r : m.records) train += r.split == Split::Train;
    AugmentPolicy policy;
    policy.seed = 9;
    const Manifest out = augment_manifest(m, policy);
    EXPECT_EQ(out.records.size() - m.records.size(), static_cast<std::size_t>(std::llround(0.8 * train))) << n;
    EXPECT_EQ(out, augment_manifest(m, policy));
    for (std::size_t i = m.records.size(); i < out.records.size(); ++i) {
      const auto& r = out.records[i];
      ASSERT_TRUE(r.parent);
      const SampleRecord* parent = out.find(*r.parent);
      ASSERT_NE(parent, nullptr);
      EXPECT_EQ(parent->split, Split::Train);
      EXPECT_EQ(r.split, Split::Train);
      EXPECT_EQ(r.speaker, parent->speaker);
      EXPECT_EQ(r.label, parent->label);
      EXPECT_TRUE(r.path.ends_with(".aug1.wav")) << r.path;
      EXPECT_TRUE(r.checksum.empty());
    }
  }
  const Manifest m = train_manifest(40);
  AugmentPolicy a, b;
  a.seed = 1;
  b.seed = 2;
  EXPECT_NE(augment_manifest(m, a), augment_manifest(m, b));
}

TEST(Augment, PolicyValidation) {
  AugmentPolicy p;
  p.fraction = 1.5;
  EXPECT_THROW(augment_manifest({}, p), Error);
  p = {};
  p.speed_min = 0.0;
  EXPECT_THROW(p.validate(), Error);
}

TEST(Augment, MaterializeWritesFiles) {
  testkit::TempDir dir;
  testkit::SynthCorpusSpec spec;
  spec.clips_per_class = 2;
  spec.speakers = 2;
  spec.with_silence = false;
  Manifest m = testkit::write_synth_corpus(dir.path(), spec);
  for (auto& r : m.records) r.split = Split::Train;
  m = augment_manifest(m, {});
  const std::size_t added = m.records.size() - 16;
  EXPECT_EQ(added, 13u);
  EXPECT_EQ(materialize_augmentations(m, dir.path()), added);
  EXPECT_EQ(materialize_augmentations(m, dir.path()), 0u);
  for (const auto& r : m.records) {
    if (!r.parent) continue;
    const Bytes bytes = read_file(dir.path() / r.path);
    EXPECT_EQ(sha256_hex(bytes), r.checksum);
    const AudioClip parent = load_wav(dir.path() / m.find(*r.parent)->path);
    EXPECT_EQ(encode_wav(apply_augmentation(parent, *r.augmentation)), bytes);
  }
}
