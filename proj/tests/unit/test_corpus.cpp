#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "hakw/corpus.hpp"
#include "hakw/error.hpp"
#include "oracles.hpp"
#include "synth.hpp"

using namespace hakw;
namespace fs = std::filesystem;

namespace {

AudioClip tone(double seconds, double amp, std::size_t lead = 0) {
  std::vector<double> x(static_cast<std::size_t>(seconds * 16000), 0.0);
  for (std::size_t i = lead; i < x.size(); ++i) x[i] = amp * std::sin(2 * std::numbers::pi * 440.0 * i / 16000.0);
  return AudioClip(std::move(x), 16000);
}

void write_tone(const fs::path& p, double amp = 0.3) {
  fs::create_directories(p.parent_path());
  save_wav(p, tone(1.0, amp));
}

SampleRecord make_record(const std::string& id, const std::string& speaker, const std::string& label = "yego") {
  SampleRecord r;
  r.id = id;
  r.path = "local/" + label + "/" + id + ".wav";
  r.label = label;
  r.speaker = speaker;
  r.duration_ms = 1000;
  r.sample_rate = 16000;
  r.checksum = std::string(64, '0');
  return r;
}

Manifest speakers_manifest(int speakers, int per_speaker) {
  Manifest m;
  for (int s = 0; s < speakers; ++s)
    for (int k = 0; k < per_speaker; ++k)
      m.records.push_back(make_record("r" + std::to_string(s) + "_" + std::to_string(k), "spk" + std::to_string(s)));
  return m;
}

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

}  // namespace

TEST(Labels, BuiltinTable) {
  const auto& ls = builtin_labelset();
  EXPECT_EQ(ls.keywords().size(), 23u);
  EXPECT_EQ(ls.size(), 25u);
  EXPECT_EQ(ls.by_english("Zero")->kinyarwanda, "Zeru");
  EXPECT_EQ(ls.by_english("Stop")->kinyarwanda, "Hagarara");
  EXPECT_EQ(ls.by_english("Hello Afrika")->key, "muraho_afrika");
  EXPECT_EQ(ls.by_id(23)->english, "Hello Afrika");
  EXPECT_EQ(ls.by_key("tangira")->english, "Start");
  EXPECT_TRUE(ls.is_reserved("_unknown_"));
  EXPECT_TRUE(ls.is_reserved("_silence_"));
  EXPECT_FALSE(ls.is_reserved("yego"));
  EXPECT_EQ(ls.labels().front(), "zeru");
  EXPECT_EQ(ls.labels().back(), "_silence_");
  EXPECT_EQ(ls.by_english("Banana"), nullptr);
}

TEST(Labels, Normalization) {
  EXPECT_EQ(normalize_label("Muraho  Afrika"), "muraho_afrika");
  EXPECT_EQ(normalize_label(" Yego "), "yego");
  EXPECT_EQ(normalize_label("Hello-Afrika"), "hello_afrika");
  EXPECT_EQ(map_directory("Muraho Afrika", Source::Mswc, builtin_labelset()), "muraho_afrika");
  EXPECT_EQ(map_directory("stop", Source::Gsc, builtin_labelset()), "hagarara");
  EXPECT_EQ(map_directory("_background_noise_", Source::Gsc, builtin_labelset()), "_silence_");
  EXPECT_EQ(map_directory("stop", Source::Mswc, builtin_labelset()), std::nullopt);
  EXPECT_EQ(map_directory("marvin", Source::Gsc, builtin_labelset()), std::nullopt);
}

TEST(Labels, SpeakerFromFilename) {
  EXPECT_EQ(speaker_from_filename("0a7c2a8d_nohash_0"), "0a7c2a8d");
  EXPECT_EQ(speaker_from_filename("amina__abc123"), "amina");
  EXPECT_EQ(speaker_from_filename("plainname"), std::nullopt);
}

TEST(Manifest, RoundTripPreservesUnknownFields) {
  testkit::TempDir dir;
  Manifest m;
  SampleRecord r = make_record("a", "s1");
  r.qc_flags = {QcFlag::TooLong};
  r.split = Split::Val;
  r.extra = {{"collector_note", "windy"}, {"rating", 4}};
  m.records.push_back(r);
  SampleRecord aug = make_record("a.aug0", "s1");
  aug.parent = "a";
  aug.augmentation = AugmentationInfo{"gain", 3.5, 0};
  aug.review = ReviewInfo{"rejected", std::string("other")};
  m.records.push_back(aug);
  write_manifest(dir.path() / "m.jsonl", m);
  const Manifest back = read_manifest(dir.path() / "m.jsonl");
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.records[0].extra["collector_note"], "windy");
  EXPECT_NE(manifest_line(back.records[0]).find("collector_note"), std::string::npos);
}

TEST(Manifest, RejectsBadLines) {
  testkit::TempDir dir;
  std::ofstream(dir.path() / "bad.jsonl") << "{not json\n";
  EXPECT_EQ(error_code([&] { read_manifest(dir.path() / "bad.jsonl"); }), Errc::BadManifest);
  auto j = to_json(make_record("a", "s"));
  j["label"] = "banana";
  std::ofstream(dir.path() / "label.jsonl") << j.dump() << "\n";
  EXPECT_EQ(error_code([&] { read_manifest(dir.path() / "label.jsonl"); }), Errc::UnknownLabel);
  EXPECT_EQ(error_code([&] { read_manifest(dir.path() / "nope.jsonl"); }), Errc::Io);
}

TEST(Ingest, LocalTree) {
  testkit::TempDir dir;
  write_tone(dir.path() / "local" / "yego" / "amina__1.wav");
  write_tone(dir.path() / "local" / "yego" / "amina__2.wav", 0.2);
  write_tone(dir.path() / "local" / "oya" / "bosco__1.wav");
  write_tone(dir.path() / "local" / "notaword" / "x__1.wav");
  std::ofstream(dir.path() / "local" / "oya" / "broken.wav") << "garbage";
  IngestOptions opts;
  opts.data_root = dir.path();
  const auto rep = ingest(dir.path() / "local", Source::Local, builtin_labelset(), opts);
  ASSERT_EQ(rep.manifest.records.size(), 3u);
  EXPECT_EQ(rep.skipped_directories, 1u);
  EXPECT_EQ(rep.unreadable_files, 1u);
  const auto& r = rep.manifest.records.front();
  EXPECT_EQ(r.label, "oya");
  EXPECT_EQ(r.speaker, "bosco");
  EXPECT_EQ(r.path, "local/oya/bosco__1.wav");
  EXPECT_EQ(r.duration_ms, 1000);
  EXPECT_EQ(r.split, Split::Pool);
  EXPECT_EQ(r.checksum, sha256_hex(read_file(dir.path() / r.path)));

  opts.unmapped_as_unknown = true;
  opts.jobs = 3;
  const auto rep2 = ingest(dir.path() / "local", Source::Local, builtin_labelset(), opts);
  EXPECT_EQ(rep2.manifest.records.size(), 4u);
  EXPECT_EQ(rep2.manifest.records[0].label, "_unknown_");
}

TEST(Ingest, GscAndMswcLayouts) {
  testkit::TempDir dir;
  write_tone(dir.path() / "gsc" / "stop" / "ab12_nohash_0.wav");
  write_tone(dir.path() / "gsc" / "_background_noise_" / "white.wav");
  const auto gsc = ingest(dir.path() / "gsc", Source::Gsc).manifest;
  ASSERT_EQ(gsc.records.size(), 2u);
  EXPECT_EQ(gsc.records[0].label, "_silence_");
  EXPECT_EQ(gsc.records[1].label, "hagarara");
  EXPECT_EQ(gsc.records[1].speaker, "ab12");
  EXPECT_EQ(gsc.records[1].source, Source::Gsc);

  write_tone(dir.path() / "mswc" / "rw" / "clips" / "yego" / "c1.wav");
  const auto mswc = ingest(dir.path() / "mswc", Source::Mswc).manifest;
  ASSERT_EQ(mswc.records.size(), 1u);
  EXPECT_EQ(mswc.records[0].label, "yego");
  EXPECT_EQ(mswc.records[0].path, "rw/clips/yego/c1.wav");
  EXPECT_EQ(ingest(dir.path() / "mswc" / "rw", Source::Mswc).manifest.records.size(), 1u);
}

TEST(Ingest, Errors) {
  testkit::TempDir dir;
  EXPECT_EQ(error_code([&] { ingest(dir.path() / "missing", Source::Local); }), Errc::MissingRoot);
  fs::create_directories(dir.path() / "empty" / "yego");
  EXPECT_EQ(error_code([&] { ingest(dir.path() / "empty", Source::Local); }), Errc::EmptyIngest);
}

TEST(Qc, Examples) {
  EXPECT_TRUE(validate_clip(tone(1.0, 0.3)).empty());
  const auto silent = validate_clip(AudioClip(std::vector<double>(16000), 16000));
  EXPECT_TRUE(silent.count(QcFlag::Empty));
  EXPECT_TRUE(silent.count(QcFlag::ExcessiveLeadSilence));
  EXPECT_TRUE(validate_clip(tone(1.0, 0.3, 12000)).count(QcFlag::ExcessiveLeadSilence));
  EXPECT_FALSE(validate_clip(tone(1.0, 0.3, 4000)).count(QcFlag::ExcessiveLeadSilence));
  EXPECT_TRUE(validate_clip(tone(0.1, 0.3)).count(QcFlag::TooShort));
  EXPECT_TRUE(validate_clip(tone(3.5, 0.3)).count(QcFlag::TooLong));
  EXPECT_TRUE(validate_clip(tone(1.0, 2.0)).count(QcFlag::ClippedOrOverlap));
  EXPECT_EQ(validate_clip(AudioClip({}, 16000)), (std::set<QcFlag>{QcFlag::Empty, QcFlag::TooShort}));

  const AudioClip quiet(std::vector<double>(16000, 0.001), 16000);
  EXPECT_FALSE(validate_clip(quiet).empty());
  EXPECT_TRUE(validate_record(quiet, "_silence_").empty());
  EXPECT_FALSE(validate_record(quiet, "yego").empty());
}

TEST(Qc, FirstSpeechMatchesOracle) {
  Rng rng(17);
  const QcPolicy policy;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(8000 + rng.index(8000));
    const std::size_t onset = rng.index(x.size());
    const double level = rng.uniform(0.0, 0.05);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (i >= onset ? level : 0.001) * rng.normal();
    const AudioClip clip(x, 16000);
    EXPECT_EQ(first_speech_frame(clip, policy),
              testkit::naive_first_speech(clip.samples(), 16000, policy.frame_ms, policy.speech_rms));
  }
}

TEST(Qc, LeadSilenceIsMonotoneInOnset) {
  bool flagged_before = false;
  for (std::size_t lead = 0; lead < 16000; lead += 500) {
    const bool flagged = validate_clip(tone(1.0, 0.3, lead)).count(QcFlag::ExcessiveLeadSilence) > 0;
    EXPECT_TRUE(!flagged_before || flagged) << "lead " << lead;
    flagged_before = flagged;
  }
  EXPECT_TRUE(flagged_before);
}

TEST(Split, SpeakerDisjointAndProportional) {
  const Manifest m = speakers_manifest(20, 5);
  const auto out = split_manifest(m, {}, 7);
  EXPECT_TRUE(out.warnings.empty());
  std::map<std::string, Split> seen;
  std::map<Split, int> counts;
  for (const auto& r : out.manifest.records) {
    auto [it, inserted] = seen.emplace(r.speaker, r.split);
    EXPECT_EQ(it->second, r.split) << r.speaker;
    ++counts[r.split];
  }
  EXPECT_NEAR(counts[Split::Train], 80, 5);
  EXPECT_NEAR(counts[Split::Val], 10, 5);
  EXPECT_NEAR(counts[Split::Test], 10, 5);
}

TEST(Split, DeterministicAndOrderInvariant) {
  const Manifest m = speakers_manifest(12, 3);
  const auto a = split_manifest(m, {}, 3).manifest;
  EXPECT_EQ(a, split_manifest(m, {}, 3).manifest);
  Manifest reversed = m;
  std::reverse(reversed.records.begin(), reversed.records.end());
  const auto b = split_manifest(reversed, {}, 3).manifest;
  for (const auto& r : a.records) EXPECT_EQ(b.find(r.id)->split, r.split);
  bool differs = false;
  for (std::uint64_t seed = 4; seed < 10 && !differs; ++seed) {
    const auto c = split_manifest(m, {}, seed).manifest;
    for (std::size_t i = 0; i < c.records.size(); ++i) differs |= c.records[i].split != a.records[i].split;
  }
  EXPECT_TRUE(differs);
}

TEST(Split, FlaggedExcludedUnlessOverridden) {
  Manifest m = speakers_manifest(5, 2);
  m.records[0].qc_flags = {QcFlag::TooShort};
  m.records[1].qc_flags = {QcFlag::TooShort};
  m.records[1].extra["qc_override"] = true;
  m.records[2].split = Split::Pending;
  const auto out = split_manifest(m, {}, 1).manifest;
  EXPECT_EQ(out.records[0].split, Split::Excluded);
  EXPECT_NE(out.records[1].split, Split::Excluded);
  EXPECT_EQ(out.records[2].split, Split::Pending);
}

TEST(Split, WarningsAndBadRatios) {
  const auto one = split_manifest(speakers_manifest(1, 4), {}, 1);
  EXPECT_FALSE(one.warnings.empty());
  for (const auto& r : one.manifest.records) EXPECT_EQ(r.split, Split::Train);
  EXPECT_EQ(error_code([] { split_manifest({}, {0.5, 0.3, 0.1}, 1); }), Errc::BadRatios);
  EXPECT_EQ(error_code([] { split_manifest({}, {1.0, 0.0, 0.0}, 1); }), Errc::BadRatios);
}

TEST(Counts, MatchDirectoryWalk) {
  testkit::TempDir dir;
  testkit::SynthCorpusSpec spec;
  spec.clips_per_class = 3;
  spec.speakers = 3;
  const Manifest m = testkit::write_synth_corpus(dir.path(), spec);
  const auto counts = word_counts(m);
  EXPECT_EQ(counts.size(), 25u);
  for (const auto& [label, n] : counts) {
    std::size_t walked = 0;
    if (fs::is_directory(dir.path() / "local" / label))
      for (const auto& e : fs::directory_iterator(dir.path() / "local" / label)) walked += e.path().extension() == ".wav";
    EXPECT_EQ(n, walked) << label;
  }
  Manifest excluded = m;
  excluded.records[0].split = Split::Excluded;
  EXPECT_EQ(word_counts(excluded).at(m.records[0].label), counts.at(m.records[0].label) - 1);
}
