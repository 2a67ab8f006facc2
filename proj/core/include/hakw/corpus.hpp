#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hakw/audio_io.hpp"

namespace hakw {

inline constexpr std::string_view kUnknownLabel = "_unknown_";
inline constexpr std::string_view kSilenceLabel = "_silence_";

struct Keyword {
  int id = 0;
  std::string english;
  std::string kinyarwanda;
  std::string key;  // case-folded, whitespace-normalized storage label
};

// The 23 command words plus the two reserved negative classes.
class LabelSet {
 public:
  LabelSet(std::vector<Keyword> keywords, std::vector<std::string> reserved);

  const std::vector<Keyword>& keywords() const noexcept { return keywords_; }
  const std::vector<std::string>& reserved() const noexcept { return reserved_; }
  // Keyword keys in id order followed by the reserved labels.
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }

  bool contains(std::string_view label) const;
  bool is_reserved(std::string_view label) const;
  std::optional<std::size_t> index_of(std::string_view label) const;
  const Keyword* by_english(std::string_view english) const;
  const Keyword* by_id(int id) const;
  const Keyword* by_key(std::string_view key) const;

 private:
  std::vector<Keyword> keywords_;
  std::vector<std::string> reserved_;
  std::vector<std::string> labels_;
};

const LabelSet& builtin_labelset();

// Lower-cases and joins whitespace runs with '_' ("Muraho Afrika" -> "muraho_afrika").
std::string normalize_label(std::string_view text);

enum class Source { Mswc, Gsc, Local };
enum class Split { Pool, Pending, Train, Val, Test, Excluded };
enum class QcFlag { Empty, ExcessiveLeadSilence, ClippedOrOverlap, TooShort, TooLong };

std::string_view to_string(Source s) noexcept;
std::string_view to_string(Split s) noexcept;
std::string_view to_string(QcFlag f) noexcept;
Source source_from_string(std::string_view s);
Split split_from_string(std::string_view s);
QcFlag qc_flag_from_string(std::string_view s);

struct AugmentationInfo {
  std::string kind;  // shift | zero_pad | speed | gain
  double value = 0.0;
  int index = 0;  // N in the .augN.wav suffix
  friend bool operator==(const AugmentationInfo&, const AugmentationInfo&) = default;
};

struct ReviewInfo {
  std::string verdict;  // approved | rejected
  std::optional<std::string> reason;
  friend bool operator==(const ReviewInfo&, const ReviewInfo&) = default;
};

struct SampleRecord {
  std::string id;
  std::string path;  // relative to the data root
  std::string label;
  std::string speaker;
  Source source = Source::Local;
  long duration_ms = 0;
  int sample_rate = 0;
  std::set<QcFlag> qc_flags;
  Split split = Split::Pool;
  std::string checksum;

  std::optional<std::string> parent;  // set on augmented copies
  std::optional<AugmentationInfo> augmentation;
  std::optional<ReviewInfo> review;
  nlohmann::json extra = nlohmann::json::object();  // unknown fields, preserved verbatim

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

nlohmann::json to_json(const SampleRecord& r);
SampleRecord record_from_json(const nlohmann::json& j, const LabelSet& labels = builtin_labelset());

struct Manifest {
  std::vector<SampleRecord> records;

  const SampleRecord* find(std::string_view id) const;
  SampleRecord* find(std::string_view id);
  friend bool operator==(const Manifest&, const Manifest&) = default;
};

Manifest read_manifest(const std::filesystem::path& path, const LabelSet& labels = builtin_labelset());
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
std::string manifest_line(const SampleRecord& r);

std::string sha256_hex(std::span<const std::uint8_t> bytes);

struct IngestOptions {
  bool unmapped_as_unknown = false;
  unsigned jobs = 1;
  // Paths are recorded relative to this directory; defaults to the ingest root.
  std::optional<std::filesystem::path> data_root;
};

struct IngestReport {
  Manifest manifest;
  std::size_t skipped_directories = 0;
  std::size_t unreadable_files = 0;
  std::vector<std::string> skipped_names;
};

std::optional<std::string> map_directory(std::string_view dir_name, Source source, const LabelSet& labels);
std::optional<std::string> speaker_from_filename(std::string_view stem);

IngestReport ingest(const std::filesystem::path& root, Source source, const LabelSet& labels = builtin_labelset(),
                    const IngestOptions& options = {});

struct QcPolicy {
  double empty_rms = 1e-4;
  double speech_rms = 0.01;
  double frame_ms = 25.0;
  double max_lead_ms = 500.0;
  double min_ms = 200.0;
  double max_ms = 3000.0;
  double clip_level = 0.999;
  double clip_fraction = 0.001;
};

std::set<QcFlag> validate_clip(const AudioClip& clip, const QcPolicy& policy = {});

// validate_clip for a labelled record. _silence_ clips are not checked for emptiness or
// lead silence.
std::set<QcFlag> validate_record(const AudioClip& clip, std::string_view label, const QcPolicy& policy = {});

// Start (in samples) of the first sliding frame whose RMS reaches speech_rms, if any.
std::optional<std::size_t> first_speech_frame(const AudioClip& clip, const QcPolicy& policy = {});

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitOutcome {
  Manifest manifest;
  std::vector<std::string> warnings;
};

SplitOutcome split_manifest(const Manifest& manifest, const SplitRatios& ratios, std::uint64_t seed);

std::map<std::string, std::size_t> word_counts(const Manifest& manifest, const LabelSet& labels = builtin_labelset());

}  // namespace hakw
