#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hakw/corpus.hpp"
#include "hakw/features.hpp"
#include "hakw/nn.hpp"

namespace hakw {

// Length every clip is brought to before featurization.
inline constexpr double kClipSeconds = 1.0;

struct DatasetOptions {
  FeatureKind kind = FeatureKind::Mfcc;
  FeatureConfig features;
  std::filesystem::path data_root = ".";
  // When set, features are read from and written to <cache_dir>/<kind>/<id>.hkfc. Values
  // then always pass through float32 so cached and fresh runs see identical inputs.
  std::optional<std::filesystem::path> cache_dir;
  unsigned jobs = 1;
};

// (frames, coeffs) of the feature matrix for a canonical clip.
std::pair<std::size_t, std::size_t> feature_shape(FeatureKind kind, const FeatureConfig& cfg);

// Resampled to the feature rate and padded or trimmed to kClipSeconds.
AudioClip canonical_clip(const AudioClip& clip, const FeatureConfig& cfg);

// Reads the record's WAV. Augmented copies whose file was never materialized are
// regenerated from their parent.
AudioClip load_record_audio(const SampleRecord& record, const Manifest& manifest,
                            const std::filesystem::path& data_root);

FeatureMatrix record_features(const SampleRecord& record, const Manifest& manifest, const DatasetOptions& options);

// Classes present among non-excluded records, in label-set order. With top_n, only the
// most frequent n labels (ties broken by label-set order).
std::vector<std::string> class_list(const Manifest& manifest, std::optional<std::size_t> top_n = std::nullopt,
                                    const LabelSet& labels = builtin_labelset());

// Records of one split whose label is in `classes`, featurized in manifest order.
LabeledFeatures build_dataset(const Manifest& manifest, Split split, const std::vector<std::string>& classes,
                              const DatasetOptions& options);

}  // namespace hakw
