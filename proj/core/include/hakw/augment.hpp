#pragma once

#include <cstdint>
#include <filesystem>

#include "hakw/audio_io.hpp"
#include "hakw/corpus.hpp"

namespace hakw {

struct AugmentPolicy {
  double fraction = 0.8;
  double shift_ms_min = -100.0;
  double shift_ms_max = 100.0;
  double speed_min = 0.85;
  double speed_max = 1.15;
  double gain_db_min = -6.0;
  double gain_db_max = 6.0;
  double pad_ms_min = 0.0;
  double pad_ms_max = 150.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// output[i] = input[i - shift]; vacated samples are zero.
AudioClip time_shift(const AudioClip& clip, double shift_ms);

// Playback-rate change by linear interpolation; length becomes floor(len / factor).
AudioClip change_speed(const AudioClip& clip, double factor);

AudioClip amplify(const AudioClip& clip, double gain_db);

// Silences pad_ms at both edges by cropping to the centre and zero padding back to full length.
AudioClip zero_pad(const AudioClip& clip, double pad_ms);

// Applies one recorded augmentation and re-canonicalizes to the input length.
AudioClip apply_augmentation(const AudioClip& clip, const AugmentationInfo& info);

// Appends round(fraction * |train|) augmented copies of seeded-randomly chosen train records.
// Audio is not touched; see materialize_augmentations.
Manifest augment_manifest(const Manifest& manifest, const AugmentPolicy& policy);

// Writes <stem>.augN.wav next to each parent and fills in checksums. Returns files written.
std::size_t materialize_augmentations(Manifest& manifest, const std::filesystem::path& data_root);

}  // namespace hakw
