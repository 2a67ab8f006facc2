#include "hakw/augment.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hakw/error.hpp"
#include "hakw/random.hpp"
#include "stable_hash.hpp"

namespace hakw {

void AugmentPolicy::validate() const {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(Errc::BadConfig, "augment fraction must be in [0, 1]");
  if (shift_ms_min > shift_ms_max || speed_min > speed_max || gain_db_min > gain_db_max ||
      pad_ms_min > pad_ms_max) {
    throw Error(Errc::BadConfig, "augment ranges must be ordered min <= max");
  }
  if (speed_min <= 0.0) throw Error(Errc::BadConfig, "speed range must be positive");
  if (pad_ms_min < 0.0) throw Error(Errc::BadConfig, "pad range must be non-negative");
}

AudioClip time_shift(const AudioClip& clip, double shift_ms) {
  const auto n = static_cast<long long>(clip.size());
  const long long shift = std::llround(shift_ms * clip.sample_rate() / 1000.0);
  std::vector<double> out(clip.size(), 0.0);
  const auto& in = clip.samples();
  for (long long i = 0; i < n; ++i) {
    const long long src = i - shift;
    if (src >= 0 && src < n) out[static_cast<std::size_t>(i)] = in[static_cast<std::size_t>(src)];
  }
  return AudioClip(std::move(out), clip.sample_rate(), clip.source_id());
}

AudioClip change_speed(const AudioClip& clip, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw Error(Errc::BadFactor, "speed factor must be positive");
  if (factor == 1.0) return clip;
  const auto& in = clip.samples();
  const auto out_len = static_cast<std::size_t>(std::floor(static_cast<double>(in.size()) / factor));
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * factor;
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    const double a = in[std::min(lo, in.size() - 1)];
    const double b = in[std::min(lo + 1, in.size() - 1)];
    out[i] = a + (b - a) * frac;
  }
  return AudioClip(std::move(out), clip.sample_rate(), clip.source_id());
}

AudioClip amplify(const AudioClip& clip, double gain_db) {
  if (gain_db == 0.0) return clip;
  const double g = std::pow(10.0, gain_db / 20.0);
  std::vector<double> out(clip.samples());
  for (double& s : out) s = std::clamp(s * g, -1.0, 1.0);
  return AudioClip(std::move(out), clip.sample_rate(), clip.source_id());
}

AudioClip zero_pad(const AudioClip& clip, double pad_ms) {
  const auto pad = static_cast<std::size_t>(std::max(0.0, std::round(pad_ms * clip.sample_rate() / 1000.0)));
  if (pad == 0) return clip;
  if (2 * pad >= clip.size()) return AudioClip(std::vector<double>(clip.size()), clip.sample_rate(), clip.source_id());
  return pad_or_trim(pad_or_trim(clip, clip.size() - 2 * pad), clip.size());
}

AudioClip apply_augmentation(const AudioClip& clip, const AugmentationInfo& info) {
  AudioClip out;
  if (info.kind == "shift") {
    out = time_shift(clip, info.value);
  } else if (info.kind == "zero_pad") {
    out = zero_pad(clip, info.value);
  } else if (info.kind == "speed") {
    out = change_speed(clip, info.value);
  } else if (info.kind == "gain") {
    out = amplify(clip, info.value);
  } else {
    throw Error(Errc::BadConfig, "unknown augmentation '" + info.kind + "'");
  }
  return out.size() == clip.size() ? out : pad_or_trim(out, clip.size());
}

namespace {

std::string augmented_path(const std::string& parent_path, int index) {
  const std::filesystem::path p(parent_path);
  return (p.parent_path() / (p.stem().string() + ".aug" + std::to_string(index) + ".wav")).generic_string();
}

}  // namespace

Manifest augment_manifest(const Manifest& manifest, const AugmentPolicy& policy) {
  policy.validate();
  Manifest out = manifest;

  std::vector<std::size_t> train;
  std::map<std::string, int> existing;  // parent id -> highest aug index
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.parent) {
      existing[*r.parent] = std::max(existing[*r.parent], r.augmentation ? r.augmentation->index : 0);
    } else if (r.split == Split::Train) {
      train.push_back(i);
    }
  }
  const auto take = static_cast<std::size_t>(std::llround(policy.fraction * static_cast<double>(train.size())));
  if (take == 0) return out;

  Rng selector(policy.seed);
  selector.shuffle(std::span<std::size_t>(train));
  train.resize(take);
  std::sort(train.begin(), train.end());

  static constexpr const char* kKinds[] = {"shift", "zero_pad", "speed", "gain"};
  for (std::size_t idx : train) {
    const SampleRecord& parent = manifest.records[idx];
    // Per-record stream: parameters do not depend on which other records were selected.
    Rng rng(detail::stable_hash64(parent.id, policy.seed));
    AugmentationInfo info;
    info.kind = kKinds[rng.index(4)];
    if (info.kind == std::string_view("shift")) {
      info.value = rng.uniform(policy.shift_ms_min, policy.shift_ms_max);
    } else if (info.kind == std::string_view("zero_pad")) {
      info.value = rng.uniform(policy.pad_ms_min, policy.pad_ms_max);
    } else if (info.kind == std::string_view("speed")) {
      info.value = rng.uniform(policy.speed_min, policy.speed_max);
    } else {
      info.value = rng.uniform(policy.gain_db_min, policy.gain_db_max);
    }
    info.index = ++existing[parent.id];

    SampleRecord child = parent;
    child.id = parent.id + ".aug" + std::to_string(info.index);
    child.path = augmented_path(parent.path, info.index);
    child.parent = parent.id;
    child.augmentation = info;
    child.checksum.clear();
    child.review.reset();
    child.split = Split::Train;
    out.records.push_back(std::move(child));
  }
  return out;
}

std::size_t materialize_augmentations(Manifest& manifest, const std::filesystem::path& data_root) {
  std::size_t written = 0;
  for (auto& r : manifest.records) {
    if (!r.parent || !r.augmentation || !r.checksum.empty()) continue;
    const SampleRecord* parent = manifest.find(*r.parent);
    if (!parent) throw Error(Errc::BadManifest, "augmented record " + r.id + " has no parent in the manifest");
    const AudioClip clip = load_wav(data_root / parent->path);
    const Bytes bytes = encode_wav(apply_augmentation(clip, *r.augmentation));
    write_file(data_root / r.path, bytes);
    r.checksum = sha256_hex(bytes);
    ++written;
  }
  return written;
}

}  // namespace hakw
