#include "hakw/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "hakw/augment.hpp"
#include "hakw/error.hpp"

namespace hakw {

namespace fs = std::filesystem;

std::pair<std::size_t, std::size_t> feature_shape(FeatureKind kind, const FeatureConfig& cfg) {
  cfg.validate();
  const auto len = static_cast<std::size_t>(std::lround(kClipSeconds * cfg.sample_rate));
  std::size_t coeffs = 0;
  switch (kind) {
    case FeatureKind::Spectrogram: coeffs = static_cast<std::size_t>(cfg.n_bins()); break;
    case FeatureKind::LogMel: coeffs = static_cast<std::size_t>(cfg.n_mels); break;
    case FeatureKind::Mfcc: coeffs = static_cast<std::size_t>(cfg.n_mfcc); break;
  }
  return {cfg.frames_for(len), coeffs};
}

AudioClip canonical_clip(const AudioClip& clip, const FeatureConfig& cfg) {
  const auto len = static_cast<std::size_t>(std::lround(kClipSeconds * cfg.sample_rate));
  if (clip.sample_rate() == cfg.sample_rate) return pad_or_trim(clip, len);
  return pad_or_trim(resample(clip, cfg.sample_rate), len);
}

AudioClip load_record_audio(const SampleRecord& record, const Manifest& manifest, const fs::path& data_root) {
  const fs::path path = data_root / record.path;
  if (record.parent && record.augmentation && !fs::exists(path)) {
    const SampleRecord* parent = manifest.find(*record.parent);
    if (!parent) throw Error(Errc::BadManifest, "augmented record " + record.id + " has no parent in the manifest");
    return apply_augmentation(load_wav(data_root / parent->path), *record.augmentation);
  }
  const Bytes bytes = read_file(path);
  try {
    return decode_wav(bytes);
  } catch (const Error& e) {
    if (e.code() != Errc::MalformedHeader) throw;
    return decode_wav(repair_riff(bytes));
  }
}

FeatureMatrix record_features(const SampleRecord& record, const Manifest& manifest, const DatasetOptions& options) {
  fs::path cache;
  if (options.cache_dir) {
    cache = *options.cache_dir / std::string(to_string(options.kind)) / (record.id + ".hkfc");
    if (fs::exists(cache)) {
      try {
        FeatureMatrix m = read_feature_cache(cache, options.features);
        if (m.kind == options.kind) return m;
      } catch (const Error& e) {
        if (e.code() != Errc::BadCache && e.code() != Errc::ConfigMismatch) throw;
      }
    }
  }
  const AudioClip clip = canonical_clip(load_record_audio(record, manifest, options.data_root), options.features);
  FeatureMatrix m = compute_features(clip, options.kind, options.features);
  if (options.cache_dir) {
    for (double& v : m.data) v = static_cast<float>(v);
    write_feature_cache(cache, m);
  }
  return m;
}

std::vector<std::string> class_list(const Manifest& manifest, std::optional<std::size_t> top_n,
                                    const LabelSet& labels) {
  const auto counts = word_counts(manifest, labels);
  std::vector<std::string> present;
  for (const auto& l : labels.labels()) {
    const auto it = counts.find(l);
    if (it != counts.end() && it->second > 0) present.push_back(l);
  }
  if (top_n && *top_n < present.size()) {
    std::stable_sort(present.begin(), present.end(),
                     [&](const std::string& a, const std::string& b) { return counts.at(a) > counts.at(b); });
    present.resize(*top_n);
    std::sort(present.begin(), present.end(), [&](const std::string& a, const std::string& b) {
      return *labels.index_of(a) < *labels.index_of(b);
    });
  }
  return present;
}

LabeledFeatures build_dataset(const Manifest& manifest, Split split, const std::vector<std::string>& classes,
                              const DatasetOptions& options) {
  std::vector<std::pair<const SampleRecord*, int>> picked;
  for (const auto& r : manifest.records) {
    if (r.split != split) continue;
    const auto it = std::find(classes.begin(), classes.end(), r.label);
    if (it != classes.end()) picked.emplace_back(&r, static_cast<int>(it - classes.begin()));
  }

  std::vector<FeatureMatrix> mats(picked.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < picked.size(); i = next++) {
      try {
        mats[i] = record_features(*picked[i].first, manifest, options);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const unsigned jobs = std::max(1u, std::min<unsigned>(options.jobs, static_cast<unsigned>(picked.size())));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  LabeledFeatures out;
  const auto [frames, coeffs] = feature_shape(options.kind, options.features);
  out.kind = options.kind;
  out.config = options.features;
  out.frames = frames;
  out.coeffs = coeffs;
  for (std::size_t i = 0; i < picked.size(); ++i) out.append(mats[i], picked[i].second);
  return out;
}

}  // namespace hakw
