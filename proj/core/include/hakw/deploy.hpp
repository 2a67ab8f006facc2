#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hakw/audio_io.hpp"
#include "hakw/nn.hpp"

namespace hakw {

inline constexpr std::uint32_t kArtifactVersion = 1;

// Layout: "HAKW", u32 version, u64 header length, UTF-8 JSON header, blob section.
Bytes serialize_model(const ModelArtifact& artifact);
ModelArtifact deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const ModelArtifact& artifact, const std::filesystem::path& path);
ModelArtifact load_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// int8 affine quantization

struct QuantParams {
  float scale = 1.0f;
  std::int32_t zero_point = 0;
};

// Range below this width (after widening to include 0) is treated as [-eps, eps].
inline constexpr float kQuantEpsilon = 1e-8f;

QuantParams choose_quant_params(float min, float max);
std::int8_t quantize_value(double v, QuantParams q) noexcept;
inline double dequantize_value(std::int8_t v, QuantParams q) noexcept {
  return static_cast<double>(static_cast<std::int32_t>(v) - q.zero_point) * static_cast<double>(q.scale);
}

NamedTensor quantize_tensor(const NamedTensor& t);
// Float values of either dtype.
std::vector<double> tensor_values(const NamedTensor& t);

// Calibration is an (N, frames, coeffs) feature batch.
ModelArtifact quantize_int8(const ModelArtifact& float_artifact, const Tensor& calibration);

// Inference over a float or quantized artifact.
class Classifier {
 public:
  explicit Classifier(ModelArtifact artifact);
  ~Classifier();
  Classifier(Classifier&&) noexcept;
  Classifier& operator=(Classifier&&) noexcept;

  const ModelArtifact& artifact() const noexcept;
  const std::vector<std::string>& labels() const noexcept { return artifact().labels; }
  bool quantized() const noexcept { return artifact().quantized; }

  Tensor logits(const Tensor& batch) const;
  Tensor predict_proba(const Tensor& batch) const;
  // Features for one clip, computed with the artifact's front end.
  FeatureMatrix features(const AudioClip& clip) const;
  EvalReport evaluate(const LabeledFeatures& data, std::size_t batch_size = 256) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Streaming detector

struct DetectorConfig {
  double window_ms = 1000.0;
  double hop_ms = 250.0;
  int smooth_k = 3;
  double threshold = 0.7;
  double refractory_ms = 1000.0;
  std::string wake_label = "muraho_afrika";

  void validate() const;
};

struct DetectionEvent {
  std::string label;
  std::int64_t time_ms = 0;  // end of the triggering window
  double confidence = 0.0;
};

// Single-owner state machine. Feed sample chunks in order; events come back in time order.
class StreamDetector {
 public:
  StreamDetector(std::shared_ptr<const Classifier> model, DetectorConfig cfg, int stream_rate);

  std::vector<DetectionEvent> feed(std::span<const double> samples);
  std::vector<DetectionEvent> feed_pcm16(std::span<const std::int16_t> samples);

  std::int64_t samples_seen() const noexcept { return total_; }
  const DetectorConfig& config() const noexcept { return cfg_; }
  // Smoothed posterior of the most recent hop (empty before the first full window).
  const std::vector<double>& last_posterior() const noexcept { return last_smoothed_; }

 private:
  std::vector<DetectionEvent> run_hop();

  std::shared_ptr<const Classifier> model_;
  DetectorConfig cfg_;
  int rate_;
  std::size_t window_;
  std::size_t hop_;
  std::vector<double> ring_;
  std::size_t ring_pos_ = 0;
  std::int64_t total_ = 0;
  std::int64_t next_hop_at_;
  std::vector<std::vector<double>> history_;
  std::vector<double> last_smoothed_;
  std::vector<std::int64_t> last_event_ms_;
  std::vector<bool> emits_;
};

// Runs a whole clip through a fresh detector, feeding it in hop-sized chunks.
std::vector<DetectionEvent> stream_detect(const AudioClip& clip, std::shared_ptr<const Classifier> model,
                                          const DetectorConfig& cfg);

}  // namespace hakw
