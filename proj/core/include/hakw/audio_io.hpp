#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hakw {

inline constexpr int kCanonicalRate = 16000;

// Mono float clip. Samples are kept in [-1, 1].
class AudioClip {
 public:
  AudioClip() = default;
  AudioClip(std::vector<double> samples, int sample_rate, std::optional<std::string> source_id = {});

  const std::vector<double>& samples() const noexcept { return samples_; }
  std::span<const double> view() const noexcept { return samples_; }
  int sample_rate() const noexcept { return sample_rate_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  const std::optional<std::string>& source_id() const noexcept { return source_id_; }

  long duration_ms() const noexcept;

  friend bool operator==(const AudioClip&, const AudioClip&) = default;

 private:
  std::vector<double> samples_;
  int sample_rate_ = kCanonicalRate;
  std::optional<std::string> source_id_;
};

struct WavInfo {
  int channels = 0;
  int bits_per_sample = 0;
  int sample_rate = 0;
  std::uint32_t data_length = 0;
  std::uint16_t format_tag = 0;
};

using Bytes = std::vector<std::uint8_t>;

WavInfo probe_wav(std::span<const std::uint8_t> bytes);

// Decodes a 16-bit PCM RIFF/WAVE buffer. Multi-channel input is averaged to mono.
AudioClip decode_wav(std::span<const std::uint8_t> bytes);

// Raw interleaved 16-bit samples exactly as stored in the data chunk.
std::vector<std::int16_t> decode_pcm16(std::span<const std::uint8_t> bytes, WavInfo* info = nullptr);

// Canonical 44-byte header writer.
Bytes encode_wav(const AudioClip& clip);
Bytes encode_wav_pcm16(std::span<const std::int16_t> interleaved, int sample_rate, int channels = 1);

// Rebuilds a stripped or damaged RIFF/WAVE preamble around surviving fmt/data chunks.
// Valid files pass through unchanged.
Bytes repair_riff(std::span<const std::uint8_t> bytes);

AudioClip resample(const AudioClip& clip, int target_rate);

// Symmetric zero padding (extra sample on the right) or center crop.
AudioClip pad_or_trim(const AudioClip& clip, std::size_t target_len);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

AudioClip load_wav(const std::filesystem::path& path);
void save_wav(const std::filesystem::path& path, const AudioClip& clip);

}  // namespace hakw
