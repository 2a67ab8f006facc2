#include "hakw/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "hakw/error.hpp"

namespace hakw {

namespace {

constexpr std::uint16_t kFormatPcm = 0x0001;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) | (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_tag(Bytes& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

bool tag_at(std::span<const std::uint8_t> b, std::size_t off, const char* tag) {
  return off + 4 <= b.size() && std::memcmp(b.data() + off, tag, 4) == 0;
}

struct ParsedWav {
  WavInfo info;
  std::size_t fmt_offset = 0;  // offset of the "fmt " tag
  std::uint32_t fmt_size = 0;
  std::size_t data_offset = 0;  // offset of the first PCM byte
};

// Decodes the fields of a fmt chunk body starting at `body`.
WavInfo parse_fmt_body(std::span<const std::uint8_t> b, std::size_t body, std::uint32_t size) {
  if (size < 16 || body + 16 > b.size()) throw Error(Errc::MalformedHeader, "fmt chunk too small");
  WavInfo info;
  info.format_tag = read_u16(b, body);
  info.channels = read_u16(b, body + 2);
  info.sample_rate = static_cast<int>(read_u32(b, body + 4));
  info.bits_per_sample = read_u16(b, body + 14);
  if (info.format_tag == kFormatExtensible && size >= 40 && body + 26 <= b.size()) {
    info.format_tag = read_u16(b, body + 24);  // first two bytes of the sub-format GUID
  }
  return info;
}

void check_encoding(const WavInfo& info) {
  if (info.channels <= 0) throw Error(Errc::MalformedHeader, "zero channels");
  if (info.sample_rate <= 0) throw Error(Errc::MalformedHeader, "zero sample rate");
  if (info.format_tag != kFormatPcm) {
    throw Error(Errc::UnsupportedEncoding, "format tag " + std::to_string(info.format_tag) + " is not PCM");
  }
  if (info.bits_per_sample != 16) {
    throw Error(Errc::UnsupportedEncoding, std::to_string(info.bits_per_sample) + "-bit samples");
  }
}

ParsedWav parse(std::span<const std::uint8_t> b) {
  if (b.size() < 12 || !tag_at(b, 0, "RIFF")) throw Error(Errc::MalformedHeader, "missing RIFF tag");
  if (!tag_at(b, 8, "WAVE")) throw Error(Errc::MalformedHeader, "missing WAVE tag");

  ParsedWav out;
  bool have_fmt = false;
  bool have_data = false;
  std::size_t off = 12;
  while (off + 8 <= b.size()) {
    const std::uint32_t size = read_u32(b, off + 4);
    const std::size_t body = off + 8;
    if (tag_at(b, off, "fmt ")) {
      out.info = parse_fmt_body(b, body, size);
      out.fmt_offset = off;
      out.fmt_size = size;
      have_fmt = true;
    } else if (tag_at(b, off, "data")) {
      if (!have_fmt) throw Error(Errc::MalformedHeader, "data chunk precedes fmt chunk");
      const std::size_t available = b.size() - body;
      out.info.data_length = static_cast<std::uint32_t>(std::min<std::size_t>(size, available));
      out.data_offset = body;
      have_data = true;
      break;
    }
    // Chunks are word aligned.
    const std::size_t advance = 8 + static_cast<std::size_t>(size) + (size & 1u);
    if (advance > b.size() - off) break;
    off += advance;
  }
  if (!have_fmt) throw Error(Errc::MalformedHeader, "missing fmt chunk");
  if (!have_data) throw Error(Errc::MalformedHeader, "missing data chunk");
  check_encoding(out.info);
  const std::uint32_t block = static_cast<std::uint32_t>(out.info.channels * out.info.bits_per_sample / 8);
  out.info.data_length -= out.info.data_length % block;
  return out;
}

}  // namespace

AudioClip::AudioClip(std::vector<double> samples, int sample_rate, std::optional<std::string> source_id)
    : samples_(std::move(samples)), sample_rate_(sample_rate), source_id_(std::move(source_id)) {
  if (sample_rate_ <= 0) throw Error(Errc::InvalidRate, "sample rate must be positive");
  for (double& s : samples_) {
    if (!std::isfinite(s)) s = 0.0;
    s = std::clamp(s, -1.0, 1.0);
  }
}

long AudioClip::duration_ms() const noexcept {
  return std::lround(1000.0 * static_cast<double>(samples_.size()) / sample_rate_);
}

WavInfo probe_wav(std::span<const std::uint8_t> bytes) { return parse(bytes).info; }

std::vector<std::int16_t> decode_pcm16(std::span<const std::uint8_t> bytes, WavInfo* info) {
  const ParsedWav wav = parse(bytes);
  std::vector<std::int16_t> pcm(wav.info.data_length / 2);
  for (std::size_t i = 0; i < pcm.size(); ++i) {
    pcm[i] = static_cast<std::int16_t>(read_u16(bytes, wav.data_offset + 2 * i));
  }
  if (info) *info = wav.info;
  return pcm;
}

AudioClip decode_wav(std::span<const std::uint8_t> bytes) {
  WavInfo info;
  const auto pcm = decode_pcm16(bytes, &info);
  const auto channels = static_cast<std::size_t>(info.channels);
  const std::size_t frames = pcm.size() / channels;
  std::vector<double> samples(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) acc += pcm[f * channels + c] / 32768.0;
    samples[f] = acc / static_cast<double>(channels);
  }
  return AudioClip(std::move(samples), info.sample_rate);
}

Bytes encode_wav_pcm16(std::span<const std::int16_t> interleaved, int sample_rate, int channels) {
  if (sample_rate <= 0) throw Error(Errc::InvalidRate, "sample rate must be positive");
  const auto data_bytes = static_cast<std::uint32_t>(interleaved.size() * 2);
  Bytes out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, static_cast<std::uint16_t>(channels));
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate * channels * 2));
  put_u16(out, static_cast<std::uint16_t>(channels * 2));
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (std::int16_t s : interleaved) put_u16(out, static_cast<std::uint16_t>(s));
  return out;
}

Bytes encode_wav(const AudioClip& clip) {
  std::vector<std::int16_t> pcm(clip.size());
  for (std::size_t i = 0; i < pcm.size(); ++i) {
    const double scaled = std::round(clip.samples()[i] * 32768.0);
    pcm[i] = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
  }
  return encode_wav_pcm16(pcm, clip.sample_rate(), 1);
}

Bytes repair_riff(std::span<const std::uint8_t> bytes) {
  try {
    const ParsedWav wav = parse(bytes);
    // A zero data size followed by sample bytes is a writer that never patched its header.
    if (wav.info.data_length > 0 || wav.data_offset >= bytes.size()) return Bytes(bytes.begin(), bytes.end());
  } catch (const Error&) {
    // fall through to the scan
  }

  // Locate a plausible fmt chunk anywhere in the buffer.
  std::size_t fmt_off = bytes.size();
  WavInfo info;
  std::uint32_t fmt_size = 0;
  for (std::size_t off = 0; off + 8 + 16 <= bytes.size(); ++off) {
    if (!tag_at(bytes, off, "fmt ")) continue;
    const std::uint32_t size = read_u32(bytes, off + 4);
    if (size < 16 || size > 64) continue;
    try {
      info = parse_fmt_body(bytes, off + 8, size);
    } catch (const Error&) {
      continue;
    }
    if (info.channels < 1 || info.channels > 16 || info.sample_rate <= 0 || info.bits_per_sample == 0 ||
        info.bits_per_sample % 8 != 0) {
      continue;
    }
    fmt_off = off;
    fmt_size = size;
    break;
  }
  if (fmt_off == bytes.size()) throw Error(Errc::Unrepairable, "no recognizable fmt chunk");

  const std::size_t fmt_end = fmt_off + 8 + fmt_size + (fmt_size & 1u);
  std::size_t data_off = bytes.size();
  for (std::size_t off = std::min(fmt_end, bytes.size()); off + 8 <= bytes.size(); ++off) {
    if (tag_at(bytes, off, "data")) {
      data_off = off;
      break;
    }
  }
  if (data_off == bytes.size()) throw Error(Errc::Unrepairable, "no data chunk after fmt");

  const std::size_t body = data_off + 8;
  const std::size_t available = bytes.size() - body;
  std::size_t data_len = read_u32(bytes, data_off + 4);
  if (data_len == 0 || data_len > available) data_len = available;
  const std::size_t block = static_cast<std::size_t>(info.channels) * (info.bits_per_sample / 8);
  data_len -= data_len % block;

  Bytes out;
  out.reserve(12 + 8 + fmt_size + 8 + data_len);
  put_tag(out, "RIFF");
  put_u32(out, static_cast<std::uint32_t>(4 + 8 + fmt_size + (fmt_size & 1u) + 8 + data_len + (data_len & 1u)));
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, fmt_size);
  out.insert(out.end(), bytes.begin() + static_cast<std::ptrdiff_t>(fmt_off + 8),
             bytes.begin() + static_cast<std::ptrdiff_t>(fmt_off + 8 + fmt_size));
  if (fmt_size & 1u) out.push_back(0);
  put_tag(out, "data");
  put_u32(out, static_cast<std::uint32_t>(data_len));
  out.insert(out.end(), bytes.begin() + static_cast<std::ptrdiff_t>(body),
             bytes.begin() + static_cast<std::ptrdiff_t>(body + data_len));
  if (data_len & 1u) out.push_back(0);
  return out;
}

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) throw Error(Errc::InvalidRate, "target rate must be positive");
  if (target_rate == clip.sample_rate()) return clip;
  const auto& in = clip.samples();
  const std::size_t out_len =
      static_cast<std::size_t>(static_cast<std::uint64_t>(in.size()) * static_cast<std::uint64_t>(target_rate) /
                               static_cast<std::uint64_t>(clip.sample_rate()));
  std::vector<double> out(out_len);
  const double step = static_cast<double>(clip.sample_rate()) / target_rate;
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    const double a = in[std::min(lo, in.size() - 1)];
    const double b = in[std::min(lo + 1, in.size() - 1)];
    out[i] = std::clamp(a + (b - a) * frac, -1.0, 1.0);
  }
  return AudioClip(std::move(out), target_rate, clip.source_id());
}

AudioClip pad_or_trim(const AudioClip& clip, std::size_t target_len) {
  if (target_len == 0) throw Error(Errc::InvalidLength, "target length must be positive");
  const auto& in = clip.samples();
  if (in.size() == target_len) return clip;
  std::vector<double> out(target_len, 0.0);
  if (in.size() < target_len) {
    const std::size_t left = (target_len - in.size()) / 2;
    std::copy(in.begin(), in.end(), out.begin() + static_cast<std::ptrdiff_t>(left));
  } else {
    const std::size_t start = (in.size() - target_len) / 2;
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(start), target_len, out.begin());
  }
  return AudioClip(std::move(out), clip.sample_rate(), clip.source_id());
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

AudioClip load_wav(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  AudioClip clip = decode_wav(bytes);
  return AudioClip(clip.samples(), clip.sample_rate(), path.string());
}

void save_wav(const std::filesystem::path& path, const AudioClip& clip) { write_file(path, encode_wav(clip)); }

}  // namespace hakw
