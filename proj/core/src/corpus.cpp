#include "hakw/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "hakw/error.hpp"
#include "stable_hash.hpp"

namespace hakw {

// ---------------------------------------------------------------------------
// Label set

LabelSet::LabelSet(std::vector<Keyword> keywords, std::vector<std::string> reserved)
    : keywords_(std::move(keywords)), reserved_(std::move(reserved)) {
  for (auto& k : keywords_) {
    if (k.key.empty()) k.key = normalize_label(k.kinyarwanda);
    labels_.push_back(k.key);
  }
  for (const auto& r : reserved_) {
    if (std::find(labels_.begin(), labels_.end(), r) != labels_.end()) {
      throw Error(Errc::UnknownLabel, "reserved label collides with keyword: " + r);
    }
    labels_.push_back(r);
  }
  std::vector<std::string> sorted = labels_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw Error(Errc::UnknownLabel, "duplicate label in label set");
  }
}

bool LabelSet::contains(std::string_view label) const { return index_of(label).has_value(); }

bool LabelSet::is_reserved(std::string_view label) const {
  return std::find(reserved_.begin(), reserved_.end(), label) != reserved_.end();
}

std::optional<std::size_t> LabelSet::index_of(std::string_view label) const {
  const auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - labels_.begin());
}

const Keyword* LabelSet::by_english(std::string_view english) const {
  const std::string needle = normalize_label(english);
  for (const auto& k : keywords_) {
    if (normalize_label(k.english) == needle) return &k;
  }
  return nullptr;
}

const Keyword* LabelSet::by_id(int id) const {
  for (const auto& k : keywords_) {
    if (k.id == id) return &k;
  }
  return nullptr;
}

const Keyword* LabelSet::by_key(std::string_view key) const {
  for (const auto& k : keywords_) {
    if (k.key == key) return &k;
  }
  return nullptr;
}

const LabelSet& builtin_labelset() {
  static const LabelSet set(
      {
          {1, "Zero", "Zeru", ""},           {2, "One", "Rimwe", ""},
          {3, "Two", "Kabiri", ""},          {4, "Three", "Gatatu", ""},
          {5, "Four", "Kane", ""},           {6, "Five", "Gatanu", ""},
          {7, "Six", "Gatandatu", ""},       {8, "Seven", "Karindwi", ""},
          {9, "Eight", "Umunani", ""},       {10, "Nine", "Icyenda", ""},
          {11, "On", "Gucana", ""},          {12, "Off", "Kuzimya", ""},
          {13, "Ok", "Sawa", ""},            {14, "Go", "Genda", ""},
          {15, "Left", "Ibumoso", ""},       {16, "Right", "Iburyo", ""},
          {17, "Up", "Hejuru", ""},          {18, "Down", "Hasi", ""},
          {19, "No", "Oya", ""},             {20, "Yes", "Yego", ""},
          {21, "Start", "Tangira", ""},      {22, "Stop", "Hagarara", ""},
          {23, "Hello Afrika", "Muraho Afrika", ""},
      },
      {std::string(kUnknownLabel), std::string(kSilenceLabel)});
  return set;
}

std::string normalize_label(std::string_view text) {
  std::string out;
  bool pending_sep = false;
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isspace(uc) || c == '-') {
      pending_sep = !out.empty();
      continue;
    }
    if (pending_sep) {
      out.push_back('_');
      pending_sep = false;
    }
    out.push_back(static_cast<char>(std::tolower(uc)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Enumerations

std::string_view to_string(Source s) noexcept {
  switch (s) {
    case Source::Mswc: return "mswc";
    case Source::Gsc: return "gsc";
    case Source::Local: return "local";
  }
  return "local";
}

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::Pool: return "pool";
    case Split::Pending: return "pending";
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Excluded: return "excluded";
  }
  return "pool";
}

std::string_view to_string(QcFlag f) noexcept {
  switch (f) {
    case QcFlag::Empty: return "EMPTY";
    case QcFlag::ExcessiveLeadSilence: return "EXCESSIVE_LEAD_SILENCE";
    case QcFlag::ClippedOrOverlap: return "CLIPPED_OR_OVERLAP";
    case QcFlag::TooShort: return "TOO_SHORT";
    case QcFlag::TooLong: return "TOO_LONG";
  }
  return "EMPTY";
}

Source source_from_string(std::string_view s) {
  for (Source v : {Source::Mswc, Source::Gsc, Source::Local}) {
    if (to_string(v) == s) return v;
  }
  throw Error(Errc::BadManifest, "unknown source '" + std::string(s) + "'");
}

Split split_from_string(std::string_view s) {
  for (Split v : {Split::Pool, Split::Pending, Split::Train, Split::Val, Split::Test, Split::Excluded}) {
    if (to_string(v) == s) return v;
  }
  throw Error(Errc::BadManifest, "unknown split '" + std::string(s) + "'");
}

QcFlag qc_flag_from_string(std::string_view s) {
  for (QcFlag v : {QcFlag::Empty, QcFlag::ExcessiveLeadSilence, QcFlag::ClippedOrOverlap, QcFlag::TooShort,
                   QcFlag::TooLong}) {
    if (to_string(v) == s) return v;
  }
  throw Error(Errc::BadManifest, "unknown QC flag '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Manifest (JSON Lines)

namespace {

constexpr const char* kKnownFields[] = {"id",          "path",     "label",  "speaker",   "source",
                                        "duration_ms", "sample_rate", "qc_flags", "split", "checksum",
                                        "parent",      "augmentation", "review"};

bool is_known_field(const std::string& key) {
  return std::any_of(std::begin(kKnownFields), std::end(kKnownFields), [&](const char* k) { return key == k; });
}

}  // namespace

nlohmann::json to_json(const SampleRecord& r) {
  nlohmann::json j = nlohmann::json::object();
  j["id"] = r.id;
  j["path"] = r.path;
  j["label"] = r.label;
  j["speaker"] = r.speaker;
  j["source"] = to_string(r.source);
  j["duration_ms"] = r.duration_ms;
  j["sample_rate"] = r.sample_rate;
  auto flags = nlohmann::json::array();
  for (QcFlag f : r.qc_flags) flags.push_back(to_string(f));
  j["qc_flags"] = flags;
  j["split"] = to_string(r.split);
  j["checksum"] = r.checksum;
  if (r.parent) j["parent"] = *r.parent;
  if (r.augmentation) {
    j["augmentation"] = {{"kind", r.augmentation->kind}, {"value", r.augmentation->value},
                         {"index", r.augmentation->index}};
  }
  if (r.review) {
    j["review"] = {{"verdict", r.review->verdict}};
    if (r.review->reason) j["review"]["reason"] = *r.review->reason;
  }
  for (const auto& [key, value] : r.extra.items()) {
    if (!j.contains(key)) j[key] = value;
  }
  return j;
}

SampleRecord record_from_json(const nlohmann::json& j, const LabelSet& labels) {
  if (!j.is_object()) throw Error(Errc::BadManifest, "record is not a JSON object");
  SampleRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.path = j.at("path").get<std::string>();
    r.label = j.at("label").get<std::string>();
    r.speaker = j.at("speaker").get<std::string>();
    r.source = source_from_string(j.at("source").get<std::string>());
    r.duration_ms = j.at("duration_ms").get<long>();
    r.sample_rate = j.at("sample_rate").get<int>();
    for (const auto& f : j.at("qc_flags")) r.qc_flags.insert(qc_flag_from_string(f.get<std::string>()));
    r.split = split_from_string(j.at("split").get<std::string>());
    r.checksum = j.at("checksum").get<std::string>();
    if (j.contains("parent")) r.parent = j["parent"].get<std::string>();
    if (j.contains("augmentation")) {
      const auto& a = j["augmentation"];
      r.augmentation = AugmentationInfo{a.at("kind").get<std::string>(), a.at("value").get<double>(),
                                        a.value("index", 0)};
    }
    if (j.contains("review")) {
      const auto& v = j["review"];
      ReviewInfo info{v.at("verdict").get<std::string>(), std::nullopt};
      if (v.contains("reason") && !v["reason"].is_null()) info.reason = v["reason"].get<std::string>();
      r.review = info;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadManifest, e.what());
  }
  if (!labels.contains(r.label)) throw Error(Errc::UnknownLabel, "label '" + r.label + "' not in label set");
  for (const auto& [key, value] : j.items()) {
    if (!is_known_field(key)) r.extra[key] = value;
  }
  return r;
}

const SampleRecord* Manifest::find(std::string_view id) const {
  for (const auto& r : records) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

SampleRecord* Manifest::find(std::string_view id) {
  for (auto& r : records) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

std::string manifest_line(const SampleRecord& r) { return to_json(r).dump(); }

Manifest read_manifest(const std::filesystem::path& path, const LabelSet& labels) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(Errc::BadManifest, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      m.records.push_back(record_from_json(j, labels));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot write manifest " + tmp.string());
    for (const auto& r : manifest.records) out << manifest_line(r) << '\n';
    if (!out) throw Error(Errc::Io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(Errc::Io, "SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ingest

std::optional<std::string> map_directory(std::string_view dir_name, Source source, const LabelSet& labels) {
  const std::string name = normalize_label(dir_name);
  if (labels.contains(name)) return name;
  if (source == Source::Gsc) {
    if (name == "_background_noise_") return std::string(kSilenceLabel);
    if (const Keyword* k = labels.by_english(name)) return k->key;
  }
  return std::nullopt;
}

std::optional<std::string> speaker_from_filename(std::string_view stem) {
  // GSC: <speaker>_nohash_<n>; local collection: <speaker>__<suffix>.
  for (std::string_view sep : {std::string_view("_nohash_"), std::string_view("__")}) {
    const auto pos = stem.find(sep);
    if (pos != std::string_view::npos && pos > 0) return std::string(stem.substr(0, pos));
  }
  return std::nullopt;
}

namespace {

struct ClipDir {
  std::filesystem::path dir;
  std::string label;
};

std::vector<std::filesystem::path> label_roots(const std::filesystem::path& root, Source source) {
  if (source != Source::Mswc) return {root};
  // MSWC nests <lang>/clips/<word>; accept the language directory or its parent.
  std::vector<std::filesystem::path> out;
  if (std::filesystem::is_directory(root / "clips")) out.push_back(root / "clips");
  std::vector<std::filesystem::path> langs;
  for (const auto& e : std::filesystem::directory_iterator(root)) {
    if (e.is_directory() && std::filesystem::is_directory(e.path() / "clips")) langs.push_back(e.path() / "clips");
  }
  std::sort(langs.begin(), langs.end());
  out.insert(out.end(), langs.begin(), langs.end());
  if (out.empty()) out.push_back(root);
  return out;
}

bool is_wav(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".wav";
}

struct FileResult {
  std::optional<SampleRecord> record;
};

}  // namespace

IngestReport ingest(const std::filesystem::path& root, Source source, const LabelSet& labels,
                    const IngestOptions& options) {
  if (!std::filesystem::is_directory(root)) throw Error(Errc::MissingRoot, root.string());
  const std::filesystem::path data_root = options.data_root.value_or(root);

  IngestReport report;
  std::vector<std::pair<std::filesystem::path, std::string>> files;
  for (const auto& base : label_roots(root, source)) {
    std::vector<std::filesystem::path> dirs;
    for (const auto& e : std::filesystem::directory_iterator(base)) {
      if (e.is_directory()) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
      auto label = map_directory(dir.filename().string(), source, labels);
      if (!label && options.unmapped_as_unknown && !dir.filename().string().starts_with(".")) {
        label = std::string(kUnknownLabel);
      }
      if (!label) {
        ++report.skipped_directories;
        report.skipped_names.push_back(dir.filename().string());
        continue;
      }
      for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && is_wav(e.path())) files.emplace_back(e.path(), *label);
      }
    }
  }
  std::sort(files.begin(), files.end());

  std::vector<FileResult> results(files.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& [path, label] = files[i];
      try {
        const Bytes bytes = read_file(path);
        const AudioClip clip = decode_wav(bytes);
        SampleRecord r;
        r.path = std::filesystem::relative(path, data_root).generic_string();
        r.id = std::string(to_string(source)) + "-" + sha256_hex({reinterpret_cast<const std::uint8_t*>(r.path.data()),
                                                                  r.path.size()})
                                                          .substr(0, 16);
        r.label = label;
        r.source = source;
        r.checksum = sha256_hex(bytes);
        r.speaker = speaker_from_filename(path.stem().string()).value_or("anon-" + r.checksum.substr(0, 12));
        r.duration_ms = clip.duration_ms();
        r.sample_rate = clip.sample_rate();
        r.split = Split::Pool;
        results[i].record = std::move(r);
      } catch (const Error&) {
        // unreadable: counted below
      }
    }
  };

  const unsigned jobs = std::max(1u, std::min<unsigned>(options.jobs, static_cast<unsigned>(files.size())));
  if (jobs <= 1) {
    work(0, files.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (files.size() + jobs - 1) / jobs;
    for (unsigned t = 0; t < jobs; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(files.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
  }

  for (auto& fr : results) {
    if (fr.record) {
      report.manifest.records.push_back(std::move(*fr.record));
    } else {
      ++report.unreadable_files;
    }
  }
  if (report.manifest.records.empty()) throw Error(Errc::EmptyIngest, "no records under " + root.string());
  return report;
}

// ---------------------------------------------------------------------------
// Quality control

std::optional<std::size_t> first_speech_frame(const AudioClip& clip, const QcPolicy& policy) {
  const auto& s = clip.samples();
  if (s.empty()) return std::nullopt;
  const auto frame = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(policy.frame_ms * clip.sample_rate() / 1000.0)), 1, s.size());
  const double threshold = policy.speech_rms * policy.speech_rms * static_cast<double>(frame);
  // Sliding sum of squares, one frame start per sample.
  double energy = 0.0;
  for (std::size_t i = 0; i < frame; ++i) energy += s[i] * s[i];
  for (std::size_t start = 0;; ++start) {
    if (energy >= threshold) return start;
    if (start + frame >= s.size()) break;
    energy += s[start + frame] * s[start + frame] - s[start] * s[start];
    // Re-anchor periodically so rounding drift cannot accumulate.
    if ((start & 0xFFF) == 0xFFF) {
      energy = 0.0;
      for (std::size_t i = start + 1; i < start + 1 + frame; ++i) energy += s[i] * s[i];
    }
  }
  return std::nullopt;
}

std::set<QcFlag> validate_clip(const AudioClip& clip, const QcPolicy& policy) {
  std::set<QcFlag> flags;
  const auto& s = clip.samples();
  if (s.empty()) return {QcFlag::Empty, QcFlag::TooShort};

  double energy = 0.0;
  std::size_t clipped = 0;
  for (double v : s) {
    energy += v * v;
    if (std::abs(v) >= policy.clip_level) ++clipped;
  }
  if (std::sqrt(energy / static_cast<double>(s.size())) < policy.empty_rms) flags.insert(QcFlag::Empty);

  const auto onset = first_speech_frame(clip, policy);
  if (!onset || 1000.0 * static_cast<double>(*onset) / clip.sample_rate() > policy.max_lead_ms) {
    flags.insert(QcFlag::ExcessiveLeadSilence);
  }

  const double ms = 1000.0 * static_cast<double>(s.size()) / clip.sample_rate();
  if (ms < policy.min_ms) flags.insert(QcFlag::TooShort);
  if (ms > policy.max_ms) flags.insert(QcFlag::TooLong);
  if (static_cast<double>(clipped) >= policy.clip_fraction * static_cast<double>(s.size()) && clipped > 0) {
    flags.insert(QcFlag::ClippedOrOverlap);
  }
  return flags;
}

std::set<QcFlag> validate_record(const AudioClip& clip, std::string_view label, const QcPolicy& policy) {
  auto flags = validate_clip(clip, policy);
  if (label == kSilenceLabel && !clip.empty()) {
    flags.erase(QcFlag::Empty);
    flags.erase(QcFlag::ExcessiveLeadSilence);
  }
  return flags;
}

// ---------------------------------------------------------------------------
// Speaker-disjoint split

SplitOutcome split_manifest(const Manifest& manifest, const SplitRatios& ratios, std::uint64_t seed) {
  const double sum = ratios.train + ratios.val + ratios.test;
  if (!(ratios.train > 0 && ratios.val > 0 && ratios.test > 0) || std::abs(sum - 1.0) > 1e-9) {
    throw Error(Errc::BadRatios, "ratios must be positive and sum to 1");
  }

  SplitOutcome out;
  out.manifest = manifest;
  auto assignable = [](const SampleRecord& r) {
    return !r.parent && r.split != Split::Pending && r.split != Split::Excluded;
  };

  std::map<std::string, std::size_t> mass;
  std::size_t total = 0;
  for (auto& r : out.manifest.records) {
    const bool overridden = r.extra.is_object() && r.extra.value("qc_override", false);
    if (!r.qc_flags.empty() && !overridden && r.split != Split::Pending) r.split = Split::Excluded;
    if (assignable(r)) {
      ++mass[r.speaker];
      ++total;
    }
  }

  std::vector<std::pair<std::uint64_t, std::string>> order;
  for (const auto& [speaker, n] : mass) order.emplace_back(detail::stable_hash64(speaker, seed), speaker);
  std::sort(order.begin(), order.end());

  // Each speaker goes to the split containing the midpoint of its cumulative mass interval,
  // so achieved proportions stay within one speaker's mass of the targets.
  std::map<std::string, Split> assignment;
  std::map<Split, std::size_t> speakers_per_split;
  double cumulative = 0.0;
  for (const auto& [hash, speaker] : order) {
    const double share = static_cast<double>(mass[speaker]) / static_cast<double>(total);
    const double mid = cumulative + share / 2.0;
    Split s = mid < ratios.train ? Split::Train : mid < ratios.train + ratios.val ? Split::Val : Split::Test;
    assignment[speaker] = s;
    ++speakers_per_split[s];
    cumulative += share;
  }

  for (auto& r : out.manifest.records) {
    if (assignable(r)) {
      r.split = assignment.at(r.speaker);
    } else if (r.parent && r.split != Split::Excluded) {
      // Augmented copies may only live in train.
      const auto it = assignment.find(r.speaker);
      r.split = (it != assignment.end() && it->second == Split::Train) ? Split::Train : Split::Excluded;
    }
  }

  if (mass.size() < 3) {
    out.warnings.push_back("only " + std::to_string(mass.size()) +
                           " speaker(s); speaker-disjoint split leaves some partitions empty");
  } else {
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
      if (speakers_per_split[s] == 0) {
        out.warnings.push_back("split '" + std::string(to_string(s)) + "' received no speakers");
      }
    }
  }
  return out;
}

std::map<std::string, std::size_t> word_counts(const Manifest& manifest, const LabelSet& labels) {
  std::map<std::string, std::size_t> counts;
  for (const auto& l : labels.labels()) counts[l] = 0;
  for (const auto& r : manifest.records) {
    if (r.split != Split::Excluded) ++counts[r.label];
  }
  return counts;
}

}  // namespace hakw
