#include "hakw/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <thread>

#include <httplib.h>

#include "hakw/error.hpp"

namespace hakw {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void fsync_path(const fs::path& path, int flags) {
  const int fd = ::open(path.c_str(), flags);
  if (fd < 0) throw Error(Errc::Io, "cannot open " + path.string());
  const int rc = ::fsync(fd);
  ::close(fd);
  if (rc != 0) throw Error(Errc::Io, "fsync failed for " + path.string());
}

void write_all(int fd, const void* data, std::size_t size, const fs::path& path) {
  const auto* p = static_cast<const char*>(data);
  while (size > 0) {
    const ssize_t n = ::write(fd, p, size);
    if (n < 0) throw Error(Errc::Io, "write failed for " + path.string());
    p += n;
    size -= static_cast<std::size_t>(n);
  }
}

// Writes to a temporary, fsyncs it, renames into place and fsyncs the directory.
void durable_write(const fs::path& path, std::span<const std::uint8_t> bytes) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error(Errc::Io, "cannot create " + tmp.string());
  try {
    write_all(fd, bytes.data(), bytes.size(), tmp);
    if (::fsync(fd) != 0) throw Error(Errc::Io, "fsync failed for " + tmp.string());
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  fs::rename(tmp, path);
  fsync_path(path.parent_path(), O_RDONLY | O_DIRECTORY);
}

void durable_append(const fs::path& path, const std::string& line) {
  fs::create_directories(path.parent_path());
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw Error(Errc::Io, "cannot open " + path.string());
  try {
    write_all(fd, line.data(), line.size(), path);
    if (::fsync(fd) != 0) throw Error(Errc::Io, "fsync failed for " + path.string());
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

bool valid_speaker_code(const std::string& s) {
  if (s.empty() || s.size() > 64 || s.find("__") != std::string::npos) return false;
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isalnum(c) || c == '_' || c == '-'; });
}

const std::set<std::string>& review_reasons() {
  static const std::set<std::string> reasons = {"wrong_word", "incomplete_word", "other"};
  return reasons;
}

}  // namespace

std::string review_status(const SampleRecord& r) {
  if (!r.review) return "pending";
  return r.review->verdict;
}

json recording_json(const SampleRecord& r) {
  json j = to_json(r);
  j["status"] = review_status(r);
  return j;
}

CollectionStore::CollectionStore(fs::path data_dir, QcPolicy qc) : data_dir_(std::move(data_dir)), qc_(qc) {
  auto m = std::make_shared<Manifest>();
  if (fs::exists(manifest_path())) *m = read_manifest(manifest_path());
  for (const auto& r : m->records) checksums_.insert(r.checksum);
  snapshot_ = std::move(m);
}

std::shared_ptr<const Manifest> CollectionStore::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return snapshot_;
}

void CollectionStore::publish(std::shared_ptr<const Manifest> m) {
  std::lock_guard lock(snapshot_mutex_);
  snapshot_ = std::move(m);
}

std::optional<SampleRecord> CollectionStore::find(const std::string& id) const {
  const auto m = snapshot();
  if (const SampleRecord* r = m->find(id)) return *r;
  return std::nullopt;
}

SubmitResult CollectionStore::submit(const RecordingSubmission& s) {
  const Keyword* word = builtin_labelset().by_id(s.word_id);
  if (!word) throw ServiceError(400, "word_id must be between 1 and 23");
  if (!valid_speaker_code(s.speaker_code)) {
    throw ServiceError(400, "speaker_code must be 1-64 characters of [A-Za-z0-9_-] without '__'");
  }
  if (!s.consent) throw ServiceError(422, "consent is required to store a recording");
  if (s.audio.empty()) throw ServiceError(415, "audio is empty");

  Bytes stored;
  AudioClip clip;
  try {
    stored = repair_riff(s.audio);
    clip = decode_wav(stored);
  } catch (const Error& e) {
    throw ServiceError(415, std::string("audio is not a decodable WAV: ") + e.what());
  }
  const std::string checksum = sha256_hex(stored);

  SampleRecord r;
  r.id = s.speaker_code + "__" + checksum.substr(0, 16);
  r.path = "local/" + word->key + "/" + r.id + ".wav";
  r.label = word->key;
  r.speaker = s.speaker_code;
  r.source = Source::Local;
  r.duration_ms = clip.duration_ms();
  r.sample_rate = clip.sample_rate();
  r.qc_flags = validate_clip(clip, qc_);
  r.split = Split::Pending;
  r.checksum = checksum;
  if (s.device_hint) r.extra["device_hint"] = *s.device_hint;

  std::lock_guard lock(writer_);
  if (checksums_.contains(checksum)) throw ServiceError(409, "a recording with identical content already exists");
  durable_write(data_dir_ / r.path, stored);
  durable_append(manifest_path(), manifest_line(r) + "\n");
  checksums_.insert(checksum);
  auto next = std::make_shared<Manifest>(*snapshot());
  next->records.push_back(r);
  publish(std::move(next));
  return SubmitResult{r.id, r.qc_flags};
}

SampleRecord CollectionStore::review(const std::string& id, const ReviewDecision& d) {
  if (d.verdict != "approved" && d.verdict != "rejected") {
    throw ServiceError(400, "verdict must be 'approved' or 'rejected'");
  }
  if (d.reason && !review_reasons().contains(*d.reason)) {
    throw ServiceError(400, "reason must be one of wrong_word, incomplete_word, other");
  }
  std::lock_guard lock(writer_);
  auto next = std::make_shared<Manifest>(*snapshot());
  SampleRecord* r = next->find(id);
  if (!r) throw ServiceError(404, "no recording with id " + id);
  r->review = ReviewInfo{d.verdict, d.verdict == "rejected" ? d.reason : std::nullopt};
  r->split = d.verdict == "approved" ? Split::Pool : Split::Excluded;
  const SampleRecord updated = *r;
  write_manifest(manifest_path(), *next);
  publish(std::move(next));
  return updated;
}

json CollectionStore::words() const {
  const auto counts = word_counts(*snapshot());
  json out = json::array();
  for (const auto& k : builtin_labelset().keywords()) {
    const auto it = counts.find(k.key);
    out.push_back({{"id", k.id},
                   {"english", k.english},
                   {"kinyarwanda", k.kinyarwanda},
                   {"key", k.key},
                   {"collected_count", it == counts.end() ? 0 : it->second}});
  }
  return out;
}

json CollectionStore::stats() const {
  const auto m = snapshot();
  json per_word = json::object();
  json per_status = json::object();
  for (const auto& k : builtin_labelset().keywords()) {
    per_word[k.key] = 0;
    per_status[k.key] = {{"pending", 0}, {"approved", 0}, {"rejected", 0}};
  }
  std::set<std::string> speakers;
  std::uintmax_t total_bytes = 0;
  std::size_t excluded = 0;
  for (const auto& r : m->records) {
    std::error_code ec;
    const auto size = fs::file_size(data_dir_ / r.path, ec);
    if (!ec) total_bytes += size;
    if (!per_word.contains(r.label)) continue;
    per_status[r.label][review_status(r)] = per_status[r.label][review_status(r)].get<int>() + 1;
    if (r.split == Split::Excluded) {
      ++excluded;
      continue;
    }
    per_word[r.label] = per_word[r.label].get<int>() + 1;
    speakers.insert(r.speaker);
  }
  return {{"per_word_counts", std::move(per_word)},
          {"per_word_status", std::move(per_status)},
          {"total_speakers", speakers.size()},
          {"total_recordings", m->records.size()},
          {"excluded", excluded},
          {"total_bytes", total_bytes}};
}

// ---------------------------------------------------------------------------

struct CollectionService::Impl {
  ServiceOptions options;
  CollectionStore store;
  httplib::Server server;
  std::thread thread;

  explicit Impl(ServiceOptions o) : options(std::move(o)), store(options.data_dir, options.qc) { routes(); }

  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }
  static void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
  }

  static std::optional<std::string> field(const httplib::Request& req, const std::string& key) {
    if (req.has_file(key)) return req.get_file_value(key).content;
    if (req.has_param(key)) return req.get_param_value(key);
    return std::nullopt;
  }

  static RecordingSubmission parse_submission(const httplib::Request& req) {
    if (!req.is_multipart_form_data()) throw ServiceError(400, "expected multipart/form-data");
    RecordingSubmission s;
    const auto audio = field(req, "audio");
    if (!audio) throw ServiceError(400, "missing field: audio");
    s.audio.assign(audio->begin(), audio->end());
    const auto word = field(req, "word_id");
    if (!word) throw ServiceError(400, "missing field: word_id");
    try {
      std::size_t used = 0;
      s.word_id = std::stoi(*word, &used);
      if (used != word->size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ServiceError(400, "word_id must be an integer");
    }
    const auto speaker = field(req, "speaker_code");
    if (!speaker) throw ServiceError(400, "missing field: speaker_code");
    s.speaker_code = *speaker;
    const auto consent = field(req, "consent");
    if (!consent) throw ServiceError(400, "missing field: consent");
    if (*consent == "true" || *consent == "1") {
      s.consent = true;
    } else if (*consent == "false" || *consent == "0") {
      s.consent = false;
    } else {
      throw ServiceError(400, "consent must be true or false");
    }
    if (const auto hint = field(req, "device_hint"); hint && !hint->empty()) s.device_hint = *hint;
    return s;
  }

  template <typename F>
  static auto guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const ServiceError& e) {
        send_error(res, e.status(), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    };
  }

  void routes() {
    server.set_payload_max_length(options.max_upload_bytes);
    server.set_default_headers({{"Access-Control-Allow-Origin", options.cors_origin},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Get("/api/words", guarded([this](const httplib::Request&, httplib::Response& res) {
                 send_json(res, 200, store.words());
               }));
    server.Get("/api/stats", guarded([this](const httplib::Request&, httplib::Response& res) {
                 send_json(res, 200, store.stats());
               }));
    server.Get("/api/recordings", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 std::optional<std::string> status;
                 if (req.has_param("status")) {
                   status = req.get_param_value("status");
                   if (*status != "pending" && *status != "approved" && *status != "rejected") {
                     throw ServiceError(400, "status must be pending, approved or rejected");
                   }
                 }
                 json out = json::array();
                 for (const auto& r : store.snapshot()->records) {
                   if (!status || review_status(r) == *status) out.push_back(recording_json(r));
                 }
                 send_json(res, 200, out);
               }));
    server.Get(R"(/api/recordings/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto r = store.find(req.matches[1]);
                 if (!r) throw ServiceError(404, "no recording with id " + std::string(req.matches[1]));
                 send_json(res, 200, recording_json(*r));
               }));
    server.Get(R"(/api/recordings/([^/]+)/audio)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto r = store.find(req.matches[1]);
                 if (!r) throw ServiceError(404, "no recording with id " + std::string(req.matches[1]));
                 const Bytes bytes = read_file(store.data_dir() / r->path);
                 res.set_content(std::string(bytes.begin(), bytes.end()), "audio/wav");
               }));
    server.Post("/api/recordings", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const SubmitResult result = store.submit(parse_submission(req));
                  json flags = json::array();
                  for (QcFlag f : result.qc_flags) flags.push_back(std::string(to_string(f)));
                  send_json(res, 201, {{"id", result.id}, {"qc_flags", flags}});
                }));
    server.Post(R"(/api/recordings/([^/]+)/review)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  ReviewDecision d;
                  json body;
                  try {
                    body = json::parse(req.body);
                  } catch (const json::parse_error&) {
                    throw ServiceError(400, "body must be JSON");
                  }
                  if (!body.is_object() || !body.contains("verdict") || !body["verdict"].is_string()) {
                    throw ServiceError(400, "missing string field: verdict");
                  }
                  d.verdict = body["verdict"].get<std::string>();
                  if (body.contains("reason") && !body["reason"].is_null()) {
                    if (!body["reason"].is_string()) throw ServiceError(400, "reason must be a string");
                    d.reason = body["reason"].get<std::string>();
                  }
                  send_json(res, 200, recording_json(store.review(req.matches[1], d)));
                }));
  }
};

CollectionService::CollectionService(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

CollectionService::~CollectionService() { stop(); }

CollectionStore& CollectionService::store() noexcept { return impl_->store; }

int CollectionService::bind_any(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool CollectionService::bind(const std::string& host, int port) { return impl_->server.bind_to_port(host, port); }

void CollectionService::run() { impl_->server.listen_after_bind(); }

void CollectionService::start() {
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void CollectionService::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace hakw
