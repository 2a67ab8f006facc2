#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hakw/corpus.hpp"

namespace hakw {

// Failure with the HTTP status the API reports for it.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& message) : std::runtime_error(message), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

struct RecordingSubmission {
  int word_id = 0;
  std::string speaker_code;
  std::optional<std::string> device_hint;
  bool consent = false;
  Bytes audio;
};

struct ReviewDecision {
  std::string verdict;  // approved | rejected
  std::optional<std::string> reason;  // wrong_word | incomplete_word | other
};

struct SubmitResult {
  std::string id;
  std::set<QcFlag> qc_flags;
};

// Manifest-plus-files storage behind the collection API. Layout under the data dir:
//   local/manifest.jsonl
//   local/<word>/<speaker>__<checksum prefix>.wav
// Mutations go through one writer lock; readers take an immutable snapshot.
class CollectionStore {
 public:
  explicit CollectionStore(std::filesystem::path data_dir, QcPolicy qc = {});

  const std::filesystem::path& data_dir() const noexcept { return data_dir_; }
  std::filesystem::path manifest_path() const { return data_dir_ / "local" / "manifest.jsonl"; }

  SubmitResult submit(const RecordingSubmission& submission);
  SampleRecord review(const std::string& id, const ReviewDecision& decision);

  std::shared_ptr<const Manifest> snapshot() const;
  std::optional<SampleRecord> find(const std::string& id) const;

  nlohmann::json words() const;
  nlohmann::json stats() const;

 private:
  std::filesystem::path data_dir_;
  QcPolicy qc_;
  std::mutex writer_;
  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const Manifest> snapshot_;
  std::set<std::string> checksums_;

  void publish(std::shared_ptr<const Manifest> m);
};

// pending | approved | rejected
std::string review_status(const SampleRecord& r);
nlohmann::json recording_json(const SampleRecord& r);

struct ServiceOptions {
  std::filesystem::path data_dir;
  std::string cors_origin = "*";
  QcPolicy qc;
  std::size_t max_upload_bytes = 16 * 1024 * 1024;
};

// HTTP front end. Endpoints:
//   GET  /api/words
//   GET  /api/stats
//   GET  /api/recordings[?status=pending|approved|rejected]
//   GET  /api/recordings/{id}
//   GET  /api/recordings/{id}/audio
//   POST /api/recordings               multipart: audio, word_id, speaker_code, consent, device_hint
//   POST /api/recordings/{id}/review   JSON: {"verdict", "reason"}
class CollectionService {
 public:
  explicit CollectionService(ServiceOptions options);
  ~CollectionService();
  CollectionService(const CollectionService&) = delete;
  CollectionService& operator=(const CollectionService&) = delete;

  CollectionStore& store() noexcept;

  // Binds to an ephemeral port and returns it; call run() afterwards (or start()).
  int bind_any(const std::string& host = "127.0.0.1");
  bool bind(const std::string& host, int port);
  // Blocks serving until stop().
  void run();
  // Serves on a background thread.
  void start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace hakw
