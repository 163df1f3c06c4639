#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "stanceforge/corpus.hpp"
#include "stanceforge/error.hpp"
#include "stanceforge/strategies.hpp"

namespace stanceforge {

class NotFoundError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Submission for an item that is neither the queue head, nor served before,
// nor already answered.
class ConflictError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct Progress {
  std::size_t answered = 0;
  std::size_t skipped = 0;
  std::size_t total = 0;

  bool operator==(const Progress&) const = default;
};

// A label or a skip.
struct Judgement {
  std::optional<StanceLabel> label;  // nullopt means skip

  static Judgement skip() { return {}; }
  static Judgement of(StanceLabel l) { return {l}; }
};

struct AuditEntry {
  std::string comment_id;
  std::string previous;  // "0", "1" or "skip"
  std::string current;
  std::string at;
};

struct AnnotationSession {
  std::string session_id;
  std::string question_text;
  std::vector<Comment> queue;  // selection order, most informative first
  std::map<std::string, StanceLabel> answered;
  std::set<std::string> skipped;
  std::set<std::string> served;
  std::vector<AuditEntry> audit;
  std::string created_at;
  std::string updated_at;

  Progress progress() const;
  // Index of the first queue item with neither an answer nor a skip.
  std::optional<std::size_t> head() const;
};

struct NextItem {
  bool done = false;
  std::string comment_id;
  std::string text;
  std::string question;
  std::size_t position = 0;  // 1-based queue position
  Progress progress;
};

// Sessions persisted as one append-only JSONL event log per session under
// `dir`. Every mutation is appended and fsync'd before it is applied, and
// replaying a log rebuilds the exact state. Logs created in `dir` by another
// process are picked up on first access.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path dir);
  ~AnnotationStore();
  AnnotationStore(const AnnotationStore&) = delete;
  AnnotationStore& operator=(const AnnotationStore&) = delete;

  std::string create_session(const SelectionResult& selection, const Corpus& corpus,
                             std::string question_text = {});
  NextItem next_item(const std::string& session_id);
  Progress submit_label(const std::string& session_id, const std::string& comment_id, Judgement judgement);
  Progress progress(const std::string& session_id);
  // Corpus JSONL of the answered items in queue order.
  std::string export_manifest(const std::string& session_id);
  AnnotationSession snapshot(const std::string& session_id);
  std::vector<std::string> session_ids();

 private:
  struct Entry;
  Entry& entry(const std::string& session_id);
  static std::unique_ptr<Entry> load(const std::filesystem::path& path);
  void append(Entry& e, const std::string& line);

  std::filesystem::path dir_;
  std::mutex mutex_;  // guards sessions_
  std::map<std::string, std::unique_ptr<Entry>> sessions_;
};

struct ServiceOptions {
  std::string bearer_token;          // empty disables auth
  std::filesystem::path static_dir;  // console assets, optional
};

// HTTP JSON API over an AnnotationStore.
class AnnotationServer {
 public:
  AnnotationServer(AnnotationStore& store, ServiceOptions options);
  ~AnnotationServer();

  // Blocks until stop(). Returns false when the address cannot be bound.
  bool listen(const std::string& host, int port);
  // Binds host:port (port 0 picks a free one) and returns the bound port, or
  // -1 on failure. Call listen_after_bind() next.
  int bind(const std::string& host, int port);
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// "host:port" (host defaults to 127.0.0.1). Throws ValidationError.
std::pair<std::string, int> parse_listen_address(const std::string& text);

}  // namespace stanceforge
