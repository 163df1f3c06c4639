#include "stanceforge/annotation.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <random>

#include "json.hpp"

namespace stanceforge {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03lldZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<long long>(ms));
  return buf;
}

std::string random_session_id() {
  static std::mutex m;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(m);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
  return buf;
}

std::string judgement_text(const AnnotationSession& s, const std::string& id) {
  if (auto it = s.answered.find(id); it != s.answered.end()) return std::to_string(static_cast<int>(it->second));
  if (s.skipped.count(id)) return "skip";
  return "";
}

void write_all(int fd, std::string_view data, const fs::path& path) {
  while (!data.empty()) {
    const auto n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("write failed: " + path.string());
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  if (::fsync(fd) != 0) throw IoError("fsync failed: " + path.string());
}

void fsync_dir(const fs::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

// Applies one event; replay and live mutation share this path.
void apply_event(AnnotationSession& s, const ordered_json& ev) {
  const auto type = ev.at("type").get<std::string>();
  const auto ts = ev.value("ts", "");
  if (type == "created") {
    s.session_id = ev.at("session_id").get<std::string>();
    s.question_text = ev.value("question", "");
    s.created_at = ts;
    for (const auto& item : ev.at("items")) {
      auto one = parse_corpus(item.dump(), "session " + s.session_id);
      s.queue.push_back(std::move(one.comments.front()));
    }
  } else if (type == "served") {
    s.served.insert(ev.at("id").get<std::string>());
  } else if (type == "labeled" || type == "skipped") {
    const auto id = ev.at("id").get<std::string>();
    const auto previous = judgement_text(s, id);
    std::string current;
    if (type == "labeled") {
      const auto label = stance_from_int(ev.at("label").get<long long>());
      s.answered[id] = label;
      s.skipped.erase(id);
      current = std::to_string(static_cast<int>(label));
    } else {
      s.answered.erase(id);
      s.skipped.insert(id);
      current = "skip";
    }
    if (!previous.empty()) s.audit.push_back({id, previous, current, ts});
  } else {
    throw ValidationError("unknown session event \"" + type + "\"");
  }
  s.updated_at = ts;
}

}  // namespace

Progress AnnotationSession::progress() const { return {answered.size(), skipped.size(), queue.size()}; }

std::optional<std::size_t> AnnotationSession::head() const {
  for (std::size_t i = 0; i < queue.size(); ++i) {
    const auto& id = queue[i].id;
    if (!answered.count(id) && !skipped.count(id)) return i;
  }
  return std::nullopt;
}

struct AnnotationStore::Entry {
  std::mutex mutex;  // single writer per session
  AnnotationSession state;
  fs::path path;
  int fd = -1;

  ~Entry() {
    if (fd >= 0) ::close(fd);
  }
};

std::unique_ptr<AnnotationStore::Entry> AnnotationStore::load(const fs::path& path) {
  auto e = std::make_unique<Entry>();
  e->path = path;
  auto text = read_file(path);
  // A crash mid-append leaves a torn last line: drop it.
  const auto last_newline = text.rfind('\n');
  const std::size_t good = last_newline == std::string::npos ? 0 : last_newline + 1;
  if (good != text.size()) {
    text.resize(good);
    if (::truncate(path.c_str(), static_cast<off_t>(good)) != 0)
      throw IoError("cannot truncate torn log " + path.string());
  }
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    const auto line = std::string_view(text).substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      apply_event(e->state, ordered_json::parse(line));
    } catch (const std::exception& ex) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": corrupt session event: " + ex.what());
    }
  }
  if (e->state.session_id.empty()) return nullptr;  // creation never completed
  e->fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
  if (e->fd < 0) throw IoError("cannot open " + path.string());
  return e;
}

AnnotationStore::AnnotationStore(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create session directory " + dir_.string() + ": " + ec.message());
  for (const auto& file : fs::directory_iterator(dir_)) {
    if (file.path().extension() != ".jsonl") continue;
    if (auto e = load(file.path())) {
      auto id = e->state.session_id;
      sessions_.emplace(std::move(id), std::move(e));
    }
  }
}

AnnotationStore::~AnnotationStore() = default;

AnnotationStore::Entry& AnnotationStore::entry(const std::string& session_id) {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it != sessions_.end()) return *it->second;
  // Session ids are hex; anything else cannot name a log file.
  const bool plausible = !session_id.empty() && session_id.size() <= 64 &&
                         session_id.find_first_not_of("0123456789abcdef") == std::string::npos;
  const auto path = dir_ / (session_id + ".jsonl");
  if (plausible && fs::exists(path)) {
    if (auto e = load(path); e && e->state.session_id == session_id)
      return *sessions_.emplace(session_id, std::move(e)).first->second;
  }
  throw NotFoundError("unknown session \"" + session_id + "\"");
}

void AnnotationStore::append(Entry& e, const std::string& line) { write_all(e.fd, line + "\n", e.path); }

std::string AnnotationStore::create_session(const SelectionResult& selection, const Corpus& corpus,
                                            std::string question_text) {
  if (selection.selected.empty()) throw ValidationError("selection is empty");
  ordered_json items = ordered_json::array();
  std::set<std::string> seen;
  for (const auto& s : selection.selected) {
    const auto idx = corpus.find(s.id);
    if (!idx) throw ValidationError("selected id \"" + s.id + "\" is not in the corpus");
    if (!seen.insert(s.id).second) throw ValidationError("selected id \"" + s.id + "\" appears twice");
    Comment c = corpus.comments[*idx];
    c.label.reset();  // annotators see text only
    items.push_back(ordered_json::parse(format_comment(c)));
  }
  if (question_text.empty()) question_text = corpus.question_text;

  std::lock_guard lock(mutex_);
  std::string id;
  do {
    id = random_session_id();
  } while (sessions_.count(id) || fs::exists(dir_ / (id + ".jsonl")));

  ordered_json ev;
  ev["type"] = "created";
  ev["ts"] = now_iso8601();
  ev["session_id"] = id;
  ev["question"] = question_text;
  ev["question_id"] = corpus.question_id;
  ev["items"] = std::move(items);

  auto e = std::make_unique<Entry>();
  e->path = dir_ / (id + ".jsonl");
  e->fd = ::open(e->path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
  if (e->fd < 0) throw IoError("cannot create " + e->path.string());
  append(*e, ev.dump());
  fsync_dir(dir_);
  apply_event(e->state, ev);
  sessions_.emplace(id, std::move(e));
  return id;
}

NextItem AnnotationStore::next_item(const std::string& session_id) {
  auto& e = entry(session_id);
  std::lock_guard lock(e.mutex);
  auto& s = e.state;
  NextItem item;
  item.question = s.question_text;
  const auto head = s.head();
  if (!head) {
    item.done = true;
    item.progress = s.progress();
    return item;
  }
  const auto& c = s.queue[*head];
  if (!s.served.count(c.id)) {
    ordered_json ev{{"type", "served"}, {"ts", now_iso8601()}, {"id", c.id}};
    append(e, ev.dump());
    apply_event(s, ev);
  }
  item.comment_id = c.id;
  item.text = c.text;
  item.position = *head + 1;
  item.progress = s.progress();
  return item;
}

Progress AnnotationStore::submit_label(const std::string& session_id, const std::string& comment_id,
                                       Judgement judgement) {
  auto& e = entry(session_id);
  std::lock_guard lock(e.mutex);
  auto& s = e.state;
  std::optional<std::size_t> index;
  for (std::size_t i = 0; i < s.queue.size(); ++i)
    if (s.queue[i].id == comment_id) index = i;
  if (!index) throw NotFoundError("comment \"" + comment_id + "\" is not in session \"" + session_id + "\"");

  const bool judged = s.answered.count(comment_id) || s.skipped.count(comment_id);
  if (!judged && s.head() != index && !s.served.count(comment_id))
    throw ConflictError("comment \"" + comment_id + "\" has not been served yet");

  ordered_json ev;
  ev["type"] = judgement.label ? "labeled" : "skipped";
  ev["ts"] = now_iso8601();
  ev["id"] = comment_id;
  if (judgement.label) ev["label"] = static_cast<int>(*judgement.label);
  append(e, ev.dump());
  apply_event(s, ev);
  return s.progress();
}

Progress AnnotationStore::progress(const std::string& session_id) {
  auto& e = entry(session_id);
  std::lock_guard lock(e.mutex);
  return e.state.progress();
}

std::string AnnotationStore::export_manifest(const std::string& session_id) {
  auto& e = entry(session_id);
  std::lock_guard lock(e.mutex);
  std::vector<Comment> out;
  for (const auto& c : e.state.queue) {
    auto it = e.state.answered.find(c.id);
    if (it == e.state.answered.end()) continue;
    Comment labeled = c;
    labeled.label = it->second;
    out.push_back(std::move(labeled));
  }
  return format_corpus(out);
}

AnnotationSession AnnotationStore::snapshot(const std::string& session_id) {
  auto& e = entry(session_id);
  std::lock_guard lock(e.mutex);
  return e.state;
}

std::vector<std::string> AnnotationStore::session_ids() {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : sessions_) out.push_back(id);
  return out;
}

std::pair<std::string, int> parse_listen_address(const std::string& text) {
  std::string host = "127.0.0.1";
  std::string port_text = text;
  if (const auto colon = text.rfind(':'); colon != std::string::npos) {
    if (colon > 0) host = text.substr(0, colon);
    port_text = text.substr(colon + 1);
  }
  try {
    std::size_t used = 0;
    const int port = std::stoi(port_text, &used);
    if (used != port_text.size() || port < 0 || port > 65535) throw std::out_of_range("port");
    return {host, port};
  } catch (const std::exception&) {
    throw ValidationError("invalid listen address \"" + text + "\" (expected host:port)");
  }
}

}  // namespace stanceforge
