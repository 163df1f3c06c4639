#include <functional>

#include "httplib.h"
#include "json.hpp"
#include "stanceforge/annotation.hpp"

namespace stanceforge {

using json = nlohmann::json;

namespace {

json progress_json(const Progress& p) {
  return {{"answered", p.answered}, {"skipped", p.skipped}, {"total", p.total},
          {"done", p.answered + p.skipped == p.total}};
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

// Maps store exceptions to status codes; most specific first.
void guarded(httplib::Response& res, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const NotFoundError& e) {
    send_error(res, 404, e.what());
  } catch (const ConflictError& e) {
    send_error(res, 409, e.what());
  } catch (const ValidationError& e) {
    send_error(res, 400, e.what());
  } catch (const IoError& e) {
    send_error(res, 400, e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, std::string("malformed request body: ") + e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, e.what());
  }
}

Judgement parse_judgement(const json& value) {
  if (value.is_string() && value.get<std::string>() == "skip") return Judgement::skip();
  if (value.is_number_integer()) {
    const auto v = value.get<long long>();
    if (v == 0 || v == 1) return Judgement::of(static_cast<StanceLabel>(v));
  }
  throw ValidationError("label must be 0, 1 or \"skip\", got " + value.dump());
}

}  // namespace

struct AnnotationServer::Impl {
  AnnotationStore& store;
  ServiceOptions options;
  httplib::Server server;

  Impl(AnnotationStore& s, ServiceOptions o) : store(s), options(std::move(o)) { routes(); }

  void routes() {
    if (!options.bearer_token.empty()) {
      server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
        if (req.path.rfind("/sessions", 0) != 0) return httplib::Server::HandlerResponse::Unhandled;
        if (req.get_header_value("Authorization") == "Bearer " + options.bearer_token)
          return httplib::Server::HandlerResponse::Unhandled;
        send_error(res, 401, "missing or wrong bearer token");
        return httplib::Server::HandlerResponse::Handled;
      });
    }

    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto body = json::parse(req.body);
        if (!body.is_object() || !body.contains("selection_path") || !body.contains("corpus_path"))
          throw ValidationError("body needs selection_path and corpus_path");
        const auto selection = load_selection(body["selection_path"].get<std::string>());
        const auto corpus = load_corpus(body["corpus_path"].get<std::string>());
        const auto question = body.value("question", std::string());
        const auto id = store.create_session(selection, corpus, question);
        send_json(res, 201, {{"session_id", id}});
      });
    });

    server.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, {{"sessions", store.session_ids()}}); });
    });

    server.Get(R"(/sessions/([^/]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto item = store.next_item(req.matches[1]);
        if (item.done) {
          json body = progress_json(item.progress);
          body["done"] = true;
          body["question"] = item.question;
          send_json(res, 200, body);
          return;
        }
        send_json(res, 200,
                  {{"done", false},
                   {"comment_id", item.comment_id},
                   {"text", item.text},
                   {"question", item.question},
                   {"position", item.position},
                   {"total", item.progress.total},
                   {"progress", progress_json(item.progress)}});
      });
    });

    server.Post(R"(/sessions/([^/]+)/labels)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto body = json::parse(req.body);
        if (!body.is_object() || !body.contains("comment_id") || !body.contains("label"))
          throw ValidationError("body needs comment_id and label");
        const auto p = store.submit_label(req.matches[1], body["comment_id"].get<std::string>(),
                                          parse_judgement(body["label"]));
        send_json(res, 200, progress_json(p));
      });
    });

    server.Get(R"(/sessions/([^/]+)/export)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string id = req.matches[1];
        res.set_content(store.export_manifest(id), "application/x-ndjson");
        res.set_header("Content-Disposition", "attachment; filename=\"" + id + ".jsonl\"");
      });
    });

    server.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto s = store.snapshot(req.matches[1]);
        json body = progress_json(s.progress());
        body["session_id"] = s.session_id;
        body["question"] = s.question_text;
        body["created_at"] = s.created_at;
        body["updated_at"] = s.updated_at;
        body["relabels"] = s.audit.size();
        send_json(res, 200, body);
      });
    });

    if (!options.static_dir.empty() && !server.set_mount_point("/", options.static_dir.string()))
      throw IoError("static directory not found: " + options.static_dir.string());
  }
};

AnnotationServer::AnnotationServer(AnnotationStore& store, ServiceOptions options)
    : impl_(std::make_unique<Impl>(store, std::move(options))) {}

AnnotationServer::~AnnotationServer() { stop(); }

bool AnnotationServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int AnnotationServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool AnnotationServer::listen_after_bind() { return impl_->server.listen_after_bind(); }

void AnnotationServer::stop() {
  if (impl_) impl_->server.stop();
}

void AnnotationServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace stanceforge
