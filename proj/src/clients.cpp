#include <chrono>
#include <cstdlib>
#include <future>
#include <thread>

#include "http_util.hpp"
#include "httplib.h"
#include "stanceforge/error.hpp"

namespace stanceforge {

using nlohmann::json;

namespace {

struct Endpoint {
  std::string origin;  // scheme://host:port
  std::string prefix;  // path prefix without trailing slash
};

Endpoint parse_url(const std::string& url) {
  if (url.empty()) throw ValidationError("endpoint URL is not set");
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ValidationError("endpoint URL needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  Endpoint ep;
  ep.origin = url.substr(0, slash);
  if (slash != std::string::npos) ep.prefix = url.substr(slash);
  while (!ep.prefix.empty() && ep.prefix.back() == '/') ep.prefix.pop_back();
  return ep;
}

}  // namespace

namespace detail {

json post_json(const ClientConfig& config, const std::string& route, const json& body) {
  const auto ep = parse_url(config.url);
  const auto payload = body.dump();
  std::string last_error;
  for (int attempt = 0; attempt <= config.retries; ++attempt) {
    if (attempt > 0 && config.retry_backoff_ms > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(config.retry_backoff_ms * attempt));
    httplib::Client client(ep.origin);
    const auto timeout = std::chrono::duration<double>(config.timeout_seconds);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    auto res = client.Post(ep.prefix + route, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    try {
      return json::parse(res->body);
    } catch (const json::parse_error& e) {
      last_error = std::string("unparsable response: ") + e.what();
    }
  }
  throw IoError("POST " + config.url + route + " failed after " + std::to_string(config.retries + 1) +
                " attempts: " + last_error);
}

}  // namespace detail

namespace {

std::vector<std::vector<float>> embed_batch(const ClientConfig& config,
                                            const std::vector<std::string>& texts) {
  const auto response = detail::post_json(config, "/embed", json{{"texts", texts}});
  if (!response.is_object() || !response.contains("vectors") || !response["vectors"].is_array())
    throw ValidationError("embedding endpoint response lacks a \"vectors\" array");
  std::vector<std::vector<float>> out;
  try {
    for (const auto& v : response["vectors"]) out.push_back(v.get<std::vector<float>>());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("embedding endpoint returned a malformed vector: ") + e.what());
  }
  if (out.size() != texts.size())
    throw ValidationError("embedding endpoint returned " + std::to_string(out.size()) +
                          " vectors for " + std::to_string(texts.size()) + " texts");
  return out;
}

}  // namespace

ClientConfig embed_config_from_env(ClientConfig base) {
  if (base.url.empty()) {
    if (const char* v = std::getenv("STANCEFORGE_EMBED_URL")) base.url = v;
  }
  return base;
}

ClientConfig generate_config_from_env(ClientConfig base) {
  if (base.url.empty()) {
    if (const char* v = std::getenv("STANCEFORGE_GEN_URL")) base.url = v;
  }
  return base;
}

EmbeddingSet fetch_embeddings(const ClientConfig& config, const std::vector<Comment>& comments) {
  if (config.batch_size == 0) throw ValidationError("batch size must be at least 1");
  if (comments.empty()) throw ValidationError("no comments to embed");

  std::vector<std::vector<std::string>> batches;
  for (std::size_t i = 0; i < comments.size(); i += config.batch_size) {
    auto& batch = batches.emplace_back();
    for (std::size_t j = i; j < std::min(comments.size(), i + config.batch_size); ++j)
      batch.push_back(comments[j].text);
  }

  // Batches run in waves of `parallelism`; results are slotted by batch index.
  std::vector<std::vector<std::vector<float>>> results(batches.size());
  const std::size_t wave = std::max<std::size_t>(1, config.parallelism);
  for (std::size_t start = 0; start < batches.size(); start += wave) {
    std::vector<std::future<std::vector<std::vector<float>>>> pending;
    const std::size_t stop = std::min(batches.size(), start + wave);
    for (std::size_t b = start; b < stop; ++b)
      pending.push_back(std::async(std::launch::async, embed_batch, std::cref(config), std::cref(batches[b])));
    for (std::size_t b = start; b < stop; ++b) results[b] = pending[b - start].get();
  }

  const std::size_t dim = results.front().empty() ? 0 : results.front().front().size();
  if (dim == 0) throw ValidationError("embedding endpoint returned empty vectors");
  EmbeddingSet set(dim);
  std::size_t next = 0;
  for (std::size_t b = 0; b < results.size(); ++b) {
    for (const auto& v : results[b]) {
      if (v.size() != dim)
        throw ValidationError("embedding endpoint returned dim " + std::to_string(v.size()) +
                              " in batch " + std::to_string(b) + ", expected " + std::to_string(dim));
      set.add(comments[next++].id, v);
    }
  }
  return set;
}

std::vector<std::string> generate_comments(const ClientConfig& config, const std::string& prompt,
                                           std::size_t n) {
  if (n == 0) throw ValidationError("number of comments to generate must be at least 1");
  std::vector<std::string> out;
  out.reserve(n);
  while (out.size() < n) {
    int blanks = 0;
    for (;;) {
      const auto response = detail::post_json(config, "/generate", json{{"prompt", prompt}});
      std::string text;
      if (response.is_object() && response.contains("text") && response["text"].is_string())
        text = response["text"].get<std::string>();
      const auto first = text.find_first_not_of(" \t\r\n");
      if (first != std::string::npos) {
        const auto last = text.find_last_not_of(" \t\r\n");
        out.push_back(text.substr(first, last - first + 1));
        break;
      }
      if (++blanks > config.retries)
        throw IoError("generation endpoint returned blank output " + std::to_string(blanks) +
                      " times in a row");
    }
  }
  return out;
}

}  // namespace stanceforge
