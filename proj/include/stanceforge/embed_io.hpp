#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stanceforge/corpus.hpp"

namespace stanceforge {

// Fixed-dimension float vectors keyed by comment id, in insertion order.
// Every vector is finite with non-zero norm; ids are unique.
class EmbeddingSet {
 public:
  explicit EmbeddingSet(std::size_t dim);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }

  // Throws ValidationError on wrong length, non-finite value, zero norm or
  // duplicate id.
  void add(std::string id, std::span<const float> vector);

  const std::string& id(std::size_t i) const { return ids_[i]; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const float> vector(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  std::optional<std::size_t> find(std::string_view id) const;
  std::span<const float> at(std::string_view id) const;

  // New set holding the given ids in the given order.
  EmbeddingSet subset(const std::vector<std::string>& ids) const;

  bool operator==(const EmbeddingSet& other) const;

 private:
  std::size_t dim_;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Two-class model outputs per id: (p_against, p_favor).
struct ProbabilityRow {
  std::string id;
  double p_against = 0.5;
  double p_favor = 0.5;
};

class ProbabilitySet {
 public:
  // Throws ValidationError unless both are in [0,1] and sum to 1 within 1e-6.
  void add(ProbabilityRow row);
  std::size_t size() const { return rows_.size(); }
  const std::vector<ProbabilityRow>& rows() const { return rows_; }
  const ProbabilityRow* find(std::string_view id) const;
  const ProbabilityRow& at(std::string_view id) const;

 private:
  std::vector<ProbabilityRow> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr char kEmbeddingMagic[4] = {'E', 'M', 'B', '1'};

// Binary EMB1 (little-endian): magic, u32 dim, u64 count, then per entry
// u32 id length, id bytes, dim x f32.
std::string encode_embeddings(const EmbeddingSet& set);
EmbeddingSet decode_embeddings(std::string_view bytes, const std::string& source = "<memory>");

// JSONL alternative: {"id": ..., "vector": [...]} per line.
std::string format_embeddings_jsonl(const EmbeddingSet& set);
EmbeddingSet parse_embeddings_jsonl(std::string_view text, const std::string& source = "<memory>");

// Reads either format, detected by the magic bytes.
EmbeddingSet read_embeddings(const std::filesystem::path& path);
// Writes JSONL when the extension is .jsonl, EMB1 otherwise.
void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);

// Probability JSONL: {"id": ..., "p": [p_against, p_favor]}.
ProbabilitySet parse_probabilities(std::string_view text, const std::string& source = "<memory>");
std::string format_probabilities(const ProbabilitySet& set);
ProbabilitySet read_probabilities(const std::filesystem::path& path);
void write_probabilities(const ProbabilitySet& set, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// HTTP clients for the external embedder and generator.

struct ClientConfig {
  std::string url;  // base URL, e.g. http://127.0.0.1:8080
  double timeout_seconds = 30.0;
  int retries = 3;
  std::size_t batch_size = 32;
  std::size_t parallelism = 1;  // concurrent batches
  int retry_backoff_ms = 100;
};

// Fills url from STANCEFORGE_EMBED_URL / STANCEFORGE_GEN_URL when empty.
ClientConfig embed_config_from_env(ClientConfig base = {});
ClientConfig generate_config_from_env(ClientConfig base = {});

// POST {url}/embed with {"texts": [...]}, batched. Entry i corresponds to
// comments[i]. Throws IoError on transport failure after retries and
// ValidationError on count or dimension disagreement.
EmbeddingSet fetch_embeddings(const ClientConfig& config, const std::vector<Comment>& comments);

// n calls to POST {url}/generate with {"prompt": ...}. Blank responses are
// retried against the same retry budget as transport errors.
std::vector<std::string> generate_comments(const ClientConfig& config, const std::string& prompt,
                                           std::size_t n);

}  // namespace stanceforge
