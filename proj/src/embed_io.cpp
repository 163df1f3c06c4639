#include "stanceforge/embed_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "json.hpp"
#include "stanceforge/error.hpp"

namespace stanceforge {

using nlohmann::json;

EmbeddingSet::EmbeddingSet(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw ValidationError("embedding dimension must be positive");
}

void EmbeddingSet::add(std::string id, std::span<const float> vector) {
  if (id.empty()) throw ValidationError("embedding with empty id");
  if (vector.size() != dim_)
    throw ValidationError("embedding \"" + id + "\" has " + std::to_string(vector.size()) +
                          " components, expected " + std::to_string(dim_));
  double norm2 = 0.0;
  for (float v : vector) {
    if (!std::isfinite(v)) throw ValidationError("embedding \"" + id + "\" has a non-finite component");
    norm2 += static_cast<double>(v) * v;
  }
  if (norm2 == 0.0) throw ValidationError("embedding \"" + id + "\" has zero norm");
  if (index_.count(id)) throw ValidationError("duplicate embedding id \"" + id + "\"");
  index_.emplace(id, ids_.size());
  ids_.push_back(std::move(id));
  data_.insert(data_.end(), vector.begin(), vector.end());
}

std::optional<std::size_t> EmbeddingSet::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::span<const float> EmbeddingSet::at(std::string_view id) const {
  auto i = find(id);
  if (!i) throw ValidationError("no embedding for id \"" + std::string(id) + "\"");
  return vector(*i);
}

EmbeddingSet EmbeddingSet::subset(const std::vector<std::string>& ids) const {
  EmbeddingSet out(dim_);
  for (const auto& id : ids) out.add(id, at(id));
  return out;
}

bool EmbeddingSet::operator==(const EmbeddingSet& other) const {
  if (dim_ != other.dim_ || ids_ != other.ids_ || data_.size() != other.data_.size()) return false;
  // Bitwise: round trips must preserve every float exactly.
  return std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

void ProbabilitySet::add(ProbabilityRow row) {
  auto in_unit = [](double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; };
  if (!in_unit(row.p_against) || !in_unit(row.p_favor))
    throw ValidationError("probabilities for \"" + row.id + "\" must lie in [0,1]");
  if (std::abs(row.p_against + row.p_favor - 1.0) > 1e-6)
    throw ValidationError("probabilities for \"" + row.id + "\" do not sum to 1");
  if (index_.count(row.id)) throw ValidationError("duplicate probability id \"" + row.id + "\"");
  index_.emplace(row.id, rows_.size());
  rows_.push_back(std::move(row));
}

const ProbabilityRow* ProbabilitySet::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &rows_[it->second];
}

const ProbabilityRow& ProbabilitySet::at(std::string_view id) const {
  const auto* row = find(id);
  if (!row) throw ValidationError("missing probability row for \"" + std::string(id) + "\"");
  return *row;
}

// ---------------------------------------------------------------------------
// EMB1

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(std::string_view bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw ValidationError(source_ + ": truncated file while reading " + what + " at byte " +
                            std::to_string(pos_));
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
    return v;
  }

  std::uint64_t u64(const char* what) {
    auto b = take(8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
    return v;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_embeddings(const EmbeddingSet& set) {
  std::string out;
  out.append(kEmbeddingMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(set.dim()));
  put_u64(out, set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& id = set.id(i);
    put_u32(out, static_cast<std::uint32_t>(id.size()));
    out += id;
    for (float v : set.vector(i)) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

EmbeddingSet decode_embeddings(std::string_view bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.take(4, "magic") != std::string_view(kEmbeddingMagic, 4))
    throw ValidationError(source + ": bad magic, not an EMB1 file");
  const std::uint32_t dim = r.u32("dim");
  const std::uint64_t count = r.u64("count");
  if (dim == 0) throw ValidationError(source + ": dimension must be positive");
  // Every entry needs at least 4 + 4*dim bytes; reject impossible counts early.
  if (count > r.remaining() / (4 + 4ull * dim))
    throw ValidationError(source + ": truncated file, header declares " + std::to_string(count) +
                          " entries");

  EmbeddingSet set(dim);
  std::vector<float> vec(dim);
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::uint32_t len = r.u32("id length");
    std::string id(r.take(len, "id"));
    for (std::uint32_t d = 0; d < dim; ++d) vec[d] = std::bit_cast<float>(r.u32("vector"));
    set.add(std::move(id), vec);
  }
  if (!r.done()) throw ValidationError(source + ": trailing bytes after last entry");
  return set;
}

std::string format_embeddings_jsonl(const EmbeddingSet& set) {
  std::string out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    nlohmann::ordered_json j;
    j["id"] = set.id(i);
    auto v = set.vector(i);
    j["vector"] = std::vector<float>(v.begin(), v.end());
    out += j.dump();
    out += '\n';
  }
  return out;
}

EmbeddingSet parse_embeddings_jsonl(std::string_view text, const std::string& source) {
  std::optional<EmbeddingSet> set;
  std::size_t line_no = 0, start = 0;
  std::vector<float> vec;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const auto where = source + ":" + std::to_string(line_no);
    try {
      auto j = json::parse(line);
      vec.clear();
      for (const auto& x : j.at("vector")) vec.push_back(x.get<float>());
      if (!set) set.emplace(vec.size());
      if (vec.size() != set->dim())
        throw ValidationError(where + ": dimension mismatch (" + std::to_string(vec.size()) + " vs " +
                              std::to_string(set->dim()) + ")");
      set->add(j.at("id").get<std::string>(), vec);
    } catch (const json::exception& e) {
      throw ValidationError(where + ": malformed embedding record: " + e.what());
    } catch (const ValidationError& e) {
      if (std::string_view(e.what()).starts_with(where)) throw;
      throw ValidationError(where + ": " + e.what());
    }
  }
  if (!set) throw ValidationError(source + ": no embeddings in file");
  return std::move(*set);
}

EmbeddingSet read_embeddings(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kEmbeddingMagic, 4) == 0)
    return decode_embeddings(bytes, path.string());
  if (path.extension() == ".jsonl") return parse_embeddings_jsonl(bytes, path.string());
  throw ValidationError(path.string() + ": bad magic, not an EMB1 file");
}

void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  if (path.extension() == ".jsonl") {
    write_file_atomic(path, format_embeddings_jsonl(set));
  } else {
    write_file_atomic(path, encode_embeddings(set));
  }
}

ProbabilitySet parse_probabilities(std::string_view text, const std::string& source) {
  ProbabilitySet set;
  std::size_t line_no = 0, start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const auto where = source + ":" + std::to_string(line_no);
    ProbabilityRow row;
    try {
      auto j = json::parse(line);
      const auto& p = j.at("p");
      if (!p.is_array() || p.size() != 2) throw ValidationError(where + ": \"p\" must be [p_against, p_favor]");
      row.id = j.at("id").get<std::string>();
      row.p_against = p[0].get<double>();
      row.p_favor = p[1].get<double>();
    } catch (const json::exception& e) {
      throw ValidationError(where + ": malformed probability record: " + e.what());
    }
    try {
      set.add(std::move(row));
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  return set;
}

std::string format_probabilities(const ProbabilitySet& set) {
  std::string out;
  for (const auto& row : set.rows()) {
    nlohmann::ordered_json j;
    j["id"] = row.id;
    j["p"] = {row.p_against, row.p_favor};
    out += j.dump();
    out += '\n';
  }
  return out;
}

ProbabilitySet read_probabilities(const std::filesystem::path& path) {
  return parse_probabilities(read_file(path), path.string());
}

void write_probabilities(const ProbabilitySet& set, const std::filesystem::path& path) {
  write_file_atomic(path, format_probabilities(set));
}

}  // namespace stanceforge
