#include "stanceforge/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "stanceforge/error.hpp"
#include "stanceforge/prng.hpp"

namespace stanceforge {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::string_view kPromptTemplate =
    "A user in a discussion forum is debating other users about the following question: [q] "
    "The person is in favor about the topic in question. What would the person write? "
    "Write from the person's first person perspective.";

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

Comment parse_record(const ordered_json& j, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": record is not a JSON object");
  static const std::set<std::string> kKnown = {"id", "question_id", "text", "label", "origin"};
  for (const auto& [key, _] : j.items()) {
    if (!kKnown.count(key)) throw ValidationError(where + ": unknown field \"" + key + "\"");
  }
  auto string_field = [&](const char* name) {
    auto it = j.find(name);
    if (it == j.end() || !it->is_string())
      throw ValidationError(where + ": field \"" + name + "\" must be a string");
    return it->get<std::string>();
  };

  Comment c;
  c.id = string_field("id");
  c.question_id = string_field("question_id");
  c.text = string_field("text");
  if (c.id.empty()) throw ValidationError(where + ": empty id");
  if (c.text.empty()) throw ValidationError(where + ": empty text for id \"" + c.id + "\"");

  if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer() || (it->get<long long>() != 0 && it->get<long long>() != 1))
      throw ValidationError(where + ": label must be 0, 1 or null (id \"" + c.id + "\")");
    c.label = static_cast<StanceLabel>(it->get<int>());
  }
  if (auto it = j.find("origin"); it != j.end()) {
    if (!it->is_string()) throw ValidationError(where + ": origin must be a string");
    const auto origin = it->get<std::string>();
    if (origin == "real") {
      c.origin = Origin::Real;
    } else if (origin == "synthetic") {
      c.origin = Origin::Synthetic;
    } else {
      throw ValidationError(where + ": origin must be \"real\" or \"synthetic\"");
    }
  }
  return c;
}

}  // namespace

std::string_view to_string(StanceLabel label) {
  return label == StanceLabel::Favor ? "favor" : "against";
}

std::string_view to_string(Origin origin) {
  return origin == Origin::Real ? "real" : "synthetic";
}

StanceLabel parse_stance(std::string_view text) {
  const auto s = lowercase(text);
  if (s == "favor" || s == "1") return StanceLabel::Favor;
  if (s == "against" || s == "0") return StanceLabel::Against;
  throw ValidationError("stance must be favor|against|1|0, got \"" + std::string(text) + "\"");
}

StanceLabel stance_from_int(long long value) {
  if (value != 0 && value != 1)
    throw ValidationError("label must be 0 or 1, got " + std::to_string(value));
  return static_cast<StanceLabel>(value);
}

std::optional<std::size_t> Corpus::find(std::string_view id) const {
  for (std::size_t i = 0; i < comments.size(); ++i) {
    if (comments[i].id == id) return i;
  }
  return std::nullopt;
}

std::map<std::string, StanceLabel> Corpus::labels() const {
  std::map<std::string, StanceLabel> out;
  for (const auto& c : comments) {
    if (c.label) out.emplace(c.id, *c.label);
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void validate_corpus(const Corpus& corpus) {
  std::set<std::string_view> seen;
  for (const auto& c : corpus.comments) {
    if (c.id.empty()) throw ValidationError("comment with empty id");
    if (c.text.empty()) throw ValidationError("comment \"" + c.id + "\" has empty text");
    if (!seen.insert(c.id).second) throw ValidationError("duplicate id \"" + c.id + "\"");
    if (c.question_id != corpus.question_id)
      throw ValidationError("comment \"" + c.id + "\" belongs to question \"" + c.question_id +
                            "\", expected \"" + corpus.question_id + "\"");
  }
}

Corpus parse_corpus(std::string_view jsonl, const std::string& source) {
  Corpus corpus;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < jsonl.size()) {
    auto end = jsonl.find('\n', start);
    if (end == std::string_view::npos) end = jsonl.size();
    auto line = jsonl.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    const std::string where = source + ":" + std::to_string(line_no);
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(where + ": malformed JSON: " + e.what());
    }
    Comment c = parse_record(j, where);
    if (!seen.insert(c.id).second) throw ValidationError(where + ": duplicate id \"" + c.id + "\"");
    if (corpus.comments.empty()) {
      corpus.question_id = c.question_id;
    } else if (c.question_id != corpus.question_id) {
      throw ValidationError(where + ": question_id \"" + c.question_id + "\" differs from \"" +
                            corpus.question_id + "\"");
    }
    corpus.comments.push_back(std::move(c));
  }
  if (corpus.comments.empty()) throw ValidationError(source + ": empty corpus file");
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  return parse_corpus(read_file(path), path.string());
}

std::string format_comment(const Comment& c) {
  ordered_json j;
  j["id"] = c.id;
  j["question_id"] = c.question_id;
  j["text"] = c.text;
  j["label"] = c.label ? ordered_json(static_cast<int>(*c.label)) : ordered_json(nullptr);
  j["origin"] = std::string(to_string(c.origin));
  return j.dump();
}

std::string format_corpus(const std::vector<Comment>& comments) {
  std::string out;
  for (const auto& c : comments) {
    out += format_comment(c);
    out += '\n';
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  write_file_atomic(path, format_corpus(corpus.comments));
}

std::string synthetic_id(std::string_view question_id, std::size_t index) {
  return std::string(question_id) + "/synth/" + std::to_string(index);
}

SyntheticCorpus build_synthetic_corpus(const std::string& question_id,
                                       const std::vector<Comment>& favor,
                                       const std::vector<Comment>& against) {
  if (favor.empty() || favor.size() != against.size())
    throw ValidationError("unbalanced synthetic inputs: " + std::to_string(favor.size()) +
                          " favor vs " + std::to_string(against.size()) + " against");
  SyntheticCorpus out;
  out.base.question_id = question_id;
  out.m = favor.size() + against.size();
  out.base.comments.reserve(out.m);

  auto append = [&](const Comment& src, StanceLabel label) {
    if (src.question_id != question_id)
      throw ValidationError("synthetic comment for question \"" + src.question_id +
                            "\" mixed into \"" + question_id + "\"");
    if (src.text.empty()) throw ValidationError("synthetic comment with empty text");
    Comment c = src;
    c.id = synthetic_id(question_id, out.base.comments.size());
    c.label = label;
    c.origin = Origin::Synthetic;
    out.base.comments.push_back(std::move(c));
  };
  for (const auto& c : favor) append(c, StanceLabel::Favor);
  for (const auto& c : against) append(c, StanceLabel::Against);
  return out;
}

SyntheticCorpus take_balanced(const Corpus& synthetic, std::size_t m) {
  if (m == 0 || m % 2 != 0) throw ValidationError("synthetic size M must be positive and even");
  SyntheticCorpus out;
  out.base.question_id = synthetic.question_id;
  out.base.question_text = synthetic.question_text;
  out.m = m;
  std::vector<const Comment*> favor, against;
  for (const auto& c : synthetic.comments) {
    if (!c.label) throw ValidationError("synthetic comment \"" + c.id + "\" has no label");
    auto& bucket = *c.label == StanceLabel::Favor ? favor : against;
    if (bucket.size() < m / 2) bucket.push_back(&c);
  }
  if (favor.size() < m / 2 || against.size() < m / 2)
    throw ValidationError("synthetic corpus for \"" + synthetic.question_id + "\" cannot supply M=" +
                          std::to_string(m) + " balanced comments");
  for (const auto* c : favor) out.base.comments.push_back(*c);
  for (const auto* c : against) out.base.comments.push_back(*c);
  return out;
}

std::string make_prompt(std::string_view question_text, StanceLabel stance) {
  if (question_text.empty()) throw ValidationError("question text must be non-empty");
  std::string prompt(kPromptTemplate);
  if (stance == StanceLabel::Against) replace_all(prompt, "is in favor", "is not in favor");
  const auto pos = prompt.find("[q]");
  prompt.replace(pos, 3, question_text);
  return prompt;
}

std::size_t train_size(std::size_t n) { return n * kTrainNumerator / kTrainDenominator; }

SplitPlan split_corpus(const Corpus& corpus, std::uint64_t seed) {
  const std::size_t n = corpus.size();
  if (n < 2) throw ValidationError("corpus needs at least 2 comments to split, has " + std::to_string(n));
  SeededRng rng(seed);
  const auto perm = rng.permutation(n);
  const std::size_t n_train = train_size(n);
  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) in_train[perm[i]] = true;

  SplitPlan plan;
  plan.question_id = corpus.question_id;
  plan.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    (in_train[i] ? plan.train_ids : plan.test_ids).push_back(corpus.comments[i].id);
  }
  return plan;
}

SplitPlan load_split(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
    SplitPlan plan;
    plan.question_id = j.at("question_id").get<std::string>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    plan.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": malformed split plan: " + e.what());
  }
}

void save_split(const SplitPlan& plan, const std::filesystem::path& path) {
  ordered_json j;
  j["question_id"] = plan.question_id;
  j["seed"] = plan.seed;
  j["train_ids"] = plan.train_ids;
  j["test_ids"] = plan.test_ids;
  write_file_atomic(path, j.dump(2) + "\n");
}

std::map<std::string, SyntheticCorpus> misalign_pairing(
    const std::vector<std::string>& question_ids,
    const std::map<std::string, SyntheticCorpus>& synthetic_corpora, std::size_t offset) {
  const std::size_t n = question_ids.size();
  if (n == 0) throw ValidationError("misalign_pairing needs at least one question");
  if (offset % n == 0)
    throw ValidationError("offset " + std::to_string(offset) + " is a multiple of " +
                          std::to_string(n) + " and would keep the aligned pairing");
  std::map<std::string, SyntheticCorpus> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& donor = question_ids[(i + offset) % n];
    auto it = synthetic_corpora.find(donor);
    if (it == synthetic_corpora.end())
      throw ValidationError("no synthetic corpus for question \"" + donor + "\"");
    if (!out.emplace(question_ids[i], it->second).second)
      throw ValidationError("duplicate question id \"" + question_ids[i] + "\"");
  }
  return out;
}

}  // namespace stanceforge
