// Experiment grid: manifests, scorers and resumable sweeps.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "http_util.hpp"
#include "json.hpp"
#include "stanceforge/error.hpp"
#include "stanceforge/evaluation.hpp"

namespace stanceforge {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

// Raised when the external scorer (not the inputs) fails; the cell is
// recorded as failed and the sweep continues.
class ScorerFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

ProbabilitySet call_scorer(Scorer& scorer, const TrainingManifest& manifest) {
  try {
    return scorer.score(manifest);
  } catch (const std::exception& e) {
    throw ScorerFailure(e.what());
  }
}

std::string budget_text(double budget) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", budget);
  return buf;
}

std::string sanitize(std::string s) {
  for (auto& ch : s) {
    if (ch == ' ' || ch == '/' || ch == '\\' || ch == ':') ch = '_';
  }
  return s;
}

ManifestEntry entry_of(const Comment& c, std::string source, bool with_label) {
  ManifestEntry e;
  e.id = c.id;
  e.text = c.text;
  if (with_label) e.label = c.label;
  e.source = std::move(source);
  return e;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot append to " + path.string());
  out << line << '\n';
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

std::unique_ptr<Scorer> make_scorer(const ScorerConfig& config, const QuestionData& data, const fs::path& work_dir) {
  if (!config.command.empty()) return std::make_unique<CommandScorer>(config.command, work_dir / "scorer");
  if (!config.url.empty()) {
    ClientConfig client;
    client.url = config.url;
    client.timeout_seconds = config.timeout_seconds;
    client.retries = 1;
    return std::make_unique<HttpScorer>(client);
  }
  if (config.builtin != "nearest-centroid")
    throw ValidationError("unknown builtin scorer \"" + config.builtin + "\"");
  const QuestionData* d = &data;
  return std::make_unique<NearestCentroidScorer>([d](const std::string& id) -> std::span<const float> {
    if (auto i = d->embeddings.find(id)) return d->embeddings.vector(*i);
    if (auto i = d->synthetic_embeddings.find(id)) return d->synthetic_embeddings.vector(*i);
    throw ValidationError("scorer has no embedding for \"" + id + "\"");
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifests

std::size_t TrainingManifest::count(std::string_view source) const {
  return static_cast<std::size_t>(
      std::count_if(train.begin(), train.end(), [&](const ManifestEntry& e) { return e.source == source; }));
}

std::string format_manifest(const TrainingManifest& m) {
  ordered_json j;
  j["question_id"] = m.question_id;
  j["question"] = m.question_text;
  j["method"] = m.method;
  j["m"] = m.m;
  j["budget"] = m.budget;
  j["seed"] = m.seed;
  auto& train = j["train"] = ordered_json::array();
  for (const auto& e : m.train) {
    train.push_back(ordered_json{{"id", e.id},
                                 {"text", e.text},
                                 {"label", e.label ? ordered_json(static_cast<int>(*e.label)) : ordered_json(nullptr)},
                                 {"source", e.source}});
  }
  auto& predict = j["predict"] = ordered_json::array();
  for (const auto& e : m.predict) predict.push_back(ordered_json{{"id", e.id}, {"text", e.text}});
  return j.dump(1) + "\n";
}

TrainingManifest parse_manifest(std::string_view text) {
  try {
    const auto j = ordered_json::parse(text);
    TrainingManifest m;
    m.question_id = j.at("question_id").get<std::string>();
    m.question_text = j.value("question", "");
    m.method = j.at("method").get<std::string>();
    m.m = j.at("m").get<std::size_t>();
    m.budget = j.at("budget").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("train")) {
      ManifestEntry entry;
      entry.id = e.at("id").get<std::string>();
      entry.text = e.at("text").get<std::string>();
      if (!e.at("label").is_null()) entry.label = stance_from_int(e["label"].get<long long>());
      entry.source = e.at("source").get<std::string>();
      m.train.push_back(std::move(entry));
    }
    for (const auto& e : j.at("predict"))
      m.predict.push_back({e.at("id").get<std::string>(), e.at("text").get<std::string>(), std::nullopt, ""});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Scorers

NearestCentroidScorer::NearestCentroidScorer(Lookup lookup, double temperature)
    : lookup_(std::move(lookup)), temperature_(temperature) {}

ProbabilitySet NearestCentroidScorer::score(const TrainingManifest& manifest) {
  std::array<std::vector<double>, 2> centroid;
  std::array<std::size_t, 2> count{0, 0};
  auto unit = [](std::span<const float> v) {
    double n = 0.0;
    for (float x : v) n += static_cast<double>(x) * x;
    n = std::sqrt(n);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
  };
  for (const auto& e : manifest.train) {
    if (!e.label) continue;
    const int c = static_cast<int>(*e.label);
    const auto v = unit(lookup_(e.id));
    if (centroid[c].empty()) centroid[c].assign(v.size(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) centroid[c][i] += v[i];
    ++count[c];
  }
  auto cosine_to = [](const std::vector<double>& c, const std::vector<double>& v) {
    double dot = 0.0, nc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      dot += c[i] * v[i];
      nc += c[i] * c[i];
    }
    return nc == 0.0 ? 0.0 : dot / std::sqrt(nc);
  };

  ProbabilitySet out;
  for (const auto& e : manifest.predict) {
    double p_favor = 0.5;
    if (count[0] > 0 && count[1] > 0) {
      const auto v = unit(lookup_(e.id));
      const double margin = cosine_to(centroid[1], v) - cosine_to(centroid[0], v);
      p_favor = 1.0 / (1.0 + std::exp(-temperature_ * margin));
    } else if (count[1] > 0) {
      p_favor = 1.0;
    } else if (count[0] > 0) {
      p_favor = 0.0;
    }
    out.add({e.id, 1.0 - p_favor, p_favor});
  }
  return out;
}

CommandScorer::CommandScorer(std::string command_template, fs::path work_dir)
    : template_(std::move(command_template)), work_dir_(std::move(work_dir)) {}

ProbabilitySet CommandScorer::score(const TrainingManifest& manifest) {
  static std::atomic<std::uint64_t> counter{0};
  fs::create_directories(work_dir_);
  const auto stem = sanitize(manifest.question_id) + "-" + std::to_string(counter++);
  const auto manifest_path = work_dir_ / (stem + ".manifest.json");
  const auto output_path = work_dir_ / (stem + ".pred.jsonl");
  write_file_atomic(manifest_path, format_manifest(manifest));

  std::string command = template_;
  auto substitute = [&](const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    while ((pos = command.find(key, pos)) != std::string::npos) {
      command.replace(pos, key.size(), value);
      pos += value.size();
    }
  };
  substitute("{manifest}", manifest_path.string());
  substitute("{output}", output_path.string());
  const int status = std::system(command.c_str());
  if (status != 0) throw IoError("scorer command exited with status " + std::to_string(status) + ": " + command);
  auto probs = read_probabilities(output_path);
  std::error_code ec;
  fs::remove(manifest_path, ec);
  fs::remove(output_path, ec);
  return probs;
}

HttpScorer::HttpScorer(ClientConfig config) : config_(std::move(config)) {}

ProbabilitySet HttpScorer::score(const TrainingManifest& manifest) {
  const auto body = nlohmann::json::parse(format_manifest(manifest));
  const auto response = detail::post_json(config_, "", body);
  ProbabilitySet out;
  try {
    for (const auto& row : response.at("predictions")) {
      const auto& p = row.at("p");
      out.add({row.at("id").get<std::string>(), p.at(0).get<double>(), p.at(1).get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("scorer endpoint returned a malformed response: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config and inputs

SweepConfig load_sweep_config(const fs::path& path) {
  const auto base = path.parent_path();
  SweepConfig config;
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    for (const auto& q : j.at("questions")) {
      QuestionInput in;
      in.id = q.value("id", "");
      in.question_text = q.value("question", "");
      in.corpus = resolve(base, q.at("corpus").get<std::string>());
      in.embeddings = resolve(base, q.at("embeddings").get<std::string>());
      in.synthetic_corpus = resolve(base, q.value("synthetic_corpus", ""));
      in.synthetic_embeddings = resolve(base, q.value("synthetic_embeddings", ""));
      in.annotations = resolve(base, q.value("annotations", ""));
      config.questions.push_back(std::move(in));
    }
    config.methods = j.at("methods").get<std::vector<std::string>>();
    config.m_values = j.value("m_values", std::vector<std::size_t>{});
    config.budgets = j.value("budgets", std::vector<double>{});
    config.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("k") && !j["k"].is_null()) config.k = j["k"].get<std::size_t>();
    config.cal_k = j.value("cal_k", config.cal_k);
    config.misalign_offset = j.value("misalign_offset", config.misalign_offset);
    config.parallelism = j.value("parallelism", config.parallelism);
    if (j.contains("scorer")) {
      const auto& s = j["scorer"];
      config.scorer.builtin = s.value("builtin", config.scorer.builtin);
      config.scorer.command = s.value("command", "");
      config.scorer.url = s.value("url", "");
      config.scorer.timeout_seconds = s.value("timeout_seconds", config.scorer.timeout_seconds);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": malformed sweep config: " + e.what());
  }

  if (config.questions.empty()) throw ValidationError("sweep config lists no questions");
  if (config.seeds.empty()) throw ValidationError("sweep config lists no seeds");
  bool needs_m = false, needs_budget = false;
  for (const auto& name : config.methods) {
    const auto& spec = find_method(name);
    needs_m |= spec.synthetic || spec.selection.has_value();
    needs_budget |= spec.selection.has_value();
  }
  if (needs_m && config.m_values.empty()) throw ValidationError("sweep config needs m_values for its methods");
  if (needs_budget && config.budgets.empty()) throw ValidationError("sweep config needs budgets for its methods");
  for (auto m : config.m_values)
    if (m == 0 || m % 2) throw ValidationError("synthetic size M must be positive and even, got " + std::to_string(m));
  for (auto b : config.budgets)
    if (!(b > 0.0 && b <= 1.0)) throw ValidationError("budget must lie in (0, 1], got " + budget_text(b));
  return config;
}

std::vector<QuestionData> load_questions(const SweepConfig& config) {
  std::vector<QuestionData> out;
  for (const auto& in : config.questions) {
    auto corpus = load_corpus(in.corpus);
    if (!in.id.empty() && in.id != corpus.question_id)
      throw ValidationError(in.corpus.string() + ": question_id \"" + corpus.question_id +
                            "\" does not match config id \"" + in.id + "\"");
    corpus.question_text = in.question_text;
    for (const auto& c : corpus.comments)
      if (!c.label) throw ValidationError("comment \"" + c.id + "\" has no label; sweeps need a fully labeled corpus");
    auto embeddings = read_embeddings(in.embeddings);
    for (const auto& c : corpus.comments)
      if (!embeddings.find(c.id))
        throw ValidationError(in.embeddings.string() + ": no embedding for corpus id \"" + c.id + "\"");

    Corpus synthetic;
    EmbeddingSet synthetic_embeddings(embeddings.dim());
    if (!in.synthetic_corpus.empty()) {
      synthetic = load_corpus(in.synthetic_corpus);
      if (in.synthetic_embeddings.empty())
        throw ValidationError("question \"" + corpus.question_id + "\" has a synthetic corpus but no embeddings");
      synthetic_embeddings = read_embeddings(in.synthetic_embeddings);
      if (synthetic_embeddings.dim() != embeddings.dim())
        throw ValidationError("synthetic embeddings for \"" + corpus.question_id + "\" differ in dimension");
      for (const auto& c : synthetic.comments) {
        if (!c.label) throw ValidationError("synthetic comment \"" + c.id + "\" has no label");
        if (!synthetic_embeddings.find(c.id))
          throw ValidationError(in.synthetic_embeddings.string() + ": no embedding for synthetic id \"" + c.id + "\"");
        if (corpus.find(c.id))
          throw ValidationError("synthetic id \"" + c.id + "\" collides with a real comment id");
      }
    }
    std::map<std::string, StanceLabel> annotations;
    if (!in.annotations.empty()) {
      for (const auto& c : load_corpus(in.annotations).comments) {
        if (!corpus.find(c.id))
          throw ValidationError(in.annotations.string() + ": annotated id \"" + c.id + "\" is not in the corpus");
        if (c.label) annotations[c.id] = *c.label;
      }
    }
    out.push_back({std::move(corpus), std::move(embeddings), std::move(synthetic), std::move(synthetic_embeddings),
                   std::move(annotations)});
  }

  if (config.misalign_offset != 0) {
    std::vector<std::string> ids;
    std::map<std::string, SyntheticCorpus> corpora;
    for (const auto& q : out) {
      ids.push_back(q.corpus.question_id);
      corpora[q.corpus.question_id] = SyntheticCorpus{q.synthetic, q.synthetic.size()};
    }
    const auto paired = misalign_pairing(ids, corpora, config.misalign_offset);
    std::vector<EmbeddingSet> donor_embeddings;
    for (std::size_t i = 0; i < out.size(); ++i)
      donor_embeddings.push_back(out[(i + config.misalign_offset) % out.size()].synthetic_embeddings);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].synthetic = paired.at(ids[i]).base;
      out[i].synthetic_embeddings = std::move(donor_embeddings[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cells

std::string SweepCell::key() const {
  return sanitize("s" + std::to_string(seed) + "__" + method + "__m" + std::to_string(m) + "__b" + budget_text(budget));
}

std::vector<SweepCell> enumerate_cells(const SweepConfig& config) {
  std::vector<SweepCell> cells;
  for (std::size_t q = 0; q < config.questions.size(); ++q) {
    for (auto seed : config.seeds) {
      for (const auto& name : config.methods) {
        const auto& spec = find_method(name);
        const bool uses_m = spec.synthetic || spec.selection.has_value();
        const std::vector<std::size_t> ms = uses_m ? config.m_values : std::vector<std::size_t>{0};
        const std::vector<double> budgets = spec.selection ? config.budgets : std::vector<double>{0.0};
        for (auto m : ms)
          for (auto b : budgets) cells.push_back({q, seed, name, m, b});
      }
    }
  }
  return cells;
}

TrainingManifest build_manifest(const QuestionData& data, const SweepConfig& config, const SweepCell& cell,
                                Scorer& scorer) {
  const auto& spec = find_method(cell.method);
  const auto& corpus = data.corpus;
  const auto split = split_corpus(corpus, cell.seed);

  TrainingManifest manifest;
  manifest.question_id = corpus.question_id;
  manifest.question_text = corpus.question_text;
  manifest.method = cell.method;
  manifest.m = cell.m;
  manifest.budget = cell.budget;
  manifest.seed = cell.seed;
  for (const auto& id : split.test_ids) manifest.predict.push_back(entry_of(corpus.comments[*corpus.find(id)], "", false));

  std::optional<SyntheticCorpus> synth;
  if (spec.synthetic || spec.selection) {
    if (data.synthetic.comments.empty())
      throw ValidationError("method \"" + cell.method + "\" needs synthetic data for \"" + corpus.question_id + "\"");
    synth = take_balanced(data.synthetic, cell.m);
  }
  if (spec.synthetic) {
    for (const auto& c : synth->base.comments) manifest.train.push_back(entry_of(c, "synthetic", true));
  }
  if (spec.true_labels) {
    for (const auto& id : split.train_ids) manifest.train.push_back(entry_of(corpus.comments[*corpus.find(id)], "true", true));
  }
  if (spec.selection) {
    std::vector<std::string> synth_ids;
    for (const auto& c : synth->base.comments) synth_ids.push_back(c.id);
    const auto pool = data.embeddings.subset(split.train_ids);
    const auto refs = data.synthetic_embeddings.subset(synth_ids);

    SelectionResult selection;
    switch (*spec.selection) {
      case Strategy::Sqbc: {
        const std::size_t k = config.k.value_or(default_k(cell.m));
        selection = select_most_informative(sqbc_scores(pool, refs, synth->base.labels(), k), cell.budget, k);
        break;
      }
      case Strategy::Cal: {
        // Model probabilities come from the scorer trained on the synthetic set.
        TrainingManifest probe = manifest;
        probe.method = cell.method + " (probe)";
        probe.train.clear();
        probe.predict.clear();
        for (const auto& c : synth->base.comments) probe.train.push_back(entry_of(c, "synthetic", true));
        for (const auto& id : split.train_ids) probe.predict.push_back(entry_of(corpus.comments[*corpus.find(id)], "", false));
        for (const auto& c : synth->base.comments) probe.predict.push_back(entry_of(c, "", false));
        const auto probs = call_scorer(scorer, probe);
        const std::size_t k = std::min(config.cal_k, refs.size());
        selection = select_cal(cal_scores(pool, probs, refs, probs, k), cell.budget, k);
        break;
      }
      case Strategy::Random:
        selection = random_select(split.train_ids, cell.budget, cell.seed);
        break;
    }
    for (const auto& id : selection.ids()) {
      auto idx = corpus.find(id);
      if (!idx) throw ValidationError("selection references unknown id \"" + id + "\"");
      auto entry = entry_of(corpus.comments[*idx], "manual", true);
      if (auto it = data.annotations.find(id); it != data.annotations.end()) entry.label = it->second;
      manifest.train.push_back(std::move(entry));
    }
  }
  return manifest;
}

namespace {

EvalRecord run_cell(const QuestionData& data, const SweepConfig& config, const SweepCell& cell, Scorer& scorer,
                    const fs::path& manifest_dir) {
  EvalRecord record;
  record.question_id = data.corpus.question_id;
  record.seed = cell.seed;
  record.method = cell.method;
  record.m = cell.m;
  record.budget = cell.budget;
  try {
    const auto manifest = build_manifest(data, config, cell, scorer);
    write_file_atomic(manifest_dir / (sanitize(record.question_id) + "__" + cell.key() + ".json"),
                      format_manifest(manifest));
    const auto probs = call_scorer(scorer, manifest);
    std::vector<StanceLabel> predictions, labels;
    for (const auto& e : manifest.predict) {
      const auto* row = probs.find(e.id);
      if (!row) throw ScorerFailure("scorer returned no prediction for \"" + e.id + "\"");
      predictions.push_back(row->p_favor > row->p_against ? StanceLabel::Favor : StanceLabel::Against);
      labels.push_back(*data.corpus.comments[*data.corpus.find(e.id)].label);
    }
    record.f1 = f1_score(predictions, labels);
  } catch (const ScorerFailure& e) {
    record.error = e.what();
  }
  return record;
}

std::string record_key(const EvalRecord& r) {
  return r.question_id + "\n" + std::to_string(r.seed) + "\n" + r.method + "\n" + std::to_string(r.m) + "\n" +
         budget_text(r.budget);
}

}  // namespace

SweepOutput run_sweep(const SweepConfig& config, const fs::path& out_dir) {
  const auto questions = load_questions(config);
  const auto cells = enumerate_cells(config);
  const auto manifest_dir = out_dir / "manifests";
  fs::create_directories(manifest_dir);
  const auto log_path = out_dir / "cells.jsonl";

  // Completed cells from an earlier, possibly interrupted, run. A torn final
  // line is cut off so that new appends start on a fresh line.
  std::map<std::string, EvalRecord> done;
  if (fs::exists(log_path)) {
    auto text = read_file(log_path);
    if (!text.empty() && text.back() != '\n') {
      const auto last = text.rfind('\n');
      text.resize(last == std::string::npos ? 0 : last + 1);
      write_file_atomic(log_path, text);
    }
    std::size_t start = 0;
    while (start < text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string::npos) break;
      const auto line = text.substr(start, end - start);
      start = end + 1;
      try {
        auto r = parse_record(line);
        if (r.ok()) done[record_key(r)] = std::move(r);
      } catch (const std::exception&) {
      }
    }
  }

  std::vector<std::unique_ptr<Scorer>> scorers;
  for (const auto& q : questions) scorers.push_back(make_scorer(config.scorer, q, out_dir));

  SweepOutput output;
  output.records.resize(cells.size());
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    EvalRecord probe{questions[c.question].corpus.question_id, c.seed, c.method, c.m, c.budget, std::nullopt, ""};
    if (auto it = done.find(record_key(probe)); it != done.end()) {
      output.records[i] = it->second;
      ++output.resumed;
    } else {
      todo.push_back(i);
    }
  }

  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      const std::size_t t = next++;
      if (t >= todo.size()) return;
      {
        std::lock_guard lock(log_mutex);
        if (error) return;
      }
      const auto& cell = cells[todo[t]];
      try {
        auto record = run_cell(questions[cell.question], config, cell, *scorers[cell.question], manifest_dir);
        std::lock_guard lock(log_mutex);
        append_line(log_path, format_record(record));
        output.records[todo[t]] = std::move(record);
      } catch (...) {
        std::lock_guard lock(log_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(config.parallelism, todo.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);

  output.executed = todo.size();
  for (const auto& r : output.records) output.failed += r.ok() ? 0 : 1;

  write_file_atomic(out_dir / "records.jsonl", format_records(output.records));
  const auto table = aggregate(output.records);
  write_file_atomic(out_dir / "table.csv", render_table_csv(table));
  write_file_atomic(out_dir / "table.txt", render_table_text(table));
  return output;
}

}  // namespace stanceforge
