#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stanceforge/corpus.hpp"
#include "stanceforge/embed_io.hpp"
#include "stanceforge/strategies.hpp"

namespace stanceforge {

// ---------------------------------------------------------------------------
// Metrics

// Macro F1 over classes 0 and 1. A class absent from both predictions and
// labels scores 0 and appends a message to `warnings` when given.
double f1_score(const std::vector<StanceLabel>& predictions, const std::vector<StanceLabel>& labels,
                std::vector<std::string>* warnings = nullptr);

// ---------------------------------------------------------------------------
// Method registry: which data each configuration trains on.

struct MethodSpec {
  std::string name;
  std::optional<Strategy> selection;  // manual labels come from this strategy
  bool true_labels = false;           // all Test-Train labels
  bool synthetic = false;             // synthetic augmentation
};

const std::vector<MethodSpec>& method_registry();
const MethodSpec& find_method(std::string_view name);  // throws ValidationError

// ---------------------------------------------------------------------------
// Records and tables

struct EvalRecord {
  std::string question_id;
  std::uint64_t seed = 0;
  std::string method;
  std::size_t m = 0;           // 0 when the method uses no synthetic data
  double budget = 0.0;         // 0 when the method selects nothing
  std::optional<double> f1;    // absent for failed cells
  std::string error;           // failure reason

  bool ok() const { return f1.has_value(); }
};

std::string format_record(const EvalRecord& record);
EvalRecord parse_record(std::string_view line);
std::vector<EvalRecord> parse_records(std::string_view jsonl, const std::string& source = "<memory>");
std::vector<EvalRecord> load_records(const std::filesystem::path& path);
std::string format_records(const std::vector<EvalRecord>& records);

struct ResultRow {
  std::string method;
  std::size_t m = 0;
  double budget = 0.0;
  double mean_f1 = 0.0;   // mean over questions of the per-question mean over seeds
  double std_f1 = 0.0;    // per-question sample std over seeds, averaged over questions
  std::size_t n_cells = 0;
  std::size_t expected_cells = 0;  // questions x seeds
  bool complete = false;
};

struct ResultTable {
  std::vector<ResultRow> rows;  // registry order, then m, then budget
  std::size_t questions = 0;
  std::size_t seeds = 0;
  bool complete() const;
};

// Throws ValidationError on duplicate (question, seed, method, m, budget).
ResultTable aggregate(const std::vector<EvalRecord>& records);

std::string render_table_csv(const ResultTable& table);
// Aligned text: budgeted methods as rows with (M, budget) column groups,
// followed by the unbudgeted configurations.
std::string render_table_text(const ResultTable& table);

// ---------------------------------------------------------------------------
// Training manifests and scorers

struct ManifestEntry {
  std::string id;
  std::string text;
  std::optional<StanceLabel> label;
  std::string source;  // "synthetic" | "manual" | "true"
};

struct TrainingManifest {
  std::string question_id;
  std::string question_text;
  std::string method;
  std::size_t m = 0;
  double budget = 0.0;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> predict;  // label unset

  std::size_t count(std::string_view source) const;
};

std::string format_manifest(const TrainingManifest& manifest);
TrainingManifest parse_manifest(std::string_view text);

// Maps a training manifest to probabilities for every predict entry.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual ProbabilitySet score(const TrainingManifest& manifest) = 0;
};

// Nearest class centroid over unit-normalized embeddings:
// p_favor = sigmoid(temperature * (cos_favor - cos_against)).
class NearestCentroidScorer : public Scorer {
 public:
  using Lookup = std::function<std::span<const float>(const std::string& id)>;
  explicit NearestCentroidScorer(Lookup lookup, double temperature = 10.0);
  ProbabilitySet score(const TrainingManifest& manifest) override;

 private:
  Lookup lookup_;
  double temperature_;
};

// Runs a shell command template; "{manifest}" and "{output}" are replaced
// by file paths. The command writes probability JSONL to {output}.
class CommandScorer : public Scorer {
 public:
  CommandScorer(std::string command_template, std::filesystem::path work_dir);
  ProbabilitySet score(const TrainingManifest& manifest) override;

 private:
  std::string template_;
  std::filesystem::path work_dir_;
};

// POSTs the manifest JSON to `url`; expects {"predictions": [{"id", "p"}]}.
class HttpScorer : public Scorer {
 public:
  explicit HttpScorer(ClientConfig config);
  ProbabilitySet score(const TrainingManifest& manifest) override;

 private:
  ClientConfig config_;
};

// ---------------------------------------------------------------------------
// Sweeps

struct QuestionInput {
  std::string id;
  std::string question_text;
  std::filesystem::path corpus;
  std::filesystem::path embeddings;
  std::filesystem::path synthetic_corpus;
  std::filesystem::path synthetic_embeddings;
  std::filesystem::path annotations;  // optional labeled manifest for selected ids
};

struct ScorerConfig {
  std::string builtin = "nearest-centroid";
  std::string command;
  std::string url;
  double timeout_seconds = 300.0;
};

struct SweepConfig {
  std::vector<QuestionInput> questions;
  std::vector<std::string> methods;
  std::vector<std::size_t> m_values;
  std::vector<double> budgets;
  std::vector<std::uint64_t> seeds;
  std::optional<std::size_t> k;  // SQBC neighbors; default M/2
  std::size_t cal_k = 10;
  std::size_t misalign_offset = 0;  // 0 keeps synthetic data aligned
  std::size_t parallelism = 1;
  ScorerConfig scorer;
};

// Relative paths resolve against the config file's directory.
SweepConfig load_sweep_config(const std::filesystem::path& path);

struct SweepCell {
  std::size_t question = 0;  // index into config.questions
  std::uint64_t seed = 0;
  std::string method;
  std::size_t m = 0;
  double budget = 0.0;

  std::string key() const;  // filesystem-safe cell name (question id added by caller)
};

std::vector<SweepCell> enumerate_cells(const SweepConfig& config);

struct SweepOutput {
  std::vector<EvalRecord> records;  // cell enumeration order
  std::size_t executed = 0;         // cells run in this invocation
  std::size_t resumed = 0;          // cells taken from the completed-cell log
  std::size_t failed = 0;
};

// Runs every cell, writing manifests/, cells.jsonl (completed-cell log used
// to resume), records.jsonl, table.csv and table.txt under out_dir.
SweepOutput run_sweep(const SweepConfig& config, const std::filesystem::path& out_dir);

// One question's loaded inputs. `synthetic` may belong to another question
// when the sweep deliberately misaligns topics.
struct QuestionData {
  Corpus corpus;
  EmbeddingSet embeddings;
  Corpus synthetic;
  EmbeddingSet synthetic_embeddings;
  std::map<std::string, StanceLabel> annotations;
};

// Loads and validates every question, applying config.misalign_offset.
std::vector<QuestionData> load_questions(const SweepConfig& config);

// Builds the training manifest of one cell.
TrainingManifest build_manifest(const QuestionData& data, const SweepConfig& config, const SweepCell& cell,
                                Scorer& scorer);

}  // namespace stanceforge
