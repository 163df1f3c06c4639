#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stanceforge/corpus.hpp"
#include "stanceforge/embed_io.hpp"

namespace stanceforge {

enum class Strategy { Sqbc, Cal, Random };

std::string_view to_string(Strategy strategy);
Strategy parse_strategy(std::string_view name);

// Neighbor-label count (raw) and its distance from the undecided midpoint
// (adjusted = |raw - k/2|). Smaller adjusted means more informative.
struct SqbcScore {
  std::string id;
  std::size_t raw = 0;
  double adjusted = 0.0;
};

struct CalScore {
  std::string id;
  double score = 0.0;  // mean KL(neighbor || candidate), nats
};

struct SelectedItem {
  std::string id;
  std::optional<std::size_t> raw;  // SQBC only
  std::optional<double> score;     // SQBC adjusted score or CAL score
};

struct SelectionResult {
  Strategy strategy = Strategy::Sqbc;
  std::optional<std::size_t> k;
  std::optional<std::uint64_t> seed;
  double budget_fraction = 1.0;
  std::vector<SelectedItem> selected;  // most informative first

  std::vector<std::string> ids() const;
};

// J = round(budget_fraction * pool_size), at least 1. budget in (0, 1].
std::size_t budget_count(double budget_fraction, std::size_t pool_size);

// Cosine similarity clamped to [-1, 1].
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// The k refs most cosine-similar to query, most similar first; equal
// similarities keep ref order.
std::vector<std::size_t> knn_positions(std::span<const float> query, const EmbeddingSet& refs,
                                       std::size_t k);
std::vector<std::string> knn_indices(std::span<const float> query, const EmbeddingSet& refs,
                                     std::size_t k);

// Default neighbor count for M references: floor(M/2), at least 1.
std::size_t default_k(std::size_t ref_count);

// One score per pool entry, in pool order. k defaults to default_k(|refs|).
std::vector<SqbcScore> sqbc_scores(const EmbeddingSet& pool, const EmbeddingSet& refs,
                                   const std::map<std::string, StanceLabel>& ref_labels,
                                   std::optional<std::size_t> k = std::nullopt,
                                   std::size_t threads = 0);

// J smallest adjusted scores; ties by ascending id.
SelectionResult select_most_informative(const std::vector<SqbcScore>& scores, double budget_fraction,
                                        std::optional<std::size_t> k = std::nullopt);

inline constexpr double kProbabilityFloor = 1e-9;

// KL(p || q) in nats over two-class distributions, components clamped to
// kProbabilityFloor.
double kl_divergence(const ProbabilityRow& p, const ProbabilityRow& q);

std::vector<CalScore> cal_scores(const EmbeddingSet& pool, const ProbabilitySet& pool_probs,
                                 const EmbeddingSet& labeled, const ProbabilitySet& labeled_probs,
                                 std::size_t k, std::size_t threads = 0);

// J highest scores; ties by ascending id.
SelectionResult select_cal(const std::vector<CalScore>& scores, double budget_fraction, std::size_t k);

// Uniform sample of J ids without replacement, in draw order.
SelectionResult random_select(const std::vector<std::string>& pool_ids, double budget_fraction,
                              std::uint64_t seed);

std::string format_selection(const SelectionResult& result);
SelectionResult parse_selection(std::string_view text, const std::string& source = "<memory>");
void save_selection(const SelectionResult& result, const std::filesystem::path& path);
SelectionResult load_selection(const std::filesystem::path& path);

}  // namespace stanceforge
