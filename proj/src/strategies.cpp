#include "stanceforge/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "parallel.hpp"
#include "stanceforge/error.hpp"
#include "stanceforge/prng.hpp"

namespace stanceforge {

using ordered_json = nlohmann::ordered_json;

namespace {

double norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

// Unit-normalized copy of every vector, row-major doubles.
std::vector<double> normalized_rows(const EmbeddingSet& set) {
  const std::size_t d = set.dim();
  std::vector<double> out(set.size() * d);
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto v = set.vector(i);
    const double n = norm(v);
    if (n == 0.0) throw ValidationError("zero-norm vector \"" + set.id(i) + "\"");
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = v[j] / n;
  }
  return out;
}

std::vector<double> normalized(std::span<const float> v) {
  const double n = norm(v);
  if (n == 0.0) throw ValidationError("zero-norm query vector");
  std::vector<double> out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = v[j] / n;
  return out;
}

// Top-k over precomputed unit rows; similarity descending, position ascending.
void top_k(const double* query, const std::vector<double>& rows, std::size_t dim, std::size_t count,
           std::size_t k, std::vector<std::pair<double, std::size_t>>& scratch,
           std::vector<std::size_t>& out) {
  scratch.resize(count);
  for (std::size_t r = 0; r < count; ++r) {
    const double* row = rows.data() + r * dim;
    double dot = 0.0;
    for (std::size_t j = 0; j < dim; ++j) dot += query[j] * row[j];
    scratch[r] = {std::clamp(dot, -1.0, 1.0), r};
  }
  auto better = [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  };
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k), scratch.end(), better);
  out.resize(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = scratch[i].second;
}

void check_budget(double budget_fraction) {
  if (!(budget_fraction > 0.0 && budget_fraction <= 1.0))
    throw ValidationError("budget fraction must lie in (0, 1], got " + std::to_string(budget_fraction));
}

void check_k(std::size_t k, std::size_t refs, const char* what) {
  if (k == 0) throw ValidationError("k must be at least 1");
  if (k > refs)
    throw ValidationError("k (" + std::to_string(k) + ") must not exceed the number of " + what + " (" +
                          std::to_string(refs) + ")");
}

}  // namespace

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::Sqbc: return "sqbc";
    case Strategy::Cal: return "cal";
    case Strategy::Random: return "random";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "sqbc") return Strategy::Sqbc;
  if (name == "cal") return Strategy::Cal;
  if (name == "random") return Strategy::Random;
  throw ValidationError("unknown strategy \"" + std::string(name) + "\" (expected sqbc|cal|random)");
}

std::vector<std::string> SelectionResult::ids() const {
  std::vector<std::string> out;
  out.reserve(selected.size());
  for (const auto& s : selected) out.push_back(s.id);
  return out;
}

std::size_t budget_count(double budget_fraction, std::size_t pool_size) {
  check_budget(budget_fraction);
  const auto j = static_cast<std::size_t>(std::llround(budget_fraction * static_cast<double>(pool_size)));
  return std::clamp<std::size_t>(j, 1, std::max<std::size_t>(1, pool_size));
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw ValidationError("dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ValidationError("cosine similarity of a zero-norm vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<std::size_t> knn_positions(std::span<const float> query, const EmbeddingSet& refs,
                                       std::size_t k) {
  if (query.size() != refs.dim())
    throw ValidationError("query dimension " + std::to_string(query.size()) + " differs from refs dimension " +
                          std::to_string(refs.dim()));
  check_k(k, refs.size(), "references");
  const auto rows = normalized_rows(refs);
  const auto q = normalized(query);
  std::vector<std::pair<double, std::size_t>> scratch;
  std::vector<std::size_t> out;
  top_k(q.data(), rows, refs.dim(), refs.size(), k, scratch, out);
  return out;
}

std::vector<std::string> knn_indices(std::span<const float> query, const EmbeddingSet& refs, std::size_t k) {
  std::vector<std::string> out;
  for (auto pos : knn_positions(query, refs, k)) out.push_back(refs.id(pos));
  return out;
}

std::size_t default_k(std::size_t ref_count) { return std::max<std::size_t>(1, ref_count / 2); }

std::vector<SqbcScore> sqbc_scores(const EmbeddingSet& pool, const EmbeddingSet& refs,
                                   const std::map<std::string, StanceLabel>& ref_labels,
                                   std::optional<std::size_t> k_opt, std::size_t threads) {
  if (pool.dim() != refs.dim())
    throw ValidationError("pool dimension " + std::to_string(pool.dim()) + " differs from refs dimension " +
                          std::to_string(refs.dim()));
  const std::size_t k = k_opt.value_or(default_k(refs.size()));
  check_k(k, refs.size(), "references");

  std::vector<int> favor(refs.size());
  for (std::size_t r = 0; r < refs.size(); ++r) {
    auto it = ref_labels.find(refs.id(r));
    if (it == ref_labels.end()) throw ValidationError("reference \"" + refs.id(r) + "\" has no label");
    favor[r] = it->second == StanceLabel::Favor ? 1 : 0;
  }

  const auto ref_rows = normalized_rows(refs);
  const auto pool_rows = normalized_rows(pool);
  const std::size_t dim = refs.dim();
  const double half_k = static_cast<double>(k) / 2.0;

  std::vector<SqbcScore> out(pool.size());
  detail::parallel_for(pool.size(), threads, [&](std::size_t i) {
    thread_local std::vector<std::pair<double, std::size_t>> scratch;
    thread_local std::vector<std::size_t> nn;
    top_k(pool_rows.data() + i * dim, ref_rows, dim, refs.size(), k, scratch, nn);
    std::size_t raw = 0;
    for (auto r : nn) raw += static_cast<std::size_t>(favor[r]);
    out[i] = {pool.id(i), raw, std::abs(static_cast<double>(raw) - half_k)};
  });
  return out;
}

SelectionResult select_most_informative(const std::vector<SqbcScore>& scores, double budget_fraction,
                                        std::optional<std::size_t> k) {
  if (scores.empty()) throw ValidationError("no scores to select from");
  const std::size_t j = budget_count(budget_fraction, scores.size());
  std::vector<const SqbcScore*> order;
  order.reserve(scores.size());
  for (const auto& s : scores) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(), [](const SqbcScore* a, const SqbcScore* b) {
    return a->adjusted != b->adjusted ? a->adjusted < b->adjusted : a->id < b->id;
  });

  SelectionResult result;
  result.strategy = Strategy::Sqbc;
  result.k = k;
  result.budget_fraction = budget_fraction;
  for (std::size_t i = 0; i < j; ++i) result.selected.push_back({order[i]->id, order[i]->raw, order[i]->adjusted});
  return result;
}

double kl_divergence(const ProbabilityRow& p, const ProbabilityRow& q) {
  auto term = [](double a, double b) {
    a = std::max(a, kProbabilityFloor);
    b = std::max(b, kProbabilityFloor);
    return a * std::log(a / b);
  };
  return term(p.p_against, q.p_against) + term(p.p_favor, q.p_favor);
}

std::vector<CalScore> cal_scores(const EmbeddingSet& pool, const ProbabilitySet& pool_probs,
                                 const EmbeddingSet& labeled, const ProbabilitySet& labeled_probs,
                                 std::size_t k, std::size_t threads) {
  if (pool.dim() != labeled.dim())
    throw ValidationError("pool dimension " + std::to_string(pool.dim()) + " differs from labeled dimension " +
                          std::to_string(labeled.dim()));
  check_k(k, labeled.size(), "labeled points");

  std::vector<const ProbabilityRow*> neighbor_p(labeled.size());
  for (std::size_t r = 0; r < labeled.size(); ++r) neighbor_p[r] = &labeled_probs.at(labeled.id(r));
  std::vector<const ProbabilityRow*> candidate_p(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) candidate_p[i] = &pool_probs.at(pool.id(i));

  const auto ref_rows = normalized_rows(labeled);
  const auto pool_rows = normalized_rows(pool);
  const std::size_t dim = pool.dim();

  std::vector<CalScore> out(pool.size());
  detail::parallel_for(pool.size(), threads, [&](std::size_t i) {
    thread_local std::vector<std::pair<double, std::size_t>> scratch;
    thread_local std::vector<std::size_t> nn;
    top_k(pool_rows.data() + i * dim, ref_rows, dim, labeled.size(), k, scratch, nn);
    double sum = 0.0;
    for (auto r : nn) sum += kl_divergence(*neighbor_p[r], *candidate_p[i]);
    out[i] = {pool.id(i), std::max(0.0, sum / static_cast<double>(k))};
  });
  return out;
}

SelectionResult select_cal(const std::vector<CalScore>& scores, double budget_fraction, std::size_t k) {
  if (scores.empty()) throw ValidationError("no scores to select from");
  const std::size_t j = budget_count(budget_fraction, scores.size());
  std::vector<const CalScore*> order;
  for (const auto& s : scores) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(), [](const CalScore* a, const CalScore* b) {
    return a->score != b->score ? a->score > b->score : a->id < b->id;
  });
  SelectionResult result;
  result.strategy = Strategy::Cal;
  result.k = k;
  result.budget_fraction = budget_fraction;
  for (std::size_t i = 0; i < j; ++i) result.selected.push_back({order[i]->id, std::nullopt, order[i]->score});
  return result;
}

SelectionResult random_select(const std::vector<std::string>& pool_ids, double budget_fraction,
                              std::uint64_t seed) {
  if (pool_ids.empty()) throw ValidationError("random selection needs a non-empty pool");
  const std::size_t j = budget_count(budget_fraction, pool_ids.size());
  SeededRng rng(seed);
  const auto perm = rng.permutation(pool_ids.size(), j);
  SelectionResult result;
  result.strategy = Strategy::Random;
  result.seed = seed;
  result.budget_fraction = budget_fraction;
  for (std::size_t i = 0; i < j; ++i) result.selected.push_back({pool_ids[perm[i]], std::nullopt, std::nullopt});
  return result;
}

std::string format_selection(const SelectionResult& r) {
  ordered_json j;
  j["strategy"] = std::string(to_string(r.strategy));
  j["k"] = r.k ? ordered_json(*r.k) : ordered_json(nullptr);
  j["seed"] = r.seed ? ordered_json(*r.seed) : ordered_json(nullptr);
  j["budget"] = r.budget_fraction;
  auto& items = j["selected"] = ordered_json::array();
  for (const auto& s : r.selected) {
    ordered_json item;
    item["id"] = s.id;
    if (r.strategy == Strategy::Sqbc) {
      if (s.raw) item["raw"] = *s.raw;
      if (s.score) item["adjusted"] = *s.score;
    } else if (s.score) {
      item["score"] = *s.score;
    }
    items.push_back(std::move(item));
  }
  return j.dump(2) + "\n";
}

SelectionResult parse_selection(std::string_view text, const std::string& source) {
  try {
    const auto j = ordered_json::parse(text);
    SelectionResult r;
    r.strategy = parse_strategy(j.at("strategy").get<std::string>());
    if (j.contains("k") && !j["k"].is_null()) r.k = j["k"].get<std::size_t>();
    if (j.contains("seed") && !j["seed"].is_null()) r.seed = j["seed"].get<std::uint64_t>();
    r.budget_fraction = j.at("budget").get<double>();
    for (const auto& item : j.at("selected")) {
      SelectedItem s;
      s.id = item.at("id").get<std::string>();
      if (item.contains("raw")) s.raw = item["raw"].get<std::size_t>();
      if (item.contains("adjusted")) s.score = item["adjusted"].get<double>();
      if (item.contains("score")) s.score = item["score"].get<double>();
      r.selected.push_back(std::move(s));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(source + ": malformed selection: " + e.what());
  }
}

void save_selection(const SelectionResult& result, const std::filesystem::path& path) {
  write_file_atomic(path, format_selection(result));
}

SelectionResult load_selection(const std::filesystem::path& path) {
  return parse_selection(read_file(path), path.string());
}

}  // namespace stanceforge
