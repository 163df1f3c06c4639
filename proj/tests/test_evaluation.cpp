#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "stanceforge/error.hpp"
#include "stanceforge/evaluation.hpp"
#include "support.hpp"

using namespace stanceforge;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

constexpr auto A = StanceLabel::Against;
constexpr auto F = StanceLabel::Favor;

std::vector<StanceLabel> labels_of(std::initializer_list<int> xs) {
  std::vector<StanceLabel> out;
  for (int x : xs) out.push_back(static_cast<StanceLabel>(x));
  return out;
}

// Per-class F1 from explicit confusion counts.
double f1_oracle(const std::vector<StanceLabel>& pred, const std::vector<StanceLabel>& gold) {
  double sum = 0.0;
  for (auto cls : {A, F}) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (pred[i] == cls && gold[i] == cls) ++tp;
      if (pred[i] == cls && gold[i] != cls) ++fp;
      if (pred[i] != cls && gold[i] == cls) ++fn;
    }
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    sum += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
  return sum / 2.0;
}

EvalRecord rec(std::string q, std::uint64_t seed, std::string method, std::size_t m, double budget,
               std::optional<double> f1) {
  return {std::move(q), seed, std::move(method), m, budget, f1, f1 ? "" : "scorer crashed"};
}

}  // namespace

TEST_CASE("F1 examples") {
  CHECK(f1_score(labels_of({1, 0, 1, 0}), labels_of({1, 0, 1, 0})) == 1.0);
  CHECK(f1_score(labels_of({1, 0, 0, 0}), labels_of({1, 1, 0, 0})) == Approx(0.73333).margin(1e-5));
  CHECK(f1_score(labels_of({1, 0, 0, 0}), labels_of({1, 1, 0, 0})) == Approx((2.0 / 3.0 + 0.8) / 2.0).margin(1e-12));
  CHECK(f1_score(labels_of({0, 0, 0, 0}), labels_of({1, 1, 1, 1})) == 0.0);
}

TEST_CASE("F1 warns about a class absent from both sides") {
  std::vector<std::string> warnings;
  CHECK(f1_score(labels_of({1, 1}), labels_of({1, 1}), &warnings) == 0.5);
  REQUIRE(warnings.size() == 1);
  CHECK_THAT(warnings[0], ContainsSubstring("class 0"));
  CHECK_THROWS_AS(f1_score({}, {}), ValidationError);
  CHECK_THROWS_AS(f1_score(labels_of({1}), labels_of({1, 0})), ValidationError);
}

TEST_CASE("F1 agrees with a precision/recall oracle and is symmetric under relabeling") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    std::vector<StanceLabel> pred(n), gold(n), pred_flip(n), gold_flip(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = rng() % 2 ? F : A;
      gold[i] = rng() % 2 ? F : A;
      pred_flip[i] = pred[i] == F ? A : F;
      gold_flip[i] = gold[i] == F ? A : F;
    }
    const double f = f1_score(pred, gold);
    CHECK(f == Approx(f1_oracle(pred, gold)).margin(1e-12));
    CHECK(f1_score(pred_flip, gold_flip) == Approx(f).margin(1e-12));
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
  }
}

TEST_CASE("aggregate of a single record") {
  const auto t = aggregate({rec("q1", 1, "Baseline", 0, 0.0, 0.7)});
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0].mean_f1 == Approx(0.7));
  CHECK(t.rows[0].std_f1 == 0.0);
  CHECK(t.rows[0].n_cells == 1);
  CHECK(t.complete());
}

TEST_CASE("aggregate averages per-question std over seeds") {
  const auto t = aggregate({rec("q1", 1, "SQBC+Synth", 20, 0.25, 0.6), rec("q1", 2, "SQBC+Synth", 20, 0.25, 0.8),
                            rec("q2", 1, "SQBC+Synth", 20, 0.25, 0.7), rec("q2", 2, "SQBC+Synth", 20, 0.25, 0.7)});
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0].mean_f1 == Approx(0.7).margin(1e-12));
  CHECK(t.rows[0].std_f1 == Approx(0.0707).margin(1e-4));
  CHECK(t.rows[0].std_f1 == Approx(std::sqrt(0.02) / 2.0).margin(1e-12));
  CHECK(t.questions == 2);
  CHECK(t.seeds == 2);
  CHECK(t.complete());
}

TEST_CASE("aggregate flags missing and failed cells") {
  const auto missing = aggregate({rec("q1", 1, "Random", 20, 0.1, 0.5), rec("q1", 2, "Random", 20, 0.1, 0.6),
                                  rec("q2", 1, "Random", 20, 0.1, 0.7)});
  CHECK_FALSE(missing.complete());
  CHECK(missing.rows[0].n_cells == 3);
  CHECK(missing.rows[0].expected_cells == 4);

  const auto failed = aggregate({rec("q1", 1, "CAL", 20, 0.1, 0.5), rec("q1", 2, "CAL", 20, 0.1, std::nullopt)});
  CHECK_FALSE(failed.complete());
  CHECK(failed.rows[0].mean_f1 == Approx(0.5));
  CHECK(render_table_csv(failed).find("false") != std::string::npos);
}

TEST_CASE("aggregate rejects duplicate cells and empty input") {
  CHECK_THROWS_WITH(aggregate({rec("q1", 1, "Baseline", 0, 0.0, 0.5), rec("q1", 1, "Baseline", 0, 0.0, 0.6)}),
                    ContainsSubstring("duplicate"));
  CHECK_THROWS_AS(aggregate({}), ValidationError);
}

TEST_CASE("aggregate mean lies within the inputs' range") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<EvalRecord> records;
    const std::size_t questions = 1 + rng() % 5, seeds = 1 + rng() % 5;
    double lo = 1.0, hi = 0.0;
    for (std::size_t q = 0; q < questions; ++q)
      for (std::size_t s = 0; s < seeds; ++s) {
        if (rng() % 7 == 0 && !records.empty()) continue;
        const double f = u(rng);
        lo = std::min(lo, f);
        hi = std::max(hi, f);
        records.push_back(rec("q" + std::to_string(q), s, "SQBC", 20, 0.5, f));
      }
    const auto t = aggregate(records);
    CHECK(t.rows[0].mean_f1 >= lo - 1e-12);
    CHECK(t.rows[0].mean_f1 <= hi + 1e-12);
    CHECK(t.rows[0].std_f1 >= 0.0);
  }
}

TEST_CASE("rows follow registry order, then M, then budget") {
  const auto t = aggregate({rec("q", 1, "Random+Synth", 40, 0.1, 0.5), rec("q", 1, "Baseline", 0, 0.0, 0.5),
                            rec("q", 1, "SQBC+Synth", 40, 0.25, 0.5), rec("q", 1, "SQBC+Synth", 20, 0.25, 0.5),
                            rec("q", 1, "SQBC+Synth", 20, 0.1, 0.5)});
  std::vector<std::string> order;
  for (const auto& r : t.rows) order.push_back(r.method + "/" + std::to_string(r.m) + "/" + std::to_string(r.budget));
  CHECK(order == std::vector<std::string>{"Baseline/0/0.000000", "SQBC+Synth/20/0.100000", "SQBC+Synth/20/0.250000",
                                          "SQBC+Synth/40/0.250000", "Random+Synth/40/0.100000"});
}

TEST_CASE("records round trip through JSONL") {
  const std::vector<EvalRecord> records = {rec("q1", 7, "CAL+Synth", 500, 0.25, 0.615), rec("q2", 1, "Baseline", 0, 0.0, std::nullopt)};
  const auto text = format_records(records);
  CHECK(text.rfind("{\"question_id\":\"q1\",\"seed\":7,\"method\":\"CAL+Synth\",\"m\":500,\"budget\":0.25,\"f1\":0.615,"
                   "\"status\":\"ok\"}\n",
                   0) == 0);
  const auto back = parse_records(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].f1 == 0.615);
  CHECK_FALSE(back[1].ok());
  CHECK(back[1].error == "scorer crashed");
  CHECK(format_records(back) == text);

  CHECK_THROWS_AS(parse_records("{\"question_id\":\"q\",\"seed\":1,\"method\":\"Nope\",\"m\":0,\"budget\":0}\n"),
                  ValidationError);
  CHECK_THROWS_AS(parse_records("{\"question_id\":\"q\",\"seed\":1,\"method\":\"Baseline\",\"m\":0,\"budget\":0,\"f1\":1.5}\n"),
                  ValidationError);
  testing::TempDir dir;
  write_file_atomic(dir / "r.jsonl", text);
  CHECK(load_records(dir / "r.jsonl").size() == 2);
}

TEST_CASE("text table has budget columns per M and a plain section") {
  const auto t = aggregate({rec("q", 1, "SQBC+Synth", 200, 0.1, 0.61), rec("q", 1, "SQBC+Synth", 200, 0.25, 0.64),
                            rec("q", 1, "Random+Synth", 200, 0.1, 0.58), rec("q", 1, "Baseline", 0, 0.0, 0.5),
                            rec("q", 1, "Baseline+Synth", 200, 0.0, 0.55)});
  const auto text = render_table_text(t);
  CHECK_THAT(text, ContainsSubstring("M=200"));
  CHECK_THAT(text, ContainsSubstring("10%"));
  CHECK_THAT(text, ContainsSubstring("25%"));
  CHECK_THAT(text, ContainsSubstring("0.610 (0.000)"));
  CHECK_THAT(text, ContainsSubstring("Fine-tuning without selection"));
  // Random+Synth has no 25% cell
  const auto random_line = text.substr(text.find("Random+Synth"), text.find('\n', text.find("Random+Synth")) - text.find("Random+Synth"));
  CHECK_THAT(random_line, ContainsSubstring("-"));
  CHECK(render_table_text(t) == text);
  CHECK(render_table_csv(t).rfind("method,m,budget,mean_f1,std_f1,n_cells,expected_cells,complete\nBaseline,0,0,", 0) == 0);
}

TEST_CASE("method registry") {
  CHECK(method_registry().size() == 10);
  CHECK(find_method("Baseline").selection == std::nullopt);
  CHECK_FALSE(find_method("Baseline").synthetic);
  CHECK(find_method("SQBC+Synth").selection == Strategy::Sqbc);
  CHECK(find_method("SQBC+Synth").synthetic);
  CHECK(find_method("True Labels+Synth").true_labels);
  CHECK(find_method("CAL").selection == Strategy::Cal);
  CHECK_THROWS_WITH(find_method("sqbc"), ContainsSubstring("known:"));
}

TEST_CASE("manifests round trip") {
  TrainingManifest m;
  m.question_id = "q1";
  m.question_text = "Should it?";
  m.method = "SQBC+Synth";
  m.m = 2;
  m.budget = 0.25;
  m.seed = 3;
  m.train = {{"q1/synth/0", "yes", F, "synthetic"}, {"c1", "no way", A, "manual"}};
  m.predict = {{"c2", "maybe \"so\"", std::nullopt, ""}};
  const auto text = format_manifest(m);
  const auto back = parse_manifest(text);
  CHECK(back.count("synthetic") == 1);
  CHECK(back.count("manual") == 1);
  CHECK(back.train[1].label == A);
  CHECK(back.predict[0].text == "maybe \"so\"");
  CHECK(format_manifest(back) == text);
  CHECK_THROWS_AS(parse_manifest("{\"question_id\":\"q\"}"), ValidationError);
}

TEST_CASE("nearest-centroid scorer") {
  std::map<std::string, std::vector<float>> vecs = {
      {"f", {1, 0}}, {"a", {-1, 0}}, {"x", {0.9f, 0.1f}}, {"y", {-0.8f, 0.3f}}, {"z", {0, 1}}};
  NearestCentroidScorer scorer([&](const std::string& id) { return std::span<const float>(vecs.at(id)); });
  TrainingManifest m;
  m.train = {{"f", "", F, "synthetic"}, {"a", "", A, "synthetic"}};
  m.predict = {{"x", "", {}, ""}, {"y", "", {}, ""}, {"z", "", {}, ""}};
  const auto p = scorer.score(m);
  CHECK(p.at("x").p_favor > 0.99);
  CHECK(p.at("y").p_favor < 0.01);
  CHECK(p.at("z").p_favor == Approx(0.5).margin(1e-12));

  TrainingManifest empty = m;
  empty.train.clear();
  CHECK(scorer.score(empty).at("x").p_favor == 0.5);
  TrainingManifest only_favor = m;
  only_favor.train = {{"f", "", F, "synthetic"}};
  CHECK(scorer.score(only_favor).at("y").p_favor == 1.0);
}
