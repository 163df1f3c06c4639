#include <catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "stanceforge/diagnostics.hpp"
#include "stanceforge/error.hpp"
#include "support.hpp"

using namespace stanceforge;
using Catch::Approx;

namespace {

Corpus corpus_of(const std::vector<std::string>& texts) {
  Corpus c;
  c.question_id = "q";
  for (std::size_t i = 0; i < texts.size(); ++i) c.comments.push_back({"c" + std::to_string(i), "q", texts[i], {}, Origin::Real});
  return c;
}

// Entropy straight from counts, no tokenizer involved.
double entropy_from_counts(const std::vector<int>& counts, double log_base) {
  double total = 0.0;
  for (int c : counts) total += c;
  double h = 0.0;
  for (int c : counts) {
    const double p = c / total;
    h -= p * std::log(p) / std::log(log_base);
  }
  return h;
}

EmbeddingSet set_of(const std::vector<std::pair<std::string, std::vector<float>>>& rows) {
  EmbeddingSet s(rows.front().second.size());
  for (const auto& [id, v] : rows) s.add(id, v);
  return s;
}

// Sine of the largest principal angle between span(A) and span(B), both
// with orthonormal columns.
double subspace_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::MatrixXd residual = a - b * (b.transpose() * a);
  return Eigen::JacobiSVD<Eigen::MatrixXd>(residual).singularValues()(0);
}

Eigen::MatrixXd oracle_top2(const EmbeddingSet& set) {
  const auto n = static_cast<Eigen::Index>(set.size()), d = static_cast<Eigen::Index>(set.dim());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = set.vector(static_cast<std::size_t>(i))[static_cast<std::size_t>(j)];
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  // eigenvalues ascend
  return solver.eigenvectors().rightCols(2);
}

Eigen::MatrixXd axes_of(const Projection& p) {
  Eigen::MatrixXd m(p.axes[0].size(), 2);
  for (std::size_t j = 0; j < p.axes[0].size(); ++j) {
    m(static_cast<Eigen::Index>(j), 0) = p.axes[0][j];
    m(static_cast<Eigen::Index>(j), 1) = p.axes[1][j];
  }
  return m;
}

EmbeddingSet anisotropic(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  // random rotation of axis-aligned scales so the answer is not trivial
  Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(
                          Eigen::MatrixXd::NullaryExpr(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d),
                                                       [&] { return double(g(rng)); }))
                          .householderQ();
  EmbeddingSet s(d);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd z(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) z(static_cast<Eigen::Index>(j)) = g(rng) * 8.0 / (1.0 + double(j));
    const Eigen::VectorXd x = q * z;
    std::vector<float> v(d);
    for (std::size_t j = 0; j < d; ++j) v[j] = static_cast<float>(x(static_cast<Eigen::Index>(j)));
    s.add("v" + std::to_string(i), v);
  }
  return s;
}

}  // namespace

TEST_CASE("tokenize lowercases and strips edge punctuation") {
  CHECK(tokenize("Hello, World!") == std::vector<std::string>{"hello", "world"});
  CHECK(tokenize("  don't -- stop\t\nNOW...  ") == std::vector<std::string>{"don't", "stop", "now"});
  CHECK(tokenize("\"quoted\" (paren)") == std::vector<std::string>{"quoted", "paren"});
  CHECK(tokenize("... !!! ,") .empty());
  CHECK(tokenize("Ärger ÜBER") == std::vector<std::string>{"ärger", "über"});
}

TEST_CASE("word entropy examples") {
  CHECK(word_entropy("a a a a") == 0.0);
  CHECK(word_entropy("a b c d", LogBase::Base2) == Approx(2.0).margin(1e-12));
  CHECK(word_entropy("to be or not to be", LogBase::Base2) == Approx(1.9183).margin(1e-4));
  CHECK(word_entropy("to be or not to be", LogBase::Base2) ==
        Approx(entropy_from_counts({2, 2, 1, 1}, 2.0)).margin(1e-12));
  CHECK(word_entropy("a b c d") == Approx(std::log(4.0)).margin(1e-12));
  CHECK(word_entropy("A a, a!") == 0.0);
  CHECK_THROWS_AS(word_entropy(""), ValidationError);
  CHECK_THROWS_AS(word_entropy("?! ..."), ValidationError);
  CHECK(parse_log_base("base2") == LogBase::Base2);
  CHECK_THROWS_AS(parse_log_base("ten"), ValidationError);
}

TEST_CASE("word entropy is permutation-invariant and bounded by log of distinct tokens") {
  std::mt19937_64 rng(17);
  const std::vector<std::string> vocab = {"alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> words(1 + rng() % 30);
    for (auto& w : words) w = vocab[rng() % vocab.size()];
    auto join = [](const std::vector<std::string>& ws) {
      std::string s;
      for (const auto& w : ws) s += w + " ";
      return s;
    };
    const double h = word_entropy(join(words));
    std::shuffle(words.begin(), words.end(), rng);
    CHECK(word_entropy(join(words)) == Approx(h).margin(1e-12));
    std::map<std::string, int> counts;
    for (const auto& w : words) ++counts[w];
    CHECK(h >= 0.0);
    CHECK(h <= std::log(double(counts.size())) + 1e-12);
    std::vector<int> c;
    for (const auto& [w, n] : counts) c.push_back(n);
    CHECK(h == Approx(entropy_from_counts(c, std::exp(1.0))).margin(1e-12));
  }
}

TEST_CASE("entropy summary with one comment per quarter") {
  const auto s = entropy_summary(corpus_of({"a b c d e f g h", "a", "a b c d", "a b"}), LogBase::Base2);
  CHECK(s.total == 4);
  CHECK(s.log_base == LogBase::Base2);
  CHECK(s.rows[0].range == "min");
  CHECK(s.rows[0].mean_entropy == Approx(0.0).margin(1e-12));
  const double expected[4] = {0, 1, 2, 3};
  const double lengths[4] = {1, 2, 4, 8};
  for (int q = 0; q < 4; ++q) {
    CHECK(s.rows[q + 1].mean_entropy == Approx(expected[q]).margin(1e-12));
    CHECK(s.rows[q + 1].mean_length == lengths[q]);
  }
  CHECK(s.rows[5].range == "max");
  CHECK(s.rows[5].mean_entropy == Approx(3.0).margin(1e-12));
  CHECK(s.outlier_count == 0);
}

TEST_CASE("entropy summary of identical comments") {
  const auto s = entropy_summary(corpus_of(std::vector<std::string>(9, "the cat sat on the mat")));
  for (const auto& row : s.rows) {
    CHECK(row.mean_entropy == s.rows[0].mean_entropy);
    CHECK(row.mean_length == 6.0);
  }
  CHECK(s.outlier_count == 0);
  CHECK(s.total == 9);
  CHECK_THROWS_AS(entropy_summary(Corpus{}), ValidationError);
}

TEST_CASE("entropy summary quarters are monotone and cover the corpus") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> texts(1 + rng() % 80);
    for (auto& t : texts) {
      const int len = static_cast<int>(rng() % 25);
      for (int w = 0; w < len; ++w) t += "w" + std::to_string(rng() % 12) + " ";
      if (t.empty()) t = "...";
    }
    const auto s = entropy_summary(corpus_of(texts));
    CHECK(s.total == texts.size());
    for (int r = 1; r < 6; ++r) CHECK(s.rows[r].mean_entropy >= s.rows[r - 1].mean_entropy - 1e-12);
    CHECK(s.outlier_count <= texts.size());
  }
}

TEST_CASE("entropy summary formats as JSON with its base") {
  const auto text = format_entropy_summary(entropy_summary(corpus_of({"a b", "c"}), LogBase::Base2));
  CHECK(text.find("\"log_base\": \"base2\"") != std::string::npos);
  CHECK(text.find("\"75-100%\"") != std::string::npos);
}

TEST_CASE("alignment of identical sets") {
  std::mt19937_64 rng(8);
  const auto real = testing::random_set(rng, 20, 6, "r");
  std::map<std::string, StanceLabel> labels;
  for (std::size_t i = 0; i < real.size(); ++i) labels[real.id(i)] = i % 2 ? StanceLabel::Favor : StanceLabel::Against;
  const auto r = alignment_report(real, labels, real, labels);
  for (const auto& c : r.per_class) {
    CHECK(c.centroid_cosine == Approx(1.0).margin(1e-12));
    CHECK(c.real_centroid.size() == 6);
    CHECK(c.cross_cosine >= -1.0);
    CHECK(c.cross_cosine <= 1.0);
  }
}

TEST_CASE("alignment margin on opposite classes") {
  const auto real = set_of({{"a", {-1, 0}}, {"b", {-1, 0}}, {"c", {1, 0}}, {"d", {1, 0}}});
  const auto synth = set_of({{"s0", {-1, 0}}, {"s1", {1, 0}}});
  const std::map<std::string, StanceLabel> real_labels = {
      {"a", StanceLabel::Against}, {"b", StanceLabel::Against}, {"c", StanceLabel::Favor}, {"d", StanceLabel::Favor}};
  const std::map<std::string, StanceLabel> synth_labels = {{"s0", StanceLabel::Against}, {"s1", StanceLabel::Favor}};
  CHECK(alignment_report(real, real_labels, synth, synth_labels).cross_class_margin == Approx(2.0).margin(1e-12));
  const std::map<std::string, StanceLabel> swapped = {{"s0", StanceLabel::Favor}, {"s1", StanceLabel::Against}};
  CHECK(alignment_report(real, real_labels, synth, swapped).cross_class_margin == Approx(-2.0).margin(1e-12));

  const std::map<std::string, StanceLabel> one_class = {{"s0", StanceLabel::Favor}, {"s1", StanceLabel::Favor}};
  CHECK_THROWS_AS(alignment_report(real, real_labels, synth, one_class), ValidationError);
  CHECK_THROWS_AS(alignment_report(real, real_labels, set_of({{"x", {1, 0, 0}}}), synth_labels), ValidationError);
  CHECK(format_alignment_report(alignment_report(real, real_labels, synth, synth_labels)).find("cross_class_margin") !=
        std::string::npos);
}

TEST_CASE("alignment ignores per-vector scale") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> log_scale(-5.0, 5.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto real = testing::random_set(rng, 30, 8, "r");
    const auto synth = testing::random_set(rng, 30, 8, "s");
    std::map<std::string, StanceLabel> rl, sl;
    for (std::size_t i = 0; i < 30; ++i) {
      rl[real.id(i)] = i % 2 ? StanceLabel::Favor : StanceLabel::Against;
      sl[synth.id(i)] = i % 3 ? StanceLabel::Favor : StanceLabel::Against;
    }
    auto scale = [&](const EmbeddingSet& s, bool exact) {
      EmbeddingSet out(s.dim());
      for (std::size_t i = 0; i < s.size(); ++i) {
        std::vector<float> v(s.vector(i).begin(), s.vector(i).end());
        const float c = exact ? std::ldexp(1.0f, int(rng() % 31) - 15) : float(std::exp(log_scale(rng)));
        for (auto& x : v) x *= c;
        out.add(s.id(i), v);
      }
      return out;
    };
    const auto base = alignment_report(real, rl, synth, sl);
    const auto exact = alignment_report(scale(real, true), rl, scale(synth, true), sl);
    CHECK(format_alignment_report(exact) == format_alignment_report(base));
    // general scalars round each float component, so agreement is to float precision
    const auto loose = alignment_report(scale(real, false), rl, scale(synth, false), sl);
    CHECK(loose.cross_class_margin == Approx(base.cross_class_margin).margin(1e-6));
    for (int c = 0; c < 2; ++c)
      CHECK(loose.per_class[c].centroid_cosine == Approx(base.per_class[c].centroid_cosine).margin(1e-6));
  }
}

TEST_CASE("projection matches a dense eigensolver on anisotropic data") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 20; ++trial) {
    const auto set = anisotropic(rng, 50, 16);
    const auto p = project_2d(set);
    CHECK(subspace_distance(axes_of(p), oracle_top2(set)) < 1e-6);
  }
}

TEST_CASE("projection directions are orthonormal") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const auto set = testing::random_set(rng, 2 + rng() % 60, 1 + rng() % 20, "v");
    if (set.dim() < 2) continue;
    const auto p = project_2d(set);
    const Eigen::MatrixXd a = axes_of(p);
    CHECK((a.transpose() * a - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(p.coords.size() == set.size());
  }
}

TEST_CASE("projection is deterministic") {
  std::mt19937_64 rng(5);
  const auto set = testing::random_set(rng, 40, 12, "v");
  CHECK(format_projection_csv(project_2d(set)) == format_projection_csv(project_2d(set)));
}

TEST_CASE("rank-1 data projects onto a line") {
  EmbeddingSet s(3);
  for (int i = 1; i <= 6; ++i) s.add("p" + std::to_string(i), std::vector<float>{float(i), float(2 * i), float(-i)});
  const auto p = project_2d(s);
  for (const auto& c : p.coords) CHECK(std::fabs(c[1]) < 1e-6);
  CHECK(std::fabs(p.coords.front()[0]) > 1.0);
}

TEST_CASE("antipodal points are symmetric on the first axis") {
  const auto s = set_of({{"a", {3, 4, 0}}, {"b", {-3, -4, 0}}});
  const auto p = project_2d(s);
  CHECK(p.coords[0][0] == Approx(-p.coords[1][0]).margin(1e-9));
  CHECK(std::fabs(p.coords[0][0]) == Approx(5.0).margin(1e-9));
}

TEST_CASE("projection errors") {
  CHECK_THROWS_AS(project_2d(set_of({{"a", {1, 2}}})), ValidationError);
  CHECK_THROWS_AS(project_2d(set_of({{"a", {1, 2}}, {"b", {1, 2}}, {"c", {1, 2}}})), ValidationError);
}

TEST_CASE("projection CSV and alignment SVG") {
  const auto s = set_of({{"plain", {1, 0}}, {"with,comma", {0, 1}}, {"q\"uote", {1, 1}}});
  const auto csv = format_projection_csv(project_2d(s));
  CHECK(csv.rfind("id,x,y\nplain,", 0) == 0);
  CHECK(csv.find("\"with,comma\",") != std::string::npos);
  CHECK(csv.find("\"q\"\"uote\",") != std::string::npos);

  const auto real = set_of({{"a", {-1, 0.1f}}, {"b", {1, 0.2f}}});
  const auto synth = set_of({{"x", {-0.9f, 0}}, {"y", {0.8f, 0.3f}}, {"z", {0.5f, -0.4f}}});
  const std::map<std::string, StanceLabel> rl = {{"a", StanceLabel::Against}, {"b", StanceLabel::Favor}};
  const std::map<std::string, StanceLabel> sl = {
      {"x", StanceLabel::Against}, {"y", StanceLabel::Favor}, {"z", StanceLabel::Favor}};
  const auto svg = render_alignment_svg(real, rl, synth, sl);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  std::size_t circles = 0;
  for (auto pos = svg.find("r=\"3\""); pos != std::string::npos; pos = svg.find("r=\"3\"", pos + 1)) ++circles;  // legend dots use r=4
  CHECK(circles == 3);
  CHECK(svg == render_alignment_svg(real, rl, synth, sl));
}

TEST_CASE("projection matches a dense eigensolver on plain Gaussian data") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const auto set = testing::random_set(rng, 50, 16, "v");
    CHECK(subspace_distance(axes_of(project_2d(set)), oracle_top2(set)) < 1e-6);
  }
}
