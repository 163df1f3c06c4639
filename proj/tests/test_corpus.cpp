#include <catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "stanceforge/corpus.hpp"
#include "stanceforge/error.hpp"
#include "stanceforge/prng.hpp"
#include "support.hpp"

using namespace stanceforge;
using Catch::Matchers::ContainsSubstring;

namespace {

Corpus make_corpus(std::size_t n, const std::string& qid = "q") {
  Corpus c;
  c.question_id = qid;
  for (std::size_t i = 0; i < n; ++i)
    c.comments.push_back({qid + "-" + std::to_string(i), qid, "text " + std::to_string(i),
                          i % 2 ? StanceLabel::Favor : StanceLabel::Against, Origin::Real});
  return c;
}

std::vector<Comment> texts(std::size_t n, const std::string& qid, const std::string& tag) {
  std::vector<Comment> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({"", qid, tag + " " + std::to_string(i), {}, Origin::Synthetic});
  return out;
}

const std::string kFavorPrompt =
    "A user in a discussion forum is debating other users about the following question: Should X? The person is "
    "in favor about the topic in question. What would the person write? Write from the person's first person "
    "perspective.";

}  // namespace

TEST_CASE("labels serialize as bare integers") {
  CHECK(static_cast<int>(StanceLabel::Against) == 0);
  CHECK(static_cast<int>(StanceLabel::Favor) == 1);
  CHECK(parse_stance("Favor") == StanceLabel::Favor);
  CHECK(parse_stance("0") == StanceLabel::Against);
  CHECK_THROWS_AS(parse_stance("neutral"), ValidationError);
  CHECK_THROWS_AS(stance_from_int(2), ValidationError);
}

TEST_CASE("load_corpus keeps file order and absent labels") {
  testing::TempDir dir;
  const auto path = dir / "c.jsonl";
  write_file_atomic(path,
                    "{\"id\":\"c3\",\"question_id\":\"q\",\"text\":\"three\",\"label\":1,\"origin\":\"real\"}\n"
                    "{\"text\":\"one\",\"id\":\"c1\",\"question_id\":\"q\",\"label\":0}\n"
                    "{\"id\":\"c4\",\"question_id\":\"q\",\"text\":\"four\",\"label\":null}\n"
                    "{\"id\":\"c2\",\"question_id\":\"q\",\"text\":\"two\",\"origin\":\"synthetic\"}\n");
  const auto c = load_corpus(path);
  REQUIRE(c.size() == 4);
  CHECK(c.question_id == "q");
  CHECK(c.comments[0].id == "c3");
  CHECK(c.comments[1].id == "c1");
  CHECK(c.comments[3].id == "c2");
  CHECK(c.comments[0].label == StanceLabel::Favor);
  CHECK(c.comments[1].label == StanceLabel::Against);
  CHECK_FALSE(c.comments[2].label.has_value());
  CHECK_FALSE(c.comments[3].label.has_value());
  CHECK(c.comments[3].origin == Origin::Synthetic);
  CHECK(c.comments[1].origin == Origin::Real);
}

TEST_CASE("load_corpus rejects bad input with a location") {
  SECTION("duplicate id names it") {
    const std::string text =
        "{\"id\":\"c1\",\"question_id\":\"q\",\"text\":\"a\"}\n{\"id\":\"c1\",\"question_id\":\"q\",\"text\":\"b\"}\n";
    CHECK_THROWS_WITH(parse_corpus(text, "f"), ContainsSubstring("\"c1\"") && ContainsSubstring("f:2"));
  }
  SECTION("label 2") {
    CHECK_THROWS_AS(parse_corpus("{\"id\":\"c1\",\"question_id\":\"q\",\"text\":\"a\",\"label\":2}\n"), ValidationError);
  }
  SECTION("label given as a string") {
    CHECK_THROWS_AS(parse_corpus("{\"id\":\"c1\",\"question_id\":\"q\",\"text\":\"a\",\"label\":\"1\"}\n"),
                    ValidationError);
  }
  SECTION("malformed line reports its number") {
    CHECK_THROWS_WITH(parse_corpus("{\"id\":\"c1\",\"question_id\":\"q\",\"text\":\"a\"}\n{oops\n", "f"),
                      ContainsSubstring("f:2"));
  }
  SECTION("unknown field") {
    CHECK_THROWS_WITH(parse_corpus("{\"id\":\"c1\",\"question_id\":\"q\",\"text\":\"a\",\"score\":3}\n"),
                      ContainsSubstring("score"));
  }
  SECTION("empty file") {
    CHECK_THROWS_AS(parse_corpus(""), ValidationError);
    CHECK_THROWS_AS(parse_corpus("\n\n"), ValidationError);
  }
  SECTION("empty text and id") {
    CHECK_THROWS_AS(parse_corpus("{\"id\":\"c1\",\"question_id\":\"q\",\"text\":\"\"}\n"), ValidationError);
    CHECK_THROWS_AS(parse_corpus("{\"id\":\"\",\"question_id\":\"q\",\"text\":\"a\"}\n"), ValidationError);
  }
  SECTION("mixed question ids") {
    CHECK_THROWS_AS(parse_corpus("{\"id\":\"a\",\"question_id\":\"q\",\"text\":\"a\"}\n"
                                 "{\"id\":\"b\",\"question_id\":\"r\",\"text\":\"b\"}\n"),
                    ValidationError);
  }
  SECTION("bad origin") {
    CHECK_THROWS_AS(parse_corpus("{\"id\":\"a\",\"question_id\":\"q\",\"text\":\"a\",\"origin\":\"llm\"}\n"),
                    ValidationError);
  }
  SECTION("missing file is an I/O error") {
    CHECK_THROWS_AS(load_corpus("/nonexistent/corpus.jsonl"), IoError);
  }
}

TEST_CASE("canonical corpus files round-trip byte for byte") {
  const std::string canonical =
      "{\"id\":\"a\",\"question_id\":\"q\",\"text\":\"caf\xc3\xa9 \\\"quoted\\\"\",\"label\":1,\"origin\":\"real\"}\n"
      "{\"id\":\"b\",\"question_id\":\"q\",\"text\":\"two\",\"label\":null,\"origin\":\"synthetic\"}\n";
  testing::TempDir dir;
  write_file_atomic(dir / "in.jsonl", canonical);
  save_corpus(load_corpus(dir / "in.jsonl"), dir / "out.jsonl");
  CHECK(read_file(dir / "out.jsonl") == canonical);
}

TEST_CASE("validate_corpus checks the invariants") {
  auto c = make_corpus(3);
  CHECK_NOTHROW(validate_corpus(c));
  c.comments[2].id = c.comments[0].id;
  CHECK_THROWS_AS(validate_corpus(c), ValidationError);
  c = make_corpus(3);
  c.comments[1].question_id = "other";
  CHECK_THROWS_AS(validate_corpus(c), ValidationError);
}

TEST_CASE("build_synthetic_corpus balances labels, favor block first") {
  SECTION("500 + 500") {
    const auto s = build_synthetic_corpus("q", texts(500, "q", "f"), texts(500, "q", "a"));
    CHECK(s.m == 1000);
    CHECK(s.base.size() == 1000);
    std::size_t favor = 0;
    for (const auto& c : s.base.comments) favor += c.label == StanceLabel::Favor;
    CHECK(favor == 500);
    for (std::size_t i = 0; i < 500; ++i) CHECK(s.base.comments[i].label == StanceLabel::Favor);
  }
  SECTION("1 + 1") {
    const auto s = build_synthetic_corpus("q", texts(1, "q", "f"), texts(1, "q", "a"));
    REQUIRE(s.m == 2);
    CHECK(s.base.comments[0].label == StanceLabel::Favor);
    CHECK(s.base.comments[1].label == StanceLabel::Against);
    CHECK(s.base.comments[0].id == "q/synth/0");
    CHECK(s.base.comments[1].id == "q/synth/1");
    CHECK(s.base.comments[0].origin == Origin::Synthetic);
    CHECK_NOTHROW(validate_corpus(s.base));
  }
  SECTION("3 + 2 is unbalanced") {
    CHECK_THROWS_AS(build_synthetic_corpus("q", texts(3, "q", "f"), texts(2, "q", "a")), ValidationError);
  }
  SECTION("empty inputs") { CHECK_THROWS_AS(build_synthetic_corpus("q", {}, {}), ValidationError); }
  SECTION("mixed question ids") {
    CHECK_THROWS_AS(build_synthetic_corpus("q", texts(2, "q", "f"), texts(2, "r", "a")), ValidationError);
  }
}

TEST_CASE("take_balanced keeps the first M/2 of each class") {
  const auto s = build_synthetic_corpus("q", texts(5, "q", "f"), texts(5, "q", "a"));
  const auto t = take_balanced(s.base, 4);
  REQUIRE(t.m == 4);
  REQUIRE(t.base.size() == 4);
  CHECK(t.base.comments[0].id == "q/synth/0");
  CHECK(t.base.comments[1].id == "q/synth/1");
  CHECK(t.base.comments[2].id == "q/synth/5");
  CHECK(t.base.comments[3].id == "q/synth/6");
  CHECK_THROWS_AS(take_balanced(s.base, 3), ValidationError);
  CHECK_THROWS_AS(take_balanced(s.base, 12), ValidationError);
  CHECK_THROWS_AS(take_balanced(s.base, 0), ValidationError);
}

TEST_CASE("make_prompt reproduces the template") {
  CHECK(make_prompt("Should X?", StanceLabel::Favor) == kFavorPrompt);
  std::string against = kFavorPrompt;
  against.replace(against.find("is in favor"), 11, "is not in favor");
  CHECK(make_prompt("Should X?", StanceLabel::Against) == against);
  CHECK_THROWS_AS(make_prompt("", StanceLabel::Favor), ValidationError);
}

TEST_CASE("make_prompt contains the question once and negates only for Against") {
  for (const std::string q : {"Is [q] a placeholder?", "Sollte die Schweiz...?", "What about \"is in favor\" here?"}) {
    for (auto s : {StanceLabel::Favor, StanceLabel::Against}) {
      const auto p = make_prompt(q, s);
      const auto first = p.find(q);
      REQUIRE(first != std::string::npos);
      CHECK(p.find(q, first + 1) == std::string::npos);
      const bool negated = p.find("The person is not in favor") != std::string::npos;
      CHECK(negated == (s == StanceLabel::Against));
    }
  }
}

TEST_CASE("train size is floor of three fifths") {
  CHECK(train_size(500) == 300);
  CHECK(train_size(181) == 108);
  CHECK(train_size(269) == 161);
  CHECK(train_size(2) == 1);
  CHECK(train_size(5) == 3);
}

TEST_CASE("split_corpus examples") {
  const auto p500 = split_corpus(make_corpus(500), 1);
  CHECK(p500.train_ids.size() == 300);
  CHECK(p500.test_ids.size() == 200);
  CHECK(split_corpus(make_corpus(181), 3).train_ids.size() == 108);
  const auto p2 = split_corpus(make_corpus(2), 9);
  CHECK(p2.train_ids.size() == 1);
  CHECK(p2.test_ids.size() == 1);
  CHECK_THROWS_AS(split_corpus(make_corpus(1), 0), ValidationError);
}

TEST_CASE("split_corpus is a deterministic partition in corpus order") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 300;
    const std::uint64_t seed = rng();
    const auto corpus = make_corpus(n, "t" + std::to_string(trial));
    const auto plan = split_corpus(corpus, seed);
    CHECK(plan == split_corpus(corpus, seed));
    CHECK(plan.train_ids.size() == n * 3 / 5);

    std::set<std::string> train(plan.train_ids.begin(), plan.train_ids.end());
    std::set<std::string> test(plan.test_ids.begin(), plan.test_ids.end());
    std::set<std::string> all;
    for (const auto& c : corpus.comments) all.insert(c.id);
    std::set<std::string> joined = train;
    joined.insert(test.begin(), test.end());
    CHECK(joined == all);
    CHECK(train.size() + test.size() == n);

    // both lists follow corpus order
    auto position = [&](const std::string& id) { return *corpus.find(id); };
    CHECK(std::is_sorted(plan.train_ids.begin(), plan.train_ids.end(),
                         [&](auto& a, auto& b) { return position(a) < position(b); }));
    CHECK(std::is_sorted(plan.test_ids.begin(), plan.test_ids.end(),
                         [&](auto& a, auto& b) { return position(a) < position(b); }));
  }
}

TEST_CASE("different seeds give different splits") {
  const auto corpus = make_corpus(40);
  std::set<std::vector<std::string>> distinct;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) distinct.insert(split_corpus(corpus, seed).train_ids);
  CHECK(distinct.size() == 5);
}

TEST_CASE("split plans persist") {
  testing::TempDir dir;
  const auto plan = split_corpus(make_corpus(20), 7);
  save_split(plan, dir / "split.json");
  CHECK(load_split(dir / "split.json") == plan);
  write_file_atomic(dir / "bad.json", "{\"seed\": 1}");
  CHECK_THROWS_AS(load_split(dir / "bad.json"), ValidationError);
}

TEST_CASE("SeededRng output is pinned") {
  // mt19937_64's 10000th output for the default seed is fixed by the standard.
  std::mt19937_64 reference;
  reference.discard(9999);
  CHECK(reference() == 9981545732273789042ULL);

  SeededRng a(5489), b(5489);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  SeededRng r(3);
  for (int i = 0; i < 10000; ++i) {
    const auto bound = 1 + r.next() % 1000;
    CHECK(r.below(bound) < bound);
  }
  auto perm = SeededRng(11).permutation(50);
  std::sort(perm.begin(), perm.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(perm[i] == i);
}

TEST_CASE("SeededRng bounded draws look uniform") {
  SeededRng r(99);
  std::array<int, 6> counts{};
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[r.below(6)];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 6.0) * (c - n / 6.0) / (n / 6.0);
  CHECK(chi2 < 20.5);  // chi-square, 5 dof, p ~ 0.001
}

TEST_CASE("misalign_pairing shifts cyclically") {
  std::map<std::string, SyntheticCorpus> synth;
  for (const std::string id : {"A", "B", "C"}) synth[id] = build_synthetic_corpus(id, texts(1, id, "f"), texts(1, id, "a"));
  const auto three = misalign_pairing({"A", "B", "C"}, synth, 1);
  CHECK(three.at("A").base.question_id == "B");
  CHECK(three.at("B").base.question_id == "C");
  CHECK(three.at("C").base.question_id == "A");
  const auto two = misalign_pairing({"A", "B"}, synth, 1);
  CHECK(two.at("A").base.question_id == "B");
  CHECK(two.at("B").base.question_id == "A");
  CHECK_THROWS_AS(misalign_pairing({"A", "B", "C"}, synth, 3), ValidationError);
  CHECK_THROWS_AS(misalign_pairing({"A", "B", "C"}, synth, 0), ValidationError);
}
