#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "adt/mi_depth.hpp"
#include "adt/synthetic.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace adt;
using adt::testing::OracleDoc;
using adt::testing::brute_force_mi;

namespace {

// Four documents; "good" occurs exactly in the two pos documents.
Corpus aligned_corpus() {
  return Corpus::from_lines({"pos\tgood a", "pos\tgood b", "neg\tc a", "neg\td b"}, {});
}

std::vector<OracleDoc> oracle_docs(const Corpus& c) {
  std::vector<OracleDoc> out;
  for (const auto& d : c.train()) out.push_back({d.tokens, d.label});
  return out;
}

}  // namespace

TEST_CASE("mi_score matches the contingency-table oracle on the aligned corpus") {
  const auto c = aligned_corpus();
  const auto stats = collect_stats(c);
  const int good = c.vocab().id("good");
  const double oracle = brute_force_mi(oracle_docs(c), good, 2, 0.1);
  CHECK(std::abs(mi_score(stats, good, 0.1) - oracle) < 1e-12);
  // Frozen reference value for this corpus.
  CHECK(std::abs(oracle - 1.0164795627843393) < 1e-12);
}

TEST_CASE("vanishing smoothing approaches 2 ln 2 for a label-aligned word") {
  const auto c = aligned_corpus();
  const auto stats = collect_stats(c);
  const int good = c.vocab().id("good");
  const double v = mi_score(stats, good, 1e-9);
  CHECK(std::abs(v - 2.0 * std::log(2.0)) < 1e-6);
  CHECK(std::abs(2.0 * std::log(2.0) - 1.3862943611198906) < 1e-15);
}

TEST_CASE("balanced word is nearly independent of the label") {
  // "x" appears in half the docs of each label.
  const auto c = Corpus::from_lines({"pos\tx a", "pos\tb", "neg\tx c", "neg\td"}, {});
  const auto stats = collect_stats(c);
  CHECK(mi_score(stats, c.vocab().id("x")) < 1e-2);
  CHECK(mi_score(stats, c.vocab().id("x")) >= 0.0);
}

TEST_CASE("unknown word ids are scored as never occurring") {
  const auto c = aligned_corpus();
  const auto stats = collect_stats(c);
  const double absent = mi_score(stats, int(stats.n_words) + 7);
  std::vector<OracleDoc> docs = oracle_docs(c);
  CHECK(std::abs(absent - brute_force_mi(docs, -42, 2, 0.1)) < 1e-12);
  CHECK_THROWS(mi_score(stats, 3, 0.0));
}

TEST_CASE("mi_score agrees with the oracle on random corpora") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const int n_words = 3 + int(rng() % 20), n_labels = 1 + int(rng() % 4);
    std::vector<std::string> lines;
    const int n_docs = 2 + int(rng() % 60);
    for (int d = 0; d < n_docs; ++d) {
      std::string text;
      const int len = 1 + int(rng() % 6);
      for (int k = 0; k < len; ++k) text += "w" + std::to_string(rng() % std::uint64_t(n_words)) + " ";
      lines.push_back("l" + std::to_string(rng() % std::uint64_t(n_labels)) + "\t" + text);
    }
    const auto c = Corpus::from_lines(lines, {});
    const auto stats = collect_stats(c);
    const auto docs = oracle_docs(c);
    for (std::size_t w = 0; w < stats.n_words; ++w)
      CHECK(std::abs(mi_score(stats, int(w)) -
                     brute_force_mi(docs, int(w), int(c.num_labels()), 0.1)) < 1e-12);
  }
}

TEST_CASE("log_scale") {
  CHECK(log_scale(1.0) == 0.0);
  CHECK(std::abs(log_scale(std::exp(-2.0)) - 2.0) < 1e-15);
  CHECK(std::abs(log_scale(0.05) - 2.995732273553991) < 1e-12);
  CHECK_THROWS_AS(log_scale(0.0), std::domain_error);
  CHECK_THROWS_AS(log_scale(-1.0), std::domain_error);
}

TEST_CASE("bin_depths examples") {
  const std::vector<double> v{0.0, 1.0, 2.0, 3.0};
  CHECK(bin_depths(v, 4) == std::vector<int>{1, 2, 3, 4});
  const std::vector<double> same{1.5, 1.5, 1.5};
  CHECK(bin_depths(same, 12) == std::vector<int>{1, 1, 1});
  const std::vector<double> neg{-2.0, 0.5, 7.0};
  const auto d = bin_depths(neg, 12);
  CHECK(d.front() == 1);
  CHECK(d.back() == 12);
  CHECK_THROWS(bin_depths(std::vector<double>{}, 4));
  CHECK_THROWS(bin_depths(v, 0));
}

TEST_CASE("bin_depths is invariant to shifting all values") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(20), shifted(20);
    const double c = double(int(rng() % 17) - 8);
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = double(rng() % 64) / 16.0;  // dyadic, so shifting is exact
      shifted[i] = v[i] + c;
    }
    CHECK(bin_depths(v, 12) == bin_depths(shifted, 12));
  }
}

TEST_CASE("MiTable depths are monotone non-increasing in MI") {
  const auto syn = make_sentiment_corpus(300, 50, 3);
  const auto c = Corpus::from_lines(syn.train, syn.test);
  const auto table = MiTable::build(collect_stats(c));
  const auto& e = table.entries();
  REQUIRE(e.size() == c.vocab().size() - Vocab::kNumSpecial);
  for (const auto& a : e) {
    CHECK(a.depth >= 1);
    CHECK(a.depth <= 12);
    CHECK(a.mi >= 0.0);
    for (const auto& b : e)
      if (a.mi > b.mi) CHECK(a.depth <= b.depth);
  }
  CHECK(MiTable::build(collect_stats(c)) == table);
}

TEST_CASE("opinion words sit below the median depth") {
  const auto syn = make_sentiment_corpus(400, 0, 9);
  const auto c = Corpus::from_lines(syn.train, {});
  const auto table = MiTable::build(collect_stats(c));
  std::vector<int> depths;
  for (const auto& doc : c.train())
    for (int t : doc.tokens) depths.push_back(table.depth(t));
  std::nth_element(depths.begin(), depths.begin() + long(depths.size() / 2), depths.end());
  const int median = depths[depths.size() / 2];
  CHECK(table.depth(c.vocab().id("perfect")) < median);
  CHECK(table.depth(c.vocab().id("horrible")) < median);
}

TEST_CASE("sentence_depths: lookups and OOV") {
  const auto c = Corpus::from_lines({"pos\tgood a", "pos\tgood b", "neg\tc a", "neg\td b"},
                                    {"pos\tgood unseen"});
  const auto table = MiTable::build(collect_stats(c));
  const auto d = sentence_depths(table, c.test()[0].tokens);
  REQUIRE(d.size() == 2);
  CHECK(d[0] == table.depth(c.vocab().id("good")));
  CHECK(d[1] == 12);
  CHECK(table.depth(Vocab::kMask) == 12);
  CHECK(sentence_depths(table, std::vector<int>{}).empty());
  const auto all = corpus_depths(table, c.train());
  CHECK(all.size() == 4);
}

TEST_CASE("single-label corpus gives depth 1 everywhere") {
  const auto c = Corpus::from_lines({"only\ta b", "only\tb c", "only\tc d"}, {});
  const auto table = MiTable::build(collect_stats(c));
  for (const auto& e : table.entries()) {
    CHECK(e.mi == 0.0);
    CHECK(e.depth == 1);
  }
}

TEST_CASE("MiTable file output") {
  const auto c = aligned_corpus();
  const auto table = MiTable::build(collect_stats(c));
  const auto path = (std::filesystem::temp_directory_path() / "adt_mi.tsv").string();
  table.save(path, c.vocab());
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("word\t", 0) == 0) continue;
    CHECK(std::count(line.begin(), line.end(), '\t') == 3);
    ++n;
  }
  CHECK(n == table.entries().size());
}

TEST_CASE("zero-MI words are floored and land at depth N") {
  // "the" occurs everywhere and the labels are balanced, so its MI is 0 up to roundoff.
  const auto c = Corpus::from_lines(
      {"pos\tthe good x", "neg\tthe bad y", "pos\tthe good y", "neg\tthe bad x"}, {});
  const auto table = MiTable::build(collect_stats(c), 0.1, 4);
  const int the = c.vocab().id("the");
  for (const auto& e : table.entries())
    if (e.word == the) {
      CHECK(e.mi < kMinMi);
      CHECK(e.mi_log == -std::log(kMinMi));
    }
  CHECK(table.depth(the) == 4);
  CHECK(table.depth(c.vocab().id("good")) == 1);
}
