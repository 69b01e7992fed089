#include "adt/synthetic.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

namespace adt {

namespace {

constexpr std::array kNouns = {"movie", "film", "plot",  "acting", "story",
                               "cast",  "music", "ending", "script", "scene"};
constexpr std::array kVerbs = {"was", "is", "seemed", "felt"};
constexpr std::array kAdverbs = {"really", "very", "quite", "truly", "so"};
constexpr std::array kPositive = {"perfect", "great",  "wonderful", "brilliant",
                                  "superb",  "excellent", "enjoyable"};
constexpr std::array kNegative = {"horrible", "terrible", "awful", "boring",
                                  "dreadful", "poor",     "dull"};
constexpr std::array kOpeners = {"i watched it today with friends .", "one of my friends told me about it .",
                                 "we saw it yesterday .", "i went to see it alone ."};

template <class Arr>
const char* pick(const Arr& a, std::mt19937_64& rng) {
  return a[std::uniform_int_distribution<std::size_t>(0, a.size() - 1)(rng)];
}

std::string clause(bool positive, std::mt19937_64& rng) {
  std::string s = "the ";
  s += pick(kNouns, rng);
  s += ' ';
  s += pick(kVerbs, rng);
  if (std::bernoulli_distribution(0.5)(rng)) {
    s += ' ';
    s += pick(kAdverbs, rng);
  }
  s += ' ';
  s += positive ? pick(kPositive, rng) : pick(kNegative, rng);
  return s;
}

std::string document(bool positive, std::mt19937_64& rng) {
  std::string text;
  if (std::bernoulli_distribution(0.5)(rng)) text = std::string(pick(kOpeners, rng)) + " ";
  // One agreeing clause, or three with a 2-1 majority.
  std::vector<int> pol{positive};
  if (std::bernoulli_distribution(0.6)(rng)) {
    pol = {positive, positive, !positive};
    std::shuffle(pol.begin(), pol.end(), rng);
  }
  for (std::size_t i = 0; i < pol.size(); ++i) {
    if (i) text += std::bernoulli_distribution(0.5)(rng) ? " and " : " but ";
    text += clause(pol[i], rng);
  }
  return text + " .";
}

}  // namespace

SyntheticCorpus make_sentiment_corpus(std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SyntheticCorpus c;
  auto gen = [&](std::size_t n, std::vector<std::string>& out) {
    for (std::size_t i = 0; i < n; ++i) {
      const bool positive = i % 2 == 0;
      out.push_back(std::string(positive ? "pos" : "neg") + "\t" + document(positive, rng));
    }
  };
  gen(n_train, c.train);
  gen(n_test, c.test);
  return c;
}

void write_synthetic_corpus(const SyntheticCorpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, lines] : {std::pair{"train.tsv", &corpus.train}, std::pair{"test.tsv", &corpus.test}}) {
    std::ofstream os(std::filesystem::path(dir) / name);
    if (!os) throw std::runtime_error("cannot write " + std::string(name) + " in " + dir);
    for (const auto& l : *lines) os << l << '\n';
  }
}

}  // namespace adt
