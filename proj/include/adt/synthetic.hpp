#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace adt {

/// Two-label review-style corpus in `label<TAB>text` lines. Each document is
/// a few templated clauses ("the plot was really perfect and ..."); the label
/// is the majority polarity of its opinion adjectives. Function words are
/// highly predictable from context while the opinion words carry the label.
struct SyntheticCorpus {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

SyntheticCorpus make_sentiment_corpus(std::size_t n_train, std::size_t n_test, std::uint64_t seed);

/// Writes train.tsv and test.tsv into `dir` (created if missing).
void write_synthetic_corpus(const SyntheticCorpus& corpus, const std::string& dir);

}  // namespace adt
