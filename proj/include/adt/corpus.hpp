#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace adt {

/// Reader error carrying the 1-based line number of the offending input.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct TokenizerConfig {
  std::size_t max_len = 512;
  bool lowercase = true;
  std::size_t min_freq = 1;  // minimum training document frequency to enter the vocab

  /// Reads plain `key = value` (or `key value`) lines; `#` starts a comment.
  static TokenizerConfig from_file(const std::string& path);
};

/// Lowercased word-level split: whitespace separates words and every ASCII
/// punctuation character becomes its own token.
std::vector<std::string> tokenize(std::string_view text, bool lowercase = true);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kMask = 2;
  static constexpr int kNumSpecial = 3;
  static constexpr const char* kSpecialNames[kNumSpecial] = {"<PAD>", "<UNK>", "<MASK>"};

  Vocab();

  /// Builds from tokenized training documents. Words are ordered by document
  /// frequency (descending) then lexicographically; words below min_freq are
  /// left out and map to <UNK>.
  static Vocab build(const std::vector<std::vector<std::string>>& train_docs,
                     std::size_t min_freq);

  std::size_t size() const { return words_.size(); }
  int id(std::string_view word) const;  // <UNK> when absent
  std::optional<int> find(std::string_view word) const;
  const std::string& word(int id) const { return words_.at(std::size_t(id)); }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecial; }

  std::size_t doc_freq(int id) const { return doc_freq_.at(std::size_t(id)); }
  void set_doc_freq(std::vector<std::size_t> df) { doc_freq_ = std::move(df); }

  void save(const std::string& path) const;  // word<TAB>id<TAB>doc_freq

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::size_t> doc_freq_;
};

struct Document {
  std::vector<int> tokens;
  int label = 0;
  std::string raw_text;
};

class Corpus {
 public:
  /// Loads `label<TAB>text` files. The vocabulary and label set come from the
  /// training file only; a test label unseen in training is an error.
  static Corpus load(const std::string& train_path, const std::optional<std::string>& test_path,
                     const TokenizerConfig& cfg = {});

  /// Same as load() over in-memory lines.
  static Corpus from_lines(const std::vector<std::string>& train_lines,
                           const std::vector<std::string>& test_lines,
                           const TokenizerConfig& cfg = {},
                           const std::string& train_source = "train",
                           const std::string& test_source = "test");

  const Vocab& vocab() const { return vocab_; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t num_labels() const { return labels_.size(); }
  int label_id(std::string_view label) const;

  const std::vector<Document>& train() const { return train_; }
  const std::vector<Document>& test() const { return test_; }
  const TokenizerConfig& config() const { return cfg_; }

  /// Tokenizes and maps text with this corpus' vocab (clipped to max_len).
  std::vector<int> encode(std::string_view text) const;

 private:
  Vocab vocab_;
  std::vector<std::string> labels_;
  std::map<std::string, int, std::less<>> label_index_;
  std::vector<Document> train_;
  std::vector<Document> test_;
  TokenizerConfig cfg_;
};

/// Document-level presence counts over one split.
struct CorpusStats {
  std::size_t n_docs = 0;
  std::size_t n_labels = 0;
  std::size_t n_words = 0;
  std::vector<std::size_t> doc_freq;         // per word id
  std::vector<std::size_t> n_docs_with_label;  // per label id
  std::vector<std::size_t> joint;            // [word * n_labels + label]

  std::size_t joint_count(int word, int label) const {
    return joint.at(std::size_t(word) * n_labels + std::size_t(label));
  }
  std::size_t word_doc_freq(int word) const {
    return std::size_t(word) < doc_freq.size() ? doc_freq[std::size_t(word)] : 0;
  }
  bool operator==(const CorpusStats&) const = default;
};

enum class Split { kTrain, kTest };

/// A word counts once per document no matter how often it repeats. Only the
/// training split may feed MI statistics; kTest is rejected.
CorpusStats collect_stats(const Corpus& corpus, Split split = Split::kTrain);
CorpusStats collect_stats(const std::vector<Document>& docs, std::size_t vocab_size,
                          std::size_t n_labels);

}  // namespace adt
