#include "adt/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

namespace adt {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("not a boolean: " + v);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

struct RawDoc {
  std::string label;
  std::string text;
  std::vector<std::string> words;
};

std::vector<RawDoc> parse_tsv(const std::vector<std::string>& lines, const std::string& source,
                              const TokenizerConfig& cfg) {
  std::vector<RawDoc> docs;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (trim(line).empty()) continue;  // blank separator lines
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(source, i + 1, "expected label<TAB>text");
    RawDoc d;
    d.label = trim(std::string_view(line).substr(0, tab));
    d.text = line.substr(tab + 1);
    if (d.label.empty()) throw ParseError(source, i + 1, "empty label");
    d.words = tokenize(d.text, cfg.lowercase);
    if (d.words.empty()) throw ParseError(source, i + 1, "empty text");
    if (d.words.size() > cfg.max_len) d.words.resize(cfg.max_len);
    docs.push_back(std::move(d));
  }
  return docs;
}

}  // namespace

TokenizerConfig TokenizerConfig::from_file(const std::string& path) {
  TokenizerConfig cfg;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string line = lines[i];
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    auto sep = line.find('=');
    if (sep == std::string::npos) sep = line.find_first_of(" \t");
    if (sep == std::string::npos) throw ParseError(path, i + 1, "expected key = value");
    const std::string key = trim(line.substr(0, sep));
    const std::string val = trim(line.substr(sep + 1));
    try {
      if (key == "max_len") {
        cfg.max_len = std::stoul(val);
        if (cfg.max_len == 0) throw std::invalid_argument("max_len must be positive");
      } else if (key == "lowercase") {
        cfg.lowercase = parse_bool(val);
      } else if (key == "min_freq") {
        cfg.min_freq = std::stoul(val);
      } else {
        throw std::invalid_argument("unknown key '" + key + "'");
      }
    } catch (const std::logic_error& e) {
      throw ParseError(path, i + 1, e.what());
    }
  }
  return cfg;
}

std::vector<std::string> tokenize(std::string_view text, bool lowercase) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(lowercase && c < 0x80 ? char(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

Vocab::Vocab() {
  for (int i = 0; i < kNumSpecial; ++i) {
    words_.emplace_back(kSpecialNames[i]);
    index_.emplace(kSpecialNames[i], i);
  }
  doc_freq_.assign(kNumSpecial, 0);
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& train_docs,
                   std::size_t min_freq) {
  std::unordered_map<std::string, std::size_t> df;
  for (const auto& doc : train_docs) {
    std::set<std::string_view> seen(doc.begin(), doc.end());
    for (auto w : seen) ++df[std::string(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> entries;
  for (auto& [w, n] : df) {
    if (n < min_freq) continue;
    if (std::find(std::begin(kSpecialNames), std::end(kSpecialNames), w) !=
        std::end(kSpecialNames))
      continue;
    entries.emplace_back(w, n);
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocab v;
  for (auto& [w, n] : entries) {
    v.index_.emplace(w, int(v.words_.size()));
    v.words_.push_back(w);
  }
  v.doc_freq_.assign(v.words_.size(), 0);
  return v;
}

std::optional<int> Vocab::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id(std::string_view word) const { return find(word).value_or(kUnk); }

void Vocab::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  for (std::size_t i = 0; i < words_.size(); ++i)
    os << words_[i] << '\t' << i << '\t' << doc_freq_[i] << '\n';
}

Corpus Corpus::load(const std::string& train_path, const std::optional<std::string>& test_path,
                    const TokenizerConfig& cfg) {
  const auto train_lines = read_lines(train_path);
  const auto test_lines = test_path ? read_lines(*test_path) : std::vector<std::string>{};
  return from_lines(train_lines, test_lines, cfg, train_path, test_path.value_or("test"));
}

Corpus Corpus::from_lines(const std::vector<std::string>& train_lines,
                          const std::vector<std::string>& test_lines,
                          const TokenizerConfig& cfg, const std::string& train_source,
                          const std::string& test_source) {
  if (cfg.max_len == 0) throw std::invalid_argument("max_len must be positive");
  Corpus c;
  c.cfg_ = cfg;
  auto train_raw = parse_tsv(train_lines, train_source, cfg);
  if (train_raw.empty()) throw std::invalid_argument(train_source + ": no training documents");

  std::set<std::string> label_set;
  for (const auto& d : train_raw) label_set.insert(d.label);
  for (const auto& l : label_set) {
    c.label_index_.emplace(l, int(c.labels_.size()));
    c.labels_.push_back(l);
  }

  std::vector<std::vector<std::string>> words;
  words.reserve(train_raw.size());
  for (const auto& d : train_raw) words.push_back(d.words);
  c.vocab_ = Vocab::build(words, cfg.min_freq);

  auto to_doc = [&c](RawDoc& r) {
    Document d;
    d.label = c.label_index_.at(r.label);
    d.raw_text = std::move(r.text);
    d.tokens.reserve(r.words.size());
    for (const auto& w : r.words) d.tokens.push_back(c.vocab_.id(w));
    return d;
  };
  for (auto& r : train_raw) c.train_.push_back(to_doc(r));

  // Test labels are validated against the training label set line by line.
  std::size_t line_no = 0;
  for (const auto& line : test_lines) {
    ++line_no;
    auto parsed = parse_tsv({line}, test_source, cfg);
    if (parsed.empty()) continue;
    if (!c.label_index_.count(parsed[0].label))
      throw ParseError(test_source, line_no, "label '" + parsed[0].label + "' not in training set");
    c.test_.push_back(to_doc(parsed[0]));
  }

  const auto stats = collect_stats(c.train_, c.vocab_.size(), c.labels_.size());
  c.vocab_.set_doc_freq(stats.doc_freq);
  return c;
}

int Corpus::label_id(std::string_view label) const {
  auto it = label_index_.find(label);
  if (it == label_index_.end()) throw std::out_of_range("unknown label: " + std::string(label));
  return it->second;
}

std::vector<int> Corpus::encode(std::string_view text) const {
  auto words = tokenize(text, cfg_.lowercase);
  if (words.size() > cfg_.max_len) words.resize(cfg_.max_len);
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(vocab_.id(w));
  return ids;
}

CorpusStats collect_stats(const std::vector<Document>& docs, std::size_t vocab_size,
                          std::size_t n_labels) {
  if (docs.empty()) throw std::invalid_argument("collect_stats: empty training split");
  CorpusStats s;
  s.n_docs = docs.size();
  s.n_labels = n_labels;
  s.n_words = vocab_size;
  s.doc_freq.assign(vocab_size, 0);
  s.n_docs_with_label.assign(n_labels, 0);
  s.joint.assign(vocab_size * n_labels, 0);
  std::vector<std::size_t> last_seen(vocab_size, std::size_t(-1));
  for (std::size_t di = 0; di < docs.size(); ++di) {
    const auto& d = docs[di];
    if (d.label < 0 || std::size_t(d.label) >= n_labels)
      throw std::out_of_range("collect_stats: label id " + std::to_string(d.label) +
                              " outside label set of " + std::to_string(n_labels));
    ++s.n_docs_with_label[std::size_t(d.label)];
    for (int t : d.tokens) {
      if (t < 0 || std::size_t(t) >= vocab_size)
        throw std::out_of_range("collect_stats: token id " + std::to_string(t) + " outside vocab");
      if (last_seen[std::size_t(t)] == di) continue;
      last_seen[std::size_t(t)] = di;
      ++s.doc_freq[std::size_t(t)];
      ++s.joint[std::size_t(t) * n_labels + std::size_t(d.label)];
    }
  }
  return s;
}

CorpusStats collect_stats(const Corpus& corpus, Split split) {
  if (split != Split::kTrain)
    throw std::invalid_argument("collect_stats: statistics must come from the training split");
  return collect_stats(corpus.train(), corpus.vocab().size(), corpus.num_labels());
}

}  // namespace adt
