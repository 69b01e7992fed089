#include "adt/mi_depth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace adt {

namespace {

double plogratio(double pxy, double px, double py) {
  return pxy > 0.0 ? pxy * std::log(pxy / (px * py)) : 0.0;
}

}  // namespace

double mi_score(const CorpusStats& stats, int word, double smoothing) {
  if (!(smoothing > 0.0)) throw std::invalid_argument("mi_score: smoothing must be positive");
  const bool known = word >= 0 && std::size_t(word) < stats.n_words;
  const double n = double(stats.n_docs);
  const double df = known ? double(stats.doc_freq[std::size_t(word)]) : 0.0;
  const double z = n + 4.0 * smoothing;
  double mi = 0.0;
  for (std::size_t y = 0; y < stats.n_labels; ++y) {
    const double ny = double(stats.n_docs_with_label[y]);
    if (ny == 0.0 || ny == n) continue;
    const double n11 = known ? double(stats.joint[std::size_t(word) * stats.n_labels + y]) : 0.0;
    const double n10 = df - n11;
    const double n01 = ny - n11;
    const double n00 = n - df - ny + n11;
    const double p11 = (n11 + smoothing) / z;
    const double p10 = (n10 + smoothing) / z;
    const double p01 = (n01 + smoothing) / z;
    const double p00 = (n00 + smoothing) / z;
    const double px1 = p11 + p10, px0 = p01 + p00;
    const double py1 = p11 + p01, py0 = p10 + p00;
    mi += plogratio(p11, px1, py1) + plogratio(p10, px1, py0) + plogratio(p01, px0, py1) +
          plogratio(p00, px0, py0);
  }
  return mi;
}

double log_scale(double mi) {
  if (!(mi > 0.0)) throw std::domain_error("log_scale: MI must be positive, got " + std::to_string(mi));
  return -std::log(mi);
}

std::vector<int> bin_depths(std::span<const double> mi_log, int n_bins) {
  if (n_bins < 1) throw std::invalid_argument("bin_depths: n_bins must be >= 1");
  if (mi_log.empty()) throw std::invalid_argument("bin_depths: empty table");
  const auto [mn, mx] = std::minmax_element(mi_log.begin(), mi_log.end());
  const double lo = *mn, hi = *mx;
  std::vector<int> depths(mi_log.size(), 1);
  if (!(hi > lo)) return depths;
  const double width = (hi - lo) / double(n_bins);
  for (std::size_t i = 0; i < mi_log.size(); ++i) {
    const double bin = std::floor((mi_log[i] - lo) / width);
    depths[i] = int(std::clamp(1.0 + bin, 1.0, double(n_bins)));
  }
  return depths;
}

MiTable MiTable::build(const CorpusStats& stats, double smoothing, int n_bins) {
  if (n_bins < 1) throw std::invalid_argument("MiTable: n_bins must be >= 1");
  MiTable t;
  t.smoothing_ = smoothing;
  t.n_bins_ = n_bins;
  std::vector<double> logs;
  for (std::size_t w = Vocab::kNumSpecial; w < stats.n_words; ++w) {
    MiEntry e;
    e.word = int(w);
    e.mi = mi_score(stats, int(w), smoothing);
    e.mi_log = log_scale(std::max(e.mi, kMinMi));
    logs.push_back(e.mi_log);
    t.entries_.push_back(e);
  }
  t.depth_by_id_.assign(stats.n_words, 0);
  if (t.entries_.empty()) return t;
  const auto depths = bin_depths(logs, n_bins);
  for (std::size_t i = 0; i < t.entries_.size(); ++i) {
    t.entries_[i].depth = depths[i];
    t.depth_by_id_[std::size_t(t.entries_[i].word)] = depths[i];
  }
  return t;
}

int MiTable::depth(int word) const {
  if (word < 0 || std::size_t(word) >= depth_by_id_.size()) return n_bins_;
  const int d = depth_by_id_[std::size_t(word)];
  return d == 0 ? n_bins_ : d;
}

void MiTable::save(const std::string& path, const Vocab& vocab) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.precision(17);
  for (const auto& e : entries_)
    os << vocab.word(e.word) << '\t' << e.mi << '\t' << e.mi_log << '\t' << e.depth << '\n';
}

bool MiTable::operator==(const MiTable& o) const {
  if (n_bins_ != o.n_bins_ || smoothing_ != o.smoothing_ || depth_by_id_ != o.depth_by_id_ ||
      entries_.size() != o.entries_.size())
    return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto &a = entries_[i], &b = o.entries_[i];
    if (a.word != b.word || a.mi != b.mi || a.mi_log != b.mi_log || a.depth != b.depth)
      return false;
  }
  return true;
}

DepthMap sentence_depths(const MiTable& table, std::span<const int> tokens) {
  DepthMap m;
  m.reserve(tokens.size());
  for (int t : tokens) m.push_back(table.depth(t));
  return m;
}

std::vector<DepthMap> corpus_depths(const MiTable& table, std::span<const Document> docs) {
  std::vector<DepthMap> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(sentence_depths(table, d.tokens));
  return out;
}

}  // namespace adt
