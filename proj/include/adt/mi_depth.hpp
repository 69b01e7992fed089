#pragma once

// Mutual-information depth estimation.
//
// Each word gets MI(x) = sum over labels y of the binary mutual information
// between "x occurs in the document" and "the document has label y". Words
// that say a lot about the label need fewer layers: MI is mapped through
// -log and split into N equal-width bins, bin index = depth.

#include <span>
#include <string>
#include <vector>

#include "adt/corpus.hpp"
#include "adt/depth_map.hpp"

namespace adt {

inline constexpr double kDefaultSmoothing = 0.1;

/// Floor applied to MI before the log so that exactly independent words
/// still get a finite score.
inline constexpr double kMinMi = 1e-12;

/// Summed binary MI (nats) of word presence against each label's presence.
/// Each per-label 2x2 table is smoothed cell-wise: P = (count + s) / (n + 4s).
/// Labels whose indicator is constant over the split (never or always
/// present) carry no information and contribute 0. Word ids outside the
/// statistics are scored as never occurring.
double mi_score(const CorpusStats& stats, int word, double smoothing = kDefaultSmoothing);

/// -ln(mi); mi must be positive.
double log_scale(double mi);

/// Equal-width binning of mi_log over [min, max] into depths 1..n_bins.
/// A degenerate range puts everything at depth 1.
std::vector<int> bin_depths(std::span<const double> mi_log, int n_bins);

struct MiEntry {
  int word = 0;
  double mi = 0;
  double mi_log = 0;
  int depth = 1;
};

class MiTable {
 public:
  MiTable() = default;

  /// Scores every non-special vocabulary word from training statistics.
  static MiTable build(const CorpusStats& stats, double smoothing = kDefaultSmoothing,
                       int n_bins = 12);

  int n_bins() const { return n_bins_; }
  double smoothing() const { return smoothing_; }
  const std::vector<MiEntry>& entries() const { return entries_; }

  /// Depth of a word id; words outside the table get n_bins.
  int depth(int word) const;

  /// Writes word<TAB>mi<TAB>mi_log<TAB>depth.
  void save(const std::string& path, const Vocab& vocab) const;

  bool operator==(const MiTable&) const;

 private:
  std::vector<MiEntry> entries_;
  std::vector<int> depth_by_id_;  // 0 = not scored
  double smoothing_ = kDefaultSmoothing;
  int n_bins_ = 12;
};

DepthMap sentence_depths(const MiTable& table, std::span<const int> tokens);
std::vector<DepthMap> corpus_depths(const MiTable& table, std::span<const Document> docs);

}  // namespace adt
