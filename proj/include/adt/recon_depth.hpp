#pragma once

// Reconstruction-loss depth estimation.
//
// Each token is masked in turn and the anytime MLM reports how well every
// layer recovers it. The chosen depth is argmin_n (loss_n + lambda * n), so a
// token that is already easy to reconstruct at a shallow layer stops there.

#include <span>
#include <string>
#include <vector>

#include "adt/corpus.hpp"
#include "adt/depth_map.hpp"
#include "adt/encoder.hpp"

namespace adt {

struct ReconConfig {
  double lambda = 0.1;
  std::size_t max_rows_per_pass = 4096;  // packs masked variants of a sentence per forward
  unsigned threads = 1;

  void validate() const;
};

/// Per-layer cross-entropy (nats) of the true token at one masked position.
using LayerLossProfile = std::vector<double>;

/// Masks `position` of `sentence` and returns the N per-layer losses.
template <class Real>
LayerLossProfile layer_losses(const Encoder<Real>& mlm, std::span<const int> sentence,
                              std::size_t position);

/// Profiles for every position of a sentence; each masked variant is a
/// separate sentence in a packed batch, so losses never mix.
template <class Real>
std::vector<LayerLossProfile> sentence_profiles(const Encoder<Real>& mlm,
                                                std::span<const int> sentence,
                                                std::size_t max_rows_per_pass = 4096);

/// 1-based argmin of loss_n + lambda * n: the penalty grows with depth, so a
/// larger lambda never selects a deeper layer. Ties go to the smallest n.
int select_depth(std::span<const double> profile, double lambda);

/// Profiles for all documents, computed once so several lambdas can reuse them.
template <class Real>
std::vector<std::vector<LayerLossProfile>> corpus_profiles(const Encoder<Real>& mlm,
                                                           std::span<const Document> docs,
                                                           const ReconConfig& cfg = {});

std::vector<DepthMap> depths_from_profiles(
    const std::vector<std::vector<LayerLossProfile>>& profiles, double lambda);

template <class Real>
std::vector<DepthMap> estimate_corpus_depths(const Encoder<Real>& mlm,
                                             std::span<const Document> docs,
                                             const ReconConfig& cfg = {});

struct LambdaSummaryRow {
  double lambda = 0;
  double avg_depth = 0;
  std::size_t n_sentences = 0;
};

/// lambda<TAB>avg_depth<TAB>n_sentences
void write_lambda_summary(const std::string& path, std::span<const LambdaSummaryRow> rows);

}  // namespace adt
