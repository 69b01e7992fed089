#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "adt/corpus.hpp"
#include "adt/depth_map.hpp"
#include "adt/encoder.hpp"

namespace adt {

struct TrainConfig {
  int steps = 300;
  std::size_t batch_size = 16;
  AdamConfig adam{};
  int warmup_steps = 0;    // linear learning-rate warmup from 0
  std::uint64_t seed = 1;  // drives batch order and dropout
};

/// Called after each optimizer step with the 1-based step and its loss.
using StepCallback = std::function<void(int step, double loss)>;

/// Cross-entropy training of a classifier encoder. With `depths` the encoder
/// runs depth-adaptively on the given per-document maps, otherwise at fixed
/// full depth. Returns the per-step training losses.
template <class Real>
std::vector<double> train_classifier(Encoder<Real>& model, std::span<const Document> docs,
                                     const std::vector<DepthMap>* depths, const TrainConfig& cfg,
                                     const StepCallback& on_step = {});

struct EvalResult {
  double accuracy = 0;
  std::vector<int> predictions;
  LayerWork work;          // summed over all batches
  std::uint64_t macs = 0;  // summed over all batches
  std::vector<int> batch_n_max;
};

/// Batched inference. `threads` > 1 splits batches across workers; results
/// are identical to single-threaded evaluation.
template <class Real>
EvalResult evaluate(const Encoder<Real>& model, std::span<const Document> docs,
                    const std::vector<DepthMap>* depths, std::size_t batch_size = 1,
                    unsigned threads = 1);

/// BERT-style masking: `rate` of the positions are selected (at least one
/// per sentence); of those, mask_frac become <MASK>, random_frac a random
/// vocabulary word and the rest stay unchanged.
struct MaskingConfig {
  double rate = 0.15;
  double mask_frac = 0.8;
  double random_frac = 0.1;
  void validate() const;
};

struct MaskedBatch {
  Batch batch;
  std::vector<std::size_t> rows;  // masked rows in the packed batch
  std::vector<int> targets;       // original tokens at those rows
};

MaskedBatch make_masked_batch(std::span<const Document> docs, std::span<const std::size_t> which,
                              std::size_t vocab_size, const MaskingConfig& masking,
                              std::mt19937_64& rng);

/// Anytime-prediction MLM training (full depth, summed equal-weight layer
/// losses). Throws on a non-finite loss.
template <class Real>
std::vector<double> train_mlm(Encoder<Real>& model, std::span<const Document> docs,
                              const TrainConfig& cfg, const MaskingConfig& masking = {},
                              const StepCallback& on_step = {});

/// Summed anytime loss of a fixed masked batch in eval mode.
template <class Real>
double mlm_loss(const Encoder<Real>& model, const MaskedBatch& batch);

struct RunSummary {
  double mean = 0;
  double variance = 0;  // population variance over runs
  std::size_t runs = 0;

  static RunSummary of(std::span<const double> values);
};

}  // namespace adt
