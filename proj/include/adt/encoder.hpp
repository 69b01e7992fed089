#pragma once

// Post-norm Transformer encoder with per-token depth-adaptive execution.
//
// Layer n updates only the positions whose depth is >= n; every other
// position copies its layer n-1 state verbatim. Copied positions still feed
// keys and values to the active queries, so K/V projections run over all rows
// of every executed layer while query, attention output and FFN work runs
// only for active rows. Execution stops at the largest depth in the batch.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adt/autodiff.hpp"
#include "adt/depth_map.hpp"
#include "adt/params.hpp"

namespace adt {

struct EncoderConfig {
  int n_layers = 12;
  int d_model = 128;
  int n_heads = 4;
  int d_ff = 512;
  double dropout = 0.1;
  int max_len = 512;
  int vocab_size = 0;
  int n_labels = 2;

  void validate() const;
  void save(const std::string& path) const;  // key=value lines
  static EncoderConfig load(const std::string& path);
  bool operator==(const EncoderConfig&) const = default;
};

enum class Head { kClassifier, kMlm };

/// Several sentences packed row-wise into one matrix. Attention never crosses
/// sentence boundaries. `depths` is empty for fixed-depth execution.
struct Batch {
  std::vector<int> tokens;
  std::vector<RowSpan> spans;
  std::vector<int> depths;

  std::size_t num_sentences() const { return spans.size(); }
  std::size_t num_tokens() const { return tokens.size(); }

  void add(std::span<const int> sentence, std::span<const int> sentence_depths = {});
};

/// Work actually executed by one forward pass.
struct LayerWork {
  std::size_t ffn_applications = 0;  // query/attention/FFN row updates
  std::size_t kv_projections = 0;    // rows projected to keys and values
  int executed_layers = 0;           // batch-wide n_max
};

template <class Real>
struct HiddenStates {
  std::vector<Var<Real>> layers;       // layers[n] for n in [0, n_max]
  std::vector<int> sentence_n_max;     // per-sentence max_t min(d_t, N)
  std::vector<std::size_t> active_rows;  // per executed layer
  LayerWork work;

  int n_max() const { return work.executed_layers; }
  Var<Real> top() const { return layers.back(); }
};

template <class Real>
struct MlmLoss {
  Var<Real> total;                 // sum over layers of the mean masked-token CE
  std::vector<double> per_layer;   // per-layer mean CE
};

template <class Real>
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, Head head, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  Head head() const { return head_; }
  ParamStore<Real>& params() { return params_; }
  const ParamStore<Real>& params() const { return params_; }

  /// Token embedding plus sinusoidal position encoding (dropout in training).
  Var<Real> embed(Graph<Real>& g, const Batch& batch) const;

  /// Depth-adaptive stack; requires batch.depths aligned with batch.tokens.
  HiddenStates<Real> adaptive_forward(Graph<Real>& g, Var<Real> layer0, const Batch& batch) const;

  /// Plain N-layer encoder over every position.
  HiddenStates<Real> fixed_forward(Graph<Real>& g, Var<Real> layer0, const Batch& batch) const;

  /// Adaptive when batch.depths is set, fixed otherwise.
  HiddenStates<Real> forward(Graph<Real>& g, const Batch& batch) const;

  /// ReLU([max-pool ; mean-pool] of the top layer) -> linear; one row per sentence.
  Var<Real> classify_logits(Graph<Real>& g, const HiddenStates<Real>& states,
                            const Batch& batch) const;
  Var<Real> classify(Graph<Real>& g, const HiddenStates<Real>& states, const Batch& batch) const;

  /// Shared vocabulary classifier applied to `rows` of every layer 1..N.
  MlmLoss<Real> mlm_anytime_loss(Graph<Real>& g, const HiddenStates<Real>& states,
                                 std::span<const std::size_t> rows,
                                 std::span<const int> true_tokens) const;

  /// Writes `path` (tensors) and `path.cfg` (config + head).
  void save(const std::string& path) const;
  static Encoder load(const std::string& path);

 private:
  Var<Real> layer(Graph<Real>& g, int n, Var<Real> x, const Batch& batch,
                  const std::vector<std::size_t>* active, LayerWork& work) const;

  EncoderConfig cfg_;
  Head head_;
  ParamStore<Real> params_;
  Tensor<Real> positions_;
};

/// -log p[gold] of a probability row.
double task_loss(std::span<const double> probs, int gold);

std::string head_name(Head h);
Head parse_head(const std::string& s);

}  // namespace adt
