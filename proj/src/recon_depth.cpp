#include "adt/recon_depth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

namespace adt {

void ReconConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (max_rows_per_pass == 0) throw std::invalid_argument("max_rows_per_pass must be positive");
}

template <class Real>
std::vector<LayerLossProfile> sentence_profiles(const Encoder<Real>& mlm,
                                                std::span<const int> sentence,
                                                std::size_t max_rows_per_pass) {
  const std::size_t T = sentence.size();
  if (T == 0) return {};
  const std::size_t per_pass = std::max<std::size_t>(1, max_rows_per_pass / T);
  const int N = mlm.config().n_layers;
  std::vector<LayerLossProfile> out(T, LayerLossProfile(std::size_t(N)));
  std::vector<int> variant(sentence.begin(), sentence.end());

  for (std::size_t first = 0; first < T; first += per_pass) {
    const std::size_t last = std::min(T, first + per_pass);
    Batch batch;
    std::vector<std::size_t> rows;
    std::vector<int> targets;
    for (std::size_t p = first; p < last; ++p) {
      variant[p] = Vocab::kMask;
      rows.push_back(batch.tokens.size() + p);
      targets.push_back(sentence[p]);
      batch.add(variant);
      variant[p] = sentence[p];
    }
    Graph<Real> g(false, false);
    auto states = mlm.fixed_forward(g, mlm.embed(g, batch), batch);
    auto w = g.param(mlm.params().get("mlm.w"));
    auto b = g.param(mlm.params().get("mlm.b"));
    for (int n = 1; n <= N; ++n) {
      auto logits = linear(gather_rows(states.layers[std::size_t(n)], std::span<const std::size_t>(rows)), w, b);
      const auto ce = row_cross_entropy(logits.value(), std::span<const int>(targets));
      for (std::size_t i = 0; i < ce.size(); ++i) out[first + i][std::size_t(n - 1)] = ce[i];
    }
  }
  return out;
}

template <class Real>
LayerLossProfile layer_losses(const Encoder<Real>& mlm, std::span<const int> sentence,
                              std::size_t position) {
  if (position >= sentence.size())
    throw std::out_of_range("layer_losses: position " + std::to_string(position) +
                            " outside sentence of " + std::to_string(sentence.size()));
  std::vector<int> masked(sentence.begin(), sentence.end());
  masked[position] = Vocab::kMask;
  Batch batch;
  batch.add(masked);
  Graph<Real> g(false, false);
  auto states = mlm.fixed_forward(g, mlm.embed(g, batch), batch);
  auto w = g.param(mlm.params().get("mlm.w"));
  auto b = g.param(mlm.params().get("mlm.b"));
  const std::size_t rows[] = {position};
  const int target[] = {sentence[position]};
  LayerLossProfile profile;
  for (int n = 1; n <= mlm.config().n_layers; ++n) {
    auto logits = linear(gather_rows(states.layers[std::size_t(n)], std::span<const std::size_t>(rows)), w, b);
    profile.push_back(row_cross_entropy(logits.value(), std::span<const int>(target))[0]);
  }
  return profile;
}

int select_depth(std::span<const double> profile, double lambda) {
  if (profile.empty()) throw std::invalid_argument("select_depth: empty profile");
  int best = 1;
  double best_score = 0;
  for (std::size_t i = 0; i < profile.size(); ++i) {
    if (!std::isfinite(profile[i]))
      throw std::invalid_argument("select_depth: non-finite loss at layer " + std::to_string(i + 1));
    const double score = profile[i] + lambda * double(i + 1);
    if (i == 0 || score < best_score) {
      best_score = score;
      best = int(i + 1);
    }
  }
  return best;
}

template <class Real>
std::vector<std::vector<LayerLossProfile>> corpus_profiles(const Encoder<Real>& mlm,
                                                           std::span<const Document> docs,
                                                           const ReconConfig& cfg) {
  cfg.validate();
  std::vector<std::vector<LayerLossProfile>> out(docs.size());
  auto work = [&](std::size_t i) {
    out[i] = sentence_profiles(mlm, docs[i].tokens, cfg.max_rows_per_pass);
  };
  const unsigned threads = std::max(1u, cfg.threads);
  if (threads == 1) {
    for (std::size_t i = 0; i < docs.size(); ++i) work(i);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < docs.size(); i += threads) work(i);
      });
  }
  return out;
}

std::vector<DepthMap> depths_from_profiles(
    const std::vector<std::vector<LayerLossProfile>>& profiles, double lambda) {
  std::vector<DepthMap> maps;
  maps.reserve(profiles.size());
  for (const auto& sentence : profiles) {
    DepthMap m;
    for (const auto& p : sentence) m.push_back(select_depth(p, lambda));
    maps.push_back(std::move(m));
  }
  return maps;
}

template <class Real>
std::vector<DepthMap> estimate_corpus_depths(const Encoder<Real>& mlm,
                                             std::span<const Document> docs,
                                             const ReconConfig& cfg) {
  return depths_from_profiles(corpus_profiles(mlm, docs, cfg), cfg.lambda);
}

void write_lambda_summary(const std::string& path, std::span<const LambdaSummaryRow> rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "lambda\tavg_depth\tn_sentences\n";
  for (const auto& r : rows) os << r.lambda << '\t' << r.avg_depth << '\t' << r.n_sentences << '\n';
}

#define ADT_INSTANTIATE_RECON(R)                                                             \
  template LayerLossProfile layer_losses(const Encoder<R>&, std::span<const int>, std::size_t); \
  template std::vector<LayerLossProfile> sentence_profiles(const Encoder<R>&,                \
                                                           std::span<const int>, std::size_t); \
  template std::vector<std::vector<LayerLossProfile>> corpus_profiles(                       \
      const Encoder<R>&, std::span<const Document>, const ReconConfig&);                     \
  template std::vector<DepthMap> estimate_corpus_depths(const Encoder<R>&,                   \
                                                        std::span<const Document>,           \
                                                        const ReconConfig&);

ADT_INSTANTIATE_RECON(float)
ADT_INSTANTIATE_RECON(double)

}  // namespace adt
