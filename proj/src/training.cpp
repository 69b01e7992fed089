#include "adt/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace adt {

namespace {

// Endless shuffled pass over [0, n).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::mt19937_64& rng)
      : order_(n), batch_(std::max<std::size_t>(1, std::min(batch, n))), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t(0));
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_ = 0;
  std::mt19937_64& rng_;
};

Batch make_batch(std::span<const Document> docs, std::span<const std::size_t> which,
                 const std::vector<DepthMap>* depths) {
  Batch b;
  for (std::size_t i : which) {
    if (depths)
      b.add(docs[i].tokens, (*depths)[i]);
    else
      b.add(docs[i].tokens);
  }
  return b;
}

AdamConfig scheduled(const TrainConfig& cfg, int step) {
  AdamConfig a = cfg.adam;
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    a.lr *= double(step) / double(cfg.warmup_steps);
  return a;
}

}  // namespace

template <class Real>
std::vector<double> train_classifier(Encoder<Real>& model, std::span<const Document> docs,
                                     const std::vector<DepthMap>* depths, const TrainConfig& cfg,
                                     const StepCallback& on_step) {
  if (docs.empty()) throw std::invalid_argument("train_classifier: no documents");
  if (depths) check_alignment(*depths, docs, model.config().n_layers);
  std::mt19937_64 rng(cfg.seed);
  BatchSampler sampler(docs.size(), cfg.batch_size, rng);
  std::vector<double> losses;
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto which = sampler.next();
    const Batch batch = make_batch(docs, which, depths);
    std::vector<int> gold;
    for (std::size_t i : which) gold.push_back(docs[i].label);

    Graph<Real> g(/*training=*/true, /*record=*/true, &rng);
    auto states = model.forward(g, batch);
    auto logits = model.classify_logits(g, states, batch);
    auto loss = scale(softmax_cross_entropy(logits, std::span<const int>(gold)),
                      1.0 / double(gold.size()));
    const double lv = double(loss.value()[0]);
    if (!std::isfinite(lv)) throw std::runtime_error("train_classifier: non-finite loss at step " + std::to_string(step));
    g.backward(loss);
    model.params().zero_grad();
    g.accumulate_param_grads(model.params());
    model.params().adam_step(scheduled(cfg, step));
    losses.push_back(lv);
    if (on_step) on_step(step, lv);
  }
  return losses;
}

template <class Real>
EvalResult evaluate(const Encoder<Real>& model, std::span<const Document> docs,
                    const std::vector<DepthMap>* depths, std::size_t batch_size,
                    unsigned threads) {
  if (depths) check_alignment(*depths, docs, model.config().n_layers);
  batch_size = std::max<std::size_t>(1, batch_size);
  const std::size_t n_batches = (docs.size() + batch_size - 1) / batch_size;

  struct Partial {
    std::vector<int> preds;
    LayerWork work;
    std::uint64_t macs = 0;
    int n_max = 0;
  };
  std::vector<Partial> parts(n_batches);
  auto run = [&](std::size_t bi) {
    std::vector<std::size_t> which;
    for (std::size_t i = bi * batch_size; i < std::min(docs.size(), (bi + 1) * batch_size); ++i)
      which.push_back(i);
    const Batch batch = make_batch(docs, which, depths);
    Graph<Real> g(false, false);
    auto states = model.forward(g, batch);
    auto logits = model.classify_logits(g, states, batch);
    auto& p = parts[bi];
    for (std::size_t r = 0; r < logits.value().rows(); ++r) {
      auto row = logits.value().row(r);
      p.preds.push_back(int(std::max_element(row.begin(), row.end()) - row.begin()));
    }
    p.work = states.work;
    p.macs = g.macs;
    p.n_max = states.n_max();
  };

  threads = std::max(1u, threads);
  if (threads == 1) {
    for (std::size_t bi = 0; bi < n_batches; ++bi) run(bi);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t bi = t; bi < n_batches; bi += threads) run(bi);
      });
  }

  EvalResult res;
  std::size_t correct = 0;
  for (const auto& p : parts) {
    for (int pred : p.preds) {
      if (pred == docs[res.predictions.size()].label) ++correct;
      res.predictions.push_back(pred);
    }
    res.work.ffn_applications += p.work.ffn_applications;
    res.work.kv_projections += p.work.kv_projections;
    res.work.executed_layers = std::max(res.work.executed_layers, p.work.executed_layers);
    res.macs += p.macs;
    res.batch_n_max.push_back(p.n_max);
  }
  res.accuracy = docs.empty() ? 0.0 : double(correct) / double(docs.size());
  return res;
}

void MaskingConfig::validate() const {
  if (!(rate > 0.0) || rate > 1.0)
    throw std::invalid_argument("masking rate must be in (0, 1]; got " + std::to_string(rate));
  if (mask_frac < 0 || random_frac < 0 || mask_frac + random_frac > 1.0)
    throw std::invalid_argument("masking: mask_frac + random_frac must lie in [0, 1]");
}

MaskedBatch make_masked_batch(std::span<const Document> docs, std::span<const std::size_t> which,
                              std::size_t vocab_size, const MaskingConfig& masking,
                              std::mt19937_64& rng) {
  masking.validate();
  MaskedBatch mb;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> word(Vocab::kNumSpecial, int(vocab_size) - 1);
  for (std::size_t i : which) {
    std::vector<int> toks = docs[i].tokens;
    const std::size_t base = mb.batch.tokens.size();
    const std::size_t k =
        std::max<std::size_t>(1, std::size_t(std::lround(masking.rate * double(toks.size()))));
    std::vector<std::size_t> pos(toks.size());
    std::iota(pos.begin(), pos.end(), std::size_t(0));
    std::shuffle(pos.begin(), pos.end(), rng);
    pos.resize(std::min(k, toks.size()));
    std::sort(pos.begin(), pos.end());
    for (std::size_t p : pos) {
      mb.rows.push_back(base + p);
      mb.targets.push_back(toks[p]);
      const double r = u(rng);
      if (r < masking.mask_frac)
        toks[p] = Vocab::kMask;
      else if (r < masking.mask_frac + masking.random_frac && vocab_size > Vocab::kNumSpecial)
        toks[p] = word(rng);
    }
    mb.batch.add(toks);
  }
  return mb;
}

template <class Real>
std::vector<double> train_mlm(Encoder<Real>& model, std::span<const Document> docs,
                              const TrainConfig& cfg, const MaskingConfig& masking,
                              const StepCallback& on_step) {
  masking.validate();
  if (docs.empty()) throw std::invalid_argument("train_mlm: no documents");
  std::mt19937_64 rng(cfg.seed);
  BatchSampler sampler(docs.size(), cfg.batch_size, rng);
  const auto V = std::size_t(model.config().vocab_size);
  std::vector<double> losses;
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto which = sampler.next();
    const auto mb = make_masked_batch(docs, which, V, masking, rng);
    Graph<Real> g(true, true, &rng);
    auto states = model.fixed_forward(g, model.embed(g, mb.batch), mb.batch);
    auto loss = model.mlm_anytime_loss(g, states, mb.rows, mb.targets);
    const double lv = double(loss.total.value()[0]);
    if (!std::isfinite(lv))
      throw std::runtime_error("train_mlm: diverged (non-finite loss) at step " + std::to_string(step));
    g.backward(loss.total);
    model.params().zero_grad();
    g.accumulate_param_grads(model.params());
    model.params().adam_step(scheduled(cfg, step));
    losses.push_back(lv);
    if (on_step) on_step(step, lv);
  }
  return losses;
}

template <class Real>
double mlm_loss(const Encoder<Real>& model, const MaskedBatch& mb) {
  Graph<Real> g(false, false);
  auto states = model.fixed_forward(g, model.embed(g, mb.batch), mb.batch);
  return double(model.mlm_anytime_loss(g, states, mb.rows, mb.targets).total.value()[0]);
}

RunSummary RunSummary::of(std::span<const double> values) {
  RunSummary s;
  s.runs = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= double(values.size());
  for (double v : values) s.variance += (v - s.mean) * (v - s.mean);
  s.variance /= double(values.size());
  return s;
}

#define ADT_INSTANTIATE_TRAINING(R)                                                           \
  template std::vector<double> train_classifier(Encoder<R>&, std::span<const Document>,       \
                                                const std::vector<DepthMap>*,                 \
                                                const TrainConfig&, const StepCallback&);     \
  template EvalResult evaluate(const Encoder<R>&, std::span<const Document>,                  \
                               const std::vector<DepthMap>*, std::size_t, unsigned);          \
  template std::vector<double> train_mlm(Encoder<R>&, std::span<const Document>,              \
                                         const TrainConfig&, const MaskingConfig&,            \
                                         const StepCallback&);                                \
  template double mlm_loss(const Encoder<R>&, const MaskedBatch&);

ADT_INSTANTIATE_TRAINING(float)
ADT_INSTANTIATE_TRAINING(double)

}  // namespace adt
