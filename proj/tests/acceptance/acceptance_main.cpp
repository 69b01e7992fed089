// Runs the ten acceptance criteria and prints one PASS/FAIL line for each.
// Exit status is non-zero when any criterion fails.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "adt/bench.hpp"
#include "adt/mi_depth.hpp"
#include "adt/recon_depth.hpp"
#include "adt/synthetic.hpp"
#include "adt/training.hpp"
#include "support/oracles.hpp"

using namespace adt;

namespace {

// Pinned tolerances and budgets.
constexpr double kMiTolerance = 1e-12;
constexpr double kGradTolerance = 1e-4;
constexpr double kGradEps = 1e-4;
constexpr double kFfnRatioLimit = 0.30;
constexpr double kWallSpeedupFloor = 2.0;
constexpr double kAccuracyGapPoints = 2.0;
constexpr double kC1Seconds = 5, kC2Seconds = 10, kC3Seconds = 10, kC4Seconds = 60;
constexpr double kC6Seconds = 600, kC8Seconds = 1800;
constexpr std::uint64_t kSeed = 20240601;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// FNV-1a over the raw bytes of everything a criterion computes.
class Fingerprint {
 public:
  void add_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= b[i];
      h_ *= 1099511628211ull;
    }
  }
  template <class T>
  void add(const T& v) {
    add_bytes(&v, sizeof(T));
  }
  template <class Range>
  void add_span(const Range& r) {
    add_bytes(std::data(r), std::size(r) * sizeof(*std::data(r)));
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 1469598103934665603ull;
};

struct Outcome {
  bool pass = false;
  std::string detail;
  std::uint64_t fingerprint = 0;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<int> random_sentence(std::size_t len, int vocab, std::mt19937_64& rng) {
  std::vector<int> s(len);
  for (auto& t : s) t = Vocab::kNumSpecial + int(rng() % std::uint64_t(vocab - Vocab::kNumSpecial));
  return s;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(kSeed + 1);
  Fingerprint fp;
  double worst = 0;
  std::size_t scored = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n_docs = 1 + int(rng() % 500);
    const int n_words = 1 + int(rng() % 50);
    const int n_labels = 1 + int(rng() % 5);
    std::vector<std::string> lines;
    for (int d = 0; d < n_docs; ++d) {
      std::string text;
      const int len = 1 + int(rng() % 12);
      for (int k = 0; k < len; ++k) text += "w" + std::to_string(rng() % std::uint64_t(n_words)) + " ";
      lines.push_back("y" + std::to_string(rng() % std::uint64_t(n_labels)) + "\t" + text);
    }
    const auto corpus = Corpus::from_lines(lines, {});
    const auto stats = collect_stats(corpus);
    std::vector<testing::OracleDoc> docs;
    for (const auto& d : corpus.train()) docs.push_back({d.tokens, d.label});
    for (std::size_t w = 0; w < stats.n_words; ++w) {
      const double got = mi_score(stats, int(w));
      const double want = testing::brute_force_mi(docs, int(w), int(corpus.num_labels()), 0.1);
      worst = std::max(worst, std::abs(got - want));
      fp.add(got);
      ++scored;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= kMiTolerance && secs < kC1Seconds,
          fmt("50 corpora, %zu words, max |mi - oracle| = %.3g (tol %.0e), %.2f s (limit %.0f s)",
              scored, worst, kMiTolerance, secs, kC1Seconds),
          fp.value()};
}

EncoderConfig small_config(int n_layers, int d_model, int vocab, int n_labels = 2) {
  EncoderConfig c;
  c.n_layers = n_layers;
  c.d_model = d_model;
  c.n_heads = d_model >= 32 ? 4 : 2;
  c.d_ff = 4 * d_model;
  c.max_len = 64;
  c.vocab_size = vocab;
  c.n_labels = n_labels;
  return c;
}

Outcome criterion2() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(kSeed + 2);
  Fingerprint fp;
  std::size_t mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    const Encoder<double> enc(small_config(4, 32, 50), Head::kClassifier, kSeed + std::uint64_t(i));
    const auto s = random_sentence(1 + rng() % 40, 50, rng);
    Batch fixed, adaptive;
    fixed.add(s);
    adaptive.add(s, std::vector<int>(s.size(), 4));
    Graph<double> gf(false, false), ga(false, false);
    const auto hf = enc.forward(gf, fixed);
    const auto ha = enc.forward(ga, adaptive);
    bool same = hf.layers.size() == ha.layers.size();
    for (std::size_t n = 0; same && n < hf.layers.size(); ++n)
      same = hf.layers[n].value() == ha.layers[n].value();
    const auto pf = enc.classify(gf, hf, fixed).value();
    same = same && pf == enc.classify(ga, ha, adaptive).value();
    if (!same) ++mismatches;
    fp.add_span(ha.top().value().data());
    fp.add_span(pf.data());
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < kC2Seconds,
          fmt("100 inputs (N=4, d=32): %zu not bit-identical, %.2f s (limit %.0f s)", mismatches,
              secs, kC2Seconds),
          fp.value()};
}

Outcome criterion3() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(kSeed + 3);
  const Encoder<double> enc(small_config(12, 32, 60), Head::kClassifier, kSeed);
  Fingerprint fp;
  std::size_t checked = 0, violations = 0, count_errors = 0;
  for (int i = 0; i < 100; ++i) {
    Batch b;
    const std::size_t n_sent = 1 + rng() % 4;
    for (std::size_t s = 0; s < n_sent; ++s) {
      const auto sent = random_sentence(1 + rng() % 30, 60, rng);
      std::vector<int> d(sent.size());
      for (auto& x : d) x = 1 + int(rng() % 12);
      b.add(sent, d);
    }
    Graph<double> g(false, false);
    const auto hs = enc.forward(g, b);
    std::size_t depth_sum = 0;
    for (std::size_t r = 0; r < b.num_tokens(); ++r) {
      const auto d = std::size_t(b.depths[r]);
      depth_sum += d;
      const auto frozen = hs.layers[d].value().row(r);
      for (std::size_t n = d + 1; n < hs.layers.size(); ++n) {
        ++checked;
        const auto row = hs.layers[n].value().row(r);
        if (!std::equal(row.begin(), row.end(), frozen.begin())) ++violations;
      }
    }
    if (hs.work.ffn_applications != depth_sum ||
        hs.n_max() != *std::max_element(b.depths.begin(), b.depths.end()))
      ++count_errors;
    fp.add_span(hs.top().value().data());
    fp.add(hs.work.ffn_applications);
    fp.add(hs.work.kv_projections);
  }
  const double secs = seconds_since(t0);
  return {violations == 0 && count_errors == 0 && secs < kC3Seconds,
          fmt("%zu (position, layer > depth) pairs: %zu differ; %zu batches with wrong counts; "
              "%.2f s (limit %.0f s)",
              checked, violations, count_errors, secs, kC3Seconds),
          fp.value()};
}

// Gradient check of a full model loss over every parameter.
testing::GradCheckResult model_grad_check(Encoder<double>& model,
                                          const std::function<Var<double>(Graph<double>&)>& loss) {
  {
    Graph<double> g(false, true);
    auto l = loss(g);
    model.params().zero_grad();
    g.backward(l);
    g.accumulate_param_grads(model.params());
  }
  return testing::finite_difference_check(
      model.params(),
      [&] {
        Graph<double> g(false, false);
        return double(loss(g).value()[0]);
      },
      kGradEps);
}

Outcome criterion4() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(kSeed + 4);
  Fingerprint fp;

  auto cfg = small_config(2, 8, 14, 3);
  cfg.dropout = 0.0;
  Batch batch;
  const auto s1 = random_sentence(5, 14, rng), s2 = random_sentence(3, 14, rng);
  batch.add(s1, std::vector<int>{1, 2, 1, 2, 2});
  batch.add(s2, std::vector<int>{1, 1, 2});
  const std::vector<int> gold{2, 0};

  Encoder<double> cls(cfg, Head::kClassifier, kSeed);
  const auto rc = model_grad_check(cls, [&](Graph<double>& g) {
    auto hs = cls.forward(g, batch);
    return scale(softmax_cross_entropy(cls.classify_logits(g, hs, batch), gold), 0.5);
  });

  Encoder<double> mlm(cfg, Head::kMlm, kSeed + 1);
  Batch masked = batch;
  const std::vector<std::size_t> rows{0, 3, 6};  // depth 1, 2 and 1
  std::vector<int> targets;
  for (std::size_t r : rows) {
    targets.push_back(masked.tokens[r]);
    masked.tokens[r] = Vocab::kMask;
  }
  const auto rm = model_grad_check(mlm, [&](Graph<double>& g) {
    auto hs = mlm.forward(g, masked);
    return mlm.mlm_anytime_loss(g, hs, rows, targets).total;
  });
  fp.add(rc.max_rel_error);
  fp.add(rm.max_rel_error);
  const double secs = seconds_since(t0);
  const double worst = std::max(rc.max_rel_error, rm.max_rel_error);
  return {worst < kGradTolerance && secs < kC4Seconds,
          fmt("classifier: %zu params max rel err %.2e (%s); anytime MLM: %zu params max rel err "
              "%.2e (%s); tol %.0e; %.2f s (limit %.0f s)",
              rc.checked, rc.max_rel_error, rc.worst_param.c_str(), rm.checked, rm.max_rel_error,
              rm.worst_param.c_str(), kGradTolerance, secs, kC4Seconds),
          fp.value()};
}

Outcome criterion5() {
  std::mt19937_64 rng(kSeed + 5);
  EncoderConfig cfg;  // N=12, d=128, 4 heads, d_ff=512
  cfg.vocab_size = 1000;
  const Encoder<float> enc(cfg, Head::kClassifier, kSeed);
  const std::vector<std::vector<int>> sentences{random_sentence(256, 1000, rng)};
  const std::vector<DepthMap> depths{depths_with_mean(256, 12.0 / 4.0, 12, rng)};
  const double avg = average_depth(depths);
  const auto row = compare_speed(enc, sentences, depths, 1, 5);
  Fingerprint fp;
  fp.add(row.fixed.ffn_applications);
  fp.add(row.adaptive.ffn_applications);
  fp.add(row.fixed.macs);
  fp.add(row.adaptive.macs);
  fp.add_span(depths[0]);
  const bool ok = row.ffn_ratio <= kFfnRatioLimit && row.wall_speedup >= kWallSpeedupFloor;
  return {ok,
          fmt("avg depth %.3f at N=12: ffn %zu/%zu = %.4f (limit %.2f); MAC speedup %.2fx; "
              "wall f32 len 256 batch 1: median %.1f/%.1f ms = %.2fx (min %.2fx) (floor %.1fx)",
              avg, row.adaptive.ffn_applications, row.fixed.ffn_applications, row.ffn_ratio,
              kFfnRatioLimit, row.mac_speedup, row.fixed.wall_median_ns() / 1e6,
              row.adaptive.wall_median_ns() / 1e6, row.wall_speedup,
              row.fixed.wall_min_ns() / row.adaptive.wall_min_ns(), kWallSpeedupFloor),
          fp.value()};
}

// Shared by criteria 6 and 9: one anytime MLM trained on the toy corpus.
struct MlmRun {
  std::vector<double> early;  // held-out loss after steps 41..50
  std::vector<double> late;   // held-out loss after steps 491..500
  std::vector<double> lambdas{0.0, 0.05, 0.1, 0.15, 0.2};
  std::vector<double> avg_depth;
  double seconds = 0;
  std::uint64_t fingerprint = 0;
  int vocab_size = 0;
  std::vector<std::vector<int>> test_sentences;
  std::vector<DepthMap> depths_at_default;  // lambda = 0.1
};

MlmRun run_mlm() {
  const auto t0 = Clock::now();
  const auto syn = make_sentiment_corpus(400, 100, kSeed + 6);
  const auto corpus = Corpus::from_lines(syn.train, syn.test);
  Encoder<float> mlm(small_config(12, 32, int(corpus.vocab().size())), Head::kMlm, kSeed + 6);

  // Fixed masked held-out slice.
  std::mt19937_64 mask_rng(kSeed + 60);
  std::vector<std::size_t> held(50);
  std::iota(held.begin(), held.end(), std::size_t(0));
  const auto held_batch =
      make_masked_batch(corpus.test(), held, corpus.vocab().size(), {}, mask_rng);

  MlmRun run;
  TrainConfig tc;
  tc.steps = 500;
  tc.batch_size = 16;
  tc.warmup_steps = 50;
  tc.seed = kSeed + 61;
  const auto losses = train_mlm(mlm, corpus.train(), tc, {}, [&](int step, double) {
    if (step > 40 && step <= 50) run.early.push_back(mlm_loss(mlm, held_batch));
    if (step > 490 && step <= 500) run.late.push_back(mlm_loss(mlm, held_batch));
  });

  const auto profiles = corpus_profiles(mlm, corpus.test(), {});
  Fingerprint fp;
  for (std::size_t i = 0; i < mlm.params().size(); ++i) fp.add_span(mlm.params()[i].value.data());
  fp.add_span(losses);
  for (double lambda : run.lambdas) {
    const auto maps = depths_from_profiles(profiles, lambda);
    for (const auto& m : maps) fp.add_span(m);
    run.avg_depth.push_back(average_depth(maps));
    if (lambda == 0.1) run.depths_at_default = maps;
  }
  run.vocab_size = int(corpus.vocab().size());
  for (const auto& d : corpus.test()) run.test_sentences.push_back(d.tokens);
  fp.add_span(run.early);
  fp.add_span(run.late);
  run.fingerprint = fp.value();
  run.seconds = seconds_since(t0);
  return run;
}

Outcome criterion6(const MlmRun& run) {
  bool non_increasing = true, strict = false;
  std::string row;
  for (std::size_t i = 0; i < run.avg_depth.size(); ++i) {
    row += fmt("%s%.2f:%.3f", i ? " " : "", run.lambdas[i], run.avg_depth[i]);
    if (i) {
      non_increasing = non_increasing && run.avg_depth[i] <= run.avg_depth[i - 1];
      strict = strict || run.avg_depth[i] < run.avg_depth[i - 1];
    }
  }
  return {non_increasing && strict && run.seconds < kC6Seconds,
          fmt("lambda:avg_depth %s (reference 9.5 6.3 4.5 3.9 3.6); %.1f s incl. MLM training "
              "(limit %.0f s)",
              row.c_str(), run.seconds, kC6Seconds),
          run.fingerprint};
}

Outcome criterion9(const MlmRun& run) {
  const double early = std::accumulate(run.early.begin(), run.early.end(), 0.0) / double(run.early.size());
  const double late = std::accumulate(run.late.begin(), run.late.end(), 0.0) / double(run.late.size());
  return {late < early,
          fmt("held-out summed anytime loss: steps 41-50 mean %.4f, steps 491-500 mean %.4f", early,
              late),
          0};
}

// Synthetic corpus plus MI depth maps, shared by criteria 7 and 8.
struct MiSetup {
  Corpus corpus;
  std::vector<DepthMap> train_depths, test_depths;
};

MiSetup mi_setup() {
  const auto syn = make_sentiment_corpus(400, 200, kSeed + 8);
  MiSetup s{Corpus::from_lines(syn.train, syn.test), {}, {}};
  const auto table = MiTable::build(collect_stats(s.corpus));
  s.train_depths = corpus_depths(table, s.corpus.train());
  s.test_depths = corpus_depths(table, s.corpus.test());
  return s;
}

Outcome criterion7(const MlmRun& recon, const MiSetup& mi) {
  const Encoder<float> enc(small_config(12, 32, recon.vocab_size), Head::kClassifier, kSeed);
  const auto b1 = compare_speed(enc, recon.test_sentences, recon.depths_at_default, 1, 5);
  const auto b15 = compare_speed(enc, recon.test_sentences, recon.depths_at_default, 15, 5);

  const Encoder<float> mi_enc(small_config(12, 32, int(mi.corpus.vocab().size())),
                              Head::kClassifier, kSeed);
  std::vector<std::vector<int>> mi_sentences;
  for (const auto& d : mi.corpus.test()) mi_sentences.push_back(d.tokens);
  const auto m1 = compare_speed(mi_enc, mi_sentences, mi.test_depths, 1, 1);
  const auto m15 = compare_speed(mi_enc, mi_sentences, mi.test_depths, 15, 1);
  return {b15.mac_speedup <= b1.mac_speedup && m15.mac_speedup <= m1.mac_speedup,
          fmt("recon depth files (lambda 0.1, %zu sentences): MAC speedup batch 1 = %.3fx, "
              "batch 15 = %.3fx (wall %.2fx, %.2fx); MI depth files: %.3fx, %.3fx",
              recon.test_sentences.size(), b1.mac_speedup, b15.mac_speedup, b1.wall_speedup,
              b15.wall_speedup, m1.mac_speedup, m15.mac_speedup),
          0};
}

Outcome criterion8(const MiSetup& mi, bool c5_pass) {
  const auto t0 = Clock::now();
  auto cfg = small_config(12, 32, int(mi.corpus.vocab().size()));
  TrainConfig tc;
  tc.steps = 1200;
  tc.batch_size = 16;
  tc.warmup_steps = 200;
  tc.adam.lr = 3e-4;
  std::vector<double> fixed_acc, adaptive_acc;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    tc.seed = seed;
    Encoder<float> fixed(cfg, Head::kClassifier, seed);
    train_classifier(fixed, mi.corpus.train(), nullptr, tc);
    fixed_acc.push_back(evaluate(fixed, mi.corpus.test(), nullptr, 16).accuracy);
    Encoder<float> adaptive(cfg, Head::kClassifier, seed);
    train_classifier(adaptive, mi.corpus.train(), &mi.train_depths, tc);
    adaptive_acc.push_back(evaluate(adaptive, mi.corpus.test(), &mi.test_depths, 16).accuracy);
    per_seed += fmt(" s%llu %.3f/%.3f", (unsigned long long)seed, fixed_acc.back(), adaptive_acc.back());
  }
  const auto f = RunSummary::of(fixed_acc), a = RunSummary::of(adaptive_acc);
  const double gap = 100.0 * std::abs(a.mean - f.mean);
  std::size_t depth_sum = 0, tokens = 0;
  for (const auto& m : mi.test_depths) {
    tokens += m.size();
    for (int d : m) depth_sum += std::size_t(d);
  }
  const double secs = seconds_since(t0);
  return {gap <= kAccuracyGapPoints && c5_pass && secs < kC8Seconds,
          fmt("fixed/adaptive acc by seed:%s; means %.2f%% vs %.2f%% (var %.2e, %.2e), gap %.2f "
              "points (limit %.1f); criterion 5 %s; MI test ffn ratio %.3f; %.0f s (limit %.0f s)",
              per_seed.c_str(), 100 * f.mean, 100 * a.mean, f.variance, a.variance, gap,
              kAccuracyGapPoints, c5_pass ? "holds" : "FAILS",
              double(depth_sum) / double(12 * tokens), secs, kC8Seconds),
          0};
}

void report(int id, const char* name, const Outcome& o, int& failures) {
  std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

}  // namespace

int main() {
  int failures = 0;
  std::vector<std::uint64_t> first;

  const auto c1 = criterion1();
  report(1, "MI oracle equivalence", c1, failures);
  const auto c2 = criterion2();
  report(2, "full-depth equivalence", c2, failures);
  const auto c3 = criterion3();
  report(3, "copy invariance", c3, failures);
  const auto c4 = criterion4();
  report(4, "gradient check", c4, failures);
  const auto c5 = criterion5();
  report(5, "exact compute savings", c5, failures);
  const auto mlm = run_mlm();
  const auto c6 = criterion6(mlm);
  report(6, "lambda monotonicity", c6, failures);
  first = {c1.fingerprint, c2.fingerprint, c3.fingerprint,
           c4.fingerprint, c5.fingerprint, c6.fingerprint};

  const auto mi = mi_setup();
  report(7, "batch-size effect", criterion7(mlm, mi), failures);
  report(8, "end-to-end accuracy parity", criterion8(mi, c5.pass), failures);
  report(9, "MLM training sanity", criterion9(mlm), failures);

  const std::vector<std::uint64_t> second{criterion1().fingerprint, criterion2().fingerprint,
                                          criterion3().fingerprint, criterion4().fingerprint,
                                          criterion5().fingerprint, run_mlm().fingerprint};
  std::string diff;
  for (std::size_t i = 0; i < first.size(); ++i)
    if (first[i] != second[i]) diff += " " + std::to_string(i + 1);
  report(10, "determinism",
         {first == second,
          diff.empty() ? "criteria 1-6 reproduced bit-identically (6 fingerprints match)"
                       : "fingerprints differ for criteria" + diff,
          0},
         failures);

  std::printf("%d of 10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
