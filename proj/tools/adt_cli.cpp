// adt: command-line driver for depth estimation, training, evaluation and
// compute benchmarks.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "adt/bench.hpp"
#include "adt/mi_depth.hpp"
#include "adt/recon_depth.hpp"
#include "adt/synthetic.hpp"
#include "adt/training.hpp"

using namespace adt;
namespace fs = std::filesystem;

namespace {

struct DataArgs {
  std::string train;
  std::string test;
  std::string tokenizer_config;

  void add_to(CLI::App* app, bool test_required = false) {
    app->add_option("--train", train, "Training file (label<TAB>text)")->required()->check(CLI::ExistingFile);
    auto* t = app->add_option("--test", test, "Test file (label<TAB>text)")->check(CLI::ExistingFile);
    if (test_required) t->required();
    app->add_option("--tokenizer-config", tokenizer_config, "key=value tokenizer settings")
        ->check(CLI::ExistingFile);
  }

  Corpus load() const {
    const auto cfg = tokenizer_config.empty() ? TokenizerConfig{} : TokenizerConfig::from_file(tokenizer_config);
    return Corpus::load(train, test.empty() ? std::nullopt : std::optional<std::string>(test), cfg);
  }
};

struct Common {
  std::uint64_t seed = 1;
  std::string precision = "f32";
  std::size_t batch_size = 16;

  void add_to(CLI::App* app, std::size_t default_batch) {
    batch_size = default_batch;
    app->add_option("--seed", seed, "Random seed")->capture_default_str();
    app->add_option("--precision", precision, "Floating point precision")
        ->check(CLI::IsMember({"f32", "f64"}))
        ->capture_default_str();
    app->add_option("--batch-size", batch_size, "Sentences per batch")->capture_default_str();
  }
};

// Calls fn.template operator()<Real>() for the selected precision.
template <class Fn>
void with_precision(const std::string& p, Fn&& fn) {
  if (p == "f64")
    fn.template operator()<double>();
  else
    fn.template operator()<float>();
}

std::vector<DepthMap> load_depths(const std::string& path, std::span<const Document> docs, int n) {
  auto maps = read_depth_file(path);
  check_alignment(maps, docs, n);
  return maps;
}

void print_report(const char* label, const ComputeReport& r) {
  std::printf("%s\tffn_applications=%zu\tkv_projections=%zu\tmacs=%llu\ttokens=%zu\t"
              "wall_min_ms=%.3f\twall_median_ms=%.3f\n",
              label, r.ffn_applications, r.kv_projections, (unsigned long long)r.macs,
              r.total_tokens, r.wall_min_ns() / 1e6, r.wall_median_ns() / 1e6);
}

std::vector<std::vector<int>> sentences_of(std::span<const Document> docs) {
  std::vector<std::vector<int>> out;
  for (const auto& d : docs) out.push_back(d.tokens);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth-adaptive Transformer text classification"};
  app.require_subcommand(1);

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Write the synthetic two-label corpus");
  std::string synth_out;
  std::size_t n_train = 400, n_test = 200;
  std::uint64_t synth_seed = 1;
  synth->add_option("--out-dir", synth_out, "Output directory")->required();
  synth->add_option("--n-train", n_train)->capture_default_str();
  synth->add_option("--n-test", n_test)->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->callback([&] {
    write_synthetic_corpus(make_sentiment_corpus(n_train, n_test, synth_seed), synth_out);
    std::printf("wrote %s/train.tsv and %s/test.tsv\n", synth_out.c_str(), synth_out.c_str());
  });

  // depths -----------------------------------------------------------------
  auto* depths = app.add_subcommand("depths", "Estimate per-token depths");
  depths->require_subcommand(1);
  std::string depth_out;

  auto* dmi = depths->add_subcommand("mi", "Mutual-information depths from the training split");
  DataArgs mi_data;
  double smoothing = kDefaultSmoothing;
  int n_bins = 12;
  mi_data.add_to(dmi);
  dmi->add_option("--smoothing", smoothing)->capture_default_str();
  dmi->add_option("--n-layers", n_bins, "Number of depth bins N")->capture_default_str();
  dmi->add_option("--out-dir", depth_out)->required();
  dmi->callback([&] {
    const auto corpus = mi_data.load();
    const auto table = MiTable::build(collect_stats(corpus), smoothing, n_bins);
    fs::create_directories(depth_out);
    const fs::path out(depth_out);
    table.save((out / "mi_table.tsv").string(), corpus.vocab());
    const auto train_maps = corpus_depths(table, corpus.train());
    write_depth_file((out / "train.depths").string(), train_maps);
    std::vector<double> logs;
    for (const auto& e : table.entries()) logs.push_back(e.mi_log);
    if (!logs.empty()) write_histogram((out / "mi_log_hist.tsv").string(), histogram(logs, std::size_t(n_bins)));
    std::printf("train\tavg_depth=%.4f\tsentences=%zu\n", average_depth(train_maps), train_maps.size());
    if (!corpus.test().empty()) {
      const auto test_maps = corpus_depths(table, corpus.test());
      write_depth_file((out / "test.depths").string(), test_maps);
      write_histogram((out / "test_depth_hist.tsv").string(), depth_histogram(test_maps, n_bins));
      std::printf("test\tavg_depth=%.4f\tsentences=%zu\n", average_depth(test_maps), test_maps.size());
    }
  });

  auto* drecon = depths->add_subcommand("recon", "Reconstruction-loss depths from an anytime MLM");
  DataArgs recon_data;
  std::string mlm_path;
  ReconConfig recon_cfg;
  recon_data.add_to(drecon);
  drecon->add_option("--mlm", mlm_path, "MLM checkpoint")->required();
  drecon->add_option("--lambda", recon_cfg.lambda)->capture_default_str();
  drecon->add_option("--threads", recon_cfg.threads)->capture_default_str();
  drecon->add_option("--max-rows-per-pass", recon_cfg.max_rows_per_pass)->capture_default_str();
  drecon->add_option("--out-dir", depth_out)->required();
  std::string recon_precision = "f32";
  drecon->add_option("--precision", recon_precision)->check(CLI::IsMember({"f32", "f64"}));
  drecon->callback([&] {
    if (!fs::exists(mlm_path)) throw std::runtime_error("MLM checkpoint not found: " + mlm_path);
    recon_cfg.validate();
    const auto corpus = recon_data.load();
    fs::create_directories(depth_out);
    const fs::path out(depth_out);
    std::vector<LambdaSummaryRow> rows;
    with_precision(recon_precision, [&]<class R>() {
      const auto mlm = Encoder<R>::load(mlm_path);
      const int N = mlm.config().n_layers;
      auto run = [&](std::span<const Document> docs, const char* name) {
        const auto maps = estimate_corpus_depths(mlm, docs, recon_cfg);
        write_depth_file((out / (std::string(name) + ".depths")).string(), maps);
        write_histogram((out / (std::string(name) + "_depth_hist.tsv")).string(), depth_histogram(maps, N));
        std::printf("%s\tavg_depth=%.4f\tsentences=%zu\n", name, average_depth(maps), maps.size());
        return LambdaSummaryRow{recon_cfg.lambda, average_depth(maps), maps.size()};
      };
      run(corpus.train(), "train");
      if (!corpus.test().empty()) rows.push_back(run(corpus.test(), "test"));
    });
    if (!rows.empty()) write_lambda_summary((out / "summary.tsv").string(), rows);
  });

  // train ------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train an MLM or a classifier");
  std::string task;
  DataArgs train_data;
  Common train_common;
  EncoderConfig enc_cfg;
  TrainConfig train_cfg;
  MaskingConfig masking;
  std::string model_out, depth_file, log_path;
  train->add_option("task", task, "mlm | cls")->required()->check(CLI::IsMember({"mlm", "cls"}));
  train_data.add_to(train);
  train_common.add_to(train, 16);
  train->add_option("--n-layers", enc_cfg.n_layers)->capture_default_str();
  train->add_option("--d-model", enc_cfg.d_model)->capture_default_str();
  train->add_option("--n-heads", enc_cfg.n_heads)->capture_default_str();
  train->add_option("--d-ff", enc_cfg.d_ff)->capture_default_str();
  train->add_option("--dropout", enc_cfg.dropout)->capture_default_str();
  train->add_option("--max-len", enc_cfg.max_len)->capture_default_str();
  train->add_option("--steps", train_cfg.steps)->capture_default_str();
  train->add_option("--lr", train_cfg.adam.lr)->capture_default_str();
  train->add_option("--clip", train_cfg.adam.clip)->capture_default_str();
  train->add_option("--warmup-steps", train_cfg.warmup_steps)->capture_default_str();
  train->add_option("--mask-rate", masking.rate)->capture_default_str();
  train->add_option("--depths", depth_file, "Depth file aligned with --train (cls only)");
  train->add_option("--out", model_out, "Checkpoint path")->required();
  train->add_option("--log", log_path, "step<TAB>loss log (default: stdout)");
  train->callback([&] {
    const auto corpus = train_data.load();
    enc_cfg.vocab_size = int(corpus.vocab().size());
    enc_cfg.n_labels = int(corpus.num_labels());
    train_cfg.batch_size = train_common.batch_size;
    train_cfg.seed = train_common.seed;
    std::ofstream log_file;
    if (!log_path.empty()) log_file.open(log_path);
    std::ostream& log = log_path.empty() ? std::cout : log_file;
    log << "step\tloss\n";
    const StepCallback cb = [&](int step, double loss) { log << step << '\t' << loss << '\n'; };
    with_precision(train_common.precision, [&]<class R>() {
      if (task == "mlm") {
        Encoder<R> model(enc_cfg, Head::kMlm, train_common.seed);
        train_mlm(model, corpus.train(), train_cfg, masking, cb);
        model.save(model_out);
      } else {
        Encoder<R> model(enc_cfg, Head::kClassifier, train_common.seed);
        std::vector<DepthMap> maps;
        if (!depth_file.empty()) maps = load_depths(depth_file, corpus.train(), enc_cfg.n_layers);
        train_classifier(model, corpus.train(), depth_file.empty() ? nullptr : &maps, train_cfg, cb);
        model.save(model_out);
      }
    });
  });

  // eval -------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Accuracy and compute report on the test split");
  DataArgs eval_data;
  Common eval_common;
  std::string eval_model, eval_depths;
  unsigned eval_threads = 1;
  int eval_reps = 5;
  eval_data.add_to(eval, true);
  eval_common.add_to(eval, 1);
  eval->add_option("--model", eval_model, "Classifier checkpoint")->required();
  eval->add_option("--depths", eval_depths, "Depth file aligned with --test");
  eval->add_option("--threads", eval_threads)->capture_default_str();
  eval->add_option("--reps", eval_reps, "Wall-clock repetitions")->capture_default_str();
  eval->callback([&] {
    const auto corpus = eval_data.load();
    with_precision(eval_common.precision, [&]<class R>() {
      const auto model = Encoder<R>::load(eval_model);
      std::vector<DepthMap> maps;
      if (!eval_depths.empty()) maps = load_depths(eval_depths, corpus.test(), model.config().n_layers);
      const auto* dp = eval_depths.empty() ? nullptr : &maps;
      const auto res = evaluate(model, corpus.test(), dp, eval_common.batch_size, eval_threads);
      std::printf("accuracy\t%.6f\n", res.accuracy);
      const auto sents = sentences_of(corpus.test());
      const auto rep = measure_compute(model, sents, dp, eval_common.batch_size, eval_reps);
      print_report(dp ? "adaptive" : "fixed", rep);
      if (dp) {
        const auto base = measure_compute(model, sents, nullptr, eval_common.batch_size, eval_reps);
        print_report("fixed", base);
        std::printf("ffn_ratio\t%.6f\n", double(rep.ffn_applications) / double(base.ffn_applications));
      }
    });
  });

  // sweep-lambda -------------------------------------------------------------
  auto* sweep = app.add_subcommand("sweep-lambda", "Average depth, accuracy and speed per lambda");
  DataArgs sweep_data;
  Common sweep_common;
  std::string sweep_mlm, sweep_out = "lambda_sweep.tsv";
  std::vector<double> lambdas{0.0, 0.05, 0.1, 0.15, 0.2};
  TrainConfig sweep_train;
  sweep_train.steps = 0;
  EncoderConfig sweep_enc;
  sweep_data.add_to(sweep, true);
  sweep_common.add_to(sweep, 16);
  sweep->add_option("--mlm", sweep_mlm, "MLM checkpoint")->required()->check(CLI::ExistingFile);
  sweep->add_option("--lambdas", lambdas)->delimiter(',')->capture_default_str();
  sweep->add_option("--cls-steps", sweep_train.steps, "Classifier steps per lambda (0: depth only)")
      ->capture_default_str();
  sweep->add_option("--lr", sweep_train.adam.lr)->capture_default_str();
  sweep->add_option("--warmup-steps", sweep_train.warmup_steps)->capture_default_str();
  sweep->add_option("--d-model", sweep_enc.d_model)->capture_default_str();
  sweep->add_option("--n-heads", sweep_enc.n_heads)->capture_default_str();
  sweep->add_option("--d-ff", sweep_enc.d_ff)->capture_default_str();
  sweep->add_option("--out", sweep_out)->capture_default_str();
  sweep->callback([&] {
    const auto corpus = sweep_data.load();
    with_precision(sweep_common.precision, [&]<class R>() {
      const auto mlm = Encoder<R>::load(sweep_mlm);
      const auto train_profiles = corpus_profiles(mlm, corpus.train());
      const auto test_profiles = corpus_profiles(mlm, corpus.test());
      std::ofstream os(sweep_out);
      os << "lambda\tavg_depth\tn_sentences\taccuracy\tffn_ratio\tmac_speedup\n";
      for (double lambda : lambdas) {
        const auto test_maps = depths_from_profiles(test_profiles, lambda);
        os << lambda << '\t' << average_depth(test_maps) << '\t' << test_maps.size();
        if (sweep_train.steps > 0) {
          auto cfg = sweep_enc;
          cfg.n_layers = mlm.config().n_layers;
          cfg.max_len = mlm.config().max_len;
          cfg.vocab_size = int(corpus.vocab().size());
          cfg.n_labels = int(corpus.num_labels());
          sweep_train.seed = sweep_common.seed;
          sweep_train.batch_size = sweep_common.batch_size;
          const auto train_maps = depths_from_profiles(train_profiles, lambda);
          Encoder<R> cls(cfg, Head::kClassifier, sweep_common.seed);
          train_classifier(cls, corpus.train(), &train_maps, sweep_train);
          const auto res = evaluate(cls, corpus.test(), &test_maps, 1);
          const auto sents = sentences_of(corpus.test());
          const auto row = compare_speed(cls, sents, test_maps, 1, 1);
          os << '\t' << res.accuracy << '\t' << row.ffn_ratio << '\t' << row.mac_speedup;
        } else {
          os << "\t\t\t";
        }
        os << '\n';
        std::printf("lambda %.3f avg_depth %.4f\n", lambda, average_depth(test_maps));
      }
    });
  });

  // bench ------------------------------------------------------------------
  auto* bench = app.add_subcommand("bench", "Fixed vs adaptive compute across batch sizes");
  DataArgs bench_data;
  Common bench_common;
  std::string bench_model, bench_depths, bench_out = "speed.tsv";
  std::vector<std::size_t> batch_sizes{1, 2, 4, 8, 15};
  int bench_reps = 5;
  std::size_t synth_len = 0;
  double mean_depth = 3.0;
  bench_data.add_to(bench);
  bench_common.add_to(bench, 1);
  bench->add_option("--model", bench_model, "Classifier checkpoint (random init when omitted)");
  bench->add_option("--depths", bench_depths, "Depth file aligned with --test");
  bench->add_option("--batch-sizes", batch_sizes)->delimiter(',')->capture_default_str();
  bench->add_option("--reps", bench_reps)->capture_default_str();
  bench->add_option("--synthetic-length", synth_len,
                    "Bench one random sentence of this length instead of --test");
  bench->add_option("--mean-depth", mean_depth, "Mean depth for --synthetic-length")->capture_default_str();
  bench->add_option("--d-model", sweep_enc.d_model)->capture_default_str();
  bench->add_option("--out", bench_out)->capture_default_str();
  bench->callback([&] {
    const auto corpus = bench_data.load();
    with_precision(bench_common.precision, [&]<class R>() {
      EncoderConfig cfg = sweep_enc;
      cfg.vocab_size = int(corpus.vocab().size());
      cfg.n_labels = int(corpus.num_labels());
      cfg.max_len = std::max<int>(cfg.max_len, int(synth_len));
      auto model = bench_model.empty() ? Encoder<R>(cfg, Head::kClassifier, bench_common.seed)
                                       : Encoder<R>::load(bench_model);
      std::vector<std::vector<int>> sents;
      std::vector<DepthMap> maps;
      if (synth_len > 0) {
        std::mt19937_64 rng(bench_common.seed);
        std::vector<int> s(synth_len);
        for (auto& t : s) t = Vocab::kNumSpecial + int(rng() % (corpus.vocab().size() - Vocab::kNumSpecial));
        sents.push_back(s);
        maps.push_back(depths_with_mean(synth_len, mean_depth, model.config().n_layers, rng));
      } else {
        if (bench_depths.empty()) throw std::runtime_error("bench: --depths or --synthetic-length required");
        maps = load_depths(bench_depths, corpus.test(), model.config().n_layers);
        sents = sentences_of(corpus.test());
      }
      std::vector<SpeedupRow> rows;
      for (std::size_t b : batch_sizes) {
        rows.push_back(compare_speed(model, sents, maps, b, bench_reps));
        std::printf("batch %zu\tffn_ratio %.4f\tmac_speedup %.3f\twall_speedup %.3f\n", b,
                    rows.back().ffn_ratio, rows.back().mac_speedup, rows.back().wall_speedup);
      }
      write_speed_table(bench_out, rows);
    });
  });

  // export-hist --------------------------------------------------------------
  auto* hist = app.add_subcommand("export-hist", "Histogram TSV of a depth file or an MI table");
  std::string hist_depths, hist_mi, hist_out;
  int hist_n = 12;
  hist->add_option("--depths", hist_depths, "Depth file")->check(CLI::ExistingFile);
  hist->add_option("--mi-table", hist_mi, "MI table (word mi mi_log depth)")->check(CLI::ExistingFile);
  hist->add_option("--bins", hist_n, "Bins (max depth for --depths)")->capture_default_str();
  hist->add_option("--out", hist_out)->required();
  hist->callback([&] {
    if (hist_depths.empty() == hist_mi.empty())
      throw std::runtime_error("export-hist: give exactly one of --depths or --mi-table");
    if (!hist_depths.empty()) {
      write_histogram(hist_out, depth_histogram(read_depth_file(hist_depths), hist_n));
      return;
    }
    std::ifstream in(hist_mi);
    std::vector<double> logs;
    std::string word;
    double mi = 0, mi_log = 0;
    int d = 0;
    while (in >> word >> mi >> mi_log >> d) logs.push_back(mi_log);
    if (logs.empty()) throw std::runtime_error("export-hist: no rows in " + hist_mi);
    write_histogram(hist_out, histogram(logs, std::size_t(hist_n)));
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
