#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>

#include "adt/bench.hpp"
#include "adt/mi_depth.hpp"
#include "adt/recon_depth.hpp"
#include "adt/synthetic.hpp"
#include "adt/training.hpp"

namespace py = pybind11;
using namespace adt;

namespace {

template <class Real>
py::array_t<Real> to_numpy(const Tensor<Real>& t) {
  py::array_t<Real> out({t.rows(), t.cols()});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Batch make_batch(const std::vector<std::vector<int>>& sentences,
                 const std::optional<std::vector<DepthMap>>& depths) {
  if (depths && depths->size() != sentences.size())
    throw std::invalid_argument("depths must have one map per sentence");
  Batch b;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (depths)
      b.add(sentences[i], (*depths)[i]);
    else
      b.add(sentences[i]);
  }
  return b;
}

py::dict report_dict(const ComputeReport& r) {
  py::dict d;
  d["ffn_applications"] = r.ffn_applications;
  d["kv_projections"] = r.kv_projections;
  d["macs"] = r.macs;
  d["total_tokens"] = r.total_tokens;
  d["batch_size"] = r.batch_size;
  d["n_layers"] = r.n_layers;
  d["batch_n_max"] = r.batch_n_max;
  d["wall_ns"] = r.wall_ns;
  d["wall_min_ns"] = r.wall_min_ns();
  d["wall_median_ns"] = r.wall_median_ns();
  return d;
}

TrainConfig train_config(int steps, std::size_t batch_size, double lr, int warmup,
                         std::uint64_t seed) {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = batch_size;
  c.adam.lr = lr;
  c.warmup_steps = warmup;
  c.seed = seed;
  return c;
}

template <class Real>
void bind_encoder(py::module_& m, const char* name) {
  using E = Encoder<Real>;
  const char* opt_depths = "depths";
  py::class_<E>(m, name)
      .def(py::init([](const EncoderConfig& cfg, const std::string& head, std::uint64_t seed) {
             return E(cfg, parse_head(head), seed);
           }),
           py::arg("config"), py::arg("head") = "cls", py::arg("seed") = 1)
      .def_property_readonly("config", &E::config)
      .def_property_readonly("head", [](const E& e) { return head_name(e.head()); })
      .def_property_readonly("num_parameters", [](const E& e) { return e.params().num_scalars(); })
      .def("parameter", [](const E& e, const std::string& n) { return to_numpy(e.params().get(n).value); })
      .def(
          "hidden_states",
          [](const E& e, const std::vector<int>& tokens, std::optional<DepthMap> depths) {
            Batch b;
            if (depths)
              b.add(tokens, *depths);
            else
              b.add(tokens);
            Graph<Real> g(false, false);
            const auto hs = e.forward(g, b);
            py::list layers;
            for (const auto& v : hs.layers) layers.append(to_numpy(v.value()));
            return layers;
          },
          py::arg("tokens"), py::arg(opt_depths) = py::none(),
          "Per-layer states [layer0, ..., layer n_max] of one sentence (eval mode).")
      .def(
          "classify",
          [](const E& e, const std::vector<std::vector<int>>& sentences,
             std::optional<std::vector<DepthMap>> depths) {
            const Batch b = make_batch(sentences, depths);
            Graph<Real> g(false, false);
            return to_numpy(e.classify(g, e.forward(g, b), b).value());
          },
          py::arg("sentences"), py::arg(opt_depths) = py::none(),
          "Label probabilities, one row per sentence.")
      .def("save", &E::save)
      .def_static("load", &E::load);

  m.def(
      "train_classifier",
      [](E& model, const std::vector<Document>& docs, std::optional<std::vector<DepthMap>> depths,
         int steps, std::size_t batch_size, double lr, int warmup, std::uint64_t seed) {
        py::gil_scoped_release release;
        return train_classifier(model, docs, depths ? &*depths : nullptr,
                                train_config(steps, batch_size, lr, warmup, seed));
      },
      py::arg("model"), py::arg("docs"), py::arg(opt_depths) = py::none(), py::arg("steps") = 300,
      py::arg("batch_size") = 16, py::arg("lr") = 1e-3, py::arg("warmup_steps") = 0,
      py::arg("seed") = 1);
  m.def(
      "train_mlm",
      [](E& model, const std::vector<Document>& docs, int steps, std::size_t batch_size, double lr,
         int warmup, std::uint64_t seed, double mask_rate) {
        MaskingConfig mask;
        mask.rate = mask_rate;
        py::gil_scoped_release release;
        return train_mlm(model, docs, train_config(steps, batch_size, lr, warmup, seed), mask);
      },
      py::arg("model"), py::arg("docs"), py::arg("steps") = 500, py::arg("batch_size") = 16,
      py::arg("lr") = 1e-3, py::arg("warmup_steps") = 0, py::arg("seed") = 1,
      py::arg("mask_rate") = 0.15);
  m.def(
      "evaluate",
      [](const E& model, const std::vector<Document>& docs,
         std::optional<std::vector<DepthMap>> depths, std::size_t batch_size, unsigned threads) {
        EvalResult r;
        {
          py::gil_scoped_release release;
          r = evaluate(model, docs, depths ? &*depths : nullptr, batch_size, threads);
        }
        py::dict d;
        d["accuracy"] = r.accuracy;
        d["predictions"] = r.predictions;
        d["ffn_applications"] = r.work.ffn_applications;
        d["kv_projections"] = r.work.kv_projections;
        d["macs"] = r.macs;
        d["batch_n_max"] = r.batch_n_max;
        return d;
      },
      py::arg("model"), py::arg("docs"), py::arg(opt_depths) = py::none(),
      py::arg("batch_size") = 1, py::arg("threads") = 1);
  m.def("layer_losses",
        [](const E& mlm, const std::vector<int>& s, std::size_t pos) { return layer_losses(mlm, s, pos); },
        py::arg("mlm"), py::arg("sentence"), py::arg("position"));
  m.def(
      "estimate_corpus_depths",
      [](const E& mlm, const std::vector<Document>& docs, double lambda, unsigned threads) {
        ReconConfig c;
        c.lambda = lambda;
        c.threads = threads;
        c.validate();
        py::gil_scoped_release release;
        return estimate_corpus_depths(mlm, docs, c);
      },
      py::arg("mlm"), py::arg("docs"), py::arg("lambda_") = 0.1, py::arg("threads") = 1);
  m.def(
      "measure_compute",
      [](const E& model, const std::vector<std::vector<int>>& sentences,
         std::optional<std::vector<DepthMap>> depths, std::size_t batch_size, int reps) {
        return report_dict(measure_compute(model, sentences, depths ? &*depths : nullptr, batch_size, reps));
      },
      py::arg("model"), py::arg("sentences"), py::arg(opt_depths) = py::none(),
      py::arg("batch_size") = 1, py::arg("repetitions") = 5);
}

}  // namespace

PYBIND11_MODULE(adaptive_depth, m) {
  m.doc() = "Depth-adaptive Transformer text classification";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

  // corpus
  py::class_<TokenizerConfig>(m, "TokenizerConfig")
      .def(py::init<>())
      .def_readwrite("max_len", &TokenizerConfig::max_len)
      .def_readwrite("lowercase", &TokenizerConfig::lowercase)
      .def_readwrite("min_freq", &TokenizerConfig::min_freq)
      .def_static("from_file", &TokenizerConfig::from_file);
  m.def("tokenize", &tokenize, py::arg("text"), py::arg("lowercase") = true);

  py::class_<Document>(m, "Document")
      .def_readonly("tokens", &Document::tokens)
      .def_readonly("label", &Document::label)
      .def_readonly("raw_text", &Document::raw_text);

  py::class_<Corpus>(m, "Corpus")
      .def_static("load", &Corpus::load, py::arg("train_path"), py::arg("test_path") = py::none(),
                  py::arg("config") = TokenizerConfig{})
      .def_static(
          "from_lines",
          [](const std::vector<std::string>& train, const std::vector<std::string>& test,
             const TokenizerConfig& cfg) { return Corpus::from_lines(train, test, cfg); },
          py::arg("train_lines"), py::arg("test_lines") = std::vector<std::string>{},
          py::arg("config") = TokenizerConfig{})
      .def_property_readonly("train", &Corpus::train)
      .def_property_readonly("test", &Corpus::test)
      .def_property_readonly("labels", &Corpus::labels)
      .def_property_readonly("vocab_size", [](const Corpus& c) { return c.vocab().size(); })
      .def("word", [](const Corpus& c, int id) { return c.vocab().word(id); })
      .def("word_id", [](const Corpus& c, const std::string& w) { return c.vocab().id(w); })
      .def("label_id", &Corpus::label_id)
      .def("encode", &Corpus::encode);

  py::class_<CorpusStats>(m, "CorpusStats")
      .def_readonly("n_docs", &CorpusStats::n_docs)
      .def_readonly("n_labels", &CorpusStats::n_labels)
      .def_readonly("n_words", &CorpusStats::n_words)
      .def_readonly("doc_freq", &CorpusStats::doc_freq)
      .def_readonly("n_docs_with_label", &CorpusStats::n_docs_with_label)
      .def("joint_count", &CorpusStats::joint_count);
  m.def("collect_stats", [](const Corpus& c) { return collect_stats(c); });

  // mi_depth
  m.def("mi_score", &mi_score, py::arg("stats"), py::arg("word"), py::arg("smoothing") = kDefaultSmoothing);
  m.def("log_scale", &log_scale);
  m.def("bin_depths", [](const std::vector<double>& v, int n) { return bin_depths(v, n); },
        py::arg("mi_log"), py::arg("n_bins"));
  py::class_<MiEntry>(m, "MiEntry")
      .def_readonly("word", &MiEntry::word)
      .def_readonly("mi", &MiEntry::mi)
      .def_readonly("mi_log", &MiEntry::mi_log)
      .def_readonly("depth", &MiEntry::depth);
  py::class_<MiTable>(m, "MiTable")
      .def_static("build", &MiTable::build, py::arg("stats"), py::arg("smoothing") = kDefaultSmoothing,
                  py::arg("n_bins") = 12)
      .def_property_readonly("entries", &MiTable::entries)
      .def_property_readonly("n_bins", &MiTable::n_bins)
      .def("depth", &MiTable::depth)
      .def("sentence_depths", [](const MiTable& t, const std::vector<int>& s) { return sentence_depths(t, s); })
      .def("corpus_depths", [](const MiTable& t, const std::vector<Document>& d) { return corpus_depths(t, d); })
      .def("save", [](const MiTable& t, const std::string& path, const Corpus& c) { t.save(path, c.vocab()); });

  // depth maps
  m.def("write_depth_file", [](const std::string& p, const std::vector<DepthMap>& maps) { write_depth_file(p, maps); });
  m.def("read_depth_file", &read_depth_file);
  m.def("average_depth", [](const std::vector<DepthMap>& maps) { return average_depth(maps); });
  m.def("select_depth", [](const std::vector<double>& p, double lambda) { return select_depth(p, lambda); },
        py::arg("profile"), py::arg("lambda_"));
  m.def(
      "depths_with_mean",
      [](std::size_t length, double mean, int max_depth, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        return depths_with_mean(length, mean, max_depth, rng);
      },
      py::arg("length"), py::arg("mean"), py::arg("max_depth"), py::arg("seed") = 1);
  m.def(
      "make_sentiment_corpus",
      [](std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
        auto c = make_sentiment_corpus(n_train, n_test, seed);
        return py::make_tuple(c.train, c.test);
      },
      py::arg("n_train"), py::arg("n_test"), py::arg("seed") = 1,
      "Returns (train_lines, test_lines) in label<TAB>text form.");

  // encoder
  py::class_<EncoderConfig>(m, "EncoderConfig")
      .def(py::init<>())
      .def_readwrite("n_layers", &EncoderConfig::n_layers)
      .def_readwrite("d_model", &EncoderConfig::d_model)
      .def_readwrite("n_heads", &EncoderConfig::n_heads)
      .def_readwrite("d_ff", &EncoderConfig::d_ff)
      .def_readwrite("dropout", &EncoderConfig::dropout)
      .def_readwrite("max_len", &EncoderConfig::max_len)
      .def_readwrite("vocab_size", &EncoderConfig::vocab_size)
      .def_readwrite("n_labels", &EncoderConfig::n_labels)
      .def("validate", &EncoderConfig::validate);
  m.def("task_loss", [](const std::vector<double>& p, int gold) { return task_loss(p, gold); });

  bind_encoder<double>(m, "Encoder");
  bind_encoder<float>(m, "EncoderF32");
}
