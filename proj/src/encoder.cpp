#include "adt/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace adt {

void EncoderConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("EncoderConfig: " + m); };
  if (n_layers < 1) fail("n_layers must be >= 1");
  if (d_model < 1 || n_heads < 1) fail("d_model and n_heads must be positive");
  if (d_model % n_heads != 0)
    fail("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
         std::to_string(n_heads));
  if (d_ff < 1) fail("d_ff must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (max_len < 1) fail("max_len must be positive");
  if (vocab_size < 1) fail("vocab_size must be positive");
  if (n_labels < 1) fail("n_labels must be positive");
}

void EncoderConfig::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.precision(17);
  os << "n_layers=" << n_layers << "\nd_model=" << d_model << "\nn_heads=" << n_heads
     << "\nd_ff=" << d_ff << "\ndropout=" << dropout << "\nmax_len=" << max_len
     << "\nvocab_size=" << vocab_size << "\nn_labels=" << n_labels << "\n";
}

namespace {

std::map<std::string, std::string> read_kv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error(path + ": malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

EncoderConfig EncoderConfig::load(const std::string& path) {
  const auto kv = read_kv(path);
  auto get = [&](const char* k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw std::runtime_error(path + ": missing key " + k);
    return it->second;
  };
  EncoderConfig c;
  c.n_layers = std::stoi(get("n_layers"));
  c.d_model = std::stoi(get("d_model"));
  c.n_heads = std::stoi(get("n_heads"));
  c.d_ff = std::stoi(get("d_ff"));
  c.dropout = std::stod(get("dropout"));
  c.max_len = std::stoi(get("max_len"));
  c.vocab_size = std::stoi(get("vocab_size"));
  c.n_labels = std::stoi(get("n_labels"));
  c.validate();
  return c;
}

std::string head_name(Head h) { return h == Head::kClassifier ? "cls" : "mlm"; }

Head parse_head(const std::string& s) {
  if (s == "cls") return Head::kClassifier;
  if (s == "mlm") return Head::kMlm;
  throw std::invalid_argument("unknown head '" + s + "' (expected cls or mlm)");
}

void Batch::add(std::span<const int> sentence, std::span<const int> sentence_depths) {
  if (sentence.empty()) throw std::invalid_argument("Batch::add: empty sentence");
  const bool adaptive = !depths.empty() || (tokens.empty() && !sentence_depths.empty());
  if (adaptive != !sentence_depths.empty())
    throw std::invalid_argument("Batch::add: cannot mix sentences with and without depth maps");
  if (!sentence_depths.empty() && sentence_depths.size() != sentence.size())
    throw std::invalid_argument("Batch::add: depth map length " +
                                std::to_string(sentence_depths.size()) + " != sentence length " +
                                std::to_string(sentence.size()));
  const std::size_t begin = tokens.size();
  tokens.insert(tokens.end(), sentence.begin(), sentence.end());
  depths.insert(depths.end(), sentence_depths.begin(), sentence_depths.end());
  spans.push_back({begin, tokens.size()});
}

namespace {

std::string lname(int n, const char* part) { return "layer" + std::to_string(n) + "." + part; }

}  // namespace

template <class Real>
Encoder<Real>::Encoder(const EncoderConfig& cfg, Head head, std::uint64_t seed)
    : cfg_(cfg), head_(head) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const auto d = std::size_t(cfg_.d_model), ff = std::size_t(cfg_.d_ff);
  const auto V = std::size_t(cfg_.vocab_size);
  params_.add("embed.tokens", uniform_init<Real>(V, d, std::sqrt(3.0), rng));
  for (int n = 1; n <= cfg_.n_layers; ++n) {
    for (const char* w : {"wq", "wk", "wv", "wo"})
      params_.add(lname(n, w), xavier_uniform<Real>(d, d, rng));
    for (const char* b : {"bq", "bk", "bv", "bo"}) params_.add(lname(n, b), Tensor<Real>(1, d));
    params_.add(lname(n, "ln1.gain"), Tensor<Real>(1, d, Real(1)));
    params_.add(lname(n, "ln1.bias"), Tensor<Real>(1, d));
    params_.add(lname(n, "ffn.w1"), xavier_uniform<Real>(d, ff, rng));
    params_.add(lname(n, "ffn.b1"), Tensor<Real>(1, ff));
    params_.add(lname(n, "ffn.w2"), xavier_uniform<Real>(ff, d, rng));
    params_.add(lname(n, "ffn.b2"), Tensor<Real>(1, d));
    params_.add(lname(n, "ln2.gain"), Tensor<Real>(1, d, Real(1)));
    params_.add(lname(n, "ln2.bias"), Tensor<Real>(1, d));
  }
  if (head_ == Head::kClassifier) {
    const auto S = std::size_t(cfg_.n_labels);
    params_.add("cls.w", xavier_uniform<Real>(2 * d, S, rng));
    params_.add("cls.b", Tensor<Real>(1, S));
  } else {
    params_.add("mlm.w", uniform_init<Real>(d, V, 0.02 * std::sqrt(3.0), rng));
    params_.add("mlm.b", Tensor<Real>(1, V));
  }

  positions_ = Tensor<Real>(std::size_t(cfg_.max_len), d);
  for (std::size_t pos = 0; pos < positions_.rows(); ++pos)
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -double(i) / double(d));
      positions_(pos, i) = Real(std::sin(double(pos) * freq));
      if (i + 1 < d) positions_(pos, i + 1) = Real(std::cos(double(pos) * freq));
    }
}

template <class Real>
Var<Real> Encoder<Real>::embed(Graph<Real>& g, const Batch& batch) const {
  if (batch.tokens.empty() || batch.spans.empty())
    throw std::invalid_argument("embed: zero-length input");
  Tensor<Real> pos(batch.tokens.size(), std::size_t(cfg_.d_model));
  for (const auto& sp : batch.spans) {
    if (sp.size() == 0) throw std::invalid_argument("embed: zero-length sentence");
    if (sp.size() > std::size_t(cfg_.max_len))
      throw std::invalid_argument("embed: sentence of " + std::to_string(sp.size()) +
                                  " tokens exceeds max_len " + std::to_string(cfg_.max_len));
    for (std::size_t r = sp.begin; r < sp.end; ++r) {
      auto src = positions_.row(r - sp.begin);
      std::copy(src.begin(), src.end(), pos.row(r).begin());
    }
  }
  auto tok = embedding_lookup(g.param(params_.get("embed.tokens")),
                              std::span<const int>(batch.tokens));
  return dropout(add(tok, g.input(std::move(pos))), cfg_.dropout);
}

template <class Real>
Var<Real> Encoder<Real>::layer(Graph<Real>& g, int n, Var<Real> x, const Batch& batch,
                               const std::vector<std::size_t>* active, LayerWork& work) const {
  auto P = [&](const char* part) { return g.param(params_.get(lname(n, part))); };
  const std::size_t rows = batch.tokens.size();

  // Sentence index of every row, for per-query key spans.
  std::vector<std::size_t> owner(rows);
  for (std::size_t s = 0; s < batch.spans.size(); ++s)
    for (std::size_t r = batch.spans[s].begin; r < batch.spans[s].end; ++r) owner[r] = s;

  auto k = linear(x, P("wk"), P("bk"));
  auto v = linear(x, P("wv"), P("bv"));
  work.kv_projections += rows;

  Var<Real> xa = active ? gather_rows(x, std::span<const std::size_t>(*active)) : x;
  const std::size_t n_active = active ? active->size() : rows;
  std::vector<RowSpan> key_spans(n_active);
  for (std::size_t i = 0; i < n_active; ++i)
    key_spans[i] = batch.spans[owner[active ? (*active)[i] : i]];
  work.ffn_applications += n_active;

  auto q = linear(xa, P("wq"), P("bq"));
  auto att = attention(q, k, v, std::span<const RowSpan>(key_spans), std::size_t(cfg_.n_heads),
                       cfg_.dropout);
  auto o = dropout(linear(att, P("wo"), P("bo")), cfg_.dropout);
  auto h1 = layer_norm(add(xa, o), P("ln1.gain"), P("ln1.bias"));
  auto f = linear(relu(linear(h1, P("ffn.w1"), P("ffn.b1"))), P("ffn.w2"), P("ffn.b2"));
  auto h2 = layer_norm(add(h1, dropout(f, cfg_.dropout)), P("ln2.gain"), P("ln2.bias"));

  return active ? overwrite_rows(x, h2, std::span<const std::size_t>(*active)) : h2;
}

template <class Real>
HiddenStates<Real> Encoder<Real>::adaptive_forward(Graph<Real>& g, Var<Real> layer0,
                                                   const Batch& batch) const {
  const std::size_t rows = batch.tokens.size();
  if (batch.depths.size() != rows)
    throw std::invalid_argument("adaptive_forward: depth map length " +
                                std::to_string(batch.depths.size()) + " != token count " +
                                std::to_string(rows));
  if (layer0.value().rows() != rows)
    throw ShapeError("adaptive_forward(layer0)", layer0.value().shape(),
                     Shape{rows, std::size_t(cfg_.d_model)});
  HiddenStates<Real> hs;
  hs.sentence_n_max.assign(batch.spans.size(), 0);
  for (std::size_t s = 0; s < batch.spans.size(); ++s)
    for (std::size_t r = batch.spans[s].begin; r < batch.spans[s].end; ++r) {
      const int d = batch.depths[r];
      if (d < 1 || d > cfg_.n_layers)
        throw std::invalid_argument("adaptive_forward: depth " + std::to_string(d) +
                                    " at row " + std::to_string(r) + " outside [1, " +
                                    std::to_string(cfg_.n_layers) + "]");
      hs.sentence_n_max[s] = std::max(hs.sentence_n_max[s], d);
    }
  const int n_max = *std::max_element(hs.sentence_n_max.begin(), hs.sentence_n_max.end());

  hs.layers.push_back(layer0);
  std::vector<std::size_t> active;
  for (int n = 1; n <= n_max; ++n) {
    active.clear();
    for (std::size_t r = 0; r < rows; ++r)
      if (batch.depths[r] >= n) active.push_back(r);
    hs.active_rows.push_back(active.size());
    hs.layers.push_back(layer(g, n, hs.layers.back(), batch, &active, hs.work));
  }
  hs.work.executed_layers = n_max;
  return hs;
}

template <class Real>
HiddenStates<Real> Encoder<Real>::fixed_forward(Graph<Real>& g, Var<Real> layer0,
                                                const Batch& batch) const {
  HiddenStates<Real> hs;
  hs.sentence_n_max.assign(batch.spans.size(), cfg_.n_layers);
  hs.layers.push_back(layer0);
  for (int n = 1; n <= cfg_.n_layers; ++n) {
    hs.active_rows.push_back(batch.tokens.size());
    hs.layers.push_back(layer(g, n, hs.layers.back(), batch, nullptr, hs.work));
  }
  hs.work.executed_layers = cfg_.n_layers;
  return hs;
}

template <class Real>
HiddenStates<Real> Encoder<Real>::forward(Graph<Real>& g, const Batch& batch) const {
  auto x0 = embed(g, batch);
  return batch.depths.empty() ? fixed_forward(g, x0, batch) : adaptive_forward(g, x0, batch);
}

template <class Real>
Var<Real> Encoder<Real>::classify_logits(Graph<Real>& g, const HiddenStates<Real>& states,
                                         const Batch& batch) const {
  if (head_ != Head::kClassifier) throw std::logic_error("classify: encoder has an MLM head");
  auto top = states.top();
  const std::span<const RowSpan> spans(batch.spans);
  auto v = relu(concat(max_pool(top, spans), mean_pool(top, spans)));
  return linear(v, g.param(params_.get("cls.w")), g.param(params_.get("cls.b")));
}

template <class Real>
Var<Real> Encoder<Real>::classify(Graph<Real>& g, const HiddenStates<Real>& states,
                                  const Batch& batch) const {
  return softmax(classify_logits(g, states, batch));
}

template <class Real>
MlmLoss<Real> Encoder<Real>::mlm_anytime_loss(Graph<Real>& g, const HiddenStates<Real>& states,
                                              std::span<const std::size_t> rows,
                                              std::span<const int> true_tokens) const {
  if (head_ != Head::kMlm) throw std::logic_error("mlm_anytime_loss: encoder has a classifier head");
  if (rows.empty()) throw std::invalid_argument("mlm_anytime_loss: no masked positions");
  if (rows.size() != true_tokens.size())
    throw std::invalid_argument("mlm_anytime_loss: rows and targets differ in length");
  if (states.n_max() != cfg_.n_layers)
    throw std::invalid_argument("mlm_anytime_loss: requires a full-depth forward pass");
  auto w = g.param(params_.get("mlm.w"));
  auto b = g.param(params_.get("mlm.b"));
  const double inv = 1.0 / double(rows.size());
  MlmLoss<Real> out;
  for (int n = 1; n <= cfg_.n_layers; ++n) {
    auto logits = linear(gather_rows(states.layers[std::size_t(n)], rows), w, b);
    auto ce = scale(softmax_cross_entropy(logits, true_tokens), inv);
    out.per_layer.push_back(double(ce.value()[0]));
    out.total = n == 1 ? ce : add(out.total, ce);
  }
  return out;
}

template <class Real>
void Encoder<Real>::save(const std::string& path) const {
  save_checkpoint(params_, path);
  cfg_.save(path + ".cfg");
  std::ofstream os(path + ".cfg", std::ios::app);
  os << "head=" << head_name(head_) << "\n";
}

template <class Real>
Encoder<Real> Encoder<Real>::load(const std::string& path) {
  const auto cfg = EncoderConfig::load(path + ".cfg");
  const auto kv = read_kv(path + ".cfg");
  auto it = kv.find("head");
  if (it == kv.end()) throw std::runtime_error(path + ".cfg: missing key head");
  Encoder enc(cfg, parse_head(it->second), 0);
  load_checkpoint(enc.params_, path);
  return enc;
}

double task_loss(std::span<const double> probs, int gold) {
  if (gold < 0 || std::size_t(gold) >= probs.size())
    throw std::out_of_range("task_loss: gold label " + std::to_string(gold) + " outside " +
                            std::to_string(probs.size()) + " labels");
  return -std::log(probs[std::size_t(gold)]);
}

template class Encoder<float>;
template class Encoder<double>;

}  // namespace adt
