#include "adt/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

namespace adt {

double ComputeReport::wall_min_ns() const {
  return wall_ns.empty() ? 0.0 : *std::min_element(wall_ns.begin(), wall_ns.end());
}

double ComputeReport::wall_median_ns() const {
  if (wall_ns.empty()) return 0.0;
  auto v = wall_ns;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <class Real>
ComputeReport measure_compute(const Encoder<Real>& model, std::span<const std::vector<int>> sentences,
                              const std::vector<DepthMap>* depths, std::size_t batch_size,
                              int repetitions) {
  if (depths && depths->size() != sentences.size())
    throw std::invalid_argument("measure_compute: depth maps do not match sentences");
  batch_size = std::max<std::size_t>(1, batch_size);
  ComputeReport rep;
  rep.batch_size = batch_size;
  rep.n_layers = model.config().n_layers;
  for (const auto& s : sentences) rep.total_tokens += s.size();

  std::vector<Batch> batches;
  for (std::size_t i = 0; i < sentences.size(); i += batch_size) {
    Batch b;
    for (std::size_t j = i; j < std::min(sentences.size(), i + batch_size); ++j) {
      if (depths)
        b.add(sentences[j], (*depths)[j]);
      else
        b.add(sentences[j]);
    }
    batches.push_back(std::move(b));
  }

  for (int r = 0; r < std::max(1, repetitions); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& b : batches) {
      Graph<Real> g(false, false);
      auto states = model.forward(g, b);
      if (model.head() == Head::kClassifier) model.classify_logits(g, states, b);
      if (r == 0) {
        rep.ffn_applications += states.work.ffn_applications;
        rep.kv_projections += states.work.kv_projections;
        rep.macs += g.macs;
        rep.batch_n_max.push_back(states.n_max());
      }
    }
    const auto t1 = std::chrono::steady_clock::now();
    rep.wall_ns.push_back(double(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
  }
  return rep;
}

template <class Real>
SpeedupRow compare_speed(const Encoder<Real>& model, std::span<const std::vector<int>> sentences,
                         const std::vector<DepthMap>& depths, std::size_t batch_size,
                         int repetitions) {
  SpeedupRow row;
  row.batch_size = batch_size;
  row.fixed = measure_compute(model, sentences, nullptr, batch_size, repetitions);
  row.adaptive = measure_compute(model, sentences, &depths, batch_size, repetitions);
  row.ffn_ratio = double(row.adaptive.ffn_applications) / double(row.fixed.ffn_applications);
  row.mac_speedup = double(row.fixed.macs) / double(row.adaptive.macs);
  row.wall_speedup = row.fixed.wall_median_ns() / row.adaptive.wall_median_ns();
  return row;
}

DepthMap depths_with_mean(std::size_t length, double mean, int max_depth, std::mt19937_64& rng) {
  if (length == 0) return {};
  if (max_depth < 1 || mean < 1.0 || mean > double(max_depth))
    throw std::invalid_argument("depths_with_mean: mean must lie in [1, max_depth]");
  const auto target = std::size_t(std::llround(mean * double(length)));
  DepthMap m(length, 1);
  std::size_t total = length;
  if (total + std::size_t(max_depth - 1) <= target) {
    m[std::uniform_int_distribution<std::size_t>(0, length - 1)(rng)] = max_depth;
    total += std::size_t(max_depth - 1);
  }
  std::uniform_int_distribution<std::size_t> pick(0, length - 1);
  while (total < target) {
    const std::size_t i = pick(rng);
    if (m[i] < max_depth) {
      ++m[i];
      ++total;
    }
  }
  return m;
}

void write_speed_table(const std::string& path, std::span<const SpeedupRow> rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "batch_size\tffn_fixed\tffn_adaptive\tffn_ratio\tkv_fixed\tkv_adaptive\tmac_speedup"
        "\twall_fixed_min_ns\twall_fixed_median_ns\twall_adaptive_min_ns\twall_adaptive_median_ns"
        "\twall_speedup\n";
  for (const auto& r : rows)
    os << r.batch_size << '\t' << r.fixed.ffn_applications << '\t' << r.adaptive.ffn_applications
       << '\t' << r.ffn_ratio << '\t' << r.fixed.kv_projections << '\t'
       << r.adaptive.kv_projections << '\t' << r.mac_speedup << '\t' << r.fixed.wall_min_ns()
       << '\t' << r.fixed.wall_median_ns() << '\t' << r.adaptive.wall_min_ns() << '\t'
       << r.adaptive.wall_median_ns() << '\t' << r.wall_speedup << '\n';
}

template ComputeReport measure_compute(const Encoder<float>&, std::span<const std::vector<int>>,
                                       const std::vector<DepthMap>*, std::size_t, int);
template ComputeReport measure_compute(const Encoder<double>&, std::span<const std::vector<int>>,
                                       const std::vector<DepthMap>*, std::size_t, int);
template SpeedupRow compare_speed(const Encoder<float>&, std::span<const std::vector<int>>,
                                  const std::vector<DepthMap>&, std::size_t, int);
template SpeedupRow compare_speed(const Encoder<double>&, std::span<const std::vector<int>>,
                                  const std::vector<DepthMap>&, std::size_t, int);

}  // namespace adt
