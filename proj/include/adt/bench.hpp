#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adt/depth_map.hpp"
#include "adt/encoder.hpp"

namespace adt {

/// Exact work counts and wall-clock for repeated inference over a sentence set.
struct ComputeReport {
  std::size_t ffn_applications = 0;
  std::size_t kv_projections = 0;
  std::uint64_t macs = 0;
  std::size_t total_tokens = 0;
  std::size_t batch_size = 1;
  int n_layers = 0;
  std::vector<int> batch_n_max;
  std::vector<double> wall_ns;  // one entry per repetition (whole sentence set)

  double wall_min_ns() const;
  double wall_median_ns() const;
};

/// Runs inference (encoder + classifier head when present) over `sentences`
/// in consecutive batches, `repetitions` times. Counts come from the first
/// repetition; all repetitions execute identical work.
template <class Real>
ComputeReport measure_compute(const Encoder<Real>& model, std::span<const std::vector<int>> sentences,
                              const std::vector<DepthMap>* depths, std::size_t batch_size,
                              int repetitions = 5);

struct SpeedupRow {
  std::size_t batch_size = 1;
  double ffn_ratio = 0;      // adaptive / fixed ffn_applications
  double mac_speedup = 0;    // fixed macs / adaptive macs
  double wall_speedup = 0;   // fixed / adaptive median wall-clock
  ComputeReport fixed;
  ComputeReport adaptive;
};

template <class Real>
SpeedupRow compare_speed(const Encoder<Real>& model, std::span<const std::vector<int>> sentences,
                         const std::vector<DepthMap>& depths, std::size_t batch_size,
                         int repetitions = 5);

/// Depths in [1, max_depth] whose total is exactly round(mean * length);
/// at least one position gets max_depth when length allows.
DepthMap depths_with_mean(std::size_t length, double mean, int max_depth, std::mt19937_64& rng);

/// Header + one row per batch size.
void write_speed_table(const std::string& path, std::span<const SpeedupRow> rows);

}  // namespace adt
