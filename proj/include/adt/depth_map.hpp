#pragma once

#include <span>
#include <string>
#include <vector>

#include "adt/corpus.hpp"

namespace adt {

/// Per-token layer counts for one sentence, each in [1, N].
using DepthMap = std::vector<int>;

/// One line per sentence, space-separated integers.
void write_depth_file(const std::string& path, std::span<const DepthMap> maps);
std::vector<DepthMap> read_depth_file(const std::string& path);

/// Throws std::invalid_argument naming the first sentence whose map is
/// missing, has the wrong length, or holds a depth outside [1, max_depth].
void check_alignment(std::span<const DepthMap> maps, std::span<const Document> docs,
                     int max_depth);

/// Token-weighted mean depth.
double average_depth(std::span<const DepthMap> maps);

struct HistogramBin {
  double lo = 0;
  double hi = 0;
  std::size_t count = 0;
};

/// Uniform-width histogram over [min, max] of the values.
std::vector<HistogramBin> histogram(std::span<const double> values, std::size_t n_bins);
void write_histogram(const std::string& path, std::span<const HistogramBin> bins);

/// Histogram of depth values 1..max_depth (one bin per depth).
std::vector<HistogramBin> depth_histogram(std::span<const DepthMap> maps, int max_depth);

}  // namespace adt
