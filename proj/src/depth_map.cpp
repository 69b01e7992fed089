#include "adt/depth_map.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace adt {

void write_depth_file(const std::string& path, std::span<const DepthMap> maps) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& m : maps) {
    for (std::size_t i = 0; i < m.size(); ++i) os << (i ? " " : "") << m[i];
    os << '\n';
  }
}

std::vector<DepthMap> read_depth_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open depth file: " + path);
  std::vector<DepthMap> maps;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    DepthMap m;
    std::string tok;
    while (ls >> tok) {
      std::size_t used = 0;
      int d = 0;
      try {
        d = std::stoi(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size()) throw ParseError(path, line_no, "not an integer depth: " + tok);
      m.push_back(d);
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

void check_alignment(std::span<const DepthMap> maps, std::span<const Document> docs,
                     int max_depth) {
  if (maps.size() != docs.size())
    throw std::invalid_argument("depth file has " + std::to_string(maps.size()) +
                                " sentences, dataset has " + std::to_string(docs.size()) +
                                " (first unmatched sentence index " +
                                std::to_string(std::min(maps.size(), docs.size())) + ")");
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].size() != docs[i].tokens.size())
      throw std::invalid_argument("sentence " + std::to_string(i) + ": depth map length " +
                                  std::to_string(maps[i].size()) + " != token count " +
                                  std::to_string(docs[i].tokens.size()));
    for (int d : maps[i])
      if (d < 1 || d > max_depth)
        throw std::invalid_argument("sentence " + std::to_string(i) + ": depth " +
                                    std::to_string(d) + " outside [1, " +
                                    std::to_string(max_depth) + "]");
  }
}

double average_depth(std::span<const DepthMap> maps) {
  double total = 0;
  std::size_t n = 0;
  for (const auto& m : maps) {
    for (int d : m) total += d;
    n += m.size();
  }
  return n ? total / double(n) : 0.0;
}

std::vector<HistogramBin> histogram(std::span<const double> values, std::size_t n_bins) {
  if (n_bins == 0) throw std::invalid_argument("histogram: n_bins must be positive");
  if (values.empty()) return {};
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn, hi = *mx;
  const double width = (hi - lo) / double(n_bins);
  std::vector<HistogramBin> bins(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    bins[b].lo = lo + width * double(b);
    bins[b].hi = b + 1 == n_bins ? hi : lo + width * double(b + 1);
  }
  for (double v : values) {
    std::size_t b = width > 0 ? std::size_t((v - lo) / width) : 0;
    bins[std::min(b, n_bins - 1)].count++;
  }
  return bins;
}

void write_histogram(const std::string& path, std::span<const HistogramBin> bins) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.precision(17);
  for (const auto& b : bins) os << b.lo << '\t' << b.hi << '\t' << b.count << '\n';
}

std::vector<HistogramBin> depth_histogram(std::span<const DepthMap> maps, int max_depth) {
  std::vector<HistogramBin> bins(std::size_t(std::max(max_depth, 0)));
  for (std::size_t i = 0; i < bins.size(); ++i) {
    bins[i].lo = double(i + 1);
    bins[i].hi = double(i + 1);
  }
  for (const auto& m : maps)
    for (int d : m)
      if (d >= 1 && d <= max_depth) bins[std::size_t(d - 1)].count++;
  return bins;
}

}  // namespace adt
