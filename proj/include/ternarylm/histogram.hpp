#pragma once

// Latent weight histograms over [-3 alpha, +3 alpha].

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "ternarylm/quantization.hpp"

namespace ternarylm {

inline constexpr std::size_t kHistogramBins = 101;

struct LayerHistogram {
  std::size_t epoch = 0;
  std::string layer_id;
  double alpha = 0;
  double lo = 0;
  double hi = 0;
  std::vector<std::size_t> counts;

  double bin_width() const { return (hi - lo) / static_cast<double>(counts.size()); }
  double bin_left(std::size_t i) const { return lo + bin_width() * static_cast<double>(i); }
  double bin_right(std::size_t i) const { return lo + bin_width() * static_cast<double>(i + 1); }
  double bin_center(std::size_t i) const { return lo + bin_width() * (static_cast<double>(i) + 0.5); }

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }

  static constexpr const char* csv_header = "epoch,layer,bin_left,bin_right,count";

  /// One CSV line per bin.
  std::string csv_rows() const {
    std::ostringstream os;
    os.precision(9);
    for (std::size_t i = 0; i < counts.size(); ++i) {
      os << epoch << ',' << layer_id << ',' << bin_left(i) << ',' << bin_right(i) << ',' << counts[i] << '\n';
    }
    return os.str();
  }
};

/// Values outside the range land in the edge bins, so counts always sum to
/// the number of weights.
template <class T>
LayerHistogram weight_histogram(std::string layer_id, std::span<const T> weights, double alpha, std::size_t epoch,
                                std::size_t bins = kHistogramBins) {
  LayerHistogram h;
  h.epoch = epoch;
  h.layer_id = std::move(layer_id);
  h.alpha = alpha;
  h.lo = -3.0 * alpha;
  h.hi = 3.0 * alpha;
  h.counts.assign(bins, 0);
  const double width = h.bin_width();
  for (T w : weights) {
    double pos = std::floor((static_cast<double>(w) - h.lo) / width);
    if (!(pos >= 0)) pos = 0;  // also catches NaN
    if (pos > static_cast<double>(bins - 1)) pos = static_cast<double>(bins - 1);
    ++h.counts[static_cast<std::size_t>(pos)];
  }
  return h;
}

template <class T>
LayerHistogram weight_histogram(const TernaryLinear<T>& layer, std::size_t epoch) {
  return weight_histogram<T>(layer.name(), layer.weight().data(), static_cast<double>(layer.alpha()[0]), epoch);
}

/// Fraction of weights in bins whose centers lie within 0.1 alpha of one of
/// {-alpha, 0, +alpha}: a scalar summary of three-mode clustering.
inline double trimodality(const LayerHistogram& h) {
  const double tol = 0.1 * h.alpha;
  std::size_t inside = 0;
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    const double c = h.bin_center(i);
    if (std::abs(c + h.alpha) <= tol || std::abs(c) <= tol || std::abs(c - h.alpha) <= tol) inside += h.counts[i];
  }
  const std::size_t n = h.total();
  return n == 0 ? 0.0 : static_cast<double>(inside) / static_cast<double>(n);
}

}  // namespace ternarylm
