#pragma once

#include <span>
#include <vector>

namespace odgen {

/// Histogram over log2-spaced bins with a dedicated bin for exact zeros.
///
/// Bin 0 collects zeros. Bin 1+i covers [2^(kmin+i), 2^(kmin+i+1)); positive
/// values below 2^kmin clamp into the first positive bin and values at or
/// above 2^(kmax+1) clamp into the last. Flow distributions compare across
/// matrices, so two histograms built with the same (kmin, kmax) share bins.
struct Log2Histogram {
  int kmin = 0;
  int kmax = 0;
  std::vector<double> mass;  // size kmax - kmin + 2; normalized to sum 1

  int n_bins() const { return static_cast<int>(mass.size()); }
  std::vector<double> cdf() const;

  /// Lower edge of a bin (0 for the zero bin).
  double bin_lower(int bin) const;
};

/// Builds a normalized histogram. `smoothing` is added to every bin before
/// normalization so downstream divergences stay finite; pass 0 for raw
/// frequencies.
Log2Histogram log2_histogram(std::span<const double> values, int kmin, int kmax,
                             double smoothing);

}  // namespace odgen
