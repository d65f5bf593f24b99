#include "odgen/hist.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace odgen {

std::vector<double> Log2Histogram::cdf() const {
  std::vector<double> out(mass.size());
  double acc = 0.0;
  for (size_t i = 0; i < mass.size(); ++i) {
    acc += mass[i];
    out[i] = acc;
  }
  return out;
}

double Log2Histogram::bin_lower(int bin) const {
  if (bin <= 0) return 0.0;
  return std::ldexp(1.0, kmin + bin - 1);
}

Log2Histogram log2_histogram(std::span<const double> values, int kmin, int kmax,
                             double smoothing) {
  if (kmax < kmin) throw std::invalid_argument("log2_histogram: kmax < kmin");
  Log2Histogram h;
  h.kmin = kmin;
  h.kmax = kmax;
  h.mass.assign(static_cast<size_t>(kmax - kmin + 2), 0.0);

  for (double v : values) {
    if (v < 0.0 || !std::isfinite(v)) {
      throw std::invalid_argument("log2_histogram: values must be finite and nonnegative");
    }
    if (v == 0.0) {
      h.mass[0] += 1.0;
      continue;
    }
    int k = static_cast<int>(std::floor(std::log2(v)));
    k = std::clamp(k, kmin, kmax);
    h.mass[static_cast<size_t>(1 + k - kmin)] += 1.0;
  }

  double total = 0.0;
  for (auto& m : h.mass) {
    m += smoothing;
    total += m;
  }
  if (total > 0.0) {
    for (auto& m : h.mass) m /= total;
  }
  return h;
}

}  // namespace odgen
