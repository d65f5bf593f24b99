#pragma once

#include <stdexcept>
#include <vector>

namespace odgen {

/// Discrete-time variance schedule for the diffusion process. Index t runs
/// 1..T; vectors are stored with t-1 indexing. alpha_bar[t-1] is the running
/// product alpha_1 * ... * alpha_t of the per-step retention factors.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;       // per-step noise variance, in (0, 1]
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // cumulative product of alpha

  double beta_at(int t) const { return beta.at(static_cast<std::size_t>(t - 1)); }
  double alpha_at(int t) const { return alpha.at(static_cast<std::size_t>(t - 1)); }
  double alpha_bar_at(int t) const { return alpha_bar.at(static_cast<std::size_t>(t - 1)); }
};

/// Cosine schedule: with f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2) and
/// offset s = 0.008, alpha_bar(t) = f(t) / f(0) and
/// beta_t = 1 - alpha_bar(t) / alpha_bar(t-1), clipped to at most 0.999.
/// alpha_bar is stored as the cumulative product of the clipped alphas so
/// the product identity holds exactly.
NoiseSchedule cosine_schedule(int T, double offset = 0.008);

}  // namespace odgen
