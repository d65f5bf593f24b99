#include "odgen/schedule.hpp"

#include <cmath>
#include <numbers>

namespace odgen {

namespace {

double cosine_f(double t, double T, double s) {
  const double arg = ((t / T + s) / (1.0 + s)) * std::numbers::pi / 2.0;
  const double c = std::cos(arg);
  return c * c;
}

}  // namespace

NoiseSchedule cosine_schedule(int T, double offset) {
  if (T < 1) throw std::invalid_argument("noise schedule needs T >= 1");
  if (!(offset > 0.0)) throw std::invalid_argument("schedule offset must be positive");

  NoiseSchedule sched;
  sched.T = T;
  sched.beta.resize(static_cast<std::size_t>(T));
  sched.alpha.resize(static_cast<std::size_t>(T));
  sched.alpha_bar.resize(static_cast<std::size_t>(T));

  const double f0 = cosine_f(0.0, static_cast<double>(T), offset);
  double prev_bar = 1.0;  // alpha_bar(0) = f(0)/f(0)
  double running = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double bar = cosine_f(static_cast<double>(t), static_cast<double>(T), offset) / f0;
    double beta = 1.0 - bar / prev_bar;
    beta = std::min(beta, 0.999);
    prev_bar = bar;

    const std::size_t k = static_cast<std::size_t>(t - 1);
    sched.beta[k] = beta;
    sched.alpha[k] = 1.0 - beta;
    running *= sched.alpha[k];
    sched.alpha_bar[k] = running;
  }
  return sched;
}

}  // namespace odgen
