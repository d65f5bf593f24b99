#pragma once

#include "odgen/denoiser.hpp"
#include "odgen/domain.hpp"
#include "odgen/io.hpp"
#include "odgen/schedule.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace odgen {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Elementwise log(F + 1); flows must be nonnegative and finite.
Matrix log_transform(const Matrix& flows);
/// Elementwise exp(x) - 1 (no clamping; see generate_od).
Matrix inverse_log(const Matrix& log_flows);

/// Closed-form forward marginal F^t = sqrt(abar_t) F0 + sqrt(1 - abar_t) eps.
Matrix diffuse(const Matrix& f0_log, int t, const Matrix& epsilon, const NoiseSchedule& schedule);

/// Mean squared error between injected and predicted noise — the training
/// objective, usable standalone with oracle predictions.
double noise_mse(const Matrix& epsilon, const Matrix& epsilon_hat);

/// Everything the denoiser needs about one area, precomputed once.
struct AreaTensors {
  std::string area_id;
  Matrix node_features;  // N x feature_dim, scaled
  Matrix f0_log;         // N x N log-transformed flows; empty when unknown
  Matrix distances;      // N x N, km
  Matrix dlape;          // N x min(N, hidden_dim)
  int n = 0;

  bool has_flows() const { return f0_log.size() > 0; }
};

AreaTensors prepare_area_tensors(const AreaSpatialCharacteristics& area, const ODMatrix* od,
                                 const FeatureScaler& scaler, int hidden_dim);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct DiffusionTrainConfig {
  int T = 1000;
  double schedule_offset = 0.008;
  double lr = 1e-3;
  double weight_decay = 0.01;
  int epochs = 10;
  int batch_size = 4;  // areas per optimizer update (gradient accumulation)
  /// Region-subset augmentation: when < 1, each training draw keeps a random
  /// fraction (uniform in [this, 1]) of the area's regions, together with the
  /// induced flow and distance submatrices. Discourages the network from
  /// keying on whole-area signatures when the corpus is small. 1 disables.
  double subgraph_min_fraction = 1.0;
  std::uint64_t seed = 0;
  DenoiserConfig denoiser;

  void validate() const;
};

/// Runs the denoising objective: per area draw t ~ U{1..T} and standard
/// normal noise, diffuse the log flows, predict the noise, take the MSE.
/// One optimizer update covers `batch_size` areas whose gradients accumulate.
class Trainer {
 public:
  Trainer(Denoiser& model, const DiffusionTrainConfig& cfg);

  /// Forward/backward for one area; gradients accumulate until update().
  /// Returns the (unscaled) loss. Throws TrainingError on a non-finite loss,
  /// naming the sampled t and the area.
  double accumulate(const AreaTensors& area, std::mt19937_64& rng, double loss_scale);

  /// Applies one optimizer step and clears accumulated gradients.
  void update();

  /// Epoch loop over the training areas (order reshuffled per epoch).
  /// Returns the mean per-area loss of each epoch.
  std::vector<double> fit(const std::vector<AreaTensors>& train, std::mt19937_64& rng,
                          const std::function<void(int, double)>& on_epoch = nullptr);

  const NoiseSchedule& schedule() const { return schedule_; }
  long updates_applied() const { return optimizer_.steps_taken(); }

 private:
  Denoiser& model_;
  DiffusionTrainConfig cfg_;
  NoiseSchedule schedule_;
  ad::AdamW optimizer_;
};

/// A trained model bundle: network, schedule, scaler and the configuration
/// that produced them.
struct TrainedModel {
  DiffusionTrainConfig config;
  NoiseSchedule schedule;
  FeatureScaler scaler;
  std::unique_ptr<Denoiser> model;
  std::vector<double> epoch_losses;
};

TrainedModel train_diffusion_model(const std::vector<LoadedArea>& train_areas,
                                   const DiffusionTrainConfig& cfg,
                                   const std::function<void(int, double)>& on_epoch = nullptr);

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Noise-prediction interface so samplers can run against oracles in tests.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Matrix predict_noise(const Matrix& noised_flows, int t, const AreaTensors& cond) = 0;
};

class DenoiserPredictor final : public NoisePredictor {
 public:
  explicit DenoiserPredictor(Denoiser& model) : model_(&model) {}
  Matrix predict_noise(const Matrix& noised_flows, int t, const AreaTensors& cond) override;

 private:
  Denoiser* model_;
};

struct SamplerConfig {
  int tau = 1;
  int n_samples = 10;
  bool round_to_int = false;
  /// Default applies the posterior-mean update on the coarsened chain,
  ///   F^{t-dt} = (F^t - ((1 - a')/sqrt(1 - abar_t)) eps_hat) / sqrt(a'),
  /// with a' = abar_t / abar_{t-dt} (identical to a_t when dt = 1);
  /// the alternative is the standard deterministic DDIM update through the
  /// predicted F0.
  bool standard_ddim = false;
  std::uint64_t seed = 0;

  void validate(int T) const;  // requires 1 <= tau <= T and tau | T
};

/// Deterministic reverse pass from pure noise; returns F0 in log space.
/// Walks the strided timestep grid t = T-dt+1, ..., 1+dt, 1 with dt = T/tau
/// (tau steps, always ending at t = 1).
Matrix ddim_sample(NoisePredictor& model, const AreaTensors& area, const NoiseSchedule& schedule,
                   const SamplerConfig& cfg, std::uint64_t seed);

/// Runs ddim_sample n_samples times with distinct sub-seeds derived from
/// cfg.seed, averages in log space, inverts the log transform, clamps
/// negatives to zero and optionally rounds to integers.
ODMatrix generate_od(NoisePredictor& model, const AreaTensors& area, const NoiseSchedule& schedule,
                     const SamplerConfig& cfg);

}  // namespace odgen
