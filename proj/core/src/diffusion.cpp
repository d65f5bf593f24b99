#include "odgen/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace odgen {

Matrix log_transform(const Matrix& flows) {
  if (!all_finite(flows) || (flows.array() < 0.0).any())
    throw InvalidInputError("log transform needs nonnegative finite flows");
  return flows.array().log1p();
}

Matrix inverse_log(const Matrix& log_flows) { return log_flows.array().expm1(); }

Matrix diffuse(const Matrix& f0_log, int t, const Matrix& epsilon, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.T)
    throw InvalidInputError("diffusion step t=" + std::to_string(t) + " outside schedule range [1," +
                            std::to_string(schedule.T) + "]");
  if (epsilon.rows() != f0_log.rows() || epsilon.cols() != f0_log.cols())
    throw InvalidInputError("noise shape does not match flow matrix");
  const double abar = schedule.alpha_bar_at(t);
  return std::sqrt(abar) * f0_log + std::sqrt(1.0 - abar) * epsilon;
}

double noise_mse(const Matrix& epsilon, const Matrix& epsilon_hat) {
  if (epsilon.rows() != epsilon_hat.rows() || epsilon.cols() != epsilon_hat.cols())
    throw InvalidInputError("noise matrices differ in shape");
  if (epsilon.size() == 0) throw InvalidInputError("noise matrices are empty");
  return (epsilon - epsilon_hat).squaredNorm() / static_cast<double>(epsilon.size());
}

AreaTensors prepare_area_tensors(const AreaSpatialCharacteristics& area, const ODMatrix* od,
                                 const FeatureScaler& scaler, int hidden_dim) {
  AreaTensors tensors;
  tensors.area_id = area.area_id;
  tensors.n = area.n_regions();
  tensors.node_features = scaler.apply(area);
  tensors.distances = area.distances_km;
  tensors.dlape = compute_dlape(area.distances_km, hidden_dim);
  if (od != nullptr) {
    if (od->n_regions() != tensors.n)
      throw InvalidInputError("OD matrix size does not match area '" + area.area_id + "'");
    tensors.f0_log = log_transform(od->flows);
  }
  return tensors;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void DiffusionTrainConfig::validate() const {
  if (T < 1) throw ConfigError("diffusion step count T must be >= 1");
  if (!(schedule_offset > 0.0)) throw ConfigError("schedule offset must be positive");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be nonnegative");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(subgraph_min_fraction > 0.0) || subgraph_min_fraction > 1.0)
    throw ConfigError("subgraph fraction must lie in (0,1]");
  denoiser.validate();
}

namespace {

/// Induced sub-area: keeps a random subset of regions together with the
/// corresponding rows/columns of flows and distances. Positional encodings
/// are recomputed for the reduced geometry.
AreaTensors subsample_area(const AreaTensors& area, int keep, int hidden_dim,
                           std::mt19937_64& rng) {
  std::vector<int> idx(static_cast<std::size_t>(area.n));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(keep));
  std::sort(idx.begin(), idx.end());

  AreaTensors sub;
  sub.area_id = area.area_id;
  sub.n = keep;
  sub.node_features.resize(keep, area.node_features.cols());
  sub.f0_log.resize(keep, keep);
  sub.distances.resize(keep, keep);
  for (int i = 0; i < keep; ++i) {
    sub.node_features.row(i) = area.node_features.row(idx[static_cast<std::size_t>(i)]);
    for (int j = 0; j < keep; ++j) {
      sub.f0_log(i, j) = area.f0_log(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
      sub.distances(i, j) =
          area.distances(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
  }
  sub.dlape = compute_dlape(sub.distances, hidden_dim);
  return sub;
}

}  // namespace

Trainer::Trainer(Denoiser& model, const DiffusionTrainConfig& cfg)
    : model_(model),
      cfg_(cfg),
      schedule_(cosine_schedule(cfg.T, cfg.schedule_offset)),
      optimizer_(model.params().all(),
                 ad::AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}) {
  cfg_.validate();
}

double Trainer::accumulate(const AreaTensors& full_area, std::mt19937_64& rng, double loss_scale) {
  if (!full_area.has_flows())
    throw TrainingError("area '" + full_area.area_id + "' has no flows to train on");

  AreaTensors sub;
  const AreaTensors* chosen = &full_area;
  if (cfg_.subgraph_min_fraction < 1.0 && full_area.n > 4) {
    std::uniform_real_distribution<double> frac(cfg_.subgraph_min_fraction, 1.0);
    const int keep = std::clamp(static_cast<int>(std::lround(frac(rng) * full_area.n)), 4,
                                full_area.n);
    if (keep < full_area.n) {
      sub = subsample_area(full_area, keep, cfg_.denoiser.hidden_dim, rng);
      chosen = &sub;
    }
  }
  const AreaTensors& area = *chosen;

  std::uniform_int_distribution<int> step(1, cfg_.T);
  const int t = step(rng);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix epsilon(area.n, area.n);
  for (int i = 0; i < area.n; ++i)
    for (int j = 0; j < area.n; ++j) epsilon(i, j) = gauss(rng);

  const Matrix noised = diffuse(area.f0_log, t, epsilon, schedule_);

  ad::Tape tape;
  const ad::Var predicted =
      model_.build(tape, area.node_features, noised, area.distances, area.dlape, t);
  const ad::Var loss = tape.mean_sq_error(predicted, tape.constant(epsilon));
  const double loss_value = tape.value(loss)(0, 0);
  if (!std::isfinite(loss_value))
    throw TrainingError("non-finite training loss at t=" + std::to_string(t) + " on area '" +
                        area.area_id + "'");
  tape.backward(loss, loss_scale);
  return loss_value;
}

void Trainer::update() {
  optimizer_.step();
  model_.params().zero_grad();
}

std::vector<double> Trainer::fit(const std::vector<AreaTensors>& train, std::mt19937_64& rng,
                                 const std::function<void(int, double)>& on_epoch) {
  if (train.empty()) throw TrainingError("training set is empty");

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> epoch_losses;
  epoch_losses.reserve(static_cast<std::size_t>(cfg_.epochs));
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t at = 0;
    while (at < order.size()) {
      const std::size_t batch =
          std::min<std::size_t>(static_cast<std::size_t>(cfg_.batch_size), order.size() - at);
      model_.params().zero_grad();
      for (std::size_t b = 0; b < batch; ++b)
        loss_sum += accumulate(train[order[at + b]], rng, 1.0 / static_cast<double>(batch));
      optimizer_.step();
      at += batch;
    }
    model_.params().zero_grad();
    const double mean_loss = loss_sum / static_cast<double>(train.size());
    epoch_losses.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  return epoch_losses;
}

TrainedModel train_diffusion_model(const std::vector<LoadedArea>& train_areas,
                                   const DiffusionTrainConfig& cfg,
                                   const std::function<void(int, double)>& on_epoch) {
  cfg.validate();
  if (train_areas.empty()) throw TrainingError("training set is empty");

  TrainedModel trained;
  trained.config = cfg;
  trained.schedule = cosine_schedule(cfg.T, cfg.schedule_offset);

  std::vector<const AreaSpatialCharacteristics*> areas;
  areas.reserve(train_areas.size());
  for (const auto& la : train_areas) areas.push_back(&la.area);
  trained.scaler = FeatureScaler::fit(areas);

  std::vector<AreaTensors> tensors;
  tensors.reserve(train_areas.size());
  for (const auto& la : train_areas)
    tensors.push_back(
        prepare_area_tensors(la.area, &la.od, trained.scaler, cfg.denoiser.hidden_dim));

  DenoiserConfig denoiser_cfg = cfg.denoiser;
  denoiser_cfg.init_seed = cfg.seed;
  trained.model = std::make_unique<Denoiser>(denoiser_cfg);

  Trainer trainer(*trained.model, cfg);
  std::mt19937_64 rng(cfg.seed);
  trained.epoch_losses = trainer.fit(tensors, rng, on_epoch);
  return trained;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

Matrix DenoiserPredictor::predict_noise(const Matrix& noised_flows, int t,
                                        const AreaTensors& cond) {
  return model_->predict(cond.node_features, noised_flows, cond.distances, cond.dlape, t);
}

void SamplerConfig::validate(int T) const {
  if (tau < 1 || tau > T)
    throw ConfigError("tau=" + std::to_string(tau) + " must lie in [1," + std::to_string(T) + "]");
  if (T % tau != 0)
    throw ConfigError("tau=" + std::to_string(tau) + " must divide T=" + std::to_string(T));
  if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
}

Matrix ddim_sample(NoisePredictor& model, const AreaTensors& area, const NoiseSchedule& schedule,
                   const SamplerConfig& cfg, std::uint64_t seed) {
  cfg.validate(schedule.T);
  const int dt = schedule.T / cfg.tau;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix f(area.n, area.n);
  for (int i = 0; i < area.n; ++i)
    for (int j = 0; j < area.n; ++j) f(i, j) = gauss(rng);

  // Visit the length-tau sub-sequence t = T-dt+1, ..., 1+dt, 1 (the standard
  // strided DDIM timestep grid, which always terminates at t = 1).
  //
  // Skipping steps coarsens the diffusion chain, so the per-step noise
  // quantities are the ones of the coarsened chain: between consecutive
  // visited steps t and t-dt the effective alpha is the telescoped product
  // alpha' = abar_t / abar_{t-dt} (exactly alpha_t when dt = 1). Using the
  // raw single-step alpha_t with a dt-jump would leave the trajectory
  // under-denoised at every visited step.
  for (int t = schedule.T - dt + 1; t >= 1; t -= dt) {
    const Matrix predicted = model.predict_noise(f, t, area);
    const int t_prev = t - dt;
    const double abar = schedule.alpha_bar_at(t);
    const double abar_prev = t_prev >= 1 ? schedule.alpha_bar_at(t_prev) : 1.0;
    const double alpha = abar / abar_prev;
    if (!cfg.standard_ddim) {
      f = (f - ((1.0 - alpha) / std::sqrt(1.0 - abar)) * predicted) / std::sqrt(alpha);
    } else {
      const Matrix f0 = (f - std::sqrt(1.0 - abar) * predicted) / std::sqrt(abar);
      f = std::sqrt(abar_prev) * f0 + std::sqrt(1.0 - abar_prev) * predicted;
    }
    if (!all_finite(f))
      throw TrainingError("sampler produced non-finite values at t=" + std::to_string(t) +
                          " on area '" + area.area_id + "'");
  }
  return f;
}

ODMatrix generate_od(NoisePredictor& model, const AreaTensors& area, const NoiseSchedule& schedule,
                     const SamplerConfig& cfg) {
  cfg.validate(schedule.T);

  std::mt19937_64 seed_stream(cfg.seed);
  Matrix mean_log = Matrix::Zero(area.n, area.n);
  for (int s = 0; s < cfg.n_samples; ++s) {
    const std::uint64_t sub_seed = seed_stream();
    mean_log += ddim_sample(model, area, schedule, cfg, sub_seed);
  }
  mean_log /= static_cast<double>(cfg.n_samples);

  ODMatrix od;
  od.flows = inverse_log(mean_log).cwiseMax(0.0);
  if (cfg.round_to_int) od.flows = od.flows.array().round();
  return od;
}

}  // namespace odgen
