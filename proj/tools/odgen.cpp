// odgen — command-line front end: synthetic corpora, splits, gravity
// baselines, diffusion training/generation, evaluation, corpus statistics.
//
// Exit codes: 0 success, 2 validation failure (bad inputs, malformed files,
// incompatible configuration), 1 unexpected internal error.

#include "odgen/checkpoint.hpp"
#include "odgen/diffusion.hpp"
#include "odgen/domain.hpp"
#include "odgen/gravity.hpp"
#include "odgen/io.hpp"
#include "odgen/metrics.hpp"
#include "odgen/text.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace odgen;

namespace {

std::vector<double> parse_number_list(const std::string& raw, const std::string& what) {
  std::vector<double> values;
  for (const auto& field : text::split_csv_line(raw)) {
    try {
      values.push_back(text::parse_double(field));
    } catch (const std::invalid_argument&) {
      throw InvalidInputError(what + ": malformed number '" + field + "'");
    }
  }
  return values;
}

json read_json_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw LoadError(file.string() + ": cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError(file.string() + ": invalid JSON: " + e.what());
  }
}

void write_text_file(const fs::path& file, const std::string& content) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw LoadError(file.string() + ": cannot open file for writing");
  out << content;
  if (!out) throw LoadError(file.string() + ": write failed");
}

std::vector<LoadedArea> load_corpus_subset(const fs::path& corpus_dir,
                                           const std::optional<fs::path>& split_file,
                                           const std::string& subset) {
  const auto index = index_corpus(corpus_dir);
  std::vector<LoadedArea> areas;
  if (split_file) {
    const CorpusSplit split = load_split(*split_file);
    for (const std::string& id : split.subset(subset)) {
      const AreaIndexEntry* e = find_area(index, id);
      if (e == nullptr)
        throw InvalidInputError("split names area '" + id + "' which is not in the corpus");
      areas.push_back(load_area(e->dir));
    }
  } else {
    for (const auto& e : index) areas.push_back(load_area(e.dir));
  }
  if (areas.empty()) throw InvalidInputError("no areas selected from " + corpus_dir.string());
  return areas;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

void add_synth(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("synth", "Generate a synthetic gravity-driven corpus");
  struct Opts {
    std::string out;
    int areas = 1;
    int min_regions = 5;
    int max_regions = 15;
    std::uint64_t seed = 0;
    double noise = 0.0;
    double mass_lo = 10.0, mass_hi = 100.0;
    double extent = 20.0;
    double K = 0.01, alpha = 1.0, beta = 1.0, gamma = 2.0;
    std::string decay = "power";
  };
  auto opts = std::make_shared<Opts>();
  cmd->add_option("--out", opts->out, "Output corpus directory")->required();
  cmd->add_option("--areas", opts->areas, "Number of areas");
  cmd->add_option("--min-regions", opts->min_regions, "Smallest region count");
  cmd->add_option("--max-regions", opts->max_regions, "Largest region count");
  cmd->add_option("--seed", opts->seed, "Master seed");
  cmd->add_option("--noise", opts->noise, "Lognormal noise level on flows");
  cmd->add_option("--mass-lo", opts->mass_lo, "Lower bound of the mass draw");
  cmd->add_option("--mass-hi", opts->mass_hi, "Upper bound of the mass draw");
  cmd->add_option("--extent", opts->extent, "Square extent of the area in km");
  cmd->add_option("--K", opts->K, "Gravity scale");
  cmd->add_option("--alpha", opts->alpha, "Origin mass exponent");
  cmd->add_option("--beta", opts->beta, "Destination mass exponent");
  cmd->add_option("--gamma", opts->gamma, "Distance decay coefficient");
  cmd->add_option("--decay", opts->decay, "Decay kind: power or exp")
      ->check(CLI::IsMember({"power", "exp", "exponential"}));
  cmd->callback([&run, opts]() {
    run = [opts]() {
      if (opts->areas < 1) throw InvalidInputError("--areas must be >= 1");
      if (opts->min_regions < 1 || opts->max_regions < opts->min_regions)
        throw InvalidInputError("region count range must satisfy 1 <= min <= max");
      GravityParams params;
      params.scale = opts->K;
      params.origin_exp = opts->alpha;
      params.dest_exp = opts->beta;
      params.decay = opts->gamma;
      params.decay_kind = decay_kind_from_string(opts->decay);
      params.validate();

      std::mt19937_64 master(opts->seed);
      std::uniform_int_distribution<int> region_count(opts->min_regions, opts->max_regions);
      const int width = std::max<int>(3, static_cast<int>(std::to_string(opts->areas - 1).size()));
      for (int a = 0; a < opts->areas; ++a) {
        SyntheticAreaSpec spec;
        std::string num = std::to_string(a);
        spec.area_id =
            "syn" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;
        spec.n_regions = region_count(master);
        spec.seed = master();
        spec.mass_range = {opts->mass_lo, opts->mass_hi};
        spec.extent_km = opts->extent;
        spec.gravity = params;
        spec.noise_level = opts->noise;
        const LoadedArea la = generate_synthetic_area(spec);
        save_area(fs::path(opts->out) / ("area_" + spec.area_id), la.area, &la.od);
      }
      std::cout << "wrote " << opts->areas << " synthetic areas to " << opts->out << "\n";
      return 0;
    };
  });
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

void add_split(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("split", "Deterministic train/val/test split of a corpus");
  struct Opts {
    std::string corpus;
    std::string out;
    std::string ratios = "0.8,0.1,0.1";
    std::uint64_t seed = 0;
    int min_regions = 0;
    int max_regions = 0;
    std::string labels_file;
    std::string label_set;
  };
  auto opts = std::make_shared<Opts>();
  cmd->add_option("--corpus", opts->corpus, "Corpus directory")->required();
  cmd->add_option("--out", opts->out, "Output split JSON file")->required();
  cmd->add_option("--ratios", opts->ratios, "train,val,test ratios (sum to 1)");
  cmd->add_option("--seed", opts->seed, "Shuffle seed");
  cmd->add_option("--min-regions", opts->min_regions, "Keep areas with at least this many regions");
  cmd->add_option("--max-regions", opts->max_regions, "Keep areas with at most this many regions");
  cmd->add_option("--labels", opts->labels_file, "labels.csv restricting membership");
  cmd->add_option("--label-set", opts->label_set, "Comma-separated labels to keep");
  cmd->callback([&run, opts]() {
    run = [opts]() {
      const auto ratio_values = parse_number_list(opts->ratios, "--ratios");
      if (ratio_values.size() != 3)
        throw InvalidInputError("--ratios needs exactly three values");
      SplitFilter filter;
      if (opts->min_regions > 0) filter.min_regions = opts->min_regions;
      if (opts->max_regions > 0) filter.max_regions = opts->max_regions;
      if (!opts->labels_file.empty()) {
        filter.label_of = load_labels(opts->labels_file);
        std::set<std::string> keep;
        for (const auto& field : text::split_csv_line(opts->label_set))
          if (!field.empty()) keep.insert(field);
        if (keep.empty())
          for (const auto& [id, label] : filter.label_of) keep.insert(label);
        filter.labels = std::move(keep);
      }
      const auto index = index_corpus(opts->corpus);
      const CorpusSplit split = split_corpus(
          index, {ratio_values[0], ratio_values[1], ratio_values[2]}, opts->seed, filter);
      save_split(opts->out, split);
      std::cout << "split " << (split.train.size() + split.val.size() + split.test.size())
                << " areas into " << split.train.size() << "/" << split.val.size() << "/"
                << split.test.size() << " (train/val/test)\n";
      return 0;
    };
  });
}

// ---------------------------------------------------------------------------
// fit-gravity / predict-gravity
// ---------------------------------------------------------------------------

json gravity_params_json(const GravityParams& p) {
  return json{{"K", p.scale},
              {"alpha", p.origin_exp},
              {"beta", p.dest_exp},
              {"gamma", p.decay},
              {"decay", to_string(p.decay_kind)}};
}

GravityParams gravity_params_from_json(const json& j) {
  GravityParams p;
  p.scale = j.at("K").get<double>();
  p.origin_exp = j.at("alpha").get<double>();
  p.dest_exp = j.at("beta").get<double>();
  p.decay = j.at("gamma").get<double>();
  p.decay_kind = decay_kind_from_string(j.at("decay").get<std::string>());
  p.validate();
  return p;
}

void add_fit_gravity(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("fit-gravity", "Calibrate a gravity baseline on a corpus");
  struct Opts {
    std::string decay = "power";
    int mass_col = 0;
    std::string corpus;
    std::string out;
    std::string split_file;
    std::string subset = "train";
    bool per_area = false;
  };
  auto opts = std::make_shared<Opts>();
  cmd->add_option("--decay", opts->decay, "Decay kind: power or exp")
      ->required()
      ->check(CLI::IsMember({"power", "exp", "exponential"}));
  cmd->add_option("--mass-col", opts->mass_col, "Feature column used as mass (default 0)");
  cmd->add_option("--corpus", opts->corpus, "Corpus directory")->required();
  cmd->add_option("--out", opts->out, "Output parameter JSON")->required();
  cmd->add_option("--split", opts->split_file, "Restrict fitting to a split subset");
  cmd->add_option("--subset", opts->subset, "Subset when --split is given (default train)");
  cmd->add_flag("--per-area", opts->per_area, "Fit one parameter set per area");
  cmd->callback([&run, opts]() {
    run = [opts]() {
      const DecayKind kind = decay_kind_from_string(opts->decay);
      std::optional<fs::path> split_file;
      if (!opts->split_file.empty()) split_file = opts->split_file;
      const auto areas = load_corpus_subset(opts->corpus, split_file, opts->subset);

      json out;
      out["mass_col"] = opts->mass_col;
      if (opts->per_area) {
        json per = json::object();
        for (const auto& la : areas) {
          const GravityParams p = gravity_fit({la}, kind, opts->mass_col);
          per[la.area.area_id] = gravity_params_json(p);
        }
        out["per_area"] = std::move(per);
      } else {
        const GravityParams p = gravity_fit(areas, kind, opts->mass_col);
        out.update(gravity_params_json(p));
      }
      write_text_file(opts->out, out.dump(2) + "\n");
      std::cout << "fitted gravity (" << opts->decay << ") on " << areas.size() << " areas -> "
                << opts->out << "\n";
      return 0;
    };
  });
}

void add_predict_gravity(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("predict-gravity", "Predict an OD matrix with fitted parameters");
  struct Opts {
    std::string params_file;
    std::string area_dir;
    std::string out;
  };
  auto opts = std::make_shared<Opts>();
  cmd->add_option("--params", opts->params_file, "Parameter JSON from fit-gravity")->required();
  cmd->add_option("--area", opts->area_dir, "Area directory")->required();
  cmd->add_option("--out", opts->out, "Output od.csv")->required();
  cmd->callback([&run, opts]() {
    run = [opts]() {
      const json j = read_json_file(opts->params_file);
      const AreaSpatialCharacteristics area = load_area_features(opts->area_dir);
      json params_json;
      try {
        if (j.contains("per_area")) {
          if (!j.at("per_area").contains(area.area_id))
            throw InvalidInputError("parameter file has no entry for area '" + area.area_id + "'");
          params_json = j.at("per_area").at(area.area_id);
        } else {
          params_json = j;
        }
        const int mass_col = j.at("mass_col").get<int>();
        const GravityParams params = gravity_params_from_json(params_json);
        const Vector masses = area.feature_column(mass_col);
        const ODMatrix od = gravity_predict(params, masses, area.distances_km);
        save_od_csv(opts->out, area, od);
      } catch (const json::exception& e) {
        throw LoadError(opts->params_file + ": invalid parameter file: " + e.what());
      }
      std::cout << "wrote gravity prediction for area '" << area.area_id << "' -> " << opts->out
                << "\n";
      return 0;
    };
  });
}

// ---------------------------------------------------------------------------
// train / generate
// ---------------------------------------------------------------------------

DiffusionTrainConfig train_config_from_json(const json& j) {
  DiffusionTrainConfig cfg;
  cfg.T = 1000;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "T") cfg.T = value.get<int>();
      else if (key == "schedule_offset") cfg.schedule_offset = value.get<double>();
      else if (key == "lr") cfg.lr = value.get<double>();
      else if (key == "weight_decay") cfg.weight_decay = value.get<double>();
      else if (key == "epochs") cfg.epochs = value.get<int>();
      else if (key == "batch_size") cfg.batch_size = value.get<int>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else if (key == "subgraph_min_fraction")
        cfg.subgraph_min_fraction = value.get<double>();
      else if (key == "hidden_dim") cfg.denoiser.hidden_dim = value.get<int>();
      else if (key == "n_layers") cfg.denoiser.n_layers = value.get<int>();
      else if (key == "n_heads") cfg.denoiser.n_heads = value.get<int>();
      else if (key == "ffn_mult") cfg.denoiser.ffn_mult = value.get<int>();
      else if (key == "edge_fusion")
        cfg.denoiser.edge_fusion = edge_fusion_from_string(value.get<std::string>());
      else
        throw ConfigError("unknown training config key '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError("training config key '" + key + "': " + e.what());
    }
  }
  cfg.denoiser.init_seed = cfg.seed;
  cfg.validate();
  return cfg;
}

void add_train(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("train", "Train the diffusion model on a corpus");
  struct Opts {
    std::string corpus;
    std::string config_file;
    std::string out;
    std::string split_file;
    std::string subset = "train";
    bool quiet = false;
  };
  auto opts = std::make_shared<Opts>();
  cmd->add_option("--corpus", opts->corpus, "Corpus directory")->required();
  cmd->add_option("--config", opts->config_file, "Training configuration JSON")->required();
  cmd->add_option("--out", opts->out, "Output checkpoint directory")->required();
  cmd->add_option("--split", opts->split_file, "Restrict training to a split subset");
  cmd->add_option("--subset", opts->subset, "Subset when --split is given (default train)");
  cmd->add_flag("--quiet", opts->quiet, "Suppress per-epoch logging");
  cmd->callback([&run, opts]() {
    run = [opts]() {
      const DiffusionTrainConfig cfg = train_config_from_json(read_json_file(opts->config_file));
      std::optional<fs::path> split_file;
      if (!opts->split_file.empty()) split_file = opts->split_file;
      const auto areas = load_corpus_subset(opts->corpus, split_file, opts->subset);

      const bool quiet = opts->quiet;
      const TrainedModel trained = train_diffusion_model(
          areas, cfg, [quiet, &cfg](int epoch, double loss) {
            if (!quiet && (epoch % 10 == 0 || epoch + 1 == cfg.epochs))
              std::cout << "epoch " << epoch << " loss " << loss << "\n" << std::flush;
          });
      save_checkpoint(opts->out, trained, corpus_fingerprint(areas));
      std::cout << "trained on " << areas.size() << " areas ("
                << trained.model->params().parameter_count() << " parameters) -> " << opts->out
                << "\n";
      return 0;
    };
  });
}

void add_generate(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("generate", "Generate an OD matrix for an area");
  struct Opts {
    std::string ckpt;
    std::string area_dir;
    int tau = 0;
    int samples = 10;
    std::uint64_t seed = 0;
    std::string rule = "posterior";
    bool round = false;
    std::string out;
  };
  auto opts = std::make_shared<Opts>();
  cmd->add_option("--ckpt", opts->ckpt, "Checkpoint directory")->required();
  cmd->add_option("--area", opts->area_dir, "Area directory")->required();
  cmd->add_option("--tau", opts->tau, "Sub-sequence length (must divide T)")->required();
  cmd->add_option("--samples", opts->samples, "Samples to average (default 10)");
  cmd->add_option("--seed", opts->seed, "Generation seed");
  cmd->add_option("--rule", opts->rule, "Reverse update rule: posterior or ddim")
      ->check(CLI::IsMember({"posterior", "ddim"}));
  cmd->add_flag("--round", opts->round, "Round generated flows to integers");
  cmd->add_option("--out", opts->out, "Output od.csv")->required();
  cmd->callback([&run, opts]() {
    run = [opts]() {
      TrainedModel trained = load_checkpoint(opts->ckpt);
      const AreaSpatialCharacteristics area = load_area_features(opts->area_dir);
      const AreaTensors tensors = prepare_area_tensors(
          area, nullptr, trained.scaler, trained.config.denoiser.hidden_dim);

      SamplerConfig sampler;
      sampler.tau = opts->tau;
      sampler.n_samples = opts->samples;
      sampler.seed = opts->seed;
      sampler.standard_ddim = opts->rule == "ddim";
      sampler.round_to_int = opts->round;

      DenoiserPredictor predictor(*trained.model);
      const ODMatrix od = generate_od(predictor, tensors, trained.schedule, sampler);
      save_od_csv(opts->out, area, od);
      std::cout << "generated " << area.n_regions() << "x" << area.n_regions()
                << " OD matrix for area '" << area.area_id << "' -> " << opts->out << "\n";
      return 0;
    };
  });
}

// ---------------------------------------------------------------------------
// evaluate / stats
// ---------------------------------------------------------------------------

void add_evaluate(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("evaluate", "Score generated matrices against real ones");
  struct Opts {
    std::string real_dir;
    std::string generated_dir;
    std::string out;
    std::string bands = "50,100,200,500,1000";
    std::string labels_file;
    std::string jsd_mode = "symmetric";
  };
  auto opts = std::make_shared<Opts>();
  cmd->add_option("--real", opts->real_dir, "Corpus with ground-truth od.csv files")->required();
  cmd->add_option("--generated", opts->generated_dir,
                  "Directory with area_<id>/od.csv generated files")
      ->required();
  cmd->add_option("--out", opts->out, "Output metrics.csv")->required();
  cmd->add_option("--group-size-bands", opts->bands, "Comma-separated upper bounds");
  cmd->add_option("--labels", opts->labels_file, "labels.csv with structure labels");
  cmd->add_option("--jsd-mode", opts->jsd_mode, "symmetric or mixture")
      ->check(CLI::IsMember({"symmetric", "mixture"}));
  cmd->callback([&run, opts]() {
    run = [opts]() {
      const JsdMode mode = jsd_mode_from_string(opts->jsd_mode);
      const auto index = index_corpus(opts->real_dir);

      std::vector<MetricsRecord> records;
      std::map<std::string, int> region_counts;
      for (const auto& entry : index) {
        const fs::path generated_od =
            fs::path(opts->generated_dir) / ("area_" + entry.area_id) / "od.csv";
        if (!fs::exists(generated_od)) continue;
        const LoadedArea real = load_area(entry.dir);
        const ODMatrix generated = load_od_csv(generated_od, real.area);
        records.push_back(
            evaluate_area(entry.area_id, real.od.flows, generated.flows, mode));
        region_counts[entry.area_id] = real.area.n_regions();
      }
      if (records.empty())
        throw InvalidInputError("no generated od.csv files matched areas in " + opts->real_dir);

      write_text_file(opts->out, metrics_csv(records));

      GroupingSpec grouping;
      grouping.size_band_uppers.clear();
      for (const double v : parse_number_list(opts->bands, "--group-size-bands"))
        grouping.size_band_uppers.push_back(static_cast<int>(v));
      if (!opts->labels_file.empty()) grouping.labels = load_labels(opts->labels_file);

      const AggregateReport report = aggregate(records, grouping, region_counts);
      std::cout << format_aggregate_report(report);
      return 0;
    };
  });
}

void add_stats(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("stats", "Corpus descriptive statistics");
  struct Opts {
    std::string corpus;
    std::string out;
  };
  auto opts = std::make_shared<Opts>();
  cmd->add_option("--corpus", opts->corpus, "Corpus directory")->required();
  cmd->add_option("--out", opts->out, "Output stats JSON")->required();
  cmd->callback([&run, opts]() {
    run = [opts]() {
      const auto areas = load_corpus_subset(opts->corpus, std::nullopt, "train");
      const CorpusStats stats = corpus_stats(areas);
      save_stats_json(opts->out, stats);
      std::cout << "wrote statistics for " << areas.size() << " areas -> " << opts->out << "\n";
      return 0;
    };
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"origin-destination matrix generation toolkit"};
  app.require_subcommand(1);

  std::function<int()> run;
  add_synth(app, run);
  add_split(app, run);
  add_fit_gravity(app, run);
  add_predict_gravity(app, run);
  add_train(app, run);
  add_generate(app, run);
  add_evaluate(app, run);
  add_stats(app, run);

  CLI11_PARSE(app, argc, argv);

  try {
    return run ? run() : 1;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
