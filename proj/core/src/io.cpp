#include "odgen/io.hpp"

#include "odgen/text.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace odgen {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

[[noreturn]] void fail(const fs::path& file, std::size_t line, const std::string& what) {
  throw LoadError(file.string() + ":" + std::to_string(line) + ": " + what);
}

[[noreturn]] void fail(const fs::path& file, const std::string& what) {
  throw LoadError(file.string() + ": " + what);
}

std::vector<std::string> read_lines(const fs::path& file) {
  std::ifstream in(file);
  if (!in) fail(file, "cannot open file");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(text::strip_cr(line));
  // Ignore one trailing blank line (files end with '\n').
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

double parse_value(const fs::path& file, std::size_t line, const std::string& field) {
  try {
    return text::parse_double(field);
  } catch (const std::invalid_argument&) {
    fail(file, line, "malformed number '" + field + "'");
  }
}

long parse_int(const fs::path& file, std::size_t line, const std::string& field) {
  try {
    return text::parse_long(field);
  } catch (const std::invalid_argument&) {
    fail(file, line, "malformed integer '" + field + "'");
  }
}

std::string features_header() {
  std::string h = "region_id";
  for (int d = 0; d < kDemographicDims; ++d) h += ",d" + std::to_string(d);
  for (int p = 0; p < kPoiDims; ++p) h += ",p" + std::to_string(p);
  return h;
}

void check_region_id(const std::string& id) {
  if (id.empty()) throw InvalidInputError("region id must not be empty");
  if (id.find(',') != std::string::npos || id.find('\n') != std::string::npos ||
      id.find('\r') != std::string::npos) {
    throw InvalidInputError("region id '" + id + "' contains a CSV delimiter");
  }
}

void write_file(const fs::path& file, const std::string& content) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw LoadError(file.string() + ": cannot open file for writing");
  out << content;
  if (!out) throw LoadError(file.string() + ": write failed");
}

json load_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) fail(file, "cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(file, std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

AreaSpatialCharacteristics load_area_features(const fs::path& area_dir) {
  AreaSpatialCharacteristics area;

  const fs::path meta_file = area_dir / "meta.json";
  const json meta = load_json(meta_file);
  if (!meta.contains("area_id") || !meta["area_id"].is_string())
    fail(meta_file, "missing string field 'area_id'");
  if (!meta.contains("n_regions") || !meta["n_regions"].is_number_integer())
    fail(meta_file, "missing integer field 'n_regions'");
  if (!meta.contains("units") || meta["units"] != "km")
    fail(meta_file, "field 'units' must be \"km\"");
  area.area_id = meta["area_id"].get<std::string>();
  const int meta_n = meta["n_regions"].get<int>();

  // features.csv fixes the canonical region order.
  const fs::path feat_file = area_dir / "features.csv";
  const auto feat_lines = read_lines(feat_file);
  if (feat_lines.empty() || feat_lines[0] != features_header())
    fail(feat_file, 1, "unexpected header (expected '" + features_header() + "')");
  for (std::size_t li = 1; li < feat_lines.size(); ++li) {
    const auto fields = text::split_csv_line(feat_lines[li]);
    if (static_cast<int>(fields.size()) != 1 + kRegionFeatureDims)
      fail(feat_file, li + 1, "expected " + std::to_string(1 + kRegionFeatureDims) + " fields, got " +
                                  std::to_string(fields.size()));
    RegionFeatures r;
    r.region_id = fields[0];
    r.demographics.resize(kDemographicDims);
    r.poi_counts.resize(kPoiDims);
    for (int d = 0; d < kDemographicDims; ++d)
      r.demographics[d] = parse_value(feat_file, li + 1, fields[1 + d]);
    for (int p = 0; p < kPoiDims; ++p)
      r.poi_counts[p] = parse_value(feat_file, li + 1, fields[1 + kDemographicDims + p]);
    area.regions.push_back(std::move(r));
  }
  if (static_cast<int>(area.regions.size()) != meta_n)
    fail(feat_file, "has " + std::to_string(area.regions.size()) + " regions but meta.json declares " +
                        std::to_string(meta_n));
  {
    std::set<std::string> seen;
    for (const auto& r : area.regions)
      if (!seen.insert(r.region_id).second)
        fail(feat_file, "duplicate region id '" + r.region_id + "'");
  }

  // centroids.csv must list the same regions in the same order.
  const fs::path cent_file = area_dir / "centroids.csv";
  const auto cent_lines = read_lines(cent_file);
  if (cent_lines.empty() || cent_lines[0] != "region_id,x_km,y_km")
    fail(cent_file, 1, "unexpected header (expected 'region_id,x_km,y_km')");
  if (cent_lines.size() != area.regions.size() + 1)
    fail(cent_file, "expected " + std::to_string(area.regions.size()) + " centroid rows, got " +
                        std::to_string(cent_lines.size() - 1));
  for (std::size_t li = 1; li < cent_lines.size(); ++li) {
    const auto fields = text::split_csv_line(cent_lines[li]);
    if (fields.size() != 3) fail(cent_file, li + 1, "expected 3 fields");
    auto& r = area.regions[li - 1];
    if (fields[0] != r.region_id)
      fail(cent_file, li + 1,
           "region id '" + fields[0] + "' does not match features.csv order ('" + r.region_id + "')");
    r.centroid_x_km = parse_value(cent_file, li + 1, fields[1]);
    r.centroid_y_km = parse_value(cent_file, li + 1, fields[2]);
  }

  // distances.csv is optional and overrides centroid-derived distances.
  const fs::path dist_file = area_dir / "distances.csv";
  const int n = static_cast<int>(area.regions.size());
  if (fs::exists(dist_file)) {
    const auto dist_lines = read_lines(dist_file);
    std::string expected_header = "region_id";
    for (const auto& r : area.regions) expected_header += "," + r.region_id;
    if (dist_lines.empty() || dist_lines[0] != expected_header)
      fail(dist_file, 1, "header must list all region ids in canonical order");
    if (dist_lines.size() != area.regions.size() + 1)
      fail(dist_file, "expected " + std::to_string(area.regions.size()) + " rows");
    area.distances_km.resize(n, n);
    for (std::size_t li = 1; li < dist_lines.size(); ++li) {
      const auto fields = text::split_csv_line(dist_lines[li]);
      if (static_cast<int>(fields.size()) != n + 1) fail(dist_file, li + 1, "wrong field count");
      if (fields[0] != area.regions[li - 1].region_id)
        fail(dist_file, li + 1, "row order must match features.csv");
      for (int j = 0; j < n; ++j) {
        const double v = parse_value(dist_file, li + 1, fields[1 + j]);
        if (!(v >= 0.0) || !std::isfinite(v))
          fail(dist_file, li + 1, "distance for pair (" + fields[0] + "," + area.regions[j].region_id +
                                      ") must be finite and nonnegative");
        area.distances_km(static_cast<int>(li) - 1, j) = v;
      }
    }
    area.explicit_distances = true;
  } else {
    std::vector<std::pair<double, double>> pts;
    pts.reserve(area.regions.size());
    for (const auto& r : area.regions) pts.emplace_back(r.centroid_x_km, r.centroid_y_km);
    area.distances_km = compute_distance_matrix(pts);
    area.explicit_distances = false;
  }

  area.validate();
  return area;
}

ODMatrix load_od_csv(const fs::path& file, const AreaSpatialCharacteristics& area) {
  const auto lines = read_lines(file);
  if (lines.empty() || lines[0] != "origin_id,destination_id,flow")
    fail(file, 1, "unexpected header (expected 'origin_id,destination_id,flow')");

  const int n = area.n_regions();
  ODMatrix od;
  od.flows = Matrix::Zero(n, n);
  Eigen::MatrixX<bool> seen = Eigen::MatrixX<bool>::Constant(n, n, false);

  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto fields = text::split_csv_line(lines[li]);
    if (fields.size() != 3) fail(file, li + 1, "expected 3 fields");
    const int i = area.index_of(fields[0]);
    const int j = area.index_of(fields[1]);
    if (i < 0) fail(file, li + 1, "unknown origin region '" + fields[0] + "'");
    if (j < 0) fail(file, li + 1, "unknown destination region '" + fields[1] + "'");
    const double flow = parse_value(file, li + 1, fields[2]);
    if (!std::isfinite(flow) || flow < 0.0)
      fail(file, li + 1,
           "flow for pair (" + fields[0] + "," + fields[1] + ") must be finite and nonnegative");
    if (seen(i, j)) fail(file, li + 1, "duplicate pair (" + fields[0] + "," + fields[1] + ")");
    seen(i, j) = true;
    od.flows(i, j) = flow;
  }
  return od;
}

LoadedArea load_area(const fs::path& area_dir) {
  LoadedArea la;
  la.area = load_area_features(area_dir);
  la.od = load_od_csv(area_dir / "od.csv", la.area);
  return la;
}

// ---------------------------------------------------------------------------
// Saving
// ---------------------------------------------------------------------------

void save_od_csv(const fs::path& file, const AreaSpatialCharacteristics& area, const ODMatrix& od) {
  const int n = area.n_regions();
  if (od.n_regions() != n)
    throw InvalidInputError("OD matrix size does not match area '" + area.area_id + "'");
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::string out = "origin_id,destination_id,flow\n";
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double f = od.flows(i, j);
      if (f > 0.0) {
        out += area.regions[i].region_id;
        out += ',';
        out += area.regions[j].region_id;
        out += ',';
        out += text::format_double(f);
        out += '\n';
      }
    }
  }
  write_file(file, out);
}

void save_area(const fs::path& area_dir, const AreaSpatialCharacteristics& area, const ODMatrix* od) {
  area.validate();
  for (const auto& r : area.regions) check_region_id(r.region_id);
  fs::create_directories(area_dir);

  json meta;
  meta["area_id"] = area.area_id;
  meta["n_regions"] = area.n_regions();
  meta["units"] = "km";
  write_file(area_dir / "meta.json", meta.dump(2) + "\n");

  std::string feats = features_header() + "\n";
  for (const auto& r : area.regions) {
    feats += r.region_id;
    for (int d = 0; d < kDemographicDims; ++d) feats += "," + text::format_double(r.demographics[d]);
    for (int p = 0; p < kPoiDims; ++p) feats += "," + text::format_double(r.poi_counts[p]);
    feats += '\n';
  }
  write_file(area_dir / "features.csv", feats);

  std::string cents = "region_id,x_km,y_km\n";
  for (const auto& r : area.regions) {
    cents += r.region_id;
    cents += "," + text::format_double(r.centroid_x_km);
    cents += "," + text::format_double(r.centroid_y_km);
    cents += '\n';
  }
  write_file(area_dir / "centroids.csv", cents);

  if (area.explicit_distances) {
    std::string dists = "region_id";
    for (const auto& r : area.regions) dists += "," + r.region_id;
    dists += '\n';
    for (int i = 0; i < area.n_regions(); ++i) {
      dists += area.regions[i].region_id;
      for (int j = 0; j < area.n_regions(); ++j)
        dists += "," + text::format_double(area.distances_km(i, j));
      dists += '\n';
    }
    write_file(area_dir / "distances.csv", dists);
  }

  if (od != nullptr) save_od_csv(area_dir / "od.csv", area, *od);
}

// ---------------------------------------------------------------------------
// Corpus indexing and splitting
// ---------------------------------------------------------------------------

std::vector<AreaIndexEntry> index_corpus(const fs::path& corpus_dir) {
  if (!fs::is_directory(corpus_dir))
    throw LoadError(corpus_dir.string() + ": not a directory");
  std::vector<AreaIndexEntry> index;
  for (const auto& entry : fs::directory_iterator(corpus_dir)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.rfind("area_", 0) != 0) continue;
    const fs::path meta_file = entry.path() / "meta.json";
    if (!fs::exists(meta_file)) fail(meta_file, "missing (directory looks like an area)");
    const json meta = load_json(meta_file);
    AreaIndexEntry e;
    e.dir = entry.path();
    if (!meta.contains("area_id") || !meta["area_id"].is_string())
      fail(meta_file, "missing string field 'area_id'");
    e.area_id = meta["area_id"].get<std::string>();
    if (name != "area_" + e.area_id)
      fail(meta_file, "area_id '" + e.area_id + "' does not match directory name '" + name + "'");
    if (!meta.contains("n_regions") || !meta["n_regions"].is_number_integer())
      fail(meta_file, "missing integer field 'n_regions'");
    e.n_regions = meta["n_regions"].get<int>();
    index.push_back(std::move(e));
  }
  std::sort(index.begin(), index.end(),
            [](const AreaIndexEntry& a, const AreaIndexEntry& b) { return a.area_id < b.area_id; });
  for (std::size_t i = 1; i < index.size(); ++i)
    if (index[i].area_id == index[i - 1].area_id)
      throw LoadError(corpus_dir.string() + ": duplicate area_id '" + index[i].area_id + "'");
  return index;
}

const AreaIndexEntry* find_area(const std::vector<AreaIndexEntry>& index, const std::string& area_id) {
  for (const auto& e : index)
    if (e.area_id == area_id) return &e;
  return nullptr;
}

bool SplitFilter::admits(const AreaIndexEntry& e) const {
  if (min_regions && e.n_regions < *min_regions) return false;
  if (max_regions && e.n_regions > *max_regions) return false;
  if (labels) {
    const auto it = label_of.find(e.area_id);
    if (it == label_of.end() || labels->count(it->second) == 0) return false;
  }
  return true;
}

const std::vector<std::string>& CorpusSplit::subset(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw InvalidInputError("unknown split subset '" + name + "' (expected train/val/test)");
}

CorpusSplit split_corpus(const std::vector<AreaIndexEntry>& areas, std::array<double, 3> ratios,
                         std::uint64_t seed, const SplitFilter& filter) {
  const double ratio_sum = ratios[0] + ratios[1] + ratios[2];
  if (!(std::abs(ratio_sum - 1.0) <= 1e-9))
    throw InvalidInputError("split ratios must sum to 1");
  for (const double r : ratios)
    if (r < 0.0) throw InvalidInputError("split ratios must be nonnegative");

  std::vector<std::string> ids;
  for (const auto& e : areas)
    if (filter.admits(e)) ids.push_back(e.area_id);
  std::sort(ids.begin(), ids.end());

  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  const auto n = static_cast<std::size_t>(ids.size());
  std::size_t n_train = static_cast<std::size_t>(ratios[0] * static_cast<double>(n));
  const std::size_t n_val = static_cast<std::size_t>(ratios[1] * static_cast<double>(n));
  const std::size_t n_test = static_cast<std::size_t>(ratios[2] * static_cast<double>(n));
  n_train += n - (n_train + n_val + n_test);  // remainder goes to train

  CorpusSplit split;
  split.seed = seed;
  split.ratios = ratios;
  split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                   ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  return split;
}

void save_split(const fs::path& file, const CorpusSplit& split) {
  json j;
  j["seed"] = split.seed;
  j["ratios"] = split.ratios;
  j["train"] = split.train;
  j["val"] = split.val;
  j["test"] = split.test;
  write_file(file, j.dump(2) + "\n");
}

CorpusSplit load_split(const fs::path& file) {
  const json j = load_json(file);
  CorpusSplit split;
  try {
    split.seed = j.at("seed").get<std::uint64_t>();
    split.ratios = j.at("ratios").get<std::array<double, 3>>();
    split.train = j.at("train").get<std::vector<std::string>>();
    split.val = j.at("val").get<std::vector<std::string>>();
    split.test = j.at("test").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(file, std::string("invalid split file: ") + e.what());
  }
  return split;
}

std::map<std::string, std::string> load_labels(const fs::path& file) {
  const auto lines = read_lines(file);
  if (lines.empty() || lines[0] != "area_id,label")
    fail(file, 1, "unexpected header (expected 'area_id,label')");
  std::map<std::string, std::string> labels;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto fields = text::split_csv_line(lines[li]);
    if (fields.size() != 2) fail(file, li + 1, "expected 2 fields");
    if (!labels.emplace(fields[0], fields[1]).second)
      fail(file, li + 1, "duplicate area_id '" + fields[0] + "'");
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Feature scaling
// ---------------------------------------------------------------------------

FeatureScaler FeatureScaler::fit(const std::vector<const AreaSpatialCharacteristics*>& train_areas) {
  long total_rows = 0;
  for (const auto* a : train_areas) total_rows += a->n_regions();
  if (total_rows == 0) throw InvalidInputError("feature scaler needs at least one training region");

  Matrix pooled(total_rows, kRegionFeatureDims);
  long row = 0;
  for (const auto* a : train_areas) {
    pooled.middleRows(row, a->n_regions()) = a->feature_matrix();
    row += a->n_regions();
  }

  FeatureScaler s;
  s.mean = pooled.colwise().mean();
  Matrix centered = pooled.rowwise() - s.mean.transpose();
  s.std = (centered.array().square().colwise().mean()).sqrt();
  for (int c = 0; c < s.std.size(); ++c)
    if (s.std[c] < 1e-8) s.std[c] = 1.0;  // constant columns map to exactly zero
  return s;
}

Matrix FeatureScaler::apply(const Matrix& raw_features) const {
  if (raw_features.cols() != mean.size())
    throw InvalidInputError("feature matrix width does not match scaler");
  return (raw_features.rowwise() - mean.transpose()).array().rowwise() /
         std.transpose().array();
}

Matrix FeatureScaler::apply(const AreaSpatialCharacteristics& area) const {
  return apply(area.feature_matrix());
}

Matrix FeatureScaler::invert(const Matrix& scaled_features) const {
  if (scaled_features.cols() != mean.size())
    throw InvalidInputError("feature matrix width does not match scaler");
  return (scaled_features.array().rowwise() * std.transpose().array()).matrix().rowwise() +
         mean.transpose();
}

// ---------------------------------------------------------------------------
// Synthetic areas
// ---------------------------------------------------------------------------

void SyntheticAreaSpec::validate() const {
  if (n_regions < 1) throw InvalidInputError("synthetic area needs at least one region");
  if (!(mass_range.first > 0.0) || !(mass_range.second >= mass_range.first))
    throw InvalidInputError("mass range must satisfy 0 < lo <= hi");
  if (!(extent_km > 0.0)) throw InvalidInputError("extent must be positive");
  if (noise_level < 0.0) throw InvalidInputError("noise level must be nonnegative");
  gravity.validate();
}

LoadedArea generate_synthetic_area(const SyntheticAreaSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> coord(0.0, spec.extent_km);
  std::uniform_real_distribution<double> mass(spec.mass_range.first, spec.mass_range.second);
  std::uniform_real_distribution<double> filler(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  LoadedArea la;
  la.area.area_id = spec.area_id;
  la.area.regions.resize(spec.n_regions);

  // Fixed draw order: centroids, then masses, then filler features, then
  // per-pair noise. Changing this order would change generated corpora.
  const int width = std::max<int>(3, static_cast<int>(std::to_string(spec.n_regions - 1).size()));
  for (int i = 0; i < spec.n_regions; ++i) {
    auto& r = la.area.regions[i];
    std::string num = std::to_string(i);
    const int pad = width - static_cast<int>(num.size());
    r.region_id = "r" + std::string(static_cast<std::size_t>(std::max(0, pad)), '0') + num;
    r.centroid_x_km = coord(rng);
    r.centroid_y_km = coord(rng);
  }
  Vector masses(spec.n_regions);
  for (int i = 0; i < spec.n_regions; ++i) masses[i] = mass(rng);
  // The non-mass attribute columns scale with the region's population mass,
  // each with an independent multiplicative jitter. Real regional covariates
  // (employment, dwellings, shop counts) track population size; generating
  // them as independent noise instead would hand a conditional model a unique
  // per-region fingerprint that rewards memorising regions rather than
  // learning how attributes relate to flows.
  for (int i = 0; i < spec.n_regions; ++i) {
    auto& r = la.area.regions[i];
    r.demographics.resize(kDemographicDims);
    r.demographics[0] = masses[i];
    for (int d = 1; d < kDemographicDims; ++d)
      r.demographics[d] = masses[i] * (0.8 + 0.4 * filler(rng));
    r.poi_counts.resize(kPoiDims);
    for (int p = 0; p < kPoiDims; ++p)
      r.poi_counts[p] = masses[i] * (0.8 + 0.4 * filler(rng));
  }

  std::vector<std::pair<double, double>> pts;
  pts.reserve(la.area.regions.size());
  for (const auto& r : la.area.regions) pts.emplace_back(r.centroid_x_km, r.centroid_y_km);
  la.area.distances_km = compute_distance_matrix(pts);
  la.area.explicit_distances = false;
  la.area.validate();

  la.od = gravity_predict(spec.gravity, masses, la.area.distances_km);
  if (spec.noise_level > 0.0) {
    for (int i = 0; i < spec.n_regions; ++i)
      for (int j = 0; j < spec.n_regions; ++j)
        la.od.flows(i, j) *= std::exp(spec.noise_level * gauss(rng));
  }
  la.od.flows = la.od.flows.cwiseMax(0.0);
  return la;
}

// ---------------------------------------------------------------------------
// Corpus statistics
// ---------------------------------------------------------------------------

CorpusStats corpus_stats(const std::vector<LoadedArea>& areas) {
  if (areas.empty()) throw InvalidInputError("corpus statistics need at least one area");

  CorpusStats stats;
  std::vector<double> edge_weights;
  std::vector<double> inflows;
  std::vector<double> outflows;

  for (const auto& la : areas) {
    const int n = la.area.n_regions();
    AreaStats as;
    as.area_id = la.area.area_id;
    as.n_regions = n;

    const double total = la.od.total();
    if (total > 0.0) {
      as.avg_trip_distance_km =
          (la.od.flows.array() * la.area.distances_km.array()).sum() / total;
    } else {
      ++stats.n_areas_without_flow;
    }

    const Vector in = la.od.flows.colwise().sum();
    const Vector out = la.od.flows.rowwise().sum();
    const auto pop_var = [](const Vector& v) {
      const double m = v.mean();
      return (v.array() - m).square().mean();
    };
    as.inflow_variance = pop_var(in);
    as.outflow_variance = pop_var(out);

    stats.per_area.push_back(std::move(as));
    stats.region_count_hist[n] += 1;

    for (int i = 0; i < n; ++i) {
      inflows.push_back(in[i]);
      outflows.push_back(out[i]);
      for (int j = 0; j < n; ++j) edge_weights.push_back(la.od.flows(i, j));
    }
  }

  // Corpus distributions start at 2^0 = 1; sub-1 positives clamp into the
  // first positive bin and exact zeros occupy the zero bin.
  stats.edge_weight_hist = log2_histogram(edge_weights, 0, 40, 0.0);
  stats.inflow_hist = log2_histogram(inflows, 0, 40, 0.0);
  stats.outflow_hist = log2_histogram(outflows, 0, 40, 0.0);
  return stats;
}

void save_stats_json(const fs::path& file, const CorpusStats& stats) {
  json j;
  j["n_areas"] = stats.per_area.size();
  j["n_areas_without_flow"] = stats.n_areas_without_flow;

  json per_area = json::array();
  for (const auto& as : stats.per_area) {
    json a;
    a["area_id"] = as.area_id;
    a["n_regions"] = as.n_regions;
    if (as.avg_trip_distance_km)
      a["avg_trip_distance_km"] = *as.avg_trip_distance_km;
    else
      a["avg_trip_distance_km"] = nullptr;
    a["inflow_variance"] = as.inflow_variance;
    a["outflow_variance"] = as.outflow_variance;
    per_area.push_back(std::move(a));
  }
  j["per_area"] = std::move(per_area);

  json rc = json::object();
  for (const auto& [n, count] : stats.region_count_hist) rc[std::to_string(n)] = count;
  j["region_count_hist"] = std::move(rc);

  const auto hist_json = [](const Log2Histogram& h) {
    json out;
    out["kmin"] = h.kmin;
    out["kmax"] = h.kmax;
    out["mass"] = h.mass;
    return out;
  };
  j["edge_weight_hist"] = hist_json(stats.edge_weight_hist);
  j["inflow_hist"] = hist_json(stats.inflow_hist);
  j["outflow_hist"] = hist_json(stats.outflow_hist);

  write_file(file, j.dump(2) + "\n");
}

}  // namespace odgen
