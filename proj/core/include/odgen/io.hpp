#pragma once

#include "odgen/domain.hpp"
#include "odgen/gravity.hpp"
#include "odgen/hist.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace odgen {

struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Area directory format
//
// area_<id>/
//   meta.json       {"area_id": ..., "n_regions": N, "units": "km"}
//   features.csv    header: region_id,d0..d96,p0..p35
//   centroids.csv   header: region_id,x_km,y_km
//   od.csv          header: origin_id,destination_id,flow   (absent pairs = 0)
//   distances.csv   optional full matrix with region_id header row/column;
//                   when present it overrides centroid-derived distances
//
// All files are UTF-8 CSV with '.' as the decimal separator. The row order
// of features.csv is the canonical region order.
// ---------------------------------------------------------------------------

/// Loads the spatial characteristics of one area (everything except od.csv).
AreaSpatialCharacteristics load_area_features(const std::filesystem::path& area_dir);

/// Loads a full area. od.csv triples are expanded to a dense N x N matrix
/// with zeros for absent pairs. Errors name the offending file and line.
LoadedArea load_area(const std::filesystem::path& area_dir);

/// Writes an area in the canonical on-disk format. Re-loading and re-saving
/// produces byte-identical files. distances.csv is written only when the
/// area carries explicit distances.
void save_area(const std::filesystem::path& area_dir, const AreaSpatialCharacteristics& area,
               const ODMatrix* od);

/// Writes just an od.csv (triples of positive flows in canonical order).
void save_od_csv(const std::filesystem::path& file, const AreaSpatialCharacteristics& area,
                 const ODMatrix& od);

/// Reads an od.csv against a known region order.
ODMatrix load_od_csv(const std::filesystem::path& file, const AreaSpatialCharacteristics& area);

// ---------------------------------------------------------------------------
// Corpus indexing and splitting
// ---------------------------------------------------------------------------

struct AreaIndexEntry {
  std::string area_id;
  std::filesystem::path dir;
  int n_regions = 0;
};

/// Scans a corpus directory for area_<id>/ subdirectories and reads their
/// meta.json. Entries are sorted by area_id so downstream seeded operations
/// do not depend on filesystem iteration order.
std::vector<AreaIndexEntry> index_corpus(const std::filesystem::path& corpus_dir);

const AreaIndexEntry* find_area(const std::vector<AreaIndexEntry>& index,
                                const std::string& area_id);

/// Membership restriction applied before splitting (region-count bands or an
/// explicit label set; labels come from a user-supplied labels.csv).
struct SplitFilter {
  std::optional<int> min_regions;  // inclusive
  std::optional<int> max_regions;  // inclusive
  std::optional<std::set<std::string>> labels;
  std::map<std::string, std::string> label_of;  // area_id -> label

  bool admits(const AreaIndexEntry& e) const;
};

struct CorpusSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
  std::array<double, 3> ratios{0.8, 0.1, 0.1};

  const std::vector<std::string>& subset(const std::string& name) const;
};

/// Seeded shuffle split. Subset sizes are floor(ratio * n) with remainders
/// assigned train-first. Deterministic in (areas, ratios, seed, filter).
CorpusSplit split_corpus(const std::vector<AreaIndexEntry>& areas,
                         std::array<double, 3> ratios, std::uint64_t seed,
                         const SplitFilter& filter = {});

void save_split(const std::filesystem::path& file, const CorpusSplit& split);
CorpusSplit load_split(const std::filesystem::path& file);

/// labels.csv: header area_id,label
std::map<std::string, std::string> load_labels(const std::filesystem::path& file);

// ---------------------------------------------------------------------------
// Feature scaling
// ---------------------------------------------------------------------------

/// Per-column z-score statistics fitted over all training-set regions
/// pooled. Columns with std below 1e-8 scale by 1 so constant features map
/// to exactly zero.
struct FeatureScaler {
  Vector mean;  // width kRegionFeatureDims
  Vector std;   // entries > 0

  static FeatureScaler fit(const std::vector<const AreaSpatialCharacteristics*>& train_areas);

  Matrix apply(const Matrix& raw_features) const;
  Matrix apply(const AreaSpatialCharacteristics& area) const;
  Matrix invert(const Matrix& scaled_features) const;
};

// ---------------------------------------------------------------------------
// Synthetic areas
// ---------------------------------------------------------------------------

/// Recipe for one synthetic area: centroids uniform in [0, extent_km]^2,
/// a population mass in demographics column 0 drawn from mass_range, the
/// other feature columns uniform noise, and flows from the planted gravity
/// parameters times lognormal noise exp(noise_level * z), z ~ N(0,1).
struct SyntheticAreaSpec {
  std::string area_id = "synthetic";
  int n_regions = 2;
  std::pair<double, double> mass_range{10.0, 100.0};
  double extent_km = 20.0;
  GravityParams gravity;
  double noise_level = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

LoadedArea generate_synthetic_area(const SyntheticAreaSpec& spec);

// ---------------------------------------------------------------------------
// Corpus statistics
// ---------------------------------------------------------------------------

struct AreaStats {
  std::string area_id;
  int n_regions = 0;
  // Flow-weighted mean trip distance; empty when the area has no flow at all.
  std::optional<double> avg_trip_distance_km;
  double inflow_variance = 0.0;   // population variance over regions
  double outflow_variance = 0.0;
};

struct CorpusStats {
  std::vector<AreaStats> per_area;
  std::map<int, int> region_count_hist;
  // Corpus-level distributions. Edge weights use log2 bins from 1 upward
  // (sub-1 positives clamp into the first bin); zeros are counted separately
  // in the zero bin of the histogram.
  Log2Histogram edge_weight_hist;
  Log2Histogram inflow_hist;
  Log2Histogram outflow_hist;
  int n_areas_without_flow = 0;
};

CorpusStats corpus_stats(const std::vector<LoadedArea>& areas);

void save_stats_json(const std::filesystem::path& file, const CorpusStats& stats);

}  // namespace odgen
