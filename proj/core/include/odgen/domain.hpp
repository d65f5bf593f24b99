#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace odgen {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Regional feature layout: 97 demographic dimensions followed by 36
// point-of-interest category counts, 133 columns total. Every feature
// matrix in the toolkit uses this column order.
inline constexpr int kDemographicDims = 97;
inline constexpr int kPoiDims = 36;
inline constexpr int kRegionFeatureDims = kDemographicDims + kPoiDims;

struct InvalidInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Attributes of a single region: demographic vector, POI category counts,
/// and the planar centroid in kilometers.
struct RegionFeatures {
  std::string region_id;
  Vector demographics;  // length kDemographicDims
  Vector poi_counts;    // length kPoiDims, elementwise >= 0
  double centroid_x_km = 0.0;
  double centroid_y_km = 0.0;

  /// Throws InvalidInputError when an invariant is violated.
  void validate() const;

  /// [demographics | poi_counts], length kRegionFeatureDims.
  Vector concatenated() const;
};

/// Spatial characteristics of one area: the ordered list of regions and the
/// pairwise centroid distance matrix in kilometers.
///
/// Region order is canonical. The i-th region indexes row/column i of every
/// matrix associated with the area (distances, OD flows, node features).
struct AreaSpatialCharacteristics {
  std::string area_id;
  std::vector<RegionFeatures> regions;
  Matrix distances_km;  // N x N, symmetric, zero diagonal, nonnegative
  // Set when the distances were supplied explicitly rather than computed
  // from centroids; save_area re-emits a distances.csv in that case.
  bool explicit_distances = false;

  int n_regions() const { return static_cast<int>(regions.size()); }
  void validate() const;

  /// Index of a region id in canonical order, or -1 when absent.
  int index_of(const std::string& region_id) const;

  /// Raw node feature matrix, N x 133.
  Matrix feature_matrix() const;

  /// One feature column across regions (mass lookup for gravity models).
  Vector feature_column(int column) const;
};

/// Dense origin-destination matrix. flows(i, j) is the number of commuters
/// residing in region i and working in region j; the diagonal is a legal
/// live-and-work-in-place entry. Stored as reals: generated matrices are
/// continuous before optional rounding.
struct ODMatrix {
  Matrix flows;

  int n_regions() const { return static_cast<int>(flows.rows()); }
  double total() const { return flows.sum(); }
  void validate() const;
};

/// An area with its observed OD matrix.
struct LoadedArea {
  AreaSpatialCharacteristics area;
  ODMatrix od;
};

/// Graph view of an area: regions become attributed nodes, flows become
/// directed weighted edges. edge_weights is absent for generation targets.
struct AttributedGraph {
  Matrix node_features;                // N x D
  std::optional<Matrix> edge_weights;  // N x N when observed
  Matrix distances;                    // N x N

  int n_nodes() const { return static_cast<int>(node_features.rows()); }
};

/// Pairwise planar Euclidean distances between centroids, in the unit of the
/// coordinates (kilometers throughout the toolkit).
Matrix compute_distance_matrix(const std::vector<std::pair<double, double>>& centroids);

/// Builds the attributed directed weighted graph of an area. Node feature
/// row i is [demographics_i | poi_counts_i]; edge weights come from `od`
/// when present; distances are copied from the area.
AttributedGraph build_area_graph(const AreaSpatialCharacteristics& area,
                                 const ODMatrix* od = nullptr);

/// Report-style OD matrix validation. Never throws; callers inspect the
/// per-invariant results.
struct ODValidationReport {
  struct Check {
    std::string name;
    bool ok = false;
    std::string detail;
  };
  std::vector<Check> checks;

  bool pass() const;
  std::string summary() const;
};

ODValidationReport validate_od_matrix(const Matrix& flows, int n_regions);

/// Shared helper: true when every entry is finite.
bool all_finite(const Matrix& m);

}  // namespace odgen
