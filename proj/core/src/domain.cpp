#include "odgen/domain.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace odgen {

bool all_finite(const Matrix& m) { return m.allFinite(); }

void RegionFeatures::validate() const {
  if (demographics.size() != kDemographicDims) {
    throw InvalidInputError("region '" + region_id + "': expected " +
                            std::to_string(kDemographicDims) + " demographic values, got " +
                            std::to_string(demographics.size()));
  }
  if (poi_counts.size() != kPoiDims) {
    throw InvalidInputError("region '" + region_id + "': expected " + std::to_string(kPoiDims) +
                            " POI counts, got " + std::to_string(poi_counts.size()));
  }
  if (!demographics.allFinite() || !poi_counts.allFinite()) {
    throw InvalidInputError("region '" + region_id + "': non-finite feature value");
  }
  if ((poi_counts.array() < 0.0).any()) {
    throw InvalidInputError("region '" + region_id + "': negative POI count");
  }
  if (!std::isfinite(centroid_x_km) || !std::isfinite(centroid_y_km)) {
    throw InvalidInputError("region '" + region_id + "': non-finite centroid");
  }
}

Vector RegionFeatures::concatenated() const {
  Vector out(kRegionFeatureDims);
  out.head(kDemographicDims) = demographics;
  out.tail(kPoiDims) = poi_counts;
  return out;
}

void AreaSpatialCharacteristics::validate() const {
  const int n = n_regions();
  if (n < 1) throw InvalidInputError("area '" + area_id + "': needs at least one region");

  std::unordered_set<std::string> seen;
  for (const auto& r : regions) {
    r.validate();
    if (!seen.insert(r.region_id).second) {
      throw InvalidInputError("area '" + area_id + "': duplicate region_id '" + r.region_id + "'");
    }
  }

  if (distances_km.rows() != n || distances_km.cols() != n) {
    throw InvalidInputError("area '" + area_id + "': distance matrix shape mismatch");
  }
  if (!distances_km.allFinite()) {
    throw InvalidInputError("area '" + area_id + "': non-finite distance");
  }
  if ((distances_km.array() < 0.0).any()) {
    throw InvalidInputError("area '" + area_id + "': negative distance");
  }
  if (distances_km.diagonal().cwiseAbs().maxCoeff() > 0.0) {
    throw InvalidInputError("area '" + area_id + "': nonzero distance diagonal");
  }
  if (!distances_km.isApprox(distances_km.transpose(), 1e-12)) {
    throw InvalidInputError("area '" + area_id + "': distance matrix not symmetric");
  }
}

int AreaSpatialCharacteristics::index_of(const std::string& region_id) const {
  for (int i = 0; i < n_regions(); ++i) {
    if (regions[static_cast<size_t>(i)].region_id == region_id) return i;
  }
  return -1;
}

Matrix AreaSpatialCharacteristics::feature_matrix() const {
  Matrix out(n_regions(), kRegionFeatureDims);
  for (int i = 0; i < n_regions(); ++i) {
    out.row(i) = regions[static_cast<size_t>(i)].concatenated().transpose();
  }
  return out;
}

Vector AreaSpatialCharacteristics::feature_column(int column) const {
  if (column < 0 || column >= kRegionFeatureDims) {
    throw InvalidInputError("feature column " + std::to_string(column) + " out of range");
  }
  Vector out(n_regions());
  for (int i = 0; i < n_regions(); ++i) {
    const auto& r = regions[static_cast<size_t>(i)];
    out[i] = column < kDemographicDims ? r.demographics[column]
                                       : r.poi_counts[column - kDemographicDims];
  }
  return out;
}

void ODMatrix::validate() const {
  if (flows.rows() != flows.cols()) throw InvalidInputError("OD matrix is not square");
  if (!flows.allFinite()) throw InvalidInputError("OD matrix has a non-finite entry");
  if ((flows.array() < 0.0).any()) throw InvalidInputError("OD matrix has a negative flow");
}

Matrix compute_distance_matrix(const std::vector<std::pair<double, double>>& centroids) {
  const int n = static_cast<int>(centroids.size());
  if (n < 1) throw InvalidInputError("compute_distance_matrix: no centroids");
  for (const auto& [x, y] : centroids) {
    if (!std::isfinite(x) || !std::isfinite(y)) {
      throw InvalidInputError("compute_distance_matrix: non-finite coordinate");
    }
  }
  Matrix d = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double dx = centroids[static_cast<size_t>(i)].first - centroids[static_cast<size_t>(j)].first;
      const double dy = centroids[static_cast<size_t>(i)].second - centroids[static_cast<size_t>(j)].second;
      const double dist = std::hypot(dx, dy);
      d(i, j) = dist;
      d(j, i) = dist;
    }
  }
  return d;
}

AttributedGraph build_area_graph(const AreaSpatialCharacteristics& area, const ODMatrix* od) {
  area.validate();
  AttributedGraph g;
  g.node_features = area.feature_matrix();
  g.distances = area.distances_km;
  if (od != nullptr) {
    od->validate();
    if (od->n_regions() != area.n_regions()) {
      throw InvalidInputError("build_area_graph: OD matrix is " + std::to_string(od->n_regions()) +
                              "x" + std::to_string(od->n_regions()) + " but area has " +
                              std::to_string(area.n_regions()) + " regions");
    }
    g.edge_weights = od->flows;
  }
  return g;
}

bool ODValidationReport::pass() const {
  for (const auto& c : checks) {
    if (!c.ok) return false;
  }
  return true;
}

std::string ODValidationReport::summary() const {
  std::ostringstream os;
  for (const auto& c : checks) {
    os << (c.ok ? "pass" : "FAIL") << "  " << c.name;
    if (!c.ok && !c.detail.empty()) os << ": " << c.detail;
    os << '\n';
  }
  return os.str();
}

ODValidationReport validate_od_matrix(const Matrix& flows, int n_regions) {
  ODValidationReport report;
  auto& checks = report.checks;

  {
    ODValidationReport::Check c{"square", flows.rows() == flows.cols(), ""};
    if (!c.ok) {
      c.detail = std::to_string(flows.rows()) + "x" + std::to_string(flows.cols());
    }
    checks.push_back(std::move(c));
  }
  {
    ODValidationReport::Check c{"dimension matches area", flows.rows() == n_regions, ""};
    if (!c.ok) {
      c.detail = "matrix has " + std::to_string(flows.rows()) + " rows, area has " +
                 std::to_string(n_regions) + " regions";
    }
    checks.push_back(std::move(c));
  }
  {
    ODValidationReport::Check c{"nonnegative", true, ""};
    for (Eigen::Index i = 0; i < flows.rows() && c.ok; ++i) {
      for (Eigen::Index j = 0; j < flows.cols(); ++j) {
        if (flows(i, j) < 0.0) {
          c.ok = false;
          c.detail = "negative flow at (" + std::to_string(i) + "," + std::to_string(j) + ")";
          break;
        }
      }
    }
    checks.push_back(std::move(c));
  }
  {
    ODValidationReport::Check c{"finite", flows.allFinite(), ""};
    if (!c.ok) c.detail = "matrix contains NaN or infinity";
    checks.push_back(std::move(c));
  }
  return report;
}

}  // namespace odgen
