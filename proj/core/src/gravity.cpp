#include "odgen/gravity.hpp"

#include <Eigen/QR>

#include <cmath>
#include <limits>

namespace odgen {

std::string to_string(DecayKind kind) {
  return kind == DecayKind::Power ? "power" : "exponential";
}

DecayKind decay_kind_from_string(const std::string& s) {
  if (s == "power") return DecayKind::Power;
  if (s == "exponential" || s == "exp") return DecayKind::Exponential;
  throw InvalidInputError("unknown decay kind '" + s + "' (expected power or exp)");
}

void GravityParams::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw InvalidInputError("gravity scale must be positive and finite");
  }
  if (!std::isfinite(origin_exp) || !std::isfinite(dest_exp) || !std::isfinite(decay)) {
    throw InvalidInputError("gravity exponents must be finite");
  }
}

namespace {

double smallest_positive_distance(const Matrix& d) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
      if (d(i, j) > 0.0 && d(i, j) < best) best = d(i, j);
    }
  }
  return best;
}

}  // namespace

Matrix effective_decay_distances(const Matrix& distances, DecayKind kind) {
  if (kind == DecayKind::Exponential) return distances;
  const double dmin = smallest_positive_distance(distances);
  if (!std::isfinite(dmin)) {
    throw InvalidInputError(
        "power decay needs at least one positive distance to substitute for d=0");
  }
  Matrix out = distances;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      if (out(i, j) <= 0.0) out(i, j) = dmin / 2.0;
    }
  }
  return out;
}

ODMatrix gravity_predict(const GravityParams& params, const Vector& masses,
                         const Matrix& distances) {
  params.validate();
  const int n = static_cast<int>(masses.size());
  if (distances.rows() != n || distances.cols() != n) {
    throw InvalidInputError("gravity_predict: distance matrix shape mismatch");
  }
  if ((masses.array() <= 0.0).any() || !masses.allFinite()) {
    throw InvalidInputError("gravity_predict: masses must be strictly positive");
  }

  const Matrix d = effective_decay_distances(distances, params.decay_kind);
  Vector origin_term(n), dest_term(n);
  for (int i = 0; i < n; ++i) {
    origin_term[i] = std::pow(masses[i], params.origin_exp);
    dest_term[i] = std::pow(masses[i], params.dest_exp);
  }

  ODMatrix od;
  od.flows.resize(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double decay_factor = params.decay_kind == DecayKind::Power
                                      ? std::pow(d(i, j), -params.decay)
                                      : std::exp(-params.decay * d(i, j));
      od.flows(i, j) = params.scale * origin_term[i] * dest_term[j] * decay_factor;
    }
  }
  od.validate();
  return od;
}

GravityParams gravity_fit(const std::vector<LoadedArea>& areas, DecayKind decay_kind,
                          int mass_column) {
  // Row layout: [1, log m_i, log m_j, g(d_ij)] -> target log F_ij.
  std::vector<Eigen::Vector4d> rows;
  std::vector<double> targets;

  for (const auto& la : areas) {
    const Vector masses = la.area.feature_column(mass_column);
    const Matrix& flows = la.od.flows;
    const int n = la.area.n_regions();
    if (flows.rows() != n) {
      throw FitError("gravity_fit: area '" + la.area.area_id + "' OD dimension mismatch");
    }
    if (!(flows.array() > 0.0).any()) continue;
    const Matrix d = effective_decay_distances(la.area.distances_km, decay_kind);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (flows(i, j) <= 0.0) continue;
        if (masses[i] <= 0.0 || masses[j] <= 0.0) {
          throw FitError("gravity_fit: nonpositive mass for region '" +
                         la.area.regions[static_cast<size_t>(masses[i] <= 0.0 ? i : j)].region_id +
                         "' in area '" + la.area.area_id + "'");
        }
        const double g = decay_kind == DecayKind::Power ? -std::log(d(i, j)) : -d(i, j);
        rows.push_back({1.0, std::log(masses[i]), std::log(masses[j]), g});
        targets.push_back(std::log(flows(i, j)));
      }
    }
  }

  if (rows.empty()) throw FitError("gravity_fit: no positive flows in the given areas");

  const auto m = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd design(m, 4);
  Eigen::VectorXd y(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    design.row(r) = rows[static_cast<size_t>(r)].transpose();
    y[r] = targets[static_cast<size_t>(r)];
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < 4) {
    static const char* column_names[4] = {"intercept", "log origin mass",
                                          "log destination mass", "distance decay"};
    // The QR pivot order puts dependent columns last; name the first of them.
    const auto& perm = qr.colsPermutation().indices();
    const int dependent = perm[3];
    throw FitError(std::string("gravity_fit: singular design matrix, column '") +
                   column_names[dependent] + "' is collinear (rank " +
                   std::to_string(qr.rank()) + " of 4, " + std::to_string(m) + " rows)");
  }

  const Eigen::Vector4d coef = qr.solve(y);
  GravityParams params;
  params.scale = std::exp(coef[0]);
  params.origin_exp = coef[1];
  params.dest_exp = coef[2];
  params.decay = coef[3];
  params.decay_kind = decay_kind;
  params.validate();
  return params;
}

}  // namespace odgen
