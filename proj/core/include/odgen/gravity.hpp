#pragma once

#include "odgen/domain.hpp"

#include <string>
#include <vector>

namespace odgen {

enum class DecayKind { Power, Exponential };

std::string to_string(DecayKind kind);
DecayKind decay_kind_from_string(const std::string& s);

struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The four calibrated gravity-model parameters: predicted flow is
///   F_ij = scale * m_i^origin_exp * m_j^dest_exp * f(d_ij)
/// with f(d) = d^-decay for power decay and f(d) = exp(-decay * d) for
/// exponential decay.
struct GravityParams {
  double scale = 1.0;       // K > 0
  double origin_exp = 1.0;  // alpha
  double dest_exp = 1.0;    // beta
  double decay = 1.0;       // gamma
  DecayKind decay_kind = DecayKind::Power;

  void validate() const;
};

/// Distance actually fed to the decay function. Power decay is singular at
/// d = 0, so zero distances (the diagonal) substitute half the smallest
/// positive distance in the area; exponential decay uses d as-is.
Matrix effective_decay_distances(const Matrix& distances, DecayKind kind);

/// Closed-form gravity prediction for one area. Masses must be strictly
/// positive.
ODMatrix gravity_predict(const GravityParams& params, const Vector& masses,
                         const Matrix& distances);

/// Calibrates the four parameters by ordinary least squares on
///   log F_ij = log K + alpha log m_i + beta log m_j + gamma * g(d_ij)
/// over every pair with F_ij > 0, pooled across the given areas, where
/// g = -log d for power decay and g = -d for exponential decay.
///
/// Throws FitError when no positive flows exist, when a used pair has a
/// nonpositive mass, or when the design matrix is singular (the message
/// names the collinear column).
GravityParams gravity_fit(const std::vector<LoadedArea>& areas, DecayKind decay_kind,
                          int mass_column);

}  // namespace odgen
