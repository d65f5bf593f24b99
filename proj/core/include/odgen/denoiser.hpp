#pragma once

#include "odgen/autodiff.hpp"
#include "odgen/domain.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace odgen {

/// How edge features enter the attention score.
///  - Bias: score = (Q h_i . K h_j) / sqrt(d_k) + w_e . e_ij   (default)
///  - Film: score = (1 + s_ij) * dot + b_ij with s, b learned projections
enum class EdgeFusion { Bias, Film };

std::string to_string(EdgeFusion f);
EdgeFusion edge_fusion_from_string(const std::string& s);

struct DenoiserConfig {
  int feature_dim = kRegionFeatureDims;
  int hidden_dim = 32;
  int n_layers = 4;
  int n_heads = 4;
  int ffn_mult = 2;
  EdgeFusion edge_fusion = EdgeFusion::Bias;
  std::uint64_t init_seed = 0;

  int head_dim() const { return hidden_dim / n_heads; }
  void validate() const;
};

/// Distance-based Laplacian positional encodings: Gaussian affinity
/// A_ij = exp(-d_ij^2 / (2 sigma^2)) with sigma the median positive distance
/// (distances symmetrized first), A_ii = 0; L = diag(rowsum(A)) - A. Returns
/// the min(N, k) eigenvectors of smallest eigenvalue, eigenvalues ascending,
/// each column sign-fixed so its largest-magnitude entry is positive.
/// N = 1 degenerates to a single zero column.
Matrix compute_dlape(const Matrix& distances, int k);

/// Standard sinusoidal embedding of an integer step index, returned as a
/// 1 x dim row (dim must be even).
Matrix sinusoidal_time_embedding(int t, int dim);

/// Post-softmax attention matrices captured during a forward pass, indexed
/// layer-major, head-minor. Every matrix is row-stochastic.
struct AttentionTrace {
  std::vector<Matrix> attention;
};

/// The noise-prediction network: node and edge embedding layers, a stack of
/// graph-transformer layers over the complete graph with an edge feature
/// stream, and a per-edge scalar output head. Conditioning (positional
/// encodings, time embedding, distances) is injected additively through
/// learned linear maps before every layer; raw broadcast additions would be
/// cancelled by the pre-norm layer normalization, so each injection owns a
/// projection.
class Denoiser {
 public:
  explicit Denoiser(const DenoiserConfig& cfg);

  /// Records the forward computation on the tape and returns the N x N
  /// noise-estimate node. `node_features` N x feature_dim (already scaled),
  /// `noised_flows` and `distances` N x N, `dlape` N x min(N, hidden_dim),
  /// t >= 1.
  ad::Var build(ad::Tape& tape, const Matrix& node_features, const Matrix& noised_flows,
                const Matrix& distances, const Matrix& dlape, int t,
                AttentionTrace* trace = nullptr);

  /// Convenience forward pass on a private no-grad tape.
  Matrix predict(const Matrix& node_features, const Matrix& noised_flows,
                 const Matrix& distances, const Matrix& dlape, int t,
                 AttentionTrace* trace = nullptr);

  ad::ParameterStore& params() { return store_; }
  const ad::ParameterStore& params() const { return store_; }
  const DenoiserConfig& config() const { return cfg_; }

 private:
  void create_parameters();
  void init_parameters();

  DenoiserConfig cfg_;
  ad::ParameterStore store_;
};

}  // namespace odgen
