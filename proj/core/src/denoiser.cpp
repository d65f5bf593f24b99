#include "odgen/denoiser.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace odgen {

std::string to_string(EdgeFusion f) { return f == EdgeFusion::Bias ? "bias" : "film"; }

EdgeFusion edge_fusion_from_string(const std::string& s) {
  if (s == "bias") return EdgeFusion::Bias;
  if (s == "film") return EdgeFusion::Film;
  throw InvalidInputError("unknown edge fusion mode '" + s + "' (expected bias or film)");
}

void DenoiserConfig::validate() const {
  if (feature_dim < 1) throw InvalidInputError("denoiser feature_dim must be positive");
  if (hidden_dim < 2 || hidden_dim % 2 != 0)
    throw InvalidInputError("denoiser hidden_dim must be a positive even number");
  if (n_layers < 1) throw InvalidInputError("denoiser n_layers must be positive");
  if (n_heads < 1 || hidden_dim % n_heads != 0)
    throw InvalidInputError("denoiser n_heads must divide hidden_dim");
  if (ffn_mult < 1) throw InvalidInputError("denoiser ffn_mult must be positive");
}

// ---------------------------------------------------------------------------
// Positional and time encodings
// ---------------------------------------------------------------------------

Matrix compute_dlape(const Matrix& distances, int k) {
  const auto n = distances.rows();
  if (n < 1 || distances.cols() != n)
    throw InvalidInputError("distance matrix must be square and non-empty");
  if (k < 1) throw InvalidInputError("positional encoding needs k >= 1");
  if (!all_finite(distances) || (distances.array() < 0.0).any())
    throw InvalidInputError("distance matrix must be finite and nonnegative");

  const int cols = static_cast<int>(std::min<Eigen::Index>(n, k));
  if (n == 1) return Matrix::Zero(1, cols);

  const Matrix sym = 0.5 * (distances + distances.transpose());

  std::vector<double> positive;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j && sym(i, j) > 0.0) positive.push_back(sym(i, j));
  double sigma = 1.0;  // all-zero distances degrade to a uniform affinity
  if (!positive.empty()) {
    const std::size_t mid = positive.size() / 2;
    std::nth_element(positive.begin(), positive.begin() + static_cast<std::ptrdiff_t>(mid),
                     positive.end());
    sigma = positive[mid];
    if (positive.size() % 2 == 0) {
      const double hi = sigma;
      std::nth_element(positive.begin(), positive.begin() + static_cast<std::ptrdiff_t>(mid) - 1,
                       positive.end());
      sigma = 0.5 * (positive[mid - 1] + hi);
    }
  }

  Matrix affinity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      affinity(i, j) =
          i == j ? 0.0 : std::exp(-sym(i, j) * sym(i, j) / (2.0 * sigma * sigma));
    }
  }

  Matrix laplacian = -affinity;
  laplacian.diagonal() = affinity.rowwise().sum();

  Eigen::SelfAdjointEigenSolver<Matrix> solver(laplacian);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("eigendecomposition of the graph Laplacian failed");

  Matrix vectors = solver.eigenvectors().leftCols(cols);  // eigenvalues ascending
  for (int c = 0; c < cols; ++c) {
    Eigen::Index at = 0;
    vectors.col(c).cwiseAbs().maxCoeff(&at);
    if (vectors(at, c) < 0.0) vectors.col(c) = -vectors.col(c);
  }
  return vectors;
}

Matrix sinusoidal_time_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw InvalidInputError("time embedding width must be a positive even number");
  Matrix emb(1, dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    emb(0, 2 * i) = std::sin(static_cast<double>(t) * freq);
    emb(0, 2 * i + 1) = std::cos(static_cast<double>(t) * freq);
  }
  return emb;
}

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

Denoiser::Denoiser(const DenoiserConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  create_parameters();
  init_parameters();
}

void Denoiser::create_parameters() {
  const int h = cfg_.hidden_dim;
  const int dk = cfg_.head_dim();
  const int f = cfg_.ffn_mult * h;

  const auto linear = [&](const std::string& name, int in, int out) {
    store_.create(name + ".W", in, out);
    store_.create(name + ".b", 1, out);
  };
  const auto norm = [&](const std::string& name) {
    store_.create(name + ".gamma", 1, h);
    store_.create(name + ".beta", 1, h);
  };

  linear("embed.node", cfg_.feature_dim, h);
  linear("embed.edge", 2, h);

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    store_.create(p + "inject.pe.W", h, h);
    store_.create(p + "inject.time_node.W", h, h);
    store_.create(p + "inject.time_edge.W", h, h);
    store_.create(p + "inject.dist.W", 1, h);

    norm(p + "attn.ln_node");
    norm(p + "attn.ln_edge");
    for (int k = 0; k < cfg_.n_heads; ++k) {
      const std::string hp = p + "attn.head" + std::to_string(k) + ".";
      store_.create(hp + "Wq", h, dk);
      store_.create(hp + "Wk", h, dk);
      store_.create(hp + "Wv", h, dk);
      if (cfg_.edge_fusion == EdgeFusion::Bias) {
        store_.create(hp + "we", h, 1);
      } else {
        store_.create(hp + "ws", h, 1);
        store_.create(hp + "wb", h, 1);
      }
    }
    linear(p + "attn.node_out", h, h);
    linear(p + "attn.edge_out", cfg_.n_heads, h);

    norm(p + "ffn_node.ln");
    linear(p + "ffn_node.fc1", h, f);
    linear(p + "ffn_node.fc2", f, h);
    norm(p + "ffn_edge.ln");
    linear(p + "ffn_edge.fc1", h, f);
    linear(p + "ffn_edge.fc2", f, h);
  }

  // The output head is deliberately a plain linear readout of the residual
  // edge stream: a normalization here would erase the magnitude information
  // the sampler relies on (predicted noise must scale linearly with the
  // noised input at large t).
  store_.create("head.W", h, 1);
  store_.create("head.b", 1, 1);
}

void Denoiser::init_parameters() {
  std::mt19937_64 rng(cfg_.init_seed);
  for (ad::Parameter* p : store_.all()) {
    const bool is_bias = p->name.ends_with(".b");
    const bool is_gamma = p->name.ends_with(".gamma");
    const bool is_beta = p->name.ends_with(".beta");
    if (is_bias || is_beta || p->name == "head.W") {
      // Zero output head: the untrained network predicts zero noise, which
      // keeps the very first optimizer steps well-scaled.
      p->value.setZero();
    } else if (is_gamma) {
      p->value.setOnes();
    } else {
      const double fan_in = static_cast<double>(p->value.rows());
      const double fan_out = static_cast<double>(p->value.cols());
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> uniform(-limit, limit);
      for (Eigen::Index i = 0; i < p->value.rows(); ++i)
        for (Eigen::Index j = 0; j < p->value.cols(); ++j) p->value(i, j) = uniform(rng);
    }
  }
}

ad::Var Denoiser::build(ad::Tape& tape, const Matrix& node_features, const Matrix& noised_flows,
                        const Matrix& distances, const Matrix& dlape, int t,
                        AttentionTrace* trace) {
  const auto n = node_features.rows();
  if (n < 1) throw InvalidInputError("denoiser needs at least one region");
  if (node_features.cols() != cfg_.feature_dim)
    throw InvalidInputError("node feature width " + std::to_string(node_features.cols()) +
                            " does not match configured " + std::to_string(cfg_.feature_dim));
  if (noised_flows.rows() != n || noised_flows.cols() != n)
    throw InvalidInputError("noised flow matrix must be N x N");
  if (distances.rows() != n || distances.cols() != n)
    throw InvalidInputError("distance matrix must be N x N");
  const auto expected_pe = std::min<Eigen::Index>(n, cfg_.hidden_dim);
  if (dlape.rows() != n || dlape.cols() != expected_pe)
    throw InvalidInputError("positional encoding must be N x min(N, hidden_dim)");
  if (t < 1) throw InvalidInputError("diffusion step index must be >= 1");

  const int N = static_cast<int>(n);
  const int h = cfg_.hidden_dim;
  const int dk = cfg_.head_dim();

  const auto P = [&](const std::string& name) -> ad::Var {
    ad::Parameter* p = store_.find(name);
    if (p == nullptr) throw std::logic_error("missing denoiser parameter '" + name + "'");
    return tape.param(*p);
  };
  const auto linear = [&](ad::Var x, const std::string& name) {
    return tape.add_rowvec(tape.matmul(x, P(name + ".W")), P(name + ".b"));
  };
  const auto norm = [&](ad::Var x, const std::string& name) {
    return tape.add_rowvec(tape.mul_rowvec(tape.layer_norm_rows(x), P(name + ".gamma")),
                           P(name + ".beta"));
  };
  const auto ffn = [&](ad::Var x, const std::string& name) {
    return linear(tape.relu(linear(norm(x, name + ".ln"), name + ".fc1")), name + ".fc2");
  };

  Matrix pe_padded = Matrix::Zero(N, h);
  pe_padded.leftCols(dlape.cols()) = dlape;

  ad::Var H = linear(tape.constant(node_features), "embed.node");
  // Variance-stabilized distance channel: flows decay as a power of distance,
  // so the log makes that dependence linear and keeps near/far pairs on a
  // comparable footing inside the edge embedding.
  const Matrix log_dist = distances.unaryExpr([](double d) { return std::log1p(d); });
  const ad::Var dist_flat = tape.flatten_rowmajor(tape.constant(log_dist));
  const ad::Var flow_flat = tape.flatten_rowmajor(tape.constant(noised_flows));
  ad::Var E = linear(tape.concat_cols({flow_flat, dist_flat}), "embed.edge");

  const ad::Var pe = tape.constant(pe_padded);
  const ad::Var time_emb = tape.constant(sinusoidal_time_embedding(t, h));

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";

    // Conditioning injections ahead of the layer.
    H = tape.add(H, tape.matmul(pe, P(p + "inject.pe.W")));
    H = tape.add_rowvec(H, tape.matmul(time_emb, P(p + "inject.time_node.W")));
    E = tape.add(E, tape.matmul(dist_flat, P(p + "inject.dist.W")));
    E = tape.add_rowvec(E, tape.matmul(time_emb, P(p + "inject.time_edge.W")));

    // Attention over the complete graph, pre-norm.
    const ad::Var Hn = norm(H, p + "attn.ln_node");
    const ad::Var En = norm(E, p + "attn.ln_edge");
    std::vector<ad::Var> head_values;
    std::vector<ad::Var> head_scores;
    for (int k = 0; k < cfg_.n_heads; ++k) {
      const std::string hp = p + "attn.head" + std::to_string(k) + ".";
      const ad::Var q = tape.matmul(Hn, P(hp + "Wq"));
      const ad::Var key = tape.matmul(Hn, P(hp + "Wk"));
      const ad::Var v = tape.matmul(Hn, P(hp + "Wv"));
      const ad::Var dot =
          tape.scale(tape.matmul(q, tape.transpose(key)), 1.0 / std::sqrt(static_cast<double>(dk)));
      ad::Var score;
      if (cfg_.edge_fusion == EdgeFusion::Bias) {
        score = tape.add(dot, tape.unflatten_rowmajor(tape.matmul(En, P(hp + "we")), N, N));
      } else {
        const ad::Var s = tape.unflatten_rowmajor(tape.matmul(En, P(hp + "ws")), N, N);
        const ad::Var b = tape.unflatten_rowmajor(tape.matmul(En, P(hp + "wb")), N, N);
        score = tape.add(tape.hadamard(tape.add_scalar(s, 1.0), dot), b);
      }
      const ad::Var attn = tape.softmax_rows(score);
      if (trace != nullptr) trace->attention.push_back(tape.value(attn));
      head_values.push_back(tape.matmul(attn, v));
      head_scores.push_back(tape.flatten_rowmajor(score));
    }
    H = tape.add(H, linear(tape.concat_cols(head_values), p + "attn.node_out"));
    E = tape.add(E, linear(tape.concat_cols(head_scores), p + "attn.edge_out"));

    H = tape.add(H, ffn(H, p + "ffn_node"));
    E = tape.add(E, ffn(E, p + "ffn_edge"));
  }

  const ad::Var out = linear(E, "head");
  return tape.unflatten_rowmajor(out, N, N);
}

Matrix Denoiser::predict(const Matrix& node_features, const Matrix& noised_flows,
                         const Matrix& distances, const Matrix& dlape, int t,
                         AttentionTrace* trace) {
  ad::Tape tape(/*grad_enabled=*/false);
  const ad::Var out = build(tape, node_features, noised_flows, distances, dlape, t, trace);
  return tape.value(out);
}

}  // namespace odgen
