#pragma once

#include "odgen/domain.hpp"

#include <memory>
#include <string>
#include <vector>

namespace odgen::ad {

/// A named trainable tensor. `grad` accumulates across backward passes until
/// zero_grad() is called, which is what makes gradient accumulation over
/// several area graphs a plain sum.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter(std::string n, int rows, int cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

/// Owns parameters with stable addresses and preserves creation order, which
/// doubles as the serialization order.
class ParameterStore {
 public:
  Parameter& create(const std::string& name, int rows, int cols);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }
  void zero_grad();
  long parameter_count() const;
  double grad_norm() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Tape;

/// Lightweight handle to a node on a tape.
struct Var {
  int id = -1;
};

/// Reverse-mode automatic differentiation over dense matrices. Operations
/// record themselves onto the tape; backward() walks the tape in reverse
/// creation order. With grad_enabled == false the tape only stores values
/// needed by downstream operations and backward() is unavailable.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Matrix v);
  Var param(Parameter& p);

  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  /// Broadcasts a 1 x C row over all rows of an R x C matrix.
  Var add_rowvec(Var a, Var row);
  Var mul_rowvec(Var a, Var row);
  Var relu(Var a);
  Var softmax_rows(Var a);
  /// Pure per-row normalization (x - mean) / sqrt(var + eps); affine terms
  /// are composed from mul_rowvec / add_rowvec by callers.
  Var layer_norm_rows(Var a, double eps = 1e-5);
  Var concat_cols(const std::vector<Var>& parts);
  /// R x C -> (R*C) x 1 with entry (i*C + j) taken from (i, j).
  Var flatten_rowmajor(Var a);
  /// (rows*cols) x 1 -> rows x cols, inverse of flatten_rowmajor.
  Var unflatten_rowmajor(Var a, int rows, int cols);
  /// Scalar (1 x 1) mean of squared differences over all entries.
  Var mean_sq_error(Var pred, Var target);

  const Matrix& value(Var v) const;
  /// Gradient of the root w.r.t. a tape node (valid after backward()).
  const Matrix& grad(Var v) const;

  /// Seeds d(root)/d(root) = seed and accumulates parameter gradients into
  /// their Parameter::grad. root must be 1 x 1.
  void backward(Var root, double seed = 1.0);

  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    Constant,
    Param,
    MatMul,
    Transpose,
    Add,
    Sub,
    Hadamard,
    Scale,
    AddScalar,
    AddRowVec,
    MulRowVec,
    Relu,
    SoftmaxRows,
    LayerNormRows,
    ConcatCols,
    Flatten,
    Unflatten,
    MeanSqError,
  };

  struct Node {
    Op op;
    Matrix value;
    Matrix grad;            // allocated lazily during backward
    std::vector<int> inputs;
    double scalar = 0.0;    // Scale / AddScalar constants, LayerNorm eps
    Matrix aux;             // LayerNorm: cached per-row inverse stddev
    Parameter* parameter = nullptr;
  };

  Var push(Node n);
  Node& node(Var v);
  const Node& node(Var v) const;
  Matrix& grad_buffer(int id);

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay: moments see only the raw gradient and
/// the decay term is applied directly to the weights.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWConfig cfg);

  void step();
  long steps_taken() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter*> params_;
  AdamWConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long step_ = 0;
};

}  // namespace odgen::ad
