#include "odgen/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace odgen::ad {

namespace {

std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("autodiff: " + what);
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterStore
// ---------------------------------------------------------------------------

Parameter& ParameterStore::create(const std::string& name, int rows, int cols) {
  if (find(name) != nullptr)
    throw std::invalid_argument("duplicate parameter name '" + name + "'");
  params_.push_back(std::make_unique<Parameter>(name, rows, cols));
  return *params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

long ParameterStore::parameter_count() const {
  long n = 0;
  for (const auto& p : params_) n += static_cast<long>(p->value.size());
  return n;
}

double ParameterStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

// ---------------------------------------------------------------------------
// Tape: forward operations
// ---------------------------------------------------------------------------

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::node(Var v) {
  require(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "invalid node handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
  require(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "invalid node handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

const Matrix& Tape::grad(Var v) const {
  const Node& n = node(v);
  require(n.grad.size() == n.value.size(), "gradient not computed for this node");
  return n.grad;
}

Var Tape::constant(Matrix v) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(v);
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.op = Op::Param;
  n.value = p.value;
  n.parameter = &p;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  require(A.cols() == B.rows(), "matmul shape mismatch " + shape_of(A) + " * " + shape_of(B));
  Node n;
  n.op = Op::MatMul;
  n.inputs = {a.id, b.id};
  n.value = A * B;
  return push(std::move(n));
}

Var Tape::transpose(Var a) {
  Node n;
  n.op = Op::Transpose;
  n.inputs = {a.id};
  n.value = value(a).transpose();
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(),
          "add shape mismatch " + shape_of(A) + " + " + shape_of(B));
  Node n;
  n.op = Op::Add;
  n.inputs = {a.id, b.id};
  n.value = A + B;
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(),
          "sub shape mismatch " + shape_of(A) + " - " + shape_of(B));
  Node n;
  n.op = Op::Sub;
  n.inputs = {a.id, b.id};
  n.value = A - B;
  return push(std::move(n));
}

Var Tape::hadamard(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(),
          "hadamard shape mismatch " + shape_of(A) + " . " + shape_of(B));
  Node n;
  n.op = Op::Hadamard;
  n.inputs = {a.id, b.id};
  n.value = A.cwiseProduct(B);
  return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
  Node n;
  n.op = Op::Scale;
  n.inputs = {a.id};
  n.scalar = c;
  n.value = value(a) * c;
  return push(std::move(n));
}

Var Tape::add_scalar(Var a, double c) {
  Node n;
  n.op = Op::AddScalar;
  n.inputs = {a.id};
  n.scalar = c;
  n.value = value(a).array() + c;
  return push(std::move(n));
}

Var Tape::add_rowvec(Var a, Var row) {
  const Matrix& A = value(a);
  const Matrix& R = value(row);
  require(R.rows() == 1 && R.cols() == A.cols(),
          "add_rowvec expects 1x" + std::to_string(A.cols()) + ", got " + shape_of(R));
  Node n;
  n.op = Op::AddRowVec;
  n.inputs = {a.id, row.id};
  n.value = A.rowwise() + R.row(0);
  return push(std::move(n));
}

Var Tape::mul_rowvec(Var a, Var row) {
  const Matrix& A = value(a);
  const Matrix& R = value(row);
  require(R.rows() == 1 && R.cols() == A.cols(),
          "mul_rowvec expects 1x" + std::to_string(A.cols()) + ", got " + shape_of(R));
  Node n;
  n.op = Op::MulRowVec;
  n.inputs = {a.id, row.id};
  n.value = A.array().rowwise() * R.row(0).array();
  return push(std::move(n));
}

Var Tape::relu(Var a) {
  Node n;
  n.op = Op::Relu;
  n.inputs = {a.id};
  n.value = value(a).cwiseMax(0.0);
  return push(std::move(n));
}

Var Tape::softmax_rows(Var a) {
  const Matrix& A = value(a);
  Node n;
  n.op = Op::SoftmaxRows;
  n.inputs = {a.id};
  n.value.resize(A.rows(), A.cols());
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    const double mx = A.row(r).maxCoeff();
    Eigen::RowVectorXd e = (A.row(r).array() - mx).exp();
    n.value.row(r) = e / e.sum();
  }
  return push(std::move(n));
}

Var Tape::layer_norm_rows(Var a, double eps) {
  const Matrix& A = value(a);
  require(A.cols() >= 1, "layer_norm_rows needs at least one column");
  Node n;
  n.op = Op::LayerNormRows;
  n.inputs = {a.id};
  n.scalar = eps;
  n.value.resize(A.rows(), A.cols());
  n.aux.resize(A.rows(), 1);
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    const double mean = A.row(r).mean();
    const double var = (A.row(r).array() - mean).square().mean();
    const double inv_std = 1.0 / std::sqrt(var + eps);
    n.aux(r, 0) = inv_std;
    n.value.row(r) = (A.row(r).array() - mean) * inv_std;
  }
  return push(std::move(n));
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols needs at least one input");
  const Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (const Var p : parts) {
    require(value(p).rows() == rows, "concat_cols row mismatch");
    cols += value(p).cols();
  }
  Node n;
  n.op = Op::ConcatCols;
  n.value.resize(rows, cols);
  Eigen::Index at = 0;
  for (const Var p : parts) {
    n.inputs.push_back(p.id);
    n.value.middleCols(at, value(p).cols()) = value(p);
    at += value(p).cols();
  }
  return push(std::move(n));
}

Var Tape::flatten_rowmajor(Var a) {
  const Matrix& A = value(a);
  Node n;
  n.op = Op::Flatten;
  n.inputs = {a.id};
  n.value.resize(A.rows() * A.cols(), 1);
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) n.value(i * A.cols() + j, 0) = A(i, j);
  return push(std::move(n));
}

Var Tape::unflatten_rowmajor(Var a, int rows, int cols) {
  const Matrix& A = value(a);
  require(A.cols() == 1 && A.rows() == static_cast<Eigen::Index>(rows) * cols,
          "unflatten_rowmajor expects " + std::to_string(static_cast<long>(rows) * cols) +
              "x1, got " + shape_of(A));
  Node n;
  n.op = Op::Unflatten;
  n.inputs = {a.id};
  n.value.resize(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) n.value(i, j) = A(static_cast<Eigen::Index>(i) * cols + j, 0);
  return push(std::move(n));
}

Var Tape::mean_sq_error(Var pred, Var target) {
  const Matrix& P = value(pred);
  const Matrix& T = value(target);
  require(P.rows() == T.rows() && P.cols() == T.cols(),
          "mean_sq_error shape mismatch " + shape_of(P) + " vs " + shape_of(T));
  require(P.size() > 0, "mean_sq_error over empty matrices");
  Node n;
  n.op = Op::MeanSqError;
  n.inputs = {pred.id, target.id};
  n.value.resize(1, 1);
  n.value(0, 0) = (P - T).squaredNorm() / static_cast<double>(P.size());
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Tape: backward
// ---------------------------------------------------------------------------

Matrix& Tape::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() != n.value.size()) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root, double seed) {
  if (!grad_enabled_) throw std::logic_error("backward() on a no-grad tape");
  const Node& r = node(root);
  require(r.value.rows() == 1 && r.value.cols() == 1, "backward root must be scalar (1x1)");
  grad_buffer(root.id)(0, 0) = seed;

  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) continue;  // not reachable from the root
    const Matrix& g = n.grad;

    switch (n.op) {
      case Op::Constant:
        break;
      case Op::Param:
        n.parameter->grad += g;
        break;
      case Op::MatMul: {
        const Matrix& A = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        const Matrix& B = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
        grad_buffer(n.inputs[0]) += g * B.transpose();
        grad_buffer(n.inputs[1]) += A.transpose() * g;
        break;
      }
      case Op::Transpose:
        grad_buffer(n.inputs[0]) += g.transpose();
        break;
      case Op::Add:
        grad_buffer(n.inputs[0]) += g;
        grad_buffer(n.inputs[1]) += g;
        break;
      case Op::Sub:
        grad_buffer(n.inputs[0]) += g;
        grad_buffer(n.inputs[1]) -= g;
        break;
      case Op::Hadamard: {
        const Matrix& A = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        const Matrix& B = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
        grad_buffer(n.inputs[0]) += g.cwiseProduct(B);
        grad_buffer(n.inputs[1]) += g.cwiseProduct(A);
        break;
      }
      case Op::Scale:
        grad_buffer(n.inputs[0]) += g * n.scalar;
        break;
      case Op::AddScalar:
        grad_buffer(n.inputs[0]) += g;
        break;
      case Op::AddRowVec:
        grad_buffer(n.inputs[0]) += g;
        grad_buffer(n.inputs[1]) += g.colwise().sum();
        break;
      case Op::MulRowVec: {
        const Matrix& A = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        const Matrix& R = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
        grad_buffer(n.inputs[0]) += (g.array().rowwise() * R.row(0).array()).matrix();
        grad_buffer(n.inputs[1]) += g.cwiseProduct(A).colwise().sum();
        break;
      }
      case Op::Relu: {
        const Matrix& A = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        grad_buffer(n.inputs[0]) +=
            (A.array() > 0.0).select(g, Matrix::Zero(g.rows(), g.cols()));
        break;
      }
      case Op::SoftmaxRows: {
        const Matrix& Y = n.value;
        Matrix& ga = grad_buffer(n.inputs[0]);
        for (Eigen::Index row = 0; row < Y.rows(); ++row) {
          const double dot = g.row(row).dot(Y.row(row));
          ga.row(row) += (Y.row(row).array() * (g.row(row).array() - dot)).matrix();
        }
        break;
      }
      case Op::LayerNormRows: {
        const Matrix& Y = n.value;
        Matrix& ga = grad_buffer(n.inputs[0]);
        const double d = static_cast<double>(Y.cols());
        for (Eigen::Index row = 0; row < Y.rows(); ++row) {
          const double gm = g.row(row).mean();
          const double gym = g.row(row).dot(Y.row(row)) / d;
          ga.row(row) += (n.aux(row, 0) *
                          (g.row(row).array() - gm - Y.row(row).array() * gym))
                             .matrix();
        }
        break;
      }
      case Op::ConcatCols: {
        Eigen::Index at = 0;
        for (const int in : n.inputs) {
          const Eigen::Index w = nodes_[static_cast<std::size_t>(in)].value.cols();
          grad_buffer(in) += g.middleCols(at, w);
          at += w;
        }
        break;
      }
      case Op::Flatten: {
        const Matrix& A = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        Matrix& ga = grad_buffer(n.inputs[0]);
        for (Eigen::Index i = 0; i < A.rows(); ++i)
          for (Eigen::Index j = 0; j < A.cols(); ++j) ga(i, j) += g(i * A.cols() + j, 0);
        break;
      }
      case Op::Unflatten: {
        Matrix& ga = grad_buffer(n.inputs[0]);
        for (Eigen::Index i = 0; i < n.value.rows(); ++i)
          for (Eigen::Index j = 0; j < n.value.cols(); ++j)
            ga(i * n.value.cols() + j, 0) += g(i, j);
        break;
      }
      case Op::MeanSqError: {
        const Matrix& P = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        const Matrix& T = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
        const double c = 2.0 * g(0, 0) / static_cast<double>(P.size());
        grad_buffer(n.inputs[0]) += c * (P - T);
        grad_buffer(n.inputs[1]) -= c * (P - T);
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
    const Matrix m_hat = m_[i] / bc1;
    const Matrix v_hat = v_[i] / bc2;
    p.value -= cfg_.lr * (m_hat.array() / (v_hat.array().sqrt() + cfg_.eps) +
                          cfg_.weight_decay * p.value.array())
                   .matrix();
  }
}

}  // namespace odgen::ad
