#pragma once

// Define-by-run reverse-mode differentiation over dense double matrices.
//
// A Tape owns every value produced during one forward pass. Tensors are
// cheap handles (tape pointer + node id). Nodes are appended in execution
// order, so the node list is already topologically sorted and backward is a
// single reverse sweep.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace raml::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

enum class OpKind {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Div,
  Reciprocal,
  Square,
  Abs,
  Exp,
  Sum,
  Relu,
  Softplus,
  Sigmoid,
  LogSumExp,
  Scale,
  Concat,
  GatherRows,
};

/// Reduction axis for OpKind::Sum. Rows collapses the row dimension (result
/// is 1 x cols), Cols collapses the column dimension (result is rows x 1).
enum class Axis { All, Rows, Cols };

struct OpArgs {
  double scalar = 1.0;
  Axis axis = Axis::All;
  std::vector<Index> rows;
};

std::string_view op_name(OpKind kind);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tape;

class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  std::size_t id() const { return id_; }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape& tape() const;
  bool valid() const { return tape_ != nullptr; }

  /// Convenience for 1x1 tensors.
  double item() const;

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Result of a backward sweep. Tensors that do not influence the loss, or
/// that were recorded as constants, have no entry.
class Gradients {
 public:
  const Matrix* find(const Tensor& t) const;
  /// Gradient of t, or a zero matrix of t's shape when absent.
  Matrix at(const Tensor& t) const;

 private:
  friend class Tape;
  std::vector<std::optional<Matrix>> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor variable(Matrix value);
  Tensor constant(Matrix value);

  Tensor apply(OpKind kind, std::span<const Tensor> inputs, OpArgs args = {});
  Tensor apply(OpKind kind, std::initializer_list<Tensor> inputs, OpArgs args = {}) {
    return apply(kind, std::span<const Tensor>(inputs.begin(), inputs.size()), std::move(args));
  }

  /// Reverse sweep from a 1x1 loss. A tape may be swept once.
  Gradients backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  friend class Tensor;

  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<std::size_t> inputs;
    Matrix value;
    bool requires_grad = false;
    OpArgs args;
  };

  Tensor push(Node node);
  const Node& node(std::size_t id) const { return nodes_[id]; }
  void check_owned(const Tensor& t) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Free-function forms of every op kind.
Tensor matmul(const Tensor& a, const Tensor& b);
/// b must match a's shape or be a 1 x cols row broadcast over a's rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor reciprocal(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sum(const Tensor& a, Axis axis = Axis::All);
Tensor mean(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Row-wise log-sum-exp over the last axis; result is rows x 1.
Tensor logsumexp(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor concat(std::span<const Tensor> parts);
Tensor gather_rows(const Tensor& a, std::vector<Index> rows);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// Scalar helpers shared with the value-level code paths.
double softplus(double x);
double sigmoid(double x);

/// Builds a scalar loss on a fresh tape from leaf tensors bound to params.
using ScalarFunction = std::function<Tensor(Tape&, std::span<const Tensor>)>;

/// Max over coordinates of |analytic - central| / max(1e-12, |analytic| + |central|).
double finite_difference_check(const ScalarFunction& f, const std::vector<Matrix>& params,
                               double step);

}  // namespace raml::ad
