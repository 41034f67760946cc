#include "raml/autodiff.hpp"

#include <cmath>
#include <sstream>

namespace raml::ad {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << "(" << m.rows() << "x" << m.cols() << ")";
  return os.str();
}

[[noreturn]] void shape_fail(OpKind kind, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op_name(kind)) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

void require_nonzero(OpKind kind, const Matrix& m) {
  if ((m.array() == 0.0).any()) {
    throw std::domain_error(std::string(op_name(kind)) + ": zero element in denominator " +
                            shape_str(m));
  }
}

Matrix softplus_of(const Matrix& x) {
  return x.unaryExpr([](double v) { return softplus(v); });
}

Matrix sigmoid_of(const Matrix& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

void accumulate(std::optional<Matrix>& slot, const Matrix& g) {
  if (slot) {
    *slot += g;
  } else {
    slot = g;
  }
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Reciprocal: return "reciprocal";
    case OpKind::Square: return "square";
    case OpKind::Abs: return "abs";
    case OpKind::Exp: return "exp";
    case OpKind::Sum: return "sum";
    case OpKind::Relu: return "relu";
    case OpKind::Softplus: return "softplus";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::LogSumExp: return "logsumexp";
    case OpKind::Scale: return "scale";
    case OpKind::Concat: return "concat";
    case OpKind::GatherRows: return "gather_rows";
  }
  return "unknown";
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Tensor

const Matrix& Tensor::value() const {
  if (!tape_) throw std::logic_error("Tensor: uninitialised handle");
  return tape_->node(id_).value;
}

bool Tensor::requires_grad() const { return tape_ && tape_->node(id_).requires_grad; }

Tape& Tensor::tape() const {
  if (!tape_) throw std::logic_error("Tensor: uninitialised handle");
  return *tape_;
}

double Tensor::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("item: tensor is " + shape_str(v) + ", expected (1x1)");
  return v(0, 0);
}

// ---------------------------------------------------------------------------
// Gradients

const Matrix* Gradients::find(const Tensor& t) const {
  if (t.id() >= grads_.size() || !grads_[t.id()]) return nullptr;
  return &*grads_[t.id()];
}

Matrix Gradients::at(const Tensor& t) const {
  if (const Matrix* g = find(t)) return *g;
  return Matrix::Zero(t.rows(), t.cols());
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Tensor(this, nodes_.size() - 1);
}

void Tape::check_owned(const Tensor& t) const {
  if (!t.valid() || &t.tape() != this) {
    throw std::invalid_argument("Tape: tensor belongs to a different tape");
  }
}

Tensor Tape::variable(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Tensor Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Tensor Tape::apply(OpKind kind, std::span<const Tensor> inputs, OpArgs args) {
  for (const Tensor& t : inputs) check_owned(t);

  auto need = [&](std::size_t count) {
    if (inputs.size() != count) {
      throw std::invalid_argument(std::string(op_name(kind)) + ": expected " +
                                  std::to_string(count) + " inputs, got " +
                                  std::to_string(inputs.size()));
    }
  };

  Node n;
  n.kind = kind;
  for (const Tensor& t : inputs) {
    n.inputs.push_back(t.id());
    n.requires_grad = n.requires_grad || node(t.id()).requires_grad;
  }

  switch (kind) {
    case OpKind::Leaf:
      throw std::invalid_argument("apply: use variable() or constant() for leaves");
    case OpKind::MatMul: {
      need(2);
      const Matrix& a = inputs[0].value();
      const Matrix& b = inputs[1].value();
      if (a.cols() != b.rows()) shape_fail(kind, a, b);
      n.value = a * b;
      break;
    }
    case OpKind::Add:
    case OpKind::Sub: {
      need(2);
      const Matrix& a = inputs[0].value();
      const Matrix& b = inputs[1].value();
      const double sign = kind == OpKind::Add ? 1.0 : -1.0;
      if (a.rows() == b.rows() && a.cols() == b.cols()) {
        n.value = a + sign * b;
      } else if (b.rows() == 1 && b.cols() == a.cols()) {
        n.value = a;
        n.value.rowwise() += sign * b.row(0);
      } else {
        shape_fail(kind, a, b);
      }
      break;
    }
    case OpKind::Mul:
    case OpKind::Div: {
      need(2);
      const Matrix& a = inputs[0].value();
      const Matrix& b = inputs[1].value();
      if (a.rows() != b.rows() || a.cols() != b.cols()) shape_fail(kind, a, b);
      if (kind == OpKind::Mul) {
        n.value = a.cwiseProduct(b);
      } else {
        require_nonzero(kind, b);
        n.value = a.cwiseQuotient(b);
      }
      break;
    }
    case OpKind::Reciprocal:
      need(1);
      require_nonzero(kind, inputs[0].value());
      n.value = inputs[0].value().cwiseInverse();
      break;
    case OpKind::Square:
      need(1);
      n.value = inputs[0].value().array().square().matrix();
      break;
    case OpKind::Abs:
      need(1);
      n.value = inputs[0].value().cwiseAbs();
      break;
    case OpKind::Exp:
      need(1);
      n.value = inputs[0].value().array().exp().matrix();
      break;
    case OpKind::Sum: {
      need(1);
      const Matrix& a = inputs[0].value();
      switch (args.axis) {
        case Axis::All: n.value = Matrix::Constant(1, 1, a.sum()); break;
        case Axis::Rows: n.value = a.colwise().sum(); break;
        case Axis::Cols: n.value = a.rowwise().sum(); break;
      }
      break;
    }
    case OpKind::Relu:
      need(1);
      n.value = inputs[0].value().cwiseMax(0.0);
      break;
    case OpKind::Softplus:
      need(1);
      n.value = softplus_of(inputs[0].value());
      break;
    case OpKind::Sigmoid:
      need(1);
      n.value = sigmoid_of(inputs[0].value());
      break;
    case OpKind::LogSumExp: {
      need(1);
      const Matrix& a = inputs[0].value();
      if (a.cols() == 0) throw ShapeError("logsumexp: empty last axis " + shape_str(a));
      const Eigen::VectorXd row_max = a.rowwise().maxCoeff();
      n.value = ((a.colwise() - row_max).array().exp().rowwise().sum().log().matrix() + row_max);
      break;
    }
    case OpKind::Scale:
      need(1);
      n.value = args.scalar * inputs[0].value();
      break;
    case OpKind::Concat: {
      if (inputs.empty()) throw std::invalid_argument("concat: no inputs");
      const Index rows = inputs[0].rows();
      Index cols = 0;
      for (const Tensor& t : inputs) {
        if (t.rows() != rows) shape_fail(kind, inputs[0].value(), t.value());
        cols += t.cols();
      }
      n.value.resize(rows, cols);
      Index offset = 0;
      for (const Tensor& t : inputs) {
        n.value.middleCols(offset, t.cols()) = t.value();
        offset += t.cols();
      }
      break;
    }
    case OpKind::GatherRows: {
      need(1);
      const Matrix& a = inputs[0].value();
      n.value.resize(static_cast<Index>(args.rows.size()), a.cols());
      for (std::size_t k = 0; k < args.rows.size(); ++k) {
        const Index r = args.rows[k];
        if (r < 0 || r >= a.rows()) {
          throw ShapeError("gather_rows: row index " + std::to_string(r) + " out of range for " +
                           shape_str(a));
        }
        n.value.row(static_cast<Index>(k)) = a.row(r);
      }
      break;
    }
  }

  n.args = std::move(args);
  return push(std::move(n));
}

Gradients Tape::backward(const Tensor& loss) {
  check_owned(loss);
  if (consumed_) throw std::logic_error("backward: tape already consumed");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.value()));
  }
  consumed_ = true;

  Gradients out;
  auto& grads = out.grads_;
  grads.resize(nodes_.size());
  if (!node(loss.id()).requires_grad) return out;
  grads[loss.id()] = Matrix::Ones(1, 1);

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    if (!grads[i]) continue;
    const Node& n = nodes_[i];
    if (n.kind == OpKind::Leaf) continue;
    const Matrix& g = *grads[i];

    auto input = [&](std::size_t k) -> const Node& { return nodes_[n.inputs[k]]; };
    auto wants = [&](std::size_t k) { return input(k).requires_grad; };
    auto send = [&](std::size_t k, const Matrix& d) { accumulate(grads[n.inputs[k]], d); };

    switch (n.kind) {
      case OpKind::Leaf:
        break;
      case OpKind::MatMul:
        if (wants(0)) send(0, g * input(1).value.transpose());
        if (wants(1)) send(1, input(0).value.transpose() * g);
        break;
      case OpKind::Add:
      case OpKind::Sub: {
        const double sign = n.kind == OpKind::Add ? 1.0 : -1.0;
        if (wants(0)) send(0, g);
        if (wants(1)) {
          const Matrix& b = input(1).value;
          if (b.rows() == g.rows()) {
            send(1, sign * g);
          } else {
            send(1, sign * g.colwise().sum());
          }
        }
        break;
      }
      case OpKind::Mul:
        if (wants(0)) send(0, g.cwiseProduct(input(1).value));
        if (wants(1)) send(1, g.cwiseProduct(input(0).value));
        break;
      case OpKind::Div: {
        const Matrix& b = input(1).value;
        if (wants(0)) send(0, g.cwiseQuotient(b));
        if (wants(1)) send(1, -g.cwiseProduct(n.value).cwiseQuotient(b));
        break;
      }
      case OpKind::Reciprocal:
        if (wants(0)) send(0, -g.cwiseProduct(n.value.cwiseProduct(n.value)));
        break;
      case OpKind::Square:
        if (wants(0)) send(0, 2.0 * g.cwiseProduct(input(0).value));
        break;
      case OpKind::Abs:
        if (wants(0)) {
          const Matrix sign = input(0).value.unaryExpr(
              [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
          send(0, g.cwiseProduct(sign));
        }
        break;
      case OpKind::Exp:
        if (wants(0)) send(0, g.cwiseProduct(n.value));
        break;
      case OpKind::Sum: {
        if (!wants(0)) break;
        const Matrix& a = input(0).value;
        switch (n.args.axis) {
          case Axis::All: send(0, Matrix::Constant(a.rows(), a.cols(), g(0, 0))); break;
          case Axis::Rows: send(0, g.replicate(a.rows(), 1)); break;
          case Axis::Cols: send(0, g.replicate(1, a.cols())); break;
        }
        break;
      }
      case OpKind::Relu:
        if (wants(0)) {
          const Matrix mask =
              input(0).value.unaryExpr([](double v) { return v > 0 ? 1.0 : 0.0; });
          send(0, g.cwiseProduct(mask));
        }
        break;
      case OpKind::Softplus:
        if (wants(0)) send(0, g.cwiseProduct(sigmoid_of(input(0).value)));
        break;
      case OpKind::Sigmoid:
        if (wants(0)) {
          const Matrix& y = n.value;
          send(0, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
        }
        break;
      case OpKind::LogSumExp:
        if (wants(0)) {
          // d lse / dx = softmax(x) per row
          Matrix softmax = input(0).value;
          softmax.colwise() -= n.value.col(0);
          softmax = softmax.array().exp().matrix();
          send(0, (softmax.array().colwise() * g.col(0).array()).matrix());
        }
        break;
      case OpKind::Scale:
        if (wants(0)) send(0, n.args.scalar * g);
        break;
      case OpKind::Concat: {
        Index offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const Index w = input(k).value.cols();
          if (wants(k)) send(k, g.middleCols(offset, w));
          offset += w;
        }
        break;
      }
      case OpKind::GatherRows:
        if (wants(0)) {
          Matrix d = Matrix::Zero(input(0).value.rows(), input(0).value.cols());
          for (std::size_t k = 0; k < n.args.rows.size(); ++k) {
            d.row(n.args.rows[k]) += g.row(static_cast<Index>(k));
          }
          send(0, d);
        }
        break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Free functions

Tensor matmul(const Tensor& a, const Tensor& b) { return a.tape().apply(OpKind::MatMul, {a, b}); }
Tensor add(const Tensor& a, const Tensor& b) { return a.tape().apply(OpKind::Add, {a, b}); }
Tensor sub(const Tensor& a, const Tensor& b) { return a.tape().apply(OpKind::Sub, {a, b}); }
Tensor mul(const Tensor& a, const Tensor& b) { return a.tape().apply(OpKind::Mul, {a, b}); }
Tensor div(const Tensor& a, const Tensor& b) { return a.tape().apply(OpKind::Div, {a, b}); }
Tensor reciprocal(const Tensor& a) { return a.tape().apply(OpKind::Reciprocal, {a}); }
Tensor square(const Tensor& a) { return a.tape().apply(OpKind::Square, {a}); }
Tensor abs(const Tensor& a) { return a.tape().apply(OpKind::Abs, {a}); }
Tensor exp(const Tensor& a) { return a.tape().apply(OpKind::Exp, {a}); }
Tensor relu(const Tensor& a) { return a.tape().apply(OpKind::Relu, {a}); }
Tensor softplus(const Tensor& a) { return a.tape().apply(OpKind::Softplus, {a}); }
Tensor sigmoid(const Tensor& a) { return a.tape().apply(OpKind::Sigmoid, {a}); }
Tensor logsumexp(const Tensor& a) { return a.tape().apply(OpKind::LogSumExp, {a}); }

Tensor sum(const Tensor& a, Axis axis) {
  OpArgs args;
  args.axis = axis;
  return a.tape().apply(OpKind::Sum, {a}, std::move(args));
}

Tensor mean(const Tensor& a) {
  if (a.value().size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Tensor scale(const Tensor& a, double factor) {
  OpArgs args;
  args.scalar = factor;
  return a.tape().apply(OpKind::Scale, {a}, std::move(args));
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  return parts.front().tape().apply(OpKind::Concat, parts);
}

Tensor gather_rows(const Tensor& a, std::vector<Index> rows) {
  OpArgs args;
  args.rows = std::move(rows);
  return a.tape().apply(OpKind::GatherRows, {a}, std::move(args));
}

// ---------------------------------------------------------------------------
// Finite differences

double finite_difference_check(const ScalarFunction& f, const std::vector<Matrix>& params,
                               double step) {
  if (!(step > 0)) throw std::invalid_argument("finite_difference_check: step must be positive");

  auto evaluate = [&](const std::vector<Matrix>& values) {
    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(values.size());
    for (const Matrix& v : values) leaves.push_back(tape.constant(v));
    const double out = f(tape, leaves).item();
    if (!std::isfinite(out)) {
      throw std::domain_error("finite_difference_check: function value is not finite");
    }
    return out;
  };

  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Tensor> leaves;
    for (const Matrix& p : params) leaves.push_back(tape.variable(p));
    const Tensor loss = f(tape, leaves);
    if (!std::isfinite(loss.item())) {
      throw std::domain_error("finite_difference_check: function value is not finite");
    }
    const Gradients grads = tape.backward(loss);
    for (const Tensor& leaf : leaves) analytic.push_back(grads.at(leaf));
  }

  double worst = 0.0;
  std::vector<Matrix> probe = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Index i = 0; i < params[k].size(); ++i) {
      const double original = params[k].data()[i];
      probe[k].data()[i] = original + step;
      const double up = evaluate(probe);
      probe[k].data()[i] = original - step;
      const double down = evaluate(probe);
      probe[k].data()[i] = original;

      const double central = (up - down) / (2.0 * step);
      const double a = analytic[k].data()[i];
      const double err = std::abs(a - central) / std::max(1e-12, std::abs(a) + std::abs(central));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace raml::ad
