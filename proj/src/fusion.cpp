#include "raml/fusion.hpp"

namespace raml {

namespace {

MatrixXd mask_block(const MatrixXd& delta, Eigen::Index m, Eigen::Index dim) {
  return delta.col(m).replicate(1, dim);
}

void check_embeddings(std::span<const GaussianEmbedding> embeddings, const MatrixXd& delta) {
  if (embeddings.empty()) throw std::invalid_argument("fuse: no embeddings");
  const Eigen::Index n = embeddings.front().mu.rows();
  const Eigen::Index d = embeddings.front().mu.cols();
  for (const auto& e : embeddings) {
    if (e.mu.rows() != n || e.mu.cols() != d || e.sigma.rows() != n || e.sigma.cols() != d) {
      throw ad::ShapeError("fuse: embeddings must share shape (n x D)");
    }
  }
  check_availability(delta, n, static_cast<Eigen::Index>(embeddings.size()));
}

Tensor weighted_sum(std::span<const GaussianEmbedding> embeddings, const std::vector<Tensor>& omega) {
  Tensor h = ad::mul(omega[0], embeddings[0].mu);
  for (std::size_t m = 1; m < embeddings.size(); ++m) {
    h = ad::add(h, ad::mul(omega[m], embeddings[m].mu));
  }
  return h;
}

}  // namespace

void check_availability(const MatrixXd& delta, Eigen::Index rows, Eigen::Index modalities) {
  if (delta.rows() != rows || delta.cols() != modalities) {
    throw ad::ShapeError("availability mask is " + std::to_string(delta.rows()) + "x" +
                         std::to_string(delta.cols()) + ", expected " + std::to_string(rows) +
                         "x" + std::to_string(modalities));
  }
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!(delta.row(i).array() != 0.0).any()) throw NoModalityError();
  }
}

namespace {

// Masked precisions delta_m / sigma_m^2 and their total.
struct Precisions {
  std::vector<Tensor> masked;
  Tensor total;
};

Precisions precisions(std::span<const GaussianEmbedding> embeddings, const MatrixXd& delta) {
  check_embeddings(embeddings, delta);
  Tape& tape = embeddings.front().mu.tape();
  const Eigen::Index dim = embeddings.front().mu.cols();
  Precisions p;
  for (std::size_t m = 0; m < embeddings.size(); ++m) {
    const Tensor prec = ad::reciprocal(ad::square(embeddings[m].sigma));
    p.masked.push_back(
        ad::mul(prec, tape.constant(mask_block(delta, static_cast<Eigen::Index>(m), dim))));
    p.total = m == 0 ? p.masked.back() : ad::add(p.total, p.masked.back());
  }
  return p;
}

}  // namespace

Tensor combined_variance(std::span<const GaussianEmbedding> embeddings, const MatrixXd& delta) {
  return ad::reciprocal(precisions(embeddings, delta).total);
}

std::vector<Tensor> fusion_weights(std::span<const GaussianEmbedding> embeddings,
                                   const MatrixXd& delta) {
  return fuse(embeddings, delta).omega;
}

FusedBatch fuse(std::span<const GaussianEmbedding> embeddings, const MatrixXd& delta) {
  const Precisions p = precisions(embeddings, delta);
  FusedBatch out;
  out.combined_variance = ad::reciprocal(p.total);
  for (const Tensor& masked : p.masked) out.omega.push_back(ad::mul(*out.combined_variance, masked));
  out.h = weighted_sum(embeddings, out.omega);
  return out;
}

FusedBatch fuse_identical(std::span<const GaussianEmbedding> embeddings, const MatrixXd& delta) {
  check_embeddings(embeddings, delta);
  Tape& tape = embeddings.front().mu.tape();
  const Eigen::Index dim = embeddings.front().mu.cols();
  const Eigen::VectorXd counts = delta.rowwise().sum();
  FusedBatch out;
  for (Eigen::Index m = 0; m < delta.cols(); ++m) {
    const MatrixXd w = (delta.col(m).array() / counts.array()).matrix().replicate(1, dim);
    out.omega.push_back(tape.constant(w));
  }
  out.h = weighted_sum(embeddings, out.omega);
  return out;
}

FusedBatch fuse_fixed(std::span<const GaussianEmbedding> embeddings, const Tensor& logits,
                      const MatrixXd& delta) {
  check_embeddings(embeddings, delta);
  const Eigen::Index n = embeddings.front().mu.rows();
  const Eigen::Index dim = embeddings.front().mu.cols();
  if (logits.rows() != delta.cols() || logits.cols() != dim) {
    throw ad::ShapeError("fuse_fixed: logits must be M x D");
  }
  Tape& tape = logits.tape();
  const Tensor ones = tape.constant(MatrixXd::Ones(n, 1));
  // Shift by the per-element max for stability; softmax is shift invariant.
  const Eigen::RowVectorXd shift = logits.value().colwise().maxCoeff();
  const Tensor shifted = ad::sub(logits, tape.constant(shift));
  std::vector<Tensor> masked;
  Tensor total;
  for (Eigen::Index m = 0; m < delta.cols(); ++m) {
    const Tensor row = ad::gather_rows(shifted, {m});
    const Tensor expanded = ad::matmul(ones, ad::exp(row));  // n x D
    masked.push_back(ad::mul(expanded, tape.constant(mask_block(delta, m, dim))));
    total = m == 0 ? masked.back() : ad::add(total, masked.back());
  }
  FusedBatch out;
  for (const Tensor& t : masked) out.omega.push_back(ad::div(t, total));
  out.h = weighted_sum(embeddings, out.omega);
  return out;
}

FusedBatch fuse_with(WeightingStrategy strategy, std::span<const GaussianEmbedding> embeddings,
                     const MatrixXd& delta, const Tensor& fixed_logits) {
  switch (strategy) {
    case WeightingStrategy::Adaptive: return fuse(embeddings, delta);
    case WeightingStrategy::Identical: return fuse_identical(embeddings, delta);
    case WeightingStrategy::Fixed:
      if (!fixed_logits.valid()) throw std::invalid_argument("fixed strategy requires learned logits");
      return fuse_fixed(embeddings, fixed_logits, delta);
  }
  throw std::invalid_argument("unknown weighting strategy");
}

}  // namespace raml
