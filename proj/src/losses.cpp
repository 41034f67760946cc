#include "raml/losses.hpp"

#include <stdexcept>

namespace raml {

LossBreakdown total_loss(double lm, double lu, double ld, double lambda1, double lambda2) {
  if (lambda1 < 0 || lambda2 < 0) throw std::invalid_argument("total_loss: lambdas must be >= 0");
  LossBreakdown b;
  b.l_multimodal = lm;
  b.l_unimodal = lu;
  b.l_sparsity = ld;
  b.lambda1 = lambda1;
  b.lambda2 = lambda2;
  b.total = lm + lambda1 * lu + lambda2 * ld;
  return b;
}

Tensor total_loss(const Tensor& lm, const Tensor& lu, const Tensor& ld, double lambda1,
                  double lambda2) {
  if (lambda1 < 0 || lambda2 < 0) throw std::invalid_argument("total_loss: lambdas must be >= 0");
  return ad::add(ad::add(lm, ad::scale(lu, lambda1)), ad::scale(ld, lambda2));
}

Tensor per_sample_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index classes = logits.cols();
  if (n == 0) throw std::invalid_argument("cross_entropy: empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw ad::ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  MatrixXd onehot = MatrixXd::Zero(n, classes);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " at row " +
                              std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
    onehot(i, y) = 1.0;
  }
  const Tensor picked = ad::sum(ad::mul(logits, logits.tape().constant(onehot)), ad::Axis::Cols);
  return ad::sub(ad::logsumexp(logits), picked);
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  return ad::mean(per_sample_cross_entropy(logits, labels));
}

Tensor unimodal_loss(std::span<const GaussianEmbedding> embeddings, std::span<const int> labels,
                     const MatrixXd& delta, const BoundPredictor& predictor,
                     std::span<const MatrixXd> noise, LossMode mode) {
  if (noise.size() != embeddings.size()) {
    throw std::invalid_argument("unimodal_loss: one noise draw per modality required");
  }
  if (embeddings.empty()) throw std::invalid_argument("unimodal_loss: no modalities");
  const Eigen::Index n = embeddings.front().mu.rows();
  if (mode == LossMode::Masked) check_availability(delta, n, static_cast<Eigen::Index>(embeddings.size()));
  Tape& tape = embeddings.front().mu.tape();
  const double inv_n = 1.0 / static_cast<double>(n);

  Tensor total;
  for (std::size_t m = 0; m < embeddings.size(); ++m) {
    const Tensor logits = predict(predictor, reparameterize(embeddings[m], noise[m]));
    const Tensor ce = per_sample_cross_entropy(logits, labels);
    Tensor term;
    if (mode == LossMode::Masked) {
      const MatrixXd flags = delta.col(static_cast<Eigen::Index>(m));
      term = ad::scale(ad::sum(ad::mul(ce, tape.constant(flags))), inv_n);
    } else {
      term = ad::mean(ce);
    }
    total = m == 0 ? term : ad::add(total, term);
  }
  return total;
}

namespace {

Tensor sparsity_from_weights(std::span<const GaussianEmbedding> embeddings,
                             const std::vector<Tensor>& omega) {
  const double inv_n = 1.0 / static_cast<double>(embeddings.front().mu.rows());
  Tensor total;
  for (std::size_t m = 0; m < embeddings.size(); ++m) {
    const Tensor term = ad::sum(ad::abs(ad::mul(omega[m], embeddings[m].mu)));
    total = m == 0 ? term : ad::add(total, term);
  }
  return ad::scale(total, inv_n);
}

}  // namespace

Tensor sparsity_loss(std::span<const GaussianEmbedding> embeddings) {
  if (embeddings.empty()) throw std::invalid_argument("sparsity_loss: no modalities");
  const MatrixXd all = MatrixXd::Ones(embeddings.front().mu.rows(),
                                      static_cast<Eigen::Index>(embeddings.size()));
  return sparsity_from_weights(embeddings, fuse(embeddings, all).omega);
}

Tensor sparsity_loss(std::span<const GaussianEmbedding> embeddings, const MatrixXd& delta) {
  if (embeddings.empty()) throw std::invalid_argument("sparsity_loss: no modalities");
  return sparsity_from_weights(embeddings, fuse(embeddings, delta).omega);
}

Tensor multimodal_loss(const FusedBatch& fused, std::span<const int> labels,
                       const BoundPredictor& predictor) {
  return cross_entropy(predict(predictor, fused.h), labels);
}

}  // namespace raml
