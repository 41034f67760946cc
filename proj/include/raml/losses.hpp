#pragma once

// Training objectives: multimodal cross-entropy on the fused embedding,
// unimodal cross-entropy on reparameterized samples, and the
// precision-weighted L1 sparsity penalty on unimodal means. Every loss is a
// mean over the batch.

#include "raml/autodiff.hpp"
#include "raml/fusion.hpp"
#include "raml/model.hpp"

#include <span>
#include <vector>

namespace raml {

/// Masked: terms of unavailable modalities are dropped and the sparsity
/// weights use the availability-masked precision. Literal: every modality
/// contributes and the sparsity weights ignore availability.
enum class LossMode { Masked, Literal };

struct LossBreakdown {
  double l_multimodal = 0;
  double l_unimodal = 0;
  double l_sparsity = 0;
  double total = 0;
  double lambda1 = 0;
  double lambda2 = 0;
};

/// total = lm + lambda1 * lu + lambda2 * ld. Throws on negative lambdas.
LossBreakdown total_loss(double lm, double lu, double ld, double lambda1, double lambda2);
Tensor total_loss(const Tensor& lm, const Tensor& lu, const Tensor& ld, double lambda1,
                  double lambda2);

/// -log softmax(logits)[label] per row, n x 1, via log-sum-exp.
Tensor per_sample_cross_entropy(const Tensor& logits, std::span<const int> labels);
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Sum over modalities of the batch-mean cross-entropy of predict(mu + noise * sigma).
/// Masked mode weights each sample's term by its delta flag (still divided by n).
Tensor unimodal_loss(std::span<const GaussianEmbedding> embeddings, std::span<const int> labels,
                     const MatrixXd& delta, const BoundPredictor& predictor,
                     std::span<const MatrixXd> noise, LossMode mode = LossMode::Masked);

/// Availability-free form: every modality, precision over all M.
Tensor sparsity_loss(std::span<const GaussianEmbedding> embeddings);
/// Masked form: only available modalities, precision over available ones.
Tensor sparsity_loss(std::span<const GaussianEmbedding> embeddings, const MatrixXd& delta);

Tensor multimodal_loss(const FusedBatch& fused, std::span<const int> labels,
                       const BoundPredictor& predictor);

}  // namespace raml
