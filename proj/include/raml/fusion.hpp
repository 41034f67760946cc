#pragma once

// Precision-weighted fusion of per-modality Gaussian embeddings.
//
//   1 / var_d   = sum_m delta_m / sigma_{m,d}^2
//   omega_{m,d} = delta_m * var_d / sigma_{m,d}^2
//   h_d         = sum_m omega_{m,d} * mu_{m,d}
//
// Two forms are provided: value-level templates over Eigen arrays for a
// single sample (rows are modalities, columns are embedding elements), and
// tape-level batched functions used for training and evaluation.

#include "raml/autodiff.hpp"
#include "raml/model.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace raml {

class NoModalityError : public std::invalid_argument {
 public:
  NoModalityError() : std::invalid_argument("no modality available") {}
};

template <typename Scalar>
struct FusionResult {
  Eigen::Array<Scalar, 1, Eigen::Dynamic> h;
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> omega;  // M x D
  Eigen::Array<Scalar, 1, Eigen::Dynamic> combined_variance;
};

/// sigma is M x D (strictly positive), delta is an M-vector of 0/1 flags.
template <typename DerivedSigma, typename DerivedDelta>
Eigen::Array<typename DerivedSigma::Scalar, 1, Eigen::Dynamic> combined_variance(
    const Eigen::ArrayBase<DerivedSigma>& sigma, const Eigen::ArrayBase<DerivedDelta>& delta) {
  using Scalar = typename DerivedSigma::Scalar;
  if (delta.size() != sigma.rows()) {
    throw std::invalid_argument("combined_variance: delta length does not match modality count");
  }
  if (!(delta != Scalar(0)).any()) throw NoModalityError();
  Eigen::Array<Scalar, 1, Eigen::Dynamic> precision =
      Eigen::Array<Scalar, 1, Eigen::Dynamic>::Zero(sigma.cols());
  for (Eigen::Index m = 0; m < sigma.rows(); ++m) {
    if (delta(m) != Scalar(0)) precision += delta(m) / sigma.row(m).square();
  }
  return precision.inverse();
}

template <typename DerivedSigma, typename DerivedDelta>
Eigen::Array<typename DerivedSigma::Scalar, Eigen::Dynamic, Eigen::Dynamic> fusion_weights(
    const Eigen::ArrayBase<DerivedSigma>& sigma, const Eigen::ArrayBase<DerivedDelta>& delta) {
  using Scalar = typename DerivedSigma::Scalar;
  const auto var = combined_variance(sigma, delta);
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> omega(sigma.rows(), sigma.cols());
  for (Eigen::Index m = 0; m < sigma.rows(); ++m) {
    if (delta(m) == Scalar(0)) {
      omega.row(m).setZero();
    } else {
      omega.row(m) = delta(m) * var / sigma.row(m).square();
    }
  }
  return omega;
}

template <typename DerivedMu, typename DerivedSigma, typename DerivedDelta>
FusionResult<typename DerivedMu::Scalar> fuse(const Eigen::ArrayBase<DerivedMu>& mu,
                                              const Eigen::ArrayBase<DerivedSigma>& sigma,
                                              const Eigen::ArrayBase<DerivedDelta>& delta) {
  if (mu.rows() != sigma.rows() || mu.cols() != sigma.cols()) {
    throw std::invalid_argument("fuse: mu and sigma shapes differ");
  }
  FusionResult<typename DerivedMu::Scalar> r;
  r.combined_variance = combined_variance(sigma, delta);
  r.omega = fusion_weights(sigma, delta);
  r.h = (r.omega * mu).colwise().sum();
  return r;
}

// ---------------------------------------------------------------------------
// Batched, differentiable forms. `delta` is n x M with 0/1 entries and every
// row must contain at least one 1.

struct FusedBatch {
  Tensor h;                                 // n x D
  std::vector<Tensor> omega;                // M tensors, each n x D
  std::optional<Tensor> combined_variance;  // n x D, adaptive strategy only
};

void check_availability(const MatrixXd& delta, Eigen::Index rows, Eigen::Index modalities);

Tensor combined_variance(std::span<const GaussianEmbedding> embeddings, const MatrixXd& delta);
std::vector<Tensor> fusion_weights(std::span<const GaussianEmbedding> embeddings,
                                   const MatrixXd& delta);
FusedBatch fuse(std::span<const GaussianEmbedding> embeddings, const MatrixXd& delta);

/// omega_{m,d} = delta_m / sum_k delta_k.
FusedBatch fuse_identical(std::span<const GaussianEmbedding> embeddings, const MatrixXd& delta);

/// omega_{m,d} = delta_m exp(L_{m,d}) / sum_k delta_k exp(L_{k,d}) with
/// input-independent logits L (M x D).
FusedBatch fuse_fixed(std::span<const GaussianEmbedding> embeddings, const Tensor& logits,
                      const MatrixXd& delta);

FusedBatch fuse_with(WeightingStrategy strategy, std::span<const GaussianEmbedding> embeddings,
                     const MatrixXd& delta, const Tensor& fixed_logits = {});

}  // namespace raml
