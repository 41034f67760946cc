#pragma once

// Per-modality Gaussian encoders, the modality-shared linear predictor, and
// the deterministic concatenation baseline.
//
// Parameter values live in plain Eigen matrices. A forward pass binds them
// onto a Tape as leaves (`bind`), producing a mirror struct of Tensors with
// the same member layout, so a single visitor enumerates both.

#include "raml/autodiff.hpp"
#include "raml/random.hpp"

#include <Eigen/Dense>

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace raml {

using Eigen::MatrixXd;
using ad::Tape;
using ad::Tensor;

enum class WeightingStrategy { Adaptive, Identical, Fixed };

std::string_view to_string(WeightingStrategy s);
WeightingStrategy parse_strategy(std::string_view name);

/// y = x * weight + bias, weight is in x out, bias is 1 x out.
struct Linear {
  MatrixXd weight;
  MatrixXd bias;

  /// Uniform in +-sqrt(6 / (in + out)), zero bias.
  static Linear glorot(int in, int out, Rng& rng);
};

struct EncoderParams {
  Linear hidden1;
  Linear hidden2;
  Linear mu_head;
  Linear sigma_head;
};

struct PredictorParams {
  Linear linear;
};

struct ModelConfig {
  std::vector<int> input_dims;
  int hidden = 64;
  int embed_dim = 16;
  int num_classes = 2;
  double sigma_floor = 1e-4;
  WeightingStrategy strategy = WeightingStrategy::Adaptive;

  int num_modalities() const { return static_cast<int>(input_dims.size()); }
  void validate() const;
};

/// Raw sigma-head output that maps to sigma == 1 under softplus (floor aside).
inline constexpr double kUnitSigmaRaw = 0.54132485461291810;

struct RamlModel {
  ModelConfig config;
  std::vector<EncoderParams> encoders;
  PredictorParams predictor;
  /// M x D logits for the Fixed strategy; empty otherwise.
  MatrixXd fixed_logits;

  bool has_fixed_logits() const { return config.strategy == WeightingStrategy::Fixed; }
};

RamlModel init_raml(const ModelConfig& config, Rng& rng);

struct DeterministicEncoder {
  Linear hidden1;
  Linear hidden2;
  Linear head;
};

/// Concatenation baseline: deterministic unimodal embeddings, concatenated
/// (M * D wide) into a single linear classifier.
struct ConcatModel {
  ModelConfig config;
  std::vector<DeterministicEncoder> encoders;
  Linear classifier;
};

ConcatModel init_concat(const ModelConfig& config, Rng& rng);

// ---------------------------------------------------------------------------
// Parameter enumeration. The visitor is called as f(name, matrix) in a fixed
// order; checkpoints, optimizer state and tape binding all rely on it.

template <class L, class F>
void visit_linear(L& layer, const std::string& prefix, F& f) {
  f(prefix + ".weight", layer.weight);
  f(prefix + ".bias", layer.bias);
}

template <class Model, class F>
void visit_raml(Model& m, bool with_fixed_logits, F&& f) {
  for (std::size_t i = 0; i < m.encoders.size(); ++i) {
    const std::string p = "encoder." + std::to_string(i);
    visit_linear(m.encoders[i].hidden1, p + ".hidden1", f);
    visit_linear(m.encoders[i].hidden2, p + ".hidden2", f);
    visit_linear(m.encoders[i].mu_head, p + ".mu_head", f);
    visit_linear(m.encoders[i].sigma_head, p + ".sigma_head", f);
  }
  visit_linear(m.predictor.linear, "predictor", f);
  if (with_fixed_logits) f(std::string("fixed_logits"), m.fixed_logits);
}

template <class Model, class F>
void visit_concat(Model& m, F&& f) {
  for (std::size_t i = 0; i < m.encoders.size(); ++i) {
    const std::string p = "encoder." + std::to_string(i);
    visit_linear(m.encoders[i].hidden1, p + ".hidden1", f);
    visit_linear(m.encoders[i].hidden2, p + ".hidden2", f);
    visit_linear(m.encoders[i].head, p + ".head", f);
  }
  visit_linear(m.classifier, "classifier", f);
}

struct ParameterRef {
  std::string name;
  MatrixXd* value;
};

std::vector<ParameterRef> parameters(RamlModel& model);
std::vector<ParameterRef> parameters(ConcatModel& model);

// ---------------------------------------------------------------------------
// Tape-bound mirrors

struct BoundLinear {
  Tensor weight;
  Tensor bias;
};

struct BoundEncoder {
  BoundLinear hidden1;
  BoundLinear hidden2;
  BoundLinear mu_head;
  BoundLinear sigma_head;
};

struct BoundPredictor {
  BoundLinear linear;
};

struct BoundRaml {
  std::vector<BoundEncoder> encoders;
  BoundPredictor predictor;
  Tensor fixed_logits;
  /// Leaves in parameters() order.
  std::vector<Tensor> leaves;
};

struct BoundDeterministicEncoder {
  BoundLinear hidden1;
  BoundLinear hidden2;
  BoundLinear head;
};

struct BoundConcat {
  std::vector<BoundDeterministicEncoder> encoders;
  BoundLinear classifier;
  std::vector<Tensor> leaves;
};

/// Binds parameters as tape variables (trainable) or constants (inference).
BoundRaml bind(Tape& tape, const RamlModel& model, bool trainable = true);
BoundConcat bind(Tape& tape, const ConcatModel& model, bool trainable = true);

Tensor forward(const BoundLinear& layer, const Tensor& x);

/// Batched Gaussian embedding: mu and sigma are both n x D.
struct GaussianEmbedding {
  Tensor mu;
  Tensor sigma;
};

/// mu = g_mu(f(x)); sigma = softplus(g_sigma(f(x))) + sigma_floor, where f is
/// the two-layer relu trunk.
GaussianEmbedding encode(const BoundEncoder& encoder, const Tensor& x, double sigma_floor);

/// h = mu + noise * sigma (element-wise); noise has mu's shape.
Tensor reparameterize(const GaussianEmbedding& embedding, const MatrixXd& noise);

/// logits = h * theta + bias.
Tensor predict(const BoundPredictor& predictor, const Tensor& h);

/// Deterministic trunk + head of the concat baseline, n x D.
Tensor embed(const BoundDeterministicEncoder& encoder, const Tensor& x);

}  // namespace raml
