#pragma once

#include "raml/data.hpp"
#include "raml/losses.hpp"
#include "raml/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

namespace raml {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double weight_decay = 5e-4;
  bool decoupled_weight_decay = false;
  double lambda1 = 1.0;
  double lambda2 = 0.2;
  int embed_dim = 16;
  int hidden = 64;
  double sigma_floor = 1e-4;
  std::uint64_t seed = 0;
  bool literal_losses = false;
  bool materialize_patterns = false;
  /// Missing-pattern augmentation; off trains on full modalities only.
  bool augment = true;
  WeightingStrategy strategy = WeightingStrategy::Adaptive;

  void validate() const;
  ModelConfig model_config(const Dataset& data) const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<MatrixXd> first_moment;
  std::vector<MatrixXd> second_moment;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam. Coupled weight decay adds wd * p to the gradient
/// before the moment update; decoupled decay scales p by (1 - lr * wd).
void adam_step(std::span<MatrixXd* const> params, std::span<const MatrixXd> grads,
               AdamState& state, double learning_rate, double weight_decay,
               bool decoupled = false);

// ---------------------------------------------------------------------------
// Per-batch objective

struct LossTerms {
  Tensor multimodal;
  Tensor unimodal;
  Tensor sparsity;
  Tensor total;

  LossBreakdown breakdown(double lambda1, double lambda2) const;
};

/// Forward pass of one training step: encode every modality, reparameterized
/// unimodal predictions, fusion under the batch's delta, and the three losses.
/// `noise` holds one n x D standard-normal draw per modality.
LossTerms raml_losses(const BoundRaml& bound, const RamlModel& model, const MultimodalBatch& batch,
                      std::span<const MatrixXd> noise, const TrainConfig& config);

/// Cross-entropy of the concatenation baseline.
Tensor concat_loss(const BoundConcat& bound, const MultimodalBatch& batch);

struct EpochLog {
  int epoch = 0;
  LossBreakdown loss;
  double val_metric = 0;  // NaN when no validation set
  double seconds = 0;
};

EpochLog train_epoch(RamlModel& model, AdamState& state, const Dataset& train,
                     const TrainConfig& config, Rng& rng, int epoch);
EpochLog train_concat_epoch(ConcatModel& model, AdamState& state, const Dataset& train,
                            const TrainConfig& config, Rng& rng, int epoch);

struct FitResult {
  RamlModel model;
  Standardizer standardizer;
  std::vector<EpochLog> history;
};

struct ConcatFitResult {
  ConcatModel model;
  Standardizer standardizer;
  std::vector<EpochLog> history;
};

/// Standardizes with training statistics, then trains for config.epochs.
/// With a validation set, each epoch records the average-over-patterns accuracy.
FitResult fit(const TrainConfig& config, const Dataset& train, const Dataset* validation = nullptr);
ConcatFitResult fit_concat(const TrainConfig& config, const Dataset& train,
                           const Dataset* validation = nullptr);

std::string train_log_csv(const std::vector<EpochLog>& history);

// ---------------------------------------------------------------------------
// Checkpoints: {version, kind, config, params: {name: [numbers]}}

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  TrainConfig config;
  std::variant<RamlModel, ConcatModel> model;
  Standardizer standardizer;
  std::vector<std::string> modality_names;

  const ModelConfig& model_config() const;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws CheckpointError when the dataset's modalities, dims or classes differ.
void check_compatible(const Checkpoint& checkpoint, const Dataset& data);

}  // namespace raml
