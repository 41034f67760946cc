#pragma once

#include "raml/data.hpp"
#include "raml/model.hpp"
#include "raml/train.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace raml {

enum class Metric { WeightedAccuracy, UnweightedAccuracy };

Metric parse_metric(const std::string& name);
std::string to_string(Metric metric);

/// Overall fraction correct.
double weighted_accuracy(std::span<const int> predictions, std::span<const int> labels);
/// Mean per-class recall over classes present in `labels`.
double unweighted_accuracy(std::span<const int> predictions, std::span<const int> labels);
double score(Metric metric, std::span<const int> predictions, std::span<const int> labels);

/// Row-wise argmax, ties to the lowest index.
std::vector<int> argmax_rows(const MatrixXd& logits);

/// Maps a batch (zero-fill and delta already applied) to class indices.
using Classifier = std::function<std::vector<int>(const MultimodalBatch&)>;

Classifier make_classifier(const RamlModel& model, WeightingStrategy strategy);
Classifier make_classifier(const RamlModel& model);
Classifier make_classifier(const ConcatModel& model);

/// Fused logits from the means (no sampling), n x C.
MatrixXd raml_logits(const RamlModel& model, const MultimodalBatch& batch,
                     WeightingStrategy strategy);

std::vector<int> predict_label(const RamlModel& model, const MultimodalBatch& batch,
                               const MissingPattern& pattern, WeightingStrategy strategy);
std::vector<int> predict_label(const ConcatModel& model, const MultimodalBatch& batch,
                               const MissingPattern& pattern);

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
  std::string condition;
  std::string metric;
  double value = 0;
  long n = 0;
};

inline constexpr const char* kAverageCondition = "Average";

struct EvalReport {
  std::vector<ReportRow> rows;

  const ReportRow& at(const std::string& condition) const;
  /// Value of the Average row; throws when absent.
  double average() const;

  nlohmann::json to_json() const;
  /// Header "condition,metric,value,n", values with 17 significant digits.
  std::string to_csv() const;
};

/// One row per missing pattern (every sample under every pattern) plus Average.
EvalReport evaluate_grid(const Classifier& classify, const Dataset& test, Metric metric);

struct CorruptionSetting {
  int modality = 0;
  CorruptionKind kind = CorruptionKind::Gaussian;
  double level = 0;
};

inline constexpr std::uint64_t kEvalSeed = 20240601;

std::vector<double> default_levels(CorruptionKind kind);

/// One row per level, all modalities available. `fixed`, when set, adds a
/// second corruption held at a constant level (dual-corruption protocol).
/// Each level uses its own seed derived from (seed, level).
EvalReport evaluate_corruption_sweep(const Classifier& classify, const Dataset& test, int modality,
                                     CorruptionKind kind, std::span<const double> levels,
                                     Metric metric,
                                     std::optional<CorruptionSetting> fixed = std::nullopt,
                                     std::uint64_t seed = kEvalSeed);

/// Batch with the given corruption applied using the per-level seed of the sweep.
MultimodalBatch corrupted_batch(const Dataset& test, const CorruptionSetting& setting,
                                std::uint64_t seed = kEvalSeed);

// ---------------------------------------------------------------------------
// Baseline

/// Deterministic trunks, concatenated embeddings, single classifier, trained on
/// full-modality data with cross-entropy only.
ConcatFitResult build_concat_baseline(const TrainConfig& config, const Dataset& train,
                                      const Dataset* validation = nullptr);

// ---------------------------------------------------------------------------
// Element-wise weight inspection

struct WeightCondition {
  std::string name;
  CorruptionKind kind = CorruptionKind::Gaussian;
  double level = 0;
};

/// clean, gaussian 0 / 0.18 / 0.38, mask 0 / 0.15 / 0.25.
std::vector<WeightCondition> heatmap_conditions();

/// Fusion weights of the model's strategy, one n x D matrix per modality.
std::vector<MatrixXd> fusion_weight_matrices(const RamlModel& model, const MultimodalBatch& batch);

/// Mean weight per modality over samples and elements.
Eigen::VectorXd mean_modality_weights(const RamlModel& model, const MultimodalBatch& batch);

struct WeightHeatmap {
  std::string condition;
  int corrupted_modality = 0;
  std::vector<Eigen::Index> samples;
  std::vector<MatrixXd> omega;      // per listed sample, M x D
  Eigen::VectorXd mean_weight;      // per modality, averaged over the whole set
};

std::vector<WeightHeatmap> export_weight_heatmap(const RamlModel& model, const Dataset& test,
                                                 std::span<const Eigen::Index> samples,
                                                 int corrupted_modality,
                                                 std::span<const WeightCondition> conditions,
                                                 std::uint64_t seed = kEvalSeed);

/// Columns: sample,modality,mean_weight,w0..w{D-1}; M rows per sample.
std::string heatmap_csv(const WeightHeatmap& heatmap);

}  // namespace raml
