#include "raml/eval.hpp"

#include "raml/fusion.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace raml {

using nlohmann::json;

Metric parse_metric(const std::string& name) {
  if (name == "wa") return Metric::WeightedAccuracy;
  if (name == "ua") return Metric::UnweightedAccuracy;
  throw std::invalid_argument("unknown metric '" + name + "' (expected wa or ua)");
}

std::string to_string(Metric metric) {
  return metric == Metric::WeightedAccuracy ? "wa" : "ua";
}

namespace {

void check_predictions(std::span<const int> predictions, std::span<const int> labels) {
  if (labels.empty()) throw std::invalid_argument("accuracy: empty evaluation set");
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("accuracy: predictions and labels differ in length");
  }
}

}  // namespace

double weighted_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  check_predictions(predictions, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double unweighted_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  check_predictions(predictions, labels);
  std::map<int, std::pair<std::size_t, std::size_t>> per_class;  // label -> (correct, total)
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& c = per_class[labels[i]];
    c.first += predictions[i] == labels[i];
    ++c.second;
  }
  double sum = 0;
  for (const auto& [label, c] : per_class) {
    sum += static_cast<double>(c.first) / static_cast<double>(c.second);
  }
  return sum / static_cast<double>(per_class.size());
}

double score(Metric metric, std::span<const int> predictions, std::span<const int> labels) {
  return metric == Metric::WeightedAccuracy ? weighted_accuracy(predictions, labels)
                                            : unweighted_accuracy(predictions, labels);
}

std::vector<int> argmax_rows(const MatrixXd& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inference

namespace {

constexpr Eigen::Index kChunk = 1024;

template <class Fn>
MatrixXd chunked(const MultimodalBatch& batch, Eigen::Index width, Fn&& fn) {
  MatrixXd out(batch.size(), width);
  for (Eigen::Index start = 0; start < batch.size(); start += kChunk) {
    const Eigen::Index count = std::min(kChunk, batch.size() - start);
    MultimodalBatch part;
    for (const MatrixXd& x : batch.features) part.features.push_back(x.middleRows(start, count));
    part.delta = batch.delta.middleRows(start, count);
    part.labels.assign(batch.labels.begin() + start, batch.labels.begin() + start + count);
    part.ids.assign(batch.ids.begin() + start, batch.ids.begin() + start + count);
    out.middleRows(start, count) = fn(part);
  }
  return out;
}

struct MeanEmbeddings {
  std::vector<GaussianEmbedding> embeddings;
  BoundRaml bound;
};

MeanEmbeddings encode_all(Tape& tape, const RamlModel& model, const MultimodalBatch& batch) {
  if (batch.num_modalities() != model.config.num_modalities()) {
    throw std::invalid_argument("model has " + std::to_string(model.config.num_modalities()) +
                                " modalities, batch has " + std::to_string(batch.num_modalities()));
  }
  MeanEmbeddings out{{}, bind(tape, model, false)};
  for (int m = 0; m < batch.num_modalities(); ++m) {
    out.embeddings.push_back(encode(out.bound.encoders[static_cast<std::size_t>(m)],
                                    tape.constant(batch.features[static_cast<std::size_t>(m)]),
                                    model.config.sigma_floor));
  }
  return out;
}

void check_strategy(const RamlModel& model, WeightingStrategy strategy) {
  if (strategy == WeightingStrategy::Fixed && !model.has_fixed_logits()) {
    throw std::invalid_argument("fixed weighting needs a model trained with the fixed strategy");
  }
}

}  // namespace

MatrixXd raml_logits(const RamlModel& model, const MultimodalBatch& batch,
                     WeightingStrategy strategy) {
  check_strategy(model, strategy);
  return chunked(batch, model.config.num_classes, [&](const MultimodalBatch& part) {
    Tape tape;
    const MeanEmbeddings enc = encode_all(tape, model, part);
    const FusedBatch fused = fuse_with(strategy, enc.embeddings, part.delta, enc.bound.fixed_logits);
    return MatrixXd(predict(enc.bound.predictor, fused.h).value());
  });
}

Classifier make_classifier(const RamlModel& model, WeightingStrategy strategy) {
  check_strategy(model, strategy);
  return [&model, strategy](const MultimodalBatch& batch) {
    return argmax_rows(raml_logits(model, batch, strategy));
  };
}

Classifier make_classifier(const RamlModel& model) {
  return make_classifier(model, model.config.strategy);
}

Classifier make_classifier(const ConcatModel& model) {
  return [&model](const MultimodalBatch& batch) {
    const MatrixXd logits = chunked(batch, model.config.num_classes, [&](const MultimodalBatch& part) {
      Tape tape;
      const BoundConcat bound = bind(tape, model, false);
      std::vector<Tensor> parts;
      for (int m = 0; m < part.num_modalities(); ++m) {
        parts.push_back(embed(bound.encoders[static_cast<std::size_t>(m)],
                              tape.constant(part.features[static_cast<std::size_t>(m)])));
      }
      return MatrixXd(forward(bound.classifier, ad::concat(parts)).value());
    });
    return argmax_rows(logits);
  };
}

std::vector<int> predict_label(const RamlModel& model, const MultimodalBatch& batch,
                               const MissingPattern& pattern, WeightingStrategy strategy) {
  return make_classifier(model, strategy)(apply_pattern(batch, pattern));
}

std::vector<int> predict_label(const ConcatModel& model, const MultimodalBatch& batch,
                               const MissingPattern& pattern) {
  return make_classifier(model)(apply_pattern(batch, pattern));
}

// ---------------------------------------------------------------------------
// Reports

const ReportRow& EvalReport::at(const std::string& condition) const {
  for (const ReportRow& r : rows) {
    if (r.condition == condition) return r;
  }
  throw std::out_of_range("report has no row '" + condition + "'");
}

double EvalReport::average() const { return at(kAverageCondition).value; }

json EvalReport::to_json() const {
  json arr = json::array();
  for (const ReportRow& r : rows) {
    arr.push_back({{"condition", r.condition}, {"metric", r.metric}, {"value", r.value}, {"n", r.n}});
  }
  return json{{"rows", arr}};
}

std::string EvalReport::to_csv() const {
  std::string out = "condition,metric,value,n\n";
  for (const ReportRow& r : rows) {
    out += r.condition + "," + r.metric + "," + format_double(r.value) + "," + std::to_string(r.n) + "\n";
  }
  return out;
}

EvalReport evaluate_grid(const Classifier& classify, const Dataset& test, Metric metric) {
  const MultimodalBatch full = test.full_batch();
  EvalReport report;
  double sum = 0;
  const auto patterns = enumerate_patterns(test.num_modalities());
  for (const MissingPattern& p : patterns) {
    const std::vector<int> preds = classify(apply_pattern(full, p));
    const double v = score(metric, preds, test.labels);
    sum += v;
    report.rows.push_back({p.str(), to_string(metric), v, static_cast<long>(test.num_samples())});
  }
  report.rows.push_back({kAverageCondition, to_string(metric), sum / static_cast<double>(patterns.size()),
                         static_cast<long>(test.num_samples() * static_cast<Eigen::Index>(patterns.size()))});
  return report;
}

std::vector<double> default_levels(CorruptionKind kind) {
  if (kind == CorruptionKind::Gaussian) return {0.08, 0.12, 0.18, 0.26, 0.38};
  return {0.05, 0.10, 0.15, 0.20, 0.25};
}

namespace {

std::uint64_t level_seed(std::uint64_t seed, const CorruptionSetting& s) {
  return derive_seed(seed, "corrupt." + to_string(s.kind) + "." + std::to_string(s.modality) + "." +
                               format_double(s.level));
}

}  // namespace

MultimodalBatch corrupted_batch(const Dataset& test, const CorruptionSetting& setting,
                                std::uint64_t seed) {
  Rng rng(level_seed(seed, setting));
  return corrupt(test.full_batch(), setting.modality, setting.kind, setting.level, rng);
}

EvalReport evaluate_corruption_sweep(const Classifier& classify, const Dataset& test, int modality,
                                     CorruptionKind kind, std::span<const double> levels,
                                     Metric metric, std::optional<CorruptionSetting> fixed,
                                     std::uint64_t seed) {
  if (levels.empty()) throw std::invalid_argument("corruption sweep: no levels");
  EvalReport report;
  for (double level : levels) {
    const CorruptionSetting setting{modality, kind, level};
    MultimodalBatch batch = corrupted_batch(test, setting, seed);
    if (fixed) {
      Rng rng(level_seed(seed, *fixed));
      batch = corrupt(batch, fixed->modality, fixed->kind, fixed->level, rng);
    }
    const std::vector<int> preds = classify(batch);
    report.rows.push_back({to_string(kind) + "=" + format_short(level), to_string(metric),
                           score(metric, preds, test.labels), static_cast<long>(test.num_samples())});
  }
  return report;
}

ConcatFitResult build_concat_baseline(const TrainConfig& config, const Dataset& train,
                                      const Dataset* validation) {
  TrainConfig c = config;
  c.augment = false;
  c.lambda1 = 0;
  c.lambda2 = 0;
  return fit_concat(c, train, validation);
}

// ---------------------------------------------------------------------------
// Weight inspection

std::vector<WeightCondition> heatmap_conditions() {
  return {{"clean", CorruptionKind::Gaussian, 0.0},     {"gaussian_0", CorruptionKind::Gaussian, 0.0},
          {"gaussian_0.18", CorruptionKind::Gaussian, 0.18}, {"gaussian_0.38", CorruptionKind::Gaussian, 0.38},
          {"mask_0", CorruptionKind::Mask, 0.0},        {"mask_0.15", CorruptionKind::Mask, 0.15},
          {"mask_0.25", CorruptionKind::Mask, 0.25}};
}

std::vector<MatrixXd> fusion_weight_matrices(const RamlModel& model, const MultimodalBatch& batch) {
  const int modalities = model.config.num_modalities();
  const Eigen::Index dim = model.config.embed_dim;
  const MatrixXd stacked = chunked(batch, modalities * dim, [&](const MultimodalBatch& part) {
    Tape tape;
    const MeanEmbeddings enc = encode_all(tape, model, part);
    const FusedBatch fused =
        fuse_with(model.config.strategy, enc.embeddings, part.delta, enc.bound.fixed_logits);
    MatrixXd block(part.size(), modalities * dim);
    for (int m = 0; m < modalities; ++m) block.middleCols(m * dim, dim) = fused.omega[static_cast<std::size_t>(m)].value();
    return block;
  });
  std::vector<MatrixXd> out;
  for (int m = 0; m < modalities; ++m) out.push_back(stacked.middleCols(m * dim, dim));
  return out;
}

Eigen::VectorXd mean_modality_weights(const RamlModel& model, const MultimodalBatch& batch) {
  const auto omega = fusion_weight_matrices(model, batch);
  Eigen::VectorXd out(static_cast<Eigen::Index>(omega.size()));
  for (std::size_t m = 0; m < omega.size(); ++m) out(static_cast<Eigen::Index>(m)) = omega[m].mean();
  return out;
}

std::vector<WeightHeatmap> export_weight_heatmap(const RamlModel& model, const Dataset& test,
                                                 std::span<const Eigen::Index> samples,
                                                 int corrupted_modality,
                                                 std::span<const WeightCondition> conditions,
                                                 std::uint64_t seed) {
  std::vector<WeightHeatmap> out;
  for (const WeightCondition& c : conditions) {
    const MultimodalBatch batch =
        corrupted_batch(test, {corrupted_modality, c.kind, c.level}, seed);
    const auto omega = fusion_weight_matrices(model, batch);
    WeightHeatmap h;
    h.condition = c.name;
    h.corrupted_modality = corrupted_modality;
    h.samples.assign(samples.begin(), samples.end());
    h.mean_weight.resize(static_cast<Eigen::Index>(omega.size()));
    for (std::size_t m = 0; m < omega.size(); ++m) h.mean_weight(static_cast<Eigen::Index>(m)) = omega[m].mean();
    for (Eigen::Index s : samples) {
      if (s < 0 || s >= test.num_samples()) {
        throw std::out_of_range("export_weight_heatmap: sample " + std::to_string(s) + " out of range");
      }
      MatrixXd w(static_cast<Eigen::Index>(omega.size()), model.config.embed_dim);
      for (std::size_t m = 0; m < omega.size(); ++m) w.row(static_cast<Eigen::Index>(m)) = omega[m].row(s);
      h.omega.push_back(std::move(w));
    }
    out.push_back(std::move(h));
  }
  return out;
}

std::string heatmap_csv(const WeightHeatmap& heatmap) {
  std::string out = "sample,modality,mean_weight";
  const Eigen::Index dim = heatmap.omega.empty() ? 0 : heatmap.omega.front().cols();
  for (Eigen::Index d = 0; d < dim; ++d) out += ",w" + std::to_string(d);
  out += "\n";
  for (std::size_t k = 0; k < heatmap.samples.size(); ++k) {
    const MatrixXd& w = heatmap.omega[k];
    for (Eigen::Index m = 0; m < w.rows(); ++m) {
      out += std::to_string(heatmap.samples[k]) + "," + std::to_string(m) + "," +
             format_double(w.row(m).mean());
      for (Eigen::Index d = 0; d < dim; ++d) out += "," + format_double(w(m, d));
      out += "\n";
    }
  }
  return out;
}

}  // namespace raml
