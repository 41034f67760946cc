#include "raml/train.hpp"

#include "raml/eval.hpp"
#include "raml/fusion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace raml {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (!(weight_decay >= 0)) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (!(lambda1 >= 0) || !(lambda2 >= 0)) throw std::invalid_argument("train: lambdas must be >= 0");
  if (embed_dim < 1 || hidden < 1) throw std::invalid_argument("train: embed_dim/hidden must be >= 1");
  if (!(sigma_floor > 0)) throw std::invalid_argument("train: sigma_floor must be positive");
}

ModelConfig TrainConfig::model_config(const Dataset& data) const {
  ModelConfig m;
  m.input_dims = data.input_dims();
  m.hidden = hidden;
  m.embed_dim = embed_dim;
  m.num_classes = data.num_classes;
  m.sigma_floor = sigma_floor;
  m.strategy = strategy;
  return m;
}

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"weight_decay", c.weight_decay},
              {"decoupled_weight_decay", c.decoupled_weight_decay},
              {"lambda1", c.lambda1},
              {"lambda2", c.lambda2},
              {"embed_dim", c.embed_dim},
              {"hidden", c.hidden},
              {"sigma_floor", c.sigma_floor},
              {"seed", c.seed},
              {"literal_losses", c.literal_losses},
              {"materialize_patterns", c.materialize_patterns},
              {"augment", c.augment},
              {"strategy", std::string(to_string(c.strategy))}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.decoupled_weight_decay = j.at("decoupled_weight_decay").get<bool>();
  c.lambda1 = j.at("lambda1").get<double>();
  c.lambda2 = j.at("lambda2").get<double>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.sigma_floor = j.at("sigma_floor").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.literal_losses = j.at("literal_losses").get<bool>();
  c.materialize_patterns = j.at("materialize_patterns").get<bool>();
  c.augment = j.at("augment").get<bool>();
  c.strategy = parse_strategy(j.at("strategy").get<std::string>());
  return c;
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::span<MatrixXd* const> params, std::span<const MatrixXd> grads,
               AdamState& state, double learning_rate, double weight_decay, bool decoupled) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " parameters but " +
                                std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.empty()) {
    for (MatrixXd* p : params) {
      state.first_moment.push_back(MatrixXd::Zero(p->rows(), p->cols()));
      state.second_moment.push_back(MatrixXd::Zero(p->rows(), p->cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state tracks a different parameter set");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].rows() != params[k]->rows() || grads[k].cols() != params[k]->cols() ||
        state.first_moment[k].rows() != params[k]->rows() ||
        state.first_moment[k].cols() != params[k]->cols()) {
      throw ad::ShapeError("adam_step: shape mismatch for parameter " + std::to_string(k));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);

  for (std::size_t k = 0; k < params.size(); ++k) {
    MatrixXd& p = *params[k];
    MatrixXd g = grads[k];
    if (!decoupled && weight_decay != 0) g += weight_decay * p;
    MatrixXd& m = state.first_moment[k];
    MatrixXd& v = state.second_moment[k];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    if (decoupled && weight_decay != 0) p *= (1.0 - learning_rate * weight_decay);
    p.array() -= learning_rate * (m.array() / correction1) /
                 ((v.array() / correction2).sqrt() + state.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Objectives

LossBreakdown LossTerms::breakdown(double lambda1, double lambda2) const {
  LossBreakdown b = total_loss(multimodal.item(), unimodal.item(), sparsity.item(), lambda1, lambda2);
  b.total = total.item();
  return b;
}

LossTerms raml_losses(const BoundRaml& bound, const RamlModel& model, const MultimodalBatch& batch,
                      std::span<const MatrixXd> noise, const TrainConfig& config) {
  Tape& tape = bound.predictor.linear.weight.tape();
  const LossMode mode = config.literal_losses ? LossMode::Literal : LossMode::Masked;

  std::vector<GaussianEmbedding> embeddings;
  for (int m = 0; m < batch.num_modalities(); ++m) {
    const Tensor x = tape.constant(batch.features[static_cast<std::size_t>(m)]);
    embeddings.push_back(
        encode(bound.encoders[static_cast<std::size_t>(m)], x, model.config.sigma_floor));
  }

  LossTerms t;
  t.unimodal = unimodal_loss(embeddings, batch.labels, batch.delta, bound.predictor, noise, mode);
  const FusedBatch fused =
      fuse_with(model.config.strategy, embeddings, batch.delta, bound.fixed_logits);
  t.multimodal = multimodal_loss(fused, batch.labels, bound.predictor);
  t.sparsity = mode == LossMode::Literal ? sparsity_loss(embeddings)
                                         : sparsity_loss(embeddings, batch.delta);
  t.total = total_loss(t.multimodal, t.unimodal, t.sparsity, config.lambda1, config.lambda2);
  return t;
}

Tensor concat_loss(const BoundConcat& bound, const MultimodalBatch& batch) {
  Tape& tape = bound.classifier.weight.tape();
  std::vector<Tensor> parts;
  for (int m = 0; m < batch.num_modalities(); ++m) {
    parts.push_back(embed(bound.encoders[static_cast<std::size_t>(m)],
                          tape.constant(batch.features[static_cast<std::size_t>(m)])));
  }
  return cross_entropy(forward(bound.classifier, ad::concat(parts)), batch.labels);
}

namespace {

void check_finite(double value, const char* component, int epoch, std::size_t batch) {
  if (!std::isfinite(value)) {
    throw std::runtime_error("non-finite " + std::string(component) + " loss at epoch " +
                             std::to_string(epoch) + ", batch " + std::to_string(batch));
  }
}

template <class Model, class Objective>
EpochLog run_epoch(Model& model, AdamState& state, const Dataset& train, const TrainConfig& config,
                   Rng& rng, int epoch, bool augment, Objective&& objective) {
  const auto started = std::chrono::steady_clock::now();
  std::vector<MatrixXd*> targets;
  for (const ParameterRef& p : parameters(model)) targets.push_back(p.value);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(train.num_samples()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), rng);

  EpochLog log;
  log.epoch = epoch;
  log.loss.lambda1 = config.lambda1;
  log.loss.lambda2 = config.lambda2;
  double weight = 0;
  const auto batch_size = static_cast<std::size_t>(config.batch_size);

  for (std::size_t start = 0, index = 0; start < order.size(); start += batch_size, ++index) {
    const std::size_t count = std::min(batch_size, order.size() - start);
    MultimodalBatch batch = train.batch(std::span(order).subspan(start, count));
    if (augment) {
      batch = config.materialize_patterns ? materialize_missing(batch) : augment_missing(batch, rng);
    }

    Tape tape;
    const auto bound = bind(tape, model);
    const LossTerms terms = objective(bound, batch, rng);
    const LossBreakdown b = terms.breakdown(config.lambda1, config.lambda2);
    check_finite(b.l_multimodal, "multimodal", epoch, index);
    check_finite(b.l_unimodal, "unimodal", epoch, index);
    check_finite(b.l_sparsity, "sparsity", epoch, index);
    check_finite(b.total, "total", epoch, index);

    const ad::Gradients grads = tape.backward(terms.total);
    std::vector<MatrixXd> g;
    g.reserve(bound.leaves.size());
    for (const Tensor& leaf : bound.leaves) g.push_back(grads.at(leaf));
    adam_step(targets, g, state, config.learning_rate, config.weight_decay,
              config.decoupled_weight_decay);

    const double w = static_cast<double>(count);
    log.loss.l_multimodal += w * b.l_multimodal;
    log.loss.l_unimodal += w * b.l_unimodal;
    log.loss.l_sparsity += w * b.l_sparsity;
    log.loss.total += w * b.total;
    weight += w;
  }
  if (weight > 0) {
    log.loss.l_multimodal /= weight;
    log.loss.l_unimodal /= weight;
    log.loss.l_sparsity /= weight;
    log.loss.total /= weight;
  }
  log.val_metric = std::numeric_limits<double>::quiet_NaN();
  log.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return log;
}

}  // namespace

EpochLog train_epoch(RamlModel& model, AdamState& state, const Dataset& train,
                     const TrainConfig& config, Rng& rng, int epoch) {
  return run_epoch(model, state, train, config, rng, epoch, config.augment,
                   [&](const BoundRaml& bound, const MultimodalBatch& batch, Rng& r) {
                     std::vector<MatrixXd> noise;
                     for (int m = 0; m < batch.num_modalities(); ++m) {
                       noise.push_back(standard_normal(batch.size(), model.config.embed_dim, r));
                     }
                     return raml_losses(bound, model, batch, noise, config);
                   });
}

EpochLog train_concat_epoch(ConcatModel& model, AdamState& state, const Dataset& train,
                            const TrainConfig& config, Rng& rng, int epoch) {
  return run_epoch(model, state, train, config, rng, epoch, false,
                   [&](const BoundConcat& bound, const MultimodalBatch& batch, Rng&) {
                     Tape& tape = bound.classifier.weight.tape();
                     LossTerms t;
                     t.multimodal = concat_loss(bound, batch);
                     t.unimodal = tape.constant(MatrixXd::Zero(1, 1));
                     t.sparsity = tape.constant(MatrixXd::Zero(1, 1));
                     t.total = t.multimodal;
                     return t;
                   });
}

namespace {

template <class Result, class Init, class Epoch, class Classify>
Result fit_impl(const TrainConfig& config, const Dataset& train, const Dataset* validation,
                Init init, Epoch epoch_fn, Classify classify) {
  config.validate();
  train.validate();
  Result r;
  r.standardizer = Standardizer::fit(train);
  const Dataset data = r.standardizer.apply(train);
  std::optional<Dataset> val;
  if (validation) val = r.standardizer.apply(*validation);

  Rng init_rng(derive_seed(config.seed, "model.init"));
  r.model = init(config.model_config(data), init_rng);
  Rng rng(derive_seed(config.seed, "train.loop"));
  AdamState state;
  for (int e = 1; e <= config.epochs; ++e) {
    EpochLog log = epoch_fn(r.model, state, data, config, rng, e);
    if (val) log.val_metric = evaluate_grid(classify(r.model), *val, Metric::WeightedAccuracy).average();
    r.history.push_back(log);
  }
  return r;
}

}  // namespace

FitResult fit(const TrainConfig& config, const Dataset& train, const Dataset* validation) {
  return fit_impl<FitResult>(
      config, train, validation, init_raml, train_epoch,
      [](const RamlModel& m) { return make_classifier(m); });
}

ConcatFitResult fit_concat(const TrainConfig& config, const Dataset& train,
                           const Dataset* validation) {
  return fit_impl<ConcatFitResult>(
      config, train, validation, init_concat, train_concat_epoch,
      [](const ConcatModel& m) { return make_classifier(m); });
}

std::string train_log_csv(const std::vector<EpochLog>& history) {
  std::string out = "epoch,l_m,l_u,l_d,total,val_avg_metric,seconds\n";
  for (const EpochLog& e : history) {
    out += std::to_string(e.epoch) + "," + format_double(e.loss.l_multimodal) + "," +
           format_double(e.loss.l_unimodal) + "," + format_double(e.loss.l_sparsity) + "," +
           format_double(e.loss.total) + "," +
           (std::isfinite(e.val_metric) ? format_double(e.val_metric) : std::string("nan")) + "," +
           format_double(e.seconds) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

const ModelConfig& Checkpoint::model_config() const {
  return std::visit([](const auto& m) -> const ModelConfig& { return m.config; }, model);
}

namespace {

json model_config_json(const ModelConfig& m, const std::vector<std::string>& names) {
  return json{{"input_dims", m.input_dims}, {"hidden", m.hidden},
              {"embed_dim", m.embed_dim},   {"num_classes", m.num_classes},
              {"sigma_floor", m.sigma_floor}, {"strategy", std::string(to_string(m.strategy))},
              {"modality_names", names}};
}

json flatten(const MatrixXd& m) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) arr.push_back(m(i, j));
  return arr;
}

void unflatten(const json& arr, MatrixXd& m, const std::string& name) {
  if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != m.size()) {
    throw CheckpointError("checkpoint: parameter '" + name + "' has " +
                          std::to_string(arr.is_array() ? arr.size() : 0) + " values, expected " +
                          std::to_string(m.size()));
  }
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const json& v = arr[k++];
      if (!v.is_number()) throw CheckpointError("checkpoint: non-numeric value in '" + name + "'");
      m(i, j) = v.get<double>();
    }
}

template <class Visit>
void write_params(json& params, Visit&& visit) {
  visit([&](const std::string& name, const MatrixXd& value) { params[name] = flatten(value); });
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  json root;
  root["version"] = kCheckpointVersion;
  const bool is_raml = std::holds_alternative<RamlModel>(checkpoint.model);
  root["kind"] = is_raml ? "raml" : "concat";
  json config = to_json(checkpoint.config);
  config["model"] = model_config_json(checkpoint.model_config(), checkpoint.modality_names);
  root["config"] = config;

  json params = json::object();
  if (is_raml) {
    const auto& m = std::get<RamlModel>(checkpoint.model);
    write_params(params, [&](auto f) { visit_raml(m, m.has_fixed_logits(), f); });
  } else {
    const auto& m = std::get<ConcatModel>(checkpoint.model);
    write_params(params, [&](auto f) { visit_concat(m, f); });
  }
  for (std::size_t k = 0; k < checkpoint.standardizer.mean.size(); ++k) {
    params["standardizer." + std::to_string(k) + ".mean"] = flatten(checkpoint.standardizer.mean[k]);
    params["standardizer." + std::to_string(k) + ".scale"] = flatten(checkpoint.standardizer.scale[k]);
  }
  root["params"] = params;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << root.dump() << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint " + path.string() + " is corrupt or truncated: " + e.what());
  }

  Checkpoint cp;
  std::string kind;
  json params;
  ModelConfig mc;
  try {
    const int version = root.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint " + path.string() + ": unsupported version " +
                            std::to_string(version) + " (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
    kind = root.at("kind").get<std::string>();
    const json& config = root.at("config");
    cp.config = train_config_from_json(config);
    const json& model = config.at("model");
    mc.input_dims = model.at("input_dims").get<std::vector<int>>();
    mc.hidden = model.at("hidden").get<int>();
    mc.embed_dim = model.at("embed_dim").get<int>();
    mc.num_classes = model.at("num_classes").get<int>();
    mc.sigma_floor = model.at("sigma_floor").get<double>();
    mc.strategy = parse_strategy(model.at("strategy").get<std::string>());
    cp.modality_names = model.at("modality_names").get<std::vector<std::string>>();
    params = root.at("params");
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError("checkpoint " + path.string() + ": " + e.what());
  }
  if (!params.is_object()) throw CheckpointError("checkpoint: params must be an object");
  if (cp.modality_names.size() != mc.input_dims.size()) {
    throw CheckpointError("checkpoint: modality_names and input_dims disagree");
  }

  std::size_t consumed = 0;
  auto read = [&](const std::string& name, MatrixXd& value) {
    const auto it = params.find(name);
    if (it == params.end()) throw CheckpointError("checkpoint: missing parameter '" + name + "'");
    unflatten(*it, value, name);
    ++consumed;
  };

  Rng scratch(0);
  try {
    if (kind == "raml") {
      RamlModel m = init_raml(mc, scratch);
      visit_raml(m, m.has_fixed_logits(), read);
      cp.model = std::move(m);
    } else if (kind == "concat") {
      ConcatModel m = init_concat(mc, scratch);
      visit_concat(m, read);
      cp.model = std::move(m);
    } else {
      throw CheckpointError("checkpoint: unknown model kind '" + kind + "'");
    }
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: invalid model config: ") + e.what());
  }

  for (std::size_t k = 0; k < mc.input_dims.size(); ++k) {
    MatrixXd mean(1, mc.input_dims[k]);
    MatrixXd scale(1, mc.input_dims[k]);
    read("standardizer." + std::to_string(k) + ".mean", mean);
    read("standardizer." + std::to_string(k) + ".scale", scale);
    cp.standardizer.mean.push_back(mean.row(0));
    cp.standardizer.scale.push_back(scale.row(0));
  }
  if (consumed != params.size()) {
    throw CheckpointError("checkpoint: " + std::to_string(params.size() - consumed) +
                          " unexpected parameter(s)");
  }
  return cp;
}

void check_compatible(const Checkpoint& checkpoint, const Dataset& data) {
  const ModelConfig& mc = checkpoint.model_config();
  if (mc.num_modalities() != data.num_modalities()) {
    throw CheckpointError("checkpoint has " + std::to_string(mc.num_modalities()) +
                          " modalities but dataset has " + std::to_string(data.num_modalities()));
  }
  for (int m = 0; m < mc.num_modalities(); ++m) {
    if (mc.input_dims[static_cast<std::size_t>(m)] != data.modalities[static_cast<std::size_t>(m)].dim) {
      throw CheckpointError("checkpoint modality " + std::to_string(m) + " expects dim " +
                            std::to_string(mc.input_dims[static_cast<std::size_t>(m)]) +
                            " but dataset has " +
                            std::to_string(data.modalities[static_cast<std::size_t>(m)].dim));
    }
  }
  if (mc.num_classes != data.num_classes) {
    throw CheckpointError("checkpoint has " + std::to_string(mc.num_classes) +
                          " classes but dataset has " + std::to_string(data.num_classes));
  }
}

}  // namespace raml
