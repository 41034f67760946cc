#include "raml/model.hpp"

#include <stdexcept>

namespace raml {

std::string_view to_string(WeightingStrategy s) {
  switch (s) {
    case WeightingStrategy::Adaptive: return "adaptive";
    case WeightingStrategy::Identical: return "identical";
    case WeightingStrategy::Fixed: return "fixed";
  }
  return "adaptive";
}

WeightingStrategy parse_strategy(std::string_view name) {
  if (name == "adaptive") return WeightingStrategy::Adaptive;
  if (name == "identical") return WeightingStrategy::Identical;
  if (name == "fixed") return WeightingStrategy::Fixed;
  throw std::invalid_argument("unknown weighting strategy '" + std::string(name) +
                              "' (expected adaptive, identical or fixed)");
}

Linear Linear::glorot(int in, int out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> uniform(-limit, limit);
  Linear l;
  l.weight.resize(in, out);
  for (int i = 0; i < in; ++i)
    for (int j = 0; j < out; ++j) l.weight(i, j) = uniform(rng);
  l.bias = MatrixXd::Zero(1, out);
  return l;
}

void ModelConfig::validate() const {
  if (input_dims.empty()) throw std::invalid_argument("model: at least one modality required");
  for (int d : input_dims) {
    if (d < 1) throw std::invalid_argument("model: modality input dims must be >= 1");
  }
  if (hidden < 1 || embed_dim < 1) throw std::invalid_argument("model: hidden/embed_dim must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("model: num_classes must be >= 2");
  if (!(sigma_floor > 0)) throw std::invalid_argument("model: sigma_floor must be positive");
}

RamlModel init_raml(const ModelConfig& config, Rng& rng) {
  config.validate();
  RamlModel m;
  m.config = config;
  for (int dim : config.input_dims) {
    EncoderParams e;
    e.hidden1 = Linear::glorot(dim, config.hidden, rng);
    e.hidden2 = Linear::glorot(config.hidden, config.hidden, rng);
    e.mu_head = Linear::glorot(config.hidden, config.embed_dim, rng);
    e.sigma_head = Linear::glorot(config.hidden, config.embed_dim, rng);
    e.sigma_head.bias.setConstant(kUnitSigmaRaw);
    m.encoders.push_back(std::move(e));
  }
  m.predictor.linear = Linear::glorot(config.embed_dim, config.num_classes, rng);
  if (m.has_fixed_logits()) m.fixed_logits = MatrixXd::Zero(config.num_modalities(), config.embed_dim);
  return m;
}

ConcatModel init_concat(const ModelConfig& config, Rng& rng) {
  config.validate();
  ConcatModel m;
  m.config = config;
  for (int dim : config.input_dims) {
    DeterministicEncoder e;
    e.hidden1 = Linear::glorot(dim, config.hidden, rng);
    e.hidden2 = Linear::glorot(config.hidden, config.hidden, rng);
    e.head = Linear::glorot(config.hidden, config.embed_dim, rng);
    m.encoders.push_back(std::move(e));
  }
  m.classifier =
      Linear::glorot(config.embed_dim * config.num_modalities(), config.num_classes, rng);
  return m;
}

std::vector<ParameterRef> parameters(RamlModel& model) {
  std::vector<ParameterRef> out;
  visit_raml(model, model.has_fixed_logits(),
             [&](const std::string& name, MatrixXd& value) { out.push_back({name, &value}); });
  return out;
}

std::vector<ParameterRef> parameters(ConcatModel& model) {
  std::vector<ParameterRef> out;
  visit_concat(model, [&](const std::string& name, MatrixXd& value) { out.push_back({name, &value}); });
  return out;
}

namespace {

struct Binder {
  Tape& tape;
  bool trainable;
  std::vector<const MatrixXd*> sources;
  std::vector<Tensor>& leaves;
  std::size_t next = 0;

  void operator()(const std::string&, Tensor& slot) {
    const MatrixXd& v = *sources.at(next++);
    slot = trainable ? tape.variable(v) : tape.constant(v);
    leaves.push_back(slot);
  }
};

}  // namespace

BoundRaml bind(Tape& tape, const RamlModel& model, bool trainable) {
  BoundRaml b;
  b.encoders.resize(model.encoders.size());
  Binder binder{tape, trainable, {}, b.leaves};
  visit_raml(model, model.has_fixed_logits(),
             [&](const std::string&, const MatrixXd& v) { binder.sources.push_back(&v); });
  visit_raml(b, model.has_fixed_logits(), binder);
  return b;
}

BoundConcat bind(Tape& tape, const ConcatModel& model, bool trainable) {
  BoundConcat b;
  b.encoders.resize(model.encoders.size());
  Binder binder{tape, trainable, {}, b.leaves};
  visit_concat(model, [&](const std::string&, const MatrixXd& v) { binder.sources.push_back(&v); });
  visit_concat(b, binder);
  return b;
}

Tensor forward(const BoundLinear& layer, const Tensor& x) {
  return ad::add(ad::matmul(x, layer.weight), layer.bias);
}

namespace {

void check_input(const Tensor& x, const BoundLinear& first, const char* who) {
  if (x.cols() != first.weight.rows()) {
    throw ad::ShapeError(std::string(who) + ": modality input has " + std::to_string(x.cols()) +
                         " columns, encoder expects " + std::to_string(first.weight.rows()));
  }
}

Tensor trunk(const BoundLinear& h1, const BoundLinear& h2, const Tensor& x) {
  return ad::relu(forward(h2, ad::relu(forward(h1, x))));
}

}  // namespace

GaussianEmbedding encode(const BoundEncoder& encoder, const Tensor& x, double sigma_floor) {
  check_input(x, encoder.hidden1, "encode");
  const Tensor features = trunk(encoder.hidden1, encoder.hidden2, x);
  const Tensor mu = forward(encoder.mu_head, features);
  const Tensor raw = forward(encoder.sigma_head, features);
  const Tensor floor = x.tape().constant(MatrixXd::Constant(1, raw.cols(), sigma_floor));
  return {mu, ad::add(ad::softplus(raw), floor)};
}

Tensor reparameterize(const GaussianEmbedding& embedding, const MatrixXd& noise) {
  const Tensor rho = embedding.mu.tape().constant(noise);
  return ad::add(embedding.mu, ad::mul(rho, embedding.sigma));
}

Tensor predict(const BoundPredictor& predictor, const Tensor& h) {
  if (h.cols() != predictor.linear.weight.rows()) {
    throw ad::ShapeError("predict: embedding has " + std::to_string(h.cols()) +
                         " columns, predictor expects " +
                         std::to_string(predictor.linear.weight.rows()));
  }
  return forward(predictor.linear, h);
}

Tensor embed(const BoundDeterministicEncoder& encoder, const Tensor& x) {
  check_input(x, encoder.hidden1, "embed");
  return forward(encoder.head, trunk(encoder.hidden1, encoder.hidden2, x));
}

}  // namespace raml
