#include "oracles.hpp"

#include "raml/eval.hpp"
#include "raml/train.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace raml;
namespace fs = std::filesystem;

namespace {

SyntheticData small_data(std::uint64_t seed = 1) {
  SyntheticSpec s = SyntheticSpec::reference();
  s.train_per_class = 60;
  s.test_per_class = 20;
  return generate_synthetic(s, seed);
}

TrainConfig quick_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 32;
  c.hidden = 16;
  c.embed_dim = 6;
  return c;
}

fs::path scratch_file(const std::string& name) {
  fs::create_directories(fs::temp_directory_path() / "raml_train");
  return fs::temp_directory_path() / "raml_train" / name;
}

}  // namespace

TEST_CASE("first Adam step moves a unit-gradient scalar by about -lr") {
  MatrixXd p = MatrixXd::Constant(1, 1, 0.5);
  MatrixXd* ptrs[] = {&p};
  const MatrixXd g[] = {MatrixXd::Ones(1, 1)};
  AdamState s;
  adam_step(ptrs, g, s, 1e-3, 0.0);
  CHECK(s.step == 1);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  CHECK(p(0, 0) - 0.5 == doctest::Approx(-1e-3 / (1 + 1e-8)).epsilon(1e-9));
}

TEST_CASE("Adam leaves parameters unchanged for zero gradients without decay") {
  std::mt19937_64 rng(2);
  MatrixXd a = oracle::random_matrix(3, 2, rng), b = oracle::random_matrix(1, 4, rng);
  const MatrixXd a0 = a, b0 = b;
  MatrixXd* ptrs[] = {&a, &b};
  const MatrixXd g[] = {MatrixXd::Zero(3, 2), MatrixXd::Zero(1, 4)};
  AdamState s;
  for (int i = 0; i < 5; ++i) adam_step(ptrs, g, s, 1e-2, 0.0);
  CHECK(a == a0);
  CHECK(b == b0);
}

TEST_CASE("Adam weight decay variants") {
  MatrixXd p = MatrixXd::Constant(1, 1, 2.0);
  MatrixXd* ptrs[] = {&p};
  const MatrixXd g[] = {MatrixXd::Zero(1, 1)};
  AdamState coupled;
  adam_step(ptrs, g, coupled, 1e-3, 0.1);
  // The decay acts as a gradient of 0.2, normalised to a full step.
  CHECK(p(0, 0) == doctest::Approx(2.0 - 1e-3).epsilon(1e-9));
  MatrixXd q = MatrixXd::Constant(1, 1, 2.0);
  MatrixXd* qptrs[] = {&q};
  AdamState decoupled;
  adam_step(qptrs, g, decoupled, 1e-3, 0.1, true);
  CHECK(q(0, 0) == doctest::Approx(2.0 * (1 - 1e-4)).epsilon(1e-14));
}

TEST_CASE("Adam rejects shape mismatches") {
  MatrixXd p = MatrixXd::Zero(2, 2);
  MatrixXd* ptrs[] = {&p};
  const MatrixXd bad[] = {MatrixXd::Zero(2, 3)};
  AdamState s;
  CHECK_THROWS((void)adam_step(ptrs, bad, s, 1e-3, 0.0));
  const MatrixXd two[] = {MatrixXd::Zero(2, 2), MatrixXd::Zero(1, 1)};
  AdamState s2;
  CHECK_THROWS((void)adam_step(ptrs, two, s2, 1e-3, 0.0));
}

TEST_CASE("Adam is deterministic over 10 steps") {
  auto run = [] {
    std::mt19937_64 rng(3);
    MatrixXd p = oracle::random_matrix(4, 4, rng);
    MatrixXd* ptrs[] = {&p};
    AdamState s;
    for (int i = 0; i < 10; ++i) {
      const MatrixXd g[] = {oracle::random_matrix(4, 4, rng)};
      adam_step(ptrs, g, s, 1e-2, 5e-4);
    }
    return p;
  };
  CHECK(run() == run());
}

TEST_CASE("with zero lambdas and no augmentation the objective is the fused cross-entropy") {
  const SyntheticData d = small_data();
  TrainConfig c = quick_config();
  c.lambda1 = 0;
  c.lambda2 = 0;
  c.augment = false;
  Rng init(4);
  const RamlModel model = init_raml(c.model_config(d.train.data), init);
  const MultimodalBatch batch = d.train.data.full_batch();
  std::vector<MatrixXd> noise;
  Rng nr(5);
  for (int m = 0; m < 3; ++m) noise.push_back(standard_normal(batch.size(), c.embed_dim, nr));
  Tape t;
  const BoundRaml b = bind(t, model);
  const LossTerms terms = raml_losses(b, model, batch, noise, c);
  CHECK(terms.total.item() == terms.multimodal.item());
  const MatrixXd logits = raml_logits(model, batch, WeightingStrategy::Adaptive);
  CHECK(terms.multimodal.item() == doctest::Approx(oracle::cross_entropy(logits, batch.labels)).epsilon(1e-12));
  const LossBreakdown br = terms.breakdown(0.8, 0.4);
  CHECK(std::abs(br.total - terms.total.item()) == 0.0);
}

TEST_CASE("per-batch losses obey the affine invariant") {
  const SyntheticData d = small_data();
  const TrainConfig c = quick_config();
  Rng init(6);
  const RamlModel model = init_raml(c.model_config(d.train.data), init);
  Rng ar(7);
  const MultimodalBatch batch = augment_missing(d.train.data.full_batch(), ar);
  std::vector<MatrixXd> noise;
  for (int m = 0; m < 3; ++m) noise.push_back(standard_normal(batch.size(), c.embed_dim, ar));
  Tape t;
  const LossTerms terms = raml_losses(bind(t, model), model, batch, noise, c);
  const double expect = terms.multimodal.item() + c.lambda1 * terms.unimodal.item() +
                        c.lambda2 * terms.sparsity.item();
  CHECK(std::abs(terms.total.item() - expect) <= 1e-12);
}

TEST_CASE("fit: zero epochs returns the initial model and an empty history") {
  const SyntheticData d = small_data();
  TrainConfig c = quick_config();
  c.epochs = 0;
  const FitResult r = fit(c, d.train.data);
  CHECK(r.history.empty());
  Rng init(derive_seed(c.seed, "model.init"));
  const RamlModel fresh = init_raml(c.model_config(d.train.data), init);
  CHECK(r.model.encoders[0].hidden1.weight == fresh.encoders[0].hidden1.weight);
}

TEST_CASE("fit is deterministic and records one log per epoch") {
  const SyntheticData d = small_data();
  TrainConfig c = quick_config();
  c.epochs = 3;
  FitResult a = fit(c, d.train.data, &d.test.data);
  FitResult b = fit(c, d.train.data, &d.test.data);
  REQUIRE(a.history.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(a.history[e].epoch == static_cast<int>(e) + 1);
    CHECK(a.history[e].loss.total == b.history[e].loss.total);
    CHECK(a.history[e].val_metric == b.history[e].val_metric);
  }
  const auto pa = parameters(a.model);
  const auto pb = parameters(b.model);
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(*pa[k].value == *pb[k].value);
  const std::string csv = train_log_csv(a.history);
  CHECK(csv.rfind("epoch,l_m,l_u,l_d,total,val_avg_metric,seconds\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("invalid training configs are rejected") {
  TrainConfig c;
  c.batch_size = 0;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.learning_rate = 0;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.lambda2 = -1;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.epochs = -1;
  CHECK_THROWS(c.validate());
}

TEST_CASE("config json round trip") {
  TrainConfig c = quick_config();
  c.strategy = WeightingStrategy::Fixed;
  c.seed = 99;
  c.literal_losses = true;
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.strategy == WeightingStrategy::Fixed);
}

TEST_CASE("reference run: loss falls and validation beats chance by 0.2") {
  SyntheticSpec s = SyntheticSpec::reference();
  const SyntheticData d = generate_synthetic(s, 0);
  REQUIRE(d.train.data.num_samples() == 6000);
  const TrainConfig c;
  const FitResult r = fit(c, d.train.data, &d.test.data);
  REQUIRE(r.history.size() == static_cast<std::size_t>(c.epochs));
  CHECK(r.history[4].loss.total < r.history[0].loss.total);
  CHECK(r.history.back().val_metric > 0.25 + 0.2);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const SyntheticData d = small_data();
  for (WeightingStrategy s : {WeightingStrategy::Adaptive, WeightingStrategy::Fixed}) {
    TrainConfig c = quick_config();
    c.strategy = s;
    FitResult r = fit(c, d.train.data);
    Checkpoint ck{c, r.model, r.standardizer, {"m0", "m1", "m2"}};
    const fs::path path = scratch_file("roundtrip.json");
    save_checkpoint(ck, path);
    Checkpoint back = load_checkpoint(path);
    auto& model = std::get<RamlModel>(back.model);
    const auto pa = parameters(r.model);
    const auto pb = parameters(model);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t k = 0; k < pa.size(); ++k) {
      CHECK(pa[k].name == pb[k].name);
      CHECK(*pa[k].value == *pb[k].value);
    }
    for (int m = 0; m < 3; ++m) {
      CHECK(back.standardizer.mean[m] == r.standardizer.mean[m]);
      CHECK(back.standardizer.scale[m] == r.standardizer.scale[m]);
    }
    const MultimodalBatch test = r.standardizer.apply(d.test.data).full_batch();
    CHECK(raml_logits(model, test, s) == raml_logits(r.model, test, s));
    CHECK_NOTHROW(check_compatible(back, d.test.data));
  }

  const ConcatFitResult cr = fit_concat(quick_config(), d.train.data);
  Checkpoint cc{quick_config(), cr.model, cr.standardizer, {"m0", "m1", "m2"}};
  const fs::path cpath = scratch_file("concat.json");
  save_checkpoint(cc, cpath);
  const Checkpoint cback = load_checkpoint(cpath);
  CHECK(std::get<ConcatModel>(cback.model).classifier.weight == cr.model.classifier.weight);
}

TEST_CASE("broken checkpoints are rejected") {
  const SyntheticData d = small_data();
  const TrainConfig c = quick_config();
  const FitResult r = fit(c, d.train.data);
  const fs::path path = scratch_file("good.json");
  save_checkpoint({c, r.model, r.standardizer, {"m0", "m1", "m2"}}, path);
  const std::string text = oracle::slurp(path);

  SUBCASE("truncated") {
    const fs::path cut = scratch_file("cut.json");
    std::ofstream(cut) << text.substr(0, text.size() / 2);
    CHECK_THROWS_AS((void)load_checkpoint(cut), CheckpointError);
  }
  SUBCASE("unknown version") {
    nlohmann::json j = nlohmann::json::parse(text);
    j["version"] = 99;
    const fs::path v = scratch_file("version.json");
    std::ofstream(v) << j.dump();
    try {
      (void)load_checkpoint(v);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
  }
  SUBCASE("missing parameter") {
    nlohmann::json j = nlohmann::json::parse(text);
    j["params"].erase(j["params"].begin());
    const fs::path v = scratch_file("missing.json");
    std::ofstream(v) << j.dump();
    CHECK_THROWS_AS((void)load_checkpoint(v), CheckpointError);
  }
  SUBCASE("different modality count") {
    SyntheticSpec s = SyntheticSpec::reference();
    s.num_modalities = 2;
    s.input_dims = {20, 20};
    s.train_per_class = 5;
    s.test_per_class = 5;
    const SyntheticData two = generate_synthetic(s, 1);
    try {
      check_compatible(load_checkpoint(path), two.test.data);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      const std::string msg = e.what();
      CHECK(msg.find('3') != std::string::npos);
      CHECK(msg.find('2') != std::string::npos);
    }
  }
}
