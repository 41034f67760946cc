#include "oracles.hpp"

#include "raml/data.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

using namespace raml;
namespace fs = std::filesystem;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s = SyntheticSpec::reference();
  s.train_per_class = 50;
  s.test_per_class = 20;
  return s;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("raml_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

MultimodalBatch constant_batch(Eigen::Index n, int M, int D, double value) {
  MultimodalBatch b;
  for (int m = 0; m < M; ++m) b.features.push_back(MatrixXd::Constant(n, D, value));
  b.labels.assign(static_cast<std::size_t>(n), 0);
  b.delta = MatrixXd::Ones(n, M);
  b.ids.resize(static_cast<std::size_t>(n));
  std::iota(b.ids.begin(), b.ids.end(), 0);
  return b;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  long hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace

TEST_CASE("generator counts and determinism") {
  SyntheticSpec s = SyntheticSpec::reference();
  s.train_per_class = 1500;
  s.test_per_class = 500;
  const SyntheticData a = generate_synthetic(s, 3);
  CHECK(a.train.data.num_samples() == 6000);
  CHECK(a.test.data.num_samples() == 2000);
  CHECK(a.train.data.num_modalities() == 3);
  const SyntheticData b = generate_synthetic(s, 3);
  for (int m = 0; m < 3; ++m) {
    CHECK(a.train.data.features[m] == b.train.data.features[m]);
    CHECK(a.test.data.features[m] == b.test.data.features[m]);
  }
  CHECK(a.train.data.labels == b.train.data.labels);
  const SyntheticData c = generate_synthetic(s, 4);
  CHECK(a.train.data.features[0] != c.train.data.features[0]);
}

TEST_CASE("zero noise spread leaves the generator output unchanged") {
  SyntheticSpec s = small_spec();
  const SyntheticData a = generate_synthetic(s, 5);
  s.noise_spread = 0.0;
  const SyntheticData b = generate_synthetic(s, 5);
  CHECK(a.train.data.features[1] == b.train.data.features[1]);
  s.noise_spread = 1.0;
  const SyntheticData c = generate_synthetic(s, 5);
  CHECK(a.train.shared_latent == c.train.shared_latent);
  CHECK(a.train.data.features[1] != c.train.data.features[1]);
  s.noise_spread = -0.1;
  CHECK_THROWS((void)generate_synthetic(s, 5));
}

TEST_CASE("invalid specs are rejected") {
  SyntheticSpec s = small_spec();
  s.shared_dim = 0;
  CHECK_THROWS(s.validate());
  s = small_spec();
  s.noise = -1;
  CHECK_THROWS(s.validate());
  s = small_spec();
  s.input_dims = {20, 20};
  CHECK_THROWS(s.validate());
  s = small_spec();
  s.input_dims = {20, 10, 20};
  s.identical_projections = true;
  CHECK_THROWS(s.validate());
}

TEST_CASE("pure redundancy: every modality carries the same information") {
  SyntheticSpec s = small_spec();
  s.noise = 0;
  s.private_dim = 0;
  s.identical_projections = true;
  s.train_per_class = 200;
  s.test_per_class = 200;
  const SyntheticData d = generate_synthetic(s, 6);
  for (int m = 1; m < 3; ++m) CHECK(d.train.data.features[m] == d.train.data.features[0]);
  const auto& tr = d.train.data;
  const auto& te = d.test.data;
  MatrixXd all_tr(tr.num_samples(), 60), all_te(te.num_samples(), 60);
  all_tr << tr.features[0], tr.features[1], tr.features[2];
  all_te << te.features[0], te.features[1], te.features[2];
  const auto full = oracle::nearest_mean(all_tr, tr.labels, 4, all_te);
  for (int m = 0; m < 3; ++m) {
    const auto single = oracle::nearest_mean(tr.features[m], tr.labels, 4, te.features[m]);
    CHECK(single == full);
  }
}

TEST_CASE("latent nearest-mean accuracy: all modalities beat any single one") {
  SyntheticSpec s = SyntheticSpec::reference();
  s.train_per_class = 1000;
  s.test_per_class = 1000;
  const SyntheticData d = generate_synthetic(s, 7);
  auto stack = [](const SyntheticSplit& sp, int only) {
    const Eigen::Index n = sp.shared_latent.rows();
    const Eigen::Index ks = sp.shared_latent.cols(), kp = sp.private_latent[0].cols();
    const int count = only < 0 ? static_cast<int>(sp.private_latent.size()) : 1;
    MatrixXd z(n, ks + count * kp);
    z.leftCols(ks) = sp.shared_latent;
    for (int k = 0; k < count; ++k) z.middleCols(ks + k * kp, kp) = sp.private_latent[only < 0 ? k : only];
    return z;
  };
  const double full = accuracy(
      oracle::nearest_mean(stack(d.train, -1), d.train.data.labels, 4, stack(d.test, -1)), d.test.data.labels);
  for (int m = 0; m < 3; ++m) {
    const double single = accuracy(
        oracle::nearest_mean(stack(d.train, m), d.train.data.labels, 4, stack(d.test, m)), d.test.data.labels);
    CAPTURE(m);
    CHECK(full >= single);
  }
}

TEST_CASE("enumerate_patterns order and counts") {
  const auto two = enumerate_patterns(2);
  REQUIRE(two.size() == 3);
  CHECK(two[0].str() == "01");
  CHECK(two[1].str() == "10");
  CHECK(two[2].str() == "11");
  const auto three = enumerate_patterns(3);
  REQUIRE(three.size() == 7);
  CHECK(three.front().str() == "001");
  CHECK(three.back().str() == "111");
  for (std::size_t i = 1; i < three.size(); ++i) CHECK(three[i - 1].str() < three[i].str());
  const auto one = enumerate_patterns(1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].str() == "1");
  CHECK_THROWS((void)enumerate_patterns(0));
  CHECK(MissingPattern::parse("101").mask == std::vector<int>{1, 0, 1});
  CHECK_THROWS((void)MissingPattern::parse("000"));
  CHECK_THROWS((void)MissingPattern::parse("1x"));
}

TEST_CASE("apply_pattern zero-fills and is idempotent") {
  const SyntheticData d = generate_synthetic(small_spec(), 8);
  const MultimodalBatch full = d.train.data.full_batch();
  const MultimodalBatch same = apply_pattern(full, MissingPattern::full(3));
  for (int m = 0; m < 3; ++m) CHECK(same.features[m] == full.features[m]);
  CHECK(same.delta.isOnes());

  const MissingPattern p = MissingPattern::parse("101");
  const MultimodalBatch once = apply_pattern(full, p);
  CHECK(once.features[1].isZero(0));
  CHECK(once.features[0] == full.features[0]);
  CHECK((once.delta.col(1).array() == 0).all());
  const MultimodalBatch twice = apply_pattern(once, p);
  for (int m = 0; m < 3; ++m) CHECK(twice.features[m] == once.features[m]);
  CHECK(twice.delta == once.delta);

  const MultimodalBatch via = apply_pattern(apply_pattern(full, MissingPattern::full(3)), p);
  for (int m = 0; m < 3; ++m) CHECK(via.features[m] == once.features[m]);
  CHECK_THROWS((void)apply_pattern(full, MissingPattern::parse("10")));
}

TEST_CASE("augment_missing draws patterns uniformly") {
  const MultimodalBatch b = constant_batch(30000, 2, 2, 1.0);
  Rng rng(9);
  const MultimodalBatch a = augment_missing(b, rng);
  std::map<std::string, long> counts;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    std::string key;
    for (int m = 0; m < 2; ++m) {
      key.push_back(a.delta(i, m) ? '1' : '0');
      CHECK(a.features[m].row(i).isConstant(a.delta(i, m)));
    }
    ++counts[key];
  }
  REQUIRE(counts.size() == 3);
  for (const auto& [k, v] : counts) {
    CAPTURE(k);
    CHECK(std::abs(v - 10000) <= 300);
    CHECK(oracle::binomial_consistent(v, 30000, 1.0 / 3.0));
  }
  Rng again(9);
  CHECK(augment_missing(b, again).delta == a.delta);

  const MultimodalBatch single = constant_batch(100, 1, 3, 2.0);
  Rng r1(1);
  CHECK(augment_missing(single, r1).delta.isOnes());
}

TEST_CASE("materialize_missing repeats every sample under every pattern") {
  const MultimodalBatch b = constant_batch(5, 3, 2, 1.0);
  const MultimodalBatch m = materialize_missing(b);
  CHECK(m.size() == 35);
  const auto patterns = enumerate_patterns(3);
  for (std::size_t c = 0; c < patterns.size(); ++c)
    for (Eigen::Index i = 0; i < 5; ++i)
      for (int k = 0; k < 3; ++k)
        CHECK(m.delta(static_cast<Eigen::Index>(c) * 5 + i, k) == patterns[c].mask[static_cast<std::size_t>(k)]);
  CHECK(m.ids[7] == 2);
}

TEST_CASE("gaussian corruption has the requested spread") {
  const MultimodalBatch b = constant_batch(50000, 2, 20, 0.25);
  Rng rng(10);
  const MultimodalBatch c = corrupt_gaussian(b, 1, 0.18, rng);
  CHECK(c.features[0] == b.features[0]);
  CHECK(c.delta == b.delta);
  const Eigen::ArrayXXd diff = (c.features[1] - b.features[1]).array();
  const double mean = diff.mean();
  const double sd = std::sqrt((diff - mean).square().sum() / static_cast<double>(diff.size() - 1));
  CHECK(std::abs(sd - 0.18) <= 0.001);
  CHECK(std::abs(mean) < 0.001);

  Rng r0(10);
  CHECK(corrupt_gaussian(b, 1, 0.0, r0).features[1] == b.features[1]);
  Rng bad(1);
  CHECK_THROWS((void)corrupt_gaussian(b, 1, -0.1, bad));
  CHECK_THROWS((void)corrupt_gaussian(b, 2, 0.1, bad));
}

TEST_CASE("mask corruption zeroes the requested fraction") {
  const MultimodalBatch b = constant_batch(50000, 2, 20, 1.0);
  Rng rng(11);
  const MultimodalBatch c = corrupt_mask(b, 0, 0.15, rng);
  const long zeros = static_cast<long>((c.features[0].array() == 0).count());
  CHECK(std::abs(static_cast<double>(zeros) / 1e6 - 0.15) <= 0.002);
  CHECK(c.features[1] == b.features[1]);
  CHECK(c.delta.isOnes());
  Rng r0(1), r1(1);
  CHECK(corrupt_mask(b, 0, 0.0, r0).features[0] == b.features[0]);
  CHECK(corrupt_mask(b, 0, 1.0, r1).features[0].isZero(0));
  Rng bad(1);
  CHECK_THROWS((void)corrupt_mask(b, 0, 1.5, bad));
  CHECK_THROWS((void)corrupt_mask(b, 0, -0.1, bad));
}

TEST_CASE("corruptions commute with row permutation") {
  const SyntheticData d = generate_synthetic(small_spec(), 12);
  const Dataset& data = d.train.data;
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(data.num_samples()));
  std::iota(rows.begin(), rows.end(), 0);
  std::vector<Eigen::Index> perm = rows;
  Rng shuffle(12);
  std::shuffle(perm.begin(), perm.end(), shuffle);
  for (CorruptionKind kind : {CorruptionKind::Gaussian, CorruptionKind::Mask}) {
    Rng ra(13), rb(13);
    const MultimodalBatch whole = corrupt(data.batch(rows), 2, kind, 0.2, ra);
    const MultimodalBatch permuted = corrupt(data.batch(perm), 2, kind, 0.2, rb);
    for (std::size_t i = 0; i < perm.size(); ++i)
      CHECK(permuted.features[2].row(static_cast<Eigen::Index>(i)) == whole.features[2].row(perm[i]));
  }
  CHECK(parse_corruption_kind("mask") == CorruptionKind::Mask);
  CHECK(to_string(CorruptionKind::Gaussian) == "gaussian");
  CHECK_THROWS((void)parse_corruption_kind("blur"));
}

TEST_CASE("standardizer uses training statistics") {
  const SyntheticData d = generate_synthetic(small_spec(), 14);
  const Standardizer s = Standardizer::fit(d.train.data);
  const Dataset tr = s.apply(d.train.data);
  for (const MatrixXd& x : tr.features) {
    CHECK(x.colwise().mean().cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::RowVectorXd var = x.array().square().colwise().mean().matrix();
    CHECK((var.array() - 1.0).abs().maxCoeff() < 1e-12);
  }
  const Dataset te = s.apply(d.test.data);
  const MatrixXd expect =
      ((d.test.data.features[0].rowwise() - s.mean[0]).array().rowwise() / s.scale[0].array()).matrix();
  CHECK(te.features[0] == expect);
  Dataset two = d.test.data;
  two.features.pop_back();
  two.modalities.pop_back();
  CHECK_THROWS_AS((void)s.apply(two), DataError);
}

TEST_CASE("save then load reproduces the dataset bit-exactly") {
  const SyntheticData d = generate_synthetic(small_spec(), 15);
  const fs::path dir = scratch("roundtrip");
  save_dataset(d.test.data, dir);
  const Dataset back = load_dataset(dir);
  CHECK(back.num_classes == d.test.data.num_classes);
  CHECK(back.labels == d.test.data.labels);
  REQUIRE(back.num_modalities() == 3);
  for (int m = 0; m < 3; ++m) {
    CHECK(back.modalities[m].name == d.test.data.modalities[m].name);
    CHECK(back.features[m] == d.test.data.features[m]);
  }
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 1e300, 5e-324})
    {
    CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
    CHECK(std::strtod(format_short(v).c_str(), nullptr) == v);
  }
  CHECK(format_short(0.18) == "0.18");
  fs::remove_all(dir);
}

TEST_CASE("load errors name the file and line") {
  const SyntheticData d = generate_synthetic(small_spec(), 16);
  SUBCASE("label out of range") {
    const fs::path dir = scratch("badlabel");
    save_dataset(d.test.data, dir);
    std::vector<std::string> lines;
    {
      std::ifstream in(dir / "labels.csv");
      for (std::string l; std::getline(in, l);) lines.push_back(l);
    }
    lines[4] = "4";
    {
      std::ofstream out(dir / "labels.csv");
      for (const auto& l : lines) out << l << '\n';
    }
    try {
      (void)load_dataset(dir);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("labels.csv:5") != std::string::npos);
    }
  }
  SUBCASE("missing feature file") {
    const fs::path dir = scratch("missing");
    save_dataset(d.test.data, dir);
    fs::remove(dir / "features_m2.csv");
    try {
      (void)load_dataset(dir);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("features_m2.csv") != std::string::npos);
    }
  }
  SUBCASE("non-numeric cell") {
    const fs::path dir = scratch("nonnumeric");
    save_dataset(d.test.data, dir);
    {
      std::ofstream out(dir / "features_m0.csv", std::ios::app);
      out << "1,abc\n";
    }
    try {
      (void)load_dataset(dir);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("features_m0.csv:81") != std::string::npos);
    }
  }
  SUBCASE("row count mismatch") {
    const fs::path dir = scratch("rows");
    save_dataset(d.test.data, dir);
    {
      std::ofstream out(dir / "labels.csv", std::ios::app);
      out << "0\n";
    }
    CHECK_THROWS_AS((void)load_dataset(dir), DataError);
  }
  CHECK_THROWS_AS((void)load_dataset(fs::temp_directory_path() / "raml_data_nowhere"), DataError);
}
