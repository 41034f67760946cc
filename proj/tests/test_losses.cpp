#include "gradient_cases.hpp"
#include "oracles.hpp"

#include "raml/losses.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace raml;
using ad::Matrix;
using ad::Tape;
using ad::Tensor;

namespace {

Matrix m2(double a, double b) { return (Matrix(1, 2) << a, b).finished(); }

BoundPredictor identity_predictor(Tape& t, int D) {
  return {{t.constant(Matrix::Identity(D, D)), t.constant(Matrix::Zero(1, D))}};
}

}  // namespace

TEST_CASE("cross-entropy examples") {
  Tape t;
  const std::vector<int> zero{0}, one{1};
  CHECK(cross_entropy(t.constant(m2(0, 0)), zero).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(cross_entropy(t.constant(m2(0, 0)), one).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(cross_entropy(t.constant(m2(100, 0)), zero).item() < 1e-40);
  CHECK(cross_entropy(t.constant(m2(1, -1)), zero).item() ==
        doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0)))).epsilon(1e-14));
  CHECK(cross_entropy(t.constant(m2(1, -1)), zero).item() == doctest::Approx(0.126928).epsilon(1e-5));
}

TEST_CASE("cross-entropy matches an independent row-wise evaluation") {
  std::mt19937_64 rng(41);
  const Matrix logits = oracle::random_matrix(7, 4, rng, -5, 5);
  std::vector<int> labels{0, 3, 2, 1, 1, 0, 3};
  Tape t;
  CHECK(cross_entropy(t.constant(logits), labels).item() ==
        doctest::Approx(oracle::cross_entropy(logits, labels)).epsilon(1e-13));
}

TEST_CASE("cross-entropy rejects out-of-range labels") {
  Tape t;
  const std::vector<int> bad{2};
  const std::vector<int> neg{-1};
  CHECK_THROWS_AS((void)cross_entropy(t.constant(m2(0, 0)), bad), std::out_of_range);
  CHECK_THROWS_AS((void)cross_entropy(t.constant(m2(0, 0)), neg), std::out_of_range);
  const std::vector<int> two{0, 1};
  CHECK_THROWS((void)cross_entropy(t.constant(m2(0, 0)), two));
}

TEST_CASE("unimodal loss: uniform logits give ln C; identical modalities scale by M") {
  Tape t;
  const int C = 3;
  const std::vector<int> labels{0, 2};
  const Matrix delta1 = Matrix::Ones(2, 1);
  const GaussianEmbedding e{t.constant(Matrix::Zero(2, C)), t.constant(Matrix::Ones(2, C))};
  const std::vector<Matrix> noise1{Matrix::Zero(2, C)};
  const std::vector<GaussianEmbedding> one{e};
  const double single = unimodal_loss(one, labels, delta1, identity_predictor(t, C), noise1).item();
  CHECK(single == doctest::Approx(std::log(3.0)).epsilon(1e-14));

  std::mt19937_64 rng(42);
  const GaussianEmbedding r{t.constant(oracle::random_matrix(2, C, rng)), t.constant(Matrix::Constant(2, C, 0.5))};
  const Matrix nz = oracle::random_matrix(2, C, rng);
  const std::vector<GaussianEmbedding> r1{r};
  const std::vector<GaussianEmbedding> r3{r, r, r};
  const std::vector<Matrix> n1{nz};
  const std::vector<Matrix> n3{nz, nz, nz};
  const auto pred = identity_predictor(t, C);
  const double a = unimodal_loss(r1, labels, delta1, pred, n1).item();
  const double b = unimodal_loss(r3, labels, Matrix::Ones(2, 3), pred, n3).item();
  CHECK(b == doctest::Approx(3 * a).epsilon(1e-14));
}

TEST_CASE("masked unimodal loss drops missing terms; literal keeps them") {
  std::mt19937_64 rng(43);
  Tape t;
  const int n = 4, C = 3;
  std::vector<GaussianEmbedding> embs;
  std::vector<Matrix> mus, noise;
  for (int m = 0; m < 2; ++m) {
    mus.push_back(oracle::random_matrix(n, C, rng, -2, 2));
    noise.push_back(oracle::random_matrix(n, C, rng));
  }
  const Matrix sigma = Matrix::Constant(n, C, 0.3);
  for (int m = 0; m < 2; ++m) embs.push_back({t.constant(mus[m]), t.constant(sigma)});
  Matrix delta(n, 2);
  delta << 1, 1, 1, 0, 1, 0, 1, 1;
  const std::vector<int> labels{0, 1, 2, 1};

  double masked = 0, literal = 0;
  for (int m = 0; m < 2; ++m) {
    const Matrix h = mus[m] + noise[m].cwiseProduct(sigma);
    for (int i = 0; i < n; ++i) {
      const double ce = oracle::cross_entropy(h.row(i), {labels[static_cast<std::size_t>(i)]});
      literal += ce / n;
      masked += delta(i, m) * ce / n;
    }
  }
  const auto pred = identity_predictor(t, C);
  CHECK(unimodal_loss(embs, labels, delta, pred, noise, LossMode::Masked).item() ==
        doctest::Approx(masked).epsilon(1e-13));
  CHECK(unimodal_loss(embs, labels, delta, pred, noise, LossMode::Literal).item() ==
        doctest::Approx(literal).epsilon(1e-13));
  CHECK(masked < literal);
}

TEST_CASE("sparsity loss examples") {
  Tape t;
  std::mt19937_64 rng(44);
  const Matrix mu = oracle::random_matrix(3, 4, rng);
  const std::vector<GaussianEmbedding> single{{t.constant(mu), t.constant(oracle::random_matrix(3, 4, rng, 0.1, 2))}};
  CHECK(sparsity_loss(single).item() == doctest::Approx(mu.cwiseAbs().sum() / 3).epsilon(1e-14));

  const std::vector<GaussianEmbedding> zero{{t.constant(Matrix::Zero(2, 2)), t.constant(Matrix::Ones(2, 2))},
                                            {t.constant(Matrix::Zero(2, 2)), t.constant(Matrix::Constant(2, 2, 3))}};
  CHECK(sparsity_loss(zero).item() == 0.0);

  const std::vector<GaussianEmbedding> hand{
      {t.constant(Matrix::Constant(1, 1, 2.0)), t.constant(Matrix::Constant(1, 1, 1.0))},
      {t.constant(Matrix::Constant(1, 1, -2.0)), t.constant(Matrix::Constant(1, 1, std::sqrt(3.0)))}};
  CHECK(sparsity_loss(hand).item() == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("masked sparsity loss uses the available modalities only") {
  Tape t;
  const std::vector<GaussianEmbedding> hand{
      {t.constant(Matrix::Constant(2, 1, 2.0)), t.constant(Matrix::Constant(2, 1, 1.0))},
      {t.constant(Matrix::Constant(2, 1, -2.0)), t.constant(Matrix::Constant(2, 1, std::sqrt(3.0)))}};
  Matrix delta(2, 2);
  delta << 1, 1, 0, 1;
  // Row 0: 0.75*2 + 0.25*2 = 2; row 1: only modality 1 with weight 1 -> 2.
  CHECK(sparsity_loss(hand, delta).item() == doctest::Approx(2.0).epsilon(1e-14));
  Matrix delta2(2, 2);
  delta2 << 1, 0, 1, 0;
  CHECK(sparsity_loss(hand, delta2).item() == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("sparsity loss is nonnegative and zero only for zero means") {
  std::mt19937_64 rng(45);
  Tape t;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<GaussianEmbedding> embs;
    for (int m = 0; m < 3; ++m)
      embs.push_back({t.constant(oracle::random_matrix(3, 2, rng)), t.constant(oracle::random_matrix(3, 2, rng, 0.1, 2))});
    CHECK(sparsity_loss(embs).item() > 0.0);
  }
}

TEST_CASE("raising sigma shrinks that modality's sparsity term") {
  std::mt19937_64 rng(46);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix mu = oracle::away_from_zero(3, 1, rng, 0.1, 2);
    Matrix sigma = oracle::random_matrix(3, 1, rng, 0.2, 2);
    const int m = trial % 3;
    auto term = [&](const Matrix& s) {
      const double var = 1.0 / (s.array().square().inverse().sum());
      return var / (s(m) * s(m)) * std::abs(mu(m));
    };
    Matrix bigger = sigma;
    bigger(m) *= 1.3;
    CHECK(term(bigger) < term(sigma));
    // With the other means at zero the whole loss is that term.
    Matrix only = Matrix::Zero(3, 1);
    only(m) = mu(m);
    Tape t;
    auto loss_of = [&](const Matrix& s) {
      std::vector<GaussianEmbedding> embs;
      for (int k = 0; k < 3; ++k)
        embs.push_back({t.constant(only.row(k)), t.constant(s.row(k))});
      return sparsity_loss(embs).item();
    };
    CHECK(loss_of(bigger) < loss_of(sigma));
  }
}

TEST_CASE("multimodal loss examples") {
  Tape t;
  const int C = 4;
  const std::vector<int> labels{3, 1};
  std::vector<GaussianEmbedding> embs{{t.constant(Matrix::Zero(2, C)), t.constant(Matrix::Ones(2, C))},
                                      {t.constant(Matrix::Zero(2, C)), t.constant(Matrix::Ones(2, C))}};
  const auto pred = identity_predictor(t, C);
  CHECK(multimodal_loss(fuse(embs, Matrix::Ones(2, 2)), labels, pred).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-14));

  std::mt19937_64 rng(47);
  const Matrix mu0 = oracle::random_matrix(2, C, rng, -2, 2);
  std::vector<GaussianEmbedding> e2{{t.constant(mu0), t.constant(oracle::random_matrix(2, C, rng, 0.1, 2))},
                                    {t.constant(oracle::random_matrix(2, C, rng)), t.constant(Matrix::Ones(2, C))}};
  Matrix only0(2, 2);
  only0 << 1, 0, 1, 0;
  CHECK(multimodal_loss(fuse(e2, only0), labels, pred).item() ==
        doctest::Approx(oracle::cross_entropy(mu0, labels)).epsilon(1e-13));
}

TEST_CASE("multimodal loss equals an independent recomputation") {
  std::mt19937_64 rng(48);
  const int n = 5, D = 3, C = 4, M = 3;
  std::vector<Matrix> mu, sigma;
  for (int m = 0; m < M; ++m) {
    mu.push_back(oracle::random_matrix(n, D, rng));
    sigma.push_back(oracle::random_matrix(n, D, rng, 0.1, 2));
  }
  Matrix delta(n, M);
  for (int i = 0; i < n; ++i) {
    const auto mask = oracle::random_mask(M, rng);
    for (int m = 0; m < M; ++m) delta(i, m) = mask[static_cast<std::size_t>(m)];
  }
  const Matrix theta = oracle::random_matrix(D, C, rng), bias = oracle::random_matrix(1, C, rng);
  const std::vector<int> labels{0, 1, 2, 3, 0};
  Matrix h(n, D);
  for (int i = 0; i < n; ++i) {
    std::vector<int> mask;
    Matrix mi(M, D), si(M, D);
    for (int m = 0; m < M; ++m) {
      mask.push_back(static_cast<int>(delta(i, m)));
      mi.row(m) = mu[m].row(i);
      si.row(m) = sigma[m].row(i);
    }
    h.row(i) = oracle::product_of_gaussians(mi, si, mask).mean;
  }
  Matrix logits = h * theta;
  logits.rowwise() += bias.row(0);
  Tape t;
  std::vector<GaussianEmbedding> embs;
  for (int m = 0; m < M; ++m) embs.push_back({t.constant(mu[m]), t.constant(sigma[m])});
  const BoundPredictor pred{{t.constant(theta), t.constant(bias)}};
  CHECK(multimodal_loss(fuse(embs, delta), labels, pred).item() ==
        doctest::Approx(oracle::cross_entropy(logits, labels)).epsilon(1e-12));
}

TEST_CASE("total loss arithmetic and validation") {
  CHECK(total_loss(0.5, 7.0, 9.0, 0.0, 0.0).total == 0.5);
  CHECK(total_loss(0.5, 1.0, 3.0, 1.0, 0.0).total == doctest::Approx(1.5).epsilon(1e-15));
  const LossBreakdown b = total_loss(0.7, 1.2, 2.0, 0.8, 0.4);
  CHECK(b.total == doctest::Approx(2.46).epsilon(1e-14));
  CHECK(std::abs(b.total - (b.l_multimodal + b.lambda1 * b.l_unimodal + b.lambda2 * b.l_sparsity)) <= 1e-12);
  CHECK_THROWS_AS((void)total_loss(1, 1, 1, -0.1, 0), std::invalid_argument);
  CHECK_THROWS_AS((void)total_loss(1, 1, 1, 0, -0.1), std::invalid_argument);
  Tape t;
  const Tensor lm = t.constant(Matrix::Constant(1, 1, 0.7));
  const Tensor lu = t.constant(Matrix::Constant(1, 1, 1.2));
  const Tensor ld = t.constant(Matrix::Constant(1, 1, 2.0));
  CHECK(total_loss(lm, lu, ld, 0.8, 0.4).item() == doctest::Approx(2.46).epsilon(1e-14));
  CHECK_THROWS((void)total_loss(lm, lu, ld, -1.0, 0.4));
}

TEST_CASE("total loss is linear in its components") {
  std::mt19937_64 rng(49);
  std::uniform_real_distribution<double> u(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    const double a = u(rng), b = u(rng), c = u(rng), a2 = u(rng), b2 = u(rng), c2 = u(rng);
    const double l1 = u(rng), l2 = u(rng);
    const double sum = total_loss(a + a2, b + b2, c + c2, l1, l2).total;
    const double parts = total_loss(a, b, c, l1, l2).total + total_loss(a2, b2, c2, l1, l2).total;
    CHECK(sum == doctest::Approx(parts).epsilon(1e-13));
  }
}

TEST_CASE("losses pass finite-difference checks end to end") {
  std::uint64_t seed = 60;
  for (const auto& c : gradcase::objective_cases()) {
    CAPTURE(c.name);
    CHECK(gradcase::worst_error(c, 60, seed++) < 1e-4);
  }
}

TEST_CASE("full-model total loss on 8 samples passes the finite-difference check") {
  const auto c = gradcase::model_case();
  CHECK(gradcase::worst_error(c, 10, 71) < 1e-4);
}
