#include "raml/theorem.hpp"

#include "raml/autodiff.hpp"
#include "raml/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace raml::theorem {

void TheoremInstance::validate() const {
  if (theta.size() == 0 || theta.size() != mu1.size() || theta.size() != mu2.size()) {
    throw std::invalid_argument("theorem instance: theta, mu1, mu2 must share a positive length");
  }
  if (!theta.allFinite() || !mu1.allFinite() || !mu2.allFinite()) {
    throw std::invalid_argument("theorem instance: entries must be finite");
  }
}

PowerTriple power_triple(const TheoremInstance& instance) {
  instance.validate();
  const Eigen::ArrayXd a = instance.theta.array() * instance.mu1.array();
  const Eigen::ArrayXd b = instance.theta.array() * instance.mu2.array();
  const double s1 = a.sum();
  const double s2 = b.sum();
  PowerTriple p;
  p.p_uniform = ad::sigmoid(0.5 * s1 + 0.5 * s2);
  p.sup_coarse = ad::sigmoid(std::max(s1, s2));
  p.sup_fine = ad::sigmoid(a.max(b).sum());
  return p;
}

double fine_power(const TheoremInstance& instance, const Eigen::VectorXd& weight1) {
  instance.validate();
  const Eigen::ArrayXd a = instance.theta.array() * instance.mu1.array();
  const Eigen::ArrayXd b = instance.theta.array() * instance.mu2.array();
  return ad::sigmoid((weight1.array() * a + (1.0 - weight1.array()) * b).sum());
}

double coarse_power(const TheoremInstance& instance, double alpha1) {
  instance.validate();
  const double s1 = instance.theta.dot(instance.mu1);
  const double s2 = instance.theta.dot(instance.mu2);
  return ad::sigmoid(alpha1 * s1 + (1.0 - alpha1) * s2);
}

TheoremInstance random_instance(int dim, std::uint64_t seed) {
  Rng rng(seed);
  TheoremInstance inst;
  inst.theta = standard_normal(dim, 1, rng);
  inst.mu1 = standard_normal(dim, 1, rng);
  inst.mu2 = standard_normal(dim, 1, rng);
  return inst;
}

OrderingReport verify_ordering(long trials, int d_min, int d_max, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("verify_ordering: trials must be >= 1");
  if (d_min < 1 || d_max < d_min) throw std::invalid_argument("verify_ordering: invalid D range");
  OrderingReport r;
  r.trials = trials;
  r.worst_fine_coarse = std::numeric_limits<double>::infinity();
  r.worst_coarse_uniform = std::numeric_limits<double>::infinity();
  for (long t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    std::uniform_int_distribution<int> pick_dim(d_min, d_max);
    const int dim = pick_dim(rng);
    const PowerTriple p = power_triple(random_instance(dim, rng()));
    const double fine_coarse = p.sup_fine - p.sup_coarse;
    const double coarse_uniform = p.sup_coarse - p.p_uniform;
    r.worst_fine_coarse = std::min(r.worst_fine_coarse, fine_coarse);
    r.worst_coarse_uniform = std::min(r.worst_coarse_uniform, coarse_uniform);
    if (fine_coarse < -kOrderingTolerance || coarse_uniform < -kOrderingTolerance) ++r.violations;
  }
  return r;
}

}  // namespace raml::theorem
