#pragma once

// Closed-form suprema of the two-modality binary predictive power under
// uniform, coarse (one weight per modality) and fine (one weight per
// element) convex weightings of unimodal means.

#include <Eigen/Dense>

#include <cstdint>

namespace raml::theorem {

struct TheoremInstance {
  Eigen::VectorXd theta;
  Eigen::VectorXd mu1;
  Eigen::VectorXd mu2;

  void validate() const;
};

struct PowerTriple {
  double p_uniform = 0;
  double sup_coarse = 0;
  double sup_fine = 0;
};

/// With s_m = sum_d theta_d mu_{m,d}:
///   p_uniform  = sigmoid((s_1 + s_2) / 2)
///   sup_coarse = sigmoid(max(s_1, s_2))
///   sup_fine   = sigmoid(sum_d max(theta_d mu_{1,d}, theta_d mu_{2,d}))
PowerTriple power_triple(const TheoremInstance& instance);

/// Predictive power for explicit per-element weights on modality 1
/// (modality 2 receives 1 - w).
double fine_power(const TheoremInstance& instance, const Eigen::VectorXd& weight1);
/// Predictive power for a coarse weight alpha on modality 1.
double coarse_power(const TheoremInstance& instance, double alpha1);

struct OrderingReport {
  long trials = 0;
  long violations = 0;
  /// Smallest observed sup_fine - sup_coarse and sup_coarse - p_uniform.
  double worst_fine_coarse = 0;
  double worst_coarse_uniform = 0;
};

inline constexpr double kOrderingTolerance = 1e-12;

/// Instances with theta, mu ~ N(0, 1) entries and D uniform in [d_min, d_max].
/// Trial t draws from a stream derived from (seed, t).
OrderingReport verify_ordering(long trials, int d_min, int d_max, std::uint64_t seed);

TheoremInstance random_instance(int dim, std::uint64_t seed);

}  // namespace raml::theorem
