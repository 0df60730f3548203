#pragma once

// Three-stage stratified active regression: a crude fit under leverage
// weighting, per-stratum risk estimates from Q_i samples, and a final fit
// under the estimated weighting.

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "strata_reg/base_learner.hpp"
#include "strata_reg/model.hpp"
#include "strata_reg/sampling.hpp"
#include "strata_reg/strata.hpp"

namespace strata_reg {

/// Universal constants of the base learner guarantee; the values are not
/// known, these are the configurable defaults.
struct LearnerConstants {
  double C = 1.0;
  double c = 1.0;
  double c_prime = std::numbers::e;
  double c_dprime = 2.0;
};

struct ActiveConfig {
  std::size_t m = 0;
  double delta = 0.1;
  LearnerConstants constants;
  std::optional<double> b;  // overrides the distribution's noise bound
  BaseLearnerConfig base;
};

/// Smallest admissible budget: ceil((c d ln(c' d) ln(c''/delta))^{5/4}).
std::size_t budget_gate(int d, double delta, const LearnerConstants& k);

struct StagePlan {
  std::size_t m = 0;
  std::size_t m1 = 0;
  std::size_t m2 = 0;
  std::size_t m3 = 0;
  std::size_t t = 0;  // labels per stratum in stage 2
  std::size_t cells = 0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;

  /// Labels the run will actually request: m1 + t K + m3.
  std::size_t labels_planned() const { return m1 + t * cells + m3; }
};

/// m1 = m2 = floor(m^{4/5}/2), m3 = m - m1 - m2, t = floor(m2/K).
StagePlan make_stage_plan(std::size_t m, std::size_t cells, double delta);

struct StageDiagnostics {
  StagePlan plan;
  double b = 0.0;
  double Delta = 0.0;
  double gamma = 0.0;
  double xi = 0.0;
  Vector v_hat;
  std::vector<double> mu_tilde;
  std::vector<double> a_hat;
  std::uint64_t labels_stage1 = 0;
  std::uint64_t labels_stage2 = 0;
  std::uint64_t labels_stage3 = 0;
  double acceptance_stage1 = 0.0;
  std::vector<double> acceptance_stage2;
  double acceptance_stage3 = 0.0;

  std::uint64_t labels_total() const { return labels_stage1 + labels_stage2 + labels_stage3; }
  nlohmann::json to_json() const;
};

/// phi[Sigma](x) = ||x||_*^2 / d.
WeightFunction leverage_phi(const SecondMoment& sm, const JointDistribution& dist);

struct MuTildeEstimate {
  std::vector<double> mu_tilde;
  std::vector<double> a_hat;
  std::uint64_t labels = 0;
  std::vector<double> acceptance;
};

/// mu~_i = Theta_i ((1/t) sum_{T_i} (|x^T v - y| + Delta)^2 + gamma), a^_i = sqrt(mu~_i).
MuTildeEstimate estimate_mu_tilde(const JointDistribution& dist, const SecondMoment& sm,
                                  const Partition& partition, const Vector& v_hat, double Delta, double gamma,
                                  std::size_t t, Rng& rng);

/// phi^(x) = xi ||x||_*^2 + (1 - d xi) a^_i / sum_j p_j a^_j on A_i.
WeightFunction build_phi_hat(const std::vector<double>& a_hat, const Partition& partition, double xi,
                             const SecondMoment& sm);

struct ActiveResult {
  Predictor w_hat;
  StageDiagnostics diagnostics;
};

ActiveResult active_regression(const JointDistribution& dist, const SecondMoment& sm, const Partition& partition,
                               const ActiveConfig& cfg, Rng& rng);

struct PassiveResult {
  Predictor w_hat;
  std::uint64_t labels = 0;
};

/// m raw labeled pairs from D, fitted by the same base learner at confidence delta.
PassiveResult passive_baseline(const JointDistribution& dist, const ActiveConfig& cfg, Rng& rng);

}  // namespace strata_reg
