#pragma once

// The black-box regression learner: ordinary least squares and the
// median-of-means variant that selects among per-group OLS fits.

#include <cstddef>
#include <vector>

#include "strata_reg/model.hpp"
#include "strata_reg/sampling.hpp"

namespace strata_reg {

enum class BaseMode { median_of_means, plain_ols };

struct BaseLearnerConfig {
  BaseMode mode = BaseMode::median_of_means;
  double c_k = 3.5;

  /// k = min(ceil(c_k ln(2/delta)), floor(n / (2d))), at least 1.
  std::size_t group_count(std::size_t n, int d, double delta) const;
};

/// argmin_w sum (x^T w - y)^2 via the ridge-stabilized normal equations.
Predictor ols(const LabeledSample& sample);
Predictor ols(const Matrix& x, const Vector& y);

/// Details of one median-of-means selection; exposed for tests.
struct MomFit {
  Predictor selected;
  std::vector<Vector> group_fits;      // fits of non-dropped groups
  std::vector<double> median_distance; // per kept group
  std::size_t selected_index = 0;      // into group_fits
  std::size_t groups = 0;              // k before dropping
  std::size_t dropped = 0;
};

/// Shuffles rows (seeded), splits them into k contiguous groups, fits OLS on
/// each and returns the fit with the smallest median Sigma-hat distance to
/// the others. k = 1 is plain OLS on the unshuffled rows.
MomFit mom_regress_detailed(const LabeledSample& sample, double delta, const BaseLearnerConfig& cfg, Rng& rng);
Predictor mom_regress(const LabeledSample& sample, double delta, const BaseLearnerConfig& cfg, Rng& rng);

/// Dispatches on cfg.mode.
Predictor run_base_learner(const LabeledSample& sample, double delta, const BaseLearnerConfig& cfg, Rng& rng);

/// (w - w_opt)^T Sigma (w - w_opt).
double excess_loss(const JointDistribution& dist, const SecondMoment& sm, const Predictor& w);
double excess_loss(const SecondMoment& sm, const Vector& w_opt, const Vector& w);

}  // namespace strata_reg
