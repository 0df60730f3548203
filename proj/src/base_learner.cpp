#include "strata_reg/base_learner.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "strata_reg/error.hpp"

namespace strata_reg {

namespace {

// Lower median, so the value is always one of the inputs.
double lower_median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

std::size_t BaseLearnerConfig::group_count(std::size_t n, int d, double delta) const {
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("delta must lie in (0, 1)");
  if (mode == BaseMode::plain_ols) return 1;
  const auto by_confidence = static_cast<std::size_t>(std::ceil(c_k * std::log(2.0 / delta)));
  const std::size_t by_size = n / (2 * static_cast<std::size_t>(d));
  return std::max<std::size_t>(1, std::min(by_confidence, by_size));
}

Predictor ols(const Matrix& x, const Vector& y) {
  const auto n = x.rows();
  const auto d = x.cols();
  if (n < d || n == 0) throw InvalidArgument(fmt::format("ols: need n >= d rows (n = {}, d = {})", n, d));
  if (y.size() != n) throw InvalidArgument("ols: label count does not match row count");
  Matrix gram = (x.transpose() * x) / static_cast<double>(n);
  const Vector rhs = (x.transpose() * y) / static_cast<double>(n);
  const double trace = gram.trace();
  if (trace == 0.0) {
    throw SingularError("ols: empirical second moment is zero");
  }
  if (!std::isfinite(trace)) throw SingularError("ols: non-finite design matrix");
  gram.diagonal().array() += 1e-12 * trace / static_cast<double>(d);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  if (!(lmin > 1e-10 * lmax)) throw SingularError("ols: design is rank deficient beyond the numerical ridge");
  const Eigen::LDLT<Matrix> ldlt(gram);
  return Predictor{ldlt.solve(rhs)};
}

Predictor ols(const LabeledSample& sample) { return ols(sample.x, sample.y); }

MomFit mom_regress_detailed(const LabeledSample& sample, double delta, const BaseLearnerConfig& cfg, Rng& rng) {
  const std::size_t n = sample.size();
  const int d = sample.dim();
  BaseLearnerConfig mom = cfg;
  mom.mode = BaseMode::median_of_means;
  const std::size_t k = mom.group_count(n, d, delta);
  if (n < k * static_cast<std::size_t>(d)) {
    throw InvalidArgument(fmt::format("mom_regress: need n >= k*d rows (n = {}, k = {}, d = {})", n, k, d));
  }

  MomFit fit;
  fit.groups = k;
  if (k == 1) {
    fit.selected = ols(sample);
    fit.group_fits.push_back(fit.selected.w);
    fit.median_distance.push_back(0.0);
    return fit;
  }

  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(order[i], order[rng.below(i + 1)]);
  }

  const std::size_t base = n / k;
  const std::size_t extra = n % k;
  std::size_t start = 0;
  for (std::size_t g = 0; g < k; ++g) {
    const std::size_t len = base + (g < extra ? 1 : 0);
    Matrix gx(static_cast<Eigen::Index>(len), d);
    Vector gy(static_cast<Eigen::Index>(len));
    for (std::size_t r = 0; r < len; ++r) {
      gx.row(static_cast<Eigen::Index>(r)) = sample.x.row(order[start + r]);
      gy[static_cast<Eigen::Index>(r)] = sample.y[order[start + r]];
    }
    start += len;
    try {
      fit.group_fits.push_back(ols(gx, gy).w);
    } catch (const SingularError&) {
      ++fit.dropped;
    }
  }
  if (2 * fit.dropped > k) {
    throw SingularError(fmt::format("mom_regress: {} of {} groups rank deficient", fit.dropped, k));
  }

  const Matrix sigma_hat = (sample.x.transpose() * sample.x) / static_cast<double>(n);
  const std::size_t kept = fit.group_fits.size();
  fit.median_distance.assign(kept, 0.0);
  std::vector<double> dist(kept);
  for (std::size_t i = 0; i < kept; ++i) {
    for (std::size_t j = 0; j < kept; ++j) {
      const Vector diff = fit.group_fits[i] - fit.group_fits[j];
      dist[j] = std::sqrt(std::max(0.0, diff.dot(sigma_hat * diff)));
    }
    fit.median_distance[i] = lower_median(dist);
  }
  fit.selected_index = static_cast<std::size_t>(
      std::distance(fit.median_distance.begin(),
                    std::min_element(fit.median_distance.begin(), fit.median_distance.end())));
  fit.selected = Predictor{fit.group_fits[fit.selected_index]};
  return fit;
}

Predictor mom_regress(const LabeledSample& sample, double delta, const BaseLearnerConfig& cfg, Rng& rng) {
  return mom_regress_detailed(sample, delta, cfg, rng).selected;
}

Predictor run_base_learner(const LabeledSample& sample, double delta, const BaseLearnerConfig& cfg, Rng& rng) {
  if (cfg.mode == BaseMode::plain_ols) return ols(sample);
  return mom_regress(sample, delta, cfg, rng);
}

double excess_loss(const SecondMoment& sm, const Vector& w_opt, const Vector& w) {
  const Vector diff = w - w_opt;
  return sm.norm_sq(diff);
}

double excess_loss(const JointDistribution& dist, const SecondMoment& sm, const Predictor& w) {
  return excess_loss(sm, optimal_predictor(dist).w, w.w);
}

}  // namespace strata_reg
