#pragma once

// Joint distributions over (X, Y), second-moment geometry and the
// synthetic families used throughout the library.

#include <Eigen/Dense>

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "strata_reg/rng.hpp"

namespace strata_reg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Provenance { exact, pool_estimated };
std::string_view to_string(Provenance p);

/// Gaussian label noise and Gaussian regions are truncated at this many
/// standard deviations.
inline constexpr double kGaussianTruncation = 6.0;

/// Variance of a standard normal conditioned on |Z| <= bound.
double truncated_normal_variance(double bound);

/// Sigma = E[X X^T] together with its inverse.
class SecondMoment {
 public:
  SecondMoment(Matrix sigma, Provenance provenance, std::size_t pool_size = 0);

  int dim() const { return static_cast<int>(sigma_.rows()); }
  const Matrix& sigma() const { return sigma_; }
  const Matrix& sigma_inv() const { return sigma_inv_; }
  Provenance provenance() const { return provenance_; }
  std::size_t pool_size() const { return pool_size_; }

  /// x^T Sigma^{-1} x, the squared dual norm.
  double dual_norm_sq(const Vector& x) const;
  /// x^T Sigma x.
  double norm_sq(const Vector& x) const;

 private:
  Matrix sigma_;
  Matrix sigma_inv_;
  Provenance provenance_;
  std::size_t pool_size_;
};

struct Predictor {
  Vector w;
};

enum class NoiseKind { none, gaussian, uniform };
enum class RegionShape { atom, box, gaussian };

std::string_view to_string(NoiseKind k);
std::string_view to_string(RegionShape s);

/// One mixture component of the marginal D_X together with the label model
/// Y = x^T w* + offset + noise_scale * eps on that component.
struct Region {
  RegionShape shape = RegionShape::atom;
  Vector lo;      // support box (equal to hi for an atom)
  Vector hi;
  Vector center;  // gaussian shape only
  Vector sd;      // gaussian shape only
  double weight = 0.0;
  double offset = 0.0;
  NoiseKind noise = NoiseKind::none;
  double noise_scale = 0.0;

  static Region atom(Vector at, double weight, double offset = 0.0,
                     NoiseKind noise = NoiseKind::none, double noise_scale = 0.0);
  static Region box(Vector lo, Vector hi, double weight, double offset = 0.0,
                    NoiseKind noise = NoiseKind::none, double noise_scale = 0.0);
  /// Axis-aligned Gaussian truncated at kGaussianTruncation sd per coordinate.
  static Region gaussian(Vector center, Vector sd, double weight, double offset = 0.0,
                         NoiseKind noise = NoiseKind::none, double noise_scale = 0.0);

  int dim() const { return static_cast<int>(lo.size()); }
  bool contains(const Vector& x) const;
  Vector mean() const;
  Matrix second_moment() const;
  Vector draw(Rng& rng) const;
  double noise_variance() const;
  /// Largest |noise| that can be drawn.
  double noise_bound() const;
  double draw_noise(Rng& rng) const;
};

struct MixtureSpec {
  Vector w_star;
  std::vector<Region> regions;
  /// When false the family pretends it has no closed-form moments, which
  /// forces callers onto the pool-estimated paths.
  bool expose_exact_moments = true;
};

struct ExactMoments {
  Matrix sigma;
  Vector exy;
  Vector w_opt;
};

struct Atom {
  Vector x;
  double prob;
  std::size_t region;
};

/// Sampleable model of (X, Y). Unlabeled draws are free; every call to
/// sample_y counts as one label.
///
/// Immutable after construction apart from the atomic label counter, so a
/// single instance may be shared by concurrent trials.
class JointDistribution {
 public:
  JointDistribution(MixtureSpec spec, std::string name);

  JointDistribution(JointDistribution&&) noexcept = default;
  JointDistribution& operator=(JointDistribution&&) noexcept = default;

  const std::string& name() const { return name_; }
  int dim() const { return static_cast<int>(spec_.w_star.size()); }
  const MixtureSpec& spec() const { return spec_; }
  const std::vector<Region>& regions() const { return spec_.regions; }

  Vector sample_x(Rng& rng) const;
  /// Draws Y ~ D_{Y|x} and increments the label counter.
  double sample_y(const Vector& x, Rng& rng) const;

  std::uint64_t labels_drawn() const { return labels_->load(std::memory_order_relaxed); }
  void reset_label_counter() const { labels_->store(0, std::memory_order_relaxed); }

  /// Closed-form Sigma, E[XY], w_opt when the family exposes them.
  const std::optional<ExactMoments>& exact_moments() const { return exposed_; }

  /// b with (x^T w_opt - y)^2 <= b^2 ||x||_*^2 on the support.
  double noise_bound_b() const { return noise_bound_b_; }
  /// sup over the support of ||x||_*^2 under the true Sigma.
  double sup_dual_sq() const { return sup_dual_sq_; }
  double sup_dual_sq(const SecondMoment& sm) const;
  double region_sup_dual_sq(std::size_t r, const SecondMoment& sm) const;

  std::optional<std::size_t> region_of(const Vector& x) const;
  double cond_mean(const Vector& x) const;
  double cond_var(const Vector& x) const;

  bool is_discrete() const;
  /// Support points with their probabilities; empty unless is_discrete().
  std::vector<Atom> atoms() const;

  /// Copy of this family with closed-form moments hidden.
  JointDistribution without_exact_moments() const;

 private:
  std::size_t region_index(const Vector& x) const;

  MixtureSpec spec_;
  std::string name_;
  ExactMoments truth_;
  std::optional<ExactMoments> exposed_;
  double noise_bound_b_ = 0.0;
  double sup_dual_sq_ = 0.0;
  std::vector<double> cumulative_;
  std::unique_ptr<std::atomic<std::uint64_t>> labels_;
};

/// Parameters of the two-atom family used for the active/passive separation.
struct LowerBoundParams {
  double sigma = 1.0;
  double alpha = 5.0;
  double eta = 0.1;

  void validate() const;
  double p() const { return 1.0 / (2.0 * alpha * alpha); }
  double beta() const;
  double w_opt() const { return p() * alpha * alpha * eta; }
};

JointDistribution make_lower_bound_family(const LowerBoundParams& params);

/// Validates the mixture (weights, disjointness, finite b) and builds it.
JointDistribution make_heteroscedastic_family(MixtureSpec spec, std::string name = "mixture");

std::vector<Vector> draw_pool(const JointDistribution& dist, std::size_t n, Rng& rng);

SecondMoment estimate_second_moment(const JointDistribution& dist, std::size_t pool_size, Rng& rng);

/// w_opt = Sigma^{-1} E[XY] from the closed-form moments.
Predictor optimal_predictor(const JointDistribution& dist);

/// Oracle variant for families without exposed moments: estimates E[XY]
/// from conditional means on an unlabeled pool. Uses no labels.
Predictor optimal_predictor(const JointDistribution& dist, const SecondMoment& sm,
                            std::size_t pool_size, Rng& rng);

/// Expected squared loss L(w, D) computed from the conditional structure.
double expected_loss(const JointDistribution& dist, const Vector& w);

}  // namespace strata_reg
