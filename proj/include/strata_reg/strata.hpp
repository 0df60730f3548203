#pragma once

// Partitions of the input space, weight functions and the risk functionals
// built on them.

#include <json.hpp>

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "strata_reg/model.hpp"

namespace strata_reg {

struct PartitionStats {
  std::vector<double> probs;        // p_i = P[X in A_i]
  std::vector<double> thetas;       // Theta_i = E[||X||_*^4 | X in A_i]
  std::vector<double> sup_dual_sq;  // sup over A_i of ||x||_*^2 (upper bound)
  std::vector<double> prob_se;      // zero in exact mode
  Provenance provenance = Provenance::exact;
  std::size_t pool_size = 0;
};

/// K disjoint cells over the input space, each a membership predicate.
/// Statistics are attached by estimate_partition_stats.
class Partition {
 public:
  using Predicate = std::function<bool(const Vector&)>;

  /// One cell per support point.
  static Partition atoms(std::vector<Vector> points);
  /// Half-open boxes [lo, hi); infinite bounds allowed.
  static Partition boxes(std::vector<std::pair<Vector, Vector>> cells);
  /// Cells [edges[i], edges[i+1]) along one coordinate.
  static Partition intervals(int coord, std::vector<double> edges);
  /// Shells radii[i] <= ||x||_* < radii[i+1] under the given second moment.
  static Partition shells(std::vector<double> radii, const SecondMoment& sm);
  /// One cell per mixture region of the family.
  static Partition regions(const JointDistribution& dist);
  static Partition custom(std::vector<Predicate> cells, std::string label = "custom");

  std::size_t size() const { return cells_.size(); }
  bool contains(std::size_t cell, const Vector& x) const { return cells_.at(cell)(x); }
  std::size_t match_count(const Vector& x) const;
  /// Index of the first cell containing x.
  std::optional<std::size_t> cell_of(const Vector& x) const;

  /// Constructor name and parameters, as accepted by partition_from_json.
  const nlohmann::json& config() const { return config_; }

  bool has_stats() const { return stats_.has_value(); }
  const PartitionStats& stats() const;
  const std::vector<double>& probs() const { return stats().probs; }
  const std::vector<double>& thetas() const { return stats().thetas; }
  void set_stats(PartitionStats stats);

 private:
  Partition(std::vector<Predicate> cells, nlohmann::json config)
      : cells_(std::move(cells)), config_(std::move(config)) {}

  std::vector<Predicate> cells_;
  nlohmann::json config_;
  std::optional<PartitionStats> stats_;
};

enum class WeightForm { constant_one, leverage, piecewise, phi_hat, tabulated };
std::string_view to_string(WeightForm f);

/// A reweighting phi with E[phi(X)] = 1, together with an upper bound on
/// phi over the support (needed by the rejection sampler).
class WeightFunction {
 public:
  using Fn = std::function<double(const Vector&)>;

  WeightFunction(WeightForm form, Fn fn, double sup_phi, Vector a = {}, double xi = 0.0);

  static WeightFunction constant_one();
  /// phi_a: value a_i / sum_j p_j a_j on cell i. Requires partition stats.
  static WeightFunction piecewise(const Partition& partition, const Vector& a);

  double operator()(const Vector& x) const { return fn_(x); }
  WeightForm form() const { return form_; }
  double sup_phi() const { return sup_phi_; }
  const Vector& a() const { return a_; }
  double xi() const { return xi_; }

  nlohmann::json to_json() const;

 private:
  WeightForm form_;
  Fn fn_;
  double sup_phi_;
  Vector a_;
  double xi_;
};

struct Estimate {
  double value = 0.0;
  double se = 0.0;
  Provenance provenance = Provenance::exact;
};

/// psi^2(x) = ||x||_*^2 * E[(X^T w_opt - Y)^2 | X = x].
double psi_sq(const SecondMoment& sm, const JointDistribution& dist, const Vector& w_opt, const Vector& x);

/// rho(phi) = E[psi^2(X) / phi(X)]. Exact for discrete families, otherwise a
/// Monte-Carlo average over n_mc unlabeled draws (n_mc >= 1e4).
Estimate risk(const JointDistribution& dist, const SecondMoment& sm, const WeightFunction& phi,
              const Vector& w_opt, std::size_t n_mc, Rng& rng);

/// rho(phi_a) = (sum_j p_j a_j) (sum_i p_i mu_i / a_i).
double risk_piecewise(std::span<const double> probs, std::span<const double> mu, std::span<const double> a);

/// (sum_i p_i sqrt(mu_i))^2.
double oracle_risk(std::span<const double> probs, std::span<const double> mu);

struct StratumMoments {
  std::vector<double> mu;  // mu_i = E[psi^2(X) | X in A_i]
  std::vector<double> se;
  Provenance provenance = Provenance::exact;
};

/// Oracle computation of mu_i from the conditional label model. No labels.
StratumMoments stratum_moments(const JointDistribution& dist, const SecondMoment& sm,
                               const Partition& partition, const Vector& w_opt, std::size_t pool_size,
                               Rng& rng);

/// Fills p_i, Theta_i and per-cell sup ||x||_*^2. Exact for discrete
/// families; otherwise from an unlabeled pool of at least 1e4 * K draws.
Partition estimate_partition_stats(const JointDistribution& dist, const SecondMoment& sm, Partition partition,
                                   std::size_t pool_size, Rng& rng);

/// Lambda_D = E[||X||_*^4] = sum_i p_i Theta_i.
double fourth_moment(const Partition& partition);

struct ConstrainedOptimum {
  WeightFunction phi;
  double beta = 0.0;   // threshold defining H_beta = {psi <= beta ||x||_*^2}
  double scale = 0.0;  // phi = scale * psi outside H_beta
  Provenance provenance = Provenance::exact;
};

/// Minimizer of E[psi^2/phi] subject to E[phi] = 1 and phi >= xi ||x||_*^2.
/// psi evaluates psi(x) (not squared).
ConstrainedOptimum optimal_phi_constrained(const std::function<double(const Vector&)>& psi,
                                           const SecondMoment& sm, const JointDistribution& dist, double xi,
                                           std::size_t pool_size, Rng& rng);

}  // namespace strata_reg
