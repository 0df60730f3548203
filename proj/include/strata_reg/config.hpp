#pragma once

// JSON configuration: families, partitions, learner settings and the
// closed-form moment fixtures.

#include <json.hpp>

#include <cstdint>
#include <string>

#include "strata_reg/active.hpp"
#include "strata_reg/model.hpp"
#include "strata_reg/strata.hpp"

namespace strata_reg {

/// {"name": "lower_bound", "sigma", "alpha", "eta"} or
/// {"name": "mixture", "w_star": [...], "regions": [...], "exact_moments": bool}.
JointDistribution family_from_json(const nlohmann::json& j);

/// {"kind": "atoms"|"boxes"|"intervals"|"shells"|"regions", ...}. Infinite
/// bounds are written as null.
Partition partition_from_json(const nlohmann::json& j, const JointDistribution& dist, const SecondMoment& sm);

/// Reads m, delta, constants, b and base-learner settings; absent keys keep
/// the defaults of `base`.
ActiveConfig active_config_from_json(const nlohmann::json& j, ActiveConfig base = {});

LearnerConstants parse_constants(const std::string& csv);

/// Exact-moment fixture: sigma, w_opt and per-cell p / theta / mu.
nlohmann::json moments_to_json(const JointDistribution& dist, const SecondMoment& sm, const Partition& partition,
                               const Vector& w_opt, const StratumMoments& mu);

nlohmann::json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);

/// Everything derived from unlabeled data and closed forms before any label
/// is drawn: Sigma, w_opt (oracle), partition statistics and stratum mu.
struct ProblemSetup {
  JointDistribution dist;
  SecondMoment sm;
  Vector w_opt;
  Partition partition;
  StratumMoments mu;
};

/// pool_size is used for every pool-estimated quantity (only when the family
/// lacks closed forms).
ProblemSetup prepare_problem(const nlohmann::json& family, const nlohmann::json& partition, std::uint64_t seed,
                             std::size_t pool_size = 1'000'000);

}  // namespace strata_reg
