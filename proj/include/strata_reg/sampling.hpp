#pragma once

// Rejection samplers for the reweighted distribution P_phi and the
// per-stratum distributions Q_i.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>

#include "strata_reg/model.hpp"
#include "strata_reg/strata.hpp"

namespace strata_reg {

/// Proposals allowed between two accepted rows before the sampler gives up.
inline constexpr std::uint64_t kMaxProposalsPerRow = 10'000'000;

enum class SampleSource { raw, p_phi, q_i };

struct LabeledSample {
  Matrix x;  // one row per example
  Vector y;
  SampleSource source = SampleSource::raw;
  std::size_t cell = 0;  // meaningful for q_i only
  std::uint64_t labels_consumed = 0;
  std::uint64_t proposals = 0;

  std::size_t size() const { return static_cast<std::size_t>(y.size()); }
  int dim() const { return static_cast<int>(x.cols()); }
  double acceptance_rate() const {
    return proposals == 0 ? 1.0 : static_cast<double>(labels_consumed) / static_cast<double>(proposals);
  }
  std::string source_tag() const;
};

/// m i.i.d. labeled pairs straight from D.
LabeledSample sample_raw(const JointDistribution& dist, std::size_t m, Rng& rng);

/// m rows from P_phi: accept x ~ D_X with probability phi(x)/sup_phi, then
/// label it and emit (x, y) / sqrt(phi(x)). Consumes exactly m labels.
LabeledSample sample_p_phi(const JointDistribution& dist, const SecondMoment& sm, const WeightFunction& phi,
                           std::size_t m, Rng& rng);

/// t rows from Q_i: accept x in A_i with probability ||x||_*^4 / sup_{A_i}
/// ||.||_*^4, then emit (x, y) / ||x||_*. Consumes exactly t labels.
LabeledSample sample_q_i(const JointDistribution& dist, const SecondMoment& sm, const Partition& partition,
                         std::size_t cell, std::size_t t, Rng& rng);

/// CSV with columns x_1..x_d,y,source.
void write_sample_csv(std::ostream& out, const LabeledSample& sample);

}  // namespace strata_reg
