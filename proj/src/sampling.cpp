#include "strata_reg/sampling.hpp"

#include <fmt/format.h>

#include <cmath>
#include <ostream>

#include "strata_reg/error.hpp"

namespace strata_reg {

std::string LabeledSample::source_tag() const {
  switch (source) {
    case SampleSource::raw: return "raw-D";
    case SampleSource::p_phi: return "P_phi";
    case SampleSource::q_i: return fmt::format("Q_i({})", cell);
  }
  return "?";
}

LabeledSample sample_raw(const JointDistribution& dist, std::size_t m, Rng& rng) {
  LabeledSample s;
  s.x.resize(static_cast<Eigen::Index>(m), dist.dim());
  s.y.resize(static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    const Vector x = dist.sample_x(rng);
    s.x.row(static_cast<Eigen::Index>(i)) = x.transpose();
    s.y[static_cast<Eigen::Index>(i)] = dist.sample_y(x, rng);
  }
  s.source = SampleSource::raw;
  s.labels_consumed = m;
  s.proposals = m;
  return s;
}

LabeledSample sample_p_phi(const JointDistribution& dist, const SecondMoment& sm, const WeightFunction& phi,
                           std::size_t m, Rng& rng) {
  if (sm.dim() != dist.dim()) throw InvalidArgument("sample_p_phi: second moment dimension mismatch");
  const double sup = phi.sup_phi();
  if (!std::isfinite(sup) || !(sup > 0.0)) throw InvalidArgument("sample_p_phi: sup_phi must be finite");

  LabeledSample s;
  s.source = SampleSource::p_phi;
  s.x.resize(static_cast<Eigen::Index>(m), dist.dim());
  s.y.resize(static_cast<Eigen::Index>(m));
  std::uint64_t since_accept = 0;
  std::size_t filled = 0;
  while (filled < m) {
    const Vector x = dist.sample_x(rng);
    ++s.proposals;
    const double w = phi(x);
    if (!(w > 0.0)) throw InvalidArgument("sample_p_phi: weight function is not strictly positive on the support");
    if (w > sup * (1.0 + 1e-9)) {
      throw InvalidArgument(fmt::format("sample_p_phi: phi(x) = {} exceeds declared sup_phi = {}", w, sup));
    }
    if (rng.uniform() <= w / sup) {
      const double y = dist.sample_y(x, rng);
      const double scale = 1.0 / std::sqrt(w);
      s.x.row(static_cast<Eigen::Index>(filled)) = scale * x.transpose();
      s.y[static_cast<Eigen::Index>(filled)] = scale * y;
      ++filled;
      ++s.labels_consumed;
      since_accept = 0;
    } else if (++since_accept >= kMaxProposalsPerRow) {
      throw SamplingError(fmt::format("sample_p_phi: acceptance rate below 1e-6 after {} proposals (degenerate phi)",
                                      since_accept));
    }
  }
  return s;
}

LabeledSample sample_q_i(const JointDistribution& dist, const SecondMoment& sm, const Partition& partition,
                         std::size_t cell, std::size_t t, Rng& rng) {
  if (cell >= partition.size()) throw InvalidArgument(fmt::format("sample_q_i: no cell {}", cell));
  const PartitionStats& st = partition.stats();
  if (!(st.probs[cell] > 0.0)) throw InvalidArgument(fmt::format("sample_q_i: cell {} has p_i = 0", cell));
  const double sup_r = st.sup_dual_sq[cell];
  if (!(sup_r > 0.0) || !std::isfinite(sup_r)) {
    throw InvalidArgument(fmt::format("sample_q_i: cell {} has no finite positive sup of ||x||_*", cell));
  }
  const double sup4 = sup_r * sup_r;

  LabeledSample s;
  s.source = SampleSource::q_i;
  s.cell = cell;
  s.x.resize(static_cast<Eigen::Index>(t), dist.dim());
  s.y.resize(static_cast<Eigen::Index>(t));
  std::uint64_t since_accept = 0;
  std::size_t filled = 0;
  while (filled < t) {
    const Vector x = dist.sample_x(rng);
    ++s.proposals;
    bool accepted = false;
    if (partition.contains(cell, x)) {
      const double r = sm.dual_norm_sq(x);
      if (r > 0.0 && rng.uniform() * sup4 <= r * r) {
        const double y = dist.sample_y(x, rng);
        const double scale = 1.0 / std::sqrt(r);
        s.x.row(static_cast<Eigen::Index>(filled)) = scale * x.transpose();
        s.y[static_cast<Eigen::Index>(filled)] = scale * y;
        ++filled;
        ++s.labels_consumed;
        since_accept = 0;
        accepted = true;
      }
    }
    if (!accepted && ++since_accept >= kMaxProposalsPerRow) {
      throw SamplingError(
          fmt::format("sample_q_i: cell {} produced no acceptance in {} proposals", cell, since_accept));
    }
  }
  return s;
}

void write_sample_csv(std::ostream& out, const LabeledSample& sample) {
  for (int k = 0; k < sample.dim(); ++k) out << "x_" << (k + 1) << ',';
  out << "y,source\n";
  const std::string tag = sample.source_tag();
  for (Eigen::Index i = 0; i < sample.x.rows(); ++i) {
    for (Eigen::Index k = 0; k < sample.x.cols(); ++k) out << fmt::format("{:.17g},", sample.x(i, k));
    out << fmt::format("{:.17g},{}\n", sample.y[i], tag);
  }
}

}  // namespace strata_reg
