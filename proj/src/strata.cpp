#include "strata_reg/strata.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "strata_reg/error.hpp"

namespace strata_reg {

namespace {

nlohmann::json vec_json(const Vector& v) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) j.push_back(v[k]);
  return j;
}

// Weighted support used by the exact/pool expectation paths: atom
// probabilities in exact mode, 1/n each in pool mode.
struct WeightedSupport {
  std::vector<Vector> xs;
  std::vector<double> weights;
  Provenance provenance = Provenance::exact;
};

WeightedSupport support_for(const JointDistribution& dist, std::size_t pool_size, Rng& rng) {
  WeightedSupport s;
  if (dist.is_discrete()) {
    for (const Atom& a : dist.atoms()) {
      s.xs.push_back(a.x);
      s.weights.push_back(a.prob);
    }
    s.provenance = Provenance::exact;
    return s;
  }
  if (pool_size == 0) throw InvalidArgument("continuous family needs a non-empty unlabeled pool");
  s.xs = draw_pool(dist, pool_size, rng);
  s.weights.assign(pool_size, 1.0 / static_cast<double>(pool_size));
  s.provenance = Provenance::pool_estimated;
  return s;
}

void check_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw InvalidArgument(fmt::format("{}: length mismatch ({} vs {})", what, a, b));
}

}  // namespace

// ---------------------------------------------------------------------------
// Partition

Partition Partition::atoms(std::vector<Vector> points) {
  if (points.empty()) throw InvalidArgument("atom partition needs at least one point");
  std::vector<Predicate> cells;
  nlohmann::json pts = nlohmann::json::array();
  for (Vector& p : points) {
    pts.push_back(vec_json(p));
    cells.push_back([p = std::move(p)](const Vector& x) {
      if (x.size() != p.size()) return false;
      const double tol = 1e-12 * (1.0 + p.cwiseAbs().maxCoeff());
      return (x - p).cwiseAbs().maxCoeff() <= tol;
    });
  }
  return Partition(std::move(cells), {{"kind", "atoms"}, {"points", pts}});
}

Partition Partition::boxes(std::vector<std::pair<Vector, Vector>> boxes) {
  if (boxes.empty()) throw InvalidArgument("box partition needs at least one cell");
  std::vector<Predicate> cells;
  nlohmann::json js = nlohmann::json::array();
  for (auto& [lo, hi] : boxes) {
    if (lo.size() != hi.size()) throw InvalidArgument("box cell bounds differ in dimension");
    js.push_back({{"lo", vec_json(lo)}, {"hi", vec_json(hi)}});
    cells.push_back([lo = std::move(lo), hi = std::move(hi)](const Vector& x) {
      return x.size() == lo.size() && (x.array() >= lo.array()).all() && (x.array() < hi.array()).all();
    });
  }
  return Partition(std::move(cells), {{"kind", "boxes"}, {"cells", js}});
}

Partition Partition::intervals(int coord, std::vector<double> edges) {
  if (coord < 0) throw InvalidArgument("interval partition coordinate must be >= 0");
  if (edges.size() < 2) throw InvalidArgument("interval partition needs at least two edges");
  if (!std::is_sorted(edges.begin(), edges.end()) ||
      std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
    throw InvalidArgument("interval edges must be strictly increasing");
  }
  std::vector<Predicate> cells;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    cells.push_back([coord, lo = edges[i], hi = edges[i + 1]](const Vector& x) {
      if (coord >= x.size()) return false;
      return x[coord] >= lo && x[coord] < hi;
    });
  }
  return Partition(std::move(cells), {{"kind", "intervals"}, {"coord", coord}, {"edges", edges}});
}

Partition Partition::shells(std::vector<double> radii, const SecondMoment& sm) {
  if (radii.size() < 2) throw InvalidArgument("shell partition needs at least two radii");
  if (!std::is_sorted(radii.begin(), radii.end()) ||
      std::adjacent_find(radii.begin(), radii.end()) != radii.end() || radii.front() < 0.0) {
    throw InvalidArgument("shell radii must be nonnegative and strictly increasing");
  }
  auto inv = std::make_shared<const Matrix>(sm.sigma_inv());
  std::vector<Predicate> cells;
  for (std::size_t i = 0; i + 1 < radii.size(); ++i) {
    cells.push_back([inv, lo = radii[i], hi = radii[i + 1]](const Vector& x) {
      if (x.size() != inv->rows()) return false;
      const double r = std::sqrt(std::max(0.0, x.dot(*inv * x)));
      return r >= lo && r < hi;
    });
  }
  return Partition(std::move(cells), {{"kind", "shells"}, {"radii", radii}});
}

Partition Partition::regions(const JointDistribution& dist) {
  std::vector<Predicate> cells;
  for (const Region& r : dist.regions()) {
    cells.push_back([r](const Vector& x) { return r.contains(x); });
  }
  return Partition(std::move(cells), {{"kind", "regions"}});
}

Partition Partition::custom(std::vector<Predicate> cells, std::string label) {
  if (cells.empty()) throw InvalidArgument("partition needs at least one cell");
  return Partition(std::move(cells), {{"kind", "custom"}, {"label", std::move(label)}});
}

std::size_t Partition::match_count(const Vector& x) const {
  return static_cast<std::size_t>(
      std::count_if(cells_.begin(), cells_.end(), [&](const Predicate& c) { return c(x); }));
}

std::optional<std::size_t> Partition::cell_of(const Vector& x) const {
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    if (cells_[i](x)) return i;
  }
  return std::nullopt;
}

const PartitionStats& Partition::stats() const {
  if (!stats_) throw InvalidArgument("partition statistics have not been estimated");
  return *stats_;
}

void Partition::set_stats(PartitionStats stats) {
  const std::size_t k = size();
  if (stats.probs.size() != k || stats.thetas.size() != k || stats.sup_dual_sq.size() != k) {
    throw InvalidArgument("partition statistics do not match the number of cells");
  }
  if (stats.prob_se.empty()) stats.prob_se.assign(k, 0.0);
  stats_ = std::move(stats);
}

// ---------------------------------------------------------------------------
// WeightFunction

std::string_view to_string(WeightForm f) {
  switch (f) {
    case WeightForm::constant_one: return "constant-one";
    case WeightForm::leverage: return "leverage";
    case WeightForm::piecewise: return "piecewise";
    case WeightForm::phi_hat: return "phi-hat";
    case WeightForm::tabulated: return "tabulated";
  }
  return "?";
}

WeightFunction::WeightFunction(WeightForm form, Fn fn, double sup_phi, Vector a, double xi)
    : form_(form), fn_(std::move(fn)), sup_phi_(sup_phi), a_(std::move(a)), xi_(xi) {
  if (!fn_) throw InvalidArgument("weight function needs an evaluator");
  if (!(sup_phi_ > 0.0) || !std::isfinite(sup_phi_)) {
    throw InvalidArgument("weight function sup_phi must be finite and positive");
  }
}

WeightFunction WeightFunction::constant_one() {
  return WeightFunction(WeightForm::constant_one, [](const Vector&) { return 1.0; }, 1.0);
}

WeightFunction WeightFunction::piecewise(const Partition& partition, const Vector& a) {
  const auto& p = partition.probs();
  check_same_size(p.size(), static_cast<std::size_t>(a.size()), "piecewise weight");
  if ((a.array() <= 0.0).any()) throw InvalidArgument("piecewise weight requires a_i > 0");
  double norm = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) norm += p[i] * a[static_cast<Eigen::Index>(i)];
  const Vector values = a / norm;
  auto part = std::make_shared<const Partition>(partition);
  auto fn = [part, values](const Vector& x) {
    auto c = part->cell_of(x);
    return c ? values[static_cast<Eigen::Index>(*c)] : 0.0;
  };
  return WeightFunction(WeightForm::piecewise, std::move(fn), values.maxCoeff(), a, 0.0);
}

nlohmann::json WeightFunction::to_json() const {
  nlohmann::json j{{"form", std::string(to_string(form_))}, {"sup_phi", sup_phi_}, {"xi", xi_}};
  j["a"] = vec_json(a_);
  return j;
}

// ---------------------------------------------------------------------------
// Risk functionals

double psi_sq(const SecondMoment& sm, const JointDistribution& dist, const Vector& w_opt, const Vector& x) {
  const double bias = x.dot(w_opt) - dist.cond_mean(x);
  return sm.dual_norm_sq(x) * (bias * bias + dist.cond_var(x));
}

Estimate risk(const JointDistribution& dist, const SecondMoment& sm, const WeightFunction& phi,
              const Vector& w_opt, std::size_t n_mc, Rng& rng) {
  auto term = [&](const Vector& x) {
    const double f = phi(x);
    if (!(f > 0.0)) throw InvalidArgument("risk: weight function is not strictly positive on the support");
    return psi_sq(sm, dist, w_opt, x) / f;
  };
  if (dist.is_discrete()) {
    double r = 0.0;
    for (const Atom& a : dist.atoms()) r += a.prob * term(a.x);
    return {r, 0.0, Provenance::exact};
  }
  if (n_mc < 10000) throw InvalidArgument("risk: Monte-Carlo mode needs n_mc >= 1e4");
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t i = 0; i < n_mc; ++i) {
    const double v = term(dist.sample_x(rng));
    const double delta = v - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (v - mean);
  }
  const double var = m2 / static_cast<double>(n_mc - 1);
  return {mean, std::sqrt(var / static_cast<double>(n_mc)), Provenance::pool_estimated};
}

double risk_piecewise(std::span<const double> probs, std::span<const double> mu, std::span<const double> a) {
  check_same_size(probs.size(), mu.size(), "risk_piecewise");
  check_same_size(probs.size(), a.size(), "risk_piecewise");
  double pa = 0.0;
  double inv = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(a[i] > 0.0)) throw InvalidArgument(fmt::format("risk_piecewise: a[{}] must be positive", i));
    pa += probs[i] * a[i];
    inv += probs[i] * mu[i] / a[i];
  }
  return pa * inv;
}

double oracle_risk(std::span<const double> probs, std::span<const double> mu) {
  check_same_size(probs.size(), mu.size(), "oracle_risk");
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (mu[i] < 0.0) throw InvalidArgument("oracle_risk: mu must be nonnegative");
    s += probs[i] * std::sqrt(mu[i]);
  }
  return s * s;
}

StratumMoments stratum_moments(const JointDistribution& dist, const SecondMoment& sm,
                               const Partition& partition, const Vector& w_opt, std::size_t pool_size,
                               Rng& rng) {
  const std::size_t k = partition.size();
  StratumMoments out;
  out.mu.assign(k, 0.0);
  out.se.assign(k, 0.0);
  std::vector<double> mass(k, 0.0);
  std::vector<double> sq(k, 0.0);
  const WeightedSupport support = support_for(dist, pool_size, rng);
  out.provenance = support.provenance;
  for (std::size_t n = 0; n < support.xs.size(); ++n) {
    auto c = partition.cell_of(support.xs[n]);
    if (!c) throw InvalidArgument("stratum_moments: partition does not cover the support");
    const double v = psi_sq(sm, dist, w_opt, support.xs[n]);
    mass[*c] += support.weights[n];
    out.mu[*c] += support.weights[n] * v;
    sq[*c] += support.weights[n] * v * v;
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (mass[i] <= 0.0) throw InvalidArgument(fmt::format("stratum_moments: cell {} has zero mass", i));
    out.mu[i] /= mass[i];
    if (support.provenance == Provenance::pool_estimated) {
      const double count = mass[i] * static_cast<double>(support.xs.size());
      const double var = std::max(0.0, sq[i] / mass[i] - out.mu[i] * out.mu[i]);
      out.se[i] = count > 1.0 ? std::sqrt(var / (count - 1.0)) : 0.0;
    }
  }
  return out;
}

Partition estimate_partition_stats(const JointDistribution& dist, const SecondMoment& sm, Partition partition,
                                   std::size_t pool_size, Rng& rng) {
  const std::size_t k = partition.size();
  PartitionStats st;
  st.probs.assign(k, 0.0);
  st.thetas.assign(k, 0.0);
  st.sup_dual_sq.assign(k, 0.0);
  st.prob_se.assign(k, 0.0);

  auto locate = [&](const Vector& x) {
    std::optional<std::size_t> found;
    for (std::size_t i = 0; i < k; ++i) {
      if (!partition.contains(i, x)) continue;
      if (found) throw InvalidArgument(fmt::format("partition cells {} and {} overlap", *found, i));
      found = i;
    }
    if (!found) throw InvalidArgument("partition does not cover the support");
    return *found;
  };

  if (dist.is_discrete()) {
    for (const Atom& a : dist.atoms()) {
      const std::size_t c = locate(a.x);
      const double r = sm.dual_norm_sq(a.x);
      st.probs[c] += a.prob;
      st.thetas[c] += a.prob * r * r;
      st.sup_dual_sq[c] = std::max(st.sup_dual_sq[c], r);
    }
    st.provenance = Provenance::exact;
  } else {
    if (pool_size < 10000 * k) {
      throw InvalidArgument(fmt::format("partition stats need a pool of at least 1e4*K = {}", 10000 * k));
    }
    std::vector<std::vector<bool>> region_hit(k, std::vector<bool>(dist.regions().size(), false));
    for (std::size_t n = 0; n < pool_size; ++n) {
      const Vector x = dist.sample_x(rng);
      const std::size_t c = locate(x);
      const double r = sm.dual_norm_sq(x);
      st.probs[c] += 1.0;
      st.thetas[c] += r * r;
      if (auto reg = dist.region_of(x)) region_hit[c][*reg] = true;
    }
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t r = 0; r < region_hit[c].size(); ++r) {
        if (region_hit[c][r]) st.sup_dual_sq[c] = std::max(st.sup_dual_sq[c], dist.region_sup_dual_sq(r, sm));
      }
    }
    const double n = static_cast<double>(pool_size);
    for (std::size_t c = 0; c < k; ++c) {
      st.probs[c] /= n;
      st.thetas[c] *= 1.0 / n;
      st.prob_se[c] = std::sqrt(st.probs[c] * (1.0 - st.probs[c]) / n);
    }
    st.provenance = Provenance::pool_estimated;
    st.pool_size = pool_size;
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (st.probs[c] <= 0.0) throw InvalidArgument(fmt::format("partition cell {} has zero probability mass", c));
    st.thetas[c] /= st.probs[c];
  }
  partition.set_stats(std::move(st));
  return partition;
}

double fourth_moment(const Partition& partition) {
  const auto& p = partition.probs();
  const auto& t = partition.thetas();
  return std::inner_product(p.begin(), p.end(), t.begin(), 0.0);
}

ConstrainedOptimum optimal_phi_constrained(const std::function<double(const Vector&)>& psi,
                                           const SecondMoment& sm, const JointDistribution& dist, double xi,
                                           std::size_t pool_size, Rng& rng) {
  if (!(xi >= 0.0)) throw InvalidArgument("xi must be nonnegative");
  if (!(xi * sm.dim() < 1.0)) throw InvalidArgument("constraint set is empty: xi * d >= 1");

  const WeightedSupport support = support_for(dist, pool_size, rng);
  const std::size_t n = support.xs.size();
  std::vector<double> r(n);
  std::vector<double> ps(n);
  double e_r = 0.0;
  double e_psi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = sm.dual_norm_sq(support.xs[i]);
    ps[i] = psi(support.xs[i]);
    if (!(ps[i] >= 0.0)) throw InvalidArgument("psi must be nonnegative");
    e_r += support.weights[i] * r[i];
    e_psi += support.weights[i] * ps[i];
  }
  if (!(xi * e_r < 1.0)) throw InvalidArgument("constraint set is empty: xi * E||X||_*^2 >= 1");

  const double slack = support.provenance == Provenance::exact ? 1.0 : 1.01;
  auto sm_inv = std::make_shared<const Matrix>(sm.sigma_inv());
  auto dual = [sm_inv](const Vector& x) { return std::max(0.0, x.dot(*sm_inv * x)); };

  if (e_psi == 0.0) {
    // Every weight is optimal; keep the leverage floor and spread the rest.
    const double rest = 1.0 - xi * e_r;
    double sup = 0.0;
    for (double ri : r) sup = std::max(sup, xi * ri + rest);
    auto fn = [dual, xi, rest](const Vector& x) { return xi * dual(x) + rest; };
    return {WeightFunction(WeightForm::tabulated, fn, sup * slack, {}, xi), 0.0, 0.0, support.provenance};
  }

  auto normalization = [&](double lambda) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += support.weights[i] * std::max(xi * r[i], lambda * ps[i]);
    return s - 1.0;
  };

  // E[max(xi r, lambda psi)] is nondecreasing in lambda: negative at 0 and
  // nonnegative at 1/E[psi].
  double lo = 0.0;
  double hi = 1.0 / e_psi;
  bool converged = false;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double res = normalization(mid);
    if (res < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (std::abs(res) <= 1e-10 && hi - lo <= 1e-10 * hi) {
      converged = true;
      break;
    }
  }
  if (!converged && hi - lo > 1e-12 * hi) {
    throw Error("optimal_phi_constrained: threshold bisection did not converge in 200 iterations");
  }

  // Closed-form scale on the final split H = {lambda psi <= xi r}.
  double lambda = hi;
  double floor_mass = 0.0;
  double psi_mass = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (lambda * ps[i] <= xi * r[i]) {
      floor_mass += support.weights[i] * xi * r[i];
    } else {
      psi_mass += support.weights[i] * ps[i];
    }
  }
  if (psi_mass > 0.0) lambda = (1.0 - floor_mass) / psi_mass;

  double sup = 0.0;
  for (std::size_t i = 0; i < n; ++i) sup = std::max(sup, std::max(xi * r[i], lambda * ps[i]));
  auto fn = [dual, psi, xi, lambda](const Vector& x) { return std::max(xi * dual(x), lambda * psi(x)); };
  const double beta = xi / lambda;
  return {WeightFunction(WeightForm::tabulated, fn, sup * slack, {}, xi), beta, lambda, support.provenance};
}

}  // namespace strata_reg
