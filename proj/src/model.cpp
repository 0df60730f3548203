#include "strata_reg/model.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "strata_reg/error.hpp"

namespace strata_reg {

namespace {

void require_dim(const Vector& x, int d, const char* what) {
  if (x.size() != d) {
    throw InvalidArgument(fmt::format("{}: expected dimension {}, got {}", what, d, x.size()));
  }
}

bool all_finite(const Vector& v) { return v.allFinite(); }

// Max of a convex quadratic x^T A x over an axis-aligned box is attained at
// a vertex.
double max_quadratic_on_box(const Matrix& a, const Vector& lo, const Vector& hi) {
  const int d = static_cast<int>(lo.size());
  if (d > 24) throw InvalidArgument("box vertex enumeration limited to d <= 24");
  double best = 0.0;
  Vector v(d);
  const std::uint64_t corners = std::uint64_t{1} << d;
  for (std::uint64_t mask = 0; mask < corners; ++mask) {
    for (int k = 0; k < d; ++k) v[k] = (mask >> k) & 1U ? hi[k] : lo[k];
    best = std::max(best, v.dot(a * v));
  }
  return best;
}

// Smallest Euclidean norm over a box.
double min_norm_on_box(const Vector& lo, const Vector& hi) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < lo.size(); ++k) {
    const double c = std::clamp(0.0, lo[k], hi[k]);
    s += c * c;
  }
  return std::sqrt(s);
}

}  // namespace

std::string_view to_string(Provenance p) {
  return p == Provenance::exact ? "exact" : "pool-estimated";
}

std::string_view to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::none: return "none";
    case NoiseKind::gaussian: return "gaussian";
    case NoiseKind::uniform: return "uniform";
  }
  return "?";
}

std::string_view to_string(RegionShape s) {
  switch (s) {
    case RegionShape::atom: return "atom";
    case RegionShape::box: return "box";
    case RegionShape::gaussian: return "gaussian";
  }
  return "?";
}

double truncated_normal_variance(double bound) {
  const double mass = std::erf(bound / std::numbers::sqrt2);
  const double density = std::exp(-0.5 * bound * bound) / std::sqrt(2.0 * std::numbers::pi);
  return 1.0 - 2.0 * bound * density / mass;
}

// ---------------------------------------------------------------------------
// SecondMoment

SecondMoment::SecondMoment(Matrix sigma, Provenance provenance, std::size_t pool_size)
    : sigma_(std::move(sigma)), provenance_(provenance), pool_size_(pool_size) {
  if (sigma_.rows() == 0 || sigma_.rows() != sigma_.cols()) {
    throw InvalidArgument("second moment must be a non-empty square matrix");
  }
  if (!sigma_.allFinite()) throw SingularError("second moment has non-finite entries");
  sigma_ = 0.5 * (sigma_ + sigma_.transpose()).eval();
  Eigen::LLT<Matrix> llt(sigma_);
  if (llt.info() != Eigen::Success) throw SingularError("second moment is not positive definite");
  const auto d = sigma_.rows();
  sigma_inv_ = llt.solve(Matrix::Identity(d, d));
  sigma_inv_ = 0.5 * (sigma_inv_ + sigma_inv_.transpose()).eval();
  const double err = (sigma_ * sigma_inv_ - Matrix::Identity(d, d)).cwiseAbs().maxCoeff();
  if (!(err <= 1e-8)) {
    throw SingularError(fmt::format("second moment too ill-conditioned (inverse residual {:.3g})", err));
  }
}

double SecondMoment::dual_norm_sq(const Vector& x) const {
  require_dim(x, dim(), "dual_norm_sq");
  return std::max(0.0, x.dot(sigma_inv_ * x));
}

double SecondMoment::norm_sq(const Vector& x) const {
  require_dim(x, dim(), "norm_sq");
  return std::max(0.0, x.dot(sigma_ * x));
}

// ---------------------------------------------------------------------------
// Region

Region Region::atom(Vector at, double weight, double offset, NoiseKind noise, double noise_scale) {
  Region r;
  r.shape = RegionShape::atom;
  r.lo = at;
  r.hi = std::move(at);
  r.weight = weight;
  r.offset = offset;
  r.noise = noise;
  r.noise_scale = noise_scale;
  return r;
}

Region Region::box(Vector lo, Vector hi, double weight, double offset, NoiseKind noise,
                   double noise_scale) {
  if (lo.size() != hi.size()) throw InvalidArgument("box bounds differ in dimension");
  for (Eigen::Index k = 0; k < lo.size(); ++k) {
    if (!(lo[k] < hi[k])) throw InvalidArgument("box requires lo < hi in every coordinate");
  }
  Region r;
  r.shape = RegionShape::box;
  r.lo = std::move(lo);
  r.hi = std::move(hi);
  r.weight = weight;
  r.offset = offset;
  r.noise = noise;
  r.noise_scale = noise_scale;
  return r;
}

Region Region::gaussian(Vector center, Vector sd, double weight, double offset, NoiseKind noise,
                        double noise_scale) {
  if (center.size() != sd.size()) throw InvalidArgument("gaussian center/sd differ in dimension");
  if ((sd.array() <= 0.0).any()) throw InvalidArgument("gaussian region requires sd > 0");
  Region r;
  r.shape = RegionShape::gaussian;
  r.lo = center - kGaussianTruncation * sd;
  r.hi = center + kGaussianTruncation * sd;
  r.center = std::move(center);
  r.sd = std::move(sd);
  r.weight = weight;
  r.offset = offset;
  r.noise = noise;
  r.noise_scale = noise_scale;
  return r;
}

bool Region::contains(const Vector& x) const {
  if (x.size() != lo.size()) return false;
  if (shape == RegionShape::atom) {
    const double tol = 1e-12 * (1.0 + lo.cwiseAbs().maxCoeff());
    return (x - lo).cwiseAbs().maxCoeff() <= tol;
  }
  return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
}

Vector Region::mean() const {
  switch (shape) {
    case RegionShape::atom: return lo;
    case RegionShape::box: return 0.5 * (lo + hi);
    case RegionShape::gaussian: return center;
  }
  return lo;
}

Matrix Region::second_moment() const {
  const Vector m = mean();
  Matrix s = m * m.transpose();
  switch (shape) {
    case RegionShape::atom:
      break;
    case RegionShape::box:
      for (Eigen::Index k = 0; k < lo.size(); ++k) {
        s(k, k) = (lo[k] * lo[k] + lo[k] * hi[k] + hi[k] * hi[k]) / 3.0;
      }
      break;
    case RegionShape::gaussian: {
      const double v = truncated_normal_variance(kGaussianTruncation);
      for (Eigen::Index k = 0; k < lo.size(); ++k) s(k, k) += sd[k] * sd[k] * v;
      break;
    }
  }
  return s;
}

Vector Region::draw(Rng& rng) const {
  switch (shape) {
    case RegionShape::atom:
      return lo;
    case RegionShape::box: {
      Vector x(lo.size());
      for (Eigen::Index k = 0; k < lo.size(); ++k) x[k] = lo[k] + (hi[k] - lo[k]) * rng.uniform();
      return x;
    }
    case RegionShape::gaussian: {
      Vector x(lo.size());
      for (Eigen::Index k = 0; k < lo.size(); ++k) {
        x[k] = center[k] + sd[k] * rng.truncated_normal(kGaussianTruncation);
      }
      return x;
    }
  }
  return lo;
}

double Region::noise_variance() const {
  switch (noise) {
    case NoiseKind::none: return 0.0;
    case NoiseKind::gaussian:
      return noise_scale * noise_scale * truncated_normal_variance(kGaussianTruncation);
    case NoiseKind::uniform: return noise_scale * noise_scale;
  }
  return 0.0;
}

double Region::noise_bound() const {
  switch (noise) {
    case NoiseKind::none: return 0.0;
    case NoiseKind::gaussian: return kGaussianTruncation * noise_scale;
    case NoiseKind::uniform: return std::sqrt(3.0) * noise_scale;
  }
  return 0.0;
}

double Region::draw_noise(Rng& rng) const {
  switch (noise) {
    case NoiseKind::none: return 0.0;
    case NoiseKind::gaussian: return noise_scale * rng.truncated_normal(kGaussianTruncation);
    case NoiseKind::uniform: return noise_scale * std::sqrt(3.0) * (2.0 * rng.uniform() - 1.0);
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// JointDistribution

JointDistribution::JointDistribution(MixtureSpec spec, std::string name)
    : spec_(std::move(spec)),
      name_(std::move(name)),
      labels_(std::make_unique<std::atomic<std::uint64_t>>(0)) {
  const int d = dim();
  if (d <= 0) throw InvalidArgument("distribution dimension must be positive");
  if (spec_.regions.empty()) throw InvalidArgument("mixture needs at least one region");
  if (!all_finite(spec_.w_star)) throw InvalidArgument("w_star has non-finite entries");

  truth_.sigma = Matrix::Zero(d, d);
  truth_.exy = Vector::Zero(d);
  double acc = 0.0;
  for (const Region& r : spec_.regions) {
    if (r.dim() != d) throw InvalidArgument("region dimension does not match w_star");
    const Matrix m2 = r.second_moment();
    truth_.sigma += r.weight * m2;
    truth_.exy += r.weight * (m2 * spec_.w_star + r.offset * r.mean());
    acc += r.weight;
    cumulative_.push_back(acc);
  }
  const SecondMoment sm(truth_.sigma, Provenance::exact);
  truth_.sigma = sm.sigma();
  truth_.w_opt = sm.sigma_inv() * truth_.exy;
  if (spec_.expose_exact_moments) exposed_ = truth_;

  sup_dual_sq_ = sup_dual_sq(sm);

  // Residual bound: |x^T(w* - w_opt) + offset + noise| / ||x||_*.
  bool realizable = true;
  for (const Region& r : spec_.regions) {
    realizable = realizable && r.offset == 0.0 && r.noise == NoiseKind::none;
  }
  if (realizable) {
    noise_bound_b_ = 0.0;
  } else {
    const Vector u = spec_.w_star - truth_.w_opt;
    const double u_sigma = std::sqrt(sm.norm_sq(u));
    const double lambda_max =
        Eigen::SelfAdjointEigenSolver<Matrix>(sm.sigma(), Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
    double b = 0.0;
    for (const Region& r : spec_.regions) {
      const double extra = std::abs(r.offset) + r.noise_bound();
      double br = 0.0;
      if (r.shape == RegionShape::atom) {
        const double dn = std::sqrt(sm.dual_norm_sq(r.lo));
        const double num = std::abs(r.lo.dot(u) + r.offset) + r.noise_bound();
        if (dn == 0.0) {
          if (num > 0.0) throw InvalidArgument("atom at the origin carries a nonzero residual");
        } else {
          br = num / dn;
        }
      } else if (extra == 0.0) {
        br = u_sigma;
      } else {
        const double min_dual = min_norm_on_box(r.lo, r.hi) / std::sqrt(lambda_max);
        if (min_dual <= 0.0) {
          throw InvalidArgument(
              "region support touches the origin while carrying offset/noise; residual bound b is infinite");
        }
        br = u_sigma + extra / min_dual;
      }
      b = std::max(b, br);
    }
    noise_bound_b_ = b;
  }
}

double JointDistribution::region_sup_dual_sq(std::size_t r, const SecondMoment& sm) const {
  const Region& reg = spec_.regions.at(r);
  if (reg.shape == RegionShape::atom) return sm.dual_norm_sq(reg.lo);
  return max_quadratic_on_box(sm.sigma_inv(), reg.lo, reg.hi);
}

double JointDistribution::sup_dual_sq(const SecondMoment& sm) const {
  double s = 0.0;
  for (std::size_t r = 0; r < spec_.regions.size(); ++r) {
    if (spec_.regions[r].weight > 0.0) s = std::max(s, region_sup_dual_sq(r, sm));
  }
  return s;
}

Vector JointDistribution::sample_x(Rng& rng) const {
  const double u = rng.uniform() * cumulative_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  std::size_t r = static_cast<std::size_t>(std::distance(cumulative_.begin(), it));
  r = std::min(r, spec_.regions.size() - 1);
  return spec_.regions[r].draw(rng);
}

std::optional<std::size_t> JointDistribution::region_of(const Vector& x) const {
  for (std::size_t r = 0; r < spec_.regions.size(); ++r) {
    if (spec_.regions[r].contains(x)) return r;
  }
  return std::nullopt;
}

std::size_t JointDistribution::region_index(const Vector& x) const {
  require_dim(x, dim(), "distribution");
  auto r = region_of(x);
  if (!r) throw InvalidArgument("point lies outside the support of the distribution");
  return *r;
}

double JointDistribution::sample_y(const Vector& x, Rng& rng) const {
  const Region& r = spec_.regions[region_index(x)];
  labels_->fetch_add(1, std::memory_order_relaxed);
  return x.dot(spec_.w_star) + r.offset + r.draw_noise(rng);
}

double JointDistribution::cond_mean(const Vector& x) const {
  const Region& r = spec_.regions[region_index(x)];
  return x.dot(spec_.w_star) + r.offset;
}

double JointDistribution::cond_var(const Vector& x) const {
  return spec_.regions[region_index(x)].noise_variance();
}

bool JointDistribution::is_discrete() const {
  return std::all_of(spec_.regions.begin(), spec_.regions.end(),
                     [](const Region& r) { return r.shape == RegionShape::atom; });
}

std::vector<Atom> JointDistribution::atoms() const {
  std::vector<Atom> out;
  if (!is_discrete()) return out;
  for (std::size_t r = 0; r < spec_.regions.size(); ++r) {
    if (spec_.regions[r].weight > 0.0) out.push_back({spec_.regions[r].lo, spec_.regions[r].weight, r});
  }
  return out;
}

JointDistribution JointDistribution::without_exact_moments() const {
  MixtureSpec s = spec_;
  s.expose_exact_moments = false;
  return JointDistribution(std::move(s), name_);
}

// ---------------------------------------------------------------------------
// Families

void LowerBoundParams::validate() const {
  if (!(sigma > 0.0)) throw InvalidArgument("lower-bound family requires sigma > 0");
  if (!(alpha > 1.0 / std::numbers::sqrt2)) {
    throw InvalidArgument(fmt::format("lower-bound family requires alpha > 1/sqrt(2), got {}", alpha));
  }
  if (!(std::abs(eta) <= sigma / alpha)) {
    throw InvalidArgument(fmt::format("lower-bound family requires |eta| <= sigma/alpha, got {}", eta));
  }
}

double LowerBoundParams::beta() const {
  const double pp = p();
  return std::sqrt((1.0 - pp * alpha * alpha) / (1.0 - pp));
}

JointDistribution make_lower_bound_family(const LowerBoundParams& params) {
  params.validate();
  MixtureSpec spec;
  spec.w_star = Vector::Zero(1);
  const double p = params.p();
  spec.regions.push_back(Region::atom(Vector::Constant(1, params.alpha), p, params.alpha * params.eta,
                                      NoiseKind::gaussian, params.sigma));
  spec.regions.push_back(Region::atom(Vector::Constant(1, params.beta()), 1.0 - p));
  return JointDistribution(std::move(spec), "lower_bound");
}

JointDistribution make_heteroscedastic_family(MixtureSpec spec, std::string name) {
  const auto& regions = spec.regions;
  if (regions.empty()) throw InvalidArgument("mixture needs at least one region");
  double total = 0.0;
  for (const Region& r : regions) {
    if (!(r.weight >= 0.0)) throw InvalidArgument("region weights must be nonnegative");
    if (!(r.noise_scale >= 0.0) || !std::isfinite(r.noise_scale)) {
      throw InvalidArgument("noise scale must be finite and nonnegative");
    }
    total += r.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw InvalidArgument(fmt::format("region weights sum to {}, expected 1", total));
  }
  for (std::size_t i = 0; i < regions.size(); ++i) {
    for (std::size_t j = i + 1; j < regions.size(); ++j) {
      const Region& a = regions[i];
      const Region& b = regions[j];
      if (a.dim() != b.dim()) throw InvalidArgument("regions differ in dimension");
      bool overlap = false;
      if (a.shape == RegionShape::atom && b.shape == RegionShape::atom) {
        overlap = a.contains(b.lo);
      } else if (a.shape == RegionShape::atom) {
        overlap = b.contains(a.lo);
      } else if (b.shape == RegionShape::atom) {
        overlap = a.contains(b.lo);
      } else {
        overlap = ((a.lo.cwiseMax(b.lo).array()) < (a.hi.cwiseMin(b.hi).array())).all();
      }
      if (overlap) throw InvalidArgument(fmt::format("regions {} and {} overlap", i, j));
    }
  }
  return JointDistribution(std::move(spec), std::move(name));
}

std::vector<Vector> draw_pool(const JointDistribution& dist, std::size_t n, Rng& rng) {
  std::vector<Vector> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pool.push_back(dist.sample_x(rng));
  return pool;
}

SecondMoment estimate_second_moment(const JointDistribution& dist, std::size_t pool_size, Rng& rng) {
  const int d = dist.dim();
  if (pool_size < static_cast<std::size_t>(10 * d * d)) {
    throw InvalidArgument(fmt::format("pool size {} below 10*d^2 = {}", pool_size, 10 * d * d));
  }
  if (const auto& em = dist.exact_moments()) return SecondMoment(em->sigma, Provenance::exact);

  Matrix acc = Matrix::Zero(d, d);
  for (std::size_t i = 0; i < pool_size; ++i) {
    const Vector x = dist.sample_x(rng);
    acc.selfadjointView<Eigen::Lower>().rankUpdate(x);
  }
  Matrix sigma = acc.selfadjointView<Eigen::Lower>();
  sigma /= static_cast<double>(pool_size);
  sigma = 0.5 * (sigma + sigma.transpose()).eval();
  const double trace = sigma.trace();
  if (!(trace > 0.0) || !std::isfinite(trace)) {
    throw SingularError("estimated second moment is singular beyond ridge repair");
  }
  const double min_eig =
      Eigen::SelfAdjointEigenSolver<Matrix>(sigma, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  const double ridge = 1e-12 * trace / d;
  if (min_eig <= ridge) sigma.diagonal().array() += ridge;
  return SecondMoment(std::move(sigma), Provenance::pool_estimated, pool_size);
}

Predictor optimal_predictor(const JointDistribution& dist) {
  const auto& em = dist.exact_moments();
  if (!em) {
    throw InvalidArgument("optimal_predictor: no closed-form moments; use the oracle-pool overload");
  }
  return Predictor{em->w_opt};
}

Predictor optimal_predictor(const JointDistribution& dist, const SecondMoment& sm, std::size_t pool_size,
                            Rng& rng) {
  if (dist.exact_moments()) return optimal_predictor(dist);
  if (pool_size == 0) throw InvalidArgument("oracle pool must be non-empty");
  Vector exy = Vector::Zero(dist.dim());
  for (std::size_t i = 0; i < pool_size; ++i) {
    const Vector x = dist.sample_x(rng);
    exy += x * dist.cond_mean(x);
  }
  exy /= static_cast<double>(pool_size);
  return Predictor{sm.sigma_inv() * exy};
}

double expected_loss(const JointDistribution& dist, const Vector& w) {
  require_dim(w, dist.dim(), "expected_loss");
  // L(w) = E[(x^T w - m(x))^2] + E[v(x)], expanded region by region.
  const Vector& ws = dist.spec().w_star;
  double loss = 0.0;
  for (const Region& r : dist.regions()) {
    const Matrix m2 = r.second_moment();
    const Vector diff = w - ws;
    loss += r.weight * (diff.dot(m2 * diff) - 2.0 * r.offset * diff.dot(r.mean()) + r.offset * r.offset +
                        r.noise_variance());
  }
  return loss;
}

}  // namespace strata_reg
