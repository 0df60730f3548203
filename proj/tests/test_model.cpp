#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <thread>
#include <vector>

#include "fixtures.hpp"
#include "strata_reg/base_learner.hpp"
#include "strata_reg/error.hpp"
#include "strata_reg/model.hpp"

using namespace strata_reg;
using fixtures::vec;

namespace {

// Hand formulas for the two-atom family (sigma, alpha, eta).
struct LowerBoundOracle {
  double sigma, alpha, eta;
  double p() const { return 1.0 / (2 * alpha * alpha); }
  double beta() const { return std::sqrt((1 - p() * alpha * alpha) / (1 - p())); }
  double w_opt() const { return p() * alpha * alpha * eta; }
  double mu_alpha(double noise_var) const {
    const double r = alpha * w_opt() - alpha * eta;
    return alpha * alpha * (r * r + noise_var);
  }
  double mu_beta() const {
    const double r = beta() * w_opt();
    return beta() * beta() * r * r;
  }
};

double mc_mean_dual(const JointDistribution& dist, const SecondMoment& sm, std::size_t n, Rng& rng, double* se) {
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = sm.dual_norm_sq(dist.sample_x(rng));
    const double d = v - mean;
    mean += d / static_cast<double>(i + 1);
    m2 += d * (v - mean);
  }
  *se = std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n));
  return mean;
}

}  // namespace

TEST_CASE("rng streams are reproducible and split streams differ") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c = Rng(7).split(1), d = Rng(7).split(2);
  CHECK(c.next_u64() != d.next_u64());
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  Rng e(3);
  for (int i = 0; i < 1000; ++i) {
    const double u = e.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(std::abs(e.truncated_normal(2.0)) <= 2.0);
    CHECK(e.below(5) < 5u);
  }
}

TEST_CASE("lower-bound family closed forms") {
  const LowerBoundOracle o{1.0, 5.0, 0.1};
  const JointDistribution dist = make_lower_bound_family({1.0, 5.0, 0.1});
  REQUIRE(dist.exact_moments().has_value());
  const auto& em = *dist.exact_moments();
  CHECK(o.p() == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(o.beta() == doctest::Approx(5.0 / 7.0).epsilon(1e-15));
  CHECK(em.sigma(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(em.w_opt[0] == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(optimal_predictor(dist).w[0] == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(dist.dim() == 1);

  // Conditional residual moments at each atom.
  const double tf = truncated_normal_variance(kGaussianTruncation);
  CHECK(tf < 1.0);
  CHECK(tf > 1.0 - 1e-7);
  const SecondMoment sm(em.sigma, Provenance::exact);
  const Vector xa = vec({5.0}), xb = vec({5.0 / 7.0});
  const double mu_a = sm.dual_norm_sq(xa) * (std::pow(xa[0] * 0.05 - dist.cond_mean(xa), 2) + dist.cond_var(xa));
  const double mu_b = sm.dual_norm_sq(xb) * (std::pow(xb[0] * 0.05 - dist.cond_mean(xb), 2) + dist.cond_var(xb));
  CHECK(mu_a == doctest::Approx(o.mu_alpha(tf)).epsilon(1e-13));
  CHECK(mu_a == doctest::Approx(26.5625).epsilon(1e-6));
  CHECK(mu_b == doctest::Approx(o.mu_beta()).epsilon(1e-13));
  CHECK(mu_b == doctest::Approx(6.5077e-4).epsilon(1e-4));
  CHECK(dist.noise_bound_b() > 0.0);
}

TEST_CASE("lower-bound family edge cases") {
  const JointDistribution flat = make_lower_bound_family({1.0, 5.0, 0.0});
  CHECK(optimal_predictor(flat).w[0] == doctest::Approx(0.0));
  CHECK_THROWS_AS(make_lower_bound_family({1.0, 0.5, 0.1}), InvalidArgument);
  CHECK_THROWS_AS(make_lower_bound_family({-1.0, 5.0, 0.1}), InvalidArgument);
}

TEST_CASE("lower-bound family empirical moments and loss minimizer") {
  const JointDistribution dist = make_lower_bound_family({});
  Rng rng(11);
  const std::size_t n = 1'000'000;
  std::vector<double> xs(n), ys(n);
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vector x = dist.sample_x(rng);
    xs[i] = x[0];
    ys[i] = dist.sample_y(x, rng);
    const double v = x[0] * x[0];
    const double d = v - mean;
    mean += d / static_cast<double>(i + 1);
    m2 += d * (v - mean);
  }
  const double se = std::sqrt(m2 / (n - 1) / n);
  CHECK(std::abs(mean - 1.0) <= 3 * se);
  CHECK(dist.labels_drawn() == n);

  // Grid search on the empirical loss.
  const double step = 0.005;
  double best_w = 0.0, best = INFINITY;
  for (int g = -40; g <= 60; ++g) {
    const double w = g * step;
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) loss += std::pow(xs[i] * w - ys[i], 2);
    if (loss < best) {
      best = loss;
      best_w = w;
    }
  }
  CHECK(std::abs(best_w - 0.05) <= step + 1e-12);
}

TEST_CASE("trace identity holds by Monte Carlo for several families") {
  Rng rng(5);
  for (const JointDistribution& dist : {fixtures::boxes3(), fixtures::gauss8()}) {
    const SecondMoment sm(dist.exact_moments()->sigma, Provenance::exact);
    double se = 0.0;
    const double mean = mc_mean_dual(dist, sm, 200'000, rng, &se);
    CHECK(std::abs(mean - dist.dim()) <= 3 * se);
  }
}

TEST_CASE("optimal predictor satisfies first-order optimality") {
  for (const JointDistribution& dist : {fixtures::boxes3(), fixtures::gauss8(), fixtures::atoms5()}) {
    const auto& em = *dist.exact_moments();
    const Vector w = optimal_predictor(dist).w;
    CHECK((em.sigma * w - em.exy).norm() <= 1e-8);
  }
}

TEST_CASE("pool-estimated moments approach the closed forms") {
  const JointDistribution exact = fixtures::boxes3();
  const JointDistribution hidden = exact.without_exact_moments();
  CHECK_FALSE(hidden.exact_moments().has_value());
  Rng rng(8);
  const SecondMoment sm = estimate_second_moment(hidden, 400'000, rng);
  CHECK(sm.provenance() == Provenance::pool_estimated);
  CHECK((sm.sigma() - exact.exact_moments()->sigma).cwiseAbs().maxCoeff() < 0.03);
  const Vector w = optimal_predictor(hidden, sm, 400'000, rng).w;
  CHECK((w - exact.exact_moments()->w_opt).norm() < 0.02);
  CHECK_THROWS_AS(estimate_second_moment(hidden, 10, rng), InvalidArgument);
}

TEST_CASE("two atoms with noise scales (1, 0)") {
  MixtureSpec s;
  s.w_star = vec({0.3, 0.7});
  s.regions = {Region::atom(vec({1, 0}), 0.4, 0.0, NoiseKind::gaussian, 1.0),
               Region::atom(vec({0, 1}), 0.6, 0.0, NoiseKind::none, 0.0)};
  const JointDistribution dist = make_heteroscedastic_family(std::move(s));
  const auto& em = *dist.exact_moments();
  CHECK(em.sigma(0, 0) == doctest::Approx(0.4));
  CHECK(em.sigma(1, 1) == doctest::Approx(0.6));
  CHECK(em.sigma(0, 1) == doctest::Approx(0.0));
  CHECK((em.w_opt - vec({0.3, 0.7})).norm() < 1e-12);
  const SecondMoment sm(em.sigma, Provenance::exact);
  // mu at e1 = (1/0.4) * Var, at e2 = 0.
  const Vector e1 = vec({1, 0}), e2 = vec({0, 1});
  CHECK(sm.dual_norm_sq(e1) * dist.cond_var(e1) ==
        doctest::Approx(truncated_normal_variance(kGaussianTruncation) / 0.4).epsilon(1e-12));
  CHECK(dist.cond_var(e2) == 0.0);
}

TEST_CASE("heteroscedastic family validation") {
  MixtureSpec bad_weights;
  bad_weights.w_star = vec({1.0});
  bad_weights.regions = {Region::atom(vec({1}), 0.5), Region::atom(vec({2}), 0.4)};
  CHECK_THROWS_AS(make_heteroscedastic_family(bad_weights), InvalidArgument);

  MixtureSpec overlap;
  overlap.w_star = vec({1.0, 0.0});
  overlap.regions = {Region::box(vec({0, 0}), vec({2, 2}), 0.5), Region::box(vec({1, 1}), vec({3, 3}), 0.5)};
  CHECK_THROWS_AS(make_heteroscedastic_family(overlap), InvalidArgument);

  CHECK_THROWS_AS(Region::box(vec({1}), vec({0}), 1.0), InvalidArgument);

  const JointDistribution flat = fixtures::realizable2();
  CHECK(flat.noise_bound_b() == 0.0);
}

TEST_CASE("second moment validation and norms") {
  Matrix s(2, 2);
  s << 2, 0, 0, 0.5;
  const SecondMoment sm(s, Provenance::exact);
  CHECK(sm.dual_norm_sq(vec({1, 1})) == doctest::Approx(0.5 + 2.0));
  CHECK(sm.norm_sq(vec({1, 1})) == doctest::Approx(2.5));
  CHECK_THROWS_AS(sm.dual_norm_sq(vec({1})), InvalidArgument);
  Matrix bad(2, 2);
  bad << 1, 2, 2, 1;
  CHECK_THROWS_AS(SecondMoment(bad, Provenance::exact), SingularError);
}

TEST_CASE("expected loss matches a Monte-Carlo estimate") {
  const JointDistribution dist = fixtures::boxes3();
  const Vector w = vec({0.8, -0.4, 0.5});
  Rng rng(21);
  const std::size_t n = 200'000;
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vector x = dist.sample_x(rng);
    const double v = std::pow(x.dot(w) - dist.sample_y(x, rng), 2);
    const double d = v - mean;
    mean += d / static_cast<double>(i + 1);
    m2 += d * (v - mean);
  }
  CHECK(std::abs(mean - expected_loss(dist, w)) <= 3 * std::sqrt(m2 / (n - 1) / n));
}

TEST_CASE("label counter is exact under concurrent use") {
  const JointDistribution dist = fixtures::boxes3();
  dist.reset_label_counter();
  std::vector<std::thread> workers;
  for (int t = 0; t < 4; ++t) {
    workers.emplace_back([&dist, t] {
      Rng rng(static_cast<std::uint64_t>(t));
      for (int i = 0; i < 5000; ++i) dist.sample_y(dist.sample_x(rng), rng);
    });
  }
  for (auto& w : workers) w.join();
  CHECK(dist.labels_drawn() == 20000u);
}

TEST_CASE("noise bound covers every realized residual") {
  for (const JointDistribution& dist : {fixtures::boxes3(), fixtures::atoms5()}) {
    const Vector w = optimal_predictor(dist).w;
    const SecondMoment sm(dist.exact_moments()->sigma, Provenance::exact);
    const double b = dist.noise_bound_b();
    Rng rng(4);
    for (int i = 0; i < 20000; ++i) {
      const Vector x = dist.sample_x(rng);
      const double r = x.dot(w) - dist.sample_y(x, rng);
      CHECK(r * r <= b * b * sm.dual_norm_sq(x) * (1 + 1e-9));
    }
  }
}
