#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fixtures.hpp"
#include "strata_reg/active.hpp"
#include "strata_reg/base_learner.hpp"
#include "strata_reg/error.hpp"
#include "strata_reg/experiments.hpp"

using namespace strata_reg;
using fixtures::vec;

namespace {

struct Setup {
  JointDistribution dist;
  SecondMoment sm;
  Partition part;
  Vector w_opt;
};

Setup exact_setup(JointDistribution dist, std::size_t pool = 0) {
  SecondMoment sm(dist.exact_moments()->sigma, Provenance::exact);
  Rng rng(123);
  Partition part = estimate_partition_stats(dist, sm, Partition::regions(dist), pool, rng);
  Vector w = optimal_predictor(dist).w;
  return {std::move(dist), std::move(sm), std::move(part), std::move(w)};
}

}  // namespace

TEST_CASE("stage plan rounding") {
  const StagePlan p = make_stage_plan(2000, 2, 0.2);
  const auto half = static_cast<std::size_t>(std::floor(std::pow(2000.0, 0.8) / 2));
  CHECK(half == 218);
  CHECK(p.m1 == 218);
  CHECK(p.m2 == 218);
  CHECK(p.m3 == 1564);
  CHECK(p.t == 109);
  CHECK(p.labels_planned() == 2000);
  CHECK(p.delta1 + p.delta2 + p.delta3 == doctest::Approx(0.2).epsilon(1e-15));

  const StagePlan q = make_stage_plan(2000, 3, 0.1);
  CHECK(q.t == 72);
  CHECK(q.labels_planned() == 218 + 216 + 1564);
  for (std::size_t m : {50u, 999u, 12345u, 100000u}) {
    for (std::size_t k : {1u, 2u, 5u, 7u}) {
      const StagePlan r = make_stage_plan(m, k, 0.1);
      CHECK(r.labels_planned() <= m);
      CHECK(r.m1 + r.m2 + r.m3 == m);
      CHECK(r.m2 - r.t * k < k);
    }
  }
  CHECK_THROWS_AS(make_stage_plan(100, 0, 0.1), InvalidArgument);
}

TEST_CASE("budget gate formula") {
  const LearnerConstants k;
  const double inner = 5 * std::log(std::exp(1.0) * 5) * std::log(2 / 0.1);
  CHECK(budget_gate(5, 0.1, k) == static_cast<std::size_t>(std::ceil(std::pow(inner, 1.25))));
  CHECK_THROWS_AS(budget_gate(5, 0.0, k), InvalidArgument);
}

TEST_CASE("tiny budget in d = 5 is a gate violation") {
  MixtureSpec s;
  s.w_star = Vector::Ones(5);
  Vector lo = Vector::Constant(5, -1.0), hi = Vector::Constant(5, 1.0);
  lo[0] = 1.0;
  hi[0] = 2.0;
  s.regions = {Region::box(lo, hi, 1.0, 0.0, NoiseKind::uniform, 0.5)};
  Setup st = exact_setup(make_heteroscedastic_family(std::move(s)), 100'000);
  ActiveConfig cfg;
  cfg.m = 10;
  Rng rng(1);
  CHECK_THROWS_AS(active_regression(st.dist, st.sm, st.part, cfg, rng), GateError);
}

TEST_CASE("noise-free data is recovered exactly") {
  Setup st = exact_setup(fixtures::realizable2(), 100'000);
  ActiveConfig cfg;
  cfg.m = 2000;
  Rng rng(2);
  const ActiveResult res = active_regression(st.dist, st.sm, st.part, cfg, rng);
  CHECK(excess_loss(st.sm, st.w_opt, res.w_hat.w) <= 1e-10);
  CHECK(res.diagnostics.Delta == 0.0);
  CHECK(res.diagnostics.gamma == 0.0);

  MixtureSpec atoms;
  atoms.w_star = vec({1.0, 2.0});
  atoms.regions = {Region::atom(vec({1, 0}), 0.5), Region::atom(vec({0, 1}), 0.3), Region::atom(vec({1, 1}), 0.2)};
  Setup at = exact_setup(make_heteroscedastic_family(std::move(atoms)));
  const ActiveResult ra = active_regression(at.dist, at.sm, at.part, cfg, rng);
  CHECK(excess_loss(at.sm, at.w_opt, ra.w_hat.w) <= 1e-10);
}

TEST_CASE("labels consumed follow the stage plan exactly") {
  Setup st = exact_setup(fixtures::boxes3(), 200'000);
  for (std::size_t m : {1500u, 4000u}) {
    ActiveConfig cfg;
    cfg.m = m;
    st.dist.reset_label_counter();
    Rng rng(m);
    const ActiveResult res = active_regression(st.dist, st.sm, st.part, cfg, rng);
    const StageDiagnostics& d = res.diagnostics;
    CHECK(d.labels_stage1 == d.plan.m1);
    CHECK(d.labels_stage2 == d.plan.t * d.plan.cells);
    CHECK(d.labels_stage3 == d.plan.m3);
    CHECK(d.labels_total() == d.plan.labels_planned());
    CHECK(st.dist.labels_drawn() == d.labels_total());
    CHECK(d.labels_total() <= m);
    const auto j = d.to_json();
    CHECK(j["labels"]["total"] == d.labels_total());
    CHECK(j["mu_tilde"].size() == 3);
  }
}

TEST_CASE("active regression is deterministic for a seed") {
  Setup st = exact_setup(fixtures::boxes3(), 200'000);
  ActiveConfig cfg;
  cfg.m = 3000;
  Rng a(9), b(9), c(10);
  const Vector wa = active_regression(st.dist, st.sm, st.part, cfg, a).w_hat.w;
  CHECK(wa == active_regression(st.dist, st.sm, st.part, cfg, b).w_hat.w);
  CHECK(wa != active_regression(st.dist, st.sm, st.part, cfg, c).w_hat.w);
}

TEST_CASE("b override and plain least squares stage learner") {
  Setup st = exact_setup(make_lower_bound_family({}));
  ActiveConfig cfg;
  cfg.m = 2000;
  cfg.b = 3.0;
  cfg.base.mode = BaseMode::plain_ols;
  Rng rng(3);
  const ActiveResult res = active_regression(st.dist, st.sm, st.part, cfg, rng);
  CHECK(res.diagnostics.b == 3.0);
  CHECK(std::isfinite(res.w_hat.w[0]));
}

TEST_CASE("stage-1 crude bound: measured constant") {
  Setup st = exact_setup(make_lower_bound_family({}));
  const double l_opt = expected_loss(st.dist, st.w_opt);
  ActiveConfig cfg;
  cfg.m = 2000;
  cfg.delta = 0.2;
  std::vector<double> scaled;
  for (std::uint64_t trial = 0; trial < 200; ++trial) {
    Rng rng(derive_seed(77, {trial}));
    const ActiveResult res = active_regression(st.dist, st.sm, st.part, cfg, rng);
    const StagePlan& p = res.diagnostics.plan;
    const double err = excess_loss(st.sm, st.w_opt, res.diagnostics.v_hat);
    scaled.push_back(err * p.m1 / (st.dist.dim() * l_opt * std::log(1 / p.delta1)));
  }
  const double c_measured = quantile(scaled, 1 - 0.05);
  MESSAGE("stage-1 constant at the 1 - delta1 quantile: " << c_measured);
  CHECK(std::isfinite(c_measured));
  CHECK(c_measured > 0.0);
}

TEST_CASE("phi-hat risk dominates the oracle and approaches it as m grows") {
  Setup st = exact_setup(make_lower_bound_family({}));
  Rng mu_rng(5);
  const StratumMoments mu = stratum_moments(st.dist, st.sm, st.part, st.w_opt, 0, mu_rng);
  const double oracle = oracle_risk(st.part.probs(), mu.mu);
  std::vector<double> medians;
  for (std::size_t m : {1000u, 10'000u, 100'000u}) {
    ActiveConfig cfg;
    cfg.m = m;
    cfg.delta = 0.2;
    std::vector<double> risks;
    for (std::uint64_t trial = 0; trial < 30; ++trial) {
      Rng rng(derive_seed(5, {m, trial}));
      const ActiveResult res = active_regression(st.dist, st.sm, st.part, cfg, rng);
      const WeightFunction phi = build_phi_hat(res.diagnostics.a_hat, st.part, res.diagnostics.xi, st.sm);
      Rng r2(1);
      const double r = risk(st.dist, st.sm, phi, st.w_opt, 0, r2).value;
      CHECK(r >= oracle * (1 - 1e-12));
      risks.push_back(r);
    }
    medians.push_back(median(risks));
  }
  MESSAGE("median risk(phi-hat): " << medians[0] << " " << medians[1] << " " << medians[2] << " oracle " << oracle);
  CHECK(medians[1] < medians[0]);
  CHECK(medians[2] < medians[1]);
}

TEST_CASE("passive baseline: exact label use and the lower-bound trend") {
  const JointDistribution dist = make_lower_bound_family({});
  const SecondMoment sm(dist.exact_moments()->sigma, Provenance::exact);
  const Vector w_opt = optimal_predictor(dist).w;
  for (std::size_t m : {1000u, 4000u}) {
    ActiveConfig cfg;
    cfg.m = m;
    cfg.delta = 0.2;
    double mean = 0.0;
    for (std::uint64_t trial = 0; trial < 200; ++trial) {
      Rng rng(derive_seed(6, {m, trial}));
      dist.reset_label_counter();
      const PassiveResult res = passive_baseline(dist, cfg, rng);
      CHECK(res.labels == m);
      CHECK(dist.labels_drawn() == m);
      mean += excess_loss(sm, w_opt, res.w_hat.w) / 200.0;
    }
    // sigma^2 / (4m) with sigma = 1.
    CHECK(mean >= 0.9 / (4.0 * static_cast<double>(m)));
  }
  ActiveConfig zero;
  Rng rng(1);
  CHECK_THROWS_AS(passive_baseline(dist, zero, rng), InvalidArgument);
}

TEST_CASE("passive baseline recovers noise-free data") {
  const JointDistribution dist = fixtures::realizable2();
  const SecondMoment sm(dist.exact_moments()->sigma, Provenance::exact);
  ActiveConfig cfg;
  cfg.m = 500;
  Rng rng(2);
  CHECK(excess_loss(sm, optimal_predictor(dist).w, passive_baseline(dist, cfg, rng).w_hat.w) <= 1e-10);
}

TEST_CASE("stage errors name the stage and keep their type") {
  Setup st = exact_setup(fixtures::boxes3(), 200'000);
  ActiveConfig cfg;
  cfg.m = 3000;
  Partition broken = st.part;
  PartitionStats stats = broken.stats();
  stats.sup_dual_sq[1] = 0.0;
  broken.set_stats(stats);
  Rng rng(4);
  try {
    active_regression(st.dist, st.sm, broken, cfg, rng);
    FAIL("expected a stage-2 failure");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).rfind("stage 2:", 0) == 0);
  }
  Partition bare = Partition::regions(st.dist);
  CHECK_THROWS_AS(active_regression(st.dist, st.sm, bare, cfg, rng), InvalidArgument);
}
