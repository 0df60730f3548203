#include "strata_reg/active.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "strata_reg/error.hpp"

namespace strata_reg {

namespace {

enum StreamTag : std::uint64_t {
  kStage1Sample = 1,
  kStage1Shuffle = 2,
  kStage2Base = 100,
  kStage3Sample = 3,
  kStage3Shuffle = 4,
  kPassiveSample = 5,
  kPassiveShuffle = 6,
};

nlohmann::json vec_json(const Vector& v) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) j.push_back(v[k]);
  return j;
}

// Re-throws the active exception with the stage id prefixed, keeping its type.
[[noreturn]] void rethrow_in_stage(int stage) {
  auto msg = [stage](const std::exception& e) { return fmt::format("stage {}: {}", stage, e.what()); };
  try {
    throw;
  } catch (const GateError& e) {
    throw GateError(msg(e));
  } catch (const SamplingError& e) {
    throw SamplingError(msg(e));
  } catch (const SingularError& e) {
    throw SingularError(msg(e));
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(msg(e));
  } catch (const Error& e) {
    throw Error(msg(e));
  }
}

}  // namespace

std::size_t budget_gate(int d, double delta, const LearnerConstants& k) {
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("delta must lie in (0, 1)");
  const double inner = k.c * d * std::log(k.c_prime * d) * std::log(k.c_dprime / delta);
  return static_cast<std::size_t>(std::ceil(std::pow(std::max(inner, 0.0), 1.25)));
}

StagePlan make_stage_plan(std::size_t m, std::size_t cells, double delta) {
  if (cells == 0) throw InvalidArgument("stage plan needs at least one cell");
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("delta must lie in (0, 1)");
  StagePlan p;
  p.m = m;
  p.cells = cells;
  const auto half = static_cast<std::size_t>(std::floor(std::pow(static_cast<double>(m), 0.8) / 2.0));
  p.m1 = half;
  p.m2 = half;
  p.m3 = m - p.m1 - p.m2;
  p.t = p.m2 / cells;
  p.delta1 = delta / 4.0;
  p.delta2 = delta / 4.0;
  p.delta3 = delta / 2.0;
  return p;
}

nlohmann::json StageDiagnostics::to_json() const {
  nlohmann::json j;
  j["plan"] = {{"m", plan.m},           {"m1", plan.m1},         {"m2", plan.m2},
               {"m3", plan.m3},         {"t", plan.t},           {"K", plan.cells},
               {"delta1", plan.delta1}, {"delta2", plan.delta2}, {"delta3", plan.delta3}};
  j["b"] = b;
  j["Delta"] = Delta;
  j["gamma"] = gamma;
  j["xi"] = xi;
  j["v_hat"] = vec_json(v_hat);
  j["mu_tilde"] = mu_tilde;
  j["a_hat"] = a_hat;
  j["labels"] = {{"stage1", labels_stage1},
                 {"stage2", labels_stage2},
                 {"stage3", labels_stage3},
                 {"total", labels_total()}};
  j["acceptance"] = {{"stage1", acceptance_stage1}, {"stage2", acceptance_stage2}, {"stage3", acceptance_stage3}};
  return j;
}

WeightFunction leverage_phi(const SecondMoment& sm, const JointDistribution& dist) {
  const double d = sm.dim();
  auto inv = std::make_shared<const Matrix>(sm.sigma_inv());
  auto fn = [inv, d](const Vector& x) { return std::max(0.0, x.dot(*inv * x)) / d; };
  return WeightFunction(WeightForm::leverage, std::move(fn), dist.sup_dual_sq(sm) / d);
}

MuTildeEstimate estimate_mu_tilde(const JointDistribution& dist, const SecondMoment& sm,
                                  const Partition& partition, const Vector& v_hat, double Delta, double gamma,
                                  std::size_t t, Rng& rng) {
  if (t == 0) throw InvalidArgument("estimate_mu_tilde: t must be at least 1");
  const std::size_t k = partition.size();
  const auto& thetas = partition.thetas();
  MuTildeEstimate out;
  out.mu_tilde.resize(k);
  out.a_hat.resize(k);
  out.acceptance.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    Rng cell_rng = rng.split(kStage2Base + i);
    const LabeledSample ti = sample_q_i(dist, sm, partition, i, t, cell_rng);
    const Vector resid = (ti.x * v_hat - ti.y).cwiseAbs().array() + Delta;
    const double mean_sq = resid.squaredNorm() / static_cast<double>(t);
    out.mu_tilde[i] = thetas[i] * (mean_sq + gamma);
    out.a_hat[i] = std::sqrt(out.mu_tilde[i]);
    out.labels += ti.labels_consumed;
    out.acceptance[i] = ti.acceptance_rate();
  }
  return out;
}

WeightFunction build_phi_hat(const std::vector<double>& a_hat, const Partition& partition, double xi,
                             const SecondMoment& sm) {
  const std::size_t k = partition.size();
  if (a_hat.size() != k) throw InvalidArgument("build_phi_hat: a_hat length does not match the partition");
  const int d = sm.dim();
  if (!(xi >= 0.0)) throw InvalidArgument("build_phi_hat: xi must be nonnegative");
  if (!(d * xi < 1.0)) throw GateError(fmt::format("build_phi_hat: d*xi = {} >= 1", d * xi));
  const auto& p = partition.probs();
  const auto& sup_r = partition.stats().sup_dual_sq;
  double norm = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!(a_hat[i] >= 0.0)) throw InvalidArgument(fmt::format("build_phi_hat: a_hat[{}] must be nonnegative", i));
    if (a_hat[i] == 0.0 && xi == 0.0) {
      throw InvalidArgument(fmt::format("build_phi_hat: a_hat[{}] = 0 needs xi > 0 to keep phi positive", i));
    }
    norm += p[i] * a_hat[i];
  }
  // All-zero estimates (noise-free data): every weight is optimal, use flat levels.
  const bool flat = norm == 0.0;
  Vector level(static_cast<Eigen::Index>(k));
  double sup = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    level[static_cast<Eigen::Index>(i)] = (1.0 - d * xi) * (flat ? 1.0 : a_hat[i] / norm);
    sup = std::max(sup, xi * sup_r[i] + level[static_cast<Eigen::Index>(i)]);
  }
  auto part = std::make_shared<const Partition>(partition);
  auto inv = std::make_shared<const Matrix>(sm.sigma_inv());
  auto fn = [part, inv, level, xi](const Vector& x) {
    const double r = std::max(0.0, x.dot(*inv * x));
    auto c = part->cell_of(x);
    return xi * r + (c ? level[static_cast<Eigen::Index>(*c)] : 0.0);
  };
  Vector a(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) a[static_cast<Eigen::Index>(i)] = a_hat[i];
  return WeightFunction(WeightForm::phi_hat, std::move(fn), sup, std::move(a), xi);
}

ActiveResult active_regression(const JointDistribution& dist, const SecondMoment& sm, const Partition& partition,
                               const ActiveConfig& cfg, Rng& rng) {
  const int d = dist.dim();
  const std::size_t k = partition.size();
  if (!partition.has_stats()) throw InvalidArgument("active_regression: partition statistics are missing");
  const std::size_t gate = budget_gate(d, cfg.delta, cfg.constants);
  if (cfg.m < gate) {
    throw GateError(fmt::format("budget gate: m = {} is below (c d ln(c' d) ln(c''/delta))^(5/4) = {}", cfg.m, gate));
  }

  ActiveResult res;
  StageDiagnostics& diag = res.diagnostics;
  diag.plan = make_stage_plan(cfg.m, k, cfg.delta);
  const StagePlan& plan = diag.plan;
  if (plan.m1 < static_cast<std::size_t>(d)) {
    throw GateError(fmt::format("budget gate: stage-1 size m1 = {} is below d = {}", plan.m1, d));
  }
  if (plan.t == 0) {
    throw GateError(fmt::format("budget gate: stage-2 size m2 = {} gives t = 0 labels for K = {} cells", plan.m2, k));
  }
  diag.b = cfg.b.value_or(dist.noise_bound_b());
  const LearnerConstants& kc = cfg.constants;

  // Stage 1: crude estimate under leverage weighting.
  try {
    const WeightFunction lev = leverage_phi(sm, dist);
    Rng sample_rng = rng.split(kStage1Sample);
    Rng shuffle_rng = rng.split(kStage1Shuffle);
    const LabeledSample s1 = sample_p_phi(dist, sm, lev, plan.m1, sample_rng);
    diag.labels_stage1 = s1.labels_consumed;
    diag.acceptance_stage1 = s1.acceptance_rate();
    diag.v_hat = run_base_learner(s1, plan.delta1, cfg.base, shuffle_rng).w;
  } catch (const Error&) {
    rethrow_in_stage(1);
  }

  // Stage 2: per-stratum estimates.
  diag.Delta = std::sqrt(kc.C * d * d * diag.b * diag.b * std::log(1.0 / plan.delta1) / static_cast<double>(plan.m1));
  diag.gamma = std::pow(diag.b + 2.0 * diag.Delta, 2) *
               std::sqrt(static_cast<double>(k) * std::log(2.0 * static_cast<double>(k) / plan.delta2) /
                         static_cast<double>(plan.m2));
  try {
    MuTildeEstimate est = estimate_mu_tilde(dist, sm, partition, diag.v_hat, diag.Delta, diag.gamma, plan.t, rng);
    diag.mu_tilde = std::move(est.mu_tilde);
    diag.a_hat = std::move(est.a_hat);
    diag.labels_stage2 = est.labels;
    diag.acceptance_stage2 = std::move(est.acceptance);
  } catch (const Error&) {
    rethrow_in_stage(2);
  }

  // Stage 3: final fit under phi-hat.
  const double m3 = static_cast<double>(plan.m3);
  diag.xi = kc.c * std::log(kc.c_prime * m3) * std::log(kc.c_dprime / plan.delta3) / m3;
  if (!(d * diag.xi < 1.0)) {
    throw GateError(fmt::format("stage 3: d*xi = {:.4g} >= 1; m3 = {} is too small", d * diag.xi, plan.m3));
  }
  try {
    const WeightFunction phi_hat = build_phi_hat(diag.a_hat, partition, diag.xi, sm);
    Rng sample_rng = rng.split(kStage3Sample);
    Rng shuffle_rng = rng.split(kStage3Shuffle);
    const LabeledSample s3 = sample_p_phi(dist, sm, phi_hat, plan.m3, sample_rng);
    diag.labels_stage3 = s3.labels_consumed;
    diag.acceptance_stage3 = s3.acceptance_rate();
    res.w_hat = run_base_learner(s3, plan.delta3, cfg.base, shuffle_rng);
  } catch (const Error&) {
    rethrow_in_stage(3);
  }
  return res;
}

PassiveResult passive_baseline(const JointDistribution& dist, const ActiveConfig& cfg, Rng& rng) {
  if (cfg.m == 0) throw InvalidArgument("passive_baseline: label budget must be positive");
  Rng sample_rng = rng.split(kPassiveSample);
  Rng shuffle_rng = rng.split(kPassiveShuffle);
  const LabeledSample s = sample_raw(dist, cfg.m, sample_rng);
  PassiveResult out;
  out.labels = s.labels_consumed;
  out.w_hat = run_base_learner(s, cfg.delta, cfg.base, shuffle_rng);
  return out;
}

}  // namespace strata_reg
