// strata-reg: command-line front end for the stratified active regression
// library.
//
// Precedence: command-line flags override values from --config, which
// override built-in defaults.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "strata_reg/active.hpp"
#include "strata_reg/base_learner.hpp"
#include "strata_reg/config.hpp"
#include "strata_reg/error.hpp"
#include "strata_reg/experiments.hpp"
#include "strata_reg/sampling.hpp"
#include "strata_reg/strata.hpp"

namespace sr = strata_reg;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kRuntime = 1, kUsage = 2, kGate = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

Level log_level() {
  const char* env = std::getenv("STRATA_REG_LOG");
  if (env == nullptr) return Level::warn;
  const std::string v = env;
  if (v == "error") return Level::error;
  if (v == "info") return Level::info;
  if (v == "debug") return Level::debug;
  return Level::warn;
}

template <typename... Args>
void log(Level lvl, fmt::format_string<Args...> f, Args&&... args) {
  static const Level threshold = log_level();
  if (lvl > threshold) return;
  static constexpr const char* names[] = {"error", "warn", "info", "debug"};
  std::cerr << "[" << names[static_cast<int>(lvl)] << "] " << fmt::format(f, std::forward<Args>(args)...) << '\n';
}

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  std::optional<std::size_t> m;
  std::optional<double> delta;
  std::optional<double> b;
  std::string constants;
};

json load_config(const Options& opt) {
  if (opt.config_path.empty()) throw UsageError("--config is required");
  std::ifstream in(opt.config_path);
  if (!in) throw UsageError(fmt::format("cannot open config '{}'", opt.config_path));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(fmt::format("config '{}' is not valid JSON: {}", opt.config_path, e.what()));
  }
}

const json& section(const json& cfg, const char* name) {
  if (!cfg.contains(name)) throw UsageError(fmt::format("config has no '{}' section", name));
  return cfg.at(name);
}

std::uint64_t resolve_seed(const Options& opt, const json& cfg) {
  if (opt.seed) return *opt.seed;
  return cfg.value("seed", std::uint64_t{0});
}

sr::ActiveConfig resolve_active(const Options& opt, const json& cfg) {
  sr::ActiveConfig a = sr::active_config_from_json(cfg.value("active", json()));
  if (opt.m) a.m = *opt.m;
  if (opt.delta) a.delta = *opt.delta;
  if (opt.b) a.b = *opt.b;
  if (!opt.constants.empty()) a.constants = sr::parse_constants(opt.constants);
  return a;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw sr::Error(fmt::format("cannot write '{}'", path));
  out << text;
}

int cmd_fit(const Options& opt) {
  const json cfg = load_config(opt);
  const std::uint64_t seed = resolve_seed(opt, cfg);
  const sr::ActiveConfig acfg = resolve_active(opt, cfg);
  if (acfg.m == 0) throw UsageError("fit needs a label budget (--m or active.m)");
  const sr::ProblemSetup setup = sr::prepare_problem(section(cfg, "family"), section(cfg, "partition"), seed);
  log(Level::info, "fit: family={} d={} K={} m={}", setup.dist.name(), setup.dist.dim(), setup.partition.size(), acfg.m);

  sr::Rng rng(sr::derive_seed(seed, {0xf17u}));
  const sr::ActiveResult res = sr::active_regression(setup.dist, setup.sm, setup.partition, acfg, rng);
  json out;
  out["seed"] = seed;
  out["w_hat"] = sr::vector_to_json(res.w_hat.w);
  out["w_opt"] = sr::vector_to_json(setup.w_opt);
  out["excess_loss"] = sr::excess_loss(setup.sm, setup.w_opt, res.w_hat.w);
  out["labels"] = {{"stage1", res.diagnostics.labels_stage1},
                   {"stage2", res.diagnostics.labels_stage2},
                   {"stage3", res.diagnostics.labels_stage3},
                   {"total", res.diagnostics.labels_total()},
                   {"budget", acfg.m}};
  out["diagnostics"] = res.diagnostics.to_json();
  const std::string text = out.dump(2) + "\n";
  std::cout << text;
  if (!opt.out.empty()) write_text(opt.out, text);
  return kOk;
}

int cmd_compare(const Options& opt) {
  const json cfg = load_config(opt);
  sr::ExperimentSpec spec;
  spec.family = section(cfg, "family");
  spec.partition = section(cfg, "partition");
  spec.seed = resolve_seed(opt, cfg);
  spec.active = resolve_active(opt, cfg);
  spec.jobs = opt.jobs;
  const json exp = cfg.value("experiment", json::object());
  if (exp.contains("m_grid")) spec.m_grid = exp.at("m_grid").get<std::vector<std::size_t>>();
  if (opt.m) spec.m_grid = {*opt.m};
  spec.trials = exp.value("trials", spec.trials);
  spec.pool_size = exp.value("pool_size", spec.pool_size);
  if (exp.contains("methods")) {
    spec.methods.clear();
    for (const auto& m : exp.at("methods")) spec.methods.push_back(sr::method_from_string(m.get<std::string>()));
  }
  if (spec.m_grid.empty()) throw UsageError("compare needs a non-empty experiment.m_grid (or --m)");

  const std::filesystem::path dir = opt.out.empty() ? std::filesystem::path("compare_out") : std::filesystem::path(opt.out);
  std::filesystem::create_directories(dir);
  spec.output_path = (dir / "trials.csv").string();
  log(Level::info, "compare: {} budgets x {} trials, jobs={}", spec.m_grid.size(), spec.trials, spec.jobs);

  const sr::ComparisonResult res = sr::run_comparison(spec);
  sr::emit_plot_data(res.records, dir);
  sr::write_summary_csv(std::cout, sr::summarize(res.records));
  bool enough = true;
  for (const auto& row : sr::summarize(res.records)) enough = enough && row.n_ok >= 30;
  if (spec.m_grid.size() >= 3 && enough) {
    for (const sr::RateFit& f : sr::rate_fit(res.records)) {
      std::cout << fmt::format("rate {}: slope {:.4f} (R^2 {:.4f})\n", sr::to_string(f.method), f.slope, f.r_squared);
    }
  }
  if (res.failed()) {
    std::cerr << fmt::format("error: {} of {} trials aborted (> 5%)\n", res.failures, res.records.size());
    return kRuntime;
  }
  return kOk;
}

int cmd_risk(const Options& opt) {
  const json cfg = load_config(opt);
  if (!cfg.contains("partition")) throw UsageError("risk needs a 'partition' section");
  const std::uint64_t seed = resolve_seed(opt, cfg);
  const sr::ProblemSetup setup = sr::prepare_problem(section(cfg, "family"), cfg.at("partition"), seed);
  const auto& p = setup.partition.probs();
  const auto& mu = setup.mu.mu;

  sr::Rng rng(sr::derive_seed(seed, {0x415bu}));
  const double passive = sr::risk_piecewise(p, mu, std::vector<double>(p.size(), 1.0));
  const double oracle = sr::oracle_risk(p, mu);
  const sr::Estimate lev = sr::risk(setup.dist, setup.sm, sr::leverage_phi(setup.sm, setup.dist), setup.w_opt,
                                    1'000'000, rng);
  auto psi = [&](const sr::Vector& x) { return std::sqrt(sr::psi_sq(setup.sm, setup.dist, setup.w_opt, x)); };
  const sr::ConstrainedOptimum opt_phi = sr::optimal_phi_constrained(psi, setup.sm, setup.dist, 0.0, 1'000'000, rng);
  const sr::Estimate global = sr::risk(setup.dist, setup.sm, opt_phi.phi, setup.w_opt, 1'000'000, rng);

  std::cout << fmt::format("{:>6} {:>14} {:>14} {:>14}\n", "cell", "p", "theta", "mu");
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::cout << fmt::format("{:>6} {:>14.6g} {:>14.6g} {:>14.6g}\n", i, p[i], setup.partition.thetas()[i], mu[i]);
  }
  const double ratio = oracle > 0.0 ? passive / oracle : 1.0;
  std::cout << fmt::format("rho(1)            {:.6g}\n", passive);
  std::cout << fmt::format("rho(phi[Sigma])   {:.6g}\n", lev.value);
  std::cout << fmt::format("rho*_A (oracle)   {:.6g}\n", oracle);
  std::cout << fmt::format("rho(phi_opt)      {:.6g}\n", global.value);
  std::cout << fmt::format("ratio rho(1)/rho*_A {:.4g}\n", ratio);
  if (!opt.out.empty()) {
    json out = sr::moments_to_json(setup.dist, setup.sm, setup.partition, setup.w_opt, setup.mu);
    out["rho_passive"] = passive;
    out["rho_leverage"] = lev.value;
    out["rho_oracle_partition"] = oracle;
    out["rho_oracle_global"] = global.value;
    out["ratio"] = ratio;
    write_text(opt.out, out.dump(2) + "\n");
  }
  return kOk;
}

int cmd_selftest(const Options& opt) {
  const std::uint64_t seed = opt.seed.value_or(1);
  int failures = 0;
  auto report = [&](const char* name, bool ok, const std::string& detail) {
    std::cout << fmt::format("{} {} ({})\n", ok ? "PASS" : "FAIL", name, detail);
    if (!ok) ++failures;
  };

  const sr::JointDistribution dist = sr::make_lower_bound_family({});
  sr::Rng rng(seed);
  const sr::SecondMoment sm = sr::estimate_second_moment(dist, 100, rng);
  double e_dual = 0.0;
  for (const sr::Atom& a : dist.atoms()) e_dual += a.prob * sm.dual_norm_sq(a.x);
  report("trace-identity", std::abs(e_dual - 1.0) < 1e-12, fmt::format("E||X||_*^2 = {:.15g}", e_dual));

  sr::Partition part = sr::estimate_partition_stats(dist, sm, sr::Partition::regions(dist), 0, rng);
  const sr::LabeledSample q = sr::sample_q_i(dist, sm, part, 0, 1000, rng);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < q.x.rows(); ++i) {
    worst = std::max(worst, std::abs(std::sqrt(sm.dual_norm_sq(q.x.row(i).transpose())) - 1.0));
  }
  report("q-unit-norm", worst <= 1e-9, fmt::format("max deviation {:.3g}", worst));

  const sr::Vector w_opt = sr::optimal_predictor(dist).w;
  const sr::StratumMoments mu = sr::stratum_moments(dist, sm, part, w_opt, 0, rng);
  const double oracle = sr::oracle_risk(part.probs(), mu.mu);
  bool optimal = true;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a{0.01 + rng.uniform() * 10.0, 0.01 + rng.uniform() * 10.0};
    optimal = optimal && sr::risk_piecewise(part.probs(), mu.mu, a) >= oracle - 1e-12;
  }
  report("oracle-optimality", optimal, fmt::format("rho*_A = {:.6g}", oracle));

  std::cout << (failures == 0 ? "selftest ok\n" : "selftest failed\n");
  return failures == 0 ? kOk : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"strata-reg: stratified active learning for linear regression"};
  app.require_subcommand(1);
  app.fallthrough();
  Options opt;
  app.add_option("--config", opt.config_path, "JSON config with family/partition/active/experiment sections");
  app.add_option("--seed", opt.seed, "Base seed (overrides config 'seed')");
  app.add_option("--out", opt.out, "Output file (fit, risk) or directory (compare)");
  app.add_option("--jobs", opt.jobs, "Worker threads for compare (1 = sequential)")->check(CLI::PositiveNumber);
  app.add_option("--m", opt.m, "Label budget (compare: single-budget grid)");
  app.add_option("--delta", opt.delta, "Confidence parameter in (0,1)");
  app.add_option("--b", opt.b, "Override of the residual bound b");
  app.add_option("--constants", opt.constants, "Learner constants C,c,c',c''");

  auto* fit = app.add_subcommand("fit", "Run one active regression and print the predictor and diagnostics");
  auto* compare = app.add_subcommand("compare", "Run active vs passive trials over a budget grid and write CSVs");
  auto* risk = app.add_subcommand("risk", "Print the risk table: passive, leverage, oracle and optimal risks");
  auto* selftest = app.add_subcommand("selftest", "Run quick internal consistency checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (fit->parsed()) return cmd_fit(opt);
    if (compare->parsed()) return cmd_compare(opt);
    if (risk->parsed()) return cmd_risk(opt);
    if (selftest->parsed()) return cmd_selftest(opt);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return kUsage;
  } catch (const sr::GateError& e) {
    std::cerr << "gate violation: " << e.what() << '\n';
    return kGate;
  } catch (const sr::InvalidArgument& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
