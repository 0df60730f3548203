#include "strata_reg/experiments.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <thread>

#include "strata_reg/error.hpp"

namespace strata_reg {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::active: return "active";
    case Method::passive_ols: return "passive-ols";
    case Method::passive_mom: return "passive-mom";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "active") return Method::active;
  if (s == "passive-ols") return Method::passive_ols;
  if (s == "passive-mom") return Method::passive_mom;
  throw InvalidArgument(fmt::format("unknown method '{}'", s));
}

void ExperimentSpec::validate() const {
  if (m_grid.empty()) throw InvalidArgument("experiment: m_grid is empty");
  if (trials == 0) throw InvalidArgument("experiment: trials must be positive");
  if (methods.empty()) throw InvalidArgument("experiment: no methods selected");
  if (!(active.delta > 0.0 && active.delta < 1.0)) throw InvalidArgument("experiment: delta must lie in (0, 1)");
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidArgument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

namespace {

TrialRecord run_trial(const ExperimentSpec& spec, const ProblemSetup& setup, Method method, std::size_t m,
                      std::size_t trial) {
  TrialRecord rec;
  rec.method = method;
  rec.m = m;
  rec.trial = trial;
  rec.seed = derive_seed(spec.seed, {static_cast<std::uint64_t>(method), m, trial});
  Rng rng(rec.seed);
  ActiveConfig cfg = spec.active;
  cfg.m = m;
  try {
    if (method == Method::active) {
      const ActiveResult res = active_regression(setup.dist, setup.sm, setup.partition, cfg, rng);
      const StageDiagnostics& d = res.diagnostics;
      rec.excess_loss = excess_loss(setup.sm, setup.w_opt, res.w_hat.w);
      rec.labels_used = d.labels_total();
      rec.labels_planned = d.plan.labels_planned();
      rec.has_stages = true;
      rec.delta_stage = d.Delta;
      rec.gamma_stage = d.gamma;
      rec.xi_stage = d.xi;
      rec.diagnostics = d.to_json();
    } else {
      cfg.base.mode = method == Method::passive_ols ? BaseMode::plain_ols : BaseMode::median_of_means;
      const PassiveResult res = passive_baseline(setup.dist, cfg, rng);
      rec.excess_loss = excess_loss(setup.sm, setup.w_opt, res.w_hat.w);
      rec.labels_used = res.labels;
      rec.labels_planned = m;
    }
  } catch (const Error& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  return rec;
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{:.17g}", v);
}

}  // namespace

ComparisonResult run_comparison(const ExperimentSpec& spec, const ProblemSetup& setup) {
  spec.validate();
  struct Item {
    Method method;
    std::size_t m;
    std::size_t trial;
  };
  std::vector<Method> methods = spec.methods;
  std::sort(methods.begin(), methods.end());
  methods.erase(std::unique(methods.begin(), methods.end()), methods.end());
  std::vector<std::size_t> grid = spec.m_grid;
  std::sort(grid.begin(), grid.end());

  std::vector<Item> items;
  for (Method method : methods) {
    for (std::size_t m : grid) {
      for (std::size_t t = 0; t < spec.trials; ++t) items.push_back({method, m, t});
    }
  }

  ComparisonResult out;
  out.records.resize(items.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < items.size(); i = next.fetch_add(1)) {
      out.records[i] = run_trial(spec, setup, items[i].method, items[i].m, items[i].trial);
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(spec.jobs, items.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  out.failures = static_cast<std::size_t>(
      std::count_if(out.records.begin(), out.records.end(), [](const TrialRecord& r) { return !r.ok; }));
  return out;
}

ComparisonResult run_comparison(const ExperimentSpec& spec) {
  spec.validate();
  const ProblemSetup setup = prepare_problem(spec.family, spec.partition, spec.seed, spec.pool_size);
  ComparisonResult res = run_comparison(spec, setup);
  if (!spec.output_path.empty()) {
    std::ofstream out(spec.output_path, std::ios::binary);
    if (!out) throw Error(fmt::format("cannot open '{}' for writing", spec.output_path));
    write_trials_csv(out, res.records);
  }
  return res;
}

void write_trials_csv(std::ostream& out, const std::vector<TrialRecord>& records) {
  out << kTrialCsvHeader << '\n';
  for (const TrialRecord& r : records) {
    out << to_string(r.method) << ',' << r.m << ',' << r.trial << ',' << r.seed << ','
        << (r.ok ? fmt_double(r.excess_loss) : "nan") << ',' << r.labels_used << ',';
    if (r.has_stages) {
      out << fmt_double(r.delta_stage) << ',' << fmt_double(r.gamma_stage) << ',' << fmt_double(r.xi_stage);
    } else {
      out << ",,";
    }
    out << '\n';
  }
}

std::vector<SummaryRow> summarize(const std::vector<TrialRecord>& records) {
  std::map<std::pair<Method, std::size_t>, std::pair<std::vector<double>, std::size_t>> groups;
  for (const TrialRecord& r : records) {
    auto& g = groups[{r.method, r.m}];
    if (r.ok) {
      g.first.push_back(r.excess_loss);
    } else {
      ++g.second;
    }
  }
  std::vector<SummaryRow> rows;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& [key, g] : groups) {
    SummaryRow row{key.first, key.second, nan, nan, nan, nan, g.first.size(), g.second};
    if (!g.first.empty()) {
      row.median = quantile(g.first, 0.5);
      row.iqr_lo = quantile(g.first, 0.25);
      row.iqr_hi = quantile(g.first, 0.75);
      row.mean = std::accumulate(g.first.begin(), g.first.end(), 0.0) / static_cast<double>(g.first.size());
    }
    rows.push_back(row);
  }
  return rows;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << kSummaryCsvHeader << '\n';
  for (const SummaryRow& r : rows) {
    out << to_string(r.method) << ',' << r.m << ',' << fmt_double(r.median) << ',' << fmt_double(r.iqr_lo) << ','
        << fmt_double(r.iqr_hi) << ',' << fmt_double(r.mean) << ',' << r.n_ok << ',' << r.n_fail << '\n';
  }
}

std::vector<RateFit> rate_fit(const std::vector<TrialRecord>& records) {
  std::map<Method, std::vector<std::pair<double, double>>> points;
  for (const SummaryRow& row : summarize(records)) {
    if (row.n_ok < 30) {
      throw InvalidArgument(
          fmt::format("rate_fit: {} at m = {} has {} successful trials (need 30)", to_string(row.method), row.m, row.n_ok));
    }
    if (!(row.median > 0.0)) {
      throw InvalidArgument(fmt::format("rate_fit: nonpositive median for {} at m = {}", to_string(row.method), row.m));
    }
    points[row.method].emplace_back(std::log(static_cast<double>(row.m)), std::log(row.median));
  }
  std::vector<RateFit> fits;
  for (const auto& [method, pts] : points) {
    if (pts.size() < 3) {
      throw InvalidArgument(fmt::format("rate_fit: {} has {} budgets (need 3)", to_string(method), pts.size()));
    }
    const double n = static_cast<double>(pts.size());
    double mx = 0.0;
    double my = 0.0;
    for (const auto& [x, y] : pts) {
      mx += x / n;
      my += y / n;
    }
    double sxx = 0.0;
    double sxy = 0.0;
    double syy = 0.0;
    for (const auto& [x, y] : pts) {
      sxx += (x - mx) * (x - mx);
      sxy += (x - mx) * (y - my);
      syy += (y - my) * (y - my);
    }
    if (sxx == 0.0) throw InvalidArgument("rate_fit: all budgets are equal");
    const double slope = sxy / sxx;
    const double intercept = my - slope * mx;
    double ss_res = 0.0;
    for (const auto& [x, y] : pts) {
      const double e = y - (intercept + slope * x);
      ss_res += e * e;
    }
    const double r2 = syy == 0.0 ? 1.0 : 1.0 - ss_res / syy;
    fits.push_back({method, slope, intercept, r2, pts.size()});
  }
  return fits;
}

void emit_plot_data(const std::vector<TrialRecord>& records, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::vector<SummaryRow> rows = summarize(records);
  {
    std::ofstream out(dir / "summary.csv", std::ios::binary);
    if (!out) throw Error(fmt::format("cannot write {}", (dir / "summary.csv").string()));
    write_summary_csv(out, rows);
  }
  std::ofstream out(dir / "summary_long.csv", std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write {}", (dir / "summary_long.csv").string()));
  out << "method,m,statistic,value\n";
  for (const SummaryRow& r : rows) {
    const std::pair<const char*, double> stats[] = {
        {"median", r.median}, {"iqr_lo", r.iqr_lo}, {"iqr_hi", r.iqr_hi}, {"mean", r.mean}};
    for (const auto& [name, value] : stats) {
      out << to_string(r.method) << ',' << r.m << ',' << name << ',' << fmt_double(value) << '\n';
    }
  }
}

}  // namespace strata_reg
