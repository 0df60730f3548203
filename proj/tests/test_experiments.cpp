#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "strata_reg/error.hpp"
#include "strata_reg/experiments.hpp"

using namespace strata_reg;
using nlohmann::json;

namespace {

json lower_bound_family() { return {{"name", "lower_bound"}, {"sigma", 1.0}, {"alpha", 5.0}, {"eta", 0.1}}; }

json realizable_family() {
  return json::parse(R"({"name": "mixture", "w_star": [2.0, -1.0], "regions": [
      {"shape": "box", "lo": [0.5, -1.0], "hi": [1.5, 1.0], "weight": 0.5},
      {"shape": "box", "lo": [-1.5, -1.0], "hi": [-0.5, 1.0], "weight": 0.5}]})");
}

ExperimentSpec small_spec() {
  ExperimentSpec spec;
  spec.family = lower_bound_family();
  spec.partition = {{"kind", "regions"}};
  spec.m_grid = {1000, 4000};
  spec.trials = 20;
  spec.seed = 42;
  spec.active.delta = 0.2;
  return spec;
}

std::string csv(const std::vector<TrialRecord>& records) {
  std::ostringstream out;
  write_trials_csv(out, records);
  return out.str();
}

TrialRecord record(Method method, std::size_t m, std::size_t trial, double loss, bool ok = true) {
  TrialRecord r;
  r.method = method;
  r.m = m;
  r.trial = trial;
  r.ok = ok;
  r.excess_loss = ok ? loss : NAN;
  return r;
}

}  // namespace

TEST_CASE("type-7 quantiles") {
  CHECK(quantile({1, 2, 3, 4}, 0.25) == doctest::Approx(1.75));
  CHECK(quantile({1, 2, 3, 4}, 0.5) == doctest::Approx(2.5));
  CHECK(quantile({4, 1, 3}, 1.0) == 4.0);
  CHECK(median({5}) == 5.0);
  CHECK_THROWS_AS(median({}), InvalidArgument);
}

TEST_CASE("method names round-trip") {
  for (Method m : {Method::active, Method::passive_ols, Method::passive_mom}) {
    CHECK(method_from_string(std::string(to_string(m))) == m);
  }
  CHECK_THROWS_AS(method_from_string("bogus"), InvalidArgument);
}

TEST_CASE("spec validation") {
  ExperimentSpec spec = small_spec();
  spec.m_grid.clear();
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
  spec = small_spec();
  spec.trials = 0;
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
}

TEST_CASE("records are ordered and the csv does not depend on jobs") {
  ExperimentSpec spec = small_spec();
  const ProblemSetup setup = prepare_problem(spec.family, spec.partition, spec.seed);
  const ComparisonResult serial = run_comparison(spec, setup);
  spec.jobs = 3;
  const ComparisonResult parallel = run_comparison(spec, setup);
  CHECK(csv(serial.records) == csv(parallel.records));
  REQUIRE(serial.records.size() == 2 * 2 * 20);
  for (std::size_t i = 1; i < serial.records.size(); ++i) {
    const auto& a = serial.records[i - 1];
    const auto& b = serial.records[i];
    CHECK(std::tie(a.method, a.m, a.trial) < std::tie(b.method, b.m, b.trial));
  }
  for (const TrialRecord& r : serial.records) {
    CHECK(r.ok);
    CHECK(r.labels_used <= r.m);
    if (r.method == Method::active) CHECK(r.labels_used == r.labels_planned);
    if (r.method != Method::active) CHECK(r.labels_used == r.m);
  }
  spec.seed = 43;
  CHECK(csv(run_comparison(spec, setup).records) != csv(serial.records));
}

TEST_CASE("csv layout") {
  ExperimentSpec spec = small_spec();
  spec.m_grid = {1000};
  spec.trials = 2;
  const ComparisonResult res = run_comparison(spec);
  std::istringstream in(csv(res.records));
  std::string line;
  std::getline(in, line);
  CHECK(line == kTrialCsvHeader);
  std::getline(in, line);
  CHECK(line.rfind("active,1000,0,", 0) == 0);
  std::getline(in, line);
  std::getline(in, line);
  CHECK(line.rfind("passive-mom,1000,0,", 0) == 0);
  CHECK(line.substr(line.size() - 2) == ",,");
}

TEST_CASE("noise-free family gives vanishing excess loss") {
  ExperimentSpec spec;
  spec.family = realizable_family();
  spec.partition = {{"kind", "regions"}};
  spec.m_grid = {1000};
  spec.trials = 10;
  spec.methods = {Method::active, Method::passive_ols, Method::passive_mom};
  spec.pool_size = 200'000;
  const ComparisonResult res = run_comparison(spec);
  CHECK(res.failures == 0);
  for (const TrialRecord& r : res.records) CHECK(r.excess_loss <= 1e-10);
}

TEST_CASE("summaries: counts, failures and empty input") {
  std::vector<TrialRecord> recs;
  for (Method method : {Method::active, Method::passive_mom}) {
    for (std::size_t m : {100u, 200u, 400u}) {
      for (std::size_t t = 0; t < 4; ++t) recs.push_back(record(method, m, t, 1.0 + t));
    }
  }
  recs.push_back(record(Method::active, 100, 4, 0.0, false));
  const auto rows = summarize(recs);
  CHECK(rows.size() == 6);
  CHECK(rows[0].n_ok == 4);
  CHECK(rows[0].n_fail == 1);
  CHECK(rows[0].median == doctest::Approx(2.5));
  CHECK(rows[0].iqr_lo == doctest::Approx(1.75));
  CHECK(rows[0].iqr_hi == doctest::Approx(3.25));
  CHECK(rows[0].mean == doctest::Approx(2.5));

  std::ostringstream failed;
  write_trials_csv(failed, {recs.back()});
  CHECK(failed.str().find(",nan,") != std::string::npos);

  std::ostringstream empty;
  write_summary_csv(empty, summarize({}));
  CHECK(empty.str() == std::string(kSummaryCsvHeader) + "\n");

  ComparisonResult cr;
  cr.records = recs;
  cr.failures = 1;
  CHECK_FALSE(cr.failed());
  cr.failures = 2;
  CHECK(cr.failed());
}

TEST_CASE("plot data files") {
  std::vector<TrialRecord> recs;
  for (std::size_t m : {100u, 200u}) recs.push_back(record(Method::active, m, 0, 1.0 / m));
  const auto dir = std::filesystem::temp_directory_path() / "strata_reg_plot_test";
  std::filesystem::remove_all(dir);
  emit_plot_data(recs, dir);
  std::ifstream s(dir / "summary.csv"), l(dir / "summary_long.csv");
  std::string line;
  int n = 0;
  while (std::getline(s, line)) ++n;
  CHECK(n == 3);
  n = 0;
  std::getline(l, line);
  CHECK(line == "method,m,statistic,value");
  while (std::getline(l, line)) ++n;
  CHECK(n == 8);
  std::filesystem::remove_all(dir);
}

TEST_CASE("rate fit on an exact power law") {
  std::vector<TrialRecord> recs;
  for (std::size_t m : {100u, 200u, 400u, 800u}) {
    for (std::size_t t = 0; t < 30; ++t) {
      recs.push_back(record(Method::passive_ols, m, t, 3.0 / static_cast<double>(m)));
    }
  }
  const auto fits = rate_fit(recs);
  REQUIRE(fits.size() == 1);
  CHECK(fits[0].slope == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(fits[0].intercept == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(fits[0].r_squared == doctest::Approx(1.0));
  CHECK(fits[0].points == 4);

  std::vector<TrialRecord> two(recs.begin(), recs.begin() + 60);
  CHECK_THROWS_AS(rate_fit(two), InvalidArgument);
  std::vector<TrialRecord> thin;
  for (std::size_t m : {100u, 200u, 400u}) thin.push_back(record(Method::active, m, 0, 1.0 / m));
  CHECK_THROWS_AS(rate_fit(thin), InvalidArgument);
}

TEST_CASE("lower-bound family medians decrease with m for both methods") {
  ExperimentSpec spec = small_spec();
  spec.m_grid = {1000, 4000, 16000};
  spec.trials = 40;
  const ComparisonResult res = run_comparison(spec);
  const auto rows = summarize(res.records);
  REQUIRE(rows.size() == 6);
  for (std::size_t i = 0; i < rows.size(); i += 3) {
    CHECK(rows[i + 1].median < rows[i].median);
    CHECK(rows[i + 2].median < rows[i + 1].median);
  }
}
