#pragma once

// Benchmark harness: matched-budget active vs passive trials, summaries and
// log-log rate fits.

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "strata_reg/active.hpp"
#include "strata_reg/config.hpp"

namespace strata_reg {

enum class Method { active, passive_ols, passive_mom };
std::string_view to_string(Method m);
Method method_from_string(const std::string& s);

struct ExperimentSpec {
  nlohmann::json family;
  nlohmann::json partition;
  std::vector<std::size_t> m_grid;
  std::size_t trials = 30;
  std::uint64_t seed = 0;
  std::vector<Method> methods{Method::active, Method::passive_mom};
  ActiveConfig active;  // m is taken from the grid
  std::size_t jobs = 1;
  std::size_t pool_size = 1'000'000;
  std::string output_path;

  void validate() const;
};

struct TrialRecord {
  Method method = Method::active;
  std::size_t m = 0;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  bool ok = true;
  double excess_loss = 0.0;
  std::uint64_t labels_used = 0;
  // Stage quantities; only set for the active method.
  bool has_stages = false;
  double delta_stage = 0.0;
  double gamma_stage = 0.0;
  double xi_stage = 0.0;
  std::uint64_t labels_planned = 0;
  std::string error;
  nlohmann::json diagnostics;
};

struct ComparisonResult {
  std::vector<TrialRecord> records;  // sorted by (method, m, trial)
  std::size_t failures = 0;
  /// More than 5% of trials aborted.
  bool failed() const { return records.empty() ? false : 20 * failures > records.size(); }
};

/// Runs one trial for every (method, m, trial index). Each trial uses its own
/// seed derived from spec.seed, so the output does not depend on spec.jobs.
ComparisonResult run_comparison(const ExperimentSpec& spec, const ProblemSetup& setup);
ComparisonResult run_comparison(const ExperimentSpec& spec);

inline constexpr const char* kTrialCsvHeader =
    "method,m,trial,seed,excess_loss,labels_used,delta_stage,gamma_stage,xi_stage";
inline constexpr const char* kSummaryCsvHeader = "method,m,median,iqr_lo,iqr_hi,mean,n_ok,n_fail";

void write_trials_csv(std::ostream& out, const std::vector<TrialRecord>& records);

struct SummaryRow {
  Method method;
  std::size_t m;
  double median;
  double iqr_lo;
  double iqr_hi;
  double mean;
  std::size_t n_ok;
  std::size_t n_fail;
};

std::vector<SummaryRow> summarize(const std::vector<TrialRecord>& records);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);

struct RateFit {
  Method method;
  double slope;
  double intercept;
  double r_squared;
  std::size_t points;
};

/// Least-squares slope of log(median excess loss) against log(m), per method.
std::vector<RateFit> rate_fit(const std::vector<TrialRecord>& records);

/// Writes <dir>/summary.csv and the long-format <dir>/summary_long.csv.
void emit_plot_data(const std::vector<TrialRecord>& records, const std::filesystem::path& dir);

/// Interpolated quantile (type 7) of a non-empty sample.
double quantile(std::vector<double> values, double q);
double median(std::vector<double> values);

}  // namespace strata_reg
