#pragma once

// Families shared by the test suites.

#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <sys/wait.h>

#include "strata_reg/model.hpp"

namespace fixtures {

using strata_reg::JointDistribution;
using strata_reg::MixtureSpec;
using strata_reg::NoiseKind;
using strata_reg::Region;
using strata_reg::Vector;

inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// d = 3, three boxes with different noise levels.
inline JointDistribution boxes3(bool exact = true) {
  MixtureSpec s;
  s.w_star = vec({1.0, -0.5, 0.25});
  s.regions = {
      Region::box(vec({0.5, -1, -1}), vec({1.5, 1, 1}), 0.6, 0.0, NoiseKind::uniform, 0.2),
      Region::box(vec({-1.5, -1, -1}), vec({-0.5, 1, 1}), 0.3, 0.0, NoiseKind::gaussian, 1.0),
      Region::box(vec({2, 1.5, 1.5}), vec({3, 2.5, 2.5}), 0.1, 0.5, NoiseKind::uniform, 2.0)};
  s.expose_exact_moments = exact;
  return strata_reg::make_heteroscedastic_family(std::move(s), "boxes3");
}

// d = 8, two boxes; used for rate checks.
inline JointDistribution boxes8() {
  MixtureSpec s;
  s.w_star = vec({1, -1, 0.5, 0, 0.25, -0.5, 1, 0});
  Vector lo1 = Vector::Constant(8, -1.0), hi1 = Vector::Constant(8, 1.0);
  lo1[0] = 1;
  hi1[0] = 2;
  Vector lo2 = Vector::Constant(8, -1.0), hi2 = Vector::Constant(8, 1.0);
  lo2[0] = -2;
  hi2[0] = -1;
  s.regions = {Region::box(lo1, hi1, 0.7, 0.0, NoiseKind::uniform, 0.5),
               Region::box(lo2, hi2, 0.3, 0.3, NoiseKind::gaussian, 2.0)};
  return strata_reg::make_heteroscedastic_family(std::move(s), "boxes8");
}

// d = 8, two truncated Gaussian blobs.
inline JointDistribution gauss8() {
  MixtureSpec s;
  s.w_star = Vector::LinSpaced(8, -1.0, 1.0);
  Vector sd = Vector::Ones(8);
  sd[0] = 0.5;
  Vector c1 = Vector::Zero(8), c2 = Vector::Zero(8);
  c1[0] = 3.5;
  c2[0] = -3.5;
  s.regions = {Region::gaussian(c1, sd, 0.7, 0.0, NoiseKind::uniform, 0.5),
               Region::gaussian(c2, sd, 0.3, 0.3, NoiseKind::gaussian, 2.0)};
  return strata_reg::make_heteroscedastic_family(std::move(s), "gauss8");
}

// d = 2, five noisy atoms; the last two are nearly noise-free.
inline JointDistribution atoms5() {
  MixtureSpec s;
  s.w_star = vec({0.5, -1.0});
  s.regions = {Region::atom(vec({1, 0}), 0.3, 0.0, NoiseKind::gaussian, 0.3),
               Region::atom(vec({0, 1}), 0.25, 0.0, NoiseKind::uniform, 1.0),
               Region::atom(vec({1, 1}), 0.2, 0.0, NoiseKind::gaussian, 2.0),
               Region::atom(vec({-1, 2}), 0.15, 0.0, NoiseKind::uniform, 0.1),
               Region::atom(vec({3, -1}), 0.1, 0.0, NoiseKind::gaussian, 0.01)};
  return strata_reg::make_heteroscedastic_family(std::move(s), "atoms5");
}

// Noise-free family: y = x^T w* exactly.
inline JointDistribution realizable2() {
  MixtureSpec s;
  s.w_star = vec({2.0, -1.0});
  s.regions = {Region::box(vec({0.5, -1}), vec({1.5, 1}), 0.5), Region::box(vec({-1.5, -1}), vec({-0.5, 1}), 0.5)};
  return strata_reg::make_heteroscedastic_family(std::move(s), "realizable2");
}

struct RunResult {
  int status = -1;
  std::string output;
};

// Runs a shell command, capturing stdout and stderr.
inline RunResult run(const std::string& cmd) {
  RunResult r;
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen((cmd + " 2>&1").c_str(), "r"), pclose);
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe.get()) != nullptr) r.output += buf;
  const int raw = pclose(pipe.release());
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

}  // namespace fixtures
