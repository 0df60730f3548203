#include "strata_reg/config.hpp"

#include <fmt/format.h>

#include <limits>
#include <sstream>

#include "strata_reg/error.hpp"

namespace strata_reg {

namespace {

using nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();

double number_or(const json& j, const char* key, double fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  if (!j.at(key).is_number()) throw InvalidArgument(fmt::format("config: '{}' must be a number", key));
  return j.at(key).get<double>();
}

const json& required(const json& j, const char* key, const char* where) {
  if (!j.is_object() || !j.contains(key)) {
    throw InvalidArgument(fmt::format("config: {} is missing '{}'", where, key));
  }
  return j.at(key);
}

NoiseKind noise_from_string(const std::string& s) {
  if (s == "none") return NoiseKind::none;
  if (s == "gaussian") return NoiseKind::gaussian;
  if (s == "uniform") return NoiseKind::uniform;
  throw InvalidArgument(fmt::format("config: unknown noise kind '{}'", s));
}

// null at the front of a bound list means -inf, anywhere else +inf.
std::vector<double> bounds_from_json(const json& j) {
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].is_null()) {
      out.push_back(i == 0 ? -kInf : kInf);
    } else {
      out.push_back(j[i].get<double>());
    }
  }
  return out;
}

// Per-coordinate version for box cells: null in lo is -inf, in hi +inf.
Vector box_bound(const json& j, double null_value) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = j[i].is_null() ? null_value : j[i].get<double>();
  }
  return v;
}

Region region_from_json(const json& r) {
  const std::string shape = r.value("shape", "box");
  const double weight = required(r, "weight", "region").get<double>();
  const double offset = number_or(r, "offset", 0.0);
  const NoiseKind noise = noise_from_string(r.value("noise", "none"));
  const double scale = number_or(r, "scale", 0.0);
  if (shape == "atom") return Region::atom(vector_from_json(required(r, "at", "atom region")), weight, offset, noise, scale);
  if (shape == "box") {
    return Region::box(vector_from_json(required(r, "lo", "box region")),
                       vector_from_json(required(r, "hi", "box region")), weight, offset, noise, scale);
  }
  if (shape == "gaussian") {
    return Region::gaussian(vector_from_json(required(r, "center", "gaussian region")),
                            vector_from_json(required(r, "sd", "gaussian region")), weight, offset, noise, scale);
  }
  throw InvalidArgument(fmt::format("config: unknown region shape '{}'", shape));
}

}  // namespace

json vector_to_json(const Vector& v) {
  json j = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) j.push_back(v[k]);
  return j;
}

Vector vector_from_json(const json& j) {
  if (!j.is_array()) throw InvalidArgument("config: expected a numeric array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

JointDistribution family_from_json(const json& j) {
  const std::string name = required(j, "name", "family").get<std::string>();
  if (name == "lower_bound") {
    LowerBoundParams p;
    p.sigma = number_or(j, "sigma", p.sigma);
    p.alpha = number_or(j, "alpha", p.alpha);
    p.eta = number_or(j, "eta", p.eta);
    return make_lower_bound_family(p);
  }
  if (name == "mixture") {
    MixtureSpec spec;
    spec.w_star = vector_from_json(required(j, "w_star", "mixture family"));
    for (const json& r : required(j, "regions", "mixture family")) spec.regions.push_back(region_from_json(r));
    spec.expose_exact_moments = j.value("exact_moments", true);
    return make_heteroscedastic_family(std::move(spec), j.value("label", std::string("mixture")));
  }
  throw InvalidArgument(fmt::format("config: unknown family '{}'", name));
}

Partition partition_from_json(const json& j, const JointDistribution& dist, const SecondMoment& sm) {
  const std::string kind = required(j, "kind", "partition").get<std::string>();
  if (kind == "regions") return Partition::regions(dist);
  if (kind == "atoms") {
    std::vector<Vector> pts;
    for (const json& p : required(j, "points", "atom partition")) pts.push_back(vector_from_json(p));
    return Partition::atoms(std::move(pts));
  }
  if (kind == "boxes") {
    std::vector<std::pair<Vector, Vector>> cells;
    for (const json& c : required(j, "cells", "box partition")) {
      cells.emplace_back(box_bound(required(c, "lo", "box cell"), -kInf), box_bound(required(c, "hi", "box cell"), kInf));
    }
    return Partition::boxes(std::move(cells));
  }
  if (kind == "intervals") {
    return Partition::intervals(j.value("coord", 0), bounds_from_json(required(j, "edges", "interval partition")));
  }
  if (kind == "shells") return Partition::shells(bounds_from_json(required(j, "radii", "shell partition")), sm);
  throw InvalidArgument(fmt::format("config: unknown partition kind '{}'", kind));
}

LearnerConstants parse_constants(const std::string& csv) {
  std::vector<double> v;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidArgument(fmt::format("constants: '{}' is not a number", item));
    }
  }
  if (v.size() != 4) throw InvalidArgument("constants: expected four values C,c,c',c''");
  for (double x : v) {
    if (!(x > 0.0)) throw InvalidArgument("constants must be positive");
  }
  return {v[0], v[1], v[2], v[3]};
}

ActiveConfig active_config_from_json(const json& j, ActiveConfig cfg) {
  if (j.is_null()) return cfg;
  if (j.contains("m")) cfg.m = j.at("m").get<std::size_t>();
  cfg.delta = number_or(j, "delta", cfg.delta);
  if (j.contains("b") && !j.at("b").is_null()) cfg.b = j.at("b").get<double>();
  if (j.contains("constants")) {
    const json& c = j.at("constants");
    if (c.is_array()) {
      if (c.size() != 4) throw InvalidArgument("config: constants array needs four entries");
      cfg.constants = {c[0].get<double>(), c[1].get<double>(), c[2].get<double>(), c[3].get<double>()};
    } else {
      cfg.constants.C = number_or(c, "C", cfg.constants.C);
      cfg.constants.c = number_or(c, "c", cfg.constants.c);
      cfg.constants.c_prime = number_or(c, "c_prime", cfg.constants.c_prime);
      cfg.constants.c_dprime = number_or(c, "c_dprime", cfg.constants.c_dprime);
    }
  }
  if (j.contains("base")) {
    const json& b = j.at("base");
    const std::string mode = b.value("mode", std::string("mom"));
    if (mode == "mom" || mode == "median-of-means") {
      cfg.base.mode = BaseMode::median_of_means;
    } else if (mode == "ols" || mode == "plain-ols") {
      cfg.base.mode = BaseMode::plain_ols;
    } else {
      throw InvalidArgument(fmt::format("config: unknown base learner mode '{}'", mode));
    }
    cfg.base.c_k = number_or(b, "c_k", cfg.base.c_k);
  }
  return cfg;
}

json moments_to_json(const JointDistribution& dist, const SecondMoment& sm, const Partition& partition,
                     const Vector& w_opt, const StratumMoments& mu) {
  json sigma = json::array();
  for (Eigen::Index r = 0; r < sm.sigma().rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < sm.sigma().cols(); ++c) row.push_back(sm.sigma()(r, c));
    sigma.push_back(row);
  }
  json cells = json::array();
  for (std::size_t i = 0; i < partition.size(); ++i) {
    cells.push_back({{"p", partition.probs()[i]}, {"theta", partition.thetas()[i]}, {"mu", mu.mu[i]}});
  }
  return {{"family", dist.name()},
          {"sigma", sigma},
          {"sigma_provenance", std::string(to_string(sm.provenance()))},
          {"w_opt", vector_to_json(w_opt)},
          {"noise_bound_b", dist.noise_bound_b()},
          {"sup_dual_sq", dist.sup_dual_sq(sm)},
          {"cells", cells},
          {"cell_provenance", std::string(to_string(partition.stats().provenance))},
          {"partition", partition.config()}};
}

ProblemSetup prepare_problem(const json& family, const json& partition, std::uint64_t seed, std::size_t pool_size) {
  JointDistribution dist = family_from_json(family);
  Rng rng(derive_seed(seed, {0x5e7u}));
  Rng sm_rng = rng.split(1);
  SecondMoment sm = estimate_second_moment(dist, pool_size, sm_rng);
  Rng w_rng = rng.split(2);
  Vector w_opt = optimal_predictor(dist, sm, pool_size, w_rng).w;
  Partition part = partition_from_json(partition, dist, sm);
  Rng part_rng = rng.split(3);
  const std::size_t part_pool = std::max(pool_size, 10000 * part.size());
  part = estimate_partition_stats(dist, sm, std::move(part), part_pool, part_rng);
  Rng mu_rng = rng.split(4);
  StratumMoments mu = stratum_moments(dist, sm, part, w_opt, part_pool, mu_rng);
  return ProblemSetup{std::move(dist), std::move(sm), std::move(w_opt), std::move(part), std::move(mu)};
}

}  // namespace strata_reg
