#pragma once

// IsoFLOPs analysis: parabola fits over log10(N), compute-optimal power laws,
// per-pixel normalization, frontier projections and the compute-growth
// forecast.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pixscale/common.hpp"
#include "pixscale/training.hpp"

namespace pixscale {

enum class Direction { minimize, maximize };

inline const char* to_string(Direction d) { return d == Direction::minimize ? "minimize" : "maximize"; }

/// Metric names used throughout the registry and reports.
namespace metric {
inline constexpr const char* eval_loss = "eval_loss";
inline constexpr const char* probe_accuracy = "probe_accuracy";
inline constexpr const char* frechet_distance = "frechet_distance";
}  // namespace metric

inline Direction metric_direction(const std::string& name) {
  if (name == metric::eval_loss || name == metric::frechet_distance) return Direction::minimize;
  if (name == metric::probe_accuracy) return Direction::maximize;
  throw Error("unknown metric " + name);
}

struct ProfilePoint {
  double params = 0;  // N
  double tokens = 0;  // D
  double value = 0;
};

struct IsoProfile {
  double budget = 0;
  std::string metric = metric::eval_loss;
  Direction direction = Direction::minimize;
  std::vector<ProfilePoint> points;
  int resolution = 0;

  void validate() const {
    require(points.size() >= 3, "isoflop profile needs at least 3 points, got " + std::to_string(points.size()));
    std::vector<double> ns;
    for (const auto& p : points) {
      require(p.params > 0, "profile parameter counts must be positive");
      require(std::isfinite(p.value), "profile values must be finite");
      if (p.tokens > 0) {
        const double c = training_flops(p.params, p.tokens);
        require(std::abs(c / budget - 1.0) <= 0.01, "profile point spends " + std::to_string(c) +
                                                         " FLOPs, more than 1% away from budget " +
                                                         std::to_string(budget));
      }
      ns.push_back(p.params);
    }
    std::sort(ns.begin(), ns.end());
    require(std::adjacent_find(ns.begin(), ns.end()) == ns.end(), "profile parameter counts must be distinct");
  }
};

struct ParabolaFit {
  // value = c2 u^2 + c1 u + c0 with u = log10 N, in the metric's own sign.
  double c2 = 0, c1 = 0, c0 = 0;
  double u_opt = 0;
  double value_opt = 0;
  double u_min = 0, u_max = 0;
  Direction direction = Direction::minimize;
  bool extrapolated = false;  // vertex more than 0.5 decades outside the data

  double operator()(double u) const { return (c2 * u + c1) * u + c0; }
};

inline void to_json(nlohmann::json& j, const ParabolaFit& f) {
  j = nlohmann::json{{"c2", f.c2},         {"c1", f.c1},           {"c0", f.c0},
                     {"u_opt", f.u_opt},   {"value_opt", f.value_opt}, {"u_min", f.u_min},
                     {"u_max", f.u_max},   {"direction", to_string(f.direction)},
                     {"extrapolated", f.extrapolated}};
}

/// The fitted curvature opens the wrong way for the metric's direction.
class NoInteriorOptimum : public Error {
 public:
  explicit NoInteriorOptimum(ParabolaFit f)
      : Error("no interior optimum: fitted curvature c2=" + std::to_string(f.c2) + " for a " +
              to_string(f.direction) + " metric"),
        fit(f) {}
  ParabolaFit fit;
};

/// Unweighted least-squares quadratic in u = log10 N. Maximize-metrics are
/// negated internally so the vertex test is the same for both directions.
inline ParabolaFit fit_parabola(const IsoProfile& profile) {
  profile.validate();
  const auto n = static_cast<Eigen::Index>(profile.points.size());
  const double sign = profile.direction == Direction::maximize ? -1.0 : 1.0;
  Eigen::VectorXd u(n), v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    u(i) = std::log10(profile.points[static_cast<std::size_t>(i)].params);
    v(i) = sign * profile.points[static_cast<std::size_t>(i)].value;
  }
  const double mean_u = u.mean();
  Eigen::MatrixXd A(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = u(i) - mean_u;
    A(i, 0) = x * x;
    A(i, 1) = x;
    A(i, 2) = 1.0;
  }
  const Eigen::Vector3d alpha = A.colPivHouseholderQr().solve(v);

  ParabolaFit f;
  f.direction = profile.direction;
  f.u_min = u.minCoeff();
  f.u_max = u.maxCoeff();
  // Expand the centered fit back to powers of u, restoring the metric's sign.
  f.c2 = sign * alpha(0);
  f.c1 = sign * (alpha(1) - 2.0 * alpha(0) * mean_u);
  f.c0 = sign * (alpha(2) - alpha(1) * mean_u + alpha(0) * mean_u * mean_u);
  if (!(alpha(0) > 0.0)) {
    f.u_opt = alpha(0) == 0.0 ? mean_u : mean_u - alpha(1) / (2.0 * alpha(0));
    f.value_opt = f(f.u_opt);
    throw NoInteriorOptimum(f);
  }
  const double x_opt = -alpha(1) / (2.0 * alpha(0));
  f.u_opt = mean_u + x_opt;
  f.value_opt = sign * ((alpha(0) * x_opt + alpha(1)) * x_opt + alpha(2));
  f.extrapolated = f.u_opt < f.u_min - 0.5 || f.u_opt > f.u_max + 0.5;
  return f;
}

struct OptimalPoint {
  double budget = 0;
  double n_opt = 0;
  double d_opt = 0;
  double value_opt = 0;
  bool extrapolated = false;
  bool boundary = false;  // degenerate profile; best observed point reported
  std::optional<ParabolaFit> fit;
};

inline void to_json(nlohmann::json& j, const OptimalPoint& p) {
  j = nlohmann::json{{"C", p.budget},       {"N_opt", p.n_opt},          {"D_opt", p.d_opt},
                     {"value_opt", p.value_opt}, {"extrapolated", p.extrapolated}, {"boundary", p.boundary}};
  if (p.fit) j["fit"] = *p.fit;
}

/// N_opt = 10^u_opt and D_opt = C / (6 N_opt).
inline OptimalPoint optimal_point(const ParabolaFit& fit, double budget) {
  require(budget > 0, "budget must be positive");
  OptimalPoint p;
  p.budget = budget;
  p.n_opt = std::pow(10.0, fit.u_opt);
  p.d_opt = budget / (6.0 * p.n_opt);
  p.value_opt = fit.value_opt;
  p.extrapolated = fit.extrapolated;
  p.fit = fit;
  return p;
}

/// Parabola optimum when one exists; otherwise the best observed point,
/// flagged as a boundary/extrapolated result.
inline OptimalPoint profile_optimum(const IsoProfile& profile) {
  try {
    return optimal_point(fit_parabola(profile), profile.budget);
  } catch (const NoInteriorOptimum& e) {
    const bool maximize = profile.direction == Direction::maximize;
    const auto best = std::min_element(profile.points.begin(), profile.points.end(), [&](const auto& a, const auto& b) {
      return maximize ? a.value > b.value : a.value < b.value;
    });
    OptimalPoint p;
    p.budget = profile.budget;
    p.n_opt = best->params;
    p.d_opt = profile.budget / (6.0 * p.n_opt);
    p.value_opt = best->value;
    p.extrapolated = true;
    p.boundary = true;
    p.fit = e.fit;
    return p;
  }
}

// ---------------------------------------------------------------------------
// Power laws

struct PowerLawFit {
  double exponent = 0;
  double log10_coef = 0;  // log10 y = log10_coef + exponent * log10 x
  double r2 = 1;
  int n_points = 0;
  double log10_x_min = 0, log10_x_max = 0;

  double predict(double x) const { return std::pow(10.0, log10_coef + exponent * std::log10(x)); }
};

inline void to_json(nlohmann::json& j, const PowerLawFit& f) {
  j = nlohmann::json{{"exponent", f.exponent},       {"log10_coef", f.log10_coef},   {"r2", f.r2},
                     {"n_points", f.n_points},       {"log10_C_min", f.log10_x_min}, {"log10_C_max", f.log10_x_max}};
}

inline void from_json(const nlohmann::json& j, PowerLawFit& f) {
  f.exponent = j.at("exponent").get<double>();
  f.log10_coef = j.at("log10_coef").get<double>();
  f.r2 = j.value("r2", 1.0);
  f.n_points = j.value("n_points", 2);
  f.log10_x_min = j.value("log10_C_min", 0.0);
  f.log10_x_max = j.value("log10_C_max", 0.0);
}

/// Ordinary least squares of log10 y on log10 x.
inline PowerLawFit fit_power_law(std::span<const std::pair<double, double>> pairs) {
  require(pairs.size() >= 2, "power-law fit needs at least 2 points");
  const double n = static_cast<double>(pairs.size());
  double sx = 0, sy = 0;
  for (const auto& [x, y] : pairs) {
    require(x > 0 && y > 0, "power-law fit needs positive values");
    sx += std::log10(x);
    sy += std::log10(y);
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  PowerLawFit f;
  f.log10_x_min = std::numeric_limits<double>::infinity();
  f.log10_x_max = -std::numeric_limits<double>::infinity();
  for (const auto& [x, y] : pairs) {
    const double lx = std::log10(x) - mx, ly = std::log10(y) - my;
    sxx += lx * lx;
    sxy += lx * ly;
    syy += ly * ly;
    f.log10_x_min = std::min(f.log10_x_min, std::log10(x));
    f.log10_x_max = std::max(f.log10_x_max, std::log10(x));
  }
  require(sxx > 0, "power-law fit needs at least two distinct x values");
  f.exponent = sxy / sxx;
  f.log10_coef = my - f.exponent * mx;
  f.r2 = syy > 0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  f.n_points = static_cast<int>(pairs.size());
  return f;
}

inline PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& pairs) {
  return fit_power_law(std::span<const std::pair<double, double>>(pairs));
}

/// D_opt(C) / N_opt(C).
inline double token_param_ratio(const PowerLawFit& n_fit, const PowerLawFit& d_fit, double budget) {
  return d_fit.predict(budget) / n_fit.predict(budget);
}

// ---------------------------------------------------------------------------
// Metric frontier and projections

/// Metric along the compute-optimal frontier, linear in log10 C.
struct FrontierFit {
  std::string metric;
  double intercept = 0;
  double slope = 0;  // per decade of compute
  double r2 = 1;
  bool clamp_unit = false;  // accuracies are clamped to [0, 1]

  double predict(double budget) const {
    const double v = intercept + slope * std::log10(budget);
    return clamp_unit ? std::clamp(v, 0.0, 1.0) : v;
  }
};

inline void to_json(nlohmann::json& j, const FrontierFit& f) {
  j = nlohmann::json{{"metric", f.metric}, {"intercept", f.intercept}, {"slope_per_decade", f.slope},
                     {"r2", f.r2},         {"clamp_unit", f.clamp_unit}};
}

inline void from_json(const nlohmann::json& j, FrontierFit& f) {
  f.metric = j.at("metric").get<std::string>();
  f.intercept = j.at("intercept").get<double>();
  f.slope = j.at("slope_per_decade").get<double>();
  f.r2 = j.value("r2", 1.0);
  f.clamp_unit = j.value("clamp_unit", false);
}

inline FrontierFit fit_frontier(const std::string& metric_name, std::span<const OptimalPoint> optima) {
  require(optima.size() >= 2, "frontier fit needs at least 2 budgets");
  double sx = 0, sy = 0;
  for (const auto& o : optima) {
    sx += std::log10(o.budget);
    sy += o.value_opt;
  }
  const double n = static_cast<double>(optima.size());
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& o : optima) {
    const double dx = std::log10(o.budget) - mx, dy = o.value_opt - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  require(sxx > 0, "frontier fit needs distinct budgets");
  FrontierFit f;
  f.metric = metric_name;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  f.clamp_unit = metric_name == metric::probe_accuracy;
  return f;
}

struct Projection {
  double budget = 0;
  double n_opt = 0;
  double d_opt = 0;
  double n_per_pixel = 0;
  double d_per_pixel = 0;  // images
  std::optional<double> metric_value;
  std::string metric;
  double extrapolation_decades = 0;  // beyond the largest fitted budget
  int resolution = 0;
};

inline void to_json(nlohmann::json& j, const Projection& p) {
  j = nlohmann::json{{"C", p.budget},         {"N_opt", p.n_opt},
                     {"D_opt", p.d_opt},      {"N_pp", p.n_per_pixel},
                     {"D_pp", p.d_per_pixel}, {"metric", p.metric},
                     {"s", p.resolution},     {"extrapolation_decades", p.extrapolation_decades}};
  j["value"] = p.metric_value ? nlohmann::json(*p.metric_value) : nlohmann::json(nullptr);
}

inline Projection project(const PowerLawFit& n_fit, const PowerLawFit& d_fit, const FrontierFit* frontier,
                          double budget, int resolution) {
  require(budget > 0, "projection budget must be positive");
  require(resolution >= 1, "resolution must be positive");
  Projection p;
  p.budget = budget;
  p.resolution = resolution;
  p.n_opt = n_fit.predict(budget);
  p.d_opt = d_fit.predict(budget);
  const double pixels = static_cast<double>(resolution) * resolution;
  p.n_per_pixel = p.n_opt / pixels;
  p.d_per_pixel = p.d_opt / pixels;
  if (frontier) {
    p.metric = frontier->metric;
    p.metric_value = frontier->predict(budget);
  }
  p.extrapolation_decades = std::max(0.0, std::log10(budget) - std::max(n_fit.log10_x_max, d_fit.log10_x_max));
  return p;
}

/// Years until compute grows from `now` to `target` at `growth` x per year.
inline double forecast_years(double now, double target, double growth) {
  require(growth > 1.0, "annual growth factor must exceed 1");
  require(now > 0 && target >= now, "target compute must be at least current compute");
  return std::log(target / now) / std::log(growth);
}

// ---------------------------------------------------------------------------
// Registry -> profiles -> report

/// Groups records into per-budget profiles for `metric_name`; budgets within
/// 1% of each other are merged.
inline std::vector<IsoProfile> build_profiles(std::span<const RunRecord> records, const std::string& metric_name,
                                              std::optional<int> resolution = std::nullopt) {
  const Direction dir = metric_direction(metric_name);
  std::vector<IsoProfile> profiles;
  std::vector<RunRecord> sorted(records.begin(), records.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.budget != b.budget ? a.budget < b.budget : a.params < b.params;
  });
  for (const auto& r : sorted) {
    if (resolution && r.resolution != *resolution) continue;
    double value;
    if (metric_name == metric::eval_loss) {
      value = r.final_eval_loss;
    } else {
      const auto it = r.metrics.find(metric_name);
      if (it == r.metrics.end()) continue;
      value = it->second;
    }
    if (profiles.empty() || std::abs(r.budget / profiles.back().budget - 1.0) > 0.01 ||
        profiles.back().resolution != r.resolution) {
      IsoProfile p;
      p.budget = r.budget;
      p.metric = metric_name;
      p.direction = dir;
      p.resolution = r.resolution;
      profiles.push_back(std::move(p));
    }
    profiles.back().points.push_back({static_cast<double>(r.params), static_cast<double>(r.tokens), value});
  }
  return profiles;
}

struct ScalingReport {
  std::string metric;
  int resolution = 0;
  std::vector<IsoProfile> profiles;
  std::vector<OptimalPoint> optima;
  PowerLawFit n_fit;  // N_opt ~ C^a
  PowerLawFit d_fit;  // D_opt ~ C^b
  FrontierFit frontier;
};

inline void to_json(nlohmann::json& j, const ScalingReport& r) {
  j = nlohmann::json{{"metric", r.metric}, {"s", r.resolution}, {"optima", r.optima},
                     {"a", r.n_fit},       {"b", r.d_fit},      {"frontier", r.frontier}};
  j["a_plus_b"] = r.n_fit.exponent + r.d_fit.exponent;
}

inline ScalingReport analyze(std::span<const IsoProfile> profiles) {
  require(profiles.size() >= 2, "scaling fit needs at least 2 budgets, got " + std::to_string(profiles.size()));
  ScalingReport rep;
  rep.metric = profiles.front().metric;
  rep.resolution = profiles.front().resolution;
  rep.profiles.assign(profiles.begin(), profiles.end());
  std::vector<std::pair<double, double>> n_pairs, d_pairs;
  for (const auto& p : profiles) {
    require(p.points.size() >= 3, "insufficient data: budget " + std::to_string(p.budget) + " has " +
                                      std::to_string(p.points.size()) + " runs, need 3");
    rep.optima.push_back(profile_optimum(p));
    n_pairs.emplace_back(p.budget, rep.optima.back().n_opt);
    d_pairs.emplace_back(p.budget, rep.optima.back().d_opt);
  }
  rep.n_fit = fit_power_law(n_pairs);
  rep.d_fit = fit_power_law(d_pairs);
  rep.frontier = fit_frontier(rep.metric, rep.optima);
  return rep;
}

// ---------------------------------------------------------------------------
// Synthetic run families with known ground truth

struct SyntheticTruth {
  double a = 0.55;                 // N_opt = n_coef * C^a
  double n_coef_log10 = -2.5;      // log10 of n_coef
  double curvature = 1.0;          // metric rise per decade^2 away from N_opt
  double floor = 1.0;              // metric at the optimum for the smallest budget
  double floor_decay = 0.05;       // floor ~ C^-floor_decay
  double noise = 0.03;             // multiplicative, per point
  double center_jitter = 0.2;      // ladder centre offset from the true optimum, decades
};

/// Generates `budgets.size()` x `ladder.size()` eval-loss records. Each
/// budget's ladder (log10 offsets) is centred near the true optimum with a
/// random shift; D = C / (6N) exactly.
inline std::vector<RunRecord> synthetic_records(const SyntheticTruth& truth, std::span<const double> budgets,
                                                std::span<const double> ladder, std::uint64_t seed, int resolution = 32) {
  Rng rng(seed);
  std::vector<RunRecord> out;
  for (double c : budgets) {
    const double u_true = truth.n_coef_log10 + truth.a * std::log10(c);
    const double center = u_true + rng.uniform(-truth.center_jitter, truth.center_jitter);
    const double floor = truth.floor * std::pow(c / budgets.front(), -truth.floor_decay);
    for (double off : ladder) {
      const double u = center + off;
      const double clean = floor + truth.curvature * (u - u_true) * (u - u_true);
      RunRecord r;
      r.params = static_cast<std::int64_t>(std::llround(std::pow(10.0, u)));
      r.budget = c;
      r.tokens = static_cast<std::int64_t>(std::llround(c / (6.0 * static_cast<double>(r.params))));
      r.flops = training_flops(static_cast<double>(r.params), static_cast<double>(r.tokens));
      r.resolution = resolution;
      r.final_eval_loss = clean * (1.0 + truth.noise * rng.normal());
      r.spec = ModelSpec{};
      r.seed = seed;
      char key[64];
      std::snprintf(key, sizeof(key), "synthetic-%.6g-%lld", c, static_cast<long long>(r.params));
      r.key = key;
      out.push_back(std::move(r));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Published large-budget projections (accuracy and completion FD tables).

struct ReferenceProjection {
  const char* metric;  // metric::probe_accuracy or metric::frechet_distance
  int resolution;
  double budget;
  double value;        // accuracy in [0,1] or FD
  double n_opt;
  double d_per_pixel;  // images
};

inline const std::vector<ReferenceProjection>& reference_projection_table() {
  static const std::vector<ReferenceProjection> table = {
      {metric::probe_accuracy, 16, 1e22, 0.421, 2.67e9, 2.43e9},
      {metric::probe_accuracy, 16, 1e23, 0.474, 7.55e9, 8.62e9},
      {metric::probe_accuracy, 16, 1e24, 0.538, 21.32e9, 30.5e9},
      {metric::probe_accuracy, 32, 1e22, 0.600, 4.02e9, 0.40e9},
      {metric::probe_accuracy, 32, 1e23, 0.694, 14.71e9, 1.1e9},
      {metric::probe_accuracy, 32, 1e24, 0.787, 53.8e9, 3.02e9},
      {metric::probe_accuracy, 64, 1e22, 0.614, 6.51e9, 62.5e6},
      {metric::probe_accuracy, 64, 1e23, 0.719, 37.42e9, 0.11e9},
      {metric::probe_accuracy, 64, 1e24, 0.823, 215.3e9, 0.18e9},
      {metric::frechet_distance, 16, 1e22, 918.3, 1.05e9, 6.14e9},
      {metric::frechet_distance, 16, 1e23, 862.8, 2.85e9, 22.8e9},
      {metric::frechet_distance, 16, 1e24, 807.4, 7.66e9, 84.9e9},
      {metric::frechet_distance, 32, 1e22, 464.5, 1.1e9, 1.47e9},
      {metric::frechet_distance, 32, 1e23, 398.4, 3.3e9, 4.92e9},
      {metric::frechet_distance, 32, 1e24, 332.3, 9.89e9, 16.4e9},
      {metric::frechet_distance, 64, 1e22, 235.1, 1.3e9, 0.31e9},
      {metric::frechet_distance, 64, 1e23, 162.6, 4.89e9, 0.83e9},
      {metric::frechet_distance, 64, 1e24, 90.1, 18.38e9, 2.21e9},
  };
  return table;
}

/// Published 32x32 compute-optimal exponents (a, b) per metric.
struct ReferenceExponents {
  const char* metric;
  double a;
  double b;
};

inline constexpr std::array<ReferenceExponents, 3> kReferenceExponents32 = {{
    {metric::eval_loss, 0.55, 0.45},
    {metric::probe_accuracy, 0.56, 0.44},
    {metric::frechet_distance, 0.49, 0.51},
}};

/// Power law with a given exponent passing through one calibration point.
inline PowerLawFit calibrated_power_law(double exponent, double budget, double value) {
  PowerLawFit f;
  f.exponent = exponent;
  f.log10_coef = std::log10(value) - exponent * std::log10(budget);
  f.n_points = 1;
  f.r2 = 1.0;
  f.log10_x_min = f.log10_x_max = std::log10(budget);
  return f;
}

}  // namespace pixscale
