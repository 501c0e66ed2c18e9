#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "coordinates.hpp"
#include "correlation.hpp"
#include "distributions.hpp"
#include "error.hpp"
#include "tables.hpp"

namespace downscale {

/// How the individual-level deviation of a unit is derived from the pooled
/// deviation sigma of unit aggregates.
///   paper   sigma * sqrt(M) * sqrt(n_m)   (also scales with the unit count M)
///   sqrt_n  sigma * sqrt(n_m)             (a mean of n_m draws has variance / n_m)
///   pooled  sigma
enum class SdMode { paper, sqrt_n, pooled };

inline std::string_view to_string(SdMode m) {
  switch (m) {
    case SdMode::paper: return "paper";
    case SdMode::sqrt_n: return "sqrt_n";
    case SdMode::pooled: return "pooled";
  }
  return "sqrt_n";
}

inline SdMode parse_sd_mode(std::string_view s) {
  if (s == "paper") return SdMode::paper;
  if (s == "sqrt_n") return SdMode::sqrt_n;
  if (s == "pooled") return SdMode::pooled;
  throw ValidationError("sd_mode must be one of paper|sqrt_n|pooled, got '" + std::string(s) + "'");
}

inline constexpr double kMinBetaVariance = 1e-6;
inline constexpr double kBetaVarianceCeiling = 0.999;
inline constexpr double kMinContinuousMean = 1e-12;

/// Marginal law of one coordinate in one unit, with the moments it was
/// solved from.
struct MarginalSpec {
  std::variant<BetaLaw, LogNormalLaw> law;
  double mean = 0.0;
  double sd = 0.0;

  bool is_beta() const noexcept { return std::holds_alternative<BetaLaw>(law); }
  const BetaLaw& beta() const { return std::get<BetaLaw>(law); }
  const LogNormalLaw& lognormal() const { return std::get<LogNormalLaw>(law); }
};

/// Method-of-moments beta fit. The variance is clamped into
/// [1e-6, 0.999 * mean * (1 - mean)].
inline BetaLaw solve_beta(double mean, double sd) {
  if (!(mean > 0.0 && mean < 1.0)) throw ValidationError("solve_beta: mean must lie in (0, 1)");
  if (!(sd >= 0.0) || !std::isfinite(sd)) throw ValidationError("solve_beta: sd must be finite and >= 0");
  const double ceiling = kBetaVarianceCeiling * mean * (1.0 - mean);
  const double v = std::clamp(sd * sd, std::min(kMinBetaVariance, ceiling), ceiling);
  const double k = mean * (1.0 - mean) / v - 1.0;
  return {mean * k, (1.0 - mean) * k};
}

inline LogNormalLaw solve_lognormal(double mean, double sd) {
  if (!(mean > 0.0) || !std::isfinite(mean)) throw ValidationError("solve_lognormal: mean must be > 0");
  if (!(sd >= 0.0) || !std::isfinite(sd)) throw ValidationError("solve_lognormal: sd must be finite and >= 0");
  const double r = sd / mean;
  const double var_log = std::log1p(r * r);
  return {std::log(mean) - 0.5 * var_log, std::sqrt(var_log)};
}

inline double beta_mean(const BetaLaw& b) { return b.alpha / (b.alpha + b.beta); }
inline double beta_variance(const BetaLaw& b) {
  const double s = b.alpha + b.beta;
  return b.alpha * b.beta / (s * s * (s + 1.0));
}
inline double lognormal_mean(const LogNormalLaw& l) {
  return std::exp(l.mu_log + 0.5 * l.sigma_log * l.sigma_log);
}
inline double lognormal_sd(const LogNormalLaw& l) {
  const double s2 = l.sigma_log * l.sigma_log;
  return lognormal_mean(l) * std::sqrt(std::expm1(s2));
}

/// Unbiased sample standard deviation of each coordinate across units not in
/// `exclude`. Zero when fewer than two units remain.
inline std::vector<double> pooled_sd(const CoarseTable& coarse, const std::vector<Coordinate>& coords,
                                     const std::set<std::string>& exclude = {}) {
  const Eigen::MatrixXd x = coordinate_matrix(coarse, coords, exclude);
  std::vector<double> out(coords.size(), 0.0);
  if (x.rows() < 2) return out;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    const double ss = (x.col(j).array() - mean).square().sum();
    out[static_cast<std::size_t>(j)] = std::sqrt(ss / static_cast<double>(x.rows() - 1));
  }
  return out;
}

inline double unit_sd(double pooled, SdMode mode, std::size_t estimation_units, std::size_t population) {
  switch (mode) {
    case SdMode::paper:
      return pooled * std::sqrt(static_cast<double>(estimation_units)) *
             std::sqrt(static_cast<double>(population));
    case SdMode::sqrt_n: return pooled * std::sqrt(static_cast<double>(population));
    case SdMode::pooled: return pooled;
  }
  return pooled;
}

/// Per unit and coordinate: beta marginals for class proportions (mean
/// clamped half a count away from 0 and 1) and lognormal marginals for
/// continuous means. Result is indexed [unit][coordinate].
inline std::vector<std::vector<MarginalSpec>> fit_unit_marginals(
    const CoarseTable& coarse, const std::vector<Coordinate>& coords, const std::vector<double>& pooled,
    SdMode mode, std::size_t estimation_units) {
  if (pooled.size() != coords.size())
    throw ValidationError("fit_unit_marginals: one pooled sd per coordinate required");
  std::vector<std::vector<MarginalSpec>> out;
  out.reserve(coarse.units.size());
  for (const auto& unit : coarse.units) {
    std::vector<MarginalSpec> row;
    row.reserve(coords.size());
    for (std::size_t d = 0; d < coords.size(); ++d) {
      const double sd = unit_sd(pooled[d], mode, estimation_units, unit.population);
      double mu = coordinate_value(unit, coords[d]);
      MarginalSpec spec;
      spec.sd = sd;
      if (coords[d].categorical()) {
        const double half = 0.5 / static_cast<double>(unit.population);
        mu = std::clamp(mu, half, 1.0 - half);
        spec.law = solve_beta(mu, sd);
      } else {
        mu = std::max(mu, kMinContinuousMean);
        spec.law = solve_lognormal(mu, sd);
      }
      spec.mean = mu;
      row.push_back(spec);
    }
    out.push_back(std::move(row));
  }
  return out;
}

/// Quantile function of one marginal, with per-law constants precomputed.
class MarginalQuantile {
 public:
  explicit MarginalQuantile(const MarginalSpec& spec)
      : beta_(spec.is_beta() ? BetaDistribution(spec.beta()) : BetaDistribution(1.0, 1.0)),
        is_beta_(spec.is_beta()),
        lognormal_(spec.is_beta() ? LogNormalLaw{} : spec.lognormal()) {}

  double operator()(double lower, double upper) const {
    return is_beta_ ? beta_.quantile(lower, upper) : lognormal_quantile(lognormal_, lower, upper);
  }

 private:
  BetaDistribution beta_;
  bool is_beta_;
  LogNormalLaw lognormal_;
};

}  // namespace downscale
