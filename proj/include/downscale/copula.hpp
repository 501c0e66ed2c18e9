#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "coordinates.hpp"
#include "correlation.hpp"
#include "distributions.hpp"
#include "error.hpp"
#include "marginals.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "schema.hpp"
#include "tables.hpp"

namespace downscale {

struct UnitInfo {
  std::string unit_id;
  std::size_t population = 0;
};

/// Gaussian copula over a set of coordinates with per-unit marginals.
struct CopulaModel {
  Schema features;  // the modelled features, schema order
  std::vector<Coordinate> coordinates;
  CorrelationMatrix correlation = CorrelationMatrix::identity(0);
  std::vector<UnitInfo> units;
  std::vector<std::vector<MarginalSpec>> marginals;  // [unit][coordinate]
  std::vector<double> pooled_sigma;                   // per coordinate
  bool independence_fallback = false;

  std::size_t dim() const noexcept { return coordinates.size(); }
};

struct CopulaFitOptions {
  SdMode sd_mode = SdMode::sqrt_n;
  std::set<std::string> exclude;  // flagged units, left out of pooled estimates
  /// Use the identity correlation when there are too few units to estimate
  /// one, instead of failing.
  bool allow_independence_fallback = false;
};

inline Schema select_features(const Schema& schema, const std::vector<std::string>& names) {
  Schema out;
  for (const auto& f : schema)
    if (std::find(names.begin(), names.end(), f.name) != names.end()) out.push_back(f);
  return out;
}

/// Fits correlation, pooled deviations and per-unit marginals for the listed
/// features.
inline CopulaModel fit_copula(const CoarseTable& coarse, const Schema& schema,
                              const std::vector<std::string>& feature_names,
                              const CopulaFitOptions& options = {}) {
  CopulaModel model;
  model.features = select_features(schema, feature_names);
  model.coordinates = coordinates_of(schema, feature_names);
  for (const auto& u : coarse.units) model.units.push_back({u.unit_id, u.population});

  std::size_t estimation_units = 0;
  for (const auto& u : coarse.units) estimation_units += options.exclude.count(u.unit_id) ? 0 : 1;

  if (options.allow_independence_fallback && estimation_units < model.coordinates.size() + 2) {
    model.correlation = CorrelationMatrix::identity(static_cast<Eigen::Index>(model.coordinates.size()));
    model.independence_fallback = true;
  } else {
    model.correlation = estimate_correlation(coarse, model.coordinates, options.exclude);
  }
  model.pooled_sigma = pooled_sd(coarse, model.coordinates, options.exclude);
  model.marginals =
      fit_unit_marginals(coarse, model.coordinates, model.pooled_sigma, options.sd_mode, estimation_units);
  return model;
}

/// The same copula restricted to a subset of its features, with the
/// correlation submatrix repaired on its own.
inline CopulaModel restrict_model(const CopulaModel& model, const std::vector<std::string>& feature_names) {
  CopulaModel out;
  out.features = select_features(model.features, feature_names);
  std::vector<Eigen::Index> keep;
  for (std::size_t d = 0; d < model.coordinates.size(); ++d) {
    if (std::find(feature_names.begin(), feature_names.end(), model.coordinates[d].feature) ==
        feature_names.end())
      continue;
    keep.push_back(static_cast<Eigen::Index>(d));
    out.coordinates.push_back(model.coordinates[d]);
    out.pooled_sigma.push_back(model.pooled_sigma[d]);
  }
  out.correlation = model.correlation.restrict_to(keep);
  out.units = model.units;
  for (const auto& row : model.marginals) {
    std::vector<MarginalSpec> r;
    for (auto d : keep) r.push_back(row[static_cast<std::size_t>(d)]);
    out.marginals.push_back(std::move(r));
  }
  out.independence_fallback = model.independence_fallback;
  return out;
}

namespace detail {

inline std::vector<MarginalQuantile> unit_quantiles(const CopulaModel& model, std::size_t unit) {
  std::vector<MarginalQuantile> q;
  q.reserve(model.dim());
  for (const auto& spec : model.marginals.at(unit)) q.emplace_back(spec);
  return q;
}

inline void sample_rows(const CopulaModel& model, const std::vector<MarginalQuantile>& quantiles,
                        std::size_t n, SeededRng& rng, Eigen::MatrixXd& out) {
  const auto d = static_cast<Eigen::Index>(model.dim());
  const Eigen::MatrixXd& lower = model.correlation.cholesky_factor();
  out.resize(static_cast<Eigen::Index>(n), d);
  Eigen::VectorXd eps(d), z(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) eps(j) = rng.normal();
    z.noalias() = lower.triangularView<Eigen::Lower>() * eps;
    for (Eigen::Index j = 0; j < d; ++j) {
      // u = Phi(z), y = F^-1(u); both tails are carried for precision.
      const double u = normal_cdf(z(j));
      const double u_upper = normal_cdf(-z(j));
      const double y = quantiles[static_cast<std::size_t>(j)](u, u_upper);
      if (!std::isfinite(y)) throw NumericalError("copula_sample_unit: non-finite marginal draw");
      out(static_cast<Eigen::Index>(i), j) = y;
    }
  }
}

}  // namespace detail

/// Raw Gaussian-copula draws for one unit: n_m rows, one column per
/// coordinate, before categorical renormalization.
inline Eigen::MatrixXd sample_unit_coordinates(const CopulaModel& model, std::size_t unit, SeededRng& rng,
                                               std::size_t n) {
  Eigen::MatrixXd out;
  detail::sample_rows(model, detail::unit_quantiles(model, unit), n, rng, out);
  return out;
}

inline Eigen::MatrixXd sample_unit_coordinates(const CopulaModel& model, std::size_t unit, SeededRng& rng) {
  return sample_unit_coordinates(model, unit, rng, model.units.at(unit).population);
}

namespace detail {

// Turns raw coordinate draws of one unit into cells written at rows
// [offset, offset + n) of the destination columns (schema order of
// model.features).
inline void write_cells(const CopulaModel& model, const Eigen::MatrixXd& raw, std::size_t offset,
                        std::vector<Column>& columns) {
  const auto n = static_cast<std::size_t>(raw.rows());
  std::size_t coord = 0;
  for (std::size_t f = 0; f < model.features.size(); ++f) {
    const auto& feature = model.features[f];
    Column& col = columns[f];
    if (!feature.categorical()) {
      for (std::size_t i = 0; i < n; ++i)
        col.values[offset + i] = raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(coord));
      ++coord;
      continue;
    }
    const std::size_t c = feature.num_classes();
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t k = 0; k < c; ++k) sum += raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(coord + k));
      auto cell = col.distribution(offset + i);
      for (std::size_t k = 0; k < c; ++k) {
        const double y = raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(coord + k));
        // All draws underflowing to zero leaves no information: uniform.
        cell[k] = sum > 0.0 ? y / sum : 1.0 / static_cast<double>(c);
      }
    }
    coord += c;
  }
}

inline std::vector<Column> empty_columns(const Schema& features, std::size_t rows) {
  std::vector<Column> cols;
  for (const auto& f : features) {
    if (f.categorical())
      cols.push_back(Column::make_distributions(f.num_classes(), std::vector<double>(rows * f.num_classes())));
    else
      cols.push_back(Column::make_reals(std::vector<double>(rows)));
  }
  return cols;
}

}  // namespace detail

/// Algorithm-1 sampling for one unit: n_m individuals, probability-vector
/// cells for categorical features and reals for continuous ones. Returned
/// columns follow model.features.
inline std::vector<Column> copula_sample_unit(const CopulaModel& model, std::size_t unit, SeededRng& rng) {
  const Eigen::MatrixXd raw = sample_unit_coordinates(model, unit, rng);
  auto cols = detail::empty_columns(model.features, static_cast<std::size_t>(raw.rows()));
  detail::write_cells(model, raw, 0, cols);
  return cols;
}

/// Samples every unit of the model on its own stream (seed, unit_id, tag).
inline IndividualTable copula_sample(const CopulaModel& model, std::uint64_t seed, const std::string& tag,
                                     std::size_t jobs = 1) {
  IndividualTable table;
  for (const auto& u : model.units) table.add_unit(u.unit_id, u.population);
  auto cols = detail::empty_columns(model.features, table.rows());

  // Quantile constants are built serially: lgamma is not reentrant.
  std::vector<std::vector<MarginalQuantile>> quantiles;
  quantiles.reserve(model.units.size());
  for (std::size_t m = 0; m < model.units.size(); ++m) quantiles.push_back(detail::unit_quantiles(model, m));

  parallel_for(model.units.size(), jobs, [&](std::size_t m) {
    const auto& unit = table.units()[m];
    SeededRng rng(seed, unit.unit_id, tag);
    Eigen::MatrixXd raw;
    detail::sample_rows(model, quantiles[m], unit.count, rng, raw);
    detail::write_cells(model, raw, unit.offset, cols);
  });
  for (std::size_t f = 0; f < model.features.size(); ++f) table.set_column(model.features[f].name, std::move(cols[f]));
  return table;
}

// ---- serialization --------------------------------------------------------

inline nlohmann::json marginal_to_json(const MarginalSpec& s) {
  if (s.is_beta())
    return {{"law", "beta"}, {"alpha", s.beta().alpha}, {"beta", s.beta().beta}, {"mean", s.mean}, {"sd", s.sd}};
  return {{"law", "lognormal"},
          {"mu_log", s.lognormal().mu_log},
          {"sigma_log", s.lognormal().sigma_log},
          {"mean", s.mean},
          {"sd", s.sd}};
}

inline MarginalSpec marginal_from_json(const nlohmann::json& j) {
  MarginalSpec s;
  const auto law = j.at("law").get<std::string>();
  if (law == "beta") {
    s.law = BetaLaw{j.at("alpha").get<double>(), j.at("beta").get<double>()};
    if (!(s.beta().alpha > 0.0 && s.beta().beta > 0.0)) throw ValidationError("model: beta parameters must be > 0");
  } else if (law == "lognormal") {
    s.law = LogNormalLaw{j.at("mu_log").get<double>(), j.at("sigma_log").get<double>()};
    if (!(s.lognormal().sigma_log >= 0.0)) throw ValidationError("model: sigma_log must be >= 0");
  } else {
    throw ParseError("model: unknown marginal law '" + law + "'");
  }
  s.mean = j.at("mean").get<double>();
  s.sd = j.at("sd").get<double>();
  return s;
}

inline nlohmann::json copula_to_json(const CopulaModel& model) {
  nlohmann::json coords = nlohmann::json::array();
  for (const auto& c : model.coordinates) {
    nlohmann::json item{{"feature", c.feature}};
    if (c.class_index) item["class"] = *c.class_index;
    coords.push_back(item);
  }
  nlohmann::json corr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < model.correlation.dim(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(model.correlation.dim()));
    for (Eigen::Index j = 0; j < model.correlation.dim(); ++j) row[static_cast<std::size_t>(j)] = model.correlation(i, j);
    corr.push_back(row);
  }
  nlohmann::json units = nlohmann::json::array();
  for (std::size_t m = 0; m < model.units.size(); ++m) {
    nlohmann::json margs = nlohmann::json::array();
    for (const auto& s : model.marginals[m]) margs.push_back(marginal_to_json(s));
    units.push_back({{"unit_id", model.units[m].unit_id},
                     {"population", model.units[m].population},
                     {"marginals", std::move(margs)}});
  }
  return {{"features", schema_to_json(model.features)},
          {"coordinates", std::move(coords)},
          {"correlation", std::move(corr)},
          {"pooled_sigma", model.pooled_sigma},
          {"independence_fallback", model.independence_fallback},
          {"units", std::move(units)}};
}

inline CopulaModel copula_from_json(const nlohmann::json& j) {
  try {
    CopulaModel model;
    model.features = parse_schema_subset(j.at("features"));
    for (const auto& c : j.at("coordinates")) {
      Coordinate coord{c.at("feature").get<std::string>(), std::nullopt};
      if (c.contains("class")) coord.class_index = c.at("class").get<std::size_t>();
      model.coordinates.push_back(coord);
    }
    const auto d = static_cast<Eigen::Index>(model.coordinates.size());
    const auto& corr = j.at("correlation");
    if (static_cast<Eigen::Index>(corr.size()) != d) throw ValidationError("model: correlation has wrong size");
    Eigen::MatrixXd m(d, d);
    for (Eigen::Index r = 0; r < d; ++r) {
      const auto row = corr.at(static_cast<std::size_t>(r)).get<std::vector<double>>();
      if (static_cast<Eigen::Index>(row.size()) != d) throw ValidationError("model: correlation has wrong size");
      for (Eigen::Index c = 0; c < d; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
    }
    model.correlation = d ? nearest_pd_repair(m) : CorrelationMatrix::identity(0);
    model.pooled_sigma = j.at("pooled_sigma").get<std::vector<double>>();
    model.independence_fallback = j.value("independence_fallback", false);
    for (const auto& u : j.at("units")) {
      model.units.push_back({u.at("unit_id").get<std::string>(), u.at("population").get<std::size_t>()});
      std::vector<MarginalSpec> row;
      for (const auto& s : u.at("marginals")) row.push_back(marginal_from_json(s));
      if (row.size() != model.coordinates.size()) throw ValidationError("model: marginal count mismatch");
      model.marginals.push_back(std::move(row));
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
}

}  // namespace downscale
