#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "aggregate.hpp"
#include "distributions.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "pipeline.hpp"
#include "rng.hpp"
#include "schema.hpp"
#include "tables.hpp"

namespace downscale {

/// Synthetic ground truth: a latent Gaussian threshold model.
///
/// Each feature has one latent coordinate. A person's latent vector is a
/// unit effect (scale `tau`) plus an individual draw, both with
/// equicorrelation `rho` across features. Categorical classes come from
/// cutting the standardized latent at the quantiles of `class_probs`;
/// continuous features are exp(location + spread * latent).
struct SimulationConfig {
  std::size_t units = 500;
  std::size_t min_size = 5;
  std::size_t max_size = 150;
  double rho = 0.3;
  double tau = 0.5;
  Schema schema;
  std::vector<std::vector<double>> class_probs;  // parallel to schema; empty entry = uniform
  double continuous_location = 3.0;
  double continuous_spread = 0.5;
  PipelineOptions pipeline;
};

namespace detail {

inline FeatureSchema sim_feature(std::string name, std::vector<std::string> classes, int batch, bool ordinal = false) {
  FeatureSchema f;
  f.name = std::move(name);
  f.kind = FeatureKind::categorical;
  f.classes = std::move(classes);
  f.batch = batch;
  f.is_core = batch == 0;
  f.ordinal = ordinal;
  return f;
}

}  // namespace detail

/// Desk-scale stand-in for the survey data: age and gender as core, nine
/// binary internet-usage features, then ethnicity, income and education.
inline SimulationConfig default_simulation_config() {
  using detail::sim_feature;
  SimulationConfig c;
  // Predictor fits dominate the run time at this scale.
  c.pipeline.training.max_training_rows = 2000;
  const std::vector<std::string> yes_no{"no", "yes"};
  c.schema.push_back(sim_feature("age", {"15-19", "20-24", "25-34", "35-44", "45-54", "55-64", "65+"}, 0, true));
  c.class_probs.push_back({0.08, 0.10, 0.17, 0.17, 0.17, 0.16, 0.15});
  c.schema.push_back(sim_feature("gender", {"F", "M"}, 0));
  c.class_probs.push_back({0.51, 0.49});
  const std::vector<std::pair<std::string, double>> internet{
      {"news", 0.55},    {"sports", 0.40}, {"podcast", 0.25}, {"social_media", 0.65}, {"food", 0.35},
      {"health", 0.30}, {"fashion", 0.20}, {"travel", 0.30},   {"video", 0.60}};
  for (const auto& [name, p] : internet) {
    c.schema.push_back(sim_feature(name, yes_no, 1));
    c.class_probs.push_back({1.0 - p, p});
  }
  c.schema.push_back(sim_feature("ethnicity", {"european", "chinese", "south_asian", "filipino", "other"}, 2));
  c.class_probs.push_back({0.45, 0.20, 0.15, 0.08, 0.12});
  std::vector<std::string> income;
  std::vector<double> income_p;
  for (int k = 0; k < 12; ++k) {
    income.push_back(std::to_string(k * 10) + "k-" + std::to_string(k * 10 + 9) + "k");
    income_p.push_back(0.04 + 0.06 * std::exp(-0.5 * std::pow((k - 4.0) / 3.0, 2.0)));
  }
  income.push_back("120k+");
  income_p.push_back(0.05);
  const double income_total = std::accumulate(income_p.begin(), income_p.end(), 0.0);
  for (double& v : income_p) v /= income_total;
  c.schema.push_back(sim_feature("income", income, 2, true));
  c.class_probs.push_back(income_p);
  c.schema.push_back(sim_feature("education", {"secondary", "college", "university"}, 2, true));
  c.class_probs.push_back({0.35, 0.35, 0.30});
  return c;
}

inline SimulationConfig parse_simulation_config(const nlohmann::json& j) {
  constexpr const char* op = "load_simulation_config: ";
  SimulationConfig c = default_simulation_config();
  try {
    c.units = j.value("units", c.units);
    c.min_size = j.value("min_size", c.min_size);
    c.max_size = j.value("max_size", c.max_size);
    c.rho = j.value("rho", c.rho);
    c.tau = j.value("tau", c.tau);
    c.continuous_location = j.value("continuous_location", c.continuous_location);
    c.continuous_spread = j.value("continuous_spread", c.continuous_spread);
    if (j.contains("features")) {
      c.schema = parse_schema(j.at("features"));
      c.class_probs.clear();
      for (const auto& item : j.at("features"))
        c.class_probs.push_back(item.value("probs", std::vector<double>{}));
    }
    if (j.contains("sd_mode")) c.pipeline.sd_mode = parse_sd_mode(j.at("sd_mode").get<std::string>());
    if (j.contains("phase3")) c.pipeline.phase3 = parse_phase3_mode(j.at("phase3").get<std::string>());
    c.pipeline.contamination = j.value("contamination", c.pipeline.contamination);
    c.pipeline.training.max_training_rows = j.value("max_training_rows", c.pipeline.training.max_training_rows);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string(op) + e.what());
  }
  if (c.units == 0 || c.min_size == 0 || c.min_size > c.max_size)
    throw ValidationError(std::string(op) + "need units >= 1 and 1 <= min_size <= max_size");
  if (!(c.rho > -1.0 / static_cast<double>(std::max<std::size_t>(c.schema.size() - 1, 1)) && c.rho < 1.0))
    throw ValidationError(std::string(op) + "rho outside the positive-definite range");
  if (!(c.tau >= 0.0)) throw ValidationError(std::string(op) + "tau must be nonnegative");
  for (std::size_t i = 0; i < c.schema.size(); ++i) {
    const auto& p = c.class_probs[i];
    if (p.empty()) continue;
    if (!c.schema[i].categorical() || p.size() != c.schema[i].num_classes())
      throw ValidationError(std::string(op) + "probs of '" + c.schema[i].name + "' do not match its classes");
    double s = 0.0;
    for (double v : p) {
      if (!(v > 0.0)) throw ValidationError(std::string(op) + "probs must be positive");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) throw ValidationError(std::string(op) + "probs must sum to 1");
  }
  return c;
}

inline SimulationConfig load_simulation_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_simulation_config: cannot open '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("load_simulation_config: ") + e.what());
  }
  return parse_simulation_config(doc);
}

/// Draws a finalized ground-truth population. Unit sizes are log-uniform
/// integers on [min_size, max_size].
inline IndividualTable simulate_truth(const SimulationConfig& config, std::uint64_t seed) {
  validate_schema(config.schema, "simulate_truth");
  const auto d = static_cast<Eigen::Index>(config.schema.size());
  Eigen::MatrixXd r = Eigen::MatrixXd::Constant(d, d, config.rho);
  r.diagonal().setOnes();
  const Eigen::MatrixXd lower = Eigen::LLT<Eigen::MatrixXd>(r).matrixL();

  // Class cut points on the standardized latent scale.
  std::vector<std::vector<double>> cuts(config.schema.size());
  for (std::size_t f = 0; f < config.schema.size(); ++f) {
    if (!config.schema[f].categorical()) continue;
    const std::size_t c = config.schema[f].num_classes();
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < c; ++k) {
      acc += config.class_probs.size() > f && !config.class_probs[f].empty() ? config.class_probs[f][k]
                                                                            : 1.0 / static_cast<double>(c);
      cuts[f].push_back(normal_quantile(std::min(acc, 1.0)));
    }
  }

  SeededRng sizes(seed, "", "simulate:sizes");
  IndividualTable table;
  const double lo = std::log(static_cast<double>(config.min_size) - 0.5);
  const double hi = std::log(static_cast<double>(config.max_size) + 0.5);
  for (std::size_t m = 0; m < config.units; ++m) {
    const double draw = std::exp(lo + (hi - lo) * sizes.uniform());
    const auto n = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(draw)), config.min_size, config.max_size);
    table.add_unit(fmt::format("U{:04d}", m), n);
  }

  const double norm = std::sqrt(1.0 + config.tau * config.tau);
  std::vector<std::vector<std::uint32_t>> labels(config.schema.size(), std::vector<std::uint32_t>(table.rows()));
  std::vector<std::vector<double>> values(config.schema.size(), std::vector<double>(table.rows()));
  Eigen::VectorXd eps(d), effect(d), latent(d);
  for (const auto& unit : table.units()) {
    SeededRng rng(seed, unit.unit_id, "simulate:truth");
    for (Eigen::Index i = 0; i < d; ++i) eps(i) = rng.normal();
    effect = config.tau * (lower * eps);
    for (std::size_t k = 0; k < unit.count; ++k) {
      for (Eigen::Index i = 0; i < d; ++i) eps(i) = rng.normal();
      latent = (effect + lower * eps) / norm;
      const std::size_t row = unit.offset + k;
      for (std::size_t f = 0; f < config.schema.size(); ++f) {
        const double z = latent(static_cast<Eigen::Index>(f));
        if (config.schema[f].categorical())
          labels[f][row] = static_cast<std::uint32_t>(std::upper_bound(cuts[f].begin(), cuts[f].end(), z) - cuts[f].begin());
        else
          values[f][row] = std::exp(config.continuous_location + config.continuous_spread * z);
      }
    }
  }
  for (std::size_t f = 0; f < config.schema.size(); ++f)
    table.set_column(config.schema[f].name, config.schema[f].categorical() ? Column::make_labels(std::move(labels[f]))
                                                                           : Column::make_reals(std::move(values[f])));
  return table;
}

struct SimulationOutcome {
  std::uint64_t seed = 0;
  AccuracyReport with_outlier_removal;
  AccuracyReport without_outlier_removal;
};

/// Generates truth, aggregates it, reconstructs it with outlier removal on
/// and off, and scores both reconstructions against the truth.
inline SimulationOutcome run_simulation_study(const SimulationConfig& config, std::uint64_t seed) {
  const IndividualTable truth = simulate_truth(config, seed);
  const CoarseTable coarse = aggregate(truth, config.schema);
  SimulationOutcome out;
  out.seed = seed;
  for (bool removal : {true, false}) {
    PipelineOptions options = config.pipeline;
    options.seed = seed;
    options.outlier_removal = removal;
    const auto result = run_pipeline(coarse, config.schema, options);
    auto report = evaluate_tables(truth, result.individuals, config.schema);
    (removal ? out.with_outlier_removal : out.without_outlier_removal) = std::move(report);
  }
  return out;
}

}  // namespace downscale
