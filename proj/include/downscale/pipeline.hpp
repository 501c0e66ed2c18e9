#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "batching.hpp"
#include "copula.hpp"
#include "error.hpp"
#include "outlier.hpp"
#include "predictor.hpp"
#include "scaling.hpp"
#include "schema.hpp"
#include "tables.hpp"

namespace downscale {

struct PipelineOptions {
  std::uint64_t seed = 0;
  SdMode sd_mode = SdMode::sqrt_n;
  bool outlier_removal = true;
  double contamination = kDefaultContamination;
  Phase3Mode phase3 = Phase3Mode::distribution;
  TrainingOptions training;
  /// Identity correlation when a copula has fewer than dim + 2 estimation
  /// units, so tiny inputs still generate.
  bool allow_independence_fallback = true;
  std::size_t jobs = 1;
};

/// Everything needed to regenerate without refitting: the core copula and
/// one predictor set per non-core batch.
struct FittedPipeline {
  Schema schema;
  CopulaModel core;
  std::vector<std::vector<Predictor>> batches;
};

struct PhaseTiming {
  std::string phase;
  double seconds = 0.0;
};

struct PipelineResult {
  IndividualTable individuals;
  OutlierReport outliers;
  FittedPipeline model;
  std::vector<PhaseTiming> timings;
  /// Names of copulas that fell back to the identity correlation.
  std::vector<std::string> independence_fallbacks;
};

namespace detail {

template <class Fn>
auto run_phase(const std::string& phase, std::vector<PhaseTiming>& timings, Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  auto record = [&] {
    timings.push_back({phase, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()});
  };
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      record();
    } else {
      auto out = fn();
      record();
      return out;
    }
  } catch (const PhaseError&) {
    throw;
  } catch (const std::exception& e) {
    throw PhaseError(phase, e.what());
  }
}

inline std::string batch_tag(std::size_t j) { return "phase3:batch" + std::to_string(j); }

inline void check_model_units(const FittedPipeline& model, const CoarseTable& coarse) {
  if (model.core.units.size() != coarse.units.size())
    throw ValidationError("load_model: model covers " + std::to_string(model.core.units.size()) +
                          " units, coarse data has " + std::to_string(coarse.units.size()));
  for (std::size_t m = 0; m < coarse.units.size(); ++m)
    if (model.core.units[m].unit_id != coarse.units[m].unit_id ||
        model.core.units[m].population != coarse.units[m].population)
      throw ValidationError("load_model: unit '" + coarse.units[m].unit_id + "' differs from the model");
}

}  // namespace detail

/// Phases 1 to 4 on validated coarse data. Each phase's failures are
/// rethrown as PhaseError naming the phase.
///
/// With `reuse` set, fitting is skipped: the stored core copula and
/// predictors are applied to the coarse data, which must describe the same
/// units.
inline PipelineResult run_pipeline(const CoarseTable& coarse, const Schema& schema, const PipelineOptions& options,
                                   const FittedPipeline* reuse = nullptr) {
  PipelineResult result;
  auto& timings = result.timings;
  const auto partition = partition_batches(schema);

  result.outliers = detail::run_phase("phase1", timings, [&] {
    OutlierReport report = score_units(coarse, schema);
    return flag_outliers(std::move(report), options.outlier_removal ? options.contamination : 0.0);
  });

  CopulaFitOptions fit;
  fit.sd_mode = options.sd_mode;
  fit.exclude = result.outliers.flagged;
  fit.allow_independence_fallback = options.allow_independence_fallback;

  result.model.schema = schema;
  IndividualTable table = detail::run_phase("phase2", timings, [&] {
    if (reuse) {
      detail::check_model_units(*reuse, coarse);
      result.model.core = reuse->core;
    } else {
      result.model.core = fit_copula(coarse, schema, partition.core, fit);
    }
    if (result.model.core.independence_fallback) result.independence_fallbacks.push_back("core");
    return copula_sample(result.model.core, options.seed, "phase2", options.jobs);
  });

  table = detail::run_phase("phase3", timings, [&] {
    if (reuse && reuse->batches.size() != partition.batches.size())
      throw ValidationError("load_model: model has " + std::to_string(reuse->batches.size()) +
                            " batches, schema has " + std::to_string(partition.batches.size()));
    IndividualTable current = std::move(table);
    for (std::size_t j = 0; j < partition.batches.size(); ++j) {
      std::vector<Predictor> predictors;
      if (reuse) {
        predictors = reuse->batches[j];
      } else {
        const std::string tag = detail::batch_tag(j + 1);
        auto [model, sample] =
            sample_joint_batch(coarse, schema, partition.core, partition.batches[j], fit, options.seed, tag, options.jobs);
        if (model.independence_fallback) result.independence_fallbacks.push_back("batch" + std::to_string(j + 1));
        for (const auto& target : partition.batches[j])
          predictors.push_back(
              fit_predictor(sample, schema, partition.core, target, options.seed, tag + ":train", options.training));
      }
      current = extend_with_batch(current, predictors, schema, options.phase3, options.jobs);
      result.model.batches.push_back(std::move(predictors));
    }
    return current;
  });

  result.individuals = detail::run_phase("phase4", timings, [&] {
    return scale_to_marginals(table, coarse, schema, options.seed, options.jobs);
  });
  return result;
}

// ---- model persistence ----------------------------------------------------

inline nlohmann::json fitted_pipeline_to_json(const FittedPipeline& model) {
  nlohmann::json batches = nlohmann::json::array();
  for (const auto& batch : model.batches) {
    nlohmann::json preds = nlohmann::json::array();
    for (const auto& p : batch) preds.push_back(predictor_to_json(p));
    batches.push_back(std::move(preds));
  }
  return {{"schema", schema_to_json(model.schema)}, {"core", copula_to_json(model.core)}, {"batches", batches}};
}

inline FittedPipeline fitted_pipeline_from_json(const nlohmann::json& j) {
  try {
    FittedPipeline model;
    model.schema = parse_schema(j.at("schema"));
    model.core = copula_from_json(j.at("core"));
    for (const auto& batch : j.at("batches")) {
      std::vector<Predictor> preds;
      for (const auto& p : batch) preds.push_back(predictor_from_json(p));
      model.batches.push_back(std::move(preds));
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("load_model: ") + e.what());
  }
}

inline void save_fitted_pipeline(const std::filesystem::path& path, const FittedPipeline& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_model: cannot open '" + path.string() + "'");
  out << fitted_pipeline_to_json(model).dump(1) << '\n';
}

inline FittedPipeline load_fitted_pipeline(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_model: cannot open '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("load_model: ") + e.what());
  }
  return fitted_pipeline_from_json(doc);
}

}  // namespace downscale
