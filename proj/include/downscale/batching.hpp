#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "copula.hpp"
#include "error.hpp"
#include "parallel.hpp"
#include "predictor.hpp"
#include "rng.hpp"
#include "schema.hpp"
#include "tables.hpp"

namespace downscale {

/// What a batch attaches to each individual: the full conditional
/// distribution, or a one-hot vector on its most likely class.
enum class Phase3Mode { distribution, argmax };

inline std::string_view to_string(Phase3Mode m) { return m == Phase3Mode::argmax ? "argmax" : "distribution"; }

inline Phase3Mode parse_phase3_mode(std::string_view s) {
  if (s == "distribution") return Phase3Mode::distribution;
  if (s == "argmax") return Phase3Mode::argmax;
  throw ValidationError("phase3 mode must be argmax|distribution, got '" + std::string(s) + "'");
}

struct BatchPartition {
  std::vector<std::string> core;
  std::vector<std::vector<std::string>> batches;  // batches[j-1] = T_j
};

inline BatchPartition partition_batches(const Schema& schema) {
  BatchPartition out;
  out.batches.resize(static_cast<std::size_t>(batch_count(schema)));
  for (const auto& f : schema) {
    if (f.batch == 0)
      out.core.push_back(f.name);
    else
      out.batches[static_cast<std::size_t>(f.batch - 1)].push_back(f.name);
  }
  return out;
}

inline std::vector<std::string> join_features(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::string> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

/// Fits a copula over S and T_j on its own (correlation re-estimated and
/// repaired for the restricted coordinates) and samples K_j with it.
inline std::pair<CopulaModel, IndividualTable> sample_joint_batch(const CoarseTable& coarse, const Schema& schema,
                                                                  const std::vector<std::string>& core,
                                                                  const std::vector<std::string>& batch,
                                                                  const CopulaFitOptions& fit, std::uint64_t seed,
                                                                  const std::string& tag, std::size_t jobs = 1) {
  CopulaModel model = fit_copula(coarse, schema, join_features(core, batch), fit);
  IndividualTable sample = copula_sample(model, seed, tag, jobs);
  return {std::move(model), std::move(sample)};
}

struct TrainingOptions {
  PredictorOptions predictor;
  /// Upper bound on rows of K_j used to fit one predictor; 0 = all rows.
  std::size_t max_training_rows = 0;
};

/// One class per row drawn from the row's probability vector, on the stream
/// (seed, unit_id, tag). Label cells are returned unchanged.
inline std::vector<std::uint32_t> draw_training_labels(const IndividualTable& table, const std::string& feature,
                                                       std::uint64_t seed, const std::string& tag) {
  const auto& col = table.column(feature);
  if (col.kind == CellKind::label) return col.labels;
  if (col.kind != CellKind::distribution)
    throw ValidationError("fit_predictor: target '" + feature + "' is not categorical");
  std::vector<std::uint32_t> labels(table.rows());
  for (const auto& unit : table.units()) {
    SeededRng rng(seed, unit.unit_id, tag);
    for (std::size_t r = unit.offset; r < unit.offset + unit.count; ++r)
      labels[r] = static_cast<std::uint32_t>(rng.categorical(col.distribution(r)));
  }
  return labels;
}

namespace detail {

inline std::vector<std::size_t> training_rows(std::size_t rows, std::size_t cap, std::uint64_t seed,
                                              const std::string& tag) {
  std::vector<std::size_t> idx(rows);
  std::iota(idx.begin(), idx.end(), 0);
  if (cap == 0 || rows <= cap) return idx;
  SeededRng rng(seed, "", tag + ":subsample");
  for (std::size_t i = 0; i < cap; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform() * static_cast<double>(rows - i));
    std::swap(idx[i], idx[std::min(j, rows - 1)]);
  }
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

/// Fits P(target | core) on the joint sample K_j. Core cells enter as their
/// probability vectors; categorical targets are drawn once per row.
inline Predictor fit_predictor(const IndividualTable& sample, const Schema& schema,
                               const std::vector<std::string>& core, const std::string& target, std::uint64_t seed,
                               const std::string& tag, const TrainingOptions& options = {}) {
  const auto fi = find_feature(schema, target);
  if (!fi) throw ValidationError("fit_predictor: unknown target '" + target + "'");
  const auto& feature = schema[*fi];
  const auto inputs = coordinates_of(schema, core);
  const Eigen::MatrixXd all = encode_inputs(sample, inputs);
  const auto rows = detail::training_rows(sample.rows(), options.max_training_rows, seed, tag + ":" + target);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), all.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(rows[i]));

  if (feature.categorical()) {
    const auto labels_all = draw_training_labels(sample, target, seed, tag + ":" + target);
    std::vector<std::uint32_t> labels;
    labels.reserve(rows.size());
    for (auto r : rows) labels.push_back(labels_all[r]);
    return fit_softmax(target, inputs, x, labels, feature.num_classes(), options.predictor);
  }
  const auto& col = sample.column(target);
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) y(static_cast<Eigen::Index>(i)) = col.values[rows[i]];
  return fit_least_squares(target, inputs, x, y, options.predictor);
}

/// Attaches each predictor's output to every row of `table`, aligned by row
/// identity (unit_id, person_index). Existing columns are left untouched.
inline IndividualTable extend_with_batch(const IndividualTable& table, const std::vector<Predictor>& predictors,
                                         const Schema& schema, Phase3Mode mode = Phase3Mode::distribution,
                                         std::size_t jobs = 1) {
  constexpr const char* op = "extend_with_batch: ";
  IndividualTable out = table;
  for (const auto& pred : predictors) {
    const auto fi = find_feature(schema, pred.target);
    if (!fi) throw ValidationError(std::string(op) + "unknown target '" + pred.target + "'");
    const auto& feature = schema[*fi];
    if (table.has_column(pred.target))
      throw ValidationError(std::string(op) + "column '" + pred.target + "' already present");
    if (feature.categorical() != (pred.kind == PredictorKind::softmax) ||
        (feature.categorical() && pred.num_classes != feature.num_classes()))
      throw ValidationError(std::string(op) + "predictor for '" + pred.target + "' does not match its schema");
    for (const auto& c : pred.inputs) {
      if (!table.has_column(c.feature))
        throw ValidationError(std::string(op) + "input feature '" + c.feature + "' missing from table");
      const auto& col = table.column(c.feature);
      if (c.class_index.has_value() != (col.kind != CellKind::real) ||
          (c.class_index && col.kind == CellKind::distribution && *c.class_index >= col.width))
        throw ValidationError(std::string(op) + "input coordinate of '" + c.feature + "' does not match table");
    }
    if (pred.center.size() != static_cast<Eigen::Index>(pred.inputs.size()))
      throw ValidationError(std::string(op) + "predictor for '" + pred.target + "' has inconsistent encoding");

    const Eigen::MatrixXd x = encode_inputs(table, pred.inputs);
    const std::size_t width = feature.categorical() ? feature.num_classes() : 1;
    std::vector<double> values(table.rows() * width);
    parallel_for(table.units().size(), jobs, [&](std::size_t m) {
      const auto& unit = table.units()[m];
      std::vector<double> input(static_cast<std::size_t>(x.cols()));
      for (std::size_t r = unit.offset; r < unit.offset + unit.count; ++r) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) input[static_cast<std::size_t>(j)] = x(static_cast<Eigen::Index>(r), j);
        std::span<double> cell(values.data() + r * width, width);
        pred.predict(input, cell);
        if (feature.categorical() && mode == Phase3Mode::argmax) {
          const auto best = static_cast<std::size_t>(std::max_element(cell.begin(), cell.end()) - cell.begin());
          for (std::size_t k = 0; k < width; ++k) cell[k] = k == best ? 1.0 : 0.0;
        }
      }
    });
    out.set_column(pred.target, feature.categorical() ? Column::make_distributions(width, std::move(values))
                                                      : Column::make_reals(std::move(values)));
  }
  return out;
}

}  // namespace downscale
