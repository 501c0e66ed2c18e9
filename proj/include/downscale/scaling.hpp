#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "schema.hpp"
#include "tables.hpp"

namespace downscale {

/// Largest-remainder apportionment of n over the proportions. Ties in the
/// fractional parts go to the earlier class.
inline std::vector<std::size_t> integerize_budget(std::size_t n, std::span<const double> proportions) {
  const std::size_t c = proportions.size();
  std::vector<std::size_t> counts(c, 0);
  std::vector<double> remainder(c, 0.0);
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < c; ++k) {
    double exact = static_cast<double>(n) * proportions[k];
    // n * (k/n) may land one ulp under an integer.
    const double nearest = std::round(exact);
    if (std::abs(exact - nearest) < 1e-9) exact = nearest;
    const double fl = std::floor(exact);
    counts[k] = static_cast<std::size_t>(std::max(fl, 0.0));
    remainder[k] = exact - fl;
    assigned += counts[k];
  }
  if (assigned > n) throw ValidationError("integerize_budget: proportions sum above 1");
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % c]];
  return counts;
}

/// Assigns one class per row so that class counts equal `budget` exactly.
///
/// Rows are visited in order; each draws from its probability vector with
/// exhausted classes masked out and the rest renormalized. A row with no
/// mass left on any open class draws proportionally to the remaining
/// budget.
inline std::vector<std::uint32_t> assign_categories(std::span<const double> distributions, std::size_t width,
                                                    std::vector<std::size_t> budget, SeededRng& rng) {
  const std::size_t rows = width ? distributions.size() / width : 0;
  if (budget.size() != width) throw ValidationError("assign_categories: budget width mismatch");
  if (std::accumulate(budget.begin(), budget.end(), std::size_t{0}) != rows)
    throw ValidationError("assign_categories: budget does not sum to the row count");
  std::vector<std::uint32_t> out(rows);
  std::vector<double> w(width);
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t k = 0; k < width; ++k) {
      const double p = distributions[r * width + k];
      w[k] = budget[k] > 0 && p > 0.0 && std::isfinite(p) ? p : 0.0;
      total += w[k];
    }
    if (!(total > 0.0))
      for (std::size_t k = 0; k < width; ++k) w[k] = static_cast<double>(budget[k]);
    const std::size_t cls = rng.categorical(w);
    --budget[cls];
    out[r] = static_cast<std::uint32_t>(cls);
  }
  return out;
}

inline constexpr int kMaxRedistributionPasses = 5;

/// Shifts values so their mean equals `target`, then floors negatives at 0
/// and takes the deficit proportionally out of the positive values.
inline void shift_continuous(std::span<double> values, double target) {
  if (values.empty()) throw ValidationError("shift_continuous: empty unit");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  const double shift = mean - target;
  for (double& v : values) v -= shift;
  for (int pass = 0; pass < kMaxRedistributionPasses; ++pass) {
    double deficit = 0.0, positive = 0.0;
    for (double& v : values) {
      if (v < 0.0) {
        deficit -= v;
        v = 0.0;
      }
      positive += v;
    }
    if (deficit == 0.0) break;
    if (!(positive > 0.0)) break;
    const double keep = std::max(0.0, 1.0 - deficit / positive);
    for (double& v : values) v *= keep;
  }
}

/// Phase 4 over a whole table: exact categorical budgets per unit and
/// feature, mean-matching shifts for continuous features.
inline IndividualTable scale_to_marginals(const IndividualTable& table, const CoarseTable& coarse,
                                          const Schema& schema, std::uint64_t seed, std::size_t jobs = 1) {
  if (coarse.units.size() != table.units().size())
    throw ValidationError("assign_categories: table and coarse data disagree on units");
  for (std::size_t m = 0; m < coarse.units.size(); ++m)
    if (coarse.units[m].unit_id != table.units()[m].unit_id || coarse.units[m].population != table.units()[m].count)
      throw ValidationError("assign_categories: unit '" + coarse.units[m].unit_id + "' mismatch");

  IndividualTable out = table;
  for (const auto& f : schema) {
    const Column& in = table.column(f.name);
    if (f.categorical()) {
      if (in.kind == CellKind::label) continue;
      if (in.kind != CellKind::distribution || in.width != f.num_classes())
        throw ValidationError("assign_categories: column '" + f.name + "' is not a probability column");
      std::vector<std::uint32_t> labels(table.rows());
      parallel_for(coarse.units.size(), jobs, [&](std::size_t m) {
        const auto& unit = table.units()[m];
        const auto budget = integerize_budget(unit.count, coarse.units[m].proportions(f.name));
        SeededRng rng(seed, unit.unit_id, "assign:" + f.name);
        auto assigned = assign_categories(
            std::span<const double>(in.values.data() + unit.offset * in.width, unit.count * in.width), in.width,
            budget, rng);
        std::copy(assigned.begin(), assigned.end(), labels.begin() + static_cast<std::ptrdiff_t>(unit.offset));
      });
      out.set_column(f.name, Column::make_labels(std::move(labels)));
    } else {
      Column col = in;
      if (col.kind != CellKind::real) throw ValidationError("shift_continuous: column '" + f.name + "' is not real");
      parallel_for(coarse.units.size(), jobs, [&](std::size_t m) {
        const auto& unit = table.units()[m];
        shift_continuous(std::span<double>(col.values.data() + unit.offset, unit.count), coarse.units[m].mean(f.name));
      });
      out.set_column(f.name, std::move(col));
    }
  }
  return out;
}

}  // namespace downscale
