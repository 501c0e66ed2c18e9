#pragma once

#include <vector>

#include "error.hpp"
#include "schema.hpp"
#include "tables.hpp"

namespace downscale {

/// Re-aggregates person-level records: class counts over n_m for categorical
/// features, arithmetic means for continuous ones.
inline CoarseTable aggregate(const IndividualTable& individuals, const Schema& schema) {
  if (!individuals.finalized())
    throw ValidationError("aggregate: table holds unfinalized probability cells");
  CoarseTable out;
  for (const auto& unit : individuals.units()) {
    AggregationUnit agg;
    agg.unit_id = unit.unit_id;
    agg.population = unit.count;
    for (const auto& f : schema) {
      const auto& col = individuals.column(f.name);
      if (f.categorical()) {
        std::vector<double> counts(f.num_classes(), 0.0);
        for (std::size_t r = unit.offset; r < unit.offset + unit.count; ++r)
          counts.at(col.labels[r]) += 1.0;
        for (double& c : counts) c /= static_cast<double>(unit.count);
        agg.values[f.name] = std::move(counts);
      } else {
        double sum = 0.0;
        for (std::size_t r = unit.offset; r < unit.offset + unit.count; ++r) sum += col.values[r];
        agg.values[f.name] = unit.count ? sum / static_cast<double>(unit.count) : 0.0;
      }
    }
    out.units.push_back(std::move(agg));
  }
  return out;
}

}  // namespace downscale
