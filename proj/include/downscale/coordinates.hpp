#pragma once

#include <optional>
#include <string>
#include <vector>

#include "schema.hpp"
#include "tables.hpp"

namespace downscale {

/// One scalar axis of the coarse data: a (feature, class) pair for
/// categorical features, the feature itself for continuous ones.
struct Coordinate {
  std::string feature;
  std::optional<std::size_t> class_index;

  bool categorical() const noexcept { return class_index.has_value(); }
  bool operator==(const Coordinate&) const = default;
};

inline std::string coordinate_name(const Coordinate& c, const Schema& schema) {
  if (!c.class_index) return c.feature;
  const auto& f = schema[*find_feature(schema, c.feature)];
  return c.feature + ":" + f.classes.at(*c.class_index);
}

/// Coordinates of the given features, in schema order.
inline std::vector<Coordinate> coordinates_of(const Schema& schema,
                                              const std::vector<std::string>& features) {
  std::vector<Coordinate> out;
  for (const auto& f : schema) {
    if (std::find(features.begin(), features.end(), f.name) == features.end()) continue;
    if (f.categorical())
      for (std::size_t k = 0; k < f.num_classes(); ++k) out.push_back({f.name, k});
    else
      out.push_back({f.name, std::nullopt});
  }
  return out;
}

inline std::vector<Coordinate> all_coordinates(const Schema& schema) {
  std::vector<std::string> names;
  for (const auto& f : schema) names.push_back(f.name);
  return coordinates_of(schema, names);
}

inline double coordinate_value(const AggregationUnit& unit, const Coordinate& c) {
  if (c.class_index) return unit.proportions(c.feature).at(*c.class_index);
  return unit.mean(c.feature);
}

}  // namespace downscale
