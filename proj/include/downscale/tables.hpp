#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "error.hpp"
#include "schema.hpp"

namespace downscale {

/// Per-unit aggregate of one feature: a proportion vector over the classes of
/// a categorical feature, or the mean of a continuous one.
using AggregateValue = std::variant<std::vector<double>, double>;

struct AggregationUnit {
  std::string unit_id;
  std::size_t population = 0;
  std::map<std::string, AggregateValue> values;

  const std::vector<double>& proportions(const std::string& feature) const {
    return std::get<std::vector<double>>(values.at(feature));
  }
  double mean(const std::string& feature) const { return std::get<double>(values.at(feature)); }
};

/// Coarse data: one aggregation unit per row, in file order.
struct CoarseTable {
  std::vector<AggregationUnit> units;

  std::size_t total_population() const {
    std::size_t n = 0;
    for (const auto& u : units) n += u.population;
    return n;
  }
};

/// Checks every AggregationUnit invariant against the schema.
inline void validate_coarse(const CoarseTable& coarse, const Schema& schema,
                            std::string_view op = "validate_coarse") {
  const std::string prefix = std::string(op) + ": ";
  std::map<std::string, int> seen;
  for (const auto& unit : coarse.units) {
    if (unit.unit_id.empty()) throw ValidationError(prefix + "empty unit_id");
    if (seen[unit.unit_id]++) throw ValidationError(prefix + "duplicate unit '" + unit.unit_id + "'");
    if (unit.population < 1)
      throw ValidationError(prefix + "unit '" + unit.unit_id + "' has population < 1");
    for (const auto& f : schema) {
      auto it = unit.values.find(f.name);
      if (it == unit.values.end())
        throw ValidationError(prefix + "unit '" + unit.unit_id + "' lacks feature '" + f.name + "'");
      if (f.categorical()) {
        const auto* p = std::get_if<std::vector<double>>(&it->second);
        if (!p || p->size() != f.num_classes())
          throw ValidationError(prefix + "unit '" + unit.unit_id + "': feature '" + f.name +
                                "' needs a proportion vector over its classes");
        double sum = 0.0;
        for (double v : *p) {
          if (!(v >= 0.0 && v <= 1.0))
            throw ValidationError(prefix + "unit '" + unit.unit_id + "': proportion of '" +
                                  f.name + "' outside [0,1]");
          sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-6)
          throw ValidationError(prefix + "unit '" + unit.unit_id + "': proportions of '" + f.name +
                                "' do not sum to 1");
      } else {
        const auto* m = std::get_if<double>(&it->second);
        if (!m || !std::isfinite(*m) || *m < 0.0)
          throw ValidationError(prefix + "unit '" + unit.unit_id + "': feature '" + f.name +
                                "' needs a finite nonnegative mean");
      }
    }
  }
}

enum class CellKind { label, real, distribution };

/// One feature column of an IndividualTable, stored densely over all rows.
///
/// Labels hold class indices. Distribution cells hold `width` probabilities
/// per row, row-major in `values`.
struct Column {
  CellKind kind = CellKind::label;
  std::size_t width = 1;
  std::vector<std::uint32_t> labels;
  std::vector<double> values;

  static Column make_labels(std::vector<std::uint32_t> l) {
    Column c;
    c.kind = CellKind::label;
    c.labels = std::move(l);
    return c;
  }
  static Column make_reals(std::vector<double> v) {
    Column c;
    c.kind = CellKind::real;
    c.values = std::move(v);
    return c;
  }
  static Column make_distributions(std::size_t width, std::vector<double> v) {
    Column c;
    c.kind = CellKind::distribution;
    c.width = width;
    c.values = std::move(v);
    return c;
  }

  std::size_t rows() const {
    switch (kind) {
      case CellKind::label: return labels.size();
      case CellKind::real: return values.size();
      case CellKind::distribution: return width ? values.size() / width : 0;
    }
    return 0;
  }

  std::span<const double> distribution(std::size_t row) const {
    return {values.data() + row * width, width};
  }
  std::span<double> distribution(std::size_t row) { return {values.data() + row * width, width}; }

  bool operator==(const Column&) const = default;
};

struct UnitRows {
  std::string unit_id;
  std::size_t offset = 0;
  std::size_t count = 0;

  bool operator==(const UnitRows&) const = default;
};

/// Person-level records grouped by aggregation unit.
///
/// Rows are ordered by unit, then person_index (0..n_m-1). Row identity is
/// its position, so attaching a column is a row-aligned join.
class IndividualTable {
 public:
  IndividualTable() = default;

  static IndividualTable with_units_of(const CoarseTable& coarse) {
    IndividualTable t;
    for (const auto& u : coarse.units) t.add_unit(u.unit_id, u.population);
    return t;
  }

  void add_unit(std::string unit_id, std::size_t count) {
    if (!columns_.empty()) throw Error("IndividualTable: units must be added before columns");
    units_.push_back({std::move(unit_id), rows_, count});
    rows_ += count;
  }

  std::size_t rows() const noexcept { return rows_; }
  const std::vector<UnitRows>& units() const noexcept { return units_; }

  const UnitRows* find_unit(std::string_view unit_id) const {
    for (const auto& u : units_)
      if (u.unit_id == unit_id) return &u;
    return nullptr;
  }

  bool has_column(const std::string& name) const { return columns_.count(name) != 0; }

  const Column& column(const std::string& name) const {
    auto it = columns_.find(name);
    if (it == columns_.end()) throw Error("IndividualTable: no column '" + name + "'");
    return it->second;
  }
  Column& column(const std::string& name) {
    auto it = columns_.find(name);
    if (it == columns_.end()) throw Error("IndividualTable: no column '" + name + "'");
    return it->second;
  }

  void set_column(const std::string& name, Column col) {
    if (col.rows() != rows_)
      throw Error("IndividualTable: column '" + name + "' has " + std::to_string(col.rows()) +
                  " rows, table has " + std::to_string(rows_));
    if (!has_column(name)) names_.push_back(name);
    columns_[name] = std::move(col);
  }

  /// Column names in attachment order.
  const std::vector<std::string>& column_names() const noexcept { return names_; }

  /// True when no column holds probability-vector cells.
  bool finalized() const {
    for (const auto& [name, col] : columns_)
      if (col.kind == CellKind::distribution) return false;
    return true;
  }

  bool operator==(const IndividualTable& o) const {
    return rows_ == o.rows_ && units_ == o.units_ && columns_ == o.columns_;
  }

 private:
  std::size_t rows_ = 0;
  std::vector<UnitRows> units_;
  std::vector<std::string> names_;
  std::map<std::string, Column> columns_;
};

}  // namespace downscale
