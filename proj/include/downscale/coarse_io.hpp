#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "schema.hpp"
#include "tables.hpp"

namespace downscale {

/// Proportion vectors whose sum is off by more than this are rejected.
inline constexpr double kRenormalizationTolerance = 1e-3;

namespace detail {

inline std::string at_row(std::size_t line) { return " (data row " + std::to_string(line) + ")"; }

}  // namespace detail

/// Reads coarse data in the column layout
///   unit_id, population, f:c1 .. f:ck (categorical), f (binary or continuous)
/// Binary features may be given as a single column holding the proportion of
/// the first declared class.
inline CoarseTable read_coarse_csv(std::istream& in, const Schema& schema) {
  constexpr const char* op = "load_coarse_csv: ";
  validate_schema(schema, "load_coarse_csv");
  auto rows = csv::read_all(in);
  if (rows.empty()) throw ParseError(std::string(op) + "file is empty (no header row)");

  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows[0].size(); ++i) {
    if (!col.emplace(rows[0][i], i).second)
      throw ParseError(std::string(op) + "duplicate column '" + rows[0][i] + "'");
  }
  auto require = [&](const std::string& name) -> std::size_t {
    auto it = col.find(name);
    if (it == col.end()) throw ParseError(std::string(op) + "missing column '" + name + "'");
    return it->second;
  };
  const std::size_t id_col = require("unit_id");
  const std::size_t pop_col = require("population");

  // Per feature: either one column per class, or one binary/continuous column.
  struct Source {
    std::vector<std::size_t> class_cols;
    std::size_t single = 0;
    bool use_single = false;
  };
  std::vector<Source> sources;
  for (const auto& f : schema) {
    Source s;
    if (f.categorical()) {
      bool all = true;
      for (const auto& c : f.classes) {
        auto it = col.find(f.name + ":" + c);
        if (it == col.end()) {
          all = false;
          break;
        }
        s.class_cols.push_back(it->second);
      }
      if (!all) {
        s.class_cols.clear();
        if (f.num_classes() == 2 && col.count(f.name)) {
          s.single = col[f.name];
          s.use_single = true;
        } else {
          throw ParseError(std::string(op) + "missing columns for categorical feature '" + f.name +
                           "' (expected '" + f.name + ":<class>' per class)");
        }
      }
    } else {
      s.single = require(f.name);
      s.use_single = true;
    }
    sources.push_back(std::move(s));
  }

  CoarseTable table;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != rows[0].size())
      throw ParseError(std::string(op) + "wrong field count" + detail::at_row(r));
    AggregationUnit unit;
    unit.unit_id = row[id_col];
    if (unit.unit_id.empty()) throw ParseError(std::string(op) + "empty unit_id" + detail::at_row(r));
    auto pop = csv::parse_uint(row[pop_col]);
    if (!pop || *pop < 1)
      throw ValidationError(std::string(op) + "population must be an integer >= 1" + detail::at_row(r));
    unit.population = static_cast<std::size_t>(*pop);

    auto number = [&](std::size_t c, const std::string& what) {
      auto v = csv::parse_double(row[c]);
      if (!v || !std::isfinite(*v))
        throw ParseError(std::string(op) + "non-numeric value for '" + what + "'" + detail::at_row(r));
      return *v;
    };

    for (std::size_t i = 0; i < schema.size(); ++i) {
      const auto& f = schema[i];
      const auto& s = sources[i];
      if (!f.categorical()) {
        double m = number(s.single, f.name);
        if (m < 0.0)
          throw ValidationError(std::string(op) + "negative mean for '" + f.name + "'" +
                                detail::at_row(r));
        unit.values[f.name] = m;
        continue;
      }
      std::vector<double> p;
      if (s.use_single) {
        double v = number(s.single, f.name);
        p = {v, 1.0 - v};
      } else {
        for (std::size_t k = 0; k < s.class_cols.size(); ++k)
          p.push_back(number(s.class_cols[k], f.name + ":" + f.classes[k]));
      }
      double sum = 0.0;
      for (double v : p) {
        if (v < 0.0 || v > 1.0)
          throw ValidationError(std::string(op) + "proportion of '" + f.name + "' outside [0,1]" +
                                detail::at_row(r));
        sum += v;
      }
      if (std::abs(sum - 1.0) > kRenormalizationTolerance)
        throw ValidationError(std::string(op) + "proportions of '" + f.name + "' sum to " +
                              csv::format_double(sum) + detail::at_row(r));
      // Sums already equal to 1 up to rounding are left bit-identical.
      if (std::abs(sum - 1.0) > 1e-12)
        for (double& v : p) v /= sum;
      unit.values[f.name] = std::move(p);
    }
    table.units.push_back(std::move(unit));
  }
  if (table.units.empty()) throw ParseError(std::string(op) + "no aggregation units");
  validate_coarse(table, schema, "load_coarse_csv");
  return table;
}

inline CoarseTable load_coarse_csv(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_coarse_csv: cannot open '" + path.string() + "'");
  return read_coarse_csv(in, schema);
}

/// Writes every categorical feature in expanded `f:c` form.
inline void write_coarse_csv(std::ostream& out, const CoarseTable& coarse, const Schema& schema) {
  csv::Row header{"unit_id", "population"};
  for (const auto& f : schema) {
    if (f.categorical())
      for (const auto& c : f.classes) header.push_back(f.name + ":" + c);
    else
      header.push_back(f.name);
  }
  csv::write_row(out, header);
  for (const auto& unit : coarse.units) {
    csv::Row row{unit.unit_id, std::to_string(unit.population)};
    for (const auto& f : schema) {
      if (f.categorical())
        for (double v : unit.proportions(f.name)) row.push_back(csv::format_double(v));
      else
        row.push_back(csv::format_double(unit.mean(f.name)));
    }
    csv::write_row(out, row);
  }
}

inline void save_coarse_csv(const std::filesystem::path& path, const CoarseTable& coarse,
                            const Schema& schema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_coarse_csv: cannot open '" + path.string() + "'");
  write_coarse_csv(out, coarse, schema);
}

}  // namespace downscale
