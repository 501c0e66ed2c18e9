#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "schema.hpp"
#include "tables.hpp"

namespace downscale {

/// Writes a finalized table as `unit_id,person_index,<feature>...` in schema
/// order. Categorical cells are written as class labels.
inline void write_individual_csv(std::ostream& out, const IndividualTable& table,
                                 const Schema& schema) {
  if (!table.finalized())
    throw ValidationError("write_individual_csv: table holds unfinalized probability cells");
  csv::Row header{"unit_id", "person_index"};
  std::vector<const Column*> cols;
  for (const auto& f : schema) {
    header.push_back(f.name);
    cols.push_back(&table.column(f.name));
  }
  csv::write_row(out, header);
  csv::Row row(header.size());
  for (const auto& unit : table.units()) {
    for (std::size_t k = 0; k < unit.count; ++k) {
      const std::size_t r = unit.offset + k;
      row[0] = unit.unit_id;
      row[1] = std::to_string(k);
      for (std::size_t i = 0; i < schema.size(); ++i) {
        if (schema[i].categorical())
          row[i + 2] = schema[i].classes.at(cols[i]->labels[r]);
        else
          row[i + 2] = csv::format_double(cols[i]->values[r]);
      }
      csv::write_row(out, row);
    }
  }
}

inline void save_individual_csv(const std::filesystem::path& path, const IndividualTable& table,
                                const Schema& schema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_individual_csv: cannot open '" + path.string() + "'");
  write_individual_csv(out, table, schema);
}

/// Reads an individual CSV. Rows of one unit must be contiguous; rows within a
/// unit are reordered by person_index.
inline IndividualTable read_individual_csv(std::istream& in, const Schema& schema) {
  constexpr const char* op = "load_individual_csv: ";
  auto rows = csv::read_all(in);
  if (rows.empty()) throw ParseError(std::string(op) + "file is empty");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows[0].size(); ++i) col[rows[0][i]] = i;
  auto require = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw ParseError(std::string(op) + "missing column '" + name + "'");
    return it->second;
  };
  const std::size_t id_col = require("unit_id");
  const std::size_t idx_col = require("person_index");
  std::vector<std::size_t> feature_cols;
  for (const auto& f : schema) feature_cols.push_back(require(f.name));

  // Group rows by unit, keeping first-appearance order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> members;
  std::string previous;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size())
      throw ParseError(std::string(op) + "wrong field count in data row " + std::to_string(r));
    const auto& id = rows[r][id_col];
    auto k = csv::parse_uint(rows[r][idx_col]);
    if (!k) throw ParseError(std::string(op) + "bad person_index in data row " + std::to_string(r));
    auto [it, fresh] = members.try_emplace(id);
    if (fresh) {
      order.push_back(id);
    } else if (id != previous) {
      throw ParseError(std::string(op) + "rows of unit '" + id + "' are not contiguous");
    }
    it->second.emplace_back(static_cast<std::size_t>(*k), r);
    previous = id;
  }

  IndividualTable table;
  std::vector<std::size_t> source_rows;
  for (const auto& id : order) {
    auto& list = members[id];
    std::sort(list.begin(), list.end());
    for (std::size_t k = 0; k < list.size(); ++k) {
      if (list[k].first != k)
        throw ParseError(std::string(op) + "unit '" + id + "' person_index values are not 0..n-1");
      source_rows.push_back(list[k].second);
    }
    table.add_unit(id, list.size());
  }

  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& f = schema[i];
    if (f.categorical()) {
      std::vector<std::uint32_t> labels;
      labels.reserve(source_rows.size());
      for (std::size_t r : source_rows) {
        auto c = f.class_index(rows[r][feature_cols[i]]);
        if (!c)
          throw ParseError(std::string(op) + "unknown class '" + rows[r][feature_cols[i]] +
                           "' for feature '" + f.name + "'");
        labels.push_back(static_cast<std::uint32_t>(*c));
      }
      table.set_column(f.name, Column::make_labels(std::move(labels)));
    } else {
      std::vector<double> values;
      values.reserve(source_rows.size());
      for (std::size_t r : source_rows) {
        auto v = csv::parse_double(rows[r][feature_cols[i]]);
        if (!v || !std::isfinite(*v) || *v < 0.0)
          throw ParseError(std::string(op) + "bad value for feature '" + f.name + "'");
        values.push_back(*v);
      }
      table.set_column(f.name, Column::make_reals(std::move(values)));
    }
  }
  return table;
}

inline IndividualTable load_individual_csv(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_individual_csv: cannot open '" + path.string() + "'");
  return read_individual_csv(in, schema);
}

}  // namespace downscale
