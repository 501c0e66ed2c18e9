#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "csv.hpp"
#include "error.hpp"
#include "schema.hpp"
#include "tables.hpp"

namespace downscale {

/// Unit-size buckets used for reporting: 1-10, 11-25, 26-50, 51-100, 101+.
struct SizeBucket {
  std::size_t lo;
  std::size_t hi;  // inclusive; max() for the open bucket
  std::string label;
};

inline const std::vector<SizeBucket>& size_buckets() {
  static const std::vector<SizeBucket> buckets{{1, 10, "1-10"},
                                               {11, 25, "11-25"},
                                               {26, 50, "26-50"},
                                               {51, 100, "51-100"},
                                               {101, std::numeric_limits<std::size_t>::max(), "101+"}};
  return buckets;
}

inline std::size_t size_bucket_index(std::size_t n) {
  const auto& b = size_buckets();
  for (std::size_t i = 0; i < b.size(); ++i)
    if (n >= b[i].lo && n <= b[i].hi) return i;
  throw ValidationError("cell_accuracy: unit of size 0");
}

struct MatchTally {
  std::size_t matches = 0;
  std::size_t cells = 0;
  std::size_t units = 0;

  double accuracy() const { return cells ? static_cast<double>(matches) / static_cast<double>(cells) : 0.0; }
  void add(const MatchTally& o) {
    matches += o.matches;
    cells += o.cells;
    units += o.units;
  }
};

struct AccuracyReport {
  MatchTally overall;
  /// Mean over rows of each row's matched/total fraction.
  double row_mean = 0.0;
  std::vector<MatchTally> by_unit_size;             // parallel to size_buckets()
  std::map<std::size_t, MatchTally> by_class_count;  // c -> tally over features with c classes
  std::map<std::string, MatchTally> by_feature;

  static double baseline(std::size_t classes) { return 1.0 / static_cast<double>(classes); }
};

/// Row pairs (truth row, generated row) over matching units.
using RowPairs = std::vector<std::pair<std::size_t, std::size_t>>;

/// Within each unit, orders both tables by the key features (class index for
/// categorical, value for continuous) with person_index as the final
/// tiebreak, and pairs rows positionally. Empty `keys` means the core
/// features in schema order.
inline RowPairs align_rows(const IndividualTable& truth, const IndividualTable& generated, const Schema& schema,
                           std::vector<std::string> keys = {}) {
  constexpr const char* op = "align_rows: ";
  if (keys.empty())
    for (const auto& f : schema)
      if (f.is_core) keys.push_back(f.name);
  if (truth.units().size() != generated.units().size())
    throw ValidationError(std::string(op) + "tables cover different numbers of units");

  auto sorted_rows = [&](const IndividualTable& t, const UnitRows& unit) {
    std::vector<const Column*> cols;
    for (const auto& k : keys) {
      const Column& c = t.column(k);
      if (c.kind == CellKind::distribution)
        throw ValidationError(std::string(op) + "key column '" + k + "' is not finalized");
      cols.push_back(&c);
    }
    std::vector<std::size_t> rows(unit.count);
    std::iota(rows.begin(), rows.end(), unit.offset);
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      for (const Column* c : cols) {
        if (c->kind == CellKind::label) {
          if (c->labels[a] != c->labels[b]) return c->labels[a] < c->labels[b];
        } else if (c->values[a] != c->values[b]) {
          return c->values[a] < c->values[b];
        }
      }
      return false;
    });
    return rows;
  };

  RowPairs pairs;
  pairs.reserve(truth.rows());
  for (std::size_t m = 0; m < truth.units().size(); ++m) {
    const auto& tu = truth.units()[m];
    const UnitRows* gu = generated.find_unit(tu.unit_id);
    if (!gu) throw ValidationError(std::string(op) + "unit '" + tu.unit_id + "' missing from generated table");
    if (gu->count != tu.count)
      throw ValidationError(std::string(op) + "unit '" + tu.unit_id + "' has " + std::to_string(tu.count) +
                            " truth rows but " + std::to_string(gu->count) + " generated rows");
    const auto a = sorted_rows(truth, tu);
    const auto b = sorted_rows(generated, *gu);
    for (std::size_t i = 0; i < a.size(); ++i) pairs.emplace_back(a[i], b[i]);
  }
  return pairs;
}

/// Counts agreeing categorical cells over aligned pairs. Continuous features
/// carry no notion of an exact match and are left out.
inline AccuracyReport cell_accuracy(const IndividualTable& truth, const IndividualTable& generated,
                                    const RowPairs& pairs, const Schema& schema) {
  constexpr const char* op = "cell_accuracy: ";
  std::vector<const FeatureSchema*> features;
  std::vector<const Column*> tcols, gcols;
  for (const auto& f : schema) {
    if (!f.categorical()) continue;
    if (!truth.has_column(f.name) || !generated.has_column(f.name))
      throw ValidationError(std::string(op) + "feature '" + f.name + "' missing from a table");
    const Column& t = truth.column(f.name);
    const Column& g = generated.column(f.name);
    if (t.kind != CellKind::label || g.kind != CellKind::label)
      throw ValidationError(std::string(op) + "feature '" + f.name + "' is not finalized");
    features.push_back(&f);
    tcols.push_back(&t);
    gcols.push_back(&g);
  }
  if (features.empty()) throw ValidationError(std::string(op) + "schema has no categorical features");

  // Map each truth row to its unit size.
  std::vector<std::size_t> unit_size(truth.rows(), 0);
  for (const auto& u : truth.units())
    std::fill(unit_size.begin() + static_cast<std::ptrdiff_t>(u.offset),
              unit_size.begin() + static_cast<std::ptrdiff_t>(u.offset + u.count), u.count);

  AccuracyReport report;
  report.by_unit_size.assign(size_buckets().size(), {});
  for (const auto& u : truth.units()) {
    ++report.by_unit_size[size_bucket_index(u.count)].units;
    ++report.overall.units;
  }
  double row_sum = 0.0;
  for (const auto& [tr, gr] : pairs) {
    std::size_t row_matches = 0;
    auto& bucket = report.by_unit_size[size_bucket_index(unit_size.at(tr))];
    for (std::size_t i = 0; i < features.size(); ++i) {
      const bool hit = tcols[i]->labels[tr] == gcols[i]->labels[gr];
      row_matches += hit;
      auto& by_c = report.by_class_count[features[i]->num_classes()];
      auto& by_f = report.by_feature[features[i]->name];
      by_c.matches += hit;
      ++by_c.cells;
      by_f.matches += hit;
      ++by_f.cells;
    }
    bucket.matches += row_matches;
    bucket.cells += features.size();
    report.overall.matches += row_matches;
    report.overall.cells += features.size();
    row_sum += static_cast<double>(row_matches) / static_cast<double>(features.size());
  }
  report.row_mean = pairs.empty() ? 0.0 : row_sum / static_cast<double>(pairs.size());
  return report;
}

inline AccuracyReport evaluate_tables(const IndividualTable& truth, const IndividualTable& generated,
                                      const Schema& schema, const std::vector<std::string>& keys = {}) {
  return cell_accuracy(truth, generated, align_rows(truth, generated, schema, keys), schema);
}

/// Long-format CSV: section,key,matches,cells,units,accuracy,baseline.
inline void write_accuracy_csv(std::ostream& out, const AccuracyReport& r) {
  csv::write_row(out, {"section", "key", "matches", "cells", "units", "accuracy", "baseline"});
  auto row = [&](const std::string& section, const std::string& key, const MatchTally& t, const std::string& baseline) {
    csv::write_row(out, {section, key, std::to_string(t.matches), std::to_string(t.cells), std::to_string(t.units),
                         csv::format_double(t.accuracy()), baseline});
  };
  row("overall", "all", r.overall, "");
  csv::write_row(out, {"overall", "row_mean", "", "", "", csv::format_double(r.row_mean), ""});
  for (std::size_t i = 0; i < r.by_unit_size.size(); ++i) row("unit_size", size_buckets()[i].label, r.by_unit_size[i], "");
  for (const auto& [c, t] : r.by_class_count)
    row("class_count", std::to_string(c), t, csv::format_double(AccuracyReport::baseline(c)));
  for (const auto& [name, t] : r.by_feature) row("feature", name, t, "");
}

inline void print_accuracy_table(std::ostream& out, const AccuracyReport& r) {
  out << fmt::format("overall accuracy   {:.4f}  ({} / {} cells)\n", r.overall.accuracy(), r.overall.matches,
                     r.overall.cells);
  out << fmt::format("row-mean accuracy  {:.4f}\n\n", r.row_mean);
  out << fmt::format("{:<12}{:>8}{:>12}\n", "unit size", "units", "accuracy");
  for (std::size_t i = 0; i < r.by_unit_size.size(); ++i) {
    const auto& t = r.by_unit_size[i];
    out << fmt::format("{:<12}{:>8}{:>12}\n", size_buckets()[i].label, t.units,
                       t.cells ? fmt::format("{:.4f}", t.accuracy()) : std::string("-"));
  }
  out << fmt::format("\n{:<12}{:>12}{:>12}\n", "classes", "accuracy", "baseline");
  for (const auto& [c, t] : r.by_class_count)
    out << fmt::format("{:<12}{:>12.4f}{:>12.4f}\n", c, t.accuracy(), AccuracyReport::baseline(c));
}

}  // namespace downscale
