#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "coordinates.hpp"
#include "csv.hpp"
#include "error.hpp"
#include "schema.hpp"
#include "tables.hpp"

namespace downscale {

inline constexpr double kDefaultContamination = 0.02;
inline constexpr std::size_t kMinUnitsForOutlierScoring = 10;

/// Per-unit tail scores and the resulting flag set.
struct OutlierReport {
  std::vector<std::string> unit_ids;  // coarse-table order
  std::vector<double> scores;         // parallel to unit_ids
  std::set<std::string> flagged;
  double threshold = 0.0;

  double score(const std::string& unit_id) const {
    for (std::size_t i = 0; i < unit_ids.size(); ++i)
      if (unit_ids[i] == unit_id) return scores[i];
    throw Error("OutlierReport: unknown unit '" + unit_id + "'");
  }
};

/// Empirical-CDF tail scoring over every coordinate of the coarse data:
///   score(m) = sum_d -log(min(F_d(x), 1 - F_d(x)) + 1/(2M))
/// with F_d the ECDF across units. Constant coordinates contribute nothing.
/// Fewer than ten units: every score is zero.
inline OutlierReport score_units(const CoarseTable& coarse, const Schema& schema) {
  OutlierReport report;
  const std::size_t m = coarse.units.size();
  for (const auto& u : coarse.units) report.unit_ids.push_back(u.unit_id);
  report.scores.assign(m, 0.0);
  if (m < kMinUnitsForOutlierScoring) return report;

  const double eps = 1.0 / (2.0 * static_cast<double>(m));
  std::vector<double> values(m), sorted(m);
  for (const auto& coord : all_coordinates(schema)) {
    for (std::size_t i = 0; i < m; ++i) values[i] = coordinate_value(coarse.units[i], coord);
    sorted = values;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back()) continue;
    for (std::size_t i = 0; i < m; ++i) {
      const auto le = std::upper_bound(sorted.begin(), sorted.end(), values[i]) - sorted.begin();
      const double f = static_cast<double>(le) / static_cast<double>(m);
      report.scores[i] += -std::log(std::min(f, 1.0 - f) + eps);
    }
  }
  return report;
}

/// Flags the floor(contamination * M) highest scores; ties at the cut are
/// resolved in favour of the lexicographically smaller unit_id. The reported
/// threshold is the highest unflagged score.
inline OutlierReport flag_outliers(OutlierReport report, double contamination) {
  if (!(contamination >= 0.0 && contamination < 0.5))
    throw ValidationError("flag_outliers: contamination must lie in [0, 0.5)");
  const std::size_t m = report.scores.size();
  report.flagged.clear();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (report.scores[a] != report.scores[b]) return report.scores[a] > report.scores[b];
    return report.unit_ids[a] < report.unit_ids[b];
  });
  const auto k = static_cast<std::size_t>(std::floor(contamination * static_cast<double>(m) + 1e-9));
  for (std::size_t i = 0; i < k && i < m; ++i) report.flagged.insert(report.unit_ids[order[i]]);
  if (m == 0)
    report.threshold = 0.0;
  else if (k < m)
    report.threshold = report.scores[order[k]];
  else
    report.threshold = -std::numeric_limits<double>::infinity();
  return report;
}

inline void write_outlier_report(std::ostream& out, const OutlierReport& report) {
  csv::write_row(out, {"unit_id", "score", "flagged"});
  for (std::size_t i = 0; i < report.unit_ids.size(); ++i)
    csv::write_row(out, {report.unit_ids[i], csv::format_double(report.scores[i]),
                         report.flagged.count(report.unit_ids[i]) ? "1" : "0"});
}

}  // namespace downscale
