#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "csv.hpp"
#include "error.hpp"
#include "schema.hpp"
#include "tables.hpp"

namespace downscale {

using AttributeValue = std::variant<std::string, double>;

/// An external record with partial identifiers, to be linked to the closest
/// synthetic individual of its aggregation unit.
struct MatchQuery {
  std::string unit_id;
  std::map<std::string, AttributeValue> known;
  std::map<std::string, double> weights;  // missing entries weigh 1
};

struct MatchResult {
  std::size_t row = 0;
  std::size_t person_index = 0;
  double distance = 0.0;
};

namespace detail {

inline double pool_sd(const Column& col) {
  const auto n = static_cast<double>(col.values.size());
  if (n < 2) return 1.0;
  double mean = 0.0;
  for (double v : col.values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : col.values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  return sd > 0.0 ? sd : 1.0;
}

}  // namespace detail

/// Ranks the rows of the query's unit by weighted attribute distance:
/// equality (0/1) for nominal classes, |index difference|/(c-1) for ordinal
/// classes and |difference|/sd for continuous values, where sd is taken over
/// the whole pool. Ties go to the lower person_index.
inline std::vector<MatchResult> probabilistic_match(const MatchQuery& query, const IndividualTable& pool,
                                                    const Schema& schema, std::size_t k) {
  constexpr const char* op = "probabilistic_match: ";
  if (k == 0) throw ValidationError(std::string(op) + "k must be at least 1");
  if (query.known.empty()) throw ValidationError(std::string(op) + "query has no known attributes");
  const UnitRows* unit = pool.find_unit(query.unit_id);
  if (!unit || unit->count == 0) throw ValidationError(std::string(op) + "unit '" + query.unit_id + "' not in pool");
  for (const auto& [name, w] : query.weights) {
    if (!query.known.count(name)) throw ValidationError(std::string(op) + "weight for unqueried feature '" + name + "'");
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError(std::string(op) + "weights must be finite and >= 0");
  }

  struct Term {
    const FeatureSchema* feature;
    const Column* column;
    double weight;
    std::size_t label = 0;
    double value = 0.0;
    double scale = 1.0;
  };
  std::vector<Term> terms;
  for (const auto& [name, raw] : query.known) {
    const auto fi = find_feature(schema, name);
    if (!fi) throw ValidationError(std::string(op) + "unknown feature '" + name + "'");
    const auto& f = schema[*fi];
    if (!pool.has_column(name)) throw ValidationError(std::string(op) + "feature '" + name + "' missing from pool");
    Term t{&f, &pool.column(name), query.weights.count(name) ? query.weights.at(name) : 1.0};
    if (f.categorical()) {
      if (t.column->kind != CellKind::label)
        throw ValidationError(std::string(op) + "pool column '" + name + "' is not finalized");
      const auto* label = std::get_if<std::string>(&raw);
      const auto idx = label ? f.class_index(*label) : std::nullopt;
      if (!idx) throw ValidationError(std::string(op) + "value for '" + name + "' is not one of its classes");
      t.label = *idx;
      t.scale = f.ordinal ? static_cast<double>(f.num_classes() - 1) : 1.0;
    } else {
      if (const auto* v = std::get_if<double>(&raw))
        t.value = *v;
      else if (auto parsed = csv::parse_double(std::get<std::string>(raw)))
        t.value = *parsed;
      else
        throw ValidationError(std::string(op) + "value for '" + name + "' is not a number");
      if (!std::isfinite(t.value)) throw ValidationError(std::string(op) + "value for '" + name + "' is not finite");
      t.scale = detail::pool_sd(*t.column);
    }
    terms.push_back(t);
  }

  std::vector<MatchResult> out;
  out.reserve(unit->count);
  for (std::size_t i = 0; i < unit->count; ++i) {
    const std::size_t r = unit->offset + i;
    double dist = 0.0;
    for (const auto& t : terms) {
      double d;
      if (!t.feature->categorical()) {
        d = std::abs(t.column->values[r] - t.value) / t.scale;
      } else if (t.feature->ordinal) {
        const auto a = static_cast<double>(t.column->labels[r]);
        d = std::abs(a - static_cast<double>(t.label)) / t.scale;
      } else {
        d = t.column->labels[r] == t.label ? 0.0 : 1.0;
      }
      dist += t.weight * d;
    }
    out.push_back({r, i, dist});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const MatchResult& a, const MatchResult& b) { return a.distance < b.distance; });
  if (out.size() > k) out.resize(k);
  return out;
}

inline MatchQuery parse_match_query(const nlohmann::json& j) {
  constexpr const char* op = "load_match_query: ";
  try {
    MatchQuery q;
    q.unit_id = j.at("unit_id").get<std::string>();
    for (const auto& [name, v] : j.at("attributes").items()) {
      if (v.is_string())
        q.known[name] = v.get<std::string>();
      else if (v.is_number())
        q.known[name] = v.get<double>();
      else
        throw ParseError(std::string(op) + "attribute '" + name + "' must be a string or number");
    }
    if (j.contains("weights"))
      for (const auto& [name, w] : j.at("weights").items()) q.weights[name] = w.get<double>();
    return q;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string(op) + e.what());
  }
}

inline MatchQuery load_match_query(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_match_query: cannot open '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("load_match_query: ") + e.what());
  }
  return parse_match_query(doc);
}

/// rank,unit_id,person_index,distance,<schema features...>
inline void write_match_csv(std::ostream& out, const std::vector<MatchResult>& results, const IndividualTable& pool,
                            const Schema& schema, const std::string& unit_id) {
  csv::Row header{"rank", "unit_id", "person_index", "distance"};
  for (const auto& f : schema) header.push_back(f.name);
  csv::write_row(out, header);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& m = results[i];
    csv::Row row{std::to_string(i + 1), unit_id, std::to_string(m.person_index), csv::format_double(m.distance)};
    for (const auto& f : schema) {
      const auto& col = pool.column(f.name);
      row.push_back(f.categorical() ? f.classes.at(col.labels[m.row]) : csv::format_double(col.values[m.row]));
    }
    csv::write_row(out, row);
  }
}

}  // namespace downscale
