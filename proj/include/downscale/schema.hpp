#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"

namespace downscale {

enum class FeatureKind { categorical, continuous };

/// Declaration of one feature: its kind, its batch and whether it is core.
///
/// Batch 0 is the core batch. Categorical features list their classes in
/// declaration order; `ordinal` marks banded variables (age, income) whose
/// class order carries meaning for record matching.
struct FeatureSchema {
  std::string name;
  FeatureKind kind = FeatureKind::categorical;
  std::vector<std::string> classes;
  int batch = 0;
  bool is_core = true;
  bool ordinal = false;

  bool categorical() const noexcept { return kind == FeatureKind::categorical; }
  std::size_t num_classes() const noexcept { return classes.size(); }

  std::optional<std::size_t> class_index(std::string_view label) const {
    auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end()) return std::nullopt;
    return static_cast<std::size_t>(it - classes.begin());
  }
};

using Schema = std::vector<FeatureSchema>;

inline std::optional<std::size_t> find_feature(const Schema& schema, std::string_view name) {
  for (std::size_t i = 0; i < schema.size(); ++i)
    if (schema[i].name == name) return i;
  return std::nullopt;
}

/// Number of non-core batches B. Assumes a validated schema.
inline int batch_count(const Schema& schema) {
  int b = 0;
  for (const auto& f : schema) b = std::max(b, f.batch);
  return b;
}

/// Throws ValidationError unless every FeatureSchema invariant holds.
inline void validate_schema(const Schema& schema, std::string_view op = "validate_schema") {
  const std::string prefix = std::string(op) + ": ";
  if (schema.empty()) throw ValidationError(prefix + "schema declares no features");
  std::set<std::string> names;
  int max_batch = 0;
  bool has_core = false;
  for (const auto& f : schema) {
    if (f.name.empty()) throw ValidationError(prefix + "feature with empty name");
    if (f.name == "unit_id" || f.name == "person_index" || f.name == "population")
      throw ValidationError(prefix + "feature name '" + f.name + "' is reserved");
    if (f.name.find(':') != std::string::npos || f.name.find(',') != std::string::npos)
      throw ValidationError(prefix + "feature name '" + f.name + "' contains ':' or ','");
    if (!names.insert(f.name).second)
      throw ValidationError(prefix + "duplicate feature name '" + f.name + "'");
    if (f.batch < 0) throw ValidationError(prefix + "negative batch for '" + f.name + "'");
    if ((f.batch == 0) != f.is_core)
      throw ValidationError(prefix + "feature '" + f.name +
                            "': core flag must be set exactly for batch 0");
    if (f.categorical()) {
      if (f.classes.size() < 2)
        throw ValidationError(prefix + "categorical feature '" + f.name +
                              "' needs at least 2 classes");
      std::set<std::string> labels(f.classes.begin(), f.classes.end());
      if (labels.size() != f.classes.size())
        throw ValidationError(prefix + "duplicate class label in '" + f.name + "'");
      for (const auto& c : f.classes)
        if (c.empty() || c.find(',') != std::string::npos || c.find('"') != std::string::npos)
          throw ValidationError(prefix + "invalid class label in '" + f.name + "'");
    } else {
      if (!f.classes.empty())
        throw ValidationError(prefix + "continuous feature '" + f.name + "' declares classes");
      if (f.ordinal)
        throw ValidationError(prefix + "continuous feature '" + f.name + "' marked ordinal");
    }
    max_batch = std::max(max_batch, f.batch);
    has_core = has_core || f.is_core;
  }
  if (!has_core) throw ValidationError(prefix + "empty core batch");
  for (int b = 1; b <= max_batch; ++b) {
    bool present = std::any_of(schema.begin(), schema.end(),
                               [b](const FeatureSchema& f) { return f.batch == b; });
    if (!present)
      throw ValidationError(prefix + "batch " + std::to_string(b) + " is empty but batch " +
                            std::to_string(max_batch) + " exists");
  }
}

/// Parses schema entries without checking the batch structure; used for
/// feature subsets stored inside fitted models.
inline Schema parse_schema_subset(const nlohmann::json& doc) {
  constexpr std::string_view op = "load_schema";
  if (!doc.is_array()) throw ParseError(std::string(op) + ": schema must be a JSON array");
  Schema schema;
  for (const auto& item : doc) {
    if (!item.is_object()) throw ParseError(std::string(op) + ": schema entry is not an object");
    FeatureSchema f;
    try {
      f.name = item.at("name").get<std::string>();
      const auto kind = item.at("kind").get<std::string>();
      if (kind == "categorical") {
        f.kind = FeatureKind::categorical;
        f.classes = item.at("classes").get<std::vector<std::string>>();
      } else if (kind == "continuous") {
        f.kind = FeatureKind::continuous;
        if (item.contains("classes")) f.classes = item.at("classes").get<std::vector<std::string>>();
      } else {
        throw ParseError(std::string(op) + ": unknown kind '" + kind + "'");
      }
      f.batch = item.value("batch", 0);
      f.is_core = item.value("core", f.batch == 0);
      f.ordinal = item.value("ordinal", false);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string(op) + ": " + e.what());
    }
    schema.push_back(std::move(f));
  }
  return schema;
}

inline Schema parse_schema(const nlohmann::json& doc) {
  Schema schema = parse_schema_subset(doc);
  validate_schema(schema, "load_schema");
  return schema;
}

inline Schema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_schema: cannot open '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("load_schema: " + std::string(e.what()));
  }
  return parse_schema(doc);
}

inline nlohmann::json schema_to_json(const Schema& schema) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& f : schema) {
    nlohmann::json item{{"name", f.name},
                        {"kind", f.categorical() ? "categorical" : "continuous"},
                        {"batch", f.batch},
                        {"core", f.is_core}};
    if (f.categorical()) item["classes"] = f.classes;
    if (f.ordinal) item["ordinal"] = true;
    doc.push_back(std::move(item));
  }
  return doc;
}

}  // namespace downscale
