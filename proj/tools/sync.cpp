// sync: command-line front end for the downscaling toolkit.
//
//   sync generate --coarse X.csv --schema S.json --out Y.csv
//   sync evaluate --truth T.csv --generated Y.csv --schema S.json
//   sync simulate [--config C.json] --seeds 5
//   sync match --pool Y.csv --schema S.json --query Q.json --k 5

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <downscale/downscale.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace downscale;

namespace {

constexpr const char* kVersion = "0.1.0";

struct GenerateArgs {
  fs::path coarse, schema, out, manifest, save_model, load_model, outlier_report;
  std::uint64_t seed = 0;
  std::string sd_mode = "sqrt_n";
  std::string outlier_removal = "on";
  double contamination = kDefaultContamination;
  std::string phase3 = "distribution";
  std::size_t max_training_rows = 0;
  bool timings = false;
};

struct EvaluateArgs {
  fs::path truth, generated, schema, out;
  std::vector<std::string> keys;
};

struct SimulateArgs {
  fs::path config, out;
  std::size_t seeds = 5;
  std::uint64_t first_seed = 0;
};

struct MatchArgs {
  fs::path pool, schema, query, out;
  std::size_t k = 5;
};

fs::path default_manifest_path(const fs::path& out) {
  fs::path p = out;
  return p.replace_extension(".manifest.json");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  f << text;
}

json build_manifest(const GenerateArgs& a, const PipelineOptions& opt, const PipelineResult& r) {
  const auto& p = opt.training.predictor;
  json decisions{
      {"sd_mode", std::string(to_string(opt.sd_mode))},
      {"phase3", std::string(to_string(opt.phase3))},
      {"outlier_removal", opt.outlier_removal},
      {"contamination", opt.contamination},
      {"outlier_method", "ecdf_tail_score"},
      {"min_units_for_outlier_scoring", kMinUnitsForOutlierScoring},
      {"proportion_clamp", "half_count"},
      {"beta_variance_floor", kMinBetaVariance},
      {"beta_variance_ceiling_fraction", kBetaVarianceCeiling},
      {"pd_repair", {{"eigenvalue_floor", kEigenvalueFloor}, {"max_iterations", kMaxRepairIterations}}},
      {"independence_fallback", opt.allow_independence_fallback},
      {"categorical_cells", "renormalized_beta_draws"},
      {"predictor",
       {{"family", "softmax_linear/least_squares"},
        {"l2", p.l2},
        {"learning_rate", p.learning_rate},
        {"max_iterations", p.max_iterations},
        {"gradient_tolerance", p.gradient_tolerance},
        {"ridge", p.ridge},
        {"input_encoding", "probability_vectors"},
        {"training_targets", "one_draw_per_row"},
        {"max_training_rows", opt.training.max_training_rows}}},
      {"integerization", "largest_remainder"},
      {"assignment", "budget_masking_person_index_order"},
      {"continuous_shift", "floor_and_redistribute"},
  };
  json m{{"tool", "sync generate"},
         {"version", kVersion},
         {"seed", opt.seed},
         {"inputs", {{"coarse", a.coarse.string()}, {"schema", a.schema.string()}}},
         {"decisions", decisions},
         {"outliers",
          {{"flagged", std::vector<std::string>(r.outliers.flagged.begin(), r.outliers.flagged.end())},
           {"threshold", std::isfinite(r.outliers.threshold) ? json(r.outliers.threshold) : json(nullptr)}}},
         {"independence_fallbacks", r.independence_fallbacks},
         {"output", {{"path", a.out.string()}, {"units", r.individuals.units().size()}, {"rows", r.individuals.rows()}}}};
  if (!a.load_model.empty()) m["inputs"]["model"] = a.load_model.string();
  if (a.timings) {
    json t = json::object();
    for (const auto& pt : r.timings) t[pt.phase] = pt.seconds;
    m["timings_seconds"] = t;
  }
  return m;
}

int cmd_generate(const GenerateArgs& a, std::size_t jobs) {
  const Schema schema = load_schema(a.schema);
  const CoarseTable coarse = load_coarse_csv(a.coarse, schema);

  PipelineOptions opt;
  opt.seed = a.seed;
  opt.sd_mode = parse_sd_mode(a.sd_mode);
  opt.outlier_removal = a.outlier_removal == "on";
  opt.contamination = a.contamination;
  opt.phase3 = parse_phase3_mode(a.phase3);
  opt.training.max_training_rows = a.max_training_rows;
  opt.jobs = jobs;

  std::optional<FittedPipeline> reuse;
  if (!a.load_model.empty()) {
    reuse = load_fitted_pipeline(a.load_model);
    if (schema_to_json(reuse->schema) != schema_to_json(schema))
      throw ValidationError("load_model: stored schema differs from --schema");
  }
  const PipelineResult r = run_pipeline(coarse, schema, opt, reuse ? &*reuse : nullptr);

  save_individual_csv(a.out, r.individuals, schema);
  write_text(a.manifest.empty() ? default_manifest_path(a.out) : a.manifest,
             build_manifest(a, opt, r).dump(2) + "\n");
  if (!a.save_model.empty()) save_fitted_pipeline(a.save_model, r.model);
  if (!a.outlier_report.empty()) {
    std::ostringstream s;
    write_outlier_report(s, r.outliers);
    write_text(a.outlier_report, s.str());
  }
  std::cerr << fmt::format("sync generate: wrote {} rows for {} units to {}\n", r.individuals.rows(),
                           r.individuals.units().size(), a.out.string());
  return 0;
}

int cmd_evaluate(const EvaluateArgs& a) {
  const Schema schema = load_schema(a.schema);
  const IndividualTable truth = load_individual_csv(a.truth, schema);
  const IndividualTable generated = load_individual_csv(a.generated, schema);
  for (const auto& k : a.keys)
    if (!find_feature(schema, k)) throw ValidationError("align_rows: unknown key feature '" + k + "'");
  const AccuracyReport report = evaluate_tables(truth, generated, schema, a.keys);
  print_accuracy_table(std::cout, report);
  if (!a.out.empty()) {
    std::ostringstream s;
    write_accuracy_csv(s, report);
    write_text(a.out, s.str());
  }
  return 0;
}

int cmd_simulate(const SimulateArgs& a, std::size_t jobs) {
  if (a.seeds == 0) throw ValidationError("simulate: --seeds must be at least 1");
  SimulationConfig config = a.config.empty() ? default_simulation_config() : load_simulation_config(a.config);
  config.pipeline.jobs = jobs;

  std::vector<std::string> header{"seed", "on:overall", "off:overall"};
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> class_counts;
  for (const auto& f : config.schema)
    if (f.categorical() && std::find(class_counts.begin(), class_counts.end(), f.num_classes()) == class_counts.end())
      class_counts.push_back(f.num_classes());
  std::sort(class_counts.begin(), class_counts.end());
  for (const char* v : {"on", "off"}) {
    for (const auto& b : size_buckets()) header.push_back(fmt::format("{}:size_{}", v, b.label));
    for (auto c : class_counts) header.push_back(fmt::format("{}:classes_{}", v, c));
  }

  auto flatten = [&](const AccuracyReport& r, std::vector<double>& row) {
    for (const auto& t : r.by_unit_size) row.push_back(t.cells ? t.accuracy() : std::nan(""));
    for (auto c : class_counts) row.push_back(r.by_class_count.at(c).accuracy());
  };
  for (std::size_t i = 0; i < a.seeds; ++i) {
    const std::uint64_t seed = a.first_seed + i;
    const SimulationOutcome o = run_simulation_study(config, seed);
    std::vector<double> row{static_cast<double>(seed), o.with_outlier_removal.overall.accuracy(),
                            o.without_outlier_removal.overall.accuracy()};
    flatten(o.with_outlier_removal, row);
    flatten(o.without_outlier_removal, row);
    rows.push_back(std::move(row));
  }

  std::ostringstream s;
  csv::write_row(s, header);
  auto cell = [](double v) { return std::isnan(v) ? std::string() : fmt::format("{:.6f}", v); };
  for (const auto& row : rows) {
    csv::Row out{std::to_string(static_cast<std::uint64_t>(row[0]))};
    for (std::size_t j = 1; j < row.size(); ++j) out.push_back(cell(row[j]));
    csv::write_row(s, out);
  }
  csv::Row mean{"mean"};
  for (std::size_t j = 1; j < header.size(); ++j) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& row : rows)
      if (!std::isnan(row[j])) sum += row[j], ++n;
    mean.push_back(n ? cell(sum / static_cast<double>(n)) : std::string());
  }
  csv::write_row(s, mean);
  std::cout << s.str();
  if (!a.out.empty()) write_text(a.out, s.str());
  return 0;
}

int cmd_match(const MatchArgs& a) {
  const Schema schema = load_schema(a.schema);
  const IndividualTable pool = load_individual_csv(a.pool, schema);
  const MatchQuery query = load_match_query(a.query);
  const auto results = probabilistic_match(query, pool, schema, a.k);
  std::ostringstream s;
  write_match_csv(s, results, pool, schema, query.unit_id);
  if (a.out.empty())
    std::cout << s.str();
  else
    write_text(a.out, s.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reconstruct individual-level records from aggregated tables"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  std::size_t jobs = 1;
  app.add_option("--jobs", jobs, "Worker threads for per-unit work (output does not depend on it)")
      ->check(CLI::Range(std::size_t{1}, std::size_t{256}));

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Run phases 1-4 and write individual records");
  g->add_option("--coarse", gen.coarse, "Coarse CSV")->required()->check(CLI::ExistingFile);
  g->add_option("--schema", gen.schema, "Schema JSON")->required()->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "Output individual CSV")->required();
  g->add_option("--manifest", gen.manifest, "Manifest JSON (default: <out>.manifest.json)");
  g->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  g->add_option("--sd-mode", gen.sd_mode, "Per-unit deviation rule")
      ->check(CLI::IsMember({"paper", "sqrt_n", "pooled"}))
      ->capture_default_str();
  g->add_option("--outlier-removal", gen.outlier_removal, "Exclude flagged units from pooled estimates")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  g->add_option("--contamination", gen.contamination, "Fraction of units to flag")
      ->check(CLI::Range(0.0, 0.4999999999))
      ->capture_default_str();
  g->add_option("--phase3", gen.phase3, "What batch predictors attach")
      ->check(CLI::IsMember({"argmax", "distribution"}))
      ->capture_default_str();
  g->add_option("--max-training-rows", gen.max_training_rows, "Cap on predictor training rows (0 = all)")
      ->capture_default_str();
  g->add_option("--save-model", gen.save_model, "Write the fitted copula and predictors as JSON");
  g->add_option("--load-model", gen.load_model, "Reuse a saved model instead of fitting")->check(CLI::ExistingFile);
  g->add_option("--outlier-report", gen.outlier_report, "Write per-unit outlier scores as CSV");
  g->add_flag("--timings", gen.timings, "Record per-phase wall-clock timings in the manifest");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score generated records against ground truth");
  e->add_option("--truth", ev.truth, "Ground-truth individual CSV")->required()->check(CLI::ExistingFile);
  e->add_option("--generated", ev.generated, "Generated individual CSV")->required()->check(CLI::ExistingFile);
  e->add_option("--schema", ev.schema, "Schema JSON")->required()->check(CLI::ExistingFile);
  e->add_option("--keys", ev.keys, "Alignment sort keys (default: core features)")->delimiter(',');
  e->add_option("--out", ev.out, "Write the report as CSV");

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Simulation study with outlier removal on and off");
  s->add_option("--config", sim.config, "Simulation config JSON (default: built-in desk-scale setup)")
      ->check(CLI::ExistingFile);
  s->add_option("--seeds", sim.seeds, "Number of seeds")->capture_default_str();
  s->add_option("--first-seed", sim.first_seed, "First seed")->capture_default_str();
  s->add_option("--out", sim.out, "Also write the report CSV here");

  MatchArgs ma;
  auto* m = app.add_subcommand("match", "Rank synthetic individuals against a partial record");
  m->add_option("--pool", ma.pool, "Generated individual CSV")->required()->check(CLI::ExistingFile);
  m->add_option("--schema", ma.schema, "Schema JSON")->required()->check(CLI::ExistingFile);
  m->add_option("--query", ma.query, "Query JSON")->required()->check(CLI::ExistingFile);
  m->add_option("--k", ma.k, "Number of matches")->check(CLI::PositiveNumber)->capture_default_str();
  m->add_option("--out", ma.out, "Output CSV (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (*g) return cmd_generate(gen, jobs);
    if (*e) return cmd_evaluate(ev);
    if (*s) return cmd_simulate(sim, jobs);
    return cmd_match(ma);
  } catch (const PhaseError& err) {
    std::cerr << "sync " << name << ": error in " << err.what() << '\n';
  } catch (const std::exception& err) {
    std::cerr << "sync " << name << ": " << err.what() << '\n';
  }
  return 1;
}
