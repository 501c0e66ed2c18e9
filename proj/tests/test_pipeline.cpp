#include <gtest/gtest.h>

#include <filesystem>

#include <downscale/downscale.hpp>

using namespace downscale;

namespace {

const std::filesystem::path kSamples = DOWNSCALE_SAMPLES_DIR;

struct ThreeUnit {
  Schema schema = load_schema(kSamples / "three_unit_schema.json");
  CoarseTable coarse = load_coarse_csv(kSamples / "three_unit_coarse.csv", schema);
};

void expect_marginals_reproduced(const IndividualTable& out, const CoarseTable& coarse, const Schema& schema) {
  ASSERT_TRUE(out.finalized());
  const CoarseTable back = aggregate(out, schema);
  ASSERT_EQ(back.units.size(), coarse.units.size());
  for (std::size_t m = 0; m < coarse.units.size(); ++m) {
    const auto& want = coarse.units[m];
    const auto& got = back.units[m];
    EXPECT_EQ(got.unit_id, want.unit_id);
    EXPECT_EQ(got.population, want.population);
    for (const auto& f : schema) {
      if (f.categorical()) {
        const auto budget = integerize_budget(want.population, want.proportions(f.name));
        for (std::size_t k = 0; k < f.num_classes(); ++k)
          EXPECT_EQ(std::llround(got.proportions(f.name)[k] * static_cast<double>(want.population)),
                    static_cast<long long>(budget[k]))
              << want.unit_id << " " << f.name;
      } else {
        EXPECT_NEAR(got.mean(f.name), want.mean(f.name), 1e-6 * want.mean(f.name)) << want.unit_id << " " << f.name;
      }
    }
  }
}

}  // namespace

TEST(Pipeline, ThreeUnitProducesSevenHundredSeventySevenRows) {
  ThreeUnit t;
  const auto result = run_pipeline(t.coarse, t.schema, {});
  EXPECT_EQ(result.individuals.rows(), 467u + 269u + 41u);
  EXPECT_EQ(result.individuals.column_names().size(), 4u);
  expect_marginals_reproduced(result.individuals, t.coarse, t.schema);
  // Three units cannot support a correlation estimate.
  EXPECT_FALSE(result.independence_fallbacks.empty());
  ASSERT_EQ(result.timings.size(), 4u);
  EXPECT_EQ(result.timings[0].phase, "phase1");
  EXPECT_EQ(result.timings[3].phase, "phase4");
}

TEST(Pipeline, WithoutFallbackTinyInputFailsInPhaseTwo) {
  ThreeUnit t;
  PipelineOptions options;
  options.allow_independence_fallback = false;
  try {
    run_pipeline(t.coarse, t.schema, options);
    FAIL() << "expected a phase error";
  } catch (const PhaseError& e) {
    EXPECT_EQ(e.phase(), "phase2");
  }
}

TEST(Pipeline, DeterministicForSeedAndJobCount) {
  SimulationConfig config = default_simulation_config();
  config.units = 60;
  config.max_size = 40;
  const auto coarse = aggregate(simulate_truth(config, 3), config.schema);
  PipelineOptions options = config.pipeline;
  options.seed = 11;
  const auto a = run_pipeline(coarse, config.schema, options);
  options.jobs = 3;
  const auto b = run_pipeline(coarse, config.schema, options);
  EXPECT_EQ(a.individuals, b.individuals);
  options.seed = 12;
  EXPECT_FALSE(run_pipeline(coarse, config.schema, options).individuals == a.individuals);
  expect_marginals_reproduced(a.individuals, coarse, config.schema);
}

TEST(Pipeline, ReusedModelReproducesOutput) {
  SimulationConfig config = default_simulation_config();
  config.units = 40;
  config.max_size = 30;
  const auto coarse = aggregate(simulate_truth(config, 8), config.schema);
  PipelineOptions options = config.pipeline;
  options.seed = 2;
  const auto fitted = run_pipeline(coarse, config.schema, options);
  const auto reloaded = fitted_pipeline_from_json(nlohmann::json::parse(fitted_pipeline_to_json(fitted.model).dump()));
  const auto again = run_pipeline(coarse, config.schema, options, &reloaded);
  EXPECT_EQ(again.individuals, fitted.individuals);

  CoarseTable fewer = coarse;
  fewer.units.pop_back();
  try {
    run_pipeline(fewer, config.schema, options, &reloaded);
    FAIL() << "expected a phase error";
  } catch (const PhaseError& e) {
    EXPECT_EQ(e.phase(), "phase2");
    EXPECT_NE(std::string(e.what()).find("load_model"), std::string::npos);
  }
}

TEST(Pipeline, OutlierRemovalOnlyChangesEstimation) {
  SimulationConfig config = default_simulation_config();
  config.units = 80;
  config.max_size = 20;
  const auto coarse = aggregate(simulate_truth(config, 5), config.schema);
  PipelineOptions on = config.pipeline, off = config.pipeline;
  off.outlier_removal = false;
  const auto a = run_pipeline(coarse, config.schema, on);
  const auto b = run_pipeline(coarse, config.schema, off);
  EXPECT_EQ(a.outliers.flagged.size(), 1u);  // floor(0.02 * 80)
  EXPECT_TRUE(b.outliers.flagged.empty());
  expect_marginals_reproduced(a.individuals, coarse, config.schema);
  expect_marginals_reproduced(b.individuals, coarse, config.schema);
}

TEST(Simulation, TruthShapeAndDeterminism) {
  SimulationConfig config = default_simulation_config();
  config.units = 30;
  const auto truth = simulate_truth(config, 4);
  EXPECT_EQ(truth.units().size(), 30u);
  EXPECT_EQ(truth.column_names().size(), 14u);
  for (const auto& u : truth.units()) {
    EXPECT_GE(u.count, config.min_size);
    EXPECT_LE(u.count, config.max_size);
  }
  EXPECT_EQ(truth, simulate_truth(config, 4));
  EXPECT_FALSE(truth == simulate_truth(config, 5));
  EXPECT_EQ(truth.units()[0].unit_id, "U0000");
}

TEST(Simulation, ClassFrequenciesFollowConfiguredProbabilities) {
  SimulationConfig config = default_simulation_config();
  config.units = 400;
  const auto truth = simulate_truth(config, 1);
  for (std::size_t f = 0; f < config.schema.size(); ++f) {
    const auto& p = config.class_probs[f];
    if (p.empty()) continue;
    std::vector<double> freq(p.size(), 0.0);
    for (auto l : truth.column(config.schema[f].name).labels) freq[l] += 1.0 / static_cast<double>(truth.rows());
    // Unit effects make draws cluster; 0.03 leaves ample room at this scale.
    for (std::size_t k = 0; k < p.size(); ++k) EXPECT_NEAR(freq[k], p[k], 0.03) << config.schema[f].name << " " << k;
  }
}

TEST(Simulation, SingletonUnitsReconstructExactly) {
  SimulationConfig config = default_simulation_config();
  config.units = 40;
  config.min_size = config.max_size = 1;
  const auto outcome = run_simulation_study(config, 9);
  EXPECT_DOUBLE_EQ(outcome.with_outlier_removal.overall.accuracy(), 1.0);
  EXPECT_DOUBLE_EQ(outcome.without_outlier_removal.overall.accuracy(), 1.0);
}

TEST(Simulation, IndependentBinariesMatchRandomPairingOracle) {
  // Truth: one core binary used as the alignment key and three binaries
  // drawn independently with a unit-specific rate. With exact class counts
  // and labels independent of the truth, a unit with k of n ones matches in
  // expectation (k/n)^2 + (1 - k/n)^2 of its cells.
  Schema schema;
  for (const char* name : {"key", "b1", "b2", "b3"}) {
    FeatureSchema f;
    f.name = name;
    f.kind = FeatureKind::categorical;
    f.classes = {"no", "yes"};
    f.is_core = std::string(name) == "key";
    f.batch = f.is_core ? 0 : 1;
    schema.push_back(f);
  }
  SeededRng rng(17);
  IndividualTable truth;
  std::vector<std::size_t> sizes;
  for (std::size_t m = 0; m < 300; ++m) {
    sizes.push_back(20 + static_cast<std::size_t>(rng.uniform() * 40));
    truth.add_unit("U" + std::to_string(1000 + m), sizes.back());
  }
  for (const auto& f : schema) {
    std::vector<std::uint32_t> labels;
    for (std::size_t n : sizes) {
      const double p = f.is_core ? 0.5 : 0.1 + 0.8 * rng.uniform();
      for (std::size_t i = 0; i < n; ++i) labels.push_back(rng.uniform() < p);
    }
    truth.set_column(f.name, Column::make_labels(labels));
  }
  const auto coarse = aggregate(truth, schema);
  PipelineOptions options;
  options.seed = 4;
  const auto result = run_pipeline(coarse, schema, options);
  const auto report = evaluate_tables(truth, result.individuals, schema);
  EXPECT_DOUBLE_EQ(report.by_feature.at("key").accuracy(), 1.0);
  for (const char* name : {"b1", "b2", "b3"}) {
    double expected = 0.0, cells = 0.0;
    for (const auto& u : coarse.units) {
      const double q = u.proportions(name)[1];
      expected += static_cast<double>(u.population) * (q * q + (1 - q) * (1 - q));
      cells += static_cast<double>(u.population);
    }
    EXPECT_NEAR(report.by_feature.at(name).accuracy(), expected / cells, 0.02) << name;
  }
}

TEST(Simulation, ConfigParsingValidates) {
  const auto c = parse_simulation_config(nlohmann::json::parse(R"({"units":12,"rho":0.1,"sd_mode":"pooled"})"));
  EXPECT_EQ(c.units, 12u);
  EXPECT_EQ(c.pipeline.sd_mode, SdMode::pooled);
  EXPECT_EQ(c.schema.size(), 14u);
  EXPECT_THROW(parse_simulation_config(nlohmann::json::parse(R"({"min_size":0})")), ValidationError);
  EXPECT_THROW(parse_simulation_config(nlohmann::json::parse(R"({"rho":1.0})")), ValidationError);
  EXPECT_THROW(parse_simulation_config(nlohmann::json::parse(R"({"units":"many"})")), ParseError);
  const auto desk = load_simulation_config(kSamples / "desk_config.json");
  EXPECT_EQ(desk.units, 200u);
}
