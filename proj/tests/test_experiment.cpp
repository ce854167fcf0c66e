#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pgoc/experiment.hpp"

namespace {

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using namespace pgoc;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(SimulatePlant, DefaultConfigRowCount) {
  PlantConfig cfg;
  RngStream rng(1);
  const Dataset data = simulate_plant(cfg, rng);
  EXPECT_EQ(data.length(), 2000);
  EXPECT_EQ(data.input_dim(), 1);
  EXPECT_EQ(data.output_dim(), 1);
}

TEST(SimulatePlant, OriginIsFixedPointWithoutNoise) {
  PlantConfig cfg;
  cfg.length = 30;
  cfg.input_variance = 0.0;
  cfg.initial_mean = VectorXd::Zero(2);
  cfg.initial_cov = MatrixXd::Zero(2, 2);
  cfg.plant.process_cov = MatrixXd::Zero(2, 2);
  cfg.plant.measurement_variance = 0.0;
  RngStream rng(2);
  const Dataset data = simulate_plant(cfg, rng);
  EXPECT_EQ(data.outputs.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(data.inputs.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SimulatePlant, DeterministicGivenSeed) {
  PlantConfig cfg;
  cfg.length = 100;
  RngStream r1(9), r2(9);
  const Dataset a = simulate_plant(cfg, r1);
  const Dataset b = simulate_plant(cfg, r2);
  EXPECT_EQ(dataset_digest(a), dataset_digest(b));
}

TEST(SimulatePlant, InputVarianceMatches) {
  PlantConfig cfg;
  cfg.length = 20000;
  RngStream rng(5);
  const Dataset data = simulate_plant(cfg, rng);
  const double var = data.inputs.col(0).squaredNorm() / data.length();
  EXPECT_NEAR(var, 3.0, 3.0 * 3.0 * std::sqrt(2.0 / data.length()));
}

TEST(ValidateSolution, ZeroRolloutsEmptyReport) {
  TrigPlant plant;
  RngStream rng(1);
  const auto report =
      validate_solution(MatrixXd::Zero(11, 1), plant, VectorXd::Zero(2), VectorXd::Zero(1), {},
                        CostSpec::quadratic_input(), 0, rng);
  EXPECT_EQ(report.rollouts, 0);
  EXPECT_EQ(report.violations, 0);
}

TEST(ValidateSolution, NoiseFreeFeasibleSolutionNeverViolates) {
  TrigPlant plant;
  plant.process_cov = MatrixXd::Zero(2, 2);
  plant.measurement_variance = 0.0;
  RngStream rng(3);
  // Constraint trivially satisfied by the deterministic plant from rest.
  std::vector<OutputConstraint> constraints = {OutputConstraint{0, 0, 10, -100.0, true}};
  const auto report =
      validate_solution(MatrixXd::Zero(11, 1), plant, VectorXd::Zero(2), VectorXd::Zero(1),
                        constraints, CostSpec::quadratic_input(), 25, rng);
  EXPECT_EQ(report.violations, 0);
  EXPECT_EQ(report.violation_frequency, 0.0);
  EXPECT_EQ(report.cost_mean, 0.0);
}

ExperimentConfig smoke_config() {
  std::stringstream ss(R"(
master_seed = 11
[plant]
length = 50
[pg]
samples = 5
burn_in = 10
thinning = 2
particles = 10
[ocp]
horizon = 10
constraint = "y[0] >= 0.4 @ 4:6"
input_abs_max = 5.0
[certify]
beta = 0.05
validation_rollouts = 40
)");
  return ExperimentConfig::from_config(ConfigFile::parse(ss));
}

TEST(Pipeline, SmokeRunProducesAllArtifacts) {
  const fs::path dir = fresh_dir("pgoc_smoke_pipeline");
  const ExperimentConfig cfg = smoke_config();
  const PipelineResult result = run_pipeline(cfg, dir.string());

  for (const char* name :
       {"config.json", "data.csv", "samples.json", "scenarios.json", "solution.json",
        "support.json", "certificate.json", "validation.json", "figure.csv"}) {
    EXPECT_TRUE(fs::exists(dir / name)) << name;
  }
  EXPECT_TRUE(result.solution.feasible);
  EXPECT_TRUE(result.solution.converged);
  EXPECT_LT(result.support.support.size(), cfg.pg.num_samples);
  EXPECT_GT(result.certificate.level, 0.0);
  EXPECT_LT(result.certificate.level, 1.0);

  // Certificate carries the computed support size and level.
  const json cert = read_json_file((dir / "certificate.json").string());
  EXPECT_EQ(cert.at("kind").get<std::string>(), "ocp-constraints");
  EXPECT_EQ(cert.at("s").get<int>(), static_cast<int>(result.support.support.size()));
  EXPECT_EQ(cert.at("K").get<int>(), 5);
}

TEST(Pipeline, FigureDataInvariants) {
  const fs::path dir = fresh_dir("pgoc_smoke_figure");
  const ExperimentConfig cfg = smoke_config();
  run_pipeline(cfg, dir.string());

  std::ifstream is(dir / "figure.csv");
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "t_control,y_opt_min,y_opt_max,y_mean,t_all,y_all");
  int control_rows = 0, all_rows = 0;
  std::string line;
  while (std::getline(is, line)) {
    std::stringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    cells.resize(6);
    if (!cells[0].empty()) {
      ++control_rows;
      const double lo = std::stod(cells[1]);
      const double hi = std::stod(cells[2]);
      const double mean = std::stod(cells[3]);
      EXPECT_LE(lo, mean);
      EXPECT_LE(mean, hi);
    }
    if (!cells[4].empty()) ++all_rows;
  }
  EXPECT_EQ(control_rows, cfg.ocp.horizon + 1);
  EXPECT_EQ(all_rows, cfg.ocp.horizon + 1 + 5);
}

TEST(Pipeline, MissingArtifactNamedInError) {
  const fs::path dir = fresh_dir("pgoc_missing_artifact");
  try {
    emit_figure_data(dir.string());
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("data.csv"), std::string::npos);
  }
}

TEST(Pipeline, GenericBasisCertificateCarriesCaveat) {
  const fs::path dir = fresh_dir("pgoc_smoke_gp");
  ExperimentConfig cfg = smoke_config();
  cfg.basis.kind = "reduced_rank_gp";
  cfg.basis.gp.modes_x1 = 2;
  cfg.basis.gp.modes_x2 = 2;
  cfg.basis.gp.modes_u = 2;
  cfg.basis.gp.half_width_x1 = 12.0;
  cfg.basis.gp.half_width_x2 = 12.0;
  cfg.basis.gp.half_width_u = 8.0;
  run_pipeline(cfg, dir.string());
  const json cert = read_json_file((dir / "certificate.json").string());
  EXPECT_TRUE(cert.contains("note"));
}

TEST(Pipeline, ReproducibleByteIdenticalArtifacts) {
  const fs::path d1 = fresh_dir("pgoc_repro_1");
  const fs::path d2 = fresh_dir("pgoc_repro_2");
  const ExperimentConfig cfg = smoke_config();
  run_pipeline(cfg, d1.string());
  run_pipeline(cfg, d2.string());
  for (const char* name : {"data.csv", "solution.json", "figure.csv", "certificate.json"}) {
    std::ifstream f1(d1 / name), f2(d2 / name);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    EXPECT_EQ(s1.str(), s2.str()) << name;
    EXPECT_FALSE(s1.str().empty()) << name;
  }
}

}  // namespace
