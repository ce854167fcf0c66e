#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pgoc/artifacts.hpp"
#include "pgoc/guarantees.hpp"
#include "pgoc/io.hpp"
#include "pgoc/ocp.hpp"
#include "pgoc/pgas.hpp"
#include "pgoc/plant.hpp"
#include "pgoc/rollout.hpp"

namespace pgoc {

/// Stage seed derived from the master seed and a stage tag; every stage of
/// the pipeline owns an independent reproducible stream.
inline std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view tag) {
  return detail::mix64(detail::mix64(master_seed ^ 0x7c6bd1a37f00e1c5ULL) ^
                       detail::fnv1a64(tag));
}

inline CostSpec make_cost(const std::string& kind) {
  if (kind == "quadratic_input") return CostSpec::quadratic_input();
  throw std::invalid_argument("unknown cost kind '" + kind + "'");
}

/// Declarative OCP description as read from a problem/config file.
struct OcpDeclaration {
  int horizon = 100;
  std::string cost_kind = "quadratic_input";
  double input_abs_max = 5.0;  // <= 0 or non-finite: unbounded inputs
  std::vector<OutputConstraint> constraints;
  SolverConfig solver;
  std::uint64_t scenario_seed = 0;  // 0: derive from the master seed

  static OcpDeclaration from_config(const ConfigFile& cfg) {
    OcpDeclaration d;
    d.horizon = cfg.integer("ocp", "horizon", d.horizon);
    d.cost_kind = cfg.str("ocp", "cost", d.cost_kind);
    d.input_abs_max = cfg.number("ocp", "input_abs_max", d.input_abs_max);  // <= 0: unbounded
    const auto texts = cfg.strings_multi("ocp", "constraint");
    if (!texts.empty()) {
      d.constraints.clear();
      for (const std::string& t : texts) d.constraints.push_back(parse_output_constraint(t));
    } else {
      d.constraints = {OutputConstraint{0, 40, 60, 2.0, true}};
    }
    d.solver.max_outer_iterations =
        cfg.integer("ocp", "max_outer_iterations", d.solver.max_outer_iterations);
    d.solver.max_inner_iterations =
        cfg.integer("ocp", "max_inner_iterations", d.solver.max_inner_iterations);
    d.solver.penalty_growth = cfg.number("ocp", "penalty_growth", d.solver.penalty_growth);
    d.solver.initial_penalty = cfg.number("ocp", "initial_penalty", d.solver.initial_penalty);
    d.solver.stationarity_tol = cfg.number("ocp", "stationarity_tol", d.solver.stationarity_tol);
    d.solver.constraint_tol = cfg.number("ocp", "constraint_tol", d.solver.constraint_tol);
    d.scenario_seed = static_cast<std::uint64_t>(cfg.number("ocp", "scenario_seed", 0.0));
    return d;
  }

  json echo() const {
    json c = json::array();
    for (const OutputConstraint& oc : constraints) c.push_back(format_output_constraint(oc));
    return json{{"horizon", horizon},
                {"cost", cost_kind},
                {"input_abs_max", input_abs_max},
                {"constraints", c},
                {"scenario_seed", scenario_seed}};
  }

  ScenarioOCP build(std::vector<Scenario> scenarios) const {
    ScenarioOCP problem;
    problem.scenarios = std::move(scenarios);
    problem.cost = make_cost(cost_kind);
    problem.output_constraints = constraints;
    problem.horizon = horizon;
    const int n_u = problem.input_dim();
    if (std::isfinite(input_abs_max) && input_abs_max > 0.0) {
      problem.input_lower = VectorXd::Constant(n_u, -input_abs_max);
      problem.input_upper = VectorXd::Constant(n_u, input_abs_max);
    } else {
      problem.input_lower = ScenarioOCP::unbounded(n_u, -1.0);
      problem.input_upper = ScenarioOCP::unbounded(n_u, +1.0);
    }
    return problem;
  }
};

/// Everything one end-to-end experiment needs; defaults reproduce the
/// benchmark study at full scale.
struct ExperimentConfig {
  std::uint64_t master_seed = 1;
  PlantConfig plant;
  PGConfig pg;
  double prior_dof = 5.0;
  double prior_scale = 0.3;        // scale matrix = prior_scale * I
  double coefficient_scale = 2.0;  // V = coefficient_scale * I (known_v5 basis)
  double q_init = 0.3;             // initial Q = q_init * I; initial A = 0
  BasisSpec basis;
  OcpDeclaration ocp;
  double beta = 0.01;
  double delta = -1.0;  // < 0: no target requested
  int validation_rollouts = 500;

  static ExperimentConfig from_config(const ConfigFile& cfg) {
    ExperimentConfig e;
    e.master_seed = static_cast<std::uint64_t>(cfg.number("", "master_seed", 1.0));

    e.plant.kind = cfg.str("plant", "kind", e.plant.kind);
    e.plant.length = cfg.integer("plant", "length", e.plant.length);
    e.plant.input_variance = cfg.number("plant", "input_variance", e.plant.input_variance);
    {
      const auto mean = cfg.numbers("plant", "initial_mean", {2.0, 2.0});
      if (mean.size() != 2) throw std::runtime_error("plant.initial_mean must have 2 entries");
      e.plant.initial_mean = Eigen::Map<const VectorXd>(mean.data(), 2);
      const double var = cfg.number("plant", "initial_variance", 0.5);
      e.plant.initial_cov = var * MatrixXd::Identity(2, 2);
    }

    e.pg.num_samples = cfg.integer("pg", "samples", e.pg.num_samples);
    e.pg.burn_in = cfg.integer("pg", "burn_in", e.pg.burn_in);
    e.pg.thinning = cfg.integer("pg", "thinning", e.pg.thinning);
    e.pg.num_particles = cfg.integer("pg", "particles", e.pg.num_particles);
    e.prior_dof = cfg.number("pg", "prior_dof", e.prior_dof);
    e.prior_scale = cfg.number("pg", "prior_scale", e.prior_scale);
    e.coefficient_scale = cfg.number("pg", "coefficient_scale", e.coefficient_scale);
    e.q_init = cfg.number("pg", "q_init", e.q_init);

    e.basis.kind = cfg.str("basis", "kind", e.basis.kind);
    e.basis.gp.lengthscale = cfg.number("basis", "lengthscale", e.basis.gp.lengthscale);
    e.basis.gp.signal_std = cfg.number("basis", "signal_std", e.basis.gp.signal_std);
    {
      const auto modes = cfg.numbers("basis", "modes", {5, 5, 5});
      const auto widths = cfg.numbers("basis", "half_widths", {20.0, 20.0, 10.0});
      if (modes.size() != 3 || widths.size() != 3) {
        throw std::runtime_error("basis.modes and basis.half_widths must have 3 entries");
      }
      e.basis.gp.modes_x1 = static_cast<int>(modes[0]);
      e.basis.gp.modes_x2 = static_cast<int>(modes[1]);
      e.basis.gp.modes_u = static_cast<int>(modes[2]);
      e.basis.gp.half_width_x1 = widths[0];
      e.basis.gp.half_width_x2 = widths[1];
      e.basis.gp.half_width_u = widths[2];
    }

    e.ocp = OcpDeclaration::from_config(cfg);
    e.beta = cfg.number("certify", "beta", e.beta);
    e.delta = cfg.number("certify", "delta", e.delta);
    e.validation_rollouts =
        cfg.integer("certify", "validation_rollouts", e.validation_rollouts);
    return e;
  }

  static ExperimentConfig from_file(const std::string& path) {
    return from_config(ConfigFile::parse_file(path));
  }

  /// Resolved configuration echo persisted with every experiment.
  json to_json() const {
    return json{
        {"master_seed", master_seed},
        {"plant",
         {{"kind", plant.kind},
          {"length", plant.length},
          {"input_variance", plant.input_variance},
          {"initial_mean", detail::vector_to_json(plant.initial_mean)},
          {"initial_variance", plant.initial_cov(0, 0)}}},
        {"pg",
         {{"samples", pg.num_samples},
          {"burn_in", pg.burn_in},
          {"thinning", pg.thinning},
          {"particles", pg.num_particles},
          {"prior_dof", prior_dof},
          {"prior_scale", prior_scale},
          {"coefficient_scale", coefficient_scale},
          {"q_init", q_init}}},
        {"basis", basis.to_json()},
        {"ocp", ocp.echo()},
        {"certify",
         {{"beta", beta}, {"delta", delta}, {"validation_rollouts", validation_rollouts}}}};
  }

  /// Prior over (A, Q): isotropic scale/mean, coefficient covariance either
  /// isotropic (known basis) or the GP spectral-density diagonal.
  MNIWPrior build_prior(const Basis& b) const {
    const int n_x = 2;
    const int n_a = b.output_dim();
    if (basis.kind == "reduced_rank_gp") {
      const VectorXd v = reduced_rank_gp(basis.gp).prior_coefficient_variances;
      return MNIWPrior(prior_scale * MatrixXd::Identity(n_x, n_x), prior_dof,
                       MatrixXd::Zero(n_x, n_a), MatrixXd(v.asDiagonal()));
    }
    return MNIWPrior::isotropic(n_x, n_a, prior_scale, prior_dof, coefficient_scale);
  }

  GaussianPrior initial_state_prior() const {
    return GaussianPrior{plant.initial_mean, plant.initial_cov};
  }

  LinearObservation observation() const {
    return LinearObservation::component(0, 2, 1, plant.plant.measurement_variance);
  }
};

/// Empirical performance of an input trajectory on the true plant.
struct ValidationReport {
  int rollouts = 0;
  int violations = 0;
  double violation_frequency = 0.0;
  double cost_mean = 0.0;
  double cost_std = 0.0;
  double cost_min = 0.0;
  double cost_max = 0.0;
  MatrixXd sample_outputs;  // outputs of the first rollout, (H+1) x 1
};

/// Apply u_star to the true plant n_rollouts times, continuing the latent
/// trajectory from the end of the data window with fresh noise, and report
/// constraint-violation frequency and cost statistics.
inline ValidationReport validate_solution(const MatrixXd& u_star, const TrigPlant& plant,
                                          const VectorXd& last_state, const VectorXd& last_input,
                                          const std::vector<OutputConstraint>& constraints,
                                          const CostSpec& cost, int n_rollouts, RngStream& rng) {
  if (n_rollouts < 0) throw std::invalid_argument("validate_solution: n_rollouts must be >= 0");
  const int h = static_cast<int>(u_star.rows()) - 1;
  ValidationReport report;
  report.rollouts = n_rollouts;
  if (n_rollouts == 0) return report;

  const MatrixXd q_factor = psd_factor(plant.process_cov, "validate process_cov");
  const double meas_std = std::sqrt(plant.measurement_variance);
  std::vector<double> costs;
  costs.reserve(n_rollouts);

  for (int r = 0; r < n_rollouts; ++r) {
    RngStream stream = rng.substream(r);
    VectorXd x = TrigPlant::transition(last_state, last_input) +
                 q_factor * standard_normal_vector(2, stream);
    MatrixXd outputs(h + 1, 1);
    double j = 0.0;
    for (int t = 0; t <= h; ++t) {
      const VectorXd u = u_star.row(t).transpose();
      outputs(t, 0) = TrigPlant::observe(x) + meas_std * stream.normal();
      j += cost.stage(u, outputs.row(t).transpose());
      x = TrigPlant::transition(x, u) + q_factor * standard_normal_vector(2, stream);
    }
    j += cost.terminal(outputs.row(h).transpose());
    costs.push_back(j);

    bool violated = false;
    for (const OutputConstraint& c : constraints) {
      for (int t = c.t_begin; t <= c.t_end && !violated; ++t) {
        if (c.violation(outputs(t, c.component)) > 0.0) violated = true;
      }
      if (violated) break;
    }
    if (violated) ++report.violations;
    if (r == 0) report.sample_outputs = outputs;
  }

  report.violation_frequency =
      static_cast<double>(report.violations) / static_cast<double>(n_rollouts);
  double mean = 0.0;
  for (double c : costs) mean += c;
  mean /= costs.size();
  double var = 0.0;
  for (double c : costs) var += (c - mean) * (c - mean);
  report.cost_mean = mean;
  report.cost_std = costs.size() > 1 ? std::sqrt(var / (costs.size() - 1)) : 0.0;
  report.cost_min = *std::min_element(costs.begin(), costs.end());
  report.cost_max = *std::max_element(costs.begin(), costs.end());
  return report;
}

inline json validation_report_to_json(const ValidationReport& r) {
  return json{{"format", "pgoc-validation-v1"},
              {"rollouts", r.rollouts},
              {"violations", r.violations},
              {"violation_frequency", r.violation_frequency},
              {"cost",
               {{"mean", r.cost_mean},
                {"std", r.cost_std},
                {"min", r.cost_min},
                {"max", r.cost_max}}},
              {"sample_outputs", detail::matrix_to_json(r.sample_outputs)}};
}

inline std::string emit_figure_data(const std::string& experiment_dir);

/// Artifacts written by the end-to-end pipeline.
struct PipelineResult {
  std::filesystem::path directory;
  Certificate certificate;
  GreedySupportResult support;
  Solution solution;
  ValidationReport validation;
};

/// End-to-end run: simulate the plant, fit the posterior, draw scenarios,
/// solve the scenario OCP, estimate the support set, certify, validate on the
/// true plant and export figure data. Every stage writes its artifact before
/// the next stage starts, so failures leave partial results behind.
inline PipelineResult run_pipeline(const ExperimentConfig& cfg, const std::string& out_dir,
                                   const std::function<void(const std::string&)>& log = {}) {
  namespace fs = std::filesystem;
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  const auto say = [&](const std::string& m) {
    if (log) log(m);
  };
  const auto stage_guard = [&](const std::string& stage, auto&& fn) {
    try {
      say("stage " + stage);
      fn();
    } catch (const PipelineError&) {
      throw;
    } catch (const std::exception& e) {
      throw PipelineError(stage, e.what());
    }
  };

  PipelineResult result;
  result.directory = dir;
  write_json_file(cfg.to_json(), (dir / "config.json").string());

  PlantRun plant_run;
  stage_guard("generate-data", [&] {
    RngStream rng(derive_seed(cfg.master_seed, "data"));
    plant_run = run_plant(cfg.plant, rng);
    write_dataset_csv(plant_run.data, (dir / "data.csv").string());
  });

  const BasisPtr basis = cfg.basis.build();
  PosteriorSamples samples;
  stage_guard("fit", [&] {
    PGConfig pg = cfg.pg;
    pg.seed = derive_seed(cfg.master_seed, "pg");
    const MNIWPrior prior = cfg.build_prior(*basis);
    const MatrixXd a0 = MatrixXd::Zero(2, basis->output_dim());
    const MatrixXd q0 = cfg.q_init * MatrixXd::Identity(2, 2);
    samples = run_pg(plant_run.data, prior, basis, cfg.observation(),
                     cfg.initial_state_prior(), a0, q0, pg, [&](int it, int total) {
                       say("fit iteration " + std::to_string(it) + "/" + std::to_string(total));
                     });
    write_json_file(samples_to_json(samples, cfg.basis), (dir / "samples.json").string());
  });

  std::vector<Scenario> scenarios;
  std::uint64_t scenario_seed = cfg.ocp.scenario_seed;
  stage_guard("scenarios", [&] {
    if (scenario_seed == 0) scenario_seed = derive_seed(cfg.master_seed, "scenarios");
    RngStream rng(scenario_seed);
    scenarios = draw_scenarios(samples, plant_run.data, cfg.ocp.horizon, rng);
    write_json_file(scenarios_to_json(scenarios, cfg.basis, scenario_seed),
                    (dir / "scenarios.json").string());
  });

  ScenarioOCP problem;
  stage_guard("solve", [&] {
    problem = cfg.ocp.build(scenarios);
    result.solution = solve(problem, cfg.ocp.solver);
    SolutionProvenance prov;
    prov.samples_digest = samples_digest(samples);
    prov.dataset_digest = samples.data_digest;
    prov.scenario_seed = scenario_seed;
    prov.problem = cfg.ocp.echo();
    write_json_file(solution_to_json(result.solution, prov), (dir / "solution.json").string());
    if (!result.solution.converged || !result.solution.feasible) {
      throw std::runtime_error("solver did not return a converged feasible solution");
    }
  });

  stage_guard("support", [&] {
    result.support = greedy_support(problem, result.solution.u_star, cfg.ocp.solver);
    write_json_file(json{{"format", "pgoc-support-v1"},
                         {"indices", result.support.support},
                         {"s", result.support.support.size()},
                         {"verification_delta", result.support.verification_delta},
                         {"solves", result.support.solves}},
                    (dir / "support.json").string());
  });

  stage_guard("certify", [&] {
    const int k = static_cast<int>(scenarios.size());
    const int s = static_cast<int>(result.support.support.size());
    result.certificate.kind = CertificateKind::kOcpConstraints;
    result.certificate.num_samples = k;
    result.certificate.beta = cfg.beta;
    result.certificate.support_size = s;
    result.certificate.level = epsilon_of_s(k, s, cfg.beta);
    json j = certificate_to_json(result.certificate);
    if (cfg.basis.kind == "reduced_rank_gp") {
      j["note"] =
          "generic feature basis: the plant need not be a draw from the model prior, "
          "so the stated level is heuristic rather than guaranteed";
    }
    if (cfg.delta > 0.0) {
      j["delta"] = cfg.delta;
      j["satisfies_delta"] = (1.0 - result.certificate.level >= cfg.delta);
    }
    write_json_file(j, (dir / "certificate.json").string());
  });

  stage_guard("validate", [&] {
    RngStream rng(derive_seed(cfg.master_seed, "validate"));
    result.validation = validate_solution(
        result.solution.u_star, cfg.plant.plant, plant_run.last_state,
        plant_run.data.last_input(), cfg.ocp.constraints, make_cost(cfg.ocp.cost_kind),
        cfg.validation_rollouts, rng);
    write_json_file(validation_report_to_json(result.validation),
                    (dir / "validation.json").string());
  });

  stage_guard("figure", [&] { emit_figure_data(dir.string()); });
  return result;
}

/// Figure data CSV from a pipeline directory: per-time envelope and mean of
/// the scenario outputs under the solved input trajectory, plus one true
/// plant rollout preceded by the last five measured outputs.
inline std::string emit_figure_data(const std::string& experiment_dir) {
  namespace fs = std::filesystem;
  const fs::path dir(experiment_dir);
  for (const char* need : {"data.csv", "scenarios.json", "solution.json", "validation.json"}) {
    if (!fs::exists(dir / need)) {
      throw std::runtime_error("emit_figure_data: missing artifact '" + std::string(need) +
                               "' in " + experiment_dir);
    }
  }
  const Dataset data = read_dataset_csv_file((dir / "data.csv").string());
  const std::vector<Scenario> scenarios =
      scenarios_from_json(read_json_file((dir / "scenarios.json").string()));
  const LoadedSolution sol = solution_from_json(read_json_file((dir / "solution.json").string()));
  const json validation = read_json_file((dir / "validation.json").string());
  const MatrixXd sample_outputs =
      detail::matrix_from_json(validation.at("sample_outputs"), "validation sample_outputs");

  const int h = static_cast<int>(sol.solution.u_star.rows()) - 1;
  const CostSpec cost = CostSpec::quadratic_input();
  MatrixXd envelope_min = MatrixXd::Constant(h + 1, 1, std::numeric_limits<double>::infinity());
  MatrixXd envelope_max = MatrixXd::Constant(h + 1, 1, -std::numeric_limits<double>::infinity());
  VectorXd mean = VectorXd::Zero(h + 1);
  for (const Scenario& sc : scenarios) {
    const RolloutResult r = rollout_inputs(sc, sol.solution.u_star, cost);
    for (int t = 0; t <= h; ++t) {
      envelope_min(t, 0) = std::min(envelope_min(t, 0), r.outputs(t, 0));
      envelope_max(t, 0) = std::max(envelope_max(t, 0), r.outputs(t, 0));
      mean(t) += r.outputs(t, 0);
    }
  }
  mean /= static_cast<double>(scenarios.size());

  const int pre = static_cast<int>(std::min<Eigen::Index>(5, data.length()));
  if (sample_outputs.rows() != h + 1) {
    throw std::runtime_error("emit_figure_data: validation rollout length mismatch");
  }

  const fs::path out_path = dir / "figure.csv";
  std::ofstream os(out_path);
  if (!os) throw std::runtime_error("cannot open for writing: " + out_path.string());
  os << "t_control,y_opt_min,y_opt_max,y_mean,t_all,y_all\n";
  const int rows = h + 1 + pre;
  for (int i = 0; i < rows; ++i) {
    const int t_all = i - pre;
    if (i <= h) {
      os << i << "," << format_double(envelope_min(i, 0)) << ","
         << format_double(envelope_max(i, 0)) << "," << format_double(mean(i));
    } else {
      os << ",,,";
    }
    os << "," << t_all << ",";
    if (t_all < 0) {
      os << format_double(data.outputs(data.length() + t_all, 0));
    } else {
      os << format_double(sample_outputs(t_all, 0));
    }
    os << "\n";
  }
  return out_path.string();
}

}  // namespace pgoc
