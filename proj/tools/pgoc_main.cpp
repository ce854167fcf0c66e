// pgoc: identify a latent-state model from input-output data, solve a
// scenario optimal control problem over posterior samples, and certify the
// result. Subcommands mirror the pipeline stages; `reproduce-v` runs the
// whole benchmark study end to end.

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "pgoc/artifacts.hpp"
#include "pgoc/experiment.hpp"
#include "pgoc/guarantees.hpp"
#include "pgoc/io.hpp"
#include "pgoc/ocp.hpp"
#include "pgoc/pgas.hpp"
#include "pgoc/plant.hpp"
#include "pgoc/rollout.hpp"

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using namespace pgoc;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitRefused = 2;

struct PolicySpec {
  std::string kind;  // zero | constant | solution
  double constant_value = 0.0;
  LoadedSolution solution;

  static PolicySpec parse(const std::string& text) {
    PolicySpec p;
    if (text == "zero") {
      p.kind = "zero";
    } else if (text.rfind("constant:", 0) == 0) {
      p.kind = "constant";
      p.constant_value = parse_double(text.substr(9), "policy constant");
    } else if (text.rfind("solution:", 0) == 0) {
      p.kind = "solution";
      p.solution = solution_from_json(read_json_file(text.substr(9)));
    } else {
      throw std::runtime_error("unknown policy '" + text +
                               "' (expected zero | constant:<v> | solution:<file>)");
    }
    return p;
  }

  ControlLaw law(int n_u) const {
    if (kind == "zero") {
      return [n_u](const MatrixXd&, const MatrixXd&, int) { return VectorXd::Zero(n_u); };
    }
    if (kind == "constant") {
      const double v = constant_value;
      return [n_u, v](const MatrixXd&, const MatrixXd&, int) {
        return VectorXd::Constant(n_u, v);
      };
    }
    const MatrixXd u = solution.solution.u_star;
    return [u](const MatrixXd&, const MatrixXd&, int t) -> VectorXd {
      if (t < 0 || t >= u.rows()) {
        throw std::runtime_error("solution policy queried outside its horizon");
      }
      return u.row(t).transpose();
    };
  }
};

LoadedSamples load_samples(const std::string& path) {
  return samples_from_json(read_json_file(path));
}

std::vector<OutputConstraint> parse_constraints(const std::vector<std::string>& texts) {
  std::vector<OutputConstraint> out;
  for (const auto& t : texts) out.push_back(parse_output_constraint(t));
  return out;
}

void write_rollouts_csv(const std::vector<RolloutResult>& rollouts, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  const int n_u = static_cast<int>(rollouts.front().inputs.cols());
  const int n_y = static_cast<int>(rollouts.front().outputs.cols());
  os << "k,t";
  for (int j = 1; j <= n_u; ++j) os << ",u_" << j;
  for (int j = 1; j <= n_y; ++j) os << ",y_" << j;
  os << ",J\n";
  for (std::size_t k = 0; k < rollouts.size(); ++k) {
    const RolloutResult& r = rollouts[k];
    for (int t = 0; t < r.inputs.rows(); ++t) {
      os << k << "," << t;
      for (int j = 0; j < n_u; ++j) os << "," << format_double(r.inputs(t, j));
      for (int j = 0; j < n_y; ++j) os << "," << format_double(r.outputs(t, j));
      os << "," << format_double(r.cost) << "\n";
    }
  }
}

int cmd_generate_data(const std::string& config_path, const std::string& out,
                      std::int64_t seed_override) {
  const ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
  const std::uint64_t seed = seed_override >= 0 ? static_cast<std::uint64_t>(seed_override)
                                                : derive_seed(cfg.master_seed, "data");
  RngStream rng(seed);
  const Dataset data = simulate_plant(cfg.plant, rng);
  write_dataset_csv(data, out);
  std::cout << "wrote " << out << " (" << data.length() << " rows, digest "
            << detail::hex64(dataset_digest(data)) << ")\n";
  return kExitOk;
}

int cmd_fit(const std::string& data_path, const std::string& config_path,
            const std::string& out) {
  const ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
  const Dataset data = read_dataset_csv_file(data_path);
  const BasisPtr basis = cfg.basis.build();
  PGConfig pg = cfg.pg;
  pg.seed = derive_seed(cfg.master_seed, "pg");
  const MNIWPrior prior = cfg.build_prior(*basis);
  const PosteriorSamples samples = run_pg(
      data, prior, basis, cfg.observation(), cfg.initial_state_prior(),
      MatrixXd::Zero(2, basis->output_dim()), cfg.q_init * MatrixXd::Identity(2, 2), pg,
      [](int it, int total) { std::cerr << "[pg] iteration " << it << "/" << total << "\n"; });
  write_json_file(samples_to_json(samples, cfg.basis), out);
  std::cout << "wrote " << out << " (" << samples.size() << " samples, digest "
            << detail::hex64(samples_digest(samples)) << ")\n";
  return kExitOk;
}

int cmd_simulate(const std::string& samples_path, const std::string& data_path,
                 const std::string& policy_text, int horizon, std::uint64_t seed,
                 const std::string& out) {
  const LoadedSamples loaded = load_samples(samples_path);
  const Dataset data = read_dataset_csv_file(data_path);
  if (dataset_digest(data) != loaded.samples.data_digest) {
    std::cerr << "error: dataset digest does not match the samples' provenance\n";
    return kExitError;
  }
  const PolicySpec policy = PolicySpec::parse(policy_text);
  RngStream rng(seed);
  const auto scenarios = draw_scenarios(loaded.samples, data, horizon, rng);
  const CostSpec cost = CostSpec::quadratic_input();
  const ControlLaw law = policy.law(static_cast<int>(data.input_dim()));
  std::vector<RolloutResult> rollouts;
  rollouts.reserve(scenarios.size());
  for (const Scenario& sc : scenarios) {
    rollouts.push_back(rollout_policy(sc, law, data, cost));
  }
  write_rollouts_csv(rollouts, out);
  std::cout << "wrote " << out << " (" << rollouts.size() << " rollouts)\n";
  return kExitOk;
}

int cmd_solve_ocp(const std::string& samples_path, const std::string& data_path,
                  const std::string& problem_path, const std::string& out) {
  const LoadedSamples loaded = load_samples(samples_path);
  const Dataset data = read_dataset_csv_file(data_path);
  if (dataset_digest(data) != loaded.samples.data_digest) {
    std::cerr << "error: dataset digest does not match the samples' provenance\n";
    return kExitError;
  }
  OcpDeclaration decl = OcpDeclaration::from_config(ConfigFile::parse_file(problem_path));
  if (decl.scenario_seed == 0) {
    decl.scenario_seed = derive_seed(loaded.samples.config.seed, "scenarios");
  }
  RngStream rng(decl.scenario_seed);
  auto scenarios = draw_scenarios(loaded.samples, data, decl.horizon, rng);
  const ScenarioOCP problem = decl.build(std::move(scenarios));
  const Solution sol = solve(problem, decl.solver);

  SolutionProvenance prov;
  prov.samples_digest = samples_digest(loaded.samples);
  prov.dataset_digest = loaded.samples.data_digest;
  prov.scenario_seed = decl.scenario_seed;
  prov.problem = decl.echo();
  write_json_file(solution_to_json(sol, prov), out);
  std::cout << "wrote " << out << " (objective " << format_double(sol.objective)
            << ", feasible " << (sol.feasible ? "yes" : "no") << ", converged "
            << (sol.converged ? "yes" : "no") << ")\n";
  if (!sol.converged || !sol.feasible) {
    std::cerr << "warning: solution is not a converged feasible point; certification will "
                 "refuse it\n";
    return kExitRefused;
  }
  return kExitOk;
}

int finish_certificate(json cert_json, double delta, double level, const std::string& out) {
  if (delta > 0.0) {
    cert_json["delta"] = delta;
    cert_json["satisfies_delta"] = (1.0 - level >= delta);
  }
  write_json_file(cert_json, out);
  std::cout << "wrote " << out << " (level " << format_double(level) << ")\n";
  if (delta > 0.0 && 1.0 - level < delta) {
    std::cerr << "requested satisfaction probability " << delta
              << " not met (certified level " << format_double(level) << ")\n";
    return kExitRefused;
  }
  return kExitOk;
}

int cmd_certify_ocp(const std::string& solution_path, const std::string& samples_path,
                    const std::string& data_path, const std::string& problem_path, double beta,
                    double delta, const std::string& support_from, const std::string& out) {
  const LoadedSolution sol = solution_from_json(read_json_file(solution_path));
  if (!sol.solution.converged || !sol.solution.feasible) {
    std::cerr << "refused: solution is not a converged feasible point\n";
    return kExitRefused;
  }
  const LoadedSamples loaded = load_samples(samples_path);
  const Dataset data = read_dataset_csv_file(data_path);
  if (samples_digest(loaded.samples) != sol.provenance.samples_digest) {
    std::cerr << "error: samples file does not match the solution's provenance\n";
    return kExitError;
  }
  if (dataset_digest(data) != sol.provenance.dataset_digest) {
    std::cerr << "error: dataset does not match the solution's provenance\n";
    return kExitError;
  }
  OcpDeclaration decl = OcpDeclaration::from_config(ConfigFile::parse_file(problem_path));
  decl.scenario_seed = sol.provenance.scenario_seed;
  if (decl.echo() != sol.provenance.problem) {
    std::cerr << "error: problem file differs from the problem the solution was solved for\n";
    return kExitError;
  }
  if (support_from != "greedy") {
    std::cerr << "error: unsupported --support-from '" << support_from << "'\n";
    return kExitError;
  }

  RngStream rng(decl.scenario_seed);
  auto scenarios = draw_scenarios(loaded.samples, data, decl.horizon, rng);
  const ScenarioOCP problem = decl.build(std::move(scenarios));

  // The stated support property is relative to the solver map; verify the
  // solution is actually that map's output before probing.
  const Solution re = solve(problem, decl.solver);
  if ((re.u_star - sol.solution.u_star).cwiseAbs().maxCoeff() > kSameSolutionTolerance) {
    std::cerr << "error: re-solving the stated problem does not reproduce the solution\n";
    return kExitError;
  }

  const GreedySupportResult support = greedy_support(problem, sol.solution.u_star, decl.solver);
  const int k = static_cast<int>(problem.scenarios.size());
  const int s = static_cast<int>(support.support.size());

  Certificate cert;
  cert.kind = CertificateKind::kOcpConstraints;
  cert.num_samples = k;
  cert.beta = beta;
  cert.support_size = s;
  cert.level = epsilon_of_s(k, s, beta);
  json j = certificate_to_json(cert);
  j["support_indices"] = support.support;
  return finish_certificate(std::move(j), delta, cert.level, out);
}

int cmd_certify_policy(const std::string& samples_path, const std::string& data_path,
                       const std::string& policy_text, int horizon,
                       const std::vector<std::string>& constraint_texts, double beta,
                       double delta, std::uint64_t seed, const std::string& kind,
                       const std::string& out) {
  const LoadedSamples loaded = load_samples(samples_path);
  const Dataset data = read_dataset_csv_file(data_path);
  if (dataset_digest(data) != loaded.samples.data_digest) {
    std::cerr << "error: dataset digest does not match the samples' provenance\n";
    return kExitError;
  }
  const PolicySpec policy = PolicySpec::parse(policy_text);
  if (policy.kind == "solution") {
    // The analysis samples must not be the samples the input trajectory was
    // designed on; otherwise the certificate's premises do not hold.
    if (policy.solution.provenance.samples_digest == samples_digest(loaded.samples)) {
      std::cerr << "error: analysis samples are the design samples of this solution; "
                   "certification requires a distinct sample file\n";
      return kExitError;
    }
    if (horizon + 1 != policy.solution.solution.u_star.rows()) {
      std::cerr << "error: --horizon does not match the solution's horizon\n";
      return kExitError;
    }
  }

  RngStream rng(seed);
  const auto scenarios = draw_scenarios(loaded.samples, data, horizon, rng);
  const CostSpec cost = CostSpec::quadratic_input();
  const ControlLaw law = policy.law(static_cast<int>(data.input_dim()));
  std::vector<RolloutResult> rollouts;
  rollouts.reserve(scenarios.size());
  for (const Scenario& sc : scenarios) rollouts.push_back(rollout_policy(sc, law, data, cost));
  const int k = static_cast<int>(rollouts.size());

  if (kind == "cost") {
    std::vector<double> costs;
    for (const auto& r : rollouts) costs.push_back(r.cost);
    const Certificate cert = certify_cost_bound(costs, beta);
    return finish_certificate(certificate_to_json(cert), delta, cert.level, out);
  }

  const auto constraints = parse_constraints(constraint_texts);
  if (constraints.empty()) {
    std::cerr << "error: --mode policy with --kind constraints needs at least one "
                 "--constraint\n";
    return kExitError;
  }
  const auto h = [&](const RolloutResult& r) {
    double worst = -std::numeric_limits<double>::infinity();
    for (const OutputConstraint& c : constraints) {
      for (int t = c.t_begin; t <= c.t_end; ++t) {
        worst = std::max(worst, c.violation(r.outputs(t, c.component)));
      }
    }
    return worst;
  };
  const PolicyCertification result = certify_policy_constraints(rollouts, h, k, beta);
  if (!result.certified) {
    json j{{"format", "pgoc-certificate-v1"},
           {"kind", "refusal"},
           {"K", k},
           {"beta", beta},
           {"violating_scenarios", result.violating_indices}};
    write_json_file(j, out);
    std::cerr << "refused: " << result.violating_indices.size()
              << " scenario rollout(s) violate the constraints\n";
    return kExitRefused;
  }
  return finish_certificate(certificate_to_json(result.certificate), delta,
                            result.certificate.level, out);
}

int cmd_validate(const std::string& config_path, const std::string& solution_path, int n,
                 const std::string& out) {
  const ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
  const LoadedSolution sol = solution_from_json(read_json_file(solution_path));

  RngStream data_rng(derive_seed(cfg.master_seed, "data"));
  const PlantRun run = run_plant(cfg.plant, data_rng);
  if (dataset_digest(run.data) != sol.provenance.dataset_digest) {
    std::cerr << "error: this config does not regenerate the dataset the solution was built "
                 "from\n";
    return kExitError;
  }
  RngStream rng(derive_seed(cfg.master_seed, "validate"));
  const int rollouts = n > 0 ? n : cfg.validation_rollouts;
  const ValidationReport report =
      validate_solution(sol.solution.u_star, cfg.plant.plant, run.last_state,
                        run.data.last_input(), cfg.ocp.constraints,
                        make_cost(cfg.ocp.cost_kind), rollouts, rng);
  write_json_file(validation_report_to_json(report), out);
  std::cout << "wrote " << out << " (violation frequency "
            << format_double(report.violation_frequency) << ", mean cost "
            << format_double(report.cost_mean) << ")\n";
  return kExitOk;
}

int cmd_reproduce(const std::string& config_path, const std::string& out_dir, bool quiet) {
  const ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
  const PipelineResult result = run_pipeline(cfg, out_dir, [&](const std::string& m) {
    if (!quiet) std::cerr << "[pipeline] " << m << "\n";
  });
  std::cout << "pipeline complete in " << out_dir << "\n"
            << "  objective " << format_double(result.solution.objective) << "\n"
            << "  support size " << result.support.support.size() << "\n"
            << "  certified level " << format_double(result.certificate.level) << "\n"
            << "  empirical violation frequency "
            << format_double(result.validation.violation_frequency) << "\n";
  if (cfg.delta > 0.0 && 1.0 - result.certificate.level < cfg.delta) {
    std::cerr << "requested satisfaction probability " << cfg.delta << " not met\n";
    return kExitRefused;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scenario control with probabilistic certificates for latent-state models"};
  app.require_subcommand(1);

  std::string config_path, data_path, samples_path, problem_path, solution_path;
  std::string out, out_dir, policy_text = "zero", support_from = "greedy";
  std::string kind = "constraints";
  std::vector<std::string> constraint_texts;
  std::string mode;
  int horizon = 100, n_rollouts = 0;
  double beta = 0.01, delta = -1.0;
  std::uint64_t seed = 1;
  std::int64_t seed_override = -1;
  bool quiet = false;

  auto* gen = app.add_subcommand("generate-data", "simulate the benchmark plant to CSV");
  gen->add_option("--config", config_path, "experiment config file")->required();
  gen->add_option("--out", out, "output CSV path")->required();
  gen->add_option("--seed", seed_override, "override the derived data seed");

  auto* fit = app.add_subcommand("fit", "draw posterior samples by particle Gibbs");
  fit->add_option("--data", data_path, "dataset CSV")->required();
  fit->add_option("--config", config_path, "experiment config file")->required();
  fit->add_option("--out", out, "output samples.json")->required();

  auto* sim = app.add_subcommand("simulate", "roll a control law through fresh scenarios");
  sim->add_option("--samples", samples_path, "samples.json")->required();
  sim->add_option("--data", data_path, "dataset CSV")->required();
  sim->add_option("--policy", policy_text, "zero | constant:<v> | solution:<file>");
  sim->add_option("--horizon", horizon, "control horizon H");
  sim->add_option("--seed", seed, "scenario noise seed");
  sim->add_option("--out", out, "output rollouts CSV")->required();

  auto* ocp = app.add_subcommand("solve-ocp", "solve the scenario OCP");
  ocp->add_option("--samples", samples_path, "samples.json")->required();
  ocp->add_option("--data", data_path, "dataset CSV")->required();
  ocp->add_option("--problem", problem_path, "problem declaration file")->required();
  ocp->add_option("--out", out, "output solution.json")->required();

  auto* cert = app.add_subcommand("certify", "emit a probabilistic certificate");
  cert->add_option("--mode", mode, "policy | ocp")->required();
  cert->add_option("--samples", samples_path, "analysis samples.json")->required();
  cert->add_option("--data", data_path, "dataset CSV")->required();
  cert->add_option("--solution", solution_path, "solution.json (mode ocp)");
  cert->add_option("--problem", problem_path, "problem file (mode ocp)");
  cert->add_option("--policy", policy_text, "policy under analysis (mode policy)");
  cert->add_option("--horizon", horizon, "horizon for policy analysis");
  cert->add_option("--constraint", constraint_texts, "constraint, e.g. 'y[0] >= 2 @ 40:60'");
  cert->add_option("--beta", beta, "confidence parameter in (0,1)");
  cert->add_option("--delta", delta, "required satisfaction probability in (0,1)");
  cert->add_option("--seed", seed, "scenario noise seed (mode policy)");
  cert->add_option("--kind", kind, "constraints | cost (mode policy)");
  cert->add_option("--support-from", support_from, "support estimation method (greedy)");
  cert->add_option("--out", out, "output certificate.json")->required();

  auto* val = app.add_subcommand("validate", "apply a solution to the true plant");
  val->add_option("--config", config_path, "experiment config file")->required();
  val->add_option("--solution", solution_path, "solution.json")->required();
  val->add_option("--n", n_rollouts, "validation rollouts (default from config)");
  val->add_option("--out", out, "output report.json")->required();

  auto* rep = app.add_subcommand("reproduce-v", "run the full benchmark pipeline");
  rep->add_option("--config", config_path, "experiment config file")->required();
  rep->add_option("--out-dir", out_dir, "experiment output directory")->required();
  rep->add_flag("--quiet", quiet, "suppress progress logging");

  auto* fig = app.add_subcommand("emit-figure-data", "export figure CSV from a pipeline dir");
  fig->add_option("--dir", out_dir, "experiment directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate_data(config_path, out, seed_override);
    if (fit->parsed()) return cmd_fit(data_path, config_path, out);
    if (sim->parsed()) return cmd_simulate(samples_path, data_path, policy_text, horizon, seed, out);
    if (ocp->parsed()) return cmd_solve_ocp(samples_path, data_path, problem_path, out);
    if (cert->parsed()) {
      if (mode == "ocp") {
        if (solution_path.empty() || problem_path.empty()) {
          std::cerr << "error: --mode ocp requires --solution and --problem\n";
          return kExitError;
        }
        return cmd_certify_ocp(solution_path, samples_path, data_path, problem_path, beta,
                               delta, support_from, out);
      }
      if (mode == "policy") {
        return cmd_certify_policy(samples_path, data_path, policy_text, horizon,
                                  constraint_texts, beta, delta, seed, kind, out);
      }
      std::cerr << "error: --mode must be policy or ocp\n";
      return kExitError;
    }
    if (val->parsed()) return cmd_validate(config_path, solution_path, n_rollouts, out);
    if (rep->parsed()) return cmd_reproduce(config_path, out_dir, quiet);
    if (fig->parsed()) {
      const std::string path = emit_figure_data(out_dir);
      std::cout << "wrote " << path << "\n";
      return kExitOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
