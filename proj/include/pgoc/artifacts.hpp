#pragma once

#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgoc/basis.hpp"
#include "pgoc/guarantees.hpp"
#include "pgoc/io.hpp"
#include "pgoc/model.hpp"
#include "pgoc/ocp.hpp"
#include "pgoc/pgas.hpp"

namespace pgoc {

using nlohmann::json;

namespace detail {

inline json matrix_to_json(const MatrixXd& m) {
  std::vector<double> flat;
  flat.reserve(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

inline MatrixXd matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data")) {
    throw std::runtime_error(what + ": expected {rows, cols, data}");
  }
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto flat = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) {
    throw std::runtime_error(what + ": data length does not match rows*cols");
  }
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = flat[i * cols + j2];
  return m;
}

inline json vector_to_json(const VectorXd& v) {
  std::vector<double> flat(v.data(), v.data() + v.size());
  return json(flat);
}

inline VectorXd vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw std::runtime_error(what + ": expected an array");
  const auto flat = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size()));
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  static const char* digits = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[i] = digits[v & 0xf];
    v >>= 4;
  }
  buf[16] = '\0';
  return std::string(buf);
}

}  // namespace detail

/// How a basis is reconstructed from an artifact file.
struct BasisSpec {
  std::string kind = "known_v5";  // known_v5 | reduced_rank_gp
  ReducedRankGPConfig gp;

  json to_json() const {
    json j{{"kind", kind}};
    if (kind == "reduced_rank_gp") {
      j["lengthscale"] = gp.lengthscale;
      j["signal_std"] = gp.signal_std;
      j["modes"] = {gp.modes_x1, gp.modes_x2, gp.modes_u};
      j["half_widths"] = {gp.half_width_x1, gp.half_width_x2, gp.half_width_u};
    }
    return j;
  }

  static BasisSpec from_json(const json& j) {
    BasisSpec spec;
    spec.kind = j.at("kind").get<std::string>();
    if (spec.kind == "reduced_rank_gp") {
      spec.gp.lengthscale = j.at("lengthscale").get<double>();
      spec.gp.signal_std = j.at("signal_std").get<double>();
      const auto modes = j.at("modes").get<std::vector<int>>();
      const auto widths = j.at("half_widths").get<std::vector<double>>();
      if (modes.size() != 3 || widths.size() != 3) {
        throw std::runtime_error("basis spec: modes/half_widths must have 3 entries");
      }
      spec.gp.modes_x1 = modes[0];
      spec.gp.modes_x2 = modes[1];
      spec.gp.modes_u = modes[2];
      spec.gp.half_width_x1 = widths[0];
      spec.gp.half_width_x2 = widths[1];
      spec.gp.half_width_u = widths[2];
    } else if (spec.kind != "known_v5") {
      throw std::runtime_error("basis spec: unknown kind '" + spec.kind + "'");
    }
    return spec;
  }

  BasisPtr build() const {
    if (kind == "known_v5") return known_basis_v5();
    return reduced_rank_gp(gp).basis;
  }
};

inline json observation_to_json(const LinearObservation& obs) {
  return json{{"C", detail::matrix_to_json(obs.C)},
              {"D", detail::matrix_to_json(obs.D)},
              {"R", detail::matrix_to_json(obs.R)}};
}

inline LinearObservation observation_from_json(const json& j) {
  return LinearObservation(detail::matrix_from_json(j.at("C"), "observation C"),
                           detail::matrix_from_json(j.at("D"), "observation D"),
                           detail::matrix_from_json(j.at("R"), "observation R"));
}

/// Content digest over the posterior samples (models, final states, config).
inline std::uint64_t samples_digest(const PosteriorSamples& samples) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  detail::hash_bytes(h, &samples.data_digest, sizeof(samples.data_digest));
  const int cfg[4] = {samples.config.num_samples, samples.config.burn_in,
                      samples.config.thinning, samples.config.num_particles};
  detail::hash_bytes(h, cfg, sizeof(cfg));
  detail::hash_bytes(h, &samples.config.seed, sizeof(samples.config.seed));
  for (std::size_t k = 0; k < samples.size(); ++k) {
    detail::hash_matrix(h, samples.models[k].A);
    detail::hash_matrix(h, samples.models[k].Q);
    detail::hash_matrix(h, samples.trajectories[k].last_state());
  }
  return h;
}

// ---------------------------------------------------------------------------
// samples.json
// ---------------------------------------------------------------------------

inline json samples_to_json(const PosteriorSamples& samples, const BasisSpec& basis_spec,
                            bool include_states = true) {
  if (samples.size() == 0) throw std::invalid_argument("samples_to_json: empty samples");
  json j;
  j["format"] = "pgoc-samples-v1";
  j["provenance"] = {
      {"pg",
       {{"samples", samples.config.num_samples},
        {"burn_in", samples.config.burn_in},
        {"thinning", samples.config.thinning},
        {"particles", samples.config.num_particles},
        {"seed", samples.config.seed}}},
      {"dataset_digest", detail::hex64(samples.data_digest)},
      {"basis", basis_spec.to_json()},
      {"observation", observation_to_json(samples.models.front().obs)},
  };
  j["samples_digest"] = detail::hex64(samples_digest(samples));
  json arr = json::array();
  for (std::size_t k = 0; k < samples.size(); ++k) {
    json rec;
    rec["A"] = detail::matrix_to_json(samples.models[k].A);
    rec["Q"] = detail::matrix_to_json(samples.models[k].Q);
    rec["basis-id"] = samples.models[k].basis->id();
    rec["x_last"] = detail::vector_to_json(samples.trajectories[k].last_state());
    if (include_states) rec["states"] = detail::matrix_to_json(samples.trajectories[k].states);
    arr.push_back(std::move(rec));
  }
  j["samples"] = std::move(arr);
  return j;
}

struct LoadedSamples {
  PosteriorSamples samples;
  BasisSpec basis_spec;
  std::uint64_t stored_digest = 0;
};

inline LoadedSamples samples_from_json(const json& j) {
  if (j.value("format", "") != "pgoc-samples-v1") {
    throw std::runtime_error("samples file: unexpected or missing format tag");
  }
  LoadedSamples out;
  const json& prov = j.at("provenance");
  out.basis_spec = BasisSpec::from_json(prov.at("basis"));
  const BasisPtr basis = out.basis_spec.build();
  const LinearObservation obs = observation_from_json(prov.at("observation"));
  const json& pg = prov.at("pg");
  out.samples.config.num_samples = pg.at("samples").get<int>();
  out.samples.config.burn_in = pg.at("burn_in").get<int>();
  out.samples.config.thinning = pg.at("thinning").get<int>();
  out.samples.config.num_particles = pg.at("particles").get<int>();
  out.samples.config.seed = pg.at("seed").get<std::uint64_t>();
  out.samples.data_digest =
      std::stoull(prov.at("dataset_digest").get<std::string>(), nullptr, 16);

  for (const json& rec : j.at("samples")) {
    MatrixXd a = detail::matrix_from_json(rec.at("A"), "sample A");
    MatrixXd q = detail::matrix_from_json(rec.at("Q"), "sample Q");
    if (rec.at("basis-id").get<std::string>() != basis->id()) {
      throw std::runtime_error("samples file: record basis-id does not match provenance basis");
    }
    out.samples.models.emplace_back(std::move(a), std::move(q), basis, obs);
    StateTrajectory traj;
    if (rec.contains("states")) {
      traj.states = detail::matrix_from_json(rec.at("states"), "sample states");
    } else {
      const VectorXd x_last = detail::vector_from_json(rec.at("x_last"), "sample x_last");
      traj.states = x_last.transpose();
    }
    out.samples.trajectories.push_back(std::move(traj));
  }
  if (out.samples.size() == 0) throw std::runtime_error("samples file: no samples");
  out.stored_digest = std::stoull(j.at("samples_digest").get<std::string>(), nullptr, 16);
  return out;
}

// ---------------------------------------------------------------------------
// scenarios.json
// ---------------------------------------------------------------------------

inline json scenarios_to_json(const std::vector<Scenario>& scenarios,
                              const BasisSpec& basis_spec, std::uint64_t seed) {
  if (scenarios.empty()) throw std::invalid_argument("scenarios_to_json: empty");
  json j;
  j["format"] = "pgoc-scenarios-v1";
  j["horizon"] = scenarios.front().horizon();
  j["seed"] = seed;
  j["basis"] = basis_spec.to_json();
  j["observation"] = observation_to_json(scenarios.front().model.obs);
  json arr = json::array();
  for (const Scenario& s : scenarios) {
    arr.push_back(json{{"A", detail::matrix_to_json(s.model.A)},
                       {"Q", detail::matrix_to_json(s.model.Q)},
                       {"x0", detail::vector_to_json(s.initial_state)},
                       {"v", detail::matrix_to_json(s.process_noise)},
                       {"w", detail::matrix_to_json(s.measurement_noise)}});
  }
  j["scenarios"] = std::move(arr);
  return j;
}

inline std::vector<Scenario> scenarios_from_json(const json& j) {
  if (j.value("format", "") != "pgoc-scenarios-v1") {
    throw std::runtime_error("scenarios file: unexpected or missing format tag");
  }
  const BasisPtr basis = BasisSpec::from_json(j.at("basis")).build();
  const LinearObservation obs = observation_from_json(j.at("observation"));
  std::vector<Scenario> out;
  for (const json& rec : j.at("scenarios")) {
    out.emplace_back(
        BasisStateSpaceModel(detail::matrix_from_json(rec.at("A"), "scenario A"),
                             detail::matrix_from_json(rec.at("Q"), "scenario Q"), basis, obs),
        detail::vector_from_json(rec.at("x0"), "scenario x0"),
        detail::matrix_from_json(rec.at("v"), "scenario v"),
        detail::matrix_from_json(rec.at("w"), "scenario w"));
  }
  if (out.empty()) throw std::runtime_error("scenarios file: no scenarios");
  return out;
}

// ---------------------------------------------------------------------------
// solution.json
// ---------------------------------------------------------------------------

struct SolutionProvenance {
  std::uint64_t samples_digest = 0;
  std::uint64_t dataset_digest = 0;
  std::uint64_t scenario_seed = 0;
  json problem;  // echo of the resolved problem declaration
};

inline json solution_to_json(const Solution& sol, const SolutionProvenance& prov) {
  json j;
  j["format"] = "pgoc-solution-v1";
  j["u_star"] = detail::matrix_to_json(sol.u_star);
  j["objective"] = sol.objective;
  j["kkt_residual"] = sol.kkt_residual;
  j["feasible"] = sol.feasible;
  j["converged"] = sol.converged;
  j["scenario_residuals"] = detail::vector_to_json(sol.scenario_residuals);
  json iters = json::array();
  for (const SolveLogEntry& e : sol.iterations) {
    iters.push_back(json{{"outer", e.outer},
                         {"inner_iterations", e.inner_iterations},
                         {"objective", e.objective},
                         {"max_violation", e.max_violation},
                         {"penalty", e.penalty},
                         {"projected_gradient", e.projected_gradient}});
  }
  j["iterations"] = std::move(iters);
  j["provenance"] = json{{"samples_digest", detail::hex64(prov.samples_digest)},
                         {"dataset_digest", detail::hex64(prov.dataset_digest)},
                         {"scenario_seed", prov.scenario_seed},
                         {"problem", prov.problem}};
  return j;
}

struct LoadedSolution {
  Solution solution;
  SolutionProvenance provenance;
};

inline LoadedSolution solution_from_json(const json& j) {
  if (j.value("format", "") != "pgoc-solution-v1") {
    throw std::runtime_error("solution file: unexpected or missing format tag");
  }
  LoadedSolution out;
  out.solution.u_star = detail::matrix_from_json(j.at("u_star"), "u_star");
  out.solution.objective = j.at("objective").get<double>();
  out.solution.kkt_residual = j.at("kkt_residual").get<double>();
  out.solution.feasible = j.at("feasible").get<bool>();
  out.solution.converged = j.at("converged").get<bool>();
  out.solution.scenario_residuals =
      detail::vector_from_json(j.at("scenario_residuals"), "scenario_residuals");
  out.provenance.samples_digest =
      std::stoull(j.at("provenance").at("samples_digest").get<std::string>(), nullptr, 16);
  out.provenance.dataset_digest =
      std::stoull(j.at("provenance").at("dataset_digest").get<std::string>(), nullptr, 16);
  out.provenance.scenario_seed = j.at("provenance").at("scenario_seed").get<std::uint64_t>();
  out.provenance.problem = j.at("provenance").at("problem");
  return out;
}

// ---------------------------------------------------------------------------
// certificate.json
// ---------------------------------------------------------------------------

inline json certificate_to_json(const Certificate& cert) {
  json j;
  j["format"] = "pgoc-certificate-v1";
  j["kind"] = to_string(cert.kind);
  j["K"] = cert.num_samples;
  j["beta"] = cert.beta;
  j["level"] = cert.level;
  if (cert.kind == CertificateKind::kOcpConstraints) j["s"] = cert.support_size;
  if (cert.kind == CertificateKind::kCostBound) j["bound_value"] = cert.bound_value;
  return j;
}

// ---------------------------------------------------------------------------
// Generic helpers
// ---------------------------------------------------------------------------

inline void write_json_file(const json& j, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": invalid JSON (" + e.what() + ")");
  }
  return j;
}

}  // namespace pgoc
