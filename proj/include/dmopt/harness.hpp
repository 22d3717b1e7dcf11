#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dmopt/algorithms.hpp"
#include "dmopt/consensus.hpp"
#include "dmopt/errors.hpp"
#include "dmopt/graph.hpp"
#include "dmopt/pca.hpp"
#include "dmopt/run_log.hpp"
#include "dmopt/text_io.hpp"

// Experiment orchestration: flat key=value configs, deterministic seeding,
// CSV emission. A master seed fans out into the data, graph, and init
// sub-streams unless the corresponding explicit seed is given, so
// sub-experiments reproduce independently.

namespace dmopt {

// Step-size scale eta = beta_hat * n / sum_i m_i. The shipped synthetic
// default comes from the grid-beta suite (best final stationarity on the
// n=8, m=1000, d=10, r=5, xi=0.8 instance); the image-data default is a
// coarse estimate to be re-tuned with grid-beta once data is present.
inline constexpr double kSyntheticBetaHat = 4000.0;
inline constexpr double kMnistBetaHat = 0.5;

inline constexpr const char* kMnistEnvKey = "MNIST_IMAGES";

struct ExperimentConfig {
  // problem
  std::string problem_kind = "synthetic";  // synthetic | mnist
  int n = 8;
  int m_per = 1000;
  int d = 10;
  int r = 5;
  double xi = 0.8;
  std::optional<std::uint64_t> problem_seed;  // default: derived from master_seed
  std::string mnist_path;                     // empty: read env MNIST_IMAGES

  // graph
  std::string graph_kind = "er";  // ring | er
  double graph_p = 0.3;
  std::optional<std::uint64_t> graph_seed;

  // algorithm
  std::string algorithm = "dprgc";
  std::string compressor = "topk:0.4";
  double beta_hat = 0.0;  // required
  double gamma = 1.0;
  int iters = 3000;
  double stationarity_tol = 0.0;
  std::string out_path;
  std::uint64_t master_seed = 0;
  int checkpoint_every = 0;
  std::string checkpoint_path;

  std::uint64_t effective_problem_seed() const {
    return problem_seed ? *problem_seed : derive_seed(master_seed, SeedStream::kData);
  }
  std::uint64_t effective_graph_seed() const {
    return graph_seed ? *graph_seed : derive_seed(master_seed, SeedStream::kGraph);
  }

  // Canonical text: every effective field in a fixed order. Configs that
  // differ only in formatting hash identically.
  std::string canonical_text() const {
    std::ostringstream os;
    os << "problem.kind=" << problem_kind << '\n';
    if (problem_kind == "synthetic")
      os << "problem.n=" << n << "\nproblem.m_per=" << m_per << "\nproblem.d=" << d
         << "\nproblem.r=" << r << "\nproblem.xi=" << format_double(xi) << '\n';
    else
      os << "problem.path=" << mnist_path << "\nproblem.n=" << n << "\nproblem.r=" << r
         << '\n';
    os << "problem.seed=" << effective_problem_seed() << '\n';
    os << "graph.kind=" << graph_kind << '\n';
    if (graph_kind == "er")
      os << "graph.p=" << format_double(graph_p) << '\n';
    os << "graph.seed=" << effective_graph_seed() << '\n';
    os << "algorithm=" << algorithm << "\ncompressor=" << compressor
       << "\nbeta_hat=" << format_double(beta_hat) << "\ngamma=" << format_double(gamma)
       << "\niters=" << iters << "\nstationarity_tol=" << format_double(stationarity_tol)
       << "\nmaster_seed=" << master_seed << '\n';
    return os.str();
  }

  std::string config_hash() const { return hex64(fnv1a64(canonical_text())); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value);

template <>
inline double parse_number<double>(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid-config: field '" + key + "': not a number: '" + value + "'");
  }
}

template <>
inline int parse_number<int>(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const int v = std::stoi(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid-config: field '" + key + "': not an integer: '" + value +
                      "'");
  }
}

template <>
inline std::uint64_t parse_number<std::uint64_t>(const std::string& key,
                                                 const std::string& value) {
  try {
    size_t pos = 0;
    const std::uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid-config: field '" + key + "': not an unsigned integer: '" +
                      value + "'");
  }
}

}  // namespace detail

// Flat key=value lines, '#' comments, dotted keys for nesting. Unknown keys
// are rejected; every invalid field is reported under its key name.
inline ExperimentConfig parse_config(const std::string& source) {
  ExperimentConfig cfg;
  bool beta_seen = false;
  std::istringstream is(source);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("invalid-config: line " + std::to_string(lineno) +
                        " is not key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));

    if (key == "problem.kind") {
      if (value != "synthetic" && value != "mnist")
        throw ConfigError("invalid-config: field 'problem.kind': unknown kind '" + value +
                          "'");
      cfg.problem_kind = value;
    } else if (key == "problem.n") {
      cfg.n = detail::parse_number<int>(key, value);
      if (cfg.n < 1) throw ConfigError("invalid-config: field 'problem.n': must be >= 1");
    } else if (key == "problem.m_per") {
      cfg.m_per = detail::parse_number<int>(key, value);
      if (cfg.m_per < 1)
        throw ConfigError("invalid-config: field 'problem.m_per': must be >= 1");
    } else if (key == "problem.d") {
      cfg.d = detail::parse_number<int>(key, value);
    } else if (key == "problem.r") {
      cfg.r = detail::parse_number<int>(key, value);
    } else if (key == "problem.xi") {
      cfg.xi = detail::parse_number<double>(key, value);
      if (!(cfg.xi > 0.0 && cfg.xi < 1.0))
        throw ConfigError("invalid-config: field 'problem.xi': must lie in (0,1)");
    } else if (key == "problem.seed") {
      cfg.problem_seed = detail::parse_number<std::uint64_t>(key, value);
    } else if (key == "problem.path") {
      cfg.mnist_path = value;
    } else if (key == "graph.kind") {
      if (value != "ring" && value != "er")
        throw ConfigError("invalid-config: field 'graph.kind': unknown kind '" + value +
                          "'");
      cfg.graph_kind = value;
    } else if (key == "graph.p") {
      cfg.graph_p = detail::parse_number<double>(key, value);
      if (!(cfg.graph_p > 0.0 && cfg.graph_p <= 1.0))
        throw ConfigError("invalid-config: field 'graph.p': must lie in (0,1]");
    } else if (key == "graph.seed") {
      cfg.graph_seed = detail::parse_number<std::uint64_t>(key, value);
    } else if (key == "algorithm") {
      parse_algorithm(value);  // validates
      cfg.algorithm = value;
    } else if (key == "compressor") {
      CompressorSpec::parse(value);  // validates
      cfg.compressor = value;
    } else if (key == "beta_hat") {
      cfg.beta_hat = detail::parse_number<double>(key, value);
      if (!(cfg.beta_hat > 0.0))
        throw ConfigError("invalid-config: field 'beta_hat': must be positive");
      beta_seen = true;
    } else if (key == "gamma") {
      cfg.gamma = detail::parse_number<double>(key, value);
      if (!(cfg.gamma > 0.0 && cfg.gamma <= 1.0))
        throw ConfigError("invalid-config: field 'gamma': must lie in (0,1]");
    } else if (key == "iters") {
      cfg.iters = detail::parse_number<int>(key, value);
      if (cfg.iters < 0)
        throw ConfigError("invalid-config: field 'iters': must be >= 0");
    } else if (key == "stationarity_tol") {
      cfg.stationarity_tol = detail::parse_number<double>(key, value);
      if (cfg.stationarity_tol < 0.0)
        throw ConfigError("invalid-config: field 'stationarity_tol': must be >= 0");
    } else if (key == "out_path") {
      cfg.out_path = value;
    } else if (key == "master_seed") {
      cfg.master_seed = detail::parse_number<std::uint64_t>(key, value);
    } else if (key == "checkpoint_every") {
      cfg.checkpoint_every = detail::parse_number<int>(key, value);
    } else if (key == "checkpoint_path") {
      cfg.checkpoint_path = value;
    } else {
      throw ConfigError("invalid-config: unknown key '" + key + "'");
    }
  }
  if (!beta_seen) throw ConfigError("invalid-config: field 'beta_hat': required");
  return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("invalid-config: cannot open config file " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config(buf.str());
}

namespace detail {

inline std::string mnist_path_or_throw(const ExperimentConfig& cfg) {
  if (!cfg.mnist_path.empty()) return cfg.mnist_path;
  const char* env = std::getenv(kMnistEnvKey);
  if (env && *env) return env;
  throw DataError(std::string("data: image file not configured; set problem.path or the ") +
                  kMnistEnvKey + " environment variable");
}

inline PcaProblem build_problem(const ExperimentConfig& cfg) {
  if (cfg.problem_kind == "synthetic")
    return gen_synthetic(cfg.n, cfg.m_per, cfg.d, cfg.r, cfg.xi,
                         cfg.effective_problem_seed());
  return make_mnist_problem(mnist_path_or_throw(cfg), cfg.n, cfg.r,
                            cfg.effective_problem_seed());
}

inline MixingMatrix build_mixing(const ExperimentConfig& cfg) {
  Graph g = cfg.graph_kind == "ring" ? gen_ring(cfg.n)
                                     : gen_erdos_renyi(cfg.n, cfg.graph_p,
                                                       cfg.effective_graph_seed());
  return metropolis_weights(g);
}

inline std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

}  // namespace detail

// Builds problem, graph and algorithm from the config, runs, and writes the
// CSV when out_path is set. The CSV bytes are a pure function of the config.
inline RunLog run_experiment(const ExperimentConfig& cfg) {
  PcaProblem problem = detail::build_problem(cfg);
  MixingMatrix w = detail::build_mixing(cfg);

  SimulationConfig sim;
  sim.algorithm = parse_algorithm(cfg.algorithm);
  sim.compressor = CompressorSpec::parse(cfg.compressor);
  sim.eta = cfg.beta_hat * static_cast<double>(cfg.n) /
            static_cast<double>(problem.total_samples());
  sim.gamma = cfg.gamma;
  sim.iters = cfg.iters;
  sim.stationarity_tol = cfg.stationarity_tol;
  sim.init_seed = cfg.master_seed;
  sim.checkpoint_every = cfg.checkpoint_every;
  sim.checkpoint_path = cfg.checkpoint_path;

  RunLog log = run_algorithm(problem, w, sim);
  log.config_hash = cfg.config_hash();
  log.started_at = detail::timestamp_utc();
  if (!cfg.out_path.empty()) {
    std::ofstream os(cfg.out_path, std::ios::binary);
    if (!os) throw DataError("io: cannot open output CSV " + cfg.out_path);
    write_runlog_csv(os, log);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Suites: the figure-reproduction grids and the consensus-rate verification.

struct SuiteOutput {
  std::vector<std::string> files;  // written CSVs, relative to out_dir
  std::string manifest_path;
};

namespace detail {

inline void write_manifest(const std::filesystem::path& dir,
                           const std::vector<std::pair<std::string, std::string>>& rows,
                           SuiteOutput& out) {
  std::ofstream mf(dir / "manifest.txt");
  for (const auto& [file, hash] : rows) mf << file << ' ' << hash << '\n';
  out.manifest_path = (dir / "manifest.txt").string();
}

inline SuiteOutput figures_suite(const std::string& problem_kind, const std::string& out_dir,
                                 std::uint64_t master_seed, int iters_override) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  SuiteOutput out;
  std::vector<std::pair<std::string, std::string>> manifest;
  struct GraphCell {
    const char* tag;
    const char* kind;
    double p;
  };
  const GraphCell graphs[] = {{"er03", "er", 0.3}, {"er06", "er", 0.6}, {"ring", "ring", 0.0}};
  const char* algorithms[] = {"dprgt", "dprgc", "drgta"};
  for (const auto& gc : graphs) {
    for (const char* alg : algorithms) {
      ExperimentConfig cfg;
      cfg.problem_kind = problem_kind;
      if (problem_kind == "mnist") {
        cfg.d = 784;
        cfg.r = 5;
        cfg.iters = 600;
        cfg.beta_hat = kMnistBetaHat;
      } else {
        cfg.beta_hat = kSyntheticBetaHat;
      }
      if (iters_override > 0) cfg.iters = iters_override;
      cfg.graph_kind = gc.kind;
      cfg.graph_p = gc.p;
      cfg.algorithm = alg;
      cfg.compressor = std::string(alg) == "dprgc" ? "topk:0.4" : "identity";
      cfg.master_seed = master_seed;
      const std::string name =
          problem_kind + "_" + gc.tag + "_" + alg + ".csv";
      cfg.out_path = (fs::path(out_dir) / name).string();
      run_experiment(cfg);
      manifest.emplace_back(name, cfg.config_hash());
      out.files.push_back(name);
    }
  }
  detail::write_manifest(out_dir, manifest, out);
  return out;
}

inline SuiteOutput consensus_rates_suite(const std::string& out_dir,
                                         std::uint64_t master_seed) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  SuiteOutput out;
  std::vector<std::pair<std::string, std::string>> manifest;

  auto w = metropolis_weights(gen_ring(8));
  const int d = 10, r = 5;
  SmoothnessConstants sc =
      estimate_constants(d, r, 2000, derive_seed(master_seed, 0x4d31ULL));

  Rng rng(derive_seed(master_seed, SeedStream::kInit));
  StiefelPointXd base = random_stiefel(d, r, rng);

  auto make_cluster = [&](double target_error) {
    std::vector<StiefelPointXd> pts;
    for (int i = 0; i < 8; ++i) {
      Eigen::MatrixXd noise = rng.gaussian(d, r);
      noise *= target_error / (noise.norm() * std::sqrt(8.0));
      pts.push_back(polar_project((base.matrix() + noise).eval()));
    }
    return ConsensusState::from_points(std::move(pts));
  };

  struct Cell {
    const char* name;
    ConsensusVariant variant;
  };
  for (const Cell& cell : {Cell{"pgd", ConsensusVariant::kProjected},
                           Cell{"rgd", ConsensusVariant::kRiemannian}}) {
    const auto probe = theoretical_rates(sc, w.sigma2, 1.0, 0.0);
    const double delta = cell.variant == ConsensusVariant::kProjected
                             ? 0.9 * probe.delta_max_rho1
                             : 0.9 * probe.delta_max_rho2;
    ConsensusState st = make_cluster(delta);
    const auto rates = theoretical_rates(sc, w.sigma2, 1.0, st.consensus_error);
    const double rho =
        cell.variant == ConsensusVariant::kProjected ? rates.rho1 : rates.rho2;
    auto run = run_consensus(st, w, 1.0, cell.variant, 200, 1e-14);

    const std::string name = std::string("consensus_") + cell.name + ".csv";
    std::ostringstream body;
    body << "iter,consensus_error,rate_bound,envelope\n";
    double envelope = run.errors.empty() ? 0.0 : run.errors.front();
    for (size_t k = 0; k < run.errors.size(); ++k) {
      body << k << ',' << format_double(run.errors[k]) << ',' << format_double(rho) << ','
           << format_double(envelope) << '\n';
      envelope *= rho;
    }
    std::ofstream os(fs::path(out_dir) / name, std::ios::binary);
    os << body.str();
    manifest.emplace_back(name, hex64(fnv1a64(body.str())));
    out.files.push_back(name);
  }
  detail::write_manifest(out_dir, manifest, out);
  return out;
}

inline SuiteOutput grid_beta_suite(const std::string& out_dir, std::uint64_t master_seed) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  SuiteOutput out;

  const std::string name = "grid_beta.csv";
  std::ostringstream body;
  body << "beta_hat,final_stationarity,final_procrustes\n";
  double best_beta = 0.0, best_stat = std::numeric_limits<double>::infinity();
  // log grid over 1e-3 .. 1e4
  for (int i = 0; i <= 14; ++i) {
    const double beta = std::pow(10.0, -3.0 + 0.5 * i);
    ExperimentConfig cfg;
    cfg.beta_hat = beta;
    cfg.iters = 1000;
    cfg.master_seed = master_seed;
    double stat = std::numeric_limits<double>::quiet_NaN();
    double proc = std::numeric_limits<double>::quiet_NaN();
    try {
      RunLog log = run_experiment(cfg);
      stat = log.rows.back().diag.stationarity;
      proc = log.rows.back().diag.procrustes_to_truth;
    } catch (const NumericalError&) {
      // divergent step size; leave the row as NaN
    }
    body << format_double(beta) << ',' << format_double(stat) << ',' << format_double(proc)
         << '\n';
    if (stat < best_stat) {
      best_stat = stat;
      best_beta = beta;
    }
  }
  body << "# best beta_hat=" << format_double(best_beta)
       << " final_stationarity=" << format_double(best_stat) << '\n';
  std::ofstream os(fs::path(out_dir) / name, std::ios::binary);
  os << body.str();
  out.files.push_back(name);
  std::vector<std::pair<std::string, std::string>> manifest{
      {name, hex64(fnv1a64(body.str()))}};
  detail::write_manifest(out_dir, manifest, out);
  return out;
}

}  // namespace detail

inline SuiteOutput run_suite(const std::string& name, const std::string& out_dir,
                             std::uint64_t master_seed = 0) {
  if (name == "figures-synthetic") return detail::figures_suite("synthetic", out_dir, master_seed);
  if (name == "figures-mnist") return detail::figures_suite("mnist", out_dir, master_seed);
  if (name == "consensus-rates") return detail::consensus_rates_suite(out_dir, master_seed);
  if (name == "grid-beta") return detail::grid_beta_suite(out_dir, master_seed);
  throw ConfigError(
      "invalid-config: unknown suite '" + name +
      "' (valid: figures-synthetic, figures-mnist, consensus-rates, grid-beta)");
}

}  // namespace dmopt
