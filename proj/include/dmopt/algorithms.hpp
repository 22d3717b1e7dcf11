#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dmopt/compression.hpp"
#include "dmopt/errors.hpp"
#include "dmopt/graph.hpp"
#include "dmopt/metrics.hpp"
#include "dmopt/pca.hpp"
#include "dmopt/rng.hpp"
#include "dmopt/run_log.hpp"
#include "dmopt/stiefel.hpp"

// Decentralized gradient-tracking optimizers over the synchronous simulation
// substrate. The compressed method communicates only compressed differences
// against slowly updated references (xtilde, dtilde); its uncompressed
// specialization and a retraction-based tracking baseline share the state
// layout. Every step reads the previous iterate only (snapshot semantics), so
// agents could be evaluated in parallel with identical results.

namespace dmopt {

// The six per-agent matrices. The coupling s = W xtilde, u = W dtilde holds
// after init and is re-established by every step.
struct AgentState {
  StiefelPointXd x;        // iterate
  Eigen::MatrixXd x_tilde; // compression reference for iterates
  Eigen::MatrixXd s;       // received mixed iterate aggregate
  Eigen::MatrixXd d;       // tracked gradient
  Eigen::MatrixXd d_tilde; // compression reference for gradients
  Eigen::MatrixXd u;       // received mixed gradient aggregate
};

struct StepSizes {
  double eta = 0.0;    // gradient step; zero only for pure-consensus diagnostics
  double gamma = 1.0;  // consensus step, in (0, 1]

  StepSizes(double eta_, double gamma_) : eta(eta_), gamma(gamma_) {
    if (!(eta >= 0.0)) throw ConfigError("invalid-config: eta must be nonnegative");
    if (!(gamma > 0.0 && gamma <= 1.0))
      throw ConfigError("invalid-config: gamma must lie in (0,1]");
  }
};

// One communication round: what every agent broadcast and the value-entry
// count for all transmissions.
struct NetworkRound {
  std::vector<Eigen::MatrixXd> messages_q;  // compressed iterate differences
  std::vector<Eigen::MatrixXd> messages_p;  // compressed gradient differences
  std::int64_t entries_sent = 0;
};

// Riemannian gradient of f_i at x, for agent i.
using GradProvider = std::function<Eigen::MatrixXd(int, const StiefelPointXd&)>;

inline GradProvider pca_gradients(const PcaProblem& problem) {
  return [&problem](int i, const StiefelPointXd& x) {
    return local_riemannian_gradient(problem.locals[static_cast<size_t>(i)], x).matrix();
  };
}

struct StepResult {
  std::vector<AgentState> agents;
  NetworkRound round;
  Eigen::MatrixXd mean_new_gradient;  // (1/n) sum_i grad f_i(x_i^+)
};

// Shared start: every agent holds the same x0, so the initial consensus
// error is exactly zero; s and u are seeded by one uncompressed mixing pass.
inline std::vector<AgentState> dprgc_init(const StiefelPointXd& x0, int n,
                                          const MixingMatrix& w, const GradProvider& grad) {
  if (n < 1 || w.n() != n) throw ConfigError("dimension: mixing matrix size != n");
  std::vector<Eigen::MatrixXd> xt(static_cast<size_t>(n), x0.matrix());
  std::vector<Eigen::MatrixXd> d0(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) d0[static_cast<size_t>(i)] = grad(i, x0);
  auto s0 = w.mix(xt);
  auto u0 = w.mix(d0);
  std::vector<AgentState> agents;
  agents.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<size_t>(i);
    agents.push_back(AgentState{x0, xt[k], s0[k], d0[k], d0[k], u0[k]});
  }
  return agents;
}

// One synchronous round of the compressed tracking method:
//   x+  = P_M(x + gamma (s - xtilde) - eta P_T(d))
//   q   = C(x+ - xtilde),  xtilde+ = xtilde + q,  s+ = s + W q
//   d+  = d + gamma (u - dtilde) + grad f(x+) - grad f(x)
//   p   = C(d+ - dtilde),  dtilde+ = dtilde + p,  u+ = u + W p
inline StepResult dprgc_step(const std::vector<AgentState>& agents, const MixingMatrix& w,
                             const CompressorSpec& spec, const StepSizes& sizes,
                             const GradProvider& grad) {
  const int n = static_cast<int>(agents.size());
  const Eigen::Index d_rows = agents[0].x.rows(), r_cols = agents[0].x.cols();
  StepResult res;
  res.agents.reserve(agents.size());
  res.round.messages_q.resize(agents.size());
  res.round.messages_p.resize(agents.size());
  res.mean_new_gradient = Eigen::MatrixXd::Zero(d_rows, r_cols);

  std::vector<Eigen::MatrixXd> d_next(agents.size());
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<size_t>(i);
    const AgentState& a = agents[k];
    Eigen::MatrixXd y = a.x.matrix() + sizes.gamma * (a.s - a.x_tilde) -
                        sizes.eta * tangent_project(a.x.matrix(), a.d);
    StiefelPointXd x_next = [&] {
      try {
        return polar_project(y);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (agent " + std::to_string(i) + ")");
      }
    }();

    // Reference update xtilde + q collapses to the new iterate under the
    // identity compressor; assigning it directly keeps the tracking exact
    // (omega1 stays identically zero) instead of accumulating rounding.
    const bool no_compression = spec.kind == CompressorKind::kIdentity;
    Eigen::MatrixXd q = compress(spec, x_next.matrix() - a.x_tilde);
    Eigen::MatrixXd x_tilde_next = no_compression ? x_next.matrix() : a.x_tilde + q;

    Eigen::MatrixXd g_new = grad(i, x_next);
    Eigen::MatrixXd g_old = grad(i, a.x);
    d_next[k] = a.d + sizes.gamma * (a.u - a.d_tilde) + g_new - g_old;
    res.mean_new_gradient += g_new;

    Eigen::MatrixXd p = compress(spec, d_next[k] - a.d_tilde);
    Eigen::MatrixXd d_tilde_next = no_compression ? d_next[k] : a.d_tilde + p;

    res.round.messages_q[k] = std::move(q);
    res.round.messages_p[k] = std::move(p);
    res.agents.push_back(AgentState{std::move(x_next), std::move(x_tilde_next),
                                    Eigen::MatrixXd(), std::move(d_next[k]),
                                    std::move(d_tilde_next), Eigen::MatrixXd()});
  }
  res.mean_new_gradient /= static_cast<double>(n);

  const auto q_mixed = w.mix(res.round.messages_q);
  const auto p_mixed = w.mix(res.round.messages_p);
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<size_t>(i);
    res.agents[k].s = agents[k].s + q_mixed[k];
    res.agents[k].u = agents[k].u + p_mixed[k];
    res.round.entries_sent += nnz_transmitted(spec, d_rows, r_cols) * 2;
  }
  return res;
}

// Uncompressed specialization: identical to the compressed step with the
// identity compressor, bit for bit.
inline StepResult dprgt_step(const std::vector<AgentState>& agents, const MixingMatrix& w,
                             const StepSizes& sizes, const GradProvider& grad) {
  return dprgc_step(agents, w, CompressorSpec::identity(), sizes, grad);
}

// Retraction-based gradient tracking baseline (uncompressed):
//   x+ = R_x(gamma P_T(sum_j W_ij x_j - x) - eta P_T(d))
//   d+ = sum_j W_ij d_j + grad f(x+) - grad f(x)
// The reference fields mirror the new iterate so the shared diagnostics and
// coupling checks apply unchanged.
inline StepResult drgta_step(const std::vector<AgentState>& agents, const MixingMatrix& w,
                             const StepSizes& sizes, const GradProvider& grad) {
  const int n = static_cast<int>(agents.size());
  const Eigen::Index d_rows = agents[0].x.rows(), r_cols = agents[0].x.cols();
  std::vector<Eigen::MatrixXd> xs(agents.size()), ds(agents.size());
  for (size_t k = 0; k < agents.size(); ++k) {
    xs[k] = agents[k].x.matrix();
    ds[k] = agents[k].d;
  }
  const auto x_mixed = w.mix(xs);
  const auto d_mixed = w.mix(ds);

  StepResult res;
  res.agents.reserve(agents.size());
  res.round.messages_q.resize(agents.size());
  res.round.messages_p.resize(agents.size());
  res.mean_new_gradient = Eigen::MatrixXd::Zero(d_rows, r_cols);

  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<size_t>(i);
    const AgentState& a = agents[k];
    Eigen::MatrixXd dir =
        sizes.gamma * tangent_project(a.x.matrix(), (x_mixed[k] - a.x.matrix()).eval()) -
        sizes.eta * tangent_project(a.x.matrix(), a.d);
    StiefelPointXd x_next = [&] {
      try {
        return retract_polar(a.x, dir);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (agent " + std::to_string(i) + ")");
      }
    }();
    Eigen::MatrixXd g_new = grad(i, x_next);
    Eigen::MatrixXd g_old = grad(i, a.x);
    Eigen::MatrixXd d_next = d_mixed[k] + g_new - g_old;
    res.mean_new_gradient += g_new;

    res.round.messages_q[k] = x_next.matrix();
    res.round.messages_p[k] = d_next;
    res.agents.push_back(AgentState{std::move(x_next), Eigen::MatrixXd(), Eigen::MatrixXd(),
                                    std::move(d_next), Eigen::MatrixXd(), Eigen::MatrixXd()});
    res.round.entries_sent += 2 * d_rows * r_cols;
  }
  const auto s_next = w.mix(res.round.messages_q);
  const auto u_next = w.mix(res.round.messages_p);
  for (size_t k = 0; k < res.agents.size(); ++k) {
    res.agents[k].x_tilde = res.agents[k].x.matrix();
    res.agents[k].d_tilde = res.agents[k].d;
    res.agents[k].s = s_next[k];
    res.agents[k].u = u_next[k];
  }
  return res;
}

enum class AlgorithmKind { kDprgc, kDprgt, kDrgta };

inline AlgorithmKind parse_algorithm(const std::string& s) {
  if (s == "dprgc") return AlgorithmKind::kDprgc;
  if (s == "dprgt") return AlgorithmKind::kDprgt;
  if (s == "drgta") return AlgorithmKind::kDrgta;
  throw ConfigError("invalid-config: unknown algorithm '" + s + "'");
}

struct SimulationConfig {
  AlgorithmKind algorithm = AlgorithmKind::kDprgc;
  CompressorSpec compressor;  // ignored (forced identity) for dprgt and drgta
  double eta = 0.0;
  double gamma = 1.0;
  int iters = 0;
  double stationarity_tol = 0.0;  // 0 disables early stopping
  std::uint64_t init_seed = 0;    // all agents share one seeded random x0
  int checkpoint_every = 0;       // 0 disables
  std::string checkpoint_path;
};

// Little-endian doubles, header n, d, r as unsigned 64-bit, then the six
// matrices of each agent (x, xtilde, s, d, dtilde, u), column-major.
inline void write_checkpoint(const std::string& path, const std::vector<AgentState>& agents) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("io: cannot open checkpoint for writing: " + path);
  auto put_u64 = [&os](std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<char*>(b), 8);
  };
  const auto n = static_cast<std::uint64_t>(agents.size());
  const auto d = static_cast<std::uint64_t>(agents[0].x.rows());
  const auto r = static_cast<std::uint64_t>(agents[0].x.cols());
  put_u64(n);
  put_u64(d);
  put_u64(r);
  auto put_matrix = [&os](const Eigen::MatrixXd& m) {
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(sizeof(double) * m.size()));
  };
  for (const auto& a : agents) {
    put_matrix(a.x.matrix());
    put_matrix(a.x_tilde);
    put_matrix(a.s);
    put_matrix(a.d);
    put_matrix(a.d_tilde);
    put_matrix(a.u);
  }
}

inline std::vector<AgentState> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("io: cannot open checkpoint for reading: " + path);
  auto get_u64 = [&is]() {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
      throw DataError("format: truncated checkpoint header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
  };
  const auto n = get_u64(), d = get_u64(), r = get_u64();
  auto get_matrix = [&is, d, r]() {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(r));
    if (!is.read(reinterpret_cast<char*>(m.data()),
                 static_cast<std::streamsize>(sizeof(double) * m.size())))
      throw DataError("format: truncated checkpoint payload");
    return m;
  };
  std::vector<AgentState> agents;
  agents.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    StiefelPointXd x(get_matrix());
    Eigen::MatrixXd xt = get_matrix(), s = get_matrix(), dd = get_matrix(),
                    dt = get_matrix(), u = get_matrix();
    agents.push_back(AgentState{std::move(x), std::move(xt), std::move(s), std::move(dd),
                                std::move(dt), std::move(u)});
  }
  return agents;
}

namespace detail {

inline IterationDiagnostics snapshot_diagnostics(const std::vector<AgentState>& agents,
                                                 const PcaProblem& problem) {
  std::vector<StiefelPointXd> pts;
  std::vector<Eigen::MatrixXd> xt, dd, dt;
  pts.reserve(agents.size());
  for (const auto& a : agents) {
    pts.push_back(a.x);
    xt.push_back(a.x_tilde);
    dd.push_back(a.d);
    dt.push_back(a.d_tilde);
  }
  return compute_diagnostics(pts, xt, dd, dt, problem, problem.ground_truth);
}

inline void track_invariants(const std::vector<AgentState>& agents, const MixingMatrix& w,
                             const Eigen::MatrixXd& mean_grad, RunLog& log) {
  std::vector<Eigen::MatrixXd> xt, dt;
  xt.reserve(agents.size());
  dt.reserve(agents.size());
  for (const auto& a : agents) {
    xt.push_back(a.x_tilde);
    dt.push_back(a.d_tilde);
  }
  const auto wxt = w.mix(xt);
  const auto wdt = w.mix(dt);
  double s_defect2 = 0.0, u_defect2 = 0.0;
  Eigen::MatrixXd mean_d = Eigen::MatrixXd::Zero(agents[0].d.rows(), agents[0].d.cols());
  for (size_t k = 0; k < agents.size(); ++k) {
    s_defect2 += (agents[k].s - wxt[k]).squaredNorm();
    u_defect2 += (agents[k].u - wdt[k]).squaredNorm();
    mean_d += agents[k].d;
    log.max_feasibility_defect =
        std::max(log.max_feasibility_defect,
                 static_cast<double>(orthonormality_defect(agents[k].x.matrix())));
  }
  mean_d /= static_cast<double>(agents.size());
  log.max_coupling_defect = std::max(
      {log.max_coupling_defect, std::sqrt(s_defect2), std::sqrt(u_defect2)});
  log.max_mean_identity_defect =
      std::max(log.max_mean_identity_defect, (mean_d - mean_grad).norm());
}

}  // namespace detail

// Full simulation: init, iterate to the budget or stationarity tolerance,
// one diagnostics row per iteration plus the initial row. Deterministic
// given (problem, w, cfg).
inline RunLog run_algorithm(const PcaProblem& problem, const MixingMatrix& w,
                            const SimulationConfig& cfg) {
  if (cfg.iters < 0) throw ConfigError("invalid-config: iters must be >= 0");
  const StepSizes sizes(cfg.eta, cfg.gamma);
  const CompressorSpec spec = cfg.algorithm == AlgorithmKind::kDprgc
                                  ? cfg.compressor
                                  : CompressorSpec::identity();
  const GradProvider grad = pca_gradients(problem);

  Rng init_rng(derive_seed(cfg.init_seed, SeedStream::kInit));
  StiefelPointXd x0 = random_stiefel(problem.d, problem.r, init_rng);
  std::vector<AgentState> agents = dprgc_init(x0, problem.n(), w, grad);

  RunLog log;
  std::int64_t cumulative = 0;
  {
    Eigen::MatrixXd mean_g0 = Eigen::MatrixXd::Zero(problem.d, problem.r);
    for (int i = 0; i < problem.n(); ++i) mean_g0 += agents[static_cast<size_t>(i)].d;
    mean_g0 /= static_cast<double>(problem.n());
    detail::track_invariants(agents, w, mean_g0, log);
    RunLogRow row;
    row.iter = 0;
    row.epoch = 0;
    row.diag = detail::snapshot_diagnostics(agents, problem);
    row.diag.entries_this_iter = 0;
    row.diag.cumulative_entries = 0;
    log.rows.push_back(std::move(row));
  }

  for (int k = 1; k <= cfg.iters; ++k) {
    StepResult res;
    try {
      switch (cfg.algorithm) {
        case AlgorithmKind::kDprgc:
          res = dprgc_step(agents, w, spec, sizes, grad);
          break;
        case AlgorithmKind::kDprgt:
          res = dprgt_step(agents, w, sizes, grad);
          break;
        case AlgorithmKind::kDrgta:
          res = drgta_step(agents, w, sizes, grad);
          break;
      }
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at iteration " + std::to_string(k));
    }
    agents = std::move(res.agents);
    cumulative += res.round.entries_sent;
    detail::track_invariants(agents, w, res.mean_new_gradient, log);

    RunLogRow row;
    row.iter = k;
    row.epoch = k;
    row.diag = detail::snapshot_diagnostics(agents, problem);
    row.diag.entries_this_iter = res.round.entries_sent;
    row.diag.cumulative_entries = cumulative;
    log.rows.push_back(std::move(row));

    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
        k % cfg.checkpoint_every == 0)
      write_checkpoint(cfg.checkpoint_path + "_" + std::to_string(k) + ".bin", agents);

    const auto& diag = log.rows.back().diag;
    if (cfg.stationarity_tol > 0.0 && diag.tube_ok &&
        diag.consensus_error_mean <= cfg.stationarity_tol &&
        diag.stationarity <= cfg.stationarity_tol)
      break;
  }
  return log;
}

}  // namespace dmopt
