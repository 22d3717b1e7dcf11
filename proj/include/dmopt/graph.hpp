#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dmopt/errors.hpp"
#include "dmopt/rng.hpp"
#include "dmopt/text_io.hpp"

// Agent network topologies and their Metropolis mixing matrices. A mixing
// matrix is symmetric doubly stochastic with eigenvalues in (-1, 1]; sigma2
// is its second largest singular value and rho = 1 - sigma2 the spectral gap.

namespace dmopt {

struct Graph {
  int n = 0;
  std::vector<std::pair<int, int>> edges;  // unordered pairs, stored i < j

  std::vector<int> degrees() const {
    std::vector<int> deg(static_cast<size_t>(n), 0);
    for (auto [i, j] : edges) {
      ++deg[static_cast<size_t>(i)];
      ++deg[static_cast<size_t>(j)];
    }
    return deg;
  }

  bool connected() const {
    if (n <= 0) return false;
    std::vector<std::vector<int>> adj(static_cast<size_t>(n));
    for (auto [i, j] : edges) {
      adj[static_cast<size_t>(i)].push_back(j);
      adj[static_cast<size_t>(j)].push_back(i);
    }
    std::vector<char> seen(static_cast<size_t>(n), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int count = 1;
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (int w : adj[static_cast<size_t>(v)])
        if (!seen[static_cast<size_t>(w)]) {
          seen[static_cast<size_t>(w)] = 1;
          ++count;
          stack.push_back(w);
        }
    }
    return count == n;
  }

  Eigen::MatrixXd adjacency_matrix() const {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (auto [i, j] : edges) {
      a(i, j) = 1.0;
      a(j, i) = 1.0;
    }
    return a;
  }
};

inline Graph gen_ring(int n) {
  if (n < 3) throw ConfigError("invalid-size: ring needs n >= 3");
  Graph g;
  g.n = n;
  for (int i = 0; i < n; ++i) {
    int j = (i + 1) % n;
    g.edges.emplace_back(std::min(i, j), std::max(i, j));
  }
  std::sort(g.edges.begin(), g.edges.end());
  return g;
}

// Erdos-Renyi draw conditioned on connectivity: disconnected draws are
// redrawn with an incremented sub-seed, preserving the ER distribution given
// connectedness. Deterministic in (n, p, seed).
inline Graph gen_erdos_renyi(int n, double p, std::uint64_t seed) {
  if (n < 2) throw ConfigError("invalid-size: erdos-renyi needs n >= 2");
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("invalid-config: p must lie in (0,1]");
  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    Rng rng(derive_seed(seed, attempt));
    Graph g;
    g.n = n;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (rng.uniform01() < p) g.edges.emplace_back(i, j);
    if (g.connected()) return g;
  }
  throw DataError("generation-failure: no connected draw in 100 attempts");
}

struct MixingMatrix {
  Eigen::MatrixXd w;
  double sigma2 = 0.0;  // second largest singular value
  double rho = 1.0;     // spectral gap 1 - sigma2

  int n() const { return static_cast<int>(w.rows()); }

  // Mixes a stack of per-agent matrices: out_i = sum_j W_ij in_j.
  std::vector<Eigen::MatrixXd> mix(const std::vector<Eigen::MatrixXd>& in) const {
    const int m = n();
    std::vector<Eigen::MatrixXd> out(in.size());
    for (int i = 0; i < m; ++i) {
      Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(in[0].rows(), in[0].cols());
      for (int j = 0; j < m; ++j) {
        const double wij = w(i, j);
        if (wij != 0.0) acc += wij * in[static_cast<size_t>(j)];
      }
      out[static_cast<size_t>(i)] = std::move(acc);
    }
    return out;
  }
};

namespace detail {

// sigma2 = max |eigenvalue| after removing a single unit eigenvalue
// (symmetric case, so singular values are absolute eigenvalues).
inline double second_singular_value(const Eigen::MatrixXd& w) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w, Eigen::EigenvaluesOnly);
  Eigen::VectorXd ev = es.eigenvalues();  // ascending
  const Eigen::Index n = ev.size();
  if (n <= 1) return 0.0;
  return std::max(std::abs(ev(0)), std::abs(ev(n - 2)));
}

}  // namespace detail

// Validates every clause of the doubly stochastic assumption and packages an
// externally supplied matrix. Violated clauses are reported by name.
inline MixingMatrix validate_mixing(const Eigen::MatrixXd& w) {
  if (w.rows() != w.cols()) throw ConfigError("dimension: mixing matrix must be square");
  std::string violations;
  auto add = [&violations](const std::string& v) {
    if (!violations.empty()) violations += "; ";
    violations += v;
  };
  const double asym = (w - w.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12) add("asymmetry");
  if (w.minCoeff() < 0.0) add("negative entry");
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    if (!(w(i, i) > 0.0 && w(i, i) < 1.0)) {
      add("diagonal out of (0,1)");
      break;
    }
  const double rowsum = (w.rowwise().sum().array() - 1.0).abs().maxCoeff();
  if (rowsum > 1e-12) add("row sums differ from 1");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w, Eigen::EigenvaluesOnly);
  Eigen::VectorXd ev = es.eigenvalues();
  if (ev(0) <= -1.0 + 1e-15 || ev(ev.size() - 1) > 1.0 + 1e-12)
    add("eigenvalue outside (-1,1]");
  const double s2 = detail::second_singular_value(w);
  if (s2 >= 1.0 - 1e-12) add("sigma2 >= 1");

  if (!violations.empty())
    throw ConfigError("invalid-mixing: " + violations);
  return MixingMatrix{w, s2, 1.0 - s2};
}

// Metropolis-Hastings weights: W_ij = 1 / (1 + max(deg_i, deg_j)) on edges,
// diagonal absorbs the remainder. Satisfies the doubly stochastic assumption
// on any connected graph with n >= 2.
inline MixingMatrix metropolis_weights(const Graph& g) {
  if (!g.connected()) throw ConfigError("invalid-graph: disconnected graph has sigma2 = 1");
  if (g.n < 2) throw ConfigError("invalid-size: mixing needs n >= 2");
  const auto deg = g.degrees();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(g.n, g.n);
  for (auto [i, j] : g.edges) {
    const double v = 1.0 / (1.0 + std::max(deg[static_cast<size_t>(i)],
                                           deg[static_cast<size_t>(j)]));
    w(i, j) = v;
    w(j, i) = v;
  }
  for (int i = 0; i < g.n; ++i) w(i, i) = 1.0 - w.row(i).sum();
  const double s2 = detail::second_singular_value(w);
  return MixingMatrix{std::move(w), s2, 1.0 - s2};
}

inline void write_graph_text(const std::string& path, const Graph& g) {
  write_matrix_text(path, g.adjacency_matrix());
}

inline void write_mixing_text(const std::string& path, const MixingMatrix& w) {
  write_matrix_text(path, w.w);
}

}  // namespace dmopt
