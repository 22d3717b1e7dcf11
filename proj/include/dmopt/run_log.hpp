#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "dmopt/errors.hpp"
#include "dmopt/metrics.hpp"
#include "dmopt/text_io.hpp"
#include "dmopt/version.hpp"

namespace dmopt {

// One row per iteration, row 0 being the initial state. Epoch equals the
// iteration index for these full-gradient methods (each iteration touches
// all local data once).
struct RunLogRow {
  int iter = 0;
  int epoch = 0;
  IterationDiagnostics diag;
};

struct RunLog {
  std::string config_hash;  // hex of the canonical config text
  std::string started_at;   // wall clock; never written into the CSV
  std::string version = kVersion;
  std::vector<RunLogRow> rows;

  // worst-case invariant drift observed across the run
  double max_coupling_defect = 0.0;       // max of ||s - W xtilde||, ||u - W dtilde||
  double max_mean_identity_defect = 0.0;  // || mean d - mean grad f_i(x_i) ||
  double max_feasibility_defect = 0.0;    // max orthonormality defect of any iterate

  std::int64_t total_entries() const {
    return rows.empty() ? 0 : rows.back().diag.cumulative_entries;
  }
};

inline constexpr const char* kRunLogColumns =
    "iter,epoch,objective,consensus_error,stationarity,procrustes,"
    "omega1,omega2,omega3,omega4,omega5,entries_this_iter,cumulative_entries,tube_ok";

// Deterministic bytes: pure function of the log contents (the wall-clock
// header field is deliberately excluded).
inline void write_runlog_csv(std::ostream& os, const RunLog& log) {
  os << "# config_hash=" << log.config_hash << "\n# version=" << log.version << '\n'
     << kRunLogColumns << '\n';
  for (const auto& row : log.rows) {
    const auto& g = row.diag;
    os << row.iter << ',' << row.epoch << ',' << format_double(g.objective) << ','
       << format_double(g.consensus_error) << ',' << format_double(g.stationarity) << ','
       << format_double(g.procrustes_to_truth) << ',' << format_double(g.omega1) << ','
       << format_double(g.omega2) << ',' << format_double(g.omega3) << ','
       << format_double(g.omega4) << ',' << format_double(g.omega5) << ','
       << g.entries_this_iter << ',' << g.cumulative_entries << ','
       << (g.tube_ok ? 1 : 0) << '\n';
  }
}

// ||ghat_k||^2 = omega5 / n for iteration rows k = 1..K (row 0 is the
// initial state and sits outside the averaged window).
inline std::vector<double> rate_decay_check(const RunLog& log, int n_agents,
                                            const std::vector<int>& windows) {
  std::vector<double> ghat_sq;
  ghat_sq.reserve(log.rows.size());
  for (size_t k = 1; k < log.rows.size(); ++k)
    ghat_sq.push_back(log.rows[k].diag.omega5 / n_agents);
  return rate_decay_check(ghat_sq, windows);
}

}  // namespace dmopt
