#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dmopt/errors.hpp"
#include "dmopt/rng.hpp"

// Contractive compression operators: deterministic mappings C with
// ||C(x) - x||^2 <= (1 - alpha) ||x||^2 for a declared alpha in (0, 1].
// alpha = 1 is the identity (no compression).

namespace dmopt {

enum class CompressorKind { kIdentity, kTopKColumns, kNormQuantizer };

struct CompressorSpec {
  CompressorKind kind = CompressorKind::kIdentity;
  double fraction = 1.0;  // top-k: fraction q in (0, 1] of rows kept per column
  int bits = 8;           // quantizer: levels = 2^bits

  static CompressorSpec identity() { return {}; }

  static CompressorSpec topk(double q) {
    if (!(q > 0.0 && q <= 1.0)) throw ConfigError("invalid-config: topk fraction in (0,1]");
    return {CompressorKind::kTopKColumns, q, 0};
  }

  static CompressorSpec quantizer(int bits) {
    if (bits < 1) throw ConfigError("invalid-config: quantizer bits >= 1");
    return {CompressorKind::kNormQuantizer, 0.0, bits};
  }

  // Config string forms: "identity", "topk:0.4", "quant:8".
  static CompressorSpec parse(const std::string& s) {
    if (s == "identity") return identity();
    if (s.rfind("topk:", 0) == 0) {
      double q = 0.0;
      try {
        q = std::stod(s.substr(5));
      } catch (const std::exception&) {
        throw ConfigError("invalid-config: bad topk fraction in '" + s + "'");
      }
      return topk(q);
    }
    if (s.rfind("quant:", 0) == 0) {
      int b = 0;
      try {
        b = std::stoi(s.substr(6));
      } catch (const std::exception&) {
        throw ConfigError("invalid-config: bad quantizer bits in '" + s + "'");
      }
      return quantizer(b);
    }
    throw ConfigError("invalid-config: unknown compressor '" + s + "'");
  }

  std::string to_string() const {
    switch (kind) {
      case CompressorKind::kIdentity:
        return "identity";
      case CompressorKind::kTopKColumns:
        return "topk:" + std::to_string(fraction);
      case CompressorKind::kNormQuantizer:
        return "quant:" + std::to_string(bits);
    }
    return "identity";
  }

  Eigen::Index kept_rows(Eigen::Index d) const {
    return static_cast<Eigen::Index>(std::ceil(fraction * static_cast<double>(d)));
  }

  // Declared contract constant for inputs with d rows.
  //   identity:   alpha = 1
  //   top-k:      alpha = k/d (worst case: uniform-magnitude columns)
  //   quantizer:  1 - alpha = min(1 - 1/d, d / (4 (2^b - 1)^2)), a worst-case
  //               bound on the per-column rounding energy; the max-magnitude
  //               entry is always reproduced exactly, hence the 1 - 1/d cap.
  double alpha_for(Eigen::Index d) const {
    switch (kind) {
      case CompressorKind::kIdentity:
        return 1.0;
      case CompressorKind::kTopKColumns:
        return static_cast<double>(kept_rows(d)) / static_cast<double>(d);
      case CompressorKind::kNormQuantizer: {
        const double levels = std::pow(2.0, bits) - 1.0;
        const double rounding = static_cast<double>(d) / (4.0 * levels * levels);
        const double loss = std::min(1.0 - 1.0 / static_cast<double>(d), rounding);
        return 1.0 - loss;
      }
    }
    return 1.0;
  }
};

namespace detail {

inline void compress_column_topk(Eigen::Ref<Eigen::VectorXd> c, Eigen::Index k) {
  const Eigen::Index d = c.size();
  if (k >= d) return;
  std::vector<Eigen::Index> idx(static_cast<size_t>(d));
  std::iota(idx.begin(), idx.end(), 0);
  // magnitude descending, ties broken by lowest row index
  std::nth_element(idx.begin(), idx.begin() + k, idx.end(),
                   [&c](Eigen::Index a, Eigen::Index b) {
                     const double ma = std::abs(c(a)), mb = std::abs(c(b));
                     if (ma != mb) return ma > mb;
                     return a < b;
                   });
  for (Eigen::Index m = k; m < d; ++m) c(idx[static_cast<size_t>(m)]) = 0.0;
}

inline void compress_column_quant(Eigen::Ref<Eigen::VectorXd> c, int bits) {
  const double mag = c.cwiseAbs().maxCoeff();
  if (mag == 0.0) return;
  const double levels = std::pow(2.0, bits) - 1.0;
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    const double z = std::abs(c(i)) / mag * levels;
    const double q = std::floor(z + 0.5) / levels * mag;  // half-up
    c(i) = c(i) < 0 ? -q : q;
  }
}

}  // namespace detail

inline Eigen::MatrixXd compress(const CompressorSpec& spec, const Eigen::MatrixXd& x) {
  if (!x.allFinite()) throw NumericalError("invalid-input: non-finite entries in compress");
  if (spec.kind == CompressorKind::kIdentity) return x;
  Eigen::MatrixXd out = x;
  if (spec.kind == CompressorKind::kTopKColumns) {
    const Eigen::Index k = spec.kept_rows(x.rows());
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      detail::compress_column_topk(out.col(j), k);
  } else {
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      detail::compress_column_quant(out.col(j), spec.bits);
  }
  return out;
}

// Value entries a single transmission of a d x r matrix costs. Sparse index
// overhead is excluded; the quantizer is counted at full width (the
// bit-adjusted figure below is the auxiliary view).
inline std::int64_t nnz_transmitted(const CompressorSpec& spec, Eigen::Index d,
                                    Eigen::Index r) {
  switch (spec.kind) {
    case CompressorKind::kIdentity:
      return static_cast<std::int64_t>(d) * r;
    case CompressorKind::kTopKColumns:
      return static_cast<std::int64_t>(spec.kept_rows(d)) * r;
    case CompressorKind::kNormQuantizer:
      return static_cast<std::int64_t>(d) * r;
  }
  return static_cast<std::int64_t>(d) * r;
}

inline std::int64_t nnz_transmitted(const CompressorSpec& spec, const Eigen::MatrixXd& x) {
  return nnz_transmitted(spec, x.rows(), x.cols());
}

// Auxiliary bit-level accounting in units of 64-bit entries.
inline double entries_bit_adjusted(const CompressorSpec& spec, Eigen::Index d,
                                   Eigen::Index r) {
  if (spec.kind == CompressorKind::kNormQuantizer)
    return static_cast<double>(d) * static_cast<double>(r) * spec.bits / 64.0;
  return static_cast<double>(nnz_transmitted(spec, d, r));
}

struct ContractionReport {
  double max_ratio = 0.0;
  int violations = 0;
};

// Empirical certification of the contraction contract on seeded Gaussian
// inputs. Shipped compressors must report zero violations.
inline ContractionReport verify_contractive(const CompressorSpec& spec, Eigen::Index d,
                                            Eigen::Index r, int trials,
                                            std::uint64_t seed) {
  if (trials < 1) throw ConfigError("invalid-config: verify_contractive needs trials >= 1");
  const double allowed = 1.0 - spec.alpha_for(d);
  ContractionReport rep;
  Rng rng(derive_seed(seed, 0x434f4d50ULL));
  for (int t = 0; t < trials; ++t) {
    Eigen::MatrixXd x = rng.gaussian(d, r);
    const double x2 = x.squaredNorm();
    const double ratio =
        x2 == 0.0 ? 0.0 : (compress(spec, x) - x).squaredNorm() / x2;
    rep.max_ratio = std::max(rep.max_ratio, ratio);
    if (ratio > allowed + 1e-12) ++rep.violations;
  }
  return rep;
}

}  // namespace dmopt
