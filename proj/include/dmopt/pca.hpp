#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dmopt/errors.hpp"
#include "dmopt/rng.hpp"
#include "dmopt/stiefel.hpp"
#include "dmopt/text_io.hpp"

// Decentralized principal component analysis: agent i holds a data block
// A_i (m_i x d) and the local objective f_i(x) = -1/2 tr(x^T A_i^T A_i x).
// The 1/n of the aggregate objective lives in the metrics, keeping local
// gradients independent of n.

namespace dmopt {

struct LocalDataset {
  Eigen::MatrixXd a;  // m_i x d

  // A^T A cached when m_i >= d; for skinny blocks the product A^T (A x) is
  // cheaper and the d x d Gram matrix is never formed.
  std::optional<Eigen::MatrixXd> gram;

  explicit LocalDataset(Eigen::MatrixXd block) : a(std::move(block)) {
    if (a.rows() < 1) throw ConfigError("invalid-config: local dataset needs m_i >= 1");
    if (!a.allFinite()) throw DataError("invalid-input: non-finite entries in data block");
    if (a.rows() >= a.cols()) gram = a.transpose() * a;
  }

  Eigen::Index samples() const { return a.rows(); }
  Eigen::Index dim() const { return a.cols(); }

  Eigen::MatrixXd gram_times(const Eigen::MatrixXd& x) const {
    if (gram) return *gram * x;
    return a.transpose() * (a * x);
  }
};

// The quadratic form is defined on all of R^{d x r}; the ambient overload
// exists so derivative checks can perturb off the manifold.
inline double local_objective(const LocalDataset& ds, const Eigen::MatrixXd& x) {
  if (x.rows() != ds.dim()) throw ConfigError("dimension: objective shape mismatch");
  if (ds.gram) return -0.5 * (x.array() * (*ds.gram * x).array()).sum();
  return -0.5 * (ds.a * x).squaredNorm();
}

inline double local_objective(const LocalDataset& ds, const StiefelPointXd& x) {
  return local_objective(ds, x.matrix());
}

// nabla f_i(x) = -A^T A x.
inline Eigen::MatrixXd local_euclidean_gradient(const LocalDataset& ds,
                                                const StiefelPointXd& x) {
  if (x.rows() != ds.dim()) throw ConfigError("dimension: gradient shape mismatch");
  return -ds.gram_times(x.matrix());
}

inline TangentVectorXd local_riemannian_gradient(const LocalDataset& ds,
                                                 const StiefelPointXd& x) {
  Eigen::MatrixXd g = tangent_project(x.matrix(), local_euclidean_gradient(ds, x));
  return TangentVectorXd(x, std::move(g));
}

struct PcaProblem {
  std::vector<LocalDataset> locals;
  Eigen::Index d = 0;
  Eigen::Index r = 0;
  std::optional<StiefelPointXd> ground_truth;  // first r right singular vectors
  double lipschitz_L = 0.0;     // max block Gram eigenvalue (smoothness surrogate)
  double grad_norm_bound = 0.0; // max sampled Riemannian gradient norm (L_g)

  int n() const { return static_cast<int>(locals.size()); }

  std::int64_t total_samples() const {
    std::int64_t m = 0;
    for (const auto& l : locals) m += l.samples();
    return m;
  }

  double global_objective(const std::vector<StiefelPointXd>& points) const {
    double f = 0.0;
    for (size_t i = 0; i < locals.size(); ++i) f += local_objective(locals[i], points[i]);
    return f / static_cast<double>(locals.size());
  }

  // grad f(x) with f = (1/n) sum_i f_i, all terms evaluated at the same point.
  Eigen::MatrixXd mean_riemannian_gradient_at(const StiefelPointXd& x) const {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, r);
    for (const auto& l : locals) acc += local_euclidean_gradient(l, x);
    acc /= static_cast<double>(locals.size());
    return tangent_project(x.matrix(), acc);
  }
};

namespace detail {

// Smoothness surrogates: L from block spectra, L_g from seeded sampling of
// Riemannian gradient norms.
inline void measure_constants(PcaProblem& p, std::uint64_t seed, int samples = 128) {
  p.lipschitz_L = 0.0;
  std::vector<Eigen::MatrixXd> grams;
  for (const auto& l : p.locals) {
    Eigen::MatrixXd g = l.gram ? *l.gram : (l.a.transpose() * l.a).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g, Eigen::EigenvaluesOnly);
    p.lipschitz_L = std::max(p.lipschitz_L, es.eigenvalues().maxCoeff());
  }
  Rng rng(derive_seed(seed, 0x4c47ULL));
  double lg = 0.0;
  for (int s = 0; s < samples; ++s) {
    StiefelPointXd x = random_stiefel(p.d, p.r, rng);
    for (const auto& l : p.locals)
      lg = std::max(lg, local_riemannian_gradient(l, x).matrix().norm());
  }
  if (p.ground_truth)
    for (const auto& l : p.locals)
      lg = std::max(lg, local_riemannian_gradient(l, *p.ground_truth).matrix().norm());
  p.grad_norm_bound = lg;
}

}  // namespace detail

// Seeded row split into n equal contiguous chunks of a random permutation.
// n = 1 is the identity split.
inline std::vector<LocalDataset> split_rows(const Eigen::MatrixXd& a, int n,
                                            std::uint64_t seed) {
  if (n < 1) throw ConfigError("invalid-config: split needs n >= 1");
  if (a.rows() % n != 0)
    throw ConfigError("invalid-config: row count " + std::to_string(a.rows()) +
                      " not divisible by n = " + std::to_string(n));
  if (n == 1) {
    std::vector<LocalDataset> single;
    single.emplace_back(a);
    return single;
  }
  const Eigen::Index per = a.rows() / n;
  std::vector<Eigen::Index> perm(static_cast<size_t>(a.rows()));
  std::iota(perm.begin(), perm.end(), Eigen::Index(0));
  Rng rng(derive_seed(seed, 0x53504c49ULL));
  for (size_t i = perm.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.uniform_int(0, i - 1));
    std::swap(perm[i - 1], perm[j]);
  }
  std::vector<LocalDataset> out;
  out.reserve(static_cast<size_t>(n));
  for (int b = 0; b < n; ++b) {
    Eigen::MatrixXd block(per, a.cols());
    for (Eigen::Index k = 0; k < per; ++k)
      block.row(k) = a.row(perm[static_cast<size_t>(b * per + k)]);
    out.emplace_back(std::move(block));
  }
  return out;
}

// Synthetic instance with a controlled spectrum: a Gaussian matrix is
// factored and its singular values replaced by xi^j, j = 1..d, so the first
// r right singular vectors are the exact solution.
inline PcaProblem gen_synthetic(int n, int m_per, int d, int r, double xi,
                                std::uint64_t seed) {
  if (!(xi > 0.0 && xi < 1.0)) throw ConfigError("invalid-config: xi must lie in (0,1)");
  if (n < 1 || m_per < 1 || d < 1 || r < 1 || r > d)
    throw ConfigError("invalid-config: need n, m_per >= 1 and 1 <= r <= d");
  if (static_cast<std::int64_t>(n) * m_per < d)
    throw ConfigError("invalid-config: n * m_per must be >= d");

  Rng rng(derive_seed(seed, SeedStream::kData));
  Eigen::MatrixXd b = rng.gaussian(static_cast<Eigen::Index>(n) * m_per, d);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd sigma(d);
  for (int j = 0; j < d; ++j) sigma(j) = std::pow(xi, j + 1);
  Eigen::MatrixXd a = svd.matrixU() * sigma.asDiagonal() * svd.matrixV().transpose();

  PcaProblem p;
  p.d = d;
  p.r = r;
  p.locals = split_rows(a, n, derive_seed(seed, 0x524f5753ULL));
  p.ground_truth = StiefelPointXd(svd.matrixV().leftCols(r).eval());
  detail::measure_constants(p, seed);
  return p;
}

namespace detail {

inline std::uint32_t read_be32(std::istream& is, const char* field) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw DataError(std::string("format: truncated IDX header while reading ") + field);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

// IDX image file (big-endian): magic 0x00000803, then count, rows, cols,
// then row-major uint8 pixels. Pixels are scaled to [0, 1].
inline Eigen::MatrixXd load_mnist_idx(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("data: cannot open IDX file " + path);
  const std::uint32_t magic = detail::read_be32(is, "magic");
  if (magic != 0x00000803u)
    throw DataError("format: bad IDX magic " + std::to_string(magic) +
                    " (want 2051 image magic)");
  const std::uint32_t count = detail::read_be32(is, "count");
  const std::uint32_t rows = detail::read_be32(is, "rows");
  const std::uint32_t cols = detail::read_be32(is, "cols");
  if (rows != 28 || cols != 28)
    throw DataError("format: unsupported image size " + std::to_string(rows) + "x" +
                    std::to_string(cols) + " (want 28x28)");
  const std::size_t pixels = std::size_t(count) * rows * cols;
  std::vector<unsigned char> buf(pixels);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels)))
    throw DataError("format: truncated IDX pixel payload");
  Eigen::MatrixXd m(count, rows * cols);
  for (std::uint32_t i = 0; i < count; ++i)
    for (std::uint32_t j = 0; j < rows * cols; ++j)
      m(i, j) = buf[std::size_t(i) * rows * cols + j] / 255.0;
  return m;
}

// MNIST instance: normalized images split evenly over n agents; the exact
// leading eigenvectors of the stacked Gram matrix serve as ground truth.
inline PcaProblem make_mnist_problem(const std::string& images_path, int n, int r,
                                     std::uint64_t seed) {
  Eigen::MatrixXd images = load_mnist_idx(images_path);
  if (images.rows() % n != 0)
    throw ConfigError("invalid-config: image count " + std::to_string(images.rows()) +
                      " not divisible by n = " + std::to_string(n));
  PcaProblem p;
  p.d = images.cols();
  p.r = r;
  p.locals = split_rows(images, n, derive_seed(seed, 0x524f5753ULL));

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p.d, p.d);
  for (const auto& l : p.locals) gram += l.gram ? *l.gram : (l.a.transpose() * l.a).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  Eigen::MatrixXd v(p.d, r);
  for (int j = 0; j < r; ++j) v.col(j) = es.eigenvectors().col(p.d - 1 - j);
  p.ground_truth = StiefelPointXd(std::move(v));
  detail::measure_constants(p, seed);
  return p;
}

// Directory layout: manifest.txt (key=value), ground_truth.txt, agent_<i>.txt.
inline void save_problem(const std::string& dir, const PcaProblem& p, double xi,
                         std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream mf(fs::path(dir) / "manifest.txt");
    if (!mf) throw DataError("io: cannot write manifest in " + dir);
    mf << "n=" << p.n() << "\nd=" << p.d << "\nr=" << p.r << "\nxi=" << format_double(xi)
       << "\nseed=" << seed << "\n";
  }
  if (p.ground_truth)
    write_matrix_text((fs::path(dir) / "ground_truth.txt").string(),
                      p.ground_truth->matrix());
  for (int i = 0; i < p.n(); ++i)
    write_matrix_text((fs::path(dir) / ("agent_" + std::to_string(i) + ".txt")).string(),
                      p.locals[static_cast<size_t>(i)].a);
}

inline PcaProblem load_problem(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.txt");
  if (!mf) throw DataError("io: cannot read manifest in " + dir);
  int n = 0, d = 0, r = 0;
  std::uint64_t seed = 0;
  std::string line;
  while (std::getline(mf, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "n") n = std::stoi(val);
    if (key == "d") d = std::stoi(val);
    if (key == "r") r = std::stoi(val);
    if (key == "seed") seed = std::stoull(val);
  }
  if (n < 1 || d < 1 || r < 1) throw DataError("format: incomplete problem manifest");
  PcaProblem p;
  p.d = d;
  p.r = r;
  for (int i = 0; i < n; ++i)
    p.locals.emplace_back(
        read_matrix_text((fs::path(dir) / ("agent_" + std::to_string(i) + ".txt")).string()));
  const auto gt = fs::path(dir) / "ground_truth.txt";
  if (fs::exists(gt)) p.ground_truth = StiefelPointXd(read_matrix_text(gt.string()));
  detail::measure_constants(p, seed);
  return p;
}

}  // namespace dmopt
