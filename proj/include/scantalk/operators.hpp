#pragma once

// Precomputed surface operators for spectral diffusion networks:
// lumped mass, cotangent Laplacian, its low generalized eigenpairs and a
// per-vertex tangent-plane gradient operator.

#include "scantalk/mesh.hpp"

#include <Eigen/SparseCholesky>

#include <complex>
#include <filesystem>
#include <fstream>
#include <random>

namespace scantalk {

using CsrMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

inline constexpr double kCotangentClamp = 20.0;
inline constexpr int kDefaultSpectralModes = 128;

struct SurfaceOperators {
  Vector mass;            // lumped vertex areas, m^2
  CsrMatrix laplacian;    // weak cotangent Laplacian, PSD convention
  Vector eigenvalues;     // ascending, 1/m^2
  Matrix eigenvectors;    // V x k, M-orthonormal
  CsrMatrix gradient_re;  // real part of the complex gradient operator
  CsrMatrix gradient_im;  // imaginary part
  int rank_deficient_vertices = 0;

  Eigen::Index num_vertices() const { return mass.size(); }
  Eigen::Index k() const { return eigenvalues.size(); }

  Eigen::SparseMatrix<std::complex<double>, Eigen::RowMajor> gradient() const {
    Eigen::SparseMatrix<std::complex<double>, Eigen::RowMajor> g =
        gradient_re.cast<std::complex<double>>() + std::complex<double>(0, 1) * gradient_im.cast<std::complex<double>>();
    return g;
  }
};

// ---------------------------------------------------------------------------

namespace detail {

inline double clamped_cot(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double cross = a.cross(b).norm();
  if (!(cross > 0)) throw_numerical("cotangent of a degenerate triangle");
  return std::clamp(a.dot(b) / cross, -kCotangentClamp, kCotangentClamp);
}

inline std::vector<std::vector<int>> one_rings(const Mesh& m) {
  std::vector<std::vector<int>> nbr(static_cast<std::size_t>(m.num_vertices()));
  for (Eigen::Index f = 0; f < m.num_faces(); ++f)
    for (int e = 0; e < 3; ++e) {
      const int a = m.faces(f, e), b = m.faces(f, (e + 1) % 3);
      nbr[static_cast<std::size_t>(a)].push_back(b);
      nbr[static_cast<std::size_t>(b)].push_back(a);
    }
  for (auto& n : nbr) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  return nbr;
}

}  // namespace detail

// L_ij = -1/2 (cot a_ij + cot b_ij), L_ii = -sum_j L_ij. Boundary edges get a
// single cotangent term; each cotangent is clamped to [-20, 20].
inline CsrMatrix cotangent_laplacian(const Mesh& m) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(m.num_faces()) * 12);
  for (Eigen::Index f = 0; f < m.num_faces(); ++f) {
    for (int c = 0; c < 3; ++c) {
      // Angle at corner c is opposite edge (i, j).
      const int o = m.faces(f, c), i = m.faces(f, (c + 1) % 3), j = m.faces(f, (c + 2) % 3);
      const Eigen::Vector3d po = m.vertices.row(o).transpose();
      const double w = 0.5 * detail::clamped_cot(m.vertices.row(i).transpose() - po, m.vertices.row(j).transpose() - po);
      trip.emplace_back(i, j, -w);
      trip.emplace_back(j, i, -w);
      trip.emplace_back(i, i, w);
      trip.emplace_back(j, j, w);
    }
  }
  CsrMatrix L(m.num_vertices(), m.num_vertices());
  L.setFromTriplets(trip.begin(), trip.end());
  L.makeCompressed();
  return L;
}

// Barycentric lumped mass: one third of each incident triangle's area.
inline Vector mass_matrix(const Mesh& m) {
  Vector mass = Vector::Zero(m.num_vertices());
  for (Eigen::Index f = 0; f < m.num_faces(); ++f) {
    const double a = face_area(m, f) / 3.0;
    for (int c = 0; c < 3; ++c) mass[m.faces(f, c)] += a;
  }
  return mass;
}

struct GradientOperator {
  CsrMatrix re;
  CsrMatrix im;
  int rank_deficient_vertices = 0;
};

// Area-weighted vertex normals.
inline Vertices vertex_normals(const Mesh& m) {
  Vertices n = Vertices::Zero(m.num_vertices(), 3);
  for (Eigen::Index f = 0; f < m.num_faces(); ++f) {
    const Eigen::RowVector3d a = m.vertices.row(m.faces(f, 0));
    const Eigen::RowVector3d fn = (m.vertices.row(m.faces(f, 1)) - a).cross(m.vertices.row(m.faces(f, 2)) - a);
    for (int c = 0; c < 3; ++c) n.row(m.faces(f, c)) += fn;
  }
  for (Eigen::Index i = 0; i < n.rows(); ++i) {
    const double len = n.row(i).norm();
    if (len > 0) n.row(i) /= len;
  }
  return n;
}

// Tangent frame (e1, e2) at a vertex with unit normal n. e1 is the projection
// of the coordinate axis least aligned with n, so the frame depends only on
// geometry, never on vertex or face order.
inline std::pair<Eigen::Vector3d, Eigen::Vector3d> tangent_frame(const Eigen::Vector3d& n) {
  Eigen::Index axis = 0;
  n.cwiseAbs().minCoeff(&axis);
  Eigen::Vector3d a = Eigen::Vector3d::Unit(axis);
  Eigen::Vector3d e1 = (a - a.dot(n) * n).normalized();
  return {e1, n.cross(e1)};
}

// Row i maps a real scalar field to (df/de1) + i (df/de2) at vertex i, fitted
// by least squares over the one-ring's projected edge vectors.
inline GradientOperator spatial_gradient(const Mesh& m) {
  const auto V = m.num_vertices();
  const auto normals = vertex_normals(m);
  const auto rings = detail::one_rings(m);
  std::vector<Eigen::Triplet<double>> tre, tim;
  GradientOperator g;
  for (Eigen::Index i = 0; i < V; ++i) {
    const auto& ring = rings[static_cast<std::size_t>(i)];
    if (ring.size() < 2) throw_data("spatial gradient: vertex ", i, " has fewer than 2 neighbors");
    const auto [e1, e2] = tangent_frame(normals.row(i).transpose());
    Eigen::Matrix<double, Eigen::Dynamic, 2> D(static_cast<Eigen::Index>(ring.size()), 2);
    for (std::size_t r = 0; r < ring.size(); ++r) {
      const Eigen::Vector3d d = (m.vertices.row(ring[r]) - m.vertices.row(i)).transpose();
      D(static_cast<Eigen::Index>(r), 0) = d.dot(e1);
      D(static_cast<Eigen::Index>(r), 1) = d.dot(e2);
    }
    Eigen::Matrix2d N = D.transpose() * D;
    const double tr = N.trace();
    if (!(N.determinant() > 1e-10 * tr * tr)) {
      N += 1e-8 * std::max(tr, 1e-300) * Eigen::Matrix2d::Identity();
      ++g.rank_deficient_vertices;
    }
    const Eigen::Matrix<double, 2, Eigen::Dynamic> W = N.inverse() * D.transpose();
    double sum_re = 0, sum_im = 0;
    for (std::size_t r = 0; r < ring.size(); ++r) {
      const double wr = W(0, static_cast<Eigen::Index>(r)), wi = W(1, static_cast<Eigen::Index>(r));
      tre.emplace_back(i, ring[r], wr);
      tim.emplace_back(i, ring[r], wi);
      sum_re += wr;
      sum_im += wi;
    }
    tre.emplace_back(i, i, -sum_re);
    tim.emplace_back(i, i, -sum_im);
  }
  g.re.resize(V, V);
  g.im.resize(V, V);
  g.re.setFromTriplets(tre.begin(), tre.end());
  g.im.setFromTriplets(tim.begin(), tim.end());
  g.re.makeCompressed();
  g.im.makeCompressed();
  return g;
}

// ---------------------------------------------------------------------------
// Generalized eigensolver: L phi = lambda M phi for the k smallest lambda.
//
// Block shift-invert subspace iteration with Rayleigh-Ritz. Orthonormality
// in the M inner product is obtained by a Householder QR of M^{1/2} Y, which
// stays stable even though the near-null mode is amplified by ~1/|sigma|.

struct EigenSolverOptions {
  double tolerance = 1e-8;
  int max_iterations = 0;  // 0 -> 5 k sqrt(V)
  std::uint64_t seed = 0x5eed;
};

struct EigenResult {
  Vector values;
  Matrix vectors;
  int iterations = 0;
  double max_residual = 0;
};

inline double infinity_norm(const CsrMatrix& A) {
  double best = 0;
  for (Eigen::Index r = 0; r < A.outerSize(); ++r) {
    double s = 0;
    for (CsrMatrix::InnerIterator it(A, r); it; ++it) s += std::abs(it.value());
    best = std::max(best, s);
  }
  return best;
}

// ||L x - lambda M x||_2 / (||L||_inf ||x||_2)
inline double eigen_residual(const CsrMatrix& L, const Vector& mass, double lambda, const Vector& x) {
  const double scale = infinity_norm(L) * x.norm();
  const Vector r = L * x - lambda * mass.cwiseProduct(x);
  return scale > 0 ? r.norm() / scale : r.norm();
}

inline EigenResult eigenbasis(const CsrMatrix& L, const Vector& mass, Eigen::Index k, const EigenSolverOptions& opt = {}) {
  const Eigen::Index V = L.rows();
  if (k < 1 || k > V) throw_data("eigenbasis: k = ", k, " must lie in [1, ", V, "]");
  if (mass.size() != V || !(mass.minCoeff() > 0)) throw_data("eigenbasis: mass must be positive with one entry per vertex");

  const double sigma = -1e-8 * L.diagonal().sum() / mass.sum();
  Eigen::SparseMatrix<double> A = L;
  for (Eigen::Index i = 0; i < V; ++i) A.coeffRef(i, i) -= sigma * mass[i];
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
  if (ldlt.info() != Eigen::Success) throw_numerical("eigenbasis: factorization of L - sigma M failed");

  const Eigen::Index p = std::min(V, std::max<Eigen::Index>(2 * k, k + 16));
  const Vector sqrt_m = mass.cwiseSqrt();
  const Vector inv_sqrt_m = sqrt_m.cwiseInverse();
  const double l_norm = infinity_norm(L);
  const int max_iter = opt.max_iterations > 0
                           ? opt.max_iterations
                           : static_cast<int>(std::ceil(5.0 * static_cast<double>(k) * std::sqrt(static_cast<double>(V))));

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  Matrix X(V, p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < V; ++i) X(i, j) = uni(rng);

  EigenResult out;
  for (int it = 1; it <= max_iter; ++it) {
    Matrix Y = ldlt.solve(mass.asDiagonal() * X);
    // M-orthonormal basis Q of span(Y).
    Matrix Z = sqrt_m.asDiagonal() * Y;
    Eigen::HouseholderQR<Matrix> qr(Z);
    Matrix Q = inv_sqrt_m.asDiagonal() * (qr.householderQ() * Matrix::Identity(V, p));
    Matrix H = Q.transpose() * (L * Q);
    H = 0.5 * (H + H.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> es(H);
    X = Q * es.eigenvectors();  // Ritz vectors, ascending Ritz values

    double worst = 0;
    for (Eigen::Index j = 0; j < k; ++j) {
      const Vector x = X.col(j);
      const Vector r = L * x - es.eigenvalues()[j] * mass.cwiseProduct(x);
      worst = std::max(worst, r.norm() / (l_norm * x.norm()));
    }
    out.iterations = it;
    out.max_residual = worst;
    if (worst <= opt.tolerance) {
      out.values = es.eigenvalues().head(k);
      out.vectors = X.leftCols(k);
      break;
    }
  }
  if (out.values.size() != k)
    throw_numerical("eigenbasis: no convergence after ", max_iter, " iterations (max relative residual ",
                    out.max_residual, ")");

  // Fix signs: the largest-magnitude entry of each vector is positive.
  for (Eigen::Index j = 0; j < k; ++j) {
    Eigen::Index arg = 0;
    out.vectors.col(j).cwiseAbs().maxCoeff(&arg);
    if (out.vectors(arg, j) < 0) out.vectors.col(j) *= -1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------

inline Eigen::Index default_spectral_modes(Eigen::Index V) {
  return std::max<Eigen::Index>(1, std::min<Eigen::Index>(kDefaultSpectralModes, V - 1));
}

inline SurfaceOperators compute_operators(const Mesh& mesh, Eigen::Index k, const EigenSolverOptions& opt = {}) {
  check_mesh(mesh);
  const auto V = mesh.num_vertices();
  if (k < 1 || k > V) throw_data("compute_operators: k = ", k, " must lie in [1, V = ", V, "]");
  SurfaceOperators ops;
  ops.mass = mass_matrix(mesh);
  for (Eigen::Index i = 0; i < V; ++i)
    if (!(ops.mass[i] > 0)) throw_data("compute_operators: vertex ", i, " has zero mass (referenced by no face)");
  ops.laplacian = cotangent_laplacian(mesh);
  auto eig = eigenbasis(ops.laplacian, ops.mass, k, opt);
  ops.eigenvalues = std::move(eig.values);
  ops.eigenvectors = std::move(eig.vectors);
  auto grad = spatial_gradient(mesh);
  ops.gradient_re = std::move(grad.re);
  ops.gradient_im = std::move(grad.im);
  ops.rank_deficient_vertices = grad.rank_deficient_vertices;
  return ops;
}

// ---------------------------------------------------------------------------
// Operator cache ("STOP" files). Layout is documented in docs/formats.md.

inline constexpr std::uint32_t kOperatorCacheVersion = 1;

class StaleCacheError : public DataError {
 public:
  using DataError::DataError;
};

inline Digest operator_cache_key(const Mesh& mesh, Eigen::Index k) {
  Hasher h;
  h.update("STOP", 4).value(kOperatorCacheVersion);
  h.matrix(mesh.vertices).matrix(mesh.faces).value(static_cast<std::uint64_t>(k));
  return h.finish();
}

namespace detail {

inline void write_csr(BinaryWriter& w, const CsrMatrix& A, const CsrMatrix* imag = nullptr) {
  const auto nnz = static_cast<std::uint32_t>(A.nonZeros());
  w.u32(nnz);
  for (Eigen::Index r = 0; r <= A.rows(); ++r) w.u32(static_cast<std::uint32_t>(A.outerIndexPtr()[r]));
  for (std::uint32_t i = 0; i < nnz; ++i) w.u32(static_cast<std::uint32_t>(A.innerIndexPtr()[i]));
  w.bytes(A.valuePtr(), sizeof(double) * nnz);
  if (imag) w.bytes(imag->valuePtr(), sizeof(double) * nnz);
}

inline CsrMatrix read_csr(BinaryReader& r, Eigen::Index n, CsrMatrix* imag = nullptr) {
  const auto nnz = r.u32();
  std::vector<int> outer(static_cast<std::size_t>(n) + 1), inner(nnz);
  for (auto& o : outer) o = static_cast<int>(r.u32());
  for (auto& i : inner) i = static_cast<int>(r.u32());
  if (outer.front() != 0 || static_cast<std::uint32_t>(outer.back()) != nnz) throw_data(r.what(), ": corrupt CSR index");
  for (std::size_t i = 0; i < nnz; ++i)
    if (inner[i] < 0 || inner[i] >= n) throw_data(r.what(), ": corrupt CSR index");
  std::vector<double> values(nnz);
  r.bytes(values.data(), sizeof(double) * nnz);
  CsrMatrix A = Eigen::Map<const CsrMatrix>(n, n, static_cast<Eigen::Index>(nnz), outer.data(), inner.data(), values.data());
  if (imag) {
    r.bytes(values.data(), sizeof(double) * nnz);
    *imag = Eigen::Map<const CsrMatrix>(n, n, static_cast<Eigen::Index>(nnz), outer.data(), inner.data(), values.data());
  }
  return A;
}

}  // namespace detail

inline void cache_store(const SurfaceOperators& ops, const Digest& key, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_data(path.string(), ": cannot open for writing");
  BinaryWriter w(os);
  w.magic("STOP");
  w.u32(kOperatorCacheVersion);
  w.bytes(key.data(), key.size());
  const auto V = ops.num_vertices(), k = ops.k();
  w.u32(static_cast<std::uint32_t>(V));
  w.u32(static_cast<std::uint32_t>(k));
  w.u32(static_cast<std::uint32_t>(ops.rank_deficient_vertices));
  w.bytes(ops.mass.data(), sizeof(double) * static_cast<std::size_t>(V));
  detail::write_csr(w, ops.laplacian);
  w.bytes(ops.eigenvalues.data(), sizeof(double) * static_cast<std::size_t>(k));
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> phi = ops.eigenvectors;
  w.bytes(phi.data(), sizeof(double) * static_cast<std::size_t>(V * k));
  if (ops.gradient_re.nonZeros() != ops.gradient_im.nonZeros())
    throw_data("cache_store: gradient real/imaginary sparsity differs");
  detail::write_csr(w, ops.gradient_re, &ops.gradient_im);
}

struct CachedOperators {
  Digest key{};
  SurfaceOperators ops;
};

inline CachedOperators cache_load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_data(path.string(), ": cannot open");
  BinaryReader r(is, path.string());
  r.expect_magic("STOP");
  if (const auto v = r.u32(); v != kOperatorCacheVersion)
    throw_data(path.string(), ": version mismatch (file ", v, ", expected ", kOperatorCacheVersion, ")");
  CachedOperators c;
  r.bytes(c.key.data(), c.key.size());
  const Eigen::Index V = r.u32(), k = r.u32();
  auto& ops = c.ops;
  ops.rank_deficient_vertices = static_cast<int>(r.u32());
  ops.mass.resize(V);
  r.bytes(ops.mass.data(), sizeof(double) * static_cast<std::size_t>(V));
  ops.laplacian = detail::read_csr(r, V);
  ops.eigenvalues.resize(k);
  r.bytes(ops.eigenvalues.data(), sizeof(double) * static_cast<std::size_t>(k));
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> phi(V, k);
  r.bytes(phi.data(), sizeof(double) * static_cast<std::size_t>(V * k));
  ops.eigenvectors = phi;
  ops.gradient_re = detail::read_csr(r, V, &ops.gradient_im);
  if (!r.at_end()) throw_data(path.string(), ": trailing data after operator payload");
  return c;
}

// Loads a cache for `mesh`; a vertex-count mismatch is a DataError naming both
// counts, any other key mismatch (geometry, faces, k) is a StaleCacheError.
inline SurfaceOperators cache_load(const std::filesystem::path& path, const Mesh& mesh, Eigen::Index k) {
  auto c = cache_load(path);
  if (c.ops.num_vertices() != mesh.num_vertices())
    throw_data(path.string(), ": operator cache has ", c.ops.num_vertices(), " vertices but the mesh has ",
               mesh.num_vertices());
  if (c.key != operator_cache_key(mesh, k))
    throw StaleCacheError(path.string() + ": content hash mismatch (stale cache)");
  return std::move(c.ops);
}

}  // namespace scantalk
