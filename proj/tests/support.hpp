#pragma once

#include "scantalk/nn.hpp"
#include "scantalk/shapes.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace scantalk::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "scantalk") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

inline std::string read_binary(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline Mesh unit_equilateral() {
  Vertices v(3, 3);
  v << 0, 0, 0, 1, 0, 0, 0.5, std::sqrt(3.0) / 2.0, 0;
  Faces f(1, 3);
  f << 0, 1, 2;
  return {v, f};
}

inline Mesh unit_square() {
  Vertices v(4, 3);
  v << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0;
  Faces f(2, 3);
  f << 0, 1, 2, 0, 2, 3;
  return {v, f};
}

inline std::vector<int> random_permutation(int n, std::uint64_t seed) {
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

inline Matrix permute_rows(const Matrix& m, const std::vector<int>& perm) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(perm[i]);
  return out;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = u(rng);
  return m;
}

}  // namespace scantalk::testing

namespace scantalk::testing {

struct GradientCheck {
  std::string name;
  double rel_error = 0;
  double analytic_norm = 0;
};

// Central differences over every entry of every tensor in `params`.
// Relative error per tensor: ||a - n|| / max(||a||, ||n||, floor).
template <class Params, class Loss>
std::vector<GradientCheck> finite_difference_check(Params params, const Params& analytic, Loss&& loss,
                                                   double eps = 1e-4, double floor = 1e-10) {
  std::vector<GradientCheck> out;
  auto ts = nn::tensors(params);
  const auto ga = nn::tensors(analytic);
  for (std::size_t t = 0; t < ts.size(); ++t) {
    Matrix& m = *ts[t].tensor;
    Matrix numeric(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double saved = m.data()[i];
      m.data()[i] = saved + eps;
      const double up = loss(params);
      m.data()[i] = saved - eps;
      const double down = loss(params);
      m.data()[i] = saved;
      numeric.data()[i] = (up - down) / (2 * eps);
    }
    const Matrix& a = *ga[t].tensor;
    const double scale = std::max({a.norm(), numeric.norm(), floor});
    out.push_back({ts[t].name, (a - numeric).norm() / scale, a.norm()});
  }
  return out;
}

}  // namespace scantalk::testing
