#pragma once

// Minimal layer toolkit: every parameter bundle exposes visit(prefix, fn)
// over its named tensors so gradients, optimizer state and checkpoints can
// all reuse the parameter struct itself as their container.

#include "scantalk/common.hpp"

#include <cmath>
#include <random>
#include <string>

namespace scantalk::nn {

using Rng = std::mt19937_64;

struct NamedTensor {
  std::string name;
  Matrix* tensor;
};

struct ConstNamedTensor {
  std::string name;
  const Matrix* tensor;
};

template <class Params>
std::vector<NamedTensor> tensors(Params& p) {
  std::vector<NamedTensor> out;
  p.visit("", [&](const std::string& name, Matrix& m) { out.push_back({name, &m}); });
  return out;
}

template <class Params>
std::vector<ConstNamedTensor> tensors(const Params& p) {
  std::vector<ConstNamedTensor> out;
  const_cast<Params&>(p).visit("", [&](const std::string& name, Matrix& m) { out.push_back({name, &m}); });
  return out;
}

template <class Params>
Params zeros_like(const Params& p) {
  Params z = p;
  z.visit("", [](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

// a += scale * b, tensor by tensor.
template <class Params>
void axpy(Params& a, const Params& b, double scale = 1.0) {
  auto ta = tensors(a);
  auto tb = tensors(b);
  for (std::size_t i = 0; i < ta.size(); ++i) *ta[i].tensor += scale * *tb[i].tensor;
}

template <class Params>
double squared_norm(const Params& p) {
  double s = 0;
  for (const auto& t : tensors(p)) s += t.tensor->squaredNorm();
  return s;
}

template <class Params>
std::size_t parameter_count(const Params& p) {
  std::size_t n = 0;
  for (const auto& t : tensors(p)) n += static_cast<std::size_t>(t.tensor->size());
  return n;
}

inline std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

inline Matrix uniform(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  // Column-major fill order is part of the determinism contract.
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
  return m;
}

// y = x W + b, with W stored in x out.
struct Linear {
  Matrix weight;
  Matrix bias;  // 1 x out

  static Linear make(Eigen::Index in, Eigen::Index out, Rng& rng) {
    return {uniform(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng), Matrix::Zero(1, out)};
  }
  static Linear zeros(Eigen::Index in, Eigen::Index out) { return {Matrix::Zero(in, out), Matrix::Zero(1, out)}; }

  Eigen::Index in() const { return weight.rows(); }
  Eigen::Index out() const { return weight.cols(); }

  Matrix forward(const Matrix& x) const {
    if (x.cols() != weight.rows())
      throw_data("linear: input has ", x.cols(), " columns, expected ", weight.rows());
    Matrix y = x * weight;
    y.rowwise() += bias.row(0);
    return y;
  }

  // Accumulates parameter gradients into `grad`; returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& dy, Linear& grad) const {
    grad.weight.noalias() += x.transpose() * dy;
    grad.bias += dy.colwise().sum();
    return dy * weight.transpose();
  }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    fn(join(prefix, "weight"), weight);
    fn(join(prefix, "bias"), bias);
  }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace scantalk::nn
