#pragma once

// Sequence losses over predicted and ground-truth frames (T frames of V x 3).
// Each returns the value and, on request, dL/dpred per frame.

#include "scantalk/mesh.hpp"

namespace scantalk {

using Frames = std::vector<Vertices>;

namespace detail {

inline void check_same_shape(const Frames& pred, const Frames& gt, const char* what) {
  if (pred.size() != gt.size()) throw_data(what, ": ", pred.size(), " predicted frames vs ", gt.size(), " ground-truth frames");
  if (pred.empty()) throw_data(what, ": empty sequence");
  for (std::size_t j = 0; j < pred.size(); ++j)
    if (pred[j].rows() != gt[j].rows()) throw_data(what, ": frame ", j, " has ", pred[j].rows(), " vs ", gt[j].rows(), " vertices");
}

inline void init_grad(Frames* grad, const Frames& pred) {
  if (!grad) return;
  grad->assign(pred.size(), Vertices());
  for (std::size_t j = 0; j < pred.size(); ++j) (*grad)[j] = Vertices::Zero(pred[j].rows(), 3);
}

}  // namespace detail

// (1/T) sum_j (1/V) sum_k ||gt_jk - pred_jk||^2
inline double loss_mse(const Frames& pred, const Frames& gt, Frames* grad = nullptr) {
  detail::check_same_shape(pred, gt, "mse");
  detail::init_grad(grad, pred);
  const double T = static_cast<double>(pred.size());
  double total = 0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    const double V = static_cast<double>(pred[j].rows());
    const Vertices diff = pred[j] - gt[j];
    total += diff.squaredNorm() / V;
    if (grad) (*grad)[j] = (2.0 / (T * V)) * diff;
  }
  return total / T;
}

// MSE restricted to the masked vertices (denominator = mask size).
inline double loss_masked(const Frames& pred, const Frames& gt, const VertexMask& mask, Frames* grad = nullptr) {
  detail::check_same_shape(pred, gt, "masked mse");
  if (mask.indices.empty()) throw_data("masked mse: empty mask");
  detail::init_grad(grad, pred);
  const double T = static_cast<double>(pred.size());
  const double n = static_cast<double>(mask.size());
  double total = 0;
  for (std::size_t j = 0; j < pred.size(); ++j)
    for (int k : mask.indices) {
      if (k < 0 || k >= pred[j].rows()) throw_data("masked mse: mask index ", k, " out of range");
      const Eigen::RowVector3d diff = pred[j].row(k) - gt[j].row(k);
      total += diff.squaredNorm() / n;
      if (grad) (*grad)[j].row(k) += (2.0 / (T * n)) * diff;
    }
  return total / T;
}

// (1/(T-1)) sum_j (1/V) sum_k ||(gt_{j+1} - gt_j)_k - (pred_{j+1} - pred_j)_k||^2
inline double loss_velocity(const Frames& pred, const Frames& gt, Frames* grad = nullptr) {
  detail::check_same_shape(pred, gt, "velocity");
  if (pred.size() < 2) throw_data("velocity: needs at least 2 frames");
  detail::init_grad(grad, pred);
  const double steps = static_cast<double>(pred.size() - 1);
  double total = 0;
  for (std::size_t j = 0; j + 1 < pred.size(); ++j) {
    const double V = static_cast<double>(pred[j].rows());
    const Vertices diff = (pred[j + 1] - pred[j]) - (gt[j + 1] - gt[j]);
    total += diff.squaredNorm() / V;
    if (grad) {
      (*grad)[j + 1] += (2.0 / (steps * V)) * diff;
      (*grad)[j] -= (2.0 / (steps * V)) * diff;
    }
  }
  return total / steps;
}

struct LossWeights {
  double mse = 1.0;
  double mask = 0.0;
  double velocity = 0.0;
};

struct LossTerms {
  double mse = 0, mask = 0, velocity = 0, total = 0;
};

inline LossTerms weighted_loss(const Frames& pred, const Frames& gt, const VertexMask* lip_mask, const LossWeights& w,
                               Frames* grad = nullptr) {
  LossTerms out;
  Frames g;
  detail::init_grad(grad, pred);
  out.mse = loss_mse(pred, gt, grad ? &g : nullptr);
  if (grad)
    for (std::size_t j = 0; j < g.size(); ++j) (*grad)[j] += w.mse * g[j];
  if (w.mask > 0) {
    if (!lip_mask) throw_data("loss: masked term requested without a lip mask");
    out.mask = loss_masked(pred, gt, *lip_mask, grad ? &g : nullptr);
    if (grad)
      for (std::size_t j = 0; j < g.size(); ++j) (*grad)[j] += w.mask * g[j];
  }
  if (w.velocity > 0 && pred.size() >= 2) {
    out.velocity = loss_velocity(pred, gt, grad ? &g : nullptr);
    if (grad)
      for (std::size_t j = 0; j < g.size(); ++j) (*grad)[j] += w.velocity * g[j];
  }
  out.total = w.mse * out.mse + w.mask * out.mask + w.velocity * out.velocity;
  return out;
}

}  // namespace scantalk
