#pragma once

// Evaluation metrics (lip vertex error, max vertex error, upper-face dynamics
// deviation) and per-vertex diagnostic fields.
//
// "L2 error" is the squared Euclidean distance between a predicted and a
// ground-truth vertex. FDD measures dynamics as displacement magnitude from
// the neutral face, population standard deviation over frames.

#include "scantalk/diffusion.hpp"
#include "scantalk/losses.hpp"

#include <filesystem>

namespace scantalk {

struct MetricReport {
  double lve = 0;
  double mve = 0;
  double fdd = 0;
  double mse = 0;
  std::vector<double> lve_per_frame;
  std::vector<double> mve_per_frame;
  std::vector<double> fdd_per_vertex;  // over the upper mask, mask order
};

namespace detail {

inline double frame_max_sq(const Vertices& pred, const Vertices& gt, const std::vector<int>* subset) {
  double best = 0;
  if (subset) {
    for (int k : *subset) best = std::max(best, (pred.row(k) - gt.row(k)).squaredNorm());
  } else {
    best = (pred - gt).rowwise().squaredNorm().maxCoeff();
  }
  return best;
}

inline void check_mask(const VertexMask& mask, Eigen::Index V, const char* what) {
  if (mask.indices.empty()) throw_data(what, ": empty mask");
  for (int k : mask.indices)
    if (k < 0 || k >= V) throw_data(what, ": mask index ", k, " out of range for ", V, " vertices");
}

}  // namespace detail

inline double lve(const Frames& pred, const Frames& gt, const VertexMask& lip, std::vector<double>* per_frame = nullptr) {
  detail::check_same_shape(pred, gt, "lve");
  detail::check_mask(lip, pred.front().rows(), "lve");
  double sum = 0;
  if (per_frame) per_frame->clear();
  for (std::size_t j = 0; j < pred.size(); ++j) {
    const double m = detail::frame_max_sq(pred[j], gt[j], &lip.indices);
    if (per_frame) per_frame->push_back(m);
    sum += m;
  }
  return sum / static_cast<double>(pred.size());
}

inline double mve(const Frames& pred, const Frames& gt, std::vector<double>* per_frame = nullptr) {
  detail::check_same_shape(pred, gt, "mve");
  double sum = 0;
  if (per_frame) per_frame->clear();
  for (std::size_t j = 0; j < pred.size(); ++j) {
    const double m = detail::frame_max_sq(pred[j], gt[j], nullptr);
    if (per_frame) per_frame->push_back(m);
    sum += m;
  }
  return sum / static_cast<double>(pred.size());
}

// Per masked vertex: population std over frames of ||S_jk - neutral_k||.
inline std::vector<double> upper_dynamics(const Frames& seq, const Vertices& neutral, const VertexMask& upper) {
  std::vector<double> out;
  const double T = static_cast<double>(seq.size());
  for (int k : upper.indices) {
    double mean = 0;
    for (const auto& f : seq) mean += (f.row(k) - neutral.row(k)).norm();
    mean /= T;
    double var = 0;
    for (const auto& f : seq) {
      const double d = (f.row(k) - neutral.row(k)).norm() - mean;
      var += d * d;
    }
    out.push_back(std::sqrt(var / T));
  }
  return out;
}

// mean over masked k of (dyn(gt)_k - dyn(pred)_k); negative when the
// prediction is more dynamic than the ground truth.
inline double fdd(const Frames& pred, const Frames& gt, const Vertices& neutral, const VertexMask& upper,
                  std::vector<double>* per_vertex = nullptr) {
  detail::check_same_shape(pred, gt, "fdd");
  if (pred.size() < 2) throw_data("fdd: needs at least 2 frames");
  detail::check_mask(upper, pred.front().rows(), "fdd");
  if (neutral.rows() != pred.front().rows()) throw_data("fdd: neutral has ", neutral.rows(), " vertices");
  const auto dg = upper_dynamics(gt, neutral, upper);
  const auto dp = upper_dynamics(pred, neutral, upper);
  double sum = 0;
  if (per_vertex) per_vertex->clear();
  for (std::size_t i = 0; i < dg.size(); ++i) {
    if (per_vertex) per_vertex->push_back(dg[i] - dp[i]);
    sum += dg[i] - dp[i];
  }
  return sum / static_cast<double>(dg.size());
}

inline MetricReport evaluate(const Frames& pred, const Frames& gt, const Vertices& neutral, const VertexMask& lip,
                             const VertexMask& upper) {
  MetricReport r;
  r.lve = lve(pred, gt, lip, &r.lve_per_frame);
  r.mve = mve(pred, gt, &r.mve_per_frame);
  r.fdd = pred.size() >= 2 ? fdd(pred, gt, neutral, upper, &r.fdd_per_vertex) : 0.0;
  r.mse = loss_mse(pred, gt);
  return r;
}

// ---------------------------------------------------------------------------

// Per vertex: mean over j >= 1 of ||frame_j - frame_0||.
inline Vector motion_heatmap(const Frames& seq) {
  if (seq.size() < 2) throw_data("heatmap: needs at least 2 frames");
  Vector heat = Vector::Zero(seq.front().rows());
  for (std::size_t j = 1; j < seq.size(); ++j) {
    if (seq[j].rows() != heat.size()) throw_data("heatmap: frame ", j, " has a different vertex count");
    heat += (seq[j] - seq[0]).rowwise().norm();
  }
  return heat / static_cast<double>(seq.size() - 1);
}

// ||f_k|| / max_k ||f_k|| for the encoder descriptors.
inline Vector descriptor_norm_map(const Matrix& descriptors) {
  const Vector norms = descriptors.rowwise().norm();
  const double top = norms.maxCoeff();
  if (!(top > 0)) throw_data("descriptor map: all descriptors are zero");
  return norms / top;
}

// Blue (0) to red (max) ramp through cyan, green and yellow.
inline Eigen::Matrix<double, Eigen::Dynamic, 3> heat_colors(const Vector& values) {
  Eigen::Matrix<double, Eigen::Dynamic, 3> rgb(values.size(), 3);
  const double top = values.size() ? values.maxCoeff() : 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double x = top > 0 ? std::clamp(values[i] / top, 0.0, 1.0) : 0.0;
    rgb(i, 0) = std::clamp(1.5 - std::abs(4 * x - 3), 0.0, 1.0);
    rgb(i, 1) = std::clamp(1.5 - std::abs(4 * x - 2), 0.0, 1.0);
    rgb(i, 2) = std::clamp(1.5 - std::abs(4 * x - 1), 0.0, 1.0);
  }
  return rgb;
}

inline void save_scalar_field(const Vector& values, const std::filesystem::path& path) {
  std::string s;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    detail::append_double(s, values[i]);
    s += '\n';
  }
  detail::write_text(path, s);
}

}  // namespace scantalk
