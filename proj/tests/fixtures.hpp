#pragma once

#include "support.hpp"

#include "scantalk/pipeline.hpp"

namespace scantalk::testing {

// Small model with every tensor randomized (including the decoder's last
// layer and all biases) so no gradient is trivially zero.
inline ModelParams toy_model(CellType cell, std::uint64_t seed, int width = 8, int feature_dim = 5) {
  ModelConfig cfg;
  cfg.width = width;
  cfg.blocks = 4;
  cfg.feature_dim = feature_dim;
  cfg.recurrent_layers = 3;
  cfg.recurrent_hidden = width / 2;
  cfg.cell = cell;
  cfg.spectral_modes = 12;
  ModelParams p = init_model(cfg, 0.05, seed);
  std::uint64_t s = seed * 1000;
  p.visit("", [&](const std::string& name, Matrix& m) {
    const bool bias = name.ends_with("bias") || name.find(".b_") != std::string::npos;
    if (bias) m = random_matrix(m.rows(), m.cols(), ++s, -0.2, 0.2);
  });
  p.decoder.last.weight = random_matrix(width, 3, ++s, -0.3, 0.3);
  return p;
}

struct ToySample {
  Mesh mesh;
  SurfaceOperators ops;
  FeatureSequence features;
  Frames target;
  VertexMask lip;
};

inline ToySample toy_sample(std::uint64_t seed, Eigen::Index T = 3, int feature_dim = 5) {
  ToySample s;
  s.mesh = shapes::jitter_on_sphere(shapes::icosahedron(), 0.2, seed);
  s.ops = compute_operators(s.mesh, 12);
  s.features.source_rate = 30;
  s.features.data = random_matrix(T, feature_dim, seed + 1);
  for (Eigen::Index t = 0; t < T; ++t)
    s.target.push_back(s.mesh.vertices + 0.1 * random_matrix(12, 3, seed + 10 + static_cast<std::uint64_t>(t)));
  s.lip = make_mask({0, 3, 5, 8}, MaskLabel::lip, 12);
  return s;
}

inline ModelParams full_model_gradient(const ToySample& s, const ModelParams& p, const LossWeights& w) {
  const auto pred = animate(s.mesh, s.ops, s.features, p).frames;
  Frames d;
  weighted_loss(pred, s.target, &s.lip, w, &d);
  return model_backward(s.mesh, s.ops, s.features, p, std::vector<Matrix>(d.begin(), d.end()));
}

inline double full_model_loss(const ToySample& s, const ModelParams& p, const LossWeights& w) {
  return weighted_loss(animate(s.mesh, s.ops, s.features, p).frames, s.target, &s.lip, w).total;
}

// Parameter-group label for a tensor name.
inline std::string parameter_group(const std::string& name) {
  if (name.find("time_sqrt") != std::string::npos) return "diffusion times";
  if (name.find("mix_") != std::string::npos) return "complex gradient mix";
  if (name.find("mlp_") != std::string::npos) return "block MLPs";
  if (name.starts_with("recurrent.layer")) return "recurrent stack";
  if (name.starts_with("recurrent.projection")) return "recurrent projection";
  if (name.starts_with("audio_projection")) return "audio projection";
  return "input/output linears";
}

}  // namespace scantalk::testing
