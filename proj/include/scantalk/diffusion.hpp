#pragma once

// Discretization-agnostic surface layers: learned spectral heat diffusion,
// tangent-plane gradient features and per-vertex MLPs, stacked into the
// encoder and decoder networks.

#include "scantalk/nn.hpp"
#include "scantalk/operators.hpp"

namespace scantalk {

// ---------------------------------------------------------------------------
// Spectral diffusion: H'_j = Phi diag(exp(-lambda t_j)) Phi^T M H_j.

inline Matrix to_spectral(const Matrix& H, const SurfaceOperators& ops) {
  return ops.eigenvectors.transpose() * (ops.mass.asDiagonal() * H);
}

inline Matrix decay_factors(const SurfaceOperators& ops, const Eigen::RowVectorXd& times) {
  return (-(ops.eigenvalues * times)).array().exp().matrix();
}

inline void check_shape(const Matrix& H, const SurfaceOperators& ops, const char* what) {
  if (H.rows() != ops.num_vertices())
    throw_data(what, ": features have ", H.rows(), " rows but the operators describe ", ops.num_vertices(), " vertices");
}

inline Matrix diffuse(const Matrix& H, const SurfaceOperators& ops, const Eigen::RowVectorXd& times) {
  check_shape(H, ops, "diffuse");
  if (times.size() != H.cols()) throw_data("diffuse: ", times.size(), " times for ", H.cols(), " channels");
  if (!times.allFinite()) throw_numerical("diffuse: non-finite diffusion time");
  const Matrix spec = to_spectral(H, ops);
  return ops.eigenvectors * decay_factors(ops, times).cwiseProduct(spec);
}

// ---------------------------------------------------------------------------
// Gradient features: g = G H (complex), out = tanh(Re(conj(g) . (g A))).

struct GradientFeatureCache {
  Matrix gr, gi;  // gradient, real/imag
  Matrix br, bi;  // g A
  Matrix out;
};

inline Matrix gradient_features(const Matrix& H, const SurfaceOperators& ops, const Matrix& a_re, const Matrix& a_im,
                                GradientFeatureCache* cache = nullptr) {
  check_shape(H, ops, "gradient_features");
  if (a_re.rows() != H.cols() || a_re.cols() != H.cols() || a_im.rows() != a_re.rows() || a_im.cols() != a_re.cols())
    throw_data("gradient_features: mixing matrix must be ", H.cols(), "x", H.cols());
  GradientFeatureCache local;
  auto& c = cache ? *cache : local;
  c.gr = ops.gradient_re * H;
  c.gi = ops.gradient_im * H;
  c.br = c.gr * a_re - c.gi * a_im;
  c.bi = c.gr * a_im + c.gi * a_re;
  c.out = (c.gr.cwiseProduct(c.br) + c.gi.cwiseProduct(c.bi)).array().tanh().matrix();
  return c.out;
}

// ---------------------------------------------------------------------------

struct DiffusionBlockParams {
  Matrix time_sqrt;  // 1 x c; diffusion time t = time_sqrt^2
  Matrix mix_re;     // c x c
  Matrix mix_im;     // c x c
  nn::Linear mlp_hidden;  // 3c -> c, ReLU
  nn::Linear mlp_out;     // c -> c

  static DiffusionBlockParams make(Eigen::Index c, double init_time, nn::Rng& rng) {
    DiffusionBlockParams p;
    p.time_sqrt = Matrix::Constant(1, c, std::sqrt(init_time));
    const double bound = 1.0 / std::sqrt(static_cast<double>(c));
    p.mix_re = nn::uniform(c, c, bound, rng);
    p.mix_im = nn::uniform(c, c, bound, rng);
    p.mlp_hidden = nn::Linear::make(3 * c, c, rng);
    p.mlp_out = nn::Linear::make(c, c, rng);
    return p;
  }

  Eigen::Index channels() const { return time_sqrt.cols(); }
  Eigen::RowVectorXd times() const { return time_sqrt.row(0).array().square().matrix(); }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    fn(nn::join(prefix, "time_sqrt"), time_sqrt);
    fn(nn::join(prefix, "mix_re"), mix_re);
    fn(nn::join(prefix, "mix_im"), mix_im);
    mlp_hidden.visit(nn::join(prefix, "mlp_hidden"), fn);
    mlp_out.visit(nn::join(prefix, "mlp_out"), fn);
  }
};

struct BlockCache {
  Matrix input;
  Matrix spectral;  // Phi^T M H, k x c
  Matrix decay;     // exp(-lambda t), k x c
  Matrix diffused;
  GradientFeatureCache grad;
  Matrix mlp_in;
  Matrix hidden_pre;
  Matrix hidden;
};

// out = H + MLP([H, diffuse(H), gradient_features(diffuse(H))])
inline Matrix block_forward(const Matrix& H, const SurfaceOperators& ops, const DiffusionBlockParams& p,
                            BlockCache* cache = nullptr) {
  check_shape(H, ops, "diffusion block");
  const auto c = p.channels();
  if (H.cols() != c) throw_data("diffusion block: input has ", H.cols(), " channels, expected ", c);
  BlockCache local;
  auto& k = cache ? *cache : local;
  k.input = H;
  k.spectral = to_spectral(H, ops);
  k.decay = decay_factors(ops, p.times());
  k.diffused = ops.eigenvectors * k.decay.cwiseProduct(k.spectral);
  gradient_features(k.diffused, ops, p.mix_re, p.mix_im, &k.grad);
  k.mlp_in.resize(H.rows(), 3 * c);
  k.mlp_in << H, k.diffused, k.grad.out;
  k.hidden_pre = p.mlp_hidden.forward(k.mlp_in);
  k.hidden = k.hidden_pre.cwiseMax(0.0);
  return H + p.mlp_out.forward(k.hidden);
}

// Returns dL/dH and accumulates parameter gradients into `g`.
inline Matrix block_backward(const Matrix& d_out, const SurfaceOperators& ops, const DiffusionBlockParams& p,
                             const BlockCache& k, DiffusionBlockParams& g) {
  const auto c = p.channels();
  Matrix d_hidden = p.mlp_out.backward(k.hidden, d_out, g.mlp_out);
  d_hidden.array() *= (k.hidden_pre.array() > 0.0).cast<double>();
  const Matrix d_in = p.mlp_hidden.backward(k.mlp_in, d_hidden, g.mlp_hidden);

  Matrix dH = d_out + d_in.leftCols(c);
  Matrix du = d_in.middleCols(c, c);

  // Gradient features.
  const auto& gc = k.grad;
  const Matrix dy = d_in.rightCols(c).cwiseProduct((1.0 - gc.out.array().square()).matrix());
  const Matrix dbr = dy.cwiseProduct(gc.gr);
  const Matrix dbi = dy.cwiseProduct(gc.gi);
  const Matrix dgr = dy.cwiseProduct(gc.br) + dbr * p.mix_re.transpose() + dbi * p.mix_im.transpose();
  const Matrix dgi = dy.cwiseProduct(gc.bi) - dbr * p.mix_im.transpose() + dbi * p.mix_re.transpose();
  g.mix_re.noalias() += gc.gr.transpose() * dbr + gc.gi.transpose() * dbi;
  g.mix_im.noalias() += gc.gr.transpose() * dbi - gc.gi.transpose() * dbr;
  du.noalias() += ops.gradient_re.transpose() * dgr;
  du.noalias() += ops.gradient_im.transpose() * dgi;

  // Spectral diffusion.
  const Matrix d_spec_scaled = ops.eigenvectors.transpose() * du;  // dL/d(decay . spectral)
  const Matrix d_spec = d_spec_scaled.cwiseProduct(k.decay);
  dH.noalias() += ops.mass.asDiagonal() * (ops.eigenvectors * d_spec);
  // d decay_ij / d t_j = -lambda_i decay_ij
  const Matrix d_decay = d_spec_scaled.cwiseProduct(k.spectral);
  const Eigen::RowVectorXd d_time = -(ops.eigenvalues.transpose() * d_decay.cwiseProduct(k.decay));
  g.time_sqrt.row(0) += 2.0 * p.time_sqrt.row(0).cwiseProduct(d_time);
  return dH;
}

// ---------------------------------------------------------------------------
// Encoder (3 -> h -> blocks -> h) and decoder (2h -> h -> blocks -> 3).

inline constexpr int kDefaultBlocks = 4;
inline constexpr int kDefaultWidth = 32;

struct DiffusionNetParams {
  nn::Linear first;
  std::vector<DiffusionBlockParams> blocks;
  nn::Linear last;

  static DiffusionNetParams make(Eigen::Index in, Eigen::Index width, Eigen::Index out, int num_blocks,
                                 double init_time, bool zero_last, nn::Rng& rng) {
    DiffusionNetParams p;
    p.first = nn::Linear::make(in, width, rng);
    for (int b = 0; b < num_blocks; ++b) p.blocks.push_back(DiffusionBlockParams::make(width, init_time, rng));
    p.last = zero_last ? nn::Linear::zeros(width, out) : nn::Linear::make(width, out, rng);
    return p;
  }

  Eigen::Index in() const { return first.in(); }
  Eigen::Index out() const { return last.out(); }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    first.visit(nn::join(prefix, "first"), fn);
    for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].visit(nn::join(prefix, "block" + std::to_string(b)), fn);
    last.visit(nn::join(prefix, "last"), fn);
  }
};

struct DiffusionNetCache {
  Matrix input;
  std::vector<BlockCache> blocks;
  Matrix last_input;
};

inline Matrix diffusion_net_forward(const Matrix& X, const SurfaceOperators& ops, const DiffusionNetParams& p,
                                    DiffusionNetCache* cache = nullptr) {
  if (X.rows() != ops.num_vertices())
    throw_data("diffusion net: input has ", X.rows(), " vertices but the operators describe ", ops.num_vertices());
  Matrix H = p.first.forward(X);
  if (cache) {
    cache->input = X;
    cache->blocks.resize(p.blocks.size());
  }
  for (std::size_t b = 0; b < p.blocks.size(); ++b)
    H = block_forward(H, ops, p.blocks[b], cache ? &cache->blocks[b] : nullptr);
  if (cache) cache->last_input = H;
  return p.last.forward(H);
}

inline Matrix diffusion_net_backward(const Matrix& d_out, const SurfaceOperators& ops, const DiffusionNetParams& p,
                                     const DiffusionNetCache& cache, DiffusionNetParams& g) {
  Matrix dH = p.last.backward(cache.last_input, d_out, g.last);
  for (std::size_t b = p.blocks.size(); b-- > 0;) dH = block_backward(dH, ops, p.blocks[b], cache.blocks[b], g.blocks[b]);
  return p.first.backward(cache.input, dH, g.first);
}

// Per-vertex descriptors f = DN_e(m, P); the input features are raw positions.
inline Matrix dn_encode(const Mesh& neutral, const SurfaceOperators& ops, const DiffusionNetParams& encoder,
                        DiffusionNetCache* cache = nullptr) {
  if (neutral.num_vertices() != ops.num_vertices())
    throw_data("encode: mesh has ", neutral.num_vertices(), " vertices but the operators describe ", ops.num_vertices());
  return diffusion_net_forward(Matrix(neutral.vertices), ops, encoder, cache);
}

// Displacement field DN_d(F, P); callers add it to the neutral positions.
inline Matrix dn_decode(const Matrix& fused, const SurfaceOperators& ops, const DiffusionNetParams& decoder,
                        DiffusionNetCache* cache = nullptr) {
  if (fused.cols() != decoder.in()) throw_data("decode: fused features have ", fused.cols(), " columns, expected ", decoder.in());
  return diffusion_net_forward(fused, ops, decoder, cache);
}

}  // namespace scantalk
