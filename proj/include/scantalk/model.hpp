#pragma once

// The end-to-end model: mesh encoder, audio stream (projection + stacked
// bidirectional recurrence), fusion and displacement decoder.
//
//   f   = DN_e(m, P)                 V x h
//   a   = project(features)          T x h/2
//   v   = recurrent(a)               T x h
//   F_j = [f, v_j] (row-broadcast)   V x 2h
//   m_j = DN_d(F_j, P) + m           V x 3

#include "scantalk/audio.hpp"
#include "scantalk/diffusion.hpp"
#include "scantalk/mesh.hpp"
#include "scantalk/recurrent.hpp"

#include <filesystem>
#include <fstream>

namespace scantalk {

struct ModelConfig {
  int width = kDefaultWidth;            // h
  int blocks = kDefaultBlocks;          // diffusion blocks per stack
  int feature_dim = 26;                 // D of the ingested features
  int recurrent_layers = kDefaultRecurrentLayers;
  int recurrent_hidden = 32;            // per direction
  CellType cell = CellType::lstm;
  int spectral_modes = kDefaultSpectralModes;  // k (echoed; operators carry their own)

  void check() const {
    if (width < 2 || width % 2) throw UsageError("model width must be an even number >= 2");
    if (blocks < 0 || feature_dim < 1 || recurrent_layers < 1 || recurrent_hidden < 1 || spectral_modes < 1)
      throw UsageError("model configuration has a non-positive size");
  }
};

struct ModelParams {
  ModelConfig config;
  DiffusionNetParams encoder;
  DiffusionNetParams decoder;
  nn::Linear audio_projection;  // D -> h/2
  RecurrentParams recurrent;    // h/2 -> 2*hidden -> h

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    encoder.visit(nn::join(prefix, "encoder"), fn);
    decoder.visit(nn::join(prefix, "decoder"), fn);
    audio_projection.visit(nn::join(prefix, "audio_projection"), fn);
    recurrent.visit(nn::join(prefix, "recurrent"), fn);
  }
};

// init_time: initial diffusion time, typically (mean edge length)^2 of the
// training meshes so step zero performs local smoothing.
inline ModelParams init_model(const ModelConfig& cfg, double init_time, std::uint64_t seed) {
  cfg.check();
  nn::Rng rng(seed);
  ModelParams p;
  p.config = cfg;
  const Eigen::Index h = cfg.width;
  p.encoder = DiffusionNetParams::make(3, h, h, cfg.blocks, init_time, false, rng);
  p.decoder = DiffusionNetParams::make(2 * h, h, 3, cfg.blocks, init_time, true, rng);
  p.audio_projection = nn::Linear::make(cfg.feature_dim, h / 2, rng);
  p.recurrent = RecurrentParams::make(h / 2, cfg.recurrent_hidden, h, cfg.recurrent_layers, cfg.cell, rng);
  return p;
}

// ---------------------------------------------------------------------------

// Row k of the result is [f_k, v].
inline Matrix fuse(const Matrix& descriptors, const Eigen::RowVectorXd& audio_latent) {
  Matrix F(descriptors.rows(), descriptors.cols() + audio_latent.size());
  F.leftCols(descriptors.cols()) = descriptors;
  F.rightCols(audio_latent.size()).rowwise() = audio_latent;
  return F;
}

inline void check_fusion_dims(const ModelParams& p, Eigen::Index descriptor_dim, Eigen::Index latent_dim) {
  if (descriptor_dim + latent_dim != p.decoder.in())
    throw_data("fuse: ", descriptor_dim, " + ", latent_dim, " columns do not match decoder input ", p.decoder.in());
}

struct AudioCache {
  Matrix features;
  Matrix projected;
  RecurrentCache recurrent;
};

// v = recurrent(project(features)), T x h
inline Matrix audio_latent(const FeatureSequence& features, const ModelParams& p, AudioCache* cache = nullptr) {
  if (features.dim() != p.audio_projection.in())
    throw_data("audio: features have dimension ", features.dim(), " but the model expects ", p.audio_projection.in());
  const Matrix a = p.audio_projection.forward(features.data);
  if (cache) {
    cache->features = features.data;
    cache->projected = a;
  }
  return recurrent_forward(a, p.recurrent, cache ? &cache->recurrent : nullptr);
}

inline Matrix decode_frame(const Matrix& descriptors, const Eigen::RowVectorXd& latent, const SurfaceOperators& ops,
                           const ModelParams& p, DiffusionNetCache* cache = nullptr) {
  return dn_decode(fuse(descriptors, latent), ops, p.decoder, cache);
}

struct AnimateOptions {
  int threads = 1;
};

// One encoder pass and one audio pass per sequence; frames decode independently.
inline AnimationSequence animate(const Mesh& neutral, const SurfaceOperators& ops, const FeatureSequence& features,
                                 const ModelParams& p, const AnimateOptions& opt = {}) {
  if (neutral.num_vertices() != ops.num_vertices())
    throw_data("animate: mesh has ", neutral.num_vertices(), " vertices but the operators describe ", ops.num_vertices());
  check_features(features);
  const Matrix f = dn_encode(neutral, ops, p.encoder);
  const Matrix v = audio_latent(features, p);
  check_fusion_dims(p, f.cols(), v.cols());
  AnimationSequence seq;
  seq.faces = neutral.faces;
  seq.frames.resize(static_cast<std::size_t>(v.rows()));
  parallel_for(seq.frames.size(), opt.threads, [&](std::size_t j) {
    Vertices frame = decode_frame(f, v.row(static_cast<Eigen::Index>(j)), ops, p);
    frame += neutral.vertices;
    if (!frame.allFinite()) throw_numerical("animate: non-finite output at frame ", j);
    seq.frames[j] = std::move(frame);
  });
  return seq;
}

// ---------------------------------------------------------------------------
// Reverse mode through the whole model.

// Given dL/d(frame_j) for every frame, returns exact parameter gradients.
// Decoder activations are recomputed per frame rather than stored for all T.
inline ModelParams model_backward(const Mesh& neutral, const SurfaceOperators& ops, const FeatureSequence& features,
                                  const ModelParams& p, const std::vector<Matrix>& d_frames, int threads = 1) {
  ModelParams g = nn::zeros_like(p);
  DiffusionNetCache enc_cache;
  const Matrix f = dn_encode(neutral, ops, p.encoder, &enc_cache);
  AudioCache audio_cache;
  const Matrix v = audio_latent(features, p, &audio_cache);
  const auto T = static_cast<std::size_t>(v.rows());
  if (d_frames.size() != T) throw_data("backward: ", d_frames.size(), " frame gradients for ", T, " frames");
  const Eigen::Index h = f.cols();

  std::vector<DiffusionNetParams> dec_grads(T);
  std::vector<Matrix> d_fused(T);
  parallel_for(T, threads, [&](std::size_t j) {
    DiffusionNetCache cache;
    decode_frame(f, v.row(static_cast<Eigen::Index>(j)), ops, p, &cache);
    dec_grads[j] = nn::zeros_like(p.decoder);
    d_fused[j] = diffusion_net_backward(d_frames[j], ops, p.decoder, cache, dec_grads[j]);
  });
  Matrix df = Matrix::Zero(f.rows(), h);
  Matrix dv(static_cast<Eigen::Index>(T), v.cols());
  for (std::size_t j = 0; j < T; ++j) {  // fixed reduction order
    nn::axpy(g.decoder, dec_grads[j]);
    df += d_fused[j].leftCols(h);
    dv.row(static_cast<Eigen::Index>(j)) = d_fused[j].rightCols(v.cols()).colwise().sum();
  }
  diffusion_net_backward(df, ops, p.encoder, enc_cache, g.encoder);
  const Matrix da = recurrent_backward(dv, p.recurrent, audio_cache.recurrent, g.recurrent);
  p.audio_projection.backward(audio_cache.features, da, g.audio_projection);
  for (const auto& t : nn::tensors(g))
    if (!t.tensor->allFinite()) throw_numerical("backward: non-finite gradient for ", t.name);
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoints ("STPM"): config echo + named tensor table. See docs/formats.md.

inline constexpr std::uint32_t kCheckpointVersion = 1;
enum class TensorDtype : std::uint32_t { f32 = 0, f64 = 1 };

inline void write_checkpoint(std::ostream& os, const ModelParams& p, TensorDtype dtype = TensorDtype::f64) {
  BinaryWriter w(os);
  w.magic("STPM");
  w.u32(kCheckpointVersion);
  const auto& c = p.config;
  for (int v : {c.width, c.blocks, c.feature_dim, c.recurrent_layers, c.recurrent_hidden, static_cast<int>(c.cell),
                c.spectral_modes})
    w.u32(static_cast<std::uint32_t>(v));
  const auto ts = nn::tensors(p);
  w.u32(static_cast<std::uint32_t>(ts.size()));
  for (const auto& t : ts) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.tensor->rows()));
    w.u32(static_cast<std::uint32_t>(t.tensor->cols()));
    w.u32(static_cast<std::uint32_t>(dtype));
    for (Eigen::Index i = 0; i < t.tensor->rows(); ++i)
      for (Eigen::Index j = 0; j < t.tensor->cols(); ++j) {
        if (dtype == TensorDtype::f64)
          w.f64((*t.tensor)(i, j));
        else
          w.f32(static_cast<float>((*t.tensor)(i, j)));
      }
  }
}

inline ModelParams read_checkpoint(std::istream& is, const std::string& what) {
  BinaryReader r(is, what);
  r.expect_magic("STPM");
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw_data(what, ": version mismatch (file ", v, ", expected ", kCheckpointVersion, ")");
  ModelConfig c;
  c.width = static_cast<int>(r.u32());
  c.blocks = static_cast<int>(r.u32());
  c.feature_dim = static_cast<int>(r.u32());
  c.recurrent_layers = static_cast<int>(r.u32());
  c.recurrent_hidden = static_cast<int>(r.u32());
  const auto cell = r.u32();
  if (cell > 1) throw_data(what, ": unknown cell type ", cell);
  c.cell = static_cast<CellType>(cell);
  c.spectral_modes = static_cast<int>(r.u32());
  try {
    c.check();
  } catch (const UsageError& e) {
    throw_data(what, ": ", e.what());
  }
  ModelParams p = init_model(c, 0.0, 0);
  auto ts = nn::tensors(p);
  const auto count = r.u32();
  if (count != ts.size()) throw_data(what, ": ", count, " tensors, expected ", ts.size());
  for (auto& t : ts) {
    const auto name = r.str();
    if (name != t.name) throw_data(what, ": tensor '", name, "' where '", t.name, "' was expected");
    const Eigen::Index rows = r.u32(), cols = r.u32();
    if (rows != t.tensor->rows() || cols != t.tensor->cols())
      throw_data(what, ": tensor '", name, "' has shape ", rows, "x", cols, ", expected ", t.tensor->rows(), "x",
                 t.tensor->cols());
    const auto dtype = r.u32();
    if (dtype > 1) throw_data(what, ": tensor '", name, "' has unknown dtype ", dtype);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        const double v = dtype == 1 ? r.f64() : static_cast<double>(r.f32());
        if (!std::isfinite(v)) throw_data(what, ": non-finite value in tensor '", name, "'");
        (*t.tensor)(i, j) = v;
      }
  }
  if (!r.at_end()) throw_data(what, ": trailing data after tensor table");
  return p;
}

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path, TensorDtype dtype = TensorDtype::f64) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_data(path.string(), ": cannot open for writing");
  write_checkpoint(os, p, dtype);
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_data(path.string(), ": cannot open");
  return read_checkpoint(is, path.string());
}

inline Digest model_hash(const ModelParams& p) {
  std::ostringstream os;
  write_checkpoint(os, p);
  return hash_bytes(os.str());
}

inline Digest feature_hash(const FeatureSequence& f) {
  Hasher h;
  h.value(f.source_rate).matrix(f.data);
  return h.finish();
}

}  // namespace scantalk
