#pragma once

// Supervised training: Adam over exact gradients, one sequence per step,
// with a seeded synthetic dataset harness and the on-disk manifest format.

#include "scantalk/losses.hpp"
#include "scantalk/metrics.hpp"
#include "scantalk/model.hpp"
#include "scantalk/shapes.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <random>

namespace scantalk {

struct TrainingSample {
  std::string id;
  Mesh neutral;
  Frames ground_truth;
  FeatureSequence features;
  VertexMask lip_mask;
  VertexMask upper_mask;
  double fps = 30.0;
};

inline void check_sample(const TrainingSample& s) {
  const auto fail = [&](auto&&... msg) { throw_data("sample '", s.id, "': ", msg...); };
  try {
    check_mesh(s.neutral, "neutral");
    check_features(s.features);
  } catch (const DataError& e) {
    fail(e.what());
  }
  if (s.ground_truth.empty()) fail("empty ground-truth sequence");
  for (std::size_t j = 0; j < s.ground_truth.size(); ++j) {
    if (s.ground_truth[j].rows() != s.neutral.num_vertices())
      fail("ground-truth frame ", j, " has ", s.ground_truth[j].rows(), " vertices, neutral has ", s.neutral.num_vertices());
    if (!s.ground_truth[j].allFinite()) fail("ground-truth frame ", j, " is not finite");
  }
  for (const auto* m : {&s.lip_mask, &s.upper_mask}) {
    if (m->indices.empty()) fail("empty mask");
    for (int k : m->indices)
      if (k < 0 || k >= s.neutral.num_vertices()) fail("mask index ", k, " out of range");
  }
}

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  LossWeights weights;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;  // <= 0 disables clipping
  double validation_fraction = 0.1;
  int spectral_modes = kDefaultSpectralModes;  // clipped to V-1 per mesh
  int threads = 1;
  ModelConfig model;
};

inline void check_config(const TrainConfig& c) {
  if (c.epochs < 1) throw UsageError("epochs must be >= 1");
  if (!(c.learning_rate > 0)) throw UsageError("learning rate must be > 0");
  if (!(c.weights.mse > 0) || c.weights.mask < 0 || c.weights.velocity < 0)
    throw UsageError("loss weights must be >= 0 with a positive MSE weight");
  if (c.validation_fraction < 0 || c.validation_fraction >= 1) throw UsageError("validation fraction must lie in [0, 1)");
  c.model.check();
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  ModelParams first_moment;
  ModelParams second_moment;
  long step = 0;

  static AdamState for_params(const ModelParams& p) { return {nn::zeros_like(p), nn::zeros_like(p), 0}; }
};

inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, const TrainConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto p = nn::tensors(params);
  auto g = nn::tensors(grads);
  auto m = nn::tensors(state.first_moment);
  auto v = nn::tensors(state.second_moment);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& mi = *m[i].tensor;
    auto& vi = *v[i].tensor;
    const auto& gi = *g[i].tensor;
    mi = cfg.beta1 * mi + (1.0 - cfg.beta1) * gi;
    vi = cfg.beta2 * vi + (1.0 - cfg.beta2) * gi.cwiseAbs2();
    p[i].tensor->array() -= cfg.learning_rate * (mi.array() / bc1) / ((vi.array() / bc2).sqrt() + cfg.epsilon);
  }
}

// Scales grads so their global L2 norm is at most max_norm. Returns the pre-clip norm.
inline double clip_gradients(ModelParams& grads, double max_norm) {
  const double norm = std::sqrt(nn::squared_norm(grads));
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& t : nn::tensors(grads)) *t.tensor *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------

// A sample with its operators and frame-aligned features.
struct PreparedSample {
  const TrainingSample* sample = nullptr;
  std::shared_ptr<const SurfaceOperators> ops;
  FeatureSequence features;
};

inline PreparedSample prepare_sample(const TrainingSample& s, int spectral_modes) {
  check_sample(s);
  PreparedSample p;
  p.sample = &s;
  const auto V = s.neutral.num_vertices();
  const auto k = std::min<Eigen::Index>(spectral_modes, std::max<Eigen::Index>(1, V - 1));
  p.ops = std::make_shared<SurfaceOperators>(compute_operators(s.neutral, k));
  const auto T = static_cast<Eigen::Index>(s.ground_truth.size());
  p.features = s.features.frames() == T ? s.features : resample_features(s.features, T);
  return p;
}

inline Frames predict_frames(const PreparedSample& s, const ModelParams& p, int threads) {
  return animate(s.sample->neutral, *s.ops, s.features, p, {threads}).frames;
}

// Loss and exact gradients for one sequence.
inline std::pair<LossTerms, ModelParams> loss_and_gradients(const PreparedSample& s, const ModelParams& p,
                                                            const LossWeights& w, int threads = 1) {
  const Frames pred = predict_frames(s, p, threads);
  Frames d_pred;
  const auto loss = weighted_loss(pred, s.sample->ground_truth, &s.sample->lip_mask, w, &d_pred);
  std::vector<Matrix> d_frames(d_pred.begin(), d_pred.end());
  auto grads = model_backward(s.sample->neutral, *s.ops, s.features, p, d_frames, threads);
  return {loss, std::move(grads)};
}

struct EpochRecord {
  int epoch = 0;
  double train_mse = 0;
  double val_mse = 0;
  double train_loss = 0;
};

struct TrainResult {
  ModelParams last;
  ModelParams best;
  int best_epoch = 0;
  std::vector<EpochRecord> curve;
  std::vector<std::string> train_ids;
  std::vector<std::string> validation_ids;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

inline double mean_mse(const std::vector<const PreparedSample*>& set, const ModelParams& p, int threads) {
  double sum = 0;
  for (const auto* s : set) sum += loss_mse(predict_frames(*s, p, threads), s->sample->ground_truth);
  return set.empty() ? 0.0 : sum / static_cast<double>(set.size());
}

// Samples are ordered by id before the seeded split and shuffles, so the
// result does not depend on the order in which samples are supplied.
inline TrainResult train(const std::vector<TrainingSample>& samples, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  check_config(cfg);
  if (samples.empty()) throw DataError("train: empty manifest");
  std::vector<const TrainingSample*> ordered;
  for (const auto& s : samples) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->id < b->id; });
  for (std::size_t i = 1; i < ordered.size(); ++i)
    if (ordered[i]->id == ordered[i - 1]->id) throw_data("train: duplicate sample id '", ordered[i]->id, "'");

  std::vector<PreparedSample> prepared;
  for (const auto* s : ordered) {
    if (s->features.dim() != cfg.model.feature_dim)
      throw_data("sample '", s->id, "': features have dimension ", s->features.dim(), ", model expects ", cfg.model.feature_dim);
    prepared.push_back(prepare_sample(*s, cfg.spectral_modes));
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(prepared.size())));
  std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
  std::vector<const PreparedSample*> val_set;
  TrainResult result;
  for (auto i : train_idx) result.train_ids.push_back(prepared[i].sample->id);
  for (std::size_t i = order.size() - n_val; i < order.size(); ++i) {
    val_set.push_back(&prepared[order[i]]);
    result.validation_ids.push_back(prepared[order[i]].sample->id);
  }

  const double edge = mean_edge_length(prepared[train_idx.front()].sample->neutral);
  ModelParams params = init_model(cfg.model, edge * edge, cfg.seed);
  AdamState adam = AdamState::for_params(params);
  double best_score = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    for (auto i : train_idx) {
      auto [loss, grads] = loss_and_gradients(prepared[i], params, cfg.weights, cfg.threads);
      clip_gradients(grads, cfg.clip_norm);
      adam_step(params, grads, adam, cfg);
      rec.train_mse += loss.mse;
      rec.train_loss += loss.total;
    }
    rec.train_mse /= static_cast<double>(train_idx.size());
    rec.train_loss /= static_cast<double>(train_idx.size());
    rec.val_mse = val_set.empty() ? rec.train_mse : mean_mse(val_set, params, cfg.threads);
    result.curve.push_back(rec);
    if (rec.val_mse < best_score) {
      best_score = rec.val_mse;
      result.best = params;
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(rec);
  }
  result.last = std::move(params);
  return result;
}

inline void save_loss_curve(const std::vector<EpochRecord>& curve, const std::filesystem::path& path) {
  std::string s = "epoch,train_mse,val_mse,train_loss\n";
  for (const auto& r : curve) {
    s += std::to_string(r.epoch);
    for (double v : {r.train_mse, r.val_mse, r.train_loss}) {
      s += ',';
      detail::append_double(s, v);
    }
    s += '\n';
  }
  detail::write_text(path, s);
}

// ---------------------------------------------------------------------------
// Synthetic desk-scale dataset.
//
// Face proxies are smoothly deformed spheres. Ground-truth motion is confined
// to a low cap (the "lips"): disp(u, a) = w(u) (B a + C tanh(E a)), with
// B, C, E fixed for every dataset seed, so one model can fit all samples and
// any held-out sample drawn from the same construction.

struct SynthConfig {
  std::uint64_t seed = 0;
  int samples = 4;
  int frames = 24;
  int feature_dim = 8;
  double fps = 30.0;
  std::vector<int> subdivisions{2, 3};  // V = 162, 642
  double radius = 0.1;                  // m
  double amplitude = 0.004;             // m, typical lip displacement
};

struct SynthMotion {
  Eigen::Matrix<double, 3, Eigen::Dynamic> linear;
  Eigen::Matrix<double, 3, Eigen::Dynamic> nonlinear_out;
  Matrix nonlinear_in;

  static const SynthMotion& for_dim(int feature_dim) {
    static std::mutex mutex;
    static std::map<int, SynthMotion> cache;
    std::lock_guard lock(mutex);
    auto it = cache.find(feature_dim);
    if (it != cache.end()) return it->second;
    std::mt19937_64 rng(0x5ca17a1cULL);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    SynthMotion m;
    const int r = 4;
    m.linear.resize(3, feature_dim);
    m.nonlinear_out.resize(3, r);
    m.nonlinear_in.resize(r, feature_dim);
    for (int j = 0; j < feature_dim; ++j)
      for (int i = 0; i < 3; ++i) m.linear(i, j) = u(rng) / std::sqrt(static_cast<double>(feature_dim));
    for (int j = 0; j < r; ++j)
      for (int i = 0; i < 3; ++i) m.nonlinear_out(i, j) = 0.5 * u(rng);
    for (int j = 0; j < feature_dim; ++j)
      for (int i = 0; i < r; ++i) m.nonlinear_in(i, j) = 2.0 * u(rng) / std::sqrt(static_cast<double>(feature_dim));
    return cache.emplace(feature_dim, std::move(m)).first->second;
  }
};

// Motion weight in [0, 1]: 0 above u_z = -0.35, 1 below u_z = -0.85.
inline double lip_weight(const Eigen::Vector3d& unit_dir) {
  const double x = std::clamp((-unit_dir.z() - 0.35) / 0.5, 0.0, 1.0);
  return x * x * (3 - 2 * x);
}

inline Eigen::Vector3d synth_displacement(const Eigen::Vector3d& unit_dir, const Eigen::VectorXd& features, double amplitude) {
  const auto& m = SynthMotion::for_dim(static_cast<int>(features.size()));
  const Eigen::VectorXd hidden = (m.nonlinear_in * features).array().tanh().matrix();
  return amplitude * lip_weight(unit_dir) * (m.linear * features + m.nonlinear_out * hidden);
}

inline std::vector<TrainingSample> synth_dataset(const SynthConfig& cfg) {
  if (cfg.samples < 1 || cfg.frames < 1 || cfg.feature_dim < 1 || cfg.subdivisions.empty())
    throw UsageError("synth: samples, frames, feature dimension and subdivisions must be positive");
  std::vector<TrainingSample> out;
  for (int i = 0; i < cfg.samples; ++i) {
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(i) + 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int subdiv = cfg.subdivisions[static_cast<std::size_t>(i) % cfg.subdivisions.size()];
    const Mesh unit = shapes::icosphere(subdiv);
    const auto shape = shapes::RadialShape::random(rng(), cfg.radius);
    TrainingSample s;
    char id[32];
    std::snprintf(id, sizeof id, "s%03d", i);
    s.id = id;
    s.fps = cfg.fps;
    s.neutral = shape.apply(unit);

    // Smooth low-dimensional signals: two sinusoids per dimension, stored at f32 precision.
    s.features.source_rate = cfg.fps;
    s.features.data.resize(cfg.frames, cfg.feature_dim);
    for (int d = 0; d < cfg.feature_dim; ++d) {
      double f[2], ph[2], amp[2];
      for (int m = 0; m < 2; ++m) {
        f[m] = 0.5 + 2.5 * u(rng);
        ph[m] = 2 * std::numbers::pi * u(rng);
        amp[m] = 0.3 + 0.5 * u(rng);
      }
      for (int t = 0; t < cfg.frames; ++t) {
        const double time = t / cfg.fps;
        double v = 0;
        for (int m = 0; m < 2; ++m) v += amp[m] * std::sin(2 * std::numbers::pi * f[m] * time + ph[m]);
        s.features.data(t, d) = static_cast<double>(static_cast<float>(v));
      }
    }

    std::vector<int> lip, upper;
    for (Eigen::Index k = 0; k < unit.num_vertices(); ++k) {
      const double z = unit.vertices(k, 2);
      if (z < -0.6) lip.push_back(static_cast<int>(k));
      if (z > 0.5) upper.push_back(static_cast<int>(k));
    }
    s.lip_mask = make_mask(lip, MaskLabel::lip, unit.num_vertices());
    s.upper_mask = make_mask(upper, MaskLabel::upper_face, unit.num_vertices());

    for (int t = 0; t < cfg.frames; ++t) {
      Vertices frame = s.neutral.vertices;
      const Eigen::VectorXd a = s.features.data.row(t).transpose();
      for (Eigen::Index k = 0; k < unit.num_vertices(); ++k)
        frame.row(k) += synth_displacement(unit.vertices.row(k).transpose(), a, cfg.amplitude).transpose();
      s.ground_truth.push_back(std::move(frame));
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest: INI sections "[sample.<id>]" with paths relative to the manifest.

inline void write_dataset(const std::vector<TrainingSample>& samples, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::string manifest = "# scantalk training manifest\n";
  for (const auto& s : samples) {
    const fs::path sd = dir / s.id;
    fs::create_directories(sd);
    save_mesh(s.neutral, sd / "neutral.obj");
    save_sequence({s.ground_truth, s.neutral.faces}, sd / "gt");
    save_features(s.features, sd / "features.stfx");
    save_mask(s.lip_mask, sd / "lip.txt");
    save_mask(s.upper_mask, sd / "upper.txt");
    manifest += "\n[sample." + s.id + "]\nneutral = " + s.id + "/neutral.obj\nsequence = " + s.id +
                "/gt\nfeatures = " + s.id + "/features.stfx\nlip_mask = " + s.id + "/lip.txt\nupper_mask = " + s.id +
                "/upper.txt\nfps = ";
    detail::append_double(manifest, s.fps);
    manifest += "\n";
  }
  detail::write_text(dir / "manifest.ini", manifest);
}

inline std::vector<TrainingSample> load_manifest(const std::filesystem::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw_data(path.string(), ": ", e.message(), " (line ", e.line(), ")");
  }
  const auto base = path.parent_path();
  std::vector<TrainingSample> out;
  for (const auto& [section, body] : tree) {
    if (!section.starts_with("sample.")) continue;
    TrainingSample s;
    s.id = section.substr(7);
    try {
      const auto get = [&](const char* key) {
        auto v = body.get_optional<std::string>(key);
        if (!v) throw_data("missing key '", key, "'");
        return base / *v;
      };
      s.neutral = load_mesh(get("neutral"));
      auto seq = load_sequence(get("sequence"));
      if (seq.faces.rows() != s.neutral.faces.rows() || seq.faces != s.neutral.faces)
        throw_data("ground-truth topology differs from the neutral mesh");
      s.ground_truth = std::move(seq.frames);
      s.features = load_features(get("features"));
      s.lip_mask = load_mask(get("lip_mask"), MaskLabel::lip, s.neutral.num_vertices());
      s.upper_mask = load_mask(get("upper_mask"), MaskLabel::upper_face, s.neutral.num_vertices());
      s.fps = body.get<double>("fps", 30.0);
    } catch (const DataError& e) {
      throw_data(path.string(), ": sample '", s.id, "': ", e.what());
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw_data(path.string(), ": empty manifest");
  return out;
}

}  // namespace scantalk
