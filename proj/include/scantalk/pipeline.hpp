#pragma once

// File-level pipeline pieces shared by the CLI: configuration files, run
// manifests and cached end-to-end animation.

#include "scantalk/training.hpp"

#include <boost/property_tree/ini_parser.hpp>

#include <chrono>
#include <filesystem>
#include <set>

namespace scantalk {

// ---------------------------------------------------------------------------
// Configuration: INI sections [model], [operators], [train], [loss].

inline void apply_config_file(const std::filesystem::path& path, TrainConfig& cfg) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw_data(path.string(), ": ", e.message(), " (line ", e.line(), ")");
  }
  const std::map<std::string, std::set<std::string>> known{
      {"model", {"width", "blocks", "feature_dim", "recurrent_layers", "recurrent_hidden", "cell"}},
      {"operators", {"k"}},
      {"train", {"epochs", "learning_rate", "beta1", "beta2", "epsilon", "seed", "clip_norm", "validation_fraction", "threads"}},
      {"loss", {"mse", "mask", "velocity"}},
  };
  for (const auto& [section, body] : tree) {
    auto it = known.find(section);
    if (it == known.end()) throw_data(path.string(), ": unknown section [", section, "]");
    for (const auto& [key, value] : body)
      if (!it->second.contains(key)) throw_data(path.string(), ": unknown key '", key, "' in [", section, "]");
  }
  // get(path, default) would fall back silently on unparseable values.
  const auto read = [&](const char* key, auto& field) {
    if (tree.get_child_optional(key)) field = tree.get<std::remove_reference_t<decltype(field)>>(key);
  };
  try {
    auto& m = cfg.model;
    read("model.width", m.width);
    read("model.blocks", m.blocks);
    read("model.feature_dim", m.feature_dim);
    read("model.recurrent_layers", m.recurrent_layers);
    read("model.recurrent_hidden", m.recurrent_hidden);
    if (auto cell = tree.get_optional<std::string>("model.cell")) m.cell = parse_cell(*cell);
    read("operators.k", cfg.spectral_modes);
    m.spectral_modes = cfg.spectral_modes;
    read("train.epochs", cfg.epochs);
    read("train.learning_rate", cfg.learning_rate);
    read("train.beta1", cfg.beta1);
    read("train.beta2", cfg.beta2);
    read("train.epsilon", cfg.epsilon);
    read("train.seed", cfg.seed);
    read("train.clip_norm", cfg.clip_norm);
    read("train.validation_fraction", cfg.validation_fraction);
    read("train.threads", cfg.threads);
    read("loss.mse", cfg.weights.mse);
    read("loss.mask", cfg.weights.mask);
    read("loss.velocity", cfg.weights.velocity);
  } catch (const pt::ptree_bad_data& e) {
    throw_data(path.string(), ": bad value: ", e.what());
  }
}

// ---------------------------------------------------------------------------
// Run manifest: "key: value" lines in insertion order.

class RunManifest {
 public:
  RunManifest& set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_)
      if (k == key) {
        v = value;
        return *this;
      }
    entries_.emplace_back(key, value);
    return *this;
  }
  RunManifest& set(const std::string& key, double value) {
    std::string s;
    detail::append_double(s, value);
    return set(key, s);
  }
  RunManifest& set(const std::string& key, long long value) { return set(key, std::to_string(value)); }
  RunManifest& set(const std::string& key, int value) { return set(key, std::to_string(value)); }

  const std::string* get(const std::string& key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return &v;
    return nullptr;
  }

  std::string text() const {
    std::string s;
    for (const auto& [k, v] : entries_) s += k + ": " + v + "\n";
    return s;
  }
  void save(const std::filesystem::path& path) const { detail::write_text(path, text()); }

  static RunManifest load(const std::filesystem::path& path) {
    RunManifest m;
    const auto text = detail::read_file(path);
    detail::Lines lines(text);
    std::string_view line;
    while (lines.next(line)) {
      const auto colon = line.find(": ");
      if (colon == std::string_view::npos) continue;
      m.set(std::string(line.substr(0, colon)), std::string(line.substr(colon + 2)));
    }
    return m;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

inline Digest mesh_hash(const Mesh& m) { return Hasher().matrix(m.vertices).matrix(m.faces).finish(); }

// ---------------------------------------------------------------------------

enum class CacheStatus { hit, miss, stale };

inline std::string_view to_string(CacheStatus s) {
  switch (s) {
    case CacheStatus::hit: return "hit";
    case CacheStatus::miss: return "miss";
    case CacheStatus::stale: return "stale";
  }
  return "?";
}

// Loads operators from `cache` when it matches (mesh, k); otherwise computes
// and rewrites it. A vertex-count mismatch is an error, not a stale cache.
inline std::pair<SurfaceOperators, CacheStatus> operators_with_cache(const Mesh& mesh, Eigen::Index k,
                                                                     const std::filesystem::path& cache) {
  CacheStatus status = CacheStatus::miss;
  if (!cache.empty() && std::filesystem::exists(cache)) {
    try {
      return {cache_load(cache, mesh, k), CacheStatus::hit};
    } catch (const StaleCacheError&) {
      status = CacheStatus::stale;
    }
  }
  SurfaceOperators ops = compute_operators(mesh, k);
  if (!cache.empty()) cache_store(ops, operator_cache_key(mesh, k), cache);
  return {std::move(ops), status};
}

inline Eigen::Index operator_modes_for(const ModelParams& p, Eigen::Index V) {
  return std::max<Eigen::Index>(1, std::min<Eigen::Index>(p.config.spectral_modes, V - 1));
}

struct AnimateRunOptions {
  double fps = 30.0;
  std::filesystem::path cache;  // empty -> <out_dir>/operators.stop
  int threads = 1;
};

struct AnimateRunResult {
  AnimationSequence sequence;
  CacheStatus cache = CacheStatus::miss;
  RunManifest manifest;
};

inline AnimateRunResult animate_to_dir(const Mesh& neutral, const FeatureSequence& features, const ModelParams& params,
                                       const std::filesystem::path& out_dir, const AnimateRunOptions& opt = {}) {
  using clock = std::chrono::steady_clock;
  check_mesh(neutral, "neutral");
  check_features(features);
  std::filesystem::create_directories(out_dir);
  const auto cache = opt.cache.empty() ? out_dir / "operators.stop" : opt.cache;
  const auto k = operator_modes_for(params, neutral.num_vertices());

  const auto t0 = clock::now();
  auto [ops, status] = operators_with_cache(neutral, k, cache);
  const auto t1 = clock::now();
  const auto aligned = resample_features(features, target_frame_count(features, opt.fps));
  AnimateRunResult res;
  res.sequence = animate(neutral, ops, aligned, params, {opt.threads});
  const auto t2 = clock::now();
  save_sequence(res.sequence, out_dir);
  res.cache = status;

  auto& m = res.manifest;
  m.set("command", "animate");
  m.set("model_hash", to_hex(model_hash(params)));
  m.set("feature_hash", to_hex(feature_hash(features)));
  m.set("mesh_hash", to_hex(mesh_hash(neutral)));
  m.set("vertices", static_cast<long long>(neutral.num_vertices()));
  m.set("faces", static_cast<long long>(neutral.num_faces()));
  m.set("k", static_cast<long long>(k));
  m.set("frames", static_cast<long long>(res.sequence.num_frames()));
  m.set("fps", opt.fps);
  m.set("cell", std::string(to_string(params.config.cell)));
  m.set("width", params.config.width);
  m.set("threads", opt.threads);
  m.set("cache", std::string(to_string(status)));
  m.set("operators_seconds", std::chrono::duration<double>(t1 - t0).count());
  m.set("inference_seconds", std::chrono::duration<double>(t2 - t1).count());
  m.save(out_dir / "run_manifest.txt");
  return res;
}

}  // namespace scantalk
