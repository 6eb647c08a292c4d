#pragma once

// Command-line front end. run() is the whole program; main() only forwards
// to it so tests can drive every subcommand in-process.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include "scantalk/pipeline.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>

namespace scantalk::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct OpsArgs {
  std::string mesh, out;
  int k = 0;
};
struct ExtractArgs {
  std::string wav, out;
  double window_ms = 25.0, hop_ms = 10.0;
};
struct TrainArgs {
  std::string manifest, config, out_dir;
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> cell;
};
struct AnimateArgs {
  std::string model, neutral, features, out_dir, ops;
  double fps = 30.0;
};
struct EvalArgs {
  std::string pred_dir, gt_dir, neutral, lip_mask, upper_mask, report;
};
struct HeatmapArgs {
  std::string seq_dir, out;
};
struct SynthArgs {
  std::uint64_t seed = 0;
  int n = 4, frames = 24, feature_dim = 8;
  std::string out_dir;
};

namespace fs = std::filesystem;

inline std::string hex_of_file(const fs::path& p) { return to_hex(hash_bytes(detail::read_file(p))); }

inline void cmd_ops(const OpsArgs& a, int, std::ostream& out) {
  const Mesh mesh = load_mesh(a.mesh);
  const auto k = a.k > 0 ? static_cast<Eigen::Index>(a.k) : default_spectral_modes(mesh.num_vertices());
  const auto t0 = std::chrono::steady_clock::now();
  const auto ops = compute_operators(mesh, k);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto key = operator_cache_key(mesh, k);
  cache_store(ops, key, a.out);
  const auto diag = validate_mesh(mesh);
  RunManifest m;
  m.set("command", "ops").set("mesh", a.mesh).set("mesh_hash", to_hex(mesh_hash(mesh)));
  m.set("vertices", static_cast<long long>(mesh.num_vertices())).set("faces", static_cast<long long>(mesh.num_faces()));
  m.set("k", static_cast<long long>(k)).set("cache_key", to_hex(key));
  m.set("boundary_edges", static_cast<long long>(diag.boundary_edges));
  m.set("components", static_cast<long long>(diag.connected_components));
  m.set("rank_deficient_vertices", ops.rank_deficient_vertices);
  m.set("lambda_min", ops.eigenvalues[0]).set("lambda_max", ops.eigenvalues[ops.k() - 1]);
  m.set("seconds", secs);
  m.save(a.out + ".manifest.txt");
  out << m.text();
}

inline void cmd_extract(const ExtractArgs& a, std::ostream& out) {
  const auto audio = load_wav(a.wav);
  MfccConfig cfg;
  cfg.window_ms = a.window_ms;
  cfg.hop_ms = a.hop_ms;
  const auto f = mfcc_extract(audio, cfg);
  save_features(f, a.out);
  RunManifest m;
  m.set("command", "extract").set("wav", a.wav).set("wav_hash", hex_of_file(a.wav));
  m.set("sample_rate", audio.sample_rate).set("window_ms", a.window_ms).set("hop_ms", a.hop_ms);
  m.set("frames", static_cast<long long>(f.frames())).set("dim", static_cast<long long>(f.dim()));
  m.set("source_rate", f.source_rate).set("feature_hash", to_hex(feature_hash(f)));
  m.save(a.out + ".manifest.txt");
  out << m.text();
}

inline void cmd_train(const TrainArgs& a, int threads, std::ostream& out) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const auto samples = load_manifest(a.manifest);
  TrainConfig cfg;
  cfg.model.feature_dim = 0;  // inferred from the data unless configured
  if (!a.config.empty()) apply_config_file(a.config, cfg);
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.learning_rate) cfg.learning_rate = *a.learning_rate;
  if (a.seed) cfg.seed = *a.seed;
  if (a.cell) cfg.model.cell = parse_cell(*a.cell);
  cfg.threads = threads;
  if (cfg.model.feature_dim == 0) cfg.model.feature_dim = static_cast<int>(samples.front().features.dim());
  cfg.model.spectral_modes = cfg.spectral_modes;

  const auto result = train(samples, cfg, [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << " train_mse " << r.train_mse << " val_mse " << r.val_mse << "\n";
  });
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  save_checkpoint(result.best, dir / "best.stpm");
  save_checkpoint(result.last, dir / "last.stpm");
  save_loss_curve(result.curve, dir / "loss.csv");

  RunManifest m;
  m.set("command", "train").set("manifest", a.manifest).set("manifest_hash", hex_of_file(a.manifest));
  if (!a.config.empty()) m.set("config", a.config).set("config_hash", hex_of_file(a.config));
  m.set("samples", static_cast<long long>(samples.size()));
  m.set("epochs", cfg.epochs).set("learning_rate", cfg.learning_rate).set("seed", static_cast<long long>(cfg.seed));
  m.set("loss_mse", cfg.weights.mse).set("loss_mask", cfg.weights.mask).set("loss_velocity", cfg.weights.velocity);
  m.set("width", cfg.model.width).set("blocks", cfg.model.blocks).set("feature_dim", cfg.model.feature_dim);
  m.set("recurrent_layers", cfg.model.recurrent_layers).set("recurrent_hidden", cfg.model.recurrent_hidden);
  m.set("cell", std::string(to_string(cfg.model.cell))).set("k", cfg.spectral_modes).set("threads", threads);
  std::string ids;
  for (const auto& id : result.validation_ids) ids += (ids.empty() ? "" : ",") + id;
  m.set("validation_ids", ids.empty() ? "-" : ids);
  m.set("best_epoch", result.best_epoch);
  m.set("final_train_mse", result.curve.back().train_mse).set("final_val_mse", result.curve.back().val_mse);
  m.set("best_model_hash", to_hex(model_hash(result.best))).set("last_model_hash", to_hex(model_hash(result.last)));
  m.set("seconds", std::chrono::duration<double>(clock::now() - t0).count());
  m.save(dir / "run_manifest.txt");
}

inline void cmd_animate(const AnimateArgs& a, int threads, std::ostream& out) {
  const auto params = load_checkpoint(a.model);
  const auto neutral = load_mesh(a.neutral);
  const auto features = load_features(a.features);
  AnimateRunOptions opt;
  opt.fps = a.fps;
  opt.cache = a.ops;
  opt.threads = threads;
  auto res = animate_to_dir(neutral, features, params, a.out_dir, opt);
  out << res.manifest.text();
}

inline void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto pred = load_sequence(a.pred_dir);
  const auto gt = load_sequence(a.gt_dir);
  const auto neutral = load_mesh(a.neutral);
  if (pred.frames.size() != gt.frames.size())
    throw_data("eval: ", pred.frames.size(), " predicted frames vs ", gt.frames.size(), " ground-truth frames");
  if (pred.frames.front().rows() != neutral.num_vertices() || gt.frames.front().rows() != neutral.num_vertices())
    throw_data("eval: vertex counts differ (pred ", pred.frames.front().rows(), ", gt ", gt.frames.front().rows(),
               ", neutral ", neutral.num_vertices(), ")");
  const auto lip = load_mask(a.lip_mask, MaskLabel::lip, neutral.num_vertices());
  const auto upper = load_mask(a.upper_mask, MaskLabel::upper_face, neutral.num_vertices());
  const auto r = evaluate(pred.frames, gt.frames, neutral.vertices, lip, upper);

  RunManifest m;
  m.set("command", "eval").set("pred_dir", a.pred_dir).set("gt_dir", a.gt_dir);
  Hasher hp, hg;
  for (const auto& f : pred.frames) hp.matrix(f);
  for (const auto& f : gt.frames) hg.matrix(f);
  m.set("pred_hash", to_hex(hp.finish())).set("gt_hash", to_hex(hg.finish()));
  m.set("frames", static_cast<long long>(pred.frames.size())).set("vertices", static_cast<long long>(neutral.num_vertices()));
  m.set("lve", r.lve).set("lve_x1e5", r.lve * 1e5);
  m.set("mve", r.mve).set("mve_x1e3", r.mve * 1e3);
  m.set("fdd", r.fdd).set("fdd_x1e7", r.fdd * 1e7);
  m.set("mse", r.mse);
  m.save(a.report);
  std::string csv = "frame,lve,mve\n";
  for (std::size_t j = 0; j < r.lve_per_frame.size(); ++j) {
    csv += std::to_string(j) + ',';
    detail::append_double(csv, r.lve_per_frame[j]);
    csv += ',';
    detail::append_double(csv, r.mve_per_frame[j]);
    csv += '\n';
  }
  detail::write_text(a.report + ".csv", csv);
  out << m.text();
}

inline void cmd_heatmap(const HeatmapArgs& a, std::ostream& out) {
  const auto seq = load_sequence(a.seq_dir);
  const Vector heat = motion_heatmap(seq.frames);
  save_scalar_field(heat, a.out + ".txt");
  save_colored_obj(Mesh{seq.frames.front(), seq.faces}, heat_colors(heat), a.out + ".obj");
  RunManifest m;
  m.set("command", "heatmap").set("seq_dir", a.seq_dir).set("frames", static_cast<long long>(seq.num_frames()));
  m.set("vertices", static_cast<long long>(heat.size())).set("max", heat.maxCoeff()).set("mean", heat.mean());
  m.save(a.out + ".manifest.txt");
  out << m.text();
}

inline void cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthConfig cfg;
  cfg.seed = a.seed;
  cfg.samples = a.n;
  cfg.frames = a.frames;
  cfg.feature_dim = a.feature_dim;
  const auto samples = synth_dataset(cfg);
  write_dataset(samples, a.out_dir);
  RunManifest m;
  m.set("command", "synth").set("seed", static_cast<long long>(a.seed)).set("samples", a.n);
  m.set("frames", a.frames).set("feature_dim", a.feature_dim);
  m.set("manifest_hash", hex_of_file(fs::path(a.out_dir) / "manifest.ini"));
  m.save(fs::path(a.out_dir) / "run_manifest.txt");
  out << m.text();
}

// ---------------------------------------------------------------------------

struct App {
  CLI::App app{"scantalk: speech-driven animation of arbitrary triangle meshes", "scantalk"};
  int threads = 1;
  OpsArgs ops;
  ExtractArgs extract;
  TrainArgs train;
  AnimateArgs animate;
  EvalArgs eval;
  HeatmapArgs heatmap;
  SynthArgs synth;
  std::map<std::string, CLI::App*> subs;

  App() {
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--threads", threads, "Worker threads (1 = bitwise-reproducible mode)")->default_val(1)->check(CLI::PositiveNumber);

    auto* s = subs["ops"] = app.add_subcommand("ops", "Compute the surface-operator cache for a mesh");
    s->add_option("--mesh", ops.mesh, "Input mesh (ASCII OBJ or PLY)")->required();
    s->add_option("--k", ops.k, "Number of eigenpairs (default: min(128, V-1))");
    s->add_option("--out", ops.out, "Output cache file (.stop)")->required();

    s = subs["extract"] = app.add_subcommand("extract", "Extract mel-cepstral features from a WAV file into STFX");
    s->add_option("--wav", extract.wav, "Input WAV (PCM 16-bit mono)")->required();
    s->add_option("--out", extract.out, "Output feature file (.stfx)")->required();
    s->add_option("--window-ms", extract.window_ms, "Analysis window length in ms")->default_val(25.0);
    s->add_option("--hop-ms", extract.hop_ms, "Hop between windows in ms")->default_val(10.0);

    s = subs["train"] = app.add_subcommand("train", "Train a model from a sample manifest");
    s->add_option("--manifest", train.manifest, "Training manifest (.ini)")->required();
    s->add_option("--config", train.config, "Configuration file (key = value with sections)");
    s->add_option("--out-dir", train.out_dir, "Output directory for checkpoints and logs")->required();
    s->add_option("--epochs", train.epochs, "Override [train] epochs");
    s->add_option("--lr", train.learning_rate, "Override [train] learning_rate");
    s->add_option("--seed", train.seed, "Override [train] seed");
    s->add_option("--cell", train.cell, "Override [model] cell (lstm|gru)");

    s = subs["animate"] = app.add_subcommand("animate", "Animate a neutral mesh from a feature file");
    s->add_option("--model", animate.model, "Model checkpoint (.stpm)")->required();
    s->add_option("--neutral", animate.neutral, "Neutral mesh (ASCII OBJ or PLY)")->required();
    s->add_option("--features", animate.features, "Audio features (.stfx)")->required();
    s->add_option("--fps", animate.fps, "Output frame rate")->default_val(30.0);
    s->add_option("--out-dir", animate.out_dir, "Output directory for frame_%04d.obj files")->required();
    s->add_option("--ops", animate.ops, "Operator cache to reuse (default: <out-dir>/operators.stop)");

    s = subs["eval"] = app.add_subcommand("eval", "Compute LVE/MVE/FDD between two sequences");
    s->add_option("--pred-dir", eval.pred_dir, "Predicted sequence directory")->required();
    s->add_option("--gt-dir", eval.gt_dir, "Ground-truth sequence directory")->required();
    s->add_option("--neutral", eval.neutral, "Neutral mesh")->required();
    s->add_option("--lip-mask", eval.lip_mask, "Lip vertex indices, one per line")->required();
    s->add_option("--upper-mask", eval.upper_mask, "Upper-face vertex indices, one per line")->required();
    s->add_option("--report", eval.report, "Report path (key: value text; per-frame CSV at <report>.csv)")->required();

    s = subs["heatmap"] = app.add_subcommand("heatmap", "Per-vertex motion heatmap of a sequence");
    s->add_option("--seq-dir", heatmap.seq_dir, "Sequence directory")->required();
    s->add_option("--out", heatmap.out, "Output stem: writes <out>.txt and colored <out>.obj")->required();

    s = subs["synth"] = app.add_subcommand("synth", "Generate a synthetic training dataset");
    s->add_option("--seed", synth.seed, "Dataset seed")->default_val(0);
    s->add_option("--n", synth.n, "Number of samples")->default_val(4)->check(CLI::PositiveNumber);
    s->add_option("--frames", synth.frames, "Frames per sample")->default_val(24)->check(CLI::PositiveNumber);
    s->add_option("--feature-dim", synth.feature_dim, "Feature dimension")->default_val(8)->check(CLI::PositiveNumber);
    s->add_option("--out-dir", synth.out_dir, "Output directory")->required();
  }
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  App a;
  try {
    a.app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help arrives as a parse error with exit code 0.
    std::string help = a.app.help();
    for (const auto& [name, sub] : a.subs)
      if (sub->parsed()) help = sub->help("scantalk");
    if (e.get_exit_code() == 0) {
      out << help;
      return kOk;
    }
    err << "error: " << e.what() << "\n\n" << help;
    return kUsage;
  }
  try {
    if (a.subs["ops"]->parsed()) cmd_ops(a.ops, a.threads, out);
    else if (a.subs["extract"]->parsed()) cmd_extract(a.extract, out);
    else if (a.subs["train"]->parsed()) cmd_train(a.train, a.threads, out);
    else if (a.subs["animate"]->parsed()) cmd_animate(a.animate, a.threads, out);
    else if (a.subs["eval"]->parsed()) cmd_eval(a.eval, out);
    else if (a.subs["heatmap"]->parsed()) cmd_heatmap(a.heatmap, out);
    else if (a.subs["synth"]->parsed()) cmd_synth(a.synth, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}

}  // namespace scantalk::cli
