#include "fixtures.hpp"

using namespace scantalk;
using namespace scantalk::testing;

namespace {

FeatureSequence features(Eigen::Index T, Eigen::Index D, std::uint64_t seed, double rate = 30) {
  FeatureSequence f;
  f.source_rate = rate;
  f.data = random_matrix(T, D, seed);
  return f;
}

ModelParams default_model(std::uint64_t seed = 1, int feature_dim = 8) {
  ModelConfig cfg;
  cfg.feature_dim = feature_dim;
  cfg.spectral_modes = 32;
  return init_model(cfg, 1e-4, seed);
}

}  // namespace

TEST(Fuse, Layout) {
  const Matrix f = random_matrix(7, 32, 1);
  const Eigen::RowVectorXd v = random_matrix(1, 32, 2);
  const Matrix F = fuse(f, v);
  EXPECT_EQ(F.cols(), 64);
  EXPECT_TRUE(F.leftCols(32) == f);
  for (Eigen::Index k = 0; k < 7; ++k) EXPECT_TRUE(F.row(k).tail(32) == v);
  const Matrix Z = fuse(Matrix::Zero(7, 32), v);
  for (Eigen::Index k = 0; k < 7; ++k) EXPECT_TRUE(Z.row(k).tail(32) == v);
  const Matrix W = fuse(f, Eigen::RowVectorXd::Zero(32));
  EXPECT_TRUE(W.rightCols(32).isZero(0.0));
}

TEST(Animate, FreshModelReturnsNeutral) {
  const Mesh m = shapes::RadialShape::random(1).apply(shapes::icosphere(2));
  const auto ops = compute_operators(m, 32);
  const auto seq = animate(m, ops, features(5, 8, 3), default_model());
  ASSERT_EQ(seq.num_frames(), 5u);
  for (const auto& f : seq.frames) EXPECT_TRUE(f == m.vertices);
  EXPECT_TRUE(seq.faces == m.faces);
}

TEST(Animate, SingleFrame) {
  const Mesh m = shapes::icosphere(1);
  const auto ops = compute_operators(m, 16);
  EXPECT_EQ(animate(m, ops, features(1, 8, 4), default_model()).num_frames(), 1u);
}

TEST(Animate, DisplacementIsDecoderOutput) {
  const auto s = toy_sample(3, 4);
  const auto p = toy_model(CellType::lstm, 2);
  const auto seq = animate(s.mesh, s.ops, s.features, p);
  const Matrix f = dn_encode(s.mesh, s.ops, p.encoder);
  const Matrix v = audio_latent(s.features, p);
  for (Eigen::Index j = 0; j < v.rows(); ++j) {
    const Matrix d = dn_decode(fuse(f, v.row(j)), s.ops, p.decoder);
    EXPECT_LE((seq.frames[static_cast<std::size_t>(j)] - s.mesh.vertices - d).cwiseAbs().maxCoeff(), 1e-7);
  }
}

TEST(Animate, TopologiesOfOneShape) {
  const auto shape = shapes::RadialShape::random(5);
  const Mesh a = shape.apply(shapes::icosphere(2));
  const Mesh b = shape.apply(shapes::uv_sphere(9, 16));
  const Mesh c = shape.apply(shapes::cut_cap(shapes::icosphere(2), Eigen::Vector3d(0, -1, -0.3), 0.9));
  auto p = default_model(7);
  p.decoder.last.weight = random_matrix(32, 3, 9, -1e-3, 1e-3);
  const auto feat = features(6, 8, 10);
  for (const Mesh* m : {&a, &b, &c}) {
    const auto ops = compute_operators(*m, 32);
    const auto seq = animate(*m, ops, feat, p);
    EXPECT_EQ(seq.num_frames(), 6u);
    EXPECT_TRUE(seq.faces == m->faces);
    for (const auto& f : seq.frames) {
      EXPECT_EQ(f.rows(), m->num_vertices());
      EXPECT_TRUE(f.allFinite());
    }
  }
}

TEST(Animate, RejectsMismatches) {
  const Mesh m = shapes::icosphere(1);
  const auto ops = compute_operators(m, 16);
  EXPECT_THROW(animate(shapes::icosahedron(), ops, features(3, 8, 1), default_model()), DataError);
  EXPECT_THROW(animate(m, ops, features(3, 5, 1), default_model()), DataError);
}

TEST(Animate, ThreadCountDoesNotChangeResults) {
  const auto s = toy_sample(4, 6);
  const auto p = toy_model(CellType::gru, 3);
  const auto one = animate(s.mesh, s.ops, s.features, p, {1});
  const auto four = animate(s.mesh, s.ops, s.features, p, {4});
  for (std::size_t j = 0; j < one.frames.size(); ++j) EXPECT_TRUE(one.frames[j] == four.frames[j]);
  const LossWeights w;
  Frames d;
  weighted_loss(one.frames, s.target, nullptr, w, &d);
  const std::vector<Matrix> dm(d.begin(), d.end());
  const auto g1 = model_backward(s.mesh, s.ops, s.features, p, dm, 1);
  const auto g4 = model_backward(s.mesh, s.ops, s.features, p, dm, 4);
  EXPECT_EQ(to_hex(model_hash(g1)), to_hex(model_hash(g4)));
}

TEST(Animate, PermutationEquivariance) {
  const Mesh m = shapes::RadialShape::random(6).apply(shapes::icosphere(2));
  const auto ops = compute_operators(m, 32);
  auto p = default_model(8);
  p.decoder.last.weight = random_matrix(32, 3, 11, -0.1, 0.1);
  const auto feat = features(3, 8, 12);
  const auto seq = animate(m, ops, feat, p);
  const auto perm = random_permutation(static_cast<int>(m.num_vertices()), 13);
  const Mesh pm = shapes::permute_vertices(m, perm);
  const auto pseq = animate(pm, compute_operators(pm, 32), feat, p);
  for (std::size_t j = 0; j < seq.frames.size(); ++j)
    EXPECT_LE((pseq.frames[j] - permute_rows(seq.frames[j], perm)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Backward, FullModelMatchesFiniteDifferences) {
  for (auto cell : {CellType::lstm, CellType::gru}) {
    const auto s = toy_sample(21);
    const auto p = toy_model(cell, 22);
    const LossWeights w{1.0, 0.5, 0.5};
    const auto g = full_model_gradient(s, p, w);
    const auto checks = finite_difference_check(p, g, [&](const ModelParams& q) { return full_model_loss(s, q, w); });
    EXPECT_EQ(checks.size(), nn::tensors(p).size());
    for (const auto& c : checks) {
      EXPECT_LT(c.rel_error, 1e-4) << to_string(cell) << " " << c.name;
      EXPECT_GT(c.analytic_norm, 0.0) << c.name;
    }
  }
}

TEST(Backward, StationaryAtExactFit) {
  const auto s = toy_sample(30);
  auto p = toy_model(CellType::lstm, 31);
  ToySample exact = s;
  exact.target = animate(s.mesh, s.ops, s.features, p).frames;
  const auto g = full_model_gradient(exact, p, {1.0, 1.0, 1.0});
  EXPECT_LT(std::sqrt(nn::squared_norm(g)), 1e-10);
}

TEST(Backward, LinearInLossWeight) {
  const auto s = toy_sample(40);
  const auto p = toy_model(CellType::gru, 41);
  const auto g1 = full_model_gradient(s, p, {1.0, 0.0, 0.0});
  const auto g2 = full_model_gradient(s, p, {2.0, 0.0, 0.0});
  auto diff = g2;
  nn::axpy(diff, g1, -2.0);
  EXPECT_LE(std::sqrt(nn::squared_norm(diff)), 1e-12 * std::sqrt(nn::squared_norm(g2)));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir;
  const auto p = toy_model(CellType::gru, 50);
  save_checkpoint(p, dir / "m.stpm");
  const auto q = load_checkpoint(dir / "m.stpm");
  EXPECT_EQ(q.config.width, 8);
  EXPECT_EQ(q.config.cell, CellType::gru);
  EXPECT_EQ(q.config.spectral_modes, 12);
  const auto a = nn::tensors(p);
  const auto b = nn::tensors(q);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_TRUE(*a[i].tensor == *b[i].tensor) << a[i].name;
  }
  save_checkpoint(q, dir / "n.stpm");
  EXPECT_EQ(read_binary(dir / "m.stpm"), read_binary(dir / "n.stpm"));
}

TEST(Checkpoint, F32TablesLoad) {
  TempDir dir;
  const auto p = toy_model(CellType::lstm, 51);
  save_checkpoint(p, dir / "m.stpm", TensorDtype::f32);
  const auto q = load_checkpoint(dir / "m.stpm");
  const auto a = nn::tensors(p);
  const auto b = nn::tensors(q);
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_TRUE(*b[i].tensor == a[i].tensor->cast<float>().cast<double>()) << a[i].name;
}

TEST(Checkpoint, CorruptFiles) {
  TempDir dir;
  save_checkpoint(toy_model(CellType::lstm, 52), dir / "m.stpm");
  const auto bytes = read_binary(dir / "m.stpm");
  write_file(dir / "t.stpm", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_checkpoint(dir / "t.stpm"), DataError);
  write_file(dir / "x.stpm", bytes + "junk");
  EXPECT_THROW(load_checkpoint(dir / "x.stpm"), DataError);
  std::string magic = bytes;
  magic[0] = 'Q';
  write_file(dir / "q.stpm", magic);
  EXPECT_THROW(load_checkpoint(dir / "q.stpm"), DataError);
}

TEST(AnimateToDir, FramesManifestAndCache) {
  TempDir dir;
  const Mesh m = shapes::icosphere(2);
  auto p = default_model(60);
  p.config.spectral_modes = 24;
  const auto feat = features(20, 8, 61, 60.0);  // 1/3 s
  AnimateRunOptions opt;
  opt.fps = 30;
  const auto first = animate_to_dir(m, feat, p, dir / "out", opt);
  EXPECT_EQ(first.cache, CacheStatus::miss);
  EXPECT_EQ(first.sequence.num_frames(), 10u);
  for (std::size_t j = 0; j < 10; ++j) EXPECT_TRUE(std::filesystem::exists(dir / "out" / frame_filename(j)));
  const auto manifest = RunManifest::load(dir / "out" / "run_manifest.txt");
  for (const char* key : {"model_hash", "feature_hash", "mesh_hash", "inference_seconds", "operators_seconds"})
    EXPECT_NE(manifest.get(key), nullptr) << key;
  EXPECT_EQ(*manifest.get("cache"), "miss");

  const auto second = animate_to_dir(m, feat, p, dir / "out", opt);
  EXPECT_EQ(second.cache, CacheStatus::hit);
  EXPECT_EQ(*RunManifest::load(dir / "out" / "run_manifest.txt").get("cache"), "hit");

  p.config.spectral_modes = 20;
  const auto third = animate_to_dir(m, feat, p, dir / "out", opt);
  EXPECT_EQ(third.cache, CacheStatus::stale);
  EXPECT_EQ(*RunManifest::load(dir / "out" / "run_manifest.txt").get("cache"), "stale");
  EXPECT_EQ(*RunManifest::load(dir / "out" / "run_manifest.txt").get("k"), "20");
}

TEST(AnimateToDir, VertexMismatchedCacheIsDataError) {
  TempDir dir;
  const Mesh small = shapes::icosphere(1);
  cache_store(compute_operators(small, 16), operator_cache_key(small, 16), dir / "o.stop");
  AnimateRunOptions opt;
  opt.cache = dir / "o.stop";
  EXPECT_THROW(animate_to_dir(shapes::icosphere(2), features(4, 8, 1), default_model(), dir / "out", opt), DataError);
}
