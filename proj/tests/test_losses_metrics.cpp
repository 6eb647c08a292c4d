#include "fixtures.hpp"

using namespace scantalk;
using namespace scantalk::testing;

namespace {

Frames random_frames(std::size_t T, Eigen::Index V, std::uint64_t seed) {
  Frames f;
  for (std::size_t j = 0; j < T; ++j) f.push_back(random_matrix(V, 3, seed + j));
  return f;
}

Frames constant_frames(std::size_t T, const Vertices& v) { return Frames(T, v); }

VertexMask mask_of(std::vector<int> idx, Eigen::Index V, MaskLabel label = MaskLabel::lip) {
  return make_mask(std::move(idx), label, V);
}

// Brute-force loops with no shared helpers.
double oracle_lve(const Frames& p, const Frames& g, const std::vector<int>& lip) {
  double sum = 0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    double best = 0;
    for (int k : lip) {
      double d = 0;
      for (int c = 0; c < 3; ++c) d += (p[j](k, c) - g[j](k, c)) * (p[j](k, c) - g[j](k, c));
      if (d > best) best = d;
    }
    sum += best;
  }
  return sum / static_cast<double>(p.size());
}

double oracle_mve(const Frames& p, const Frames& g) {
  std::vector<int> all(static_cast<std::size_t>(p[0].rows()));
  std::iota(all.begin(), all.end(), 0);
  return oracle_lve(p, g, all);
}

double oracle_fdd(const Frames& p, const Frames& g, const Vertices& n, const std::vector<int>& upper) {
  auto dyn = [&](const Frames& s, int k) {
    std::vector<double> dist;
    for (const auto& f : s) {
      double d = 0;
      for (int c = 0; c < 3; ++c) d += (f(k, c) - n(k, c)) * (f(k, c) - n(k, c));
      dist.push_back(std::sqrt(d));
    }
    double mean = 0;
    for (double d : dist) mean += d;
    mean /= static_cast<double>(dist.size());
    double var = 0;
    for (double d : dist) var += (d - mean) * (d - mean);
    return std::sqrt(var / static_cast<double>(dist.size()));
  };
  double sum = 0;
  for (int k : upper) sum += dyn(g, k) - dyn(p, k);
  return sum / static_cast<double>(upper.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// Losses

TEST(LossMse, HandValues) {
  const Vertices base = random_matrix(100, 3, 1);
  EXPECT_EQ(loss_mse({base}, {base}), 0.0);
  Vertices off = base;
  off(17, 0) += 0.001;
  EXPECT_NEAR(loss_mse({off}, {base}), 1e-8, 1e-20);
  const Eigen::RowVector3d d(0.3, -0.2, 0.1);
  Frames shifted = constant_frames(4, base);
  for (auto& f : shifted) f.rowwise() += d;
  EXPECT_NEAR(loss_mse(shifted, constant_frames(4, base)), d.squaredNorm(), 1e-15);
}

TEST(LossMse, ShapeMismatch) {
  EXPECT_THROW(loss_mse(random_frames(2, 5, 1), random_frames(3, 5, 1)), DataError);
  EXPECT_THROW(loss_mse(random_frames(2, 5, 1), random_frames(2, 6, 1)), DataError);
}

TEST(LossMasked, HandValues) {
  const Vertices base = random_matrix(40, 3, 2);
  std::vector<int> idx{0, 3, 6, 9, 12, 15, 18, 21, 24, 27};
  const auto mask = mask_of(idx, 40);
  Vertices off = base;
  off(9, 1) -= 1e-3;
  EXPECT_NEAR(loss_masked({off}, {base}, mask), 1e-7, 1e-19);
  Vertices outside = base;
  outside(10, 0) += 1.0;
  EXPECT_EQ(loss_masked({outside}, {base}, mask), 0.0);
  std::vector<int> all(40);
  std::iota(all.begin(), all.end(), 0);
  const auto p = random_frames(3, 40, 3), g = random_frames(3, 40, 9);
  EXPECT_NEAR(loss_masked(p, g, mask_of(all, 40)), loss_mse(p, g), 1e-14);
  EXPECT_THROW(loss_masked(p, g, VertexMask{}), DataError);
}

TEST(LossVelocity, HandValues) {
  const Vertices base = random_matrix(100, 3, 4);
  Vertices moved = base;
  moved(50, 2) += 1e-3;
  EXPECT_NEAR(loss_velocity({base, base}, {base, moved}), 1e-8, 1e-20);
  const auto g = random_frames(5, 100, 5);
  Frames p = g;
  for (auto& f : p) f.rowwise() += Eigen::RowVector3d(1, 2, 3);
  EXPECT_LT(loss_velocity(p, g), 1e-28);
  EXPECT_EQ(loss_velocity(g, g), 0.0);
  EXPECT_THROW(loss_velocity({base}, {base}), DataError);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  const auto p = random_frames(4, 9, 10), g = random_frames(4, 9, 20);
  const auto mask = mask_of({1, 4, 7}, 9);
  const LossWeights w{1.0, 0.7, 0.3};
  Frames grad;
  weighted_loss(p, g, &mask, w, &grad);
  const double h = 1e-6;
  double worst = 0;
  for (std::size_t j = 0; j < p.size(); ++j)
    for (Eigen::Index k = 0; k < 9; ++k)
      for (int c = 0; c < 3; ++c) {
        Frames a = p, b = p;
        a[j](k, c) += h;
        b[j](k, c) -= h;
        const double fd = (weighted_loss(a, g, &mask, w).total - weighted_loss(b, g, &mask, w).total) / (2 * h);
        worst = std::max(worst, std::abs(fd - grad[j](k, c)));
      }
  EXPECT_LT(worst, 1e-8);
}

TEST(Losses, NonNegativeAndZeroOnlyAtEquality) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto p = random_frames(3, 7, 100 + s), g = random_frames(3, 7, 200 + s);
    EXPECT_GT(loss_mse(p, g), 0.0);
    EXPECT_GT(loss_masked(p, g, mask_of({2, 5}, 7)), 0.0);
    EXPECT_GT(loss_velocity(p, g), 0.0);
  }
}

TEST(Losses, MaskTermWithoutMaskIsError) {
  const auto p = random_frames(2, 4, 1);
  EXPECT_THROW(weighted_loss(p, p, nullptr, {1.0, 1.0, 0.0}), DataError);
}

// ---------------------------------------------------------------------------
// Metrics

TEST(Lve, HandValues) {
  const Vertices gt = random_matrix(20, 3, 30);
  const auto lip = mask_of({2, 4, 6}, 20);
  EXPECT_EQ(lve({gt}, {gt}, lip), 0.0);
  Vertices off = gt;
  off(4, 0) += 0.001;
  EXPECT_NEAR(lve({off}, {gt}, lip), 1e-6, 1e-18);
  Vertices a = gt, b = gt;
  a(2, 1) += 1e-3;  // 1e-6
  b(6, 2) -= 2e-3;  // 4e-6
  EXPECT_NEAR(lve({a, b}, {gt, gt}, lip), 2.5e-6, 1e-18);
  EXPECT_THROW(lve({gt}, {gt}, VertexMask{}), DataError);
}

TEST(Mve, HandValues) {
  const Vertices gt = random_matrix(20, 3, 31);
  const auto lip = mask_of({2, 4, 6}, 20);
  EXPECT_EQ(mve({gt}, {gt}), 0.0);
  Vertices off = gt;
  off(11, 0) += 0.01;
  EXPECT_GT(mve({off}, {gt}), 0.0);
  EXPECT_EQ(lve({off}, {gt}, lip), 0.0);
  const Eigen::RowVector3d d(1e-3, 2e-3, -2e-3);
  Vertices shifted = gt;
  shifted.rowwise() += d;
  EXPECT_NEAR(mve({shifted, shifted}, {gt, gt}), d.squaredNorm(), 1e-18);
  EXPECT_THROW(mve({gt}, {gt, gt}), DataError);
}

TEST(Fdd, HandValues) {
  const Vertices neutral = random_matrix(30, 3, 32);
  const auto upper = mask_of({0, 5, 10, 15, 20}, 30, MaskLabel::upper_face);
  const Frames still = constant_frames(2, neutral);
  EXPECT_EQ(fdd(still, still, neutral, upper), 0.0);
  Frames gt = still;
  gt[1](10, 0) += 2e-3;  // distances 0 and 2e-3 -> std 1e-3
  EXPECT_NEAR(fdd(still, gt, neutral, upper), 2e-4, 1e-16);
  EXPECT_NEAR(fdd(gt, still, neutral, upper), -2e-4, 1e-16);
  EXPECT_THROW(fdd({neutral}, {neutral}, neutral, upper), DataError);
  EXPECT_THROW(fdd(still, still, neutral, VertexMask{}), DataError);
}

TEST(Metrics, MatchBruteForceOracles) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto p = random_frames(5, 50, 1000 + 10 * s), g = random_frames(5, 50, 5000 + 10 * s);
    const Vertices n = random_matrix(50, 3, 9000 + s);
    const std::vector<int> lip{1, 7, 8, 13, 21, 34, 40, 49}, upper{0, 2, 3, 5, 11, 19, 29, 31, 44};
    EXPECT_NEAR(lve(p, g, mask_of(lip, 50)), oracle_lve(p, g, lip), 1e-12);
    EXPECT_NEAR(mve(p, g), oracle_mve(p, g), 1e-12);
    EXPECT_NEAR(fdd(p, g, n, mask_of(upper, 50, MaskLabel::upper_face)), oracle_fdd(p, g, n, upper), 1e-12);
  }
}

TEST(Metrics, LipMaxBoundedByGlobalMax) {
  const auto p = random_frames(6, 40, 60), g = random_frames(6, 40, 70);
  std::vector<double> lf, mf;
  lve(p, g, mask_of({3, 9, 27, 33}, 40), &lf);
  mve(p, g, &mf);
  ASSERT_EQ(lf.size(), mf.size());
  for (std::size_t j = 0; j < lf.size(); ++j) EXPECT_LE(lf[j], mf[j]);
}

TEST(Metrics, ScaleCovariance) {
  const auto p = random_frames(5, 30, 80), g = random_frames(5, 30, 90);
  const Vertices n = random_matrix(30, 3, 99);
  const auto lip = mask_of({1, 2, 3}, 30);
  const auto upper = mask_of({10, 20, 25}, 30, MaskLabel::upper_face);
  const double s = 3.5;
  auto scaled = [&](const Frames& f) {
    Frames out;
    for (const auto& x : f) out.push_back(s * x);
    return out;
  };
  const auto a = evaluate(p, g, n, lip, upper);
  const auto b = evaluate(scaled(p), scaled(g), s * n, lip, upper);
  EXPECT_NEAR(b.lve, s * s * a.lve, 1e-12 * b.lve);
  EXPECT_NEAR(b.mve, s * s * a.mve, 1e-12 * b.mve);
  EXPECT_NEAR(b.fdd, s * a.fdd, 1e-12 * std::abs(b.fdd) + 1e-15);
}

TEST(Heatmap, HandValues) {
  const Vertices base = random_matrix(12, 3, 40);
  const Frames still = constant_frames(4, base);
  EXPECT_TRUE(motion_heatmap(still).isZero(0.0));
  Frames moving = still;
  const Eigen::RowVector3d dirs[] = {{2e-3, 0, 0}, {0, -2e-3, 0}, {0, 0, 2e-3}};
  for (std::size_t j = 1; j < 4; ++j) moving[j].row(5) += dirs[j - 1];
  Vector h = motion_heatmap(moving);
  EXPECT_EQ(h.size(), 12);
  EXPECT_NEAR(h[5], 2e-3, 1e-15);
  h[5] = 0;
  EXPECT_TRUE(h.isZero(0.0));
  EXPECT_THROW(motion_heatmap({base}), DataError);
}

TEST(HeatColors, Ramp) {
  Vector v(3);
  v << 0.0, 0.5, 1.0;
  const auto c = heat_colors(v);
  EXPECT_DOUBLE_EQ(c(0, 2), 0.5);
  EXPECT_DOUBLE_EQ(c(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(c(2, 0), 0.5);
  EXPECT_DOUBLE_EQ(c(2, 2), 0.0);
  EXPECT_DOUBLE_EQ(c(1, 1), 1.0);
}

TEST(DescriptorMap, RangeAndPermutation) {
  const Mesh m = shapes::RadialShape::random(3).apply(shapes::icosphere(2));
  const auto ops = compute_operators(m, 32);
  ModelConfig cfg;
  cfg.feature_dim = 4;
  const auto p = init_model(cfg, 1e-3, 5);
  const Vector map = descriptor_norm_map(dn_encode(m, ops, p.encoder));
  EXPECT_EQ(map.maxCoeff(), 1.0);
  EXPECT_GT(map.minCoeff(), 0.0);
  const auto perm = random_permutation(static_cast<int>(m.num_vertices()), 6);
  const Mesh pm = shapes::permute_vertices(m, perm);
  const Vector pmap = descriptor_norm_map(dn_encode(pm, compute_operators(pm, 32), p.encoder));
  EXPECT_LE((pmap - permute_rows(Matrix(map), perm)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_THROW(descriptor_norm_map(Matrix::Zero(4, 3)), DataError);
}

TEST(ScalarField, OneValuePerLine) {
  TempDir dir;
  Vector v(3);
  v << 0.25, 1.0, 0.0;
  save_scalar_field(v, dir / "h.txt");
  EXPECT_EQ(read_binary(dir / "h.txt"), "0.25\n1\n0\n");
}
