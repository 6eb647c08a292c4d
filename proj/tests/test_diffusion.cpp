#include "support.hpp"

#include "scantalk/diffusion.hpp"

using namespace scantalk;
using namespace scantalk::testing;

namespace {

Mesh bumpy(int subdivisions, std::uint64_t seed = 3) {
  return shapes::RadialShape::random(seed, 1.0).apply(shapes::icosphere(subdivisions));
}

// Mass-weighted column means, broadcast to every row.
Matrix mass_mean(const Matrix& H, const Vector& mass) {
  const Eigen::RowVectorXd mean = (mass.transpose() * H) / mass.sum();
  return mean.replicate(H.rows(), 1);
}

double m_norm(const Matrix& H, const Vector& mass, Eigen::Index col) {
  return std::sqrt(H.col(col).cwiseAbs2().dot(mass));
}

}  // namespace

TEST(Diffuse, ZeroTimeIsProjectionAndIdentityAtFullRank) {
  const Mesh m = bumpy(1);
  const auto ops = compute_operators(m, m.num_vertices());
  const Matrix H = random_matrix(m.num_vertices(), 4, 1);
  const Matrix out = diffuse(H, ops, Eigen::RowVectorXd::Zero(4));
  EXPECT_LE((out - H).cwiseAbs().maxCoeff(), 1e-6);

  const auto partial = compute_operators(m, 10);
  const Matrix proj = partial.eigenvectors * (partial.eigenvectors.transpose() * partial.mass.asDiagonal() * H);
  EXPECT_LE((diffuse(H, partial, Eigen::RowVectorXd::Zero(4)) - proj).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Diffuse, EigenfunctionDecay) {
  const Mesh m = bumpy(2);
  const auto ops = compute_operators(m, 12);
  for (int i : {1, 4, 11}) {
    const Matrix H = ops.eigenvectors.col(i);
    for (double t : {0.0, 0.05, 0.4}) {
      const Matrix out = diffuse(H, ops, Eigen::RowVectorXd::Constant(1, t));
      EXPECT_LE((out - std::exp(-ops.eigenvalues[i] * t) * H).cwiseAbs().maxCoeff(), 1e-6) << i << " " << t;
    }
  }
}

TEST(Diffuse, LongTimeLimitIsMassWeightedMean) {
  const Mesh m = bumpy(2);
  const auto ops = compute_operators(m, 20);
  const Matrix H = random_matrix(m.num_vertices(), 3, 2);
  const Matrix out = diffuse(H, ops, Eigen::RowVectorXd::Constant(3, 1e6));
  EXPECT_LE((out - mass_mean(H, ops.mass)).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Diffuse, ConservesHeat) {
  const Mesh m = bumpy(2, 8);
  const auto ops = compute_operators(m, 30);
  const Matrix H = random_matrix(m.num_vertices(), 5, 3, 0.0, 2.0);
  Eigen::RowVectorXd t(5);
  t << 0.0, 1e-3, 0.05, 1.0, 50.0;
  const Matrix out = diffuse(H, ops, t);
  const Eigen::RowVectorXd before = ops.mass.transpose() * H;
  const Eigen::RowVectorXd after = ops.mass.transpose() * out;
  for (int c = 0; c < 5; ++c) EXPECT_LE(std::abs(after[c] - before[c]), 1e-5 * std::abs(before[c])) << c;
}

TEST(Diffuse, ContractionInMassNorm) {
  const Mesh m = bumpy(2, 9);
  const auto ops = compute_operators(m, 30);
  const Matrix H = random_matrix(m.num_vertices(), 4, 4);
  const Matrix proj = diffuse(H, ops, Eigen::RowVectorXd::Zero(4));
  const Matrix out = diffuse(H, ops, Eigen::RowVectorXd::LinSpaced(4, 0.0, 0.3));
  for (int c = 0; c < 4; ++c) EXPECT_LE(m_norm(out, ops.mass, c), m_norm(proj, ops.mass, c) + 1e-8);
}

TEST(Diffuse, RejectsNonFiniteTime) {
  const Mesh m = shapes::icosahedron();
  const auto ops = compute_operators(m, 6);
  Eigen::RowVectorXd t(1);
  t << std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(diffuse(Matrix::Ones(12, 1), ops, t), NumericalError);
}

TEST(GradientFeatures, ConstantInputGivesZero) {
  const Mesh m = bumpy(1);
  const auto ops = compute_operators(m, 8);
  const Matrix H = Matrix::Constant(m.num_vertices(), 3, 0.7);
  const Matrix out = gradient_features(H, ops, random_matrix(3, 3, 1), random_matrix(3, 3, 2));
  EXPECT_LE(out.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(GradientFeatures, IdentityMixOnUnitGradient) {
  const Mesh m = shapes::grid(5, 4, 0.25);
  const auto ops = compute_operators(m, 6);
  const Matrix H = m.vertices.col(0);  // f = x: gradient 1 + 0i
  const Matrix out = gradient_features(H, ops, Matrix::Identity(1, 1), Matrix::Zero(1, 1));
  for (Eigen::Index i = 0; i < out.rows(); ++i) EXPECT_NEAR(out(i, 0), std::tanh(1.0), 1e-6);
  EXPECT_NEAR(std::tanh(1.0), 0.76159, 1e-5);
}

TEST(GradientFeatures, RangeIsOpenUnitInterval) {
  const Mesh m = bumpy(1);
  const auto ops = compute_operators(m, 8);
  const Matrix out = gradient_features(random_matrix(m.num_vertices(), 4, 5), ops, random_matrix(4, 4, 6), random_matrix(4, 4, 7));
  EXPECT_LT(out.cwiseAbs().maxCoeff(), 1.0);
}

TEST(Block, ZeroMlpIsResidualIdentity) {
  const Mesh m = bumpy(1);
  const auto ops = compute_operators(m, 8);
  nn::Rng rng(1);
  auto p = DiffusionBlockParams::make(4, 0.01, rng);
  p.mlp_out = nn::Linear::zeros(4, 4);
  const Matrix H = random_matrix(m.num_vertices(), 4, 8);
  EXPECT_TRUE(block_forward(H, ops, p) == H);
}

TEST(Block, FiniteOnRandomInputs) {
  const Mesh m = bumpy(2);
  const auto ops = compute_operators(m, 16);
  nn::Rng rng(2);
  const auto p = DiffusionBlockParams::make(8, 0.01, rng);
  EXPECT_TRUE(block_forward(random_matrix(m.num_vertices(), 8, 9), ops, p).allFinite());
}

TEST(Stacks, ShapesAndZeroInit) {
  const Mesh m = bumpy(1);
  const auto ops = compute_operators(m, 16);
  nn::Rng rng(3);
  const auto enc = DiffusionNetParams::make(3, 32, 32, 4, 0.01, false, rng);
  const auto dec = DiffusionNetParams::make(64, 32, 3, 4, 0.01, true, rng);
  const Matrix f = dn_encode(m, ops, enc);
  EXPECT_EQ(f.rows(), m.num_vertices());
  EXPECT_EQ(f.cols(), 32);
  const Matrix d = dn_decode(random_matrix(m.num_vertices(), 64, 1), ops, dec);
  EXPECT_EQ(d.cols(), 3);
  EXPECT_TRUE(d.isZero(0.0));
}

TEST(Stacks, ResidualBlocksPassThroughWhenZeroed) {
  const Mesh m = bumpy(1);
  const auto ops = compute_operators(m, 16);
  nn::Rng rng(4);
  auto enc = DiffusionNetParams::make(3, 8, 8, 4, 0.01, false, rng);
  for (auto& b : enc.blocks) b.mlp_out = nn::Linear::zeros(8, 8);
  enc.last.weight = Matrix::Identity(8, 8);
  enc.last.bias.setZero();
  EXPECT_LE((dn_encode(m, ops, enc) - enc.first.forward(m.vertices)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Stacks, RejectsOperatorMismatch) {
  const auto ops = compute_operators(shapes::icosahedron(), 6);
  nn::Rng rng(5);
  const auto enc = DiffusionNetParams::make(3, 8, 8, 1, 0.01, false, rng);
  EXPECT_THROW(dn_encode(shapes::icosphere(1), ops, enc), DataError);
}

TEST(Equivariance, BlockEncoderDecoderUnderPermutation) {
  const Mesh m = bumpy(2, 12);
  const int V = static_cast<int>(m.num_vertices());
  const auto ops = compute_operators(m, 32);
  nn::Rng rng(6);
  const auto enc = DiffusionNetParams::make(3, 16, 16, 4, 0.02, false, rng);
  auto dec = DiffusionNetParams::make(32, 16, 3, 4, 0.02, false, rng);
  const Matrix fused = random_matrix(V, 32, 10);
  const Matrix f = dn_encode(m, ops, enc);
  const Matrix d = dn_decode(fused, ops, dec);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto perm = random_permutation(V, 100 + s);
    const Mesh pm = shapes::permute_vertices(m, perm);
    const auto pops = compute_operators(pm, 32);
    EXPECT_LE((dn_encode(pm, pops, enc) - permute_rows(f, perm)).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE((dn_decode(permute_rows(fused, perm), pops, dec) - permute_rows(d, perm)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Backward, BlockMatchesFiniteDifferences) {
  const Mesh m = shapes::jitter_on_sphere(shapes::icosahedron(), 0.2, 4);
  const auto ops = compute_operators(m, 12);
  nn::Rng rng(7);
  auto p = DiffusionBlockParams::make(4, 0.1, rng);
  p.mlp_hidden.bias = random_matrix(1, 4, 11, -0.2, 0.2);
  p.mlp_out.bias = random_matrix(1, 4, 12, -0.2, 0.2);
  const Matrix H = random_matrix(12, 4, 13);
  const Matrix W = random_matrix(12, 4, 14);
  auto loss = [&](const DiffusionBlockParams& q) { return block_forward(H, ops, q).cwiseProduct(W).sum(); };
  BlockCache cache;
  block_forward(H, ops, p, &cache);
  auto g = nn::zeros_like(p);
  const Matrix dH = block_backward(W, ops, p, cache, g);
  for (const auto& c : finite_difference_check(p, g, loss)) EXPECT_LT(c.rel_error, 1e-4) << c.name;

  // Input gradient.
  Matrix numeric(12, 4);
  const double eps = 1e-4;
  for (Eigen::Index i = 0; i < H.size(); ++i) {
    Matrix up = H, down = H;
    up.data()[i] += eps;
    down.data()[i] -= eps;
    numeric.data()[i] = (block_forward(up, ops, p).cwiseProduct(W).sum() - block_forward(down, ops, p).cwiseProduct(W).sum()) / (2 * eps);
  }
  EXPECT_LT((numeric - dH).norm() / dH.norm(), 1e-4);
}

TEST(Backward, DiffusionNetMatchesFiniteDifferences) {
  const Mesh m = shapes::jitter_on_sphere(shapes::icosahedron(), 0.2, 5);
  const auto ops = compute_operators(m, 12);
  nn::Rng rng(8);
  const auto p = DiffusionNetParams::make(3, 6, 3, 2, 0.1, false, rng);
  const Matrix X = m.vertices;
  const Matrix W = random_matrix(12, 3, 15);
  auto loss = [&](const DiffusionNetParams& q) { return diffusion_net_forward(X, ops, q).cwiseProduct(W).sum(); };
  DiffusionNetCache cache;
  diffusion_net_forward(X, ops, p, &cache);
  auto g = nn::zeros_like(p);
  diffusion_net_backward(W, ops, p, cache, g);
  for (const auto& c : finite_difference_check(p, g, loss)) EXPECT_LT(c.rel_error, 1e-4) << c.name;
}
