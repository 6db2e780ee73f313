#include <gtest/gtest.h>

#include "lmm/losses.hpp"

using namespace lmm;

namespace {

OuterLoss identity_loss(LossKind kind, const Vec &b) {
  return OuterLoss(kind, MeasurementMap::identity(b.size()), b);
}

} // namespace

TEST(LossValue, Examples) {
  const Vec b = (Vec(2) << 1, -1).finished();
  const Vec z = b + (Vec(2) << 3, 4).finished();
  EXPECT_EQ(loss_value(identity_loss(LossKind::L1, b), b), 0.0);
  EXPECT_DOUBLE_EQ(loss_value(identity_loss(LossKind::SquaredL2, b), z), 12.5);
  const OuterLoss l2(LossKind::L2, MeasurementMap::dense(Mat::Identity(2, 2)), b);
  EXPECT_DOUBLE_EQ(loss_value(l2, z), 5.0);
  EXPECT_DOUBLE_EQ(loss_value(identity_loss(LossKind::L1, b), z), 7.0);
}

TEST(LossValue, DimensionMismatch) {
  EXPECT_THROW(loss_value(identity_loss(LossKind::L2, Vec::Ones(3)), Vec::Ones(2)),
               DimensionError);
  EXPECT_THROW(OuterLoss(LossKind::L2, MeasurementMap::identity(3), Vec::Ones(2)),
               DimensionError);
}

TEST(LossSubgradient, Examples) {
  const Vec b = Vec::Zero(3);
  EXPECT_EQ(loss_subgradient(identity_loss(LossKind::L1, b), (Vec(3) << 2, -3, 0).finished()),
            (Vec(3) << 1, -1, 0).finished());
  EXPECT_EQ(loss_subgradient(identity_loss(LossKind::SquaredL2, Vec::Zero(2)),
                             (Vec(2) << 2, -3).finished()),
            (Vec(2) << 2, -3).finished());
  EXPECT_EQ(loss_subgradient(identity_loss(LossKind::L2, Vec::Ones(2)), Vec::Ones(2)),
            Vec::Zero(2));
}

TEST(LossSubgradient, DensePullback) {
  Rng rng(1);
  const Mat A = rng.gaussian(6, 4);
  const Vec b = rng.gaussian_vector(6), z = rng.gaussian_vector(4);
  const Vec r = A * z - b;
  const OuterLoss l2(LossKind::L2, MeasurementMap::dense(A), b);
  EXPECT_LE((loss_subgradient(l2, z) - A.transpose() * r / r.norm()).norm(), 1e-14);
}

TEST(Property, SubgradientInequality) {
  Rng rng(77);
  const Mat A = rng.gaussian(8, 5);
  for (LossKind kind : {LossKind::SquaredL2, LossKind::L2, LossKind::L1}) {
    const OuterLoss loss(kind, MeasurementMap::dense(A), rng.gaussian_vector(8));
    for (int t = 0; t < 1000; ++t) {
      const Vec z = rng.gaussian_vector(5), y = rng.gaussian_vector(5);
      const Vec v = loss_subgradient(loss, z);
      EXPECT_GE(loss_value(loss, y) - loss_value(loss, z) - v.dot(y - z), -1e-10)
          << to_string(kind);
    }
  }
}

TEST(Property, L1SharpnessOnIdentity) {
  Rng rng(78);
  const Vec zs = rng.gaussian_vector(10);
  const OuterLoss loss = identity_loss(LossKind::L1, zs);
  for (int t = 0; t < 200; ++t) {
    const Vec z = rng.gaussian_vector(10);
    EXPECT_GE(loss_value(loss, z), (z - zs).norm());
  }
}

TEST(Property, NnlsSharpnessSigmaMin) {
  Rng rng(79);
  const Mat A = rng.gaussian(12, 6);
  const Vec zs = rng.gaussian_vector(6);
  const OuterLoss loss(LossKind::L2, MeasurementMap::dense(A), A * zs);
  Eigen::JacobiSVD<Mat> svd(A);
  const double smin = svd.singularValues()(5);
  for (int t = 0; t < 200; ++t) {
    const Vec z = rng.gaussian_vector(6);
    EXPECT_GE(loss_value(loss, z), smin * (z - zs).norm() * (1 - 1e-12));
  }
}

TEST(GaussianMap, Moments) {
  const Index m = 250, n = 400;
  const MeasurementMap A = make_gaussian_map(m, n, 42);
  EXPECT_EQ(A.rows(), m);
  EXPECT_EQ(A.cols(), n);
  const double mean = A.matrix().mean();
  const double var = (A.matrix().array() - mean).square().mean();
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var * m, 1.0, 0.1);
}

TEST(GaussianMap, Deterministic) {
  EXPECT_EQ(make_gaussian_map(10, 7, 3).matrix(), make_gaussian_map(10, 7, 3).matrix());
  EXPECT_NE(make_gaussian_map(10, 7, 3).matrix(), make_gaussian_map(10, 7, 4).matrix());
}

TEST(Corrupt, ZeroFailLeavesDataUnchanged) {
  const MeasurementMap A = make_gaussian_map(20, 5, 1);
  const Vec b = Vec::LinSpaced(20, 0, 19);
  EXPECT_EQ(corrupt(b, {0.0, 9}, A, Vec::Ones(5)), b);
}

TEST(Corrupt, CountAndValues) {
  const Index m = 40;
  const MeasurementMap A = make_gaussian_map(m, 6, 2);
  const Vec b = Vec::Zero(m);
  const Vec zbar = Vec::Ones(6);
  const Vec spurious = A.apply(zbar);
  // floor(0.49 * 40) = 19 = m/2 - 1.
  const Vec out = corrupt(b, {0.49, 17}, A, zbar);
  const auto idx = corrupted_indices(m, {0.49, 17});
  ASSERT_EQ(idx.size(), 19u);
  Index changed = 0;
  for (Index i = 0; i < m; ++i)
    if (out(i) != b(i))
      ++changed;
  EXPECT_EQ(changed, 19);
  for (Index i : idx)
    EXPECT_EQ(out(i), spurious(i));
  for (std::size_t k = 1; k < idx.size(); ++k)
    EXPECT_LT(idx[k - 1], idx[k]);
}

TEST(Corrupt, Validation) {
  EXPECT_THROW(corrupted_indices(10, {0.5, 1}), ParameterError);
  EXPECT_THROW(corrupted_indices(10, {-0.1, 1}), ParameterError);
  EXPECT_EQ(corrupted_indices(10, {0.5, 1, true}).size(), 5u);
  EXPECT_EQ(corrupted_indices(10, {0.3, 5}), corrupted_indices(10, {0.3, 5}));
}

TEST(EmpiricalRip, IdentityIsExact) {
  const ParamMap p = ParamMap::burer_monteiro(5, 2);
  const RipRatios r = empirical_rip(MeasurementMap::identity(25), p, 10, 3);
  EXPECT_NEAR(r.ratio_min, 1.0, 1e-14);
  EXPECT_NEAR(r.ratio_max, 1.0, 1e-14);
}

TEST(EmpiricalRip, GaussianNearIsometry) {
  const Index d = 20, r = 2, m = 8 * d * r;
  const ParamMap p = ParamMap::burer_monteiro(d, r);
  const RipRatios rr = empirical_rip(make_gaussian_map(m, d * d, 5), p, 20, 6);
  EXPECT_GE(rr.ratio_min, 0.5);
  EXPECT_LE(rr.ratio_max, 1.5);
}

TEST(EmpiricalRip, SingleTrial) {
  const ParamMap p = ParamMap::asymmetric_factor(4, 3, 1);
  const RipRatios rr = empirical_rip(make_gaussian_map(30, 12, 5), p, 1, 2, RipNorm::L1);
  EXPECT_EQ(rr.ratio_min, rr.ratio_max);
}
