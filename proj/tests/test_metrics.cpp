#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.hpp"
#include "splatvox/metrics.hpp"

using namespace splatvox;
using namespace splatvox::testing;

TEST(Psnr, IdenticalIsInfinite) {
  CounterRng rng(1);
  const Image a = random_image(rng, 8, 8);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_GT(psnr(a, a), 0.0);
}

TEST(Psnr, KnownMse) {
  Image a(4, 4, 3, 0.2), b(4, 4, 3, 0.3);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-12);
}

TEST(Psnr, MatchesBruteForce) {
  CounterRng rng(2);
  for (int t = 0; t < 100; ++t) {
    const Image a = random_image(rng, 13, 9), b = random_image(rng, 13, 9);
    EXPECT_EQ(psnr(a, b), psnr_oracle(a, b));
    EXPECT_EQ(psnr(a, b), psnr(b, a));
  }
}

TEST(Psnr, ShapeMismatchThrows) {
  EXPECT_THROW(psnr(Image(4, 4), Image(4, 5)), DimensionError);
}

TEST(Ssim, IdenticalIsOne) {
  CounterRng rng(3);
  const Image a = random_image(rng, 16, 16);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, NegativeIsLessThanOne) {
  CounterRng rng(4);
  Image a = random_image(rng, 16, 16), neg = a;
  for (double& v : neg.data) v = 1.0 - v;
  EXPECT_LT(ssim(a, neg), 1.0);
}

TEST(Ssim, MatchesWindowOracle) {
  CounterRng rng(5);
  for (int t = 0; t < 100; ++t) {
    const int w = 11 + static_cast<int>(rng.uniform_int(0, 6)), h = 11 + static_cast<int>(rng.uniform_int(0, 6));
    Image a = random_image(rng, w, h), b = a;
    for (double& v : b.data) v = std::clamp(v + 0.2 * rng.normal(), 0.0, 1.0);
    EXPECT_NEAR(ssim(a, b), ssim_oracle(a, b), 1e-7);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  }
}

TEST(Ssim, TooSmallThrows) {
  EXPECT_THROW(ssim(Image(10, 20), Image(10, 20)), SizeError);
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
  CounterRng rng(6);
  for (int t = 0; t < 3; ++t) {
    Image a = random_image(rng, 14, 12), b = random_image(rng, 14, 12);
    std::vector<double> g;
    ssim(a, b, {}, &g);
    const auto num = numeric_gradient(a.data, [&] { return ssim(a, b); }, 1e-6);
    EXPECT_LT(relative_error(g, num), 1e-6);
  }
}

TEST(DepthMetrics, AbsRelExamples) {
  std::vector<double> gt{1.0, 2.0, 4.0}, pred = gt;
  std::vector<std::uint8_t> m{1, 1, 1};
  EXPECT_EQ(depth_absrel(pred, gt, m), 0.0);
  for (auto& p : pred) p *= 1.1;
  EXPECT_NEAR(depth_absrel(pred, gt, m), 0.1, 1e-12);
  std::vector<std::uint8_t> none{0, 0, 0};
  EXPECT_THROW(depth_absrel(pred, gt, none), UndefinedMetricError);
  EXPECT_THROW(depth_delta1(pred, gt, none), UndefinedMetricError);
}

TEST(DepthMetrics, Delta1StrictBoundary) {
  std::vector<std::uint8_t> m{1};
  EXPECT_EQ(depth_delta1(std::vector<double>{1.2}, std::vector<double>{1.0}, m), 1.0);
  EXPECT_EQ(depth_delta1(std::vector<double>{1.25}, std::vector<double>{1.0}, m), 0.0);
  EXPECT_EQ(depth_delta1(std::vector<double>{1.0}, std::vector<double>{1.25}, m), 0.0);
  std::vector<double> d{1, 2, 3};
  EXPECT_EQ(depth_delta1(d, d, std::vector<std::uint8_t>{1, 1, 1}), 1.0);
}

TEST(DepthMetrics, MatchBruteForceAndPermutationInvariant) {
  CounterRng rng(7);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform_int(0, 50));
    std::vector<double> pred(n), gt(n);
    std::vector<std::uint8_t> m(n);
    for (std::size_t i = 0; i < n; ++i) {
      gt[i] = rng.uniform(0.5, 5.0);
      pred[i] = gt[i] * std::exp(0.3 * rng.normal());
      m[i] = rng.uniform() < 0.7;
    }
    m[0] = 1;
    double s = 0.0, hits = 0.0, cnt = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (m[i]) {
        s += std::abs(pred[i] - gt[i]) / gt[i];
        hits += (std::max(pred[i] / gt[i], gt[i] / pred[i]) < 1.25) ? 1.0 : 0.0;
        cnt += 1.0;
      }
    EXPECT_EQ(depth_absrel(pred, gt, m), s / cnt);
    EXPECT_EQ(depth_delta1(pred, gt, m), hits / cnt);
    // Reversal is a permutation of the masked set.
    std::reverse(pred.begin(), pred.end());
    std::reverse(gt.begin(), gt.end());
    std::reverse(m.begin(), m.end());
    EXPECT_NEAR(depth_absrel(pred, gt, m), s / cnt, 1e-12);
    EXPECT_EQ(depth_delta1(pred, gt, m), hits / cnt);
  }
}

TEST(PoseAuc, IdenticalTrajectoriesScoreOne) {
  CounterRng rng(8);
  const auto cams = random_trajectory(rng, 6);
  const auto rep = pose_auc(cams, cams);
  ASSERT_EQ(rep.auc_at.size(), 4u);
  for (const auto& [tau, auc] : rep.auc_at) EXPECT_EQ(auc, 1.0) << tau;
  EXPECT_EQ(rep.pair_errors.size(), 15u);
}

TEST(PoseAuc, HalfThresholdErrorsGiveHalf) {
  // Cameras on the z axis, camera i rolled by 5i° about it. Baselines lie on
  // the roll axis, so only the rotation error is non-zero: 5°·(j − i).
  std::vector<Camera> gt, pred;
  for (int i = 0; i < 3; ++i) {
    const double angle = 5.0 * i * 3.14159265358979323846 / 180.0;
    gt.push_back(make_camera(identity_quat(), Eigen::Vector3d(0, 0, i), 32, 32, 16, 16, 32, 32));
    pred.push_back(make_camera(Quat(std::cos(angle / 2), 0, 0, std::sin(angle / 2)), Eigen::Vector3d(0, 0, i), 32,
                               32, 16, 16, 32, 32));
  }
  // Pair errors: 5°, 10°, 5°. At τ = 10: mean(0.5, 0, 0.5) = 1/3.
  const auto rep = pose_auc(std::span<const Camera>(pred), std::span<const Camera>(gt));
  EXPECT_NEAR(rep.pair_errors[0], 5.0, 1e-9);
  EXPECT_NEAR(rep.pair_errors[1], 10.0, 1e-9);
  EXPECT_NEAR(rep.auc_at.at(10.0), 1.0 / 3.0, 1e-9);
  // Two cameras, one pair at exactly 5° → AUC@10 = 0.5.
  const auto two = pose_auc(std::span<const Camera>(pred).first(2), std::span<const Camera>(gt).first(2));
  EXPECT_NEAR(two.auc_at.at(10.0), 0.5, 1e-9);
}

TEST(PoseAuc, MatchesEnumerationOracle) {
  CounterRng rng(9);
  for (int t = 0; t < 100; ++t) {
    const int n = 2 + static_cast<int>(rng.uniform_int(0, 6));
    const auto gt = random_trajectory(rng, n);
    std::vector<Camera> pred;
    for (const auto& c : gt) pred.push_back(perturb(rng, c, 0.1, 0.3));
    const auto rep = pose_auc(pred, gt);
    std::vector<double> errs;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        // Independent relative pose via Eigen quaternions and angle-axis.
        auto as_q = [](const Camera& c) {
          return Eigen::Quaterniond(c.rotation[0], c.rotation[1], c.rotation[2], c.rotation[3]);
        };
        const Eigen::Quaterniond rp = as_q(pred[i]).conjugate() * as_q(pred[j]);
        const Eigen::Quaterniond rg = as_q(gt[i]).conjugate() * as_q(gt[j]);
        const double rot = Eigen::AngleAxisd(rp * rg.conjugate()).angle() * 180.0 / M_PI;
        const Eigen::Vector3d tp = as_q(pred[i]).conjugate() * (pred[j].translation - pred[i].translation);
        const Eigen::Vector3d tg = as_q(gt[i]).conjugate() * (gt[j].translation - gt[i].translation);
        const double cosang = std::clamp(tp.normalized().dot(tg.normalized()), -1.0, 1.0);
        const double tr = std::acos(cosang) * 180.0 / M_PI;
        errs.push_back(std::max(rot, tr));
      }
    ASSERT_EQ(errs.size(), rep.pair_errors.size());
    for (std::size_t k = 0; k < errs.size(); ++k) EXPECT_NEAR(rep.pair_errors[k], errs[k], 1e-6);
    // Integration of the step curve over the implementation's own errors
    // isolates the AUC arithmetic from the angle computation.
    for (const auto& [tau, auc] : rep.auc_at) EXPECT_NEAR(auc, auc_oracle(rep.pair_errors, tau), 1e-12);
  }
}

TEST(PoseAuc, MonotoneInThreshold) {
  CounterRng rng(10);
  const auto gt = random_trajectory(rng, 8);
  std::vector<Camera> pred;
  for (const auto& c : gt) pred.push_back(perturb(rng, c, 0.1, 0.2));
  const auto rep = pose_auc(pred, gt);
  double prev = -1.0;
  for (const auto& [tau, auc] : rep.auc_at) {
    EXPECT_GE(auc, prev);
    prev = auc;
  }
}

TEST(PoseAuc, InvariantToGlobalSimilarity) {
  CounterRng rng(11);
  const auto gt = random_trajectory(rng, 6);
  std::vector<Camera> pred;
  for (const auto& c : gt) pred.push_back(perturb(rng, c, 0.05, 0.1));
  const auto base = pose_auc(pred, gt);
  const Quat q = random_unit_quat(rng);
  const Eigen::Matrix3d r = quat_to_rotmat(q);
  const Eigen::Vector3d t(1.0, -2.0, 0.5);
  const double s = 2.7;
  auto transform = [&](const std::vector<Camera>& cams) {
    std::vector<Camera> out;
    for (const auto& c : cams)
      out.push_back(make_camera(quat_multiply(q, c.rotation), s * (r * c.translation) + t, c.fx, c.fy, c.cx, c.cy,
                                c.width, c.height));
    return out;
  };
  const auto moved = pose_auc(transform(pred), transform(gt));
  for (const auto& [tau, auc] : base.auc_at) EXPECT_NEAR(moved.auc_at.at(tau), auc, 1e-9);
  // Transforming only pred, then aligning it back, also leaves AUC unchanged.
  const auto pred_moved = transform(pred);
  const auto aligned = align_eval_robust(pred_moved, gt);
  const auto realigned = pose_auc(aligned, gt);
  const auto ref_aligned = pose_auc(align_eval_robust(pred, gt), gt);
  for (const auto& [tau, auc] : ref_aligned.auc_at) EXPECT_NEAR(realigned.auc_at.at(tau), auc, 1e-9);
}

TEST(PoseAuc, DegenerateInputs) {
  CounterRng rng(12);
  const auto cams = random_trajectory(rng, 3);
  EXPECT_THROW(pose_auc(std::span<const Camera>(cams).first(1), std::span<const Camera>(cams).first(1)),
               InsufficientViewsError);
  EXPECT_THROW(pose_auc(std::span<const Camera>(cams).first(2), std::span<const Camera>(cams)), DimensionError);
  // Coincident gt centres: translation direction undefined, error 0.
  std::vector<Camera> same = {cams[0], cams[0]};
  EXPECT_NEAR(pose_auc(same, same).pair_errors[0], 0.0, 1e-12);
}
