#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "dfrec/metrics.hpp"
#include "dfrec/perturb.hpp"
#include "dfrec/rng.hpp"

using namespace dfrec;

namespace {

TEST(Metrics, IdsimBasics) {
  const std::vector<double> a{1, 0}, b{0, 1}, c{2, 0}, na{-1, 0};
  EXPECT_DOUBLE_EQ(idsim(a, a), 1.0);
  EXPECT_DOUBLE_EQ(idsim(a, b), 0.0);
  EXPECT_DOUBLE_EQ(idsim(a, na), -1.0);
  EXPECT_DOUBLE_EQ(idsim(a, c), 1.0);  // scale invariance
  EXPECT_DOUBLE_EQ(idsim(c, a), idsim(a, c));

  EXPECT_THROW(idsim(a, std::vector<double>{1, 2, 3}), InputError);
  EXPECT_THROW(idsim(std::vector<double>{0, 0}, a), InputError);
  EXPECT_THROW(idsim(std::vector<double>{}, std::vector<double>{}), InputError);
}

TEST(Metrics, AccIdRule) {
  auto rec = [](double sim, bool fake) {
    EvalRecord r;
    r.idsim_input_vs_rec = sim;
    r.fake_label = fake;
    return r;
  };
  EXPECT_DOUBLE_EQ(acc_id({rec(0.95, false), rec(0.20, true)}), 1.0);
  // Exactly at the threshold counts as fake (strictly-greater rule).
  EXPECT_DOUBLE_EQ(acc_id({rec(0.9, true)}), 1.0);
  EXPECT_DOUBLE_EQ(acc_id({rec(0.95, true)}), 0.0);
  EXPECT_THROW(acc_id({}), InputError);

  // Order invariance.
  std::vector<EvalRecord> rs{rec(0.99, false), rec(0.5, true), rec(0.91, true), rec(0.2, true)};
  const double base = acc_id(rs);
  std::reverse(rs.begin(), rs.end());
  EXPECT_DOUBLE_EQ(acc_id(rs), base);
}

TEST(Metrics, EmbedStatsHandArithmetic) {
  const EmbedStats s = embed_stats({{0, 0}, {2, 0}});
  EXPECT_DOUBLE_EQ(s.mean(0), 1.0);
  EXPECT_DOUBLE_EQ(s.mean(1), 0.0);
  EXPECT_DOUBLE_EQ(s.cov(0, 0), 2.0);  // unbiased, n-1
  EXPECT_DOUBLE_EQ(s.cov(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(s.cov(1, 1), 0.0);

  const EmbedStats same = embed_stats({{0.4, 0.2}, {0.4, 0.2}, {0.4, 0.2}});
  EXPECT_NEAR(same.cov.norm(), 0.0, 1e-15);

  // Permutation invariance.
  Rng rng(3);
  std::vector<std::vector<double>> e;
  for (int i = 0; i < 6; ++i) e.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
  const EmbedStats s1 = embed_stats(e);
  std::reverse(e.begin(), e.end());
  const EmbedStats s2 = embed_stats(e);
  EXPECT_NEAR((s1.mean - s2.mean).norm(), 0.0, 1e-12);
  EXPECT_NEAR((s1.cov - s2.cov).norm(), 0.0, 1e-12);

  EXPECT_THROW(embed_stats({{1.0}}), InputError);
}

EmbedStats gaussian1d(double mu, double var) {
  EmbedStats s;
  s.mean = Eigen::VectorXd::Constant(1, mu);
  s.cov = Eigen::MatrixXd::Constant(1, 1, var);
  s.count = 2;
  return s;
}

TEST(Metrics, Frechet1dClosedForm) {
  // (mu1-mu2)^2 + (sigma1-sigma2)^2
  EXPECT_NEAR(frechet_distance(gaussian1d(0, 1), gaussian1d(1, 1)), 1.0, 1e-12);
  EXPECT_NEAR(frechet_distance(gaussian1d(0, 1), gaussian1d(0, 4)), 1.0, 1e-12);
  EXPECT_NEAR(frechet_distance(gaussian1d(0.3, 2.0), gaussian1d(0.3, 2.0)), 0.0, 1e-6);

  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const double m1 = rng.uniform(-3, 3), m2 = rng.uniform(-3, 3);
    const double v1 = rng.uniform(0.1, 4), v2 = rng.uniform(0.1, 4);
    const double expect = (m1 - m2) * (m1 - m2) + std::pow(std::sqrt(v1) - std::sqrt(v2), 2);
    EXPECT_NEAR(frechet_distance(gaussian1d(m1, v1), gaussian1d(m2, v2)), expect, 1e-10);
  }
}

// Independent matrix-square-root oracle: Denman-Beavers iteration, a wholly
// different algorithm from the eigendecomposition used by the implementation.
Eigen::MatrixXd denman_beavers_sqrt(const Eigen::MatrixXd& a) {
  Eigen::MatrixXd y = a;
  Eigen::MatrixXd z = Eigen::MatrixXd::Identity(a.rows(), a.cols());
  for (int it = 0; it < 100; ++it) {
    const Eigen::MatrixXd yn = 0.5 * (y + z.inverse());
    const Eigen::MatrixXd zn = 0.5 * (z + y.inverse());
    if ((yn - y).norm() < 1e-14 * std::max(1.0, y.norm())) {
      y = yn;
      break;
    }
    y = yn;
    z = zn;
  }
  return y;
}

Eigen::MatrixXd random_psd(int d, Rng& rng, double ridge) {
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
  return a * a.transpose() / d + ridge * Eigen::MatrixXd::Identity(d, d);
}

TEST(Metrics, FrechetMatchesDenmanBeaversOracle) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 8;
    EmbedStats a, b;
    a.mean = Eigen::VectorXd::Zero(d);
    b.mean = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < d; ++i) {
      a.mean(i) = rng.uniform(-1, 1);
      b.mean(i) = rng.uniform(-1, 1);
    }
    a.cov = random_psd(d, rng, 0.05);
    b.cov = random_psd(d, rng, 0.05);
    a.count = b.count = 16;

    const Eigen::MatrixXd prod_sqrt = denman_beavers_sqrt(a.cov * b.cov);
    const double oracle = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * prod_sqrt.trace();
    EXPECT_NEAR(frechet_distance(a, b), oracle, 1e-8);
    // Symmetry.
    EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-8);
    EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-8);
  }
}

TEST(Metrics, FrechetErrors) {
  EmbedStats a = gaussian1d(0, 1);
  EmbedStats b;
  b.mean = Eigen::VectorXd::Zero(2);
  b.cov = Eigen::MatrixXd::Identity(2, 2);
  EXPECT_THROW(frechet_distance(a, b), InputError);

  EmbedStats neg = gaussian1d(0, -0.5);
  EXPECT_THROW(frechet_distance(neg, a), NumericError);
}

TEST(Perturb, DeterminismAndIdentities) {
  Rng rng(9);
  Image img(32, 32, 3);
  for (auto& v : img.data) v = rng.uniform();

  for (const auto kind : {PerturbKind::Blur, PerturbKind::Jpeg, PerturbKind::Noise}) {
    Rng r1(42), r2(42);
    const Image p1 = perturb(img, kind, r1);
    const Image p2 = perturb(img, kind, r2);
    EXPECT_EQ(p1.data, p2.data);
    for (double v : p1.data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }

  // Blur of a constant image is the same constant image.
  Image c(32, 32, 3);
  std::fill(c.data.begin(), c.data.end(), 0.42);
  Rng rb(1);
  const Image cb = perturb(c, PerturbKind::Blur, rb);
  for (double v : cb.data) EXPECT_NEAR(v, 0.42, 1e-12);

  EXPECT_THROW(parse_perturb_kind("sharpen"), InputError);
  EXPECT_EQ(parse_perturb_kind("blur"), PerturbKind::Blur);
  EXPECT_EQ(parse_perturb_kind("jpeg"), PerturbKind::Jpeg);
  EXPECT_EQ(parse_perturb_kind("noise"), PerturbKind::Noise);
}

TEST(Metrics, SummaryMeans) {
  std::vector<SimilaritySample> samples{
      {"source", 0.8}, {"source", 0.6}, {"target", 0.9}, {"unrelated", 0.1}, {"unrelated", 0.3}};
  const SimilaritySummary s = summarize(samples);
  EXPECT_DOUBLE_EQ(s.mean_source, 0.7);
  EXPECT_DOUBLE_EQ(s.mean_target, 0.9);
  EXPECT_DOUBLE_EQ(s.mean_unrelated, 0.2);
  EXPECT_THROW(summarize({{"bogus", 0.5}}), InputError);
}

}  // namespace
