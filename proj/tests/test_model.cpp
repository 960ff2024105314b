#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gpmm/model.hpp"
#include "oracles.hpp"

using namespace gpmm;

namespace {

ObservationSet single_measurement(const VectorXd& x, const VectorXd& y) {
  ObservationSet obs;
  obs.locations = x;
  obs.values = y;
  return obs;
}

GpmmModel se_model(double variance, double lengthscale, double eps, double eta, const WeightSpec& w) {
  GpmmModel model;
  model.kernel = SeParams{variance, lengthscale};
  model.measurement_noise = eps;
  model.observation_noise = eta;
  model.weights = w;
  return model;
}

ObservationSet random_mixture(std::mt19937_64& rng, Index n, Index m) {
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  std::normal_distribution<double> z;
  ObservationSet obs;
  obs.locations.resize(n, m);
  obs.values.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double c = u(rng);
    for (Index j = 0; j < m; ++j) obs.locations(i, j) = c + 0.3 * static_cast<double>(j) + 0.01 * u(rng);
    obs.values[i] = z(rng);
  }
  return obs;
}

}  // namespace

TEST(ObservationMean, IsZeroWithObservationCount) {
  const ObservationSet obs = single_measurement(VectorXd{{0.0, 1.0, 2.0}}, VectorXd{{1.0, 2.0, 3.0}});
  const GpmmModel model = se_model(1.0, 1.0, 0.1, 0.1, WeightSpec::shared(VectorXd{{1.0}}));
  const VectorXd mu = observation_mean(model, obs);
  ASSERT_EQ(mu.size(), 3);
  EXPECT_TRUE(mu.isZero(0.0));
}

TEST(ObservationMean, WeightShapeMismatch) {
  const ObservationSet obs = single_measurement(VectorXd{{0.0, 1.0}}, VectorXd{{1.0, 2.0}});
  const GpmmModel model = se_model(1.0, 1.0, 0.1, 0.1, WeightSpec::shared(VectorXd{{0.5, 0.5}}));
  EXPECT_THROW(observation_mean(model, obs), DomainError);
}

TEST(WeightSpec, Constraints) {
  EXPECT_THROW(WeightSpec::shared(VectorXd{{0.5, 0.6}}), DomainError);
  EXPECT_THROW(WeightSpec::shared(VectorXd{{0.7, 0.3}}), DomainError);
  EXPECT_THROW(WeightSpec::shared(VectorXd{{1.5, -0.5}}), DomainError);
  EXPECT_NO_THROW(WeightSpec::shared(VectorXd{{0.25, 0.5, 0.25}}));
  EXPECT_NO_THROW(WeightSpec::per_observation(MatrixXd{{0.7, 0.3}, {0.1, 0.9}}));
  EXPECT_NO_THROW(WeightSpec::unconstrained(MatrixXd{{2.0, -1.0}}));
}

TEST(ObservationCovariance, SingleMeasurementCollapse) {
  const VectorXd x{{0.0, 0.5, 2.0}};
  const ObservationSet obs = single_measurement(x, VectorXd::Zero(3));
  const GpmmModel model = se_model(1.5, 0.8, 0.2, 0.05, WeightSpec::shared(VectorXd{{1.0}}));
  const MatrixXd expected = gram(model.kernel, x) + 0.25 * MatrixXd::Identity(3, 3);
  EXPECT_LE((observation_covariance(model, obs) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ObservationCovariance, HandExpandedDoubleSum) {
  ObservationSet obs;
  obs.locations = MatrixXd{{0.0, 0.4}, {1.0, 1.7}};
  obs.values = VectorXd::Zero(2);
  const GpmmModel model = se_model(1.0, 1.0, 0.0, 0.0, WeightSpec::shared(VectorXd{{0.5, 0.5}}));
  double sum = 0.0;
  for (int j = 0; j < 2; ++j)
    for (int jj = 0; jj < 2; ++jj) sum += oracle::se(1.0, 1.0, obs.locations(0, j), obs.locations(1, jj));
  const MatrixXd ky = observation_covariance(model, obs);
  EXPECT_NEAR(ky(0, 1), 0.25 * sum, 1e-15);
  EXPECT_EQ(ky(0, 1), ky(1, 0));
}

TEST(ObservationCovariance, CoincidentLocationAddsMeasurementNoise) {
  ObservationSet distinct;
  distinct.locations = MatrixXd{{0.0, 0.4}, {0.1, 1.7}};
  distinct.values = VectorXd::Zero(2);
  ObservationSet shared = distinct;
  shared.locations(1, 0) = shared.locations(0, 0);  // x_{1,1} = x_{2,1}

  const WeightSpec w = WeightSpec::per_observation(MatrixXd{{0.3, 0.7}, {0.6, 0.4}});
  const GpmmModel model = se_model(1.0, 1.0, 0.5, 0.1, w);

  GpmmModel no_eps = model;
  no_eps.measurement_noise = 0.0;
  EXPECT_NEAR(observation_covariance(model, shared)(0, 1) - observation_covariance(no_eps, shared)(0, 1),
              0.3 * 0.6 * 0.5, 1e-15);
  EXPECT_EQ(observation_covariance(model, distinct)(0, 1), observation_covariance(no_eps, distinct)(0, 1));
}

TEST(ObservationCovariance, ExactlySymmetric) {
  std::mt19937_64 rng(3);
  const ObservationSet obs = random_mixture(rng, 15, 4);
  const GpmmModel model = se_model(1.0, 0.6, 0.1, 0.2, WeightSpec::shared(VectorXd{{0.1, 0.4, 0.4, 0.1}}));
  const MatrixXd ky = observation_covariance(model, obs);
  EXPECT_EQ((ky - ky.transpose()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ObservationSolver, JitterRescuesSingularCovariance) {
  // Two identical observations and no noise: K_y is exactly singular.
  const ObservationSet obs = single_measurement(VectorXd{{0.0, 0.0}}, VectorXd{{1.0, 1.0}});
  const GpmmModel model = se_model(1.0, 1.0, 0.0, 0.0, WeightSpec::shared(VectorXd{{1.0}}));
  const ObservationSolver solver(model, obs);
  EXPECT_GT(solver.jitter(), 0.0);
  EXPECT_LE(solver.jitter(), 1e-4);
  EXPECT_TRUE(std::isfinite(solver.negative_log_likelihood()));
}

TEST(ObservationSolver, NoJitterWhenNoiseSuffices) {
  const ObservationSet obs = single_measurement(VectorXd{{0.0, 1.0}}, VectorXd{{1.0, 1.0}});
  const GpmmModel model = se_model(1.0, 1.0, 0.0, 0.1, WeightSpec::shared(VectorXd{{1.0}}));
  EXPECT_EQ(ObservationSolver(model, obs).jitter(), 0.0);
}

TEST(ObservationSolver, FactorizationFailureNamesJitter) {
  const ObservationSet obs = single_measurement(VectorXd{{0.0, 0.0}}, VectorXd{{1.0, 1.0}});
  GpmmModel model = se_model(1.0, 1.0, 0.0, 0.0, WeightSpec::shared(VectorXd{{1.0}}));
  model.jitter = {0.0, 0.0, 10.0};
  try {
    (void)ObservationSolver(model, obs);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("jitter"), std::string::npos);
  }
}

TEST(CrossCovariance, SingleMeasurementIsGram) {
  const VectorXd x{{0.0, 0.5, 2.0}};
  const VectorXd q{{-1.0, 0.25}};
  const ObservationSet obs = single_measurement(x, VectorXd::Zero(3));
  const GpmmModel model = se_model(1.5, 0.8, 0.2, 0.05, WeightSpec::shared(VectorXd{{1.0}}));
  EXPECT_LE((cross_covariance(model, obs, q) - gram(model.kernel, q, x)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(CrossCovariance, OneHotStencilPicksFirstLocation) {
  std::mt19937_64 rng(5);
  const ObservationSet obs = random_mixture(rng, 4, 3);
  const GpmmModel model = se_model(1.0, 1.0, 0.0, 0.1, WeightSpec::per_observation(MatrixXd{
                                                            {1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}}));
  const VectorXd q{{0.0, 1.0}};
  const MatrixXd kfy = cross_covariance(model, obs, q);
  for (int qq = 0; qq < 2; ++qq)
    for (int i = 0; i < 4; ++i) EXPECT_EQ(kfy(qq, i), eval(model.kernel, q[qq], obs.locations(i, 0)));
}

TEST(CrossCovariance, UniformStencilAverages) {
  std::mt19937_64 rng(6);
  const ObservationSet obs = random_mixture(rng, 5, 4);
  const GpmmModel model = se_model(1.0, 0.9, 0.0, 0.1, WeightSpec::shared(VectorXd::Constant(4, 0.25)));
  const VectorXd q{{-2.0, 0.0, 3.0}};
  const MatrixXd kfy = cross_covariance(model, obs, q);
  for (int qq = 0; qq < 3; ++qq)
    for (int i = 0; i < 5; ++i) {
      double avg = 0.0;
      for (int j = 0; j < 4; ++j) avg += oracle::se(1.0, 0.9, q[qq], obs.locations(i, j));
      EXPECT_NEAR(kfy(qq, i), avg / 4.0, 1e-15);
    }
}

TEST(CrossCovariance, EmptyQueryRejected) {
  const ObservationSet obs = single_measurement(VectorXd{{0.0}}, VectorXd{{1.0}});
  const GpmmModel model = se_model(1.0, 1.0, 0.0, 0.1, WeightSpec::shared(VectorXd{{1.0}}));
  EXPECT_THROW(cross_covariance(model, obs, VectorXd{}), DomainError);
}

TEST(Posterior, NoObservationsIsPrior) {
  ObservationSet empty;
  empty.locations.resize(0, 3);
  const GpmmModel model = se_model(2.0, 1.0, 0.1, 0.1, WeightSpec::shared(VectorXd::Constant(3, 1.0 / 3.0)));
  const Posterior p = posterior(model, empty, VectorXd{{0.0, 1.0}});
  EXPECT_TRUE(p.mean.isZero(0.0));
  EXPECT_EQ(p.variance, VectorXd::Constant(2, 2.0));
}

TEST(Posterior, MatchesStandardGpOracle) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::normal_distribution<double> z;
  VectorXd x(12), y(12);
  for (int k = 0; k < 12; ++k) {
    x[k] = u(rng);
    y[k] = std::sin(x[k]) + 0.1 * z(rng);
  }
  const VectorXd q = VectorXd::LinSpaced(9, -3.5, 3.5);
  const GpmmModel model = se_model(1.2, 0.7, 0.0, 0.05, WeightSpec::shared(VectorXd{{1.0}}));
  const Posterior p = posterior(model, single_measurement(x, y), q);
  const auto ref = oracle::gp_regression(1.2, 0.7, 0.05, x, y, q);
  EXPECT_LE((p.mean - ref.mean).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE((p.variance - ref.variance).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(negative_log_likelihood(model, single_measurement(x, y)), ref.nll, 1e-8);
}

TEST(Posterior, ScalingObservationsScalesMean) {
  std::mt19937_64 rng(8);
  const ObservationSet obs = random_mixture(rng, 10, 3);
  ObservationSet scaled = obs;
  scaled.values *= -2.5;
  const GpmmModel model = se_model(1.0, 1.0, 0.05, 0.05, WeightSpec::shared(VectorXd{{0.25, 0.5, 0.25}}));
  const VectorXd q = VectorXd::LinSpaced(7, -4.0, 4.0);
  const Posterior a = posterior(model, obs, q);
  const Posterior b = posterior(model, scaled, q);
  EXPECT_LE((b.mean - (-2.5) * a.mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(a.variance, b.variance);
}

TEST(Posterior, VarianceBounds) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 10; ++t) {
    const ObservationSet obs = random_mixture(rng, 20, 5);
    const GpmmModel model =
        se_model(1.0, 0.5, 1e-4, 1e-4, WeightSpec::shared(VectorXd{{0.1, 0.2, 0.4, 0.2, 0.1}}));
    const VectorXd q = VectorXd::LinSpaced(40, -5.0, 5.0);
    const Posterior p = posterior(model, obs, q);
    for (int k = 0; k < q.size(); ++k) {
      EXPECT_GE(p.variance[k], 0.0);
      EXPECT_LE(p.variance[k], eval(model.kernel, q[k], q[k]) + 1e-8);
    }
  }
}

TEST(Posterior, AddingObservationNeverIncreasesVariance) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 20; ++t) {
    const ObservationSet full = random_mixture(rng, 9, 3);
    ObservationSet fewer;
    fewer.locations = full.locations.topRows(8);
    fewer.values = full.values.head(8);
    const GpmmModel model = se_model(1.0, 0.8, 0.02, 0.05, WeightSpec::shared(VectorXd{{0.3, 0.4, 0.3}}));
    const VectorXd q = VectorXd::LinSpaced(30, -5.0, 5.0);
    const Posterior a = posterior(model, fewer, q);
    const Posterior b = posterior(model, full, q);
    EXPECT_LE((b.variance - a.variance).maxCoeff(), 1e-8);
  }
}

TEST(Posterior, PermutationInvariant) {
  std::mt19937_64 rng(13);
  const ObservationSet obs = random_mixture(rng, 12, 3);
  std::vector<Index> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  ObservationSet shuffled = obs;
  for (Index i = 0; i < 12; ++i) {
    shuffled.locations.row(i) = obs.locations.row(perm[static_cast<std::size_t>(i)]);
    shuffled.values[i] = obs.values[perm[static_cast<std::size_t>(i)]];
  }
  const GpmmModel model = se_model(1.0, 0.8, 0.02, 0.05, WeightSpec::shared(VectorXd{{0.3, 0.4, 0.3}}));
  const VectorXd q = VectorXd::LinSpaced(25, -5.0, 5.0);
  const Posterior a = posterior(model, obs, q);
  const Posterior b = posterior(model, shuffled, q);
  EXPECT_LE((a.mean - b.mean).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((a.variance - b.variance).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(NegativeLogLikelihood, ScalarCases) {
  // K_y = 0.5 + 0.25 + 0.25 = 1.
  const GpmmModel model = se_model(0.5, 1.0, 0.25, 0.25, WeightSpec::shared(VectorXd{{1.0}}));
  EXPECT_NEAR(negative_log_likelihood(model, single_measurement(VectorXd{{0.0}}, VectorXd{{0.0}})),
              0.9189385332046727, 1e-12);
  EXPECT_NEAR(negative_log_likelihood(model, single_measurement(VectorXd{{0.0}}, VectorXd{{1.0}})),
              1.4189385332046727, 1e-12);
}

TEST(NegativeLogLikelihood, EvenInObservations) {
  std::mt19937_64 rng(14);
  const ObservationSet obs = random_mixture(rng, 10, 3);
  ObservationSet neg = obs;
  neg.values = -obs.values;
  const GpmmModel model = se_model(1.0, 1.0, 0.05, 0.05, WeightSpec::shared(VectorXd{{0.25, 0.5, 0.25}}));
  EXPECT_EQ(negative_log_likelihood(model, obs), negative_log_likelihood(model, neg));
}
