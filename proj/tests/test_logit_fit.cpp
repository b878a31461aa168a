#include <gtest/gtest.h>

#include <mnarhmm/logit_fit.hpp>
#include <mnarhmm/model.hpp>

#include <random>

using namespace mnarhmm;

namespace {

struct LogisticData {
  Eigen::MatrixXd x;
  Eigen::VectorXd y, w;
};

LogisticData random_logistic(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> norm;
  std::uniform_real_distribution<double> unif;
  LogisticData d{Eigen::MatrixXd(n, 3), Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (int i = 0; i < n; ++i) {
    d.x.row(i) << 1.0, norm(rng), norm(rng);
    const double p = logistic(-0.5 + 1.2 * d.x(i, 1) - 0.7 * d.x(i, 2));
    d.y(i) = unif(rng) < p ? 1.0 : 0.0;
    d.w(i) = 0.2 + unif(rng);
  }
  return d;
}

}  // namespace

TEST(Irls, InterceptOnlyClosedForm) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(4, 1);
  Eigen::VectorXd y(4), w(4);
  y << 1, 0, 0, 0;
  w << 1, 1, 1, 1;
  const auto fit = weighted_logistic_irls(x, y, w);
  EXPECT_NEAR(fit.coefficients(0), std::log(0.25 / 0.75), 1e-9);
  EXPECT_NEAR(fit.coefficients(0), -1.0986123, 1e-7);
  EXPECT_TRUE(fit.converged);
  EXPECT_FALSE(fit.separated);
}

TEST(Irls, FiniteDifferenceGradientVanishes) {
  std::mt19937_64 rng(4);
  const auto d = random_logistic(400, rng);
  const auto fit = weighted_logistic_irls(d.x, d.y, d.w);
  ASSERT_TRUE(fit.converged);
  const double h = 1e-5;
  for (int j = 0; j < 3; ++j) {
    Eigen::VectorXd up = fit.coefficients, dn = fit.coefficients;
    up(j) += h;
    dn(j) -= h;
    const double g = (weighted_logistic_log_likelihood(d.x, d.y, d.w, up) -
                      weighted_logistic_log_likelihood(d.x, d.y, d.w, dn)) / (2 * h);
    EXPECT_LT(std::fabs(g), 1e-6);
  }
}

TEST(Irls, SeparatedDataHitsCap) {
  Eigen::MatrixXd x(6, 2);
  x << 1, -3, 1, -2, 1, -1, 1, 1, 1, 2, 1, 3;
  Eigen::VectorXd y(6);
  y << 0, 0, 0, 1, 1, 1;
  const auto fit = weighted_logistic_irls(x, y, Eigen::VectorXd::Ones(6));
  EXPECT_TRUE(fit.separated);
  EXPECT_LE(fit.coefficients.cwiseAbs().maxCoeff(), kCoefficientCap);
}

TEST(Irls, AllZeroTargetsSeparate) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(5, 1);
  const auto fit = weighted_logistic_irls(x, Eigen::VectorXd::Zero(5), Eigen::VectorXd::Ones(5));
  EXPECT_TRUE(fit.separated);
  EXPECT_EQ(fit.coefficients(0), -kCoefficientCap);
}

TEST(Irls, RankDeficientDesign) {
  Eigen::MatrixXd x(4, 3);
  x << 1, 1, 2, 1, 2, 4, 1, 3, 6, 1, 4, 8;
  Eigen::VectorXd y(4);
  y << 0, 1, 0, 1;
  EXPECT_THROW(weighted_logistic_irls(x, y, Eigen::VectorXd::Ones(4)), RankError);
}

TEST(Irls, WarmStartNeverWorse) {
  std::mt19937_64 rng(8);
  const auto d = random_logistic(200, rng);
  NewtonOptions one_step;
  one_step.max_iterations = 1;
  const Eigen::VectorXd start = Eigen::Vector3d(3.0, -3.0, 3.0);
  const auto fit = weighted_logistic_irls(d.x, d.y, d.w, one_step, start);
  EXPECT_GE(fit.log_likelihood, weighted_logistic_log_likelihood(d.x, d.y, d.w, start));
}

TEST(Multinomial, ClosedFormProportions) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(1, 1);
  Eigen::MatrixXd w(1, 3);
  w << 8, 1, 1;
  const auto fit = fit_multinomial(x, w);
  MultinomialLogit m;
  m.coefficients = fit.coefficients;
  const auto p = m.probabilities(Eigen::VectorXd::Ones(1));
  EXPECT_NEAR(p(0), 0.8, 1e-12);
  EXPECT_NEAR(p(1), 0.1, 1e-12);
  EXPECT_NEAR(p(2), 0.1, 1e-12);
}

TEST(Multinomial, EqualWeightsGiveZeroCoefficients) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> norm;
  Eigen::MatrixXd x(50, 2);
  for (int i = 0; i < 50; ++i) x.row(i) << 1.0, norm(rng);
  const auto fit = fit_multinomial(x, Eigen::MatrixXd::Ones(50, 3));
  EXPECT_LT(fit.coefficients.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Multinomial, RecoversGeneratingCoefficients) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> norm;
  std::uniform_real_distribution<double> unif;
  MultinomialLogit truth;
  truth.covariates = {"x"};
  truth.coefficients.resize(2, 2);
  truth.coefficients << -0.5, 1.0, 0.3, -0.8;
  const int n = 20000;
  Eigen::MatrixXd x(n, 2), w = Eigen::MatrixXd::Zero(n, 3);
  for (int i = 0; i < n; ++i) {
    x.row(i) << 1.0, norm(rng);
    const auto p = truth.probabilities(x.row(i).transpose());
    const double u = unif(rng);
    w(i, u < p(0) ? 0 : (u < p(0) + p(1) ? 1 : 2)) = 1.0;
  }
  const auto fit = fit_multinomial(x, w);
  EXPECT_TRUE(fit.converged);
  EXPECT_LT((fit.coefficients - truth.coefficients).cwiseAbs().maxCoeff(), 0.06);
}

TEST(Multinomial, NeverDecreasesObjectiveFromWarmStart) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> norm;
  std::uniform_real_distribution<double> unif;
  Eigen::MatrixXd x(100, 2), w(100, 3);
  for (int i = 0; i < 100; ++i) {
    x.row(i) << 1.0, norm(rng);
    w.row(i) << unif(rng), unif(rng), unif(rng);
  }
  Eigen::MatrixXd start(2, 2);
  start << 5, -5, -5, 5;
  NewtonOptions opt;
  opt.max_iterations = 1;
  const auto fit = fit_multinomial(x, w, opt, start);
  EXPECT_GE(fit.log_likelihood, weighted_multinomial_log_likelihood(x, w, start));
}

TEST(Multinomial, ZeroWeightIsDegenerate) {
  EXPECT_THROW(fit_multinomial(Eigen::MatrixXd::Ones(3, 1), Eigen::MatrixXd::Zero(3, 2)), DegenerateStateError);
}
