#pragma once

// Weighted logistic and multinomial-logit maximum likelihood by Newton's
// method (IRLS), used both by the EM M-steps and the missingness GLM.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "mnarhmm/error.hpp"
#include "mnarhmm/math.hpp"

namespace mnarhmm {

struct NewtonOptions {
  int max_iterations = 50;
  double gradient_tolerance = 1e-8;
  double ridge = 1e-8;
  double cap = kCoefficientCap;
};

struct LogisticFit {
  Eigen::VectorXd coefficients;
  double log_likelihood = 0.0;
  double gradient_norm = 0.0;  // max-abs gradient component at exit
  int iterations = 0;
  bool converged = false;
  bool separated = false;  // some coefficient sits at the magnitude cap
};

namespace detail {

// log(1 + exp(x)) without overflow.
inline double log1p_exp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Throws RankError when the weighted Gram matrix of `x` is numerically singular.
inline void check_design_rank(const Eigen::MatrixXd& x, const Eigen::VectorXd& w, const char* what) {
  Eigen::MatrixXd gram = x.transpose() * w.asDiagonal() * x;
  Eigen::VectorXd scale = gram.diagonal();
  for (Eigen::Index j = 0; j < scale.size(); ++j) {
    if (!(scale(j) > 0.0)) throw RankError(std::string(what) + ": design column " + std::to_string(j) + " has no weight");
    scale(j) = 1.0 / std::sqrt(scale(j));
  }
  Eigen::MatrixXd corr = scale.asDiagonal() * gram * scale.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr, Eigen::EigenvaluesOnly);
  const auto& ev = eig.eigenvalues();
  if (ev.minCoeff() < 1e-12 * ev.maxCoeff()) throw RankError(std::string(what) + ": weighted design is rank deficient");
}

inline Eigen::VectorXd clip(Eigen::VectorXd v, double cap) { return v.cwiseMax(-cap).cwiseMin(cap); }

}  // namespace detail

inline double weighted_logistic_log_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                               const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = x * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    if (w(i) != 0.0) ll += w(i) * (y(i) * eta(i) - detail::log1p_exp(eta(i)));
  return ll;
}

inline Eigen::VectorXd weighted_logistic_gradient(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                                  const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
  Eigen::VectorXd eta = x * beta;
  Eigen::VectorXd r(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) r(i) = w(i) * (y(i) - logistic(eta(i)));
  return x.transpose() * r;
}

/// Maximizes sum_i w_i log Bernoulli(y_i | logistic(x_i . beta)). Each Newton
/// step is halved until the objective does not decrease, so a warm start is
/// never made worse. Coefficients are clipped to +-cap; reaching the cap sets
/// `separated`.
inline LogisticFit weighted_logistic_irls(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                          const NewtonOptions& options = {},
                                          const std::optional<Eigen::VectorXd>& start = std::nullopt) {
  const Eigen::Index p = x.cols();
  if (x.rows() != y.size() || x.rows() != w.size()) throw InputError("logistic regression: dimension mismatch");
  if (!(w.sum() > 0.0)) throw DegenerateStateError("logistic regression: total weight is zero");
  detail::check_design_rank(x, w, "logistic regression");

  LogisticFit fit;
  fit.coefficients = start ? detail::clip(*start, options.cap) : Eigen::VectorXd::Zero(p);
  fit.log_likelihood = weighted_logistic_log_likelihood(x, y, w, fit.coefficients);
  Eigen::VectorXd last_step = Eigen::VectorXd::Zero(p);

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    const Eigen::VectorXd eta = x * fit.coefficients;
    Eigen::VectorXd resid(eta.size()), curv(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double pi = logistic(eta(i));
      resid(i) = w(i) * (y(i) - pi);
      curv(i) = w(i) * pi * (1.0 - pi);
    }
    const Eigen::VectorXd grad = x.transpose() * resid;
    fit.gradient_norm = grad.cwiseAbs().maxCoeff();
    if (fit.gradient_norm <= options.gradient_tolerance) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd info = x.transpose() * curv.asDiagonal() * x;
    info.diagonal().array() += options.ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() != Eigen::Success) throw RankError("logistic regression: information matrix is singular");
    const Eigen::VectorXd target = detail::clip(fit.coefficients + llt.solve(grad), options.cap);

    bool accepted = false;
    double step = 1.0;
    for (int h = 0; h < 40; ++h, step *= 0.5) {
      Eigen::VectorXd cand = fit.coefficients + step * (target - fit.coefficients);
      const double ll = weighted_logistic_log_likelihood(x, y, w, cand);
      if (ll >= fit.log_likelihood) {
        accepted = cand != fit.coefficients && ll - fit.log_likelihood > 1e-15 * std::fabs(ll);
        if (cand != fit.coefficients) last_step = cand - fit.coefficients;
        fit.coefficients = std::move(cand);
        fit.log_likelihood = ll;
        break;
      }
    }
    fit.iterations = iter + 1;
    if (!accepted) break;
  }
  // Separation: the objective still rises along the last Newton direction all
  // the way to the coefficient cap, so the supremum lies at infinity.
  if (last_step.norm() > 0.0) {
    const Eigen::VectorXd u = last_step / last_step.norm();
    double reach = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < p; ++j) {
      if (u(j) > 0.0) reach = std::min(reach, (options.cap - fit.coefficients(j)) / u(j));
      if (u(j) < 0.0) reach = std::min(reach, (-options.cap - fit.coefficients(j)) / u(j));
    }
    if (std::isfinite(reach) && reach > 0.0) {
      const Eigen::VectorXd probe = fit.coefficients + std::min(1.0, reach) * u;
      const Eigen::VectorXd edge = detail::clip(fit.coefficients + reach * u, options.cap);
      const double ll_probe = weighted_logistic_log_likelihood(x, y, w, probe);
      const double ll_edge = weighted_logistic_log_likelihood(x, y, w, edge);
      if (ll_probe > fit.log_likelihood && ll_edge >= ll_probe) {
        fit.coefficients = edge;
        fit.log_likelihood = ll_edge;
      }
    }
  }
  const Eigen::VectorXd grad = weighted_logistic_gradient(x, y, w, fit.coefficients);
  fit.gradient_norm = grad.cwiseAbs().maxCoeff();
  fit.converged = fit.gradient_norm <= options.gradient_tolerance;
  fit.separated = (fit.coefficients.cwiseAbs().array() >= options.cap * (1.0 - 1e-12)).any();
  if (!fit.converged && !fit.separated) {
    // Large samples: the absolute gradient floor sits below rounding noise, so
    // fall back to the Newton decrement (predicted log-likelihood gain).
    const Eigen::VectorXd eta = x * fit.coefficients;
    Eigen::VectorXd curv(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double pi = logistic(eta(i));
      curv(i) = w(i) * pi * (1.0 - pi);
    }
    Eigen::MatrixXd info = x.transpose() * curv.asDiagonal() * x;
    info.diagonal().array() += options.ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() == Eigen::Success) {
      const double decrement = grad.dot(llt.solve(grad));
      fit.converged = decrement <= 1e-12 * std::max(1.0, std::fabs(fit.log_likelihood));
    }
  }
  return fit;
}

struct MultinomialFit {
  Eigen::MatrixXd coefficients;  // (K-1) x P, reference category 0
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// sum_n sum_k W(n,k) log p_k(x_n) for a reference-category multinomial logit.
inline double weighted_multinomial_log_likelihood(const Eigen::MatrixXd& x, const Eigen::MatrixXd& weights,
                                                  const Eigen::MatrixXd& coefficients) {
  const Eigen::Index k = weights.cols();
  double ll = 0.0;
  Eigen::VectorXd eta(k);
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    eta(0) = 0.0;
    eta.tail(k - 1) = coefficients * x.row(n).transpose();
    const double m = eta.maxCoeff();
    const double lse = m + std::log((eta.array() - m).exp().sum());
    for (Eigen::Index c = 0; c < k; ++c)
      if (weights(n, c) != 0.0) ll += weights(n, c) * (eta(c) - lse);
  }
  return ll;
}

/// Maximizes the weighted multinomial log-likelihood. Without covariates
/// (a single intercept column) the solution is the closed-form weighted
/// proportions, clamped away from zero.
inline MultinomialFit fit_multinomial(const Eigen::MatrixXd& x, const Eigen::MatrixXd& weights,
                                      const NewtonOptions& options = {},
                                      const std::optional<Eigen::MatrixXd>& start = std::nullopt) {
  const Eigen::Index k = weights.cols();
  const Eigen::Index p = x.cols();
  if (x.rows() != weights.rows()) throw InputError("multinomial logit: dimension mismatch");
  const Eigen::VectorXd row_mass = weights.rowwise().sum();
  if (!(row_mass.sum() > 0.0)) throw DegenerateStateError("multinomial logit: total weight is zero");

  MultinomialFit fit;
  if (k == 1) {
    fit.coefficients = Eigen::MatrixXd::Zero(0, p);
    fit.converged = true;
    return fit;
  }

  const bool intercept_only = p == 1 && (x.col(0).array() == 1.0).all();
  if (intercept_only) {
    Eigen::VectorXd prob = weights.colwise().sum().transpose();
    prob /= prob.sum();
    prob = prob.cwiseMax(kProbEps);
    prob /= prob.sum();
    fit.coefficients.resize(k - 1, 1);
    for (Eigen::Index c = 1; c < k; ++c) fit.coefficients(c - 1, 0) = std::clamp(std::log(prob(c) / prob(0)), -options.cap, options.cap);
    fit.log_likelihood = weighted_multinomial_log_likelihood(x, weights, fit.coefficients);
    fit.converged = true;
    return fit;
  }

  detail::check_design_rank(x, row_mass, "multinomial logit");
  const Eigen::Index dim = (k - 1) * p;
  fit.coefficients = start ? *start : Eigen::MatrixXd::Zero(k - 1, p);
  fit.coefficients = fit.coefficients.cwiseMax(-options.cap).cwiseMin(options.cap);
  fit.log_likelihood = weighted_multinomial_log_likelihood(x, weights, fit.coefficients);

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    // n x K softmax probabilities, reference column first
    Eigen::MatrixXd prob(x.rows(), k);
    prob.col(0).setZero();
    prob.rightCols(k - 1) = x * fit.coefficients.transpose();
    const Eigen::VectorXd row_max = prob.rowwise().maxCoeff();
    prob = (prob.colwise() - row_max).array().exp().matrix();
    const Eigen::VectorXd norm = prob.rowwise().sum();
    prob = norm.cwiseInverse().asDiagonal() * prob;

    Eigen::VectorXd grad(dim);
    Eigen::MatrixXd info(dim, dim);
    for (Eigen::Index a = 1; a < k; ++a) {
      const Eigen::VectorXd ma = row_mass.cwiseProduct(prob.col(a));
      grad.segment((a - 1) * p, p) = x.transpose() * (weights.col(a) - ma);
      for (Eigen::Index b = a; b < k; ++b) {
        const Eigen::VectorXd h = a == b ? Eigen::VectorXd(ma.cwiseProduct(Eigen::VectorXd::Ones(ma.size()) - prob.col(a)))
                                         : Eigen::VectorXd(-ma.cwiseProduct(prob.col(b)));
        const Eigen::MatrixXd block = x.transpose() * h.asDiagonal() * x;
        info.block((a - 1) * p, (b - 1) * p, p, p) = block;
        if (b != a) info.block((b - 1) * p, (a - 1) * p, p, p) = block.transpose();
      }
    }
    if (grad.cwiseAbs().maxCoeff() <= options.gradient_tolerance) {
      fit.converged = true;
      break;
    }
    info.diagonal().array() += options.ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() != Eigen::Success) throw RankError("multinomial logit: Hessian is singular");
    const Eigen::VectorXd delta = llt.solve(grad);
    Eigen::MatrixXd target = fit.coefficients;
    for (Eigen::Index a = 0; a < k - 1; ++a)
      for (Eigen::Index j = 0; j < p; ++j)
        target(a, j) = std::clamp(target(a, j) + delta(a * p + j), -options.cap, options.cap);

    bool accepted = false;
    double step = 1.0;
    for (int h = 0; h < 40; ++h, step *= 0.5) {
      Eigen::MatrixXd cand = fit.coefficients + step * (target - fit.coefficients);
      const double ll = weighted_multinomial_log_likelihood(x, weights, cand);
      if (ll >= fit.log_likelihood) {
        accepted = cand != fit.coefficients && ll - fit.log_likelihood > 1e-15 * std::fabs(ll);
        fit.coefficients = std::move(cand);
        fit.log_likelihood = ll;
        break;
      }
    }
    fit.iterations = iter + 1;
    if (!accepted) break;
  }
  return fit;
}

}  // namespace mnarhmm
