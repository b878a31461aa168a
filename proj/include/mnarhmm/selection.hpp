#pragma once

// Information criteria, likelihood-ratio tests, equality constraints and
// Wald intervals from a finite-difference observed information matrix.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mnarhmm/error.hpp"
#include "mnarhmm/estimation.hpp"
#include "mnarhmm/inference.hpp"
#include "mnarhmm/math.hpp"
#include "mnarhmm/model.hpp"
#include "mnarhmm/parallel.hpp"

namespace mnarhmm {

inline double aic(double log_likelihood, int free_count) { return -2.0 * log_likelihood + 2.0 * free_count; }

inline double bic(double log_likelihood, int free_count, std::size_t nobs) {
  if (nobs < 1) throw InputError("bic: nobs must be >= 1");
  return -2.0 * log_likelihood + std::log(static_cast<double>(nobs)) * free_count;
}

/// Free count plus the reference-category coefficients that the
/// multinomial logits pin at zero.
inline int count_raw_parameters(const HmmModel& model, const Constraints& constraints) {
  return count_free_parameters(model, constraints) + model.initial.n_predictors() +
         model.n_states * model.transition.front().n_predictors();
}

struct ComparisonRow {
  std::string label;
  int n_states = 0;
  double log_likelihood = 0.0;
  int raw_parameters = 0;
  int free_parameters = 0;
  double aic = 0.0;
  double bic = 0.0;
};

inline ComparisonRow make_comparison_row(std::string label, const HmmModel& model, const Constraints& constraints,
                                         double log_likelihood, std::size_t nobs) {
  ComparisonRow r;
  r.label = std::move(label);
  r.n_states = model.n_states;
  r.log_likelihood = log_likelihood;
  r.free_parameters = count_free_parameters(model, constraints);
  r.raw_parameters = count_raw_parameters(model, constraints);
  r.aic = aic(log_likelihood, r.free_parameters);
  r.bic = bic(log_likelihood, r.free_parameters, nobs);
  return r;
}

inline ComparisonRow make_comparison_row(std::string label, const FitResult& fit, std::size_t nobs) {
  return make_comparison_row(std::move(label), fit.model, fit.constraints, fit.log_likelihood(), nobs);
}

/// 1-based ranks, smallest value first; ties share the lower rank.
inline std::vector<int> ascending_ranks(const std::vector<double>& v) {
  std::vector<int> rank(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    int r = 1;
    for (std::size_t j = 0; j < v.size(); ++j)
      if (v[j] < v[i]) ++r;
    rank[i] = r;
  }
  return rank;
}

inline void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows) {
  std::vector<double> a, b;
  for (const auto& r : rows) {
    a.push_back(r.aic);
    b.push_back(r.bic);
  }
  const auto ra = ascending_ranks(a), rb = ascending_ranks(b);
  out << "model,states,loglik,raw_par,free_par,AIC,BIC,AIC_rank,BIC_rank\n";
  out << std::setprecision(10);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out << r.label << ',' << r.n_states << ',' << r.log_likelihood << ',' << r.raw_parameters << ','
        << r.free_parameters << ',' << r.aic << ',' << r.bic << ',' << ra[i] << ',' << rb[i] << '\n';
  }
}

// ---------------------------------------------------------------------------
// Likelihood-ratio test

struct LrtResult {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
};

inline constexpr double kNestingTolerance = 1e-6;

inline LrtResult likelihood_ratio_test(double ll_full, double ll_restricted, int df) {
  if (df < 1) throw NestingError("likelihood ratio test needs df >= 1, got " + std::to_string(df));
  double stat = 2.0 * (ll_full - ll_restricted);
  if (stat < -kNestingTolerance) {
    std::ostringstream msg;
    msg << "restricted model fits better than the full model (LL " << ll_restricted << " > " << ll_full
        << "); models are not nested or the full fit is not at its optimum";
    throw NestingError(msg.str());
  }
  stat = std::max(stat, 0.0);
  return {stat, df, chi_square_upper_tail(stat, df)};
}

/// LRT between two comparison rows; df is the difference in free counts.
inline LrtResult likelihood_ratio_test(const ComparisonRow& full, const ComparisonRow& restricted) {
  const int df = full.free_parameters - restricted.free_parameters;
  if (df < 1)
    throw NestingError("'" + full.label + "' (" + std::to_string(full.free_parameters) + " parameters) does not have more free parameters than '" +
                       restricted.label + "' (" + std::to_string(restricted.free_parameters) + ")");
  return likelihood_ratio_test(full.log_likelihood, restricted.log_likelihood, df);
}

// ---------------------------------------------------------------------------
// Equality constraints

/// A model structure plus the estimation settings used to fit it.
struct FitSpec {
  HmmModel model;
  FitConfig config{};
};

/// Ties the missingness parameters across states. Starting values become the
/// state average.
inline FitSpec constrain_missingness_equal(FitSpec spec) {
  if (is_ignorable(spec.model.missingness))
    throw InputError("cannot constrain missingness across states: the missingness model is ignorable");
  spec.config.constraints.missingness_equal_across_states = true;
  detail::tie_missingness(spec.model);
  return spec;
}

// ---------------------------------------------------------------------------
// Parameter packing

struct PackedParameter {
  std::string name;
  double value = 0.0;
  bool boundary = false;  // adjacent to a constraint boundary; held fixed in the Hessian
};

inline constexpr double kBoundaryLogit = 12.0;

namespace detail {

inline std::string term_name(const std::vector<std::string>& covs, Eigen::Index c) {
  return c == 0 ? std::string("(Intercept)") : covs[static_cast<std::size_t>(c - 1)];
}

inline double fd_step(double v) { return 1e-4 * std::max(1.0, std::fabs(v)); }

// Visits every free parameter in a fixed order; fn(name, ref, kind).
enum class ParamKind { Mean, Sigma, Logit, Probability, Coefficient };

template <typename Model, typename Fn>
void visit_parameters(Model& model, bool tied, Fn&& fn) {
  const int k = model.n_states;
  for (int s = 0; s < k; ++s) fn("mu_" + std::to_string(s + 1), model.emissions[static_cast<std::size_t>(s)].mu, ParamKind::Mean);
  for (int s = 0; s < k; ++s)
    fn("sigma_" + std::to_string(s + 1), model.emissions[static_cast<std::size_t>(s)].sigma, ParamKind::Sigma);
  auto& init = model.initial;
  for (Eigen::Index r = 0; r < init.coefficients.rows(); ++r)
    for (Eigen::Index c = 0; c < init.coefficients.cols(); ++c)
      fn("init_" + std::to_string(r + 2) + "_" + term_name(init.covariates, c), init.coefficients(r, c), ParamKind::Logit);
  for (int i = 0; i < k; ++i) {
    auto& row = model.transition[static_cast<std::size_t>(i)];
    for (Eigen::Index r = 0; r < row.coefficients.rows(); ++r)
      for (Eigen::Index c = 0; c < row.coefficients.cols(); ++c)
        fn("trans_" + std::to_string(i + 1) + "_" + std::to_string(r + 2) + "_" + term_name(row.covariates, c),
           row.coefficients(r, c), ParamKind::Logit);
  }
  if (auto* b = std::get_if<missingness::StateBernoulli>(&model.missingness)) {
    if (tied) {
      fn(std::string("phi"), b->phi[0], ParamKind::Probability);
    } else {
      for (int s = 0; s < k; ++s) fn("phi_" + std::to_string(s + 1), b->phi[static_cast<std::size_t>(s)], ParamKind::Probability);
    }
  } else if (auto* l = std::get_if<missingness::StateLogistic>(&model.missingness)) {
    const int groups = tied ? 1 : k;
    for (int s = 0; s < groups; ++s)
      for (Eigen::Index c = 0; c < l->coefficients.cols(); ++c)
        fn("miss_" + (tied ? std::string() : std::to_string(s + 1) + "_") + term_name(l->covariates, c),
           l->coefficients(s, c), ParamKind::Coefficient);
  }
}

inline bool near_boundary(ParamKind kind, double v) {
  const double h = 2.0 * fd_step(v);
  switch (kind) {
    case ParamKind::Sigma: return v - h <= kSigmaFloor;
    case ParamKind::Probability: return v - h <= kProbEps || v + h >= 1.0 - kProbEps;
    case ParamKind::Logit: return std::fabs(v) >= kBoundaryLogit;
    case ParamKind::Coefficient: return std::fabs(v) + h >= kCoefficientCap;
    case ParamKind::Mean: return false;
  }
  return false;
}

}  // namespace detail

/// Free parameters of `model` in a fixed order. Reference-category logit
/// coefficients are omitted; tied missingness parameters appear once.
inline std::vector<PackedParameter> pack_parameters(const HmmModel& model, const Constraints& constraints = {}) {
  std::vector<PackedParameter> out;
  HmmModel copy = model;
  detail::visit_parameters(copy, constraints.missingness_equal_across_states,
                           [&](const std::string& name, double& v, detail::ParamKind kind) {
                             out.push_back({name, v, detail::near_boundary(kind, v)});
                           });
  return out;
}

/// Inverse of pack_parameters on a model of the same structure.
inline HmmModel unpack_parameters(const HmmModel& shape, const Eigen::VectorXd& values, const Constraints& constraints = {}) {
  HmmModel m = shape;
  Eigen::Index i = 0;
  detail::visit_parameters(m, constraints.missingness_equal_across_states,
                           [&](const std::string&, double& v, detail::ParamKind) {
                             if (i >= values.size()) throw InputError("parameter vector too short");
                             v = values(i++);
                           });
  if (i != values.size()) throw InputError("parameter vector too long");
  if (constraints.missingness_equal_across_states) {
    if (auto* b = std::get_if<missingness::StateBernoulli>(&m.missingness)) {
      std::fill(b->phi.begin(), b->phi.end(), b->phi[0]);
    } else if (auto* l = std::get_if<missingness::StateLogistic>(&m.missingness)) {
      for (Eigen::Index s = 1; s < l->coefficients.rows(); ++s) l->coefficients.row(s) = l->coefficients.row(0);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Numerical Hessian and Wald intervals

/// Central-difference Hessian of f at x with per-coordinate steps h.
inline Eigen::MatrixXd numerical_hessian(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& h, unsigned threads = default_thread_count()) {
  const Eigen::Index p = x.size();
  std::vector<std::pair<Eigen::Index, Eigen::Index>> cells;
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) cells.emplace_back(i, j);
  const double f0 = f(x);
  Eigen::MatrixXd hess(p, p);
  parallel_for(
      cells.size(),
      [&](std::size_t c) {
        const auto [i, j] = cells[c];
        auto at = [&](double si, double sj) {
          Eigen::VectorXd y = x;
          y(i) += si * h(i);
          y(j) += sj * h(j);
          return f(y);
        };
        double v;
        if (i == j) {
          v = (at(0.5, 0.5) - 2.0 * f0 + at(-0.5, -0.5)) / (h(i) * h(i));
        } else {
          v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h(i) * h(j));
        }
        hess(i, j) = v;
        hess(j, i) = v;
      },
      threads);
  return hess;
}

struct ParameterInterval {
  std::string name;
  double estimate = 0.0;
  double se = std::numeric_limits<double>::quiet_NaN();
  double lower = std::numeric_limits<double>::quiet_NaN();
  double upper = std::numeric_limits<double>::quiet_NaN();
  bool boundary = false;
};

struct ConfidenceIntervals {
  double level = 0.95;
  double z = 0.0;
  std::vector<ParameterInterval> parameters;

  const ParameterInterval& at(const std::string& name) const {
    for (const auto& p : parameters)
      if (p.name == name) return p;
    throw InputError("no parameter named '" + name + "'");
  }
};

/// Wald intervals from the inverse observed information of the free
/// parameters. Parameters adjacent to a boundary are flagged, held at their
/// estimate and receive no interval.
inline ConfidenceIntervals approx_confidence_intervals(const HmmModel& model, const Constraints& constraints,
                                                       const Dataset& dataset, double level = 0.95,
                                                       unsigned threads = default_thread_count()) {
  if (!(level > 0.0 && level < 1.0)) throw InputError("confidence level must lie in (0, 1)");
  const auto packed = pack_parameters(model, constraints);
  std::vector<Eigen::Index> active;
  for (std::size_t i = 0; i < packed.size(); ++i)
    if (!packed[i].boundary) active.push_back(static_cast<Eigen::Index>(i));
  Eigen::VectorXd full(static_cast<Eigen::Index>(packed.size()));
  for (std::size_t i = 0; i < packed.size(); ++i) full(static_cast<Eigen::Index>(i)) = packed[i].value;

  const auto p = static_cast<Eigen::Index>(active.size());
  Eigen::VectorXd x(p), h(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    x(i) = full(active[static_cast<std::size_t>(i)]);
    h(i) = detail::fd_step(x(i));
  }
  auto f = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd y = full;
    for (Eigen::Index i = 0; i < p; ++i) y(active[static_cast<std::size_t>(i)]) = v(i);
    return log_likelihood(unpack_parameters(model, y, constraints), dataset);
  };

  ConfidenceIntervals out;
  out.level = level;
  out.z = normal_quantile(0.5 + 0.5 * level);
  for (const auto& q : packed) out.parameters.push_back({q.name, q.value});
  for (std::size_t i = 0; i < packed.size(); ++i) out.parameters[i].boundary = packed[i].boundary;
  if (p == 0) return out;

  const Eigen::MatrixXd info = -numerical_hessian(f, x, h, threads);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info);
  const Eigen::VectorXd lambda = eig.eigenvalues();
  const double tol = 1e-9 * std::max(lambda.cwiseAbs().maxCoeff(), 1e-300);
  if (lambda(0) <= tol) {
    std::vector<std::string> involved;
    for (Eigen::Index e = 0; e < p && lambda(e) <= tol; ++e)
      for (Eigen::Index i = 0; i < p; ++i) {
        const auto& name = packed[static_cast<std::size_t>(active[static_cast<std::size_t>(i)])].name;
        if (std::fabs(eig.eigenvectors()(i, e)) > 0.1 && std::find(involved.begin(), involved.end(), name) == involved.end())
          involved.push_back(name);
      }
    std::ostringstream msg;
    msg << "observed information is not positive definite (smallest eigenvalue " << lambda(0) << "); involved parameters:";
    for (const auto& n : involved) msg << ' ' << n;
    throw SingularInformationError(msg.str());
  }
  const Eigen::MatrixXd cov = eig.eigenvectors() * lambda.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  for (Eigen::Index i = 0; i < p; ++i) {
    auto& q = out.parameters[static_cast<std::size_t>(active[static_cast<std::size_t>(i)])];
    q.se = std::sqrt(cov(i, i));
    q.lower = q.estimate - out.z * q.se;
    q.upper = q.estimate + out.z * q.se;
  }
  return out;
}

inline ConfidenceIntervals approx_confidence_intervals(const FitResult& fit, const Dataset& dataset, double level = 0.95,
                                                       unsigned threads = default_thread_count()) {
  if (!fit.converged) throw InputError("confidence intervals need a converged fit");
  return approx_confidence_intervals(fit.model, fit.constraints, dataset, level, threads);
}

inline void write_intervals_csv(std::ostream& out, const ConfidenceIntervals& ci) {
  out << "parameter,estimate,se,lower,upper,boundary\n" << std::setprecision(10);
  for (const auto& p : ci.parameters) {
    out << p.name << ',' << p.estimate << ',';
    if (p.boundary) {
      out << ",,,1\n";
    } else {
      out << p.se << ',' << p.lower << ',' << p.upper << ",0\n";
    }
  }
}

}  // namespace mnarhmm
