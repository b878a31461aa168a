#pragma once

// Exact inference for covariate-driven Gaussian HMMs with a missingness channel.
//
// States are 0-based throughout the C++ interface. Files written by the
// command-line tool report 1-based states.
//
// Time convention: the transition into record t (t >= 1, 0-based) uses the
// covariates of record t.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mnarhmm/error.hpp"
#include "mnarhmm/math.hpp"
#include "mnarhmm/model.hpp"

namespace mnarhmm {

/// Covariate design of one series, resolved against a model's covariate
/// registry. Depends on the data and covariate names only, never on
/// parameter values, so it can be reused across EM iterations.
struct SeriesDesign {
  Eigen::VectorXd initial;      // design row of the first record
  Eigen::MatrixXd transition;   // row t-1: design for the move into record t
  Eigen::MatrixXd missingness;  // row t: missingness design of record t (logistic spec only)
  Eigen::VectorXd y;            // response, NaN where missing
  std::vector<unsigned char> missing;

  Eigen::Index length() const { return y.size(); }
};

inline const std::vector<std::string>& missingness_covariates(const MissingnessSpec& spec) {
  static const std::vector<std::string> none;
  if (const auto* l = std::get_if<missingness::StateLogistic>(&spec)) return l->covariates;
  return none;
}

inline SeriesDesign make_design(const HmmModel& model, const TimeSeries& series) {
  series.validate();
  const auto n = static_cast<Eigen::Index>(series.records.size());
  SeriesDesign d;
  d.initial = design_row(model.initial.covariates, series.records.front());
  const auto& trans_names = model.transition.front().covariates;
  d.transition.resize(n - 1, static_cast<Eigen::Index>(trans_names.size()) + 1);
  for (Eigen::Index t = 1; t < n; ++t) d.transition.row(t - 1) = design_row(trans_names, series.records[t]).transpose();
  const auto& miss_names = missingness_covariates(model.missingness);
  if (std::holds_alternative<missingness::StateLogistic>(model.missingness)) {
    d.missingness.resize(n, static_cast<Eigen::Index>(miss_names.size()) + 1);
    for (Eigen::Index t = 0; t < n; ++t) d.missingness.row(t) = design_row(miss_names, series.records[t]).transpose();
  }
  d.y.resize(n);
  d.missing.resize(static_cast<std::size_t>(n));
  for (Eigen::Index t = 0; t < n; ++t) {
    const auto& r = series.records[t];
    d.missing[t] = r.missing() ? 1 : 0;
    d.y(t) = r.missing() ? std::numeric_limits<double>::quiet_NaN() : *r.y;
  }
  return d;
}

/// Parameter-dependent per-step quantities of one series.
struct SeriesTerms {
  Eigen::VectorXd initial;                   // K
  std::vector<Eigen::MatrixXd> transitions;  // one shared matrix, or one per step 1..T-1
  Eigen::MatrixXd emissions;                 // T x K emission weights

  const Eigen::MatrixXd& transition(Eigen::Index step) const {
    return transitions.size() == 1 ? transitions.front() : transitions[static_cast<std::size_t>(step - 1)];
  }
  Eigen::Index length() const { return emissions.rows(); }
  int n_states() const { return static_cast<int>(emissions.cols()); }
};

/// Probability that the response is missing for `state` given the missingness design row.
inline double missing_probability(const MissingnessSpec& spec, int state, const Eigen::Ref<const Eigen::RowVectorXd>& design) {
  if (const auto* b = std::get_if<missingness::StateBernoulli>(&spec)) return b->phi[static_cast<std::size_t>(state)];
  if (const auto* l = std::get_if<missingness::StateLogistic>(&spec)) return logistic(l->coefficients.row(state).dot(design));
  return 0.0;
}

inline Eigen::MatrixXd transition_matrix_from_design(const HmmModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const int k = model.n_states;
  Eigen::MatrixXd a(k, k);
  for (int i = 0; i < k; ++i) a.row(i) = model.transition[static_cast<std::size_t>(i)].probabilities(x).transpose();
  return a;
}

inline SeriesTerms compute_terms(const HmmModel& model, const SeriesDesign& design) {
  const int k = model.n_states;
  const Eigen::Index n = design.length();
  SeriesTerms terms;
  terms.initial = model.initial.probabilities(design.initial);

  const bool time_invariant = model.transition.front().covariates.empty();
  if (n == 1) {
    terms.transitions.push_back(Eigen::MatrixXd::Identity(k, k));  // never used
  } else if (time_invariant) {
    Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
    terms.transitions.push_back(transition_matrix_from_design(model, one));
  } else {
    terms.transitions.reserve(static_cast<std::size_t>(n - 1));
    for (Eigen::Index t = 1; t < n; ++t)
      terms.transitions.push_back(transition_matrix_from_design(model, design.transition.row(t - 1).transpose()));
  }

  terms.emissions.resize(n, k);
  const bool logistic_spec = std::holds_alternative<missingness::StateLogistic>(model.missingness);
  const bool ignorable = is_ignorable(model.missingness);
  for (Eigen::Index t = 0; t < n; ++t) {
    const bool miss = design.missing[static_cast<std::size_t>(t)] != 0;
    for (int s = 0; s < k; ++s) {
      const auto& e = model.emissions[static_cast<std::size_t>(s)];
      double w = miss ? 1.0 : normal_pdf(design.y(t), e.mu, e.sigma);
      if (!ignorable) {
        const double p = logistic_spec ? missing_probability(model.missingness, s, design.missingness.row(t))
                                       : missing_probability(model.missingness, s, Eigen::RowVectorXd());
        w *= miss ? p : 1.0 - p;
      }
      terms.emissions(t, s) = w;
    }
  }
  return terms;
}

inline SeriesTerms compute_terms(const HmmModel& model, const TimeSeries& series) {
  return compute_terms(model, make_design(model, series));
}

/// Initial-state distribution for a record (normally the first of a series).
inline Eigen::VectorXd initial_probs(const HmmModel& model, const Record& record) {
  return model.initial.probabilities(design_row(model.initial.covariates, record));
}

/// Row-stochastic transition matrix for the move into `record`.
inline Eigen::MatrixXd transition_matrix(const HmmModel& model, const Record& record) {
  return transition_matrix_from_design(model, design_row(model.transition.front().covariates, record));
}

/// Joint weight p(y, m | state) of a record; 1 for a missing response under
/// ignorable missingness.
inline double emission_weight(const HmmModel& model, int state, const Record& record) {
  if (state < 0 || state >= model.n_states) throw InputError("state index out of range");
  const auto& e = model.emissions[static_cast<std::size_t>(state)];
  double w = record.missing() ? 1.0 : normal_pdf(*record.y, e.mu, e.sigma);
  if (is_ignorable(model.missingness)) return w;
  Eigen::RowVectorXd x = design_row(missingness_covariates(model.missingness), record).transpose();
  const double p = missing_probability(model.missingness, state, x);
  return w * (record.missing() ? p : 1.0 - p);
}

struct Posteriors {
  Eigen::MatrixXd gamma;            // T x K
  std::vector<Eigen::MatrixXd> xi;  // T-1 slices, K x K; slice t-1 covers the move into t
  Eigen::VectorXd scaling;          // per-step normalizers
  double log_likelihood = 0.0;
};

/// Scaled forward-backward recursion on precomputed terms.
inline Posteriors forward_backward(const SeriesTerms& terms) {
  const Eigen::Index n = terms.length();
  const int k = terms.n_states();
  Eigen::MatrixXd alpha(n, k);
  Eigen::VectorXd c(n);

  auto normalize = [&](Eigen::Index t) {
    const double s = alpha.row(t).sum();
    if (!(s > 0.0) || !std::isfinite(s))
      throw NumericalError("forward recursion degenerate at step " + std::to_string(t + 1) +
                           ": total emission weight is zero");
    c(t) = s;
    alpha.row(t) /= s;
  };

  alpha.row(0) = terms.initial.transpose().cwiseProduct(terms.emissions.row(0));
  normalize(0);
  for (Eigen::Index t = 1; t < n; ++t) {
    alpha.row(t) = (alpha.row(t - 1) * terms.transition(t)).cwiseProduct(terms.emissions.row(t));
    normalize(t);
  }

  Eigen::MatrixXd beta(n, k);
  beta.row(n - 1).setOnes();
  for (Eigen::Index t = n - 2; t >= 0; --t) {
    Eigen::VectorXd v = terms.emissions.row(t + 1).transpose().cwiseProduct(beta.row(t + 1).transpose());
    beta.row(t) = (terms.transition(t + 1) * v).transpose() / c(t + 1);
  }

  Posteriors post;
  post.scaling = c;
  post.log_likelihood = c.array().log().sum();
  post.gamma = alpha.cwiseProduct(beta);
  for (Eigen::Index t = 0; t < n; ++t) post.gamma.row(t) /= post.gamma.row(t).sum();
  post.xi.reserve(static_cast<std::size_t>(std::max<Eigen::Index>(n - 1, 0)));
  for (Eigen::Index t = 1; t < n; ++t) {
    Eigen::RowVectorXd right = terms.emissions.row(t).cwiseProduct(beta.row(t));
    Eigen::MatrixXd slice = (alpha.row(t - 1).transpose() * right).cwiseProduct(terms.transition(t));
    slice /= slice.sum();
    post.xi.push_back(std::move(slice));
  }
  return post;
}

inline Posteriors forward_backward(const HmmModel& model, const TimeSeries& series) {
  return forward_backward(compute_terms(model, series));
}

/// Sum of per-series log-likelihoods; errors name the failing series.
inline double log_likelihood(const HmmModel& model, const Dataset& dataset) {
  if (dataset.series.empty()) throw InputError("dataset has no series");
  double total = 0.0;
  for (const auto& s : dataset.series) {
    try {
      total += forward_backward(model, s).log_likelihood;
    } catch (const NumericalError& e) {
      throw NumericalError("series '" + s.id + "': " + e.what());
    }
  }
  return total;
}

inline constexpr double kBruteForcePathLimit = 1e7;

/// Exact log-likelihood by summing the joint over every state path. Intended
/// as a verification oracle for small K^T.
inline double brute_force_log_likelihood(const SeriesTerms& terms) {
  const Eigen::Index n = terms.length();
  const int k = terms.n_states();
  if (std::pow(static_cast<double>(k), static_cast<double>(n)) > kBruteForcePathLimit)
    throw CapacityError("brute-force enumeration of " + std::to_string(k) + "^" + std::to_string(n) +
                        " paths exceeds the limit");
  std::vector<int> path(static_cast<std::size_t>(n), 0);
  double running_max = -std::numeric_limits<double>::infinity();
  double running_sum = 0.0;
  while (true) {
    double lp = std::log(terms.initial(path[0])) + std::log(terms.emissions(0, path[0]));
    for (Eigen::Index t = 1; t < n; ++t) {
      const auto s = path[static_cast<std::size_t>(t)];
      lp += std::log(terms.transition(t)(path[static_cast<std::size_t>(t - 1)], s)) + std::log(terms.emissions(t, s));
    }
    if (lp > running_max) {
      if (std::isfinite(running_max)) running_sum *= std::exp(running_max - lp);
      running_max = lp;
      running_sum += 1.0;
    } else if (std::isfinite(lp)) {
      running_sum += std::exp(lp - running_max);
    }
    Eigen::Index pos = n - 1;
    while (pos >= 0 && ++path[static_cast<std::size_t>(pos)] == k) path[static_cast<std::size_t>(pos--)] = 0;
    if (pos < 0) break;
  }
  return running_max + std::log(running_sum);
}

inline double brute_force_log_likelihood(const HmmModel& model, const TimeSeries& series) {
  return brute_force_log_likelihood(compute_terms(model, series));
}

/// Most probable state path; ties resolve to the lower state index.
inline std::vector<int> viterbi(const SeriesTerms& terms) {
  const Eigen::Index n = terms.length();
  const int k = terms.n_states();
  const double neg_inf = -std::numeric_limits<double>::infinity();
  Eigen::MatrixXd delta(n, k);
  Eigen::MatrixXi from(n, k);
  for (int s = 0; s < k; ++s) delta(0, s) = std::log(terms.initial(s)) + std::log(terms.emissions(0, s));
  for (Eigen::Index t = 1; t < n; ++t) {
    const Eigen::MatrixXd& a = terms.transition(t);
    for (int j = 0; j < k; ++j) {
      double best = neg_inf;
      int arg = 0;
      for (int i = 0; i < k; ++i) {
        const double v = delta(t - 1, i) + std::log(a(i, j));
        if (v > best) {
          best = v;
          arg = i;
        }
      }
      delta(t, j) = best + std::log(terms.emissions(t, j));
      from(t, j) = arg;
    }
  }
  std::vector<int> path(static_cast<std::size_t>(n));
  double best = neg_inf;
  int arg = -1;
  for (int s = 0; s < k; ++s) {
    if (delta(n - 1, s) > best) {
      best = delta(n - 1, s);
      arg = s;
    }
  }
  if (arg < 0 || std::isnan(best)) throw NumericalError("viterbi: every state path has zero probability");
  path.back() = arg;
  for (Eigen::Index t = n - 1; t > 0; --t)
    path[static_cast<std::size_t>(t - 1)] = from(t, path[static_cast<std::size_t>(t)]);
  return path;
}

inline std::vector<int> viterbi(const HmmModel& model, const TimeSeries& series) {
  return viterbi(compute_terms(model, series));
}

}  // namespace mnarhmm
