#pragma once

// Maximum-likelihood estimation by (generalized) EM.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mnarhmm/error.hpp"
#include "mnarhmm/inference.hpp"
#include "mnarhmm/logit_fit.hpp"
#include "mnarhmm/math.hpp"
#include "mnarhmm/model.hpp"
#include "mnarhmm/parallel.hpp"

namespace mnarhmm {

struct FitConfig {
  int max_iterations = 500;
  double tolerance = 1e-6;  // absolute log-likelihood change, nats
  double parameter_tolerance = 0.0;  // when > 0, also require max_parameter_change below it
  NewtonOptions inner{};
  Constraints constraints{};

  void validate() const {
    if (max_iterations < 0) throw InputError("max_iterations must be >= 0");
    if (!(tolerance > 0.0) || !(inner.gradient_tolerance > 0.0)) throw InputError("tolerances must be positive");
    if (!(parameter_tolerance >= 0.0)) throw InputError("parameter tolerance must be >= 0");
    if (inner.max_iterations < 1) throw InputError("inner iteration budget must be >= 1");
  }
};

struct FitResult {
  HmmModel model;
  std::vector<double> trace;  // log-likelihood at each E-step; back() belongs to `model`
  bool converged = false;
  int iterations = 0;  // completed M-steps
  int free_parameters = 0;
  Constraints constraints{};

  double log_likelihood() const { return trace.empty() ? -std::numeric_limits<double>::infinity() : trace.back(); }
};

/// Identifiable parameter count. Reference-category logit coefficients are
/// never counted; tied missingness parameters count once.
inline int count_free_parameters(const HmmModel& model, const Constraints& constraints = {}) {
  const int k = model.n_states;
  int n = 2 * k;
  n += (k - 1) * model.initial.n_predictors();
  n += k * (k - 1) * model.transition.front().n_predictors();
  const int groups = constraints.missingness_equal_across_states ? 1 : k;
  if (std::holds_alternative<missingness::StateBernoulli>(model.missingness)) n += groups;
  if (const auto* l = std::get_if<missingness::StateLogistic>(&model.missingness)) n += groups * l->n_predictors();
  return n;
}

/// Parameter count including reference-category coefficients.
inline int count_raw_parameters(const HmmModel& model) {
  const int k = model.n_states;
  int n = 2 * k + k * model.initial.n_predictors() + k * k * model.transition.front().n_predictors();
  if (std::holds_alternative<missingness::StateBernoulli>(model.missingness)) n += k;
  if (const auto* l = std::get_if<missingness::StateLogistic>(&model.missingness)) n += k * l->n_predictors();
  return n;
}

/// Largest absolute difference between two models of identical structure.
/// Covariate-free logit rows are compared as probabilities, covariate logit
/// and missingness-logistic rows as coefficients.
inline double max_parameter_change(const HmmModel& a, const HmmModel& b) {
  if (a.n_states != b.n_states) throw InputError("max_parameter_change: state counts differ");
  double d = 0.0;
  auto upd = [&](double x, double y) { d = std::max(d, std::fabs(x - y)); };
  for (std::size_t s = 0; s < a.emissions.size(); ++s) {
    upd(a.emissions[s].mu, b.emissions[s].mu);
    upd(a.emissions[s].sigma, b.emissions[s].sigma);
  }
  auto logit_change = [&](const MultinomialLogit& x, const MultinomialLogit& y) {
    if (x.covariates.empty()) {
      const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
      d = std::max(d, (x.probabilities(one) - y.probabilities(one)).cwiseAbs().maxCoeff());
    } else if (x.coefficients.size() > 0) {
      d = std::max(d, (x.coefficients - y.coefficients).cwiseAbs().maxCoeff());
    }
  };
  logit_change(a.initial, b.initial);
  for (std::size_t s = 0; s < a.transition.size(); ++s) logit_change(a.transition[s], b.transition[s]);
  if (const auto* pa = std::get_if<missingness::StateBernoulli>(&a.missingness)) {
    const auto& pb = std::get<missingness::StateBernoulli>(b.missingness);
    for (std::size_t s = 0; s < pa->phi.size(); ++s) upd(pa->phi[s], pb.phi[s]);
  } else if (const auto* la = std::get_if<missingness::StateLogistic>(&a.missingness)) {
    const auto& lb = std::get<missingness::StateLogistic>(b.missingness);
    d = std::max(d, (la->coefficients - lb.coefficients).cwiseAbs().maxCoeff());
  }
  return d;
}

/// E-step output: posteriors of every series, in dataset order.
struct SufficientStats {
  std::vector<Posteriors> posteriors;
  double log_likelihood = 0.0;
};

inline std::vector<SeriesDesign> make_designs(const HmmModel& model, const Dataset& dataset) {
  std::vector<SeriesDesign> designs;
  designs.reserve(dataset.series.size());
  for (const auto& s : dataset.series) designs.push_back(make_design(model, s));
  return designs;
}

inline SufficientStats e_step(const HmmModel& model, const std::vector<SeriesDesign>& designs,
                              const std::vector<std::string>* ids = nullptr) {
  SufficientStats stats;
  stats.posteriors.reserve(designs.size());
  for (std::size_t i = 0; i < designs.size(); ++i) {
    try {
      stats.posteriors.push_back(forward_backward(compute_terms(model, designs[i])));
    } catch (const NumericalError& e) {
      const std::string id = ids ? (*ids)[i] : std::to_string(i);
      throw NumericalError("series '" + id + "': " + e.what());
    }
    stats.log_likelihood += stats.posteriors.back().log_likelihood;
  }
  return stats;
}

inline SufficientStats e_step(const HmmModel& model, const Dataset& dataset) {
  std::vector<std::string> ids;
  for (const auto& s : dataset.series) ids.push_back(s.id);
  return e_step(model, make_designs(model, dataset), &ids);
}

/// Weighted ML Gaussian per state: weighted mean and divide-by-weight-sum SD,
/// floored at kSigmaFloor. `weights` is n x K over observed responses only.
inline std::vector<GaussianEmission> m_step_gaussian(std::span<const double> y, const Eigen::MatrixXd& weights) {
  if (static_cast<Eigen::Index>(y.size()) != weights.rows()) throw InputError("m_step_gaussian: dimension mismatch");
  std::vector<GaussianEmission> out(static_cast<std::size_t>(weights.cols()));
  for (Eigen::Index k = 0; k < weights.cols(); ++k) {
    double mass = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      mass += weights(static_cast<Eigen::Index>(i), k);
      sum += weights(static_cast<Eigen::Index>(i), k) * y[i];
    }
    if (!(mass > 0.0))
      throw DegenerateStateError("state " + std::to_string(k + 1) + " has no posterior mass on observed responses");
    const double mu = sum / mass;
    double ss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) ss += weights(static_cast<Eigen::Index>(i), k) * (y[i] - mu) * (y[i] - mu);
    out[static_cast<std::size_t>(k)] = {mu, std::max(std::sqrt(ss / mass), kSigmaFloor)};
  }
  return out;
}

/// Weighted proportion of m = 1 per state, clamped to [kProbEps, 1 - kProbEps].
inline std::vector<double> m_step_bernoulli(std::span<const double> m, const Eigen::MatrixXd& weights) {
  if (static_cast<Eigen::Index>(m.size()) != weights.rows()) throw InputError("m_step_bernoulli: dimension mismatch");
  std::vector<double> phi(static_cast<std::size_t>(weights.cols()));
  for (Eigen::Index k = 0; k < weights.cols(); ++k) {
    double mass = 0.0, hits = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      mass += weights(static_cast<Eigen::Index>(i), k);
      hits += weights(static_cast<Eigen::Index>(i), k) * m[i];
    }
    if (!(mass > 0.0)) throw DegenerateStateError("state " + std::to_string(k + 1) + " has no posterior mass");
    phi[static_cast<std::size_t>(k)] = clamp_probability(hits / mass);
  }
  return phi;
}

inline MultinomialLogit m_step_multinomial(const Eigen::MatrixXd& design, const Eigen::MatrixXd& weights,
                                           std::vector<std::string> covariates, const NewtonOptions& options = {},
                                           const std::optional<Eigen::MatrixXd>& start = std::nullopt) {
  MultinomialLogit out;
  out.coefficients = fit_multinomial(design, weights, options, start).coefficients;
  out.covariates = std::move(covariates);
  return out;
}

namespace detail {

// Distinct rows of a design matrix. Logit log-likelihoods depend on the data
// only through per-row weight totals, so M-steps run on the collapsed design.
struct RowGroups {
  Eigen::MatrixXd unique;
  std::vector<Eigen::Index> group;  // row -> index into unique

  RowGroups() = default;
  explicit RowGroups(const Eigen::MatrixXd& x) {
    std::map<std::vector<double>, Eigen::Index> seen;
    std::vector<Eigen::Index> first;
    group.resize(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      std::vector<double> key;
      key.reserve(static_cast<std::size_t>(x.cols()));
      for (Eigen::Index c = 0; c < x.cols(); ++c) key.push_back(x(i, c));
      const auto [it, fresh] = seen.emplace(std::move(key), static_cast<Eigen::Index>(first.size()));
      if (fresh) first.push_back(i);
      group[static_cast<std::size_t>(i)] = it->second;
    }
    unique.resize(static_cast<Eigen::Index>(first.size()), x.cols());
    for (std::size_t g = 0; g < first.size(); ++g) unique.row(static_cast<Eigen::Index>(g)) = x.row(first[g]);
  }

  Eigen::MatrixXd sum(const Eigen::MatrixXd& w) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(unique.rows(), w.cols());
    for (std::size_t i = 0; i < group.size(); ++i) out.row(group[i]) += w.row(static_cast<Eigen::Index>(i));
    return out;
  }
};

// Stacked data-only arrays shared by every M-step of one fit.
struct EmWorkspace {
  Eigen::MatrixXd init_x;     // N x P_init
  Eigen::MatrixXd trans_x;    // sum(T_i - 1) x P_trans
  Eigen::MatrixXd miss_x;     // sum(T_i) x P_miss (logistic spec only)
  std::vector<double> y_obs;  // observed responses
  std::vector<double> m_all;  // missingness indicators, all records
  RowGroups init_g, trans_g, miss_g;

  EmWorkspace(const HmmModel& model, const std::vector<SeriesDesign>& designs) {
    Eigen::Index n_rec = 0, n_trans = 0;
    for (const auto& d : designs) {
      n_rec += d.length();
      n_trans += d.length() - 1;
    }
    init_x.resize(static_cast<Eigen::Index>(designs.size()), model.initial.n_predictors());
    trans_x.resize(n_trans, model.transition.front().n_predictors());
    const bool logistic_spec = std::holds_alternative<missingness::StateLogistic>(model.missingness);
    if (logistic_spec) miss_x.resize(n_rec, std::get<missingness::StateLogistic>(model.missingness).n_predictors());
    Eigen::Index r = 0, q = 0;
    for (std::size_t i = 0; i < designs.size(); ++i) {
      const auto& d = designs[i];
      init_x.row(static_cast<Eigen::Index>(i)) = d.initial.transpose();
      if (d.length() > 1) trans_x.middleRows(q, d.length() - 1) = d.transition;
      q += d.length() - 1;
      if (logistic_spec) miss_x.middleRows(r, d.length()) = d.missingness;
      r += d.length();
      for (Eigen::Index t = 0; t < d.length(); ++t) {
        m_all.push_back(d.missing[static_cast<std::size_t>(t)]);
        if (!d.missing[static_cast<std::size_t>(t)]) y_obs.push_back(d.y(t));
      }
    }
    init_g = RowGroups(init_x);
    trans_g = RowGroups(trans_x);
    if (logistic_spec) miss_g = RowGroups(miss_x);
  }

  // Weighted missingness fit on the collapsed design: summed weights and the
  // weighted missing fraction per distinct row.
  LogisticFit fit_missingness(const Eigen::VectorXd& w, const NewtonOptions& options,
                              const Eigen::VectorXd& start) const {
    Eigen::MatrixXd wm(w.size(), 2);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      wm(i, 0) = w(i);
      wm(i, 1) = w(i) * m_all[static_cast<std::size_t>(i)];
    }
    const Eigen::MatrixXd agg = miss_g.sum(wm);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(agg.rows());
    for (Eigen::Index g = 0; g < agg.rows(); ++g)
      if (agg(g, 0) > 0.0) y(g) = std::clamp(agg(g, 1) / agg(g, 0), 0.0, 1.0);
    return weighted_logistic_irls(miss_g.unique, y, agg.col(0), options, start);
  }
};

inline void tie_missingness(HmmModel& model) {
  if (auto* b = std::get_if<missingness::StateBernoulli>(&model.missingness)) {
    const double mean = std::accumulate(b->phi.begin(), b->phi.end(), 0.0) / static_cast<double>(b->phi.size());
    std::fill(b->phi.begin(), b->phi.end(), mean);
  } else if (auto* l = std::get_if<missingness::StateLogistic>(&model.missingness)) {
    const Eigen::RowVectorXd mean = l->coefficients.colwise().mean();
    for (Eigen::Index k = 0; k < l->coefficients.rows(); ++k) l->coefficients.row(k) = mean;
  }
}

}  // namespace detail

/// Every applicable M-step given E-step statistics. Logit components are
/// warm-started from `current` and only accept non-decreasing Newton steps.
inline HmmModel m_step(const HmmModel& current, const detail::EmWorkspace& ws, const SufficientStats& stats,
                       const FitConfig& config) {
  const int k = current.n_states;
  HmmModel next = current;
  const auto n_series = static_cast<Eigen::Index>(stats.posteriors.size());

  Eigen::MatrixXd gamma_all(static_cast<Eigen::Index>(ws.m_all.size()), k);
  Eigen::MatrixXd gamma_obs(static_cast<Eigen::Index>(ws.y_obs.size()), k);
  Eigen::MatrixXd init_w(n_series, k);
  {
    Eigen::Index r = 0, o = 0;
    for (Eigen::Index i = 0; i < n_series; ++i) {
      const auto& g = stats.posteriors[static_cast<std::size_t>(i)].gamma;
      init_w.row(i) = g.row(0);
      for (Eigen::Index t = 0; t < g.rows(); ++t, ++r) {
        gamma_all.row(r) = g.row(t);
        if (ws.m_all[static_cast<std::size_t>(r)] == 0.0) gamma_obs.row(o++) = g.row(t);
      }
    }
  }

  next.emissions = m_step_gaussian(ws.y_obs, gamma_obs);

  next.initial = m_step_multinomial(ws.init_g.unique, ws.init_g.sum(init_w), current.initial.covariates, config.inner,
                                    current.initial.coefficients);

  if (ws.trans_x.rows() > 0) {
    Eigen::MatrixXd w(ws.trans_x.rows(), k);
    for (int from = 0; from < k; ++from) {
      Eigen::Index q = 0;
      for (const auto& post : stats.posteriors)
        for (const auto& slice : post.xi) w.row(q++) = slice.row(from);
      const auto& prev = current.transition[static_cast<std::size_t>(from)];
      if (!(w.sum() > 0.0)) continue;  // origin state never occupied before the last step
      next.transition[static_cast<std::size_t>(from)] =
          m_step_multinomial(ws.trans_g.unique, ws.trans_g.sum(w), prev.covariates, config.inner, prev.coefficients);
    }
  }

  const bool tied = config.constraints.missingness_equal_across_states;
  if (auto* b = std::get_if<missingness::StateBernoulli>(&next.missingness)) {
    if (tied) {
      Eigen::MatrixXd pooled = gamma_all.rowwise().sum();
      const double phi = m_step_bernoulli(ws.m_all, pooled).front();
      std::fill(b->phi.begin(), b->phi.end(), phi);
    } else {
      b->phi = m_step_bernoulli(ws.m_all, gamma_all);
    }
  } else if (auto* l = std::get_if<missingness::StateLogistic>(&next.missingness)) {
    if (tied) {
      const Eigen::VectorXd w = gamma_all.rowwise().sum();
      const Eigen::VectorXd start = l->coefficients.row(0).transpose();
      const auto fit = ws.fit_missingness(w, config.inner, start);
      for (int s = 0; s < k; ++s) l->coefficients.row(s) = fit.coefficients.transpose();
    } else {
      for (int s = 0; s < k; ++s) {
        const Eigen::VectorXd start = l->coefficients.row(s).transpose();
        const auto fit = ws.fit_missingness(gamma_all.col(s), config.inner, start);
        l->coefficients.row(s) = fit.coefficients.transpose();
      }
    }
  }
  return next;
}

/// Alternates E- and M-steps until the log-likelihood changes by less than
/// the tolerance or the iteration budget is spent.
inline FitResult em_fit(const HmmModel& initial_model, const Dataset& dataset, const FitConfig& config = {}) {
  config.validate();
  initial_model.validate();
  dataset.validate();
  if (config.constraints.missingness_equal_across_states && is_ignorable(initial_model.missingness))
    throw InputError("equality constraint on missingness requires a non-ignorable missingness model");

  FitResult result;
  result.model = initial_model;
  result.constraints = config.constraints;
  if (config.constraints.missingness_equal_across_states) detail::tie_missingness(result.model);

  std::vector<std::string> ids;
  for (const auto& s : dataset.series) ids.push_back(s.id);
  const auto designs = make_designs(result.model, dataset);
  const detail::EmWorkspace ws(result.model, designs);

  double last_change = std::numeric_limits<double>::infinity();
  while (true) {
    SufficientStats stats;
    try {
      stats = e_step(result.model, designs, &ids);
    } catch (const Error& e) {
      throw NumericalError("EM iteration " + std::to_string(result.iterations) + ": " + e.what());
    }
    result.trace.push_back(stats.log_likelihood);
    const auto n = result.trace.size();
    if (n >= 2 && std::fabs(result.trace[n - 1] - result.trace[n - 2]) < config.tolerance &&
        (config.parameter_tolerance == 0.0 || last_change < config.parameter_tolerance)) {
      result.converged = true;
      break;
    }
    if (result.iterations >= config.max_iterations) break;
    try {
      HmmModel next = m_step(result.model, ws, stats, config);
      if (config.parameter_tolerance > 0.0) last_change = max_parameter_change(result.model, next);
      result.model = std::move(next);
    } catch (const DegenerateStateError& e) {
      throw DegenerateStateError("EM iteration " + std::to_string(result.iterations + 1) + ": " + e.what());
    } catch (const RankError& e) {
      throw RankError("EM iteration " + std::to_string(result.iterations + 1) + ": " + e.what());
    }
    ++result.iterations;
  }
  result.free_parameters = count_free_parameters(result.model, config.constraints);
  return result;
}

/// One M-step applied to `model` itself; used to probe fixed points.
inline HmmModel apply_m_step(const HmmModel& model, const Dataset& dataset, const FitConfig& config = {}) {
  const auto designs = make_designs(model, dataset);
  const detail::EmWorkspace ws(model, designs);
  return m_step(model, ws, e_step(model, designs), config);
}

namespace detail {

inline std::vector<double> sorted_observed(const Dataset& dataset) {
  std::vector<double> y;
  for (const auto& s : dataset.series)
    for (const auto& r : s.records)
      if (!r.missing()) y.push_back(*r.y);
  if (y.empty()) throw InputError("dataset has no observed responses");
  std::sort(y.begin(), y.end());
  return y;
}

inline double quantile_sorted(const std::vector<double>& y, double u) {
  const double pos = u * static_cast<double>(y.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, y.size() - 1);
  return y[lo] + (pos - static_cast<double>(lo)) * (y[hi] - y[lo]);
}

inline double standard_deviation(const std::vector<double>& y) {
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss = 0.0;
  for (double v : y) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(y.size()));
}

inline double missing_rate(const Dataset& dataset) {
  return 1.0 - static_cast<double>(dataset.observed_count()) / static_cast<double>(dataset.record_count());
}

inline Eigen::VectorXd dirichlet_ones(int k, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(1.0, 1.0);
  Eigen::VectorXd p(k);
  for (int i = 0; i < k; ++i) p(i) = g(rng);
  return p / p.sum();
}

}  // namespace detail

/// Moment-based start: equal-count response bins give means and SDs, logits
/// start uniform, missingness starts at its pooled (state-free) estimate.
inline HmmModel moment_initialization(const HmmModel& model_template, const Dataset& dataset) {
  const int k = model_template.n_states;
  const auto y = detail::sorted_observed(dataset);
  HmmModel m = model_template;
  m.emissions.clear();
  for (int s = 0; s < k; ++s) {
    const std::size_t lo = y.size() * static_cast<std::size_t>(s) / static_cast<std::size_t>(k);
    std::size_t hi = y.size() * static_cast<std::size_t>(s + 1) / static_cast<std::size_t>(k);
    hi = std::max(hi, lo + 1);
    const std::vector<double> bin(y.begin() + static_cast<std::ptrdiff_t>(lo), y.begin() + static_cast<std::ptrdiff_t>(std::min(hi, y.size())));
    const double mean = std::accumulate(bin.begin(), bin.end(), 0.0) / static_cast<double>(bin.size());
    m.emissions.push_back({mean, std::max(detail::standard_deviation(bin), 0.1 * detail::standard_deviation(y) + kSigmaFloor)});
  }
  m.initial = MultinomialLogit::uniform(k, model_template.initial.covariates);
  for (auto& row : m.transition) row = MultinomialLogit::uniform(k, row.covariates);
  if (auto* b = std::get_if<missingness::StateBernoulli>(&m.missingness)) {
    b->phi.assign(static_cast<std::size_t>(k), clamp_probability(detail::missing_rate(dataset)));
  } else if (auto* l = std::get_if<missingness::StateLogistic>(&m.missingness)) {
    const auto designs = make_designs(m, dataset);
    const detail::EmWorkspace ws(m, designs);
    const Eigen::Map<const Eigen::VectorXd> mv(ws.m_all.data(), static_cast<Eigen::Index>(ws.m_all.size()));
    const auto fit = weighted_logistic_irls(ws.miss_x, mv, Eigen::VectorXd::Ones(mv.size()));
    l->coefficients.resize(k, l->n_predictors());
    for (int s = 0; s < k; ++s) l->coefficients.row(s) = fit.coefficients.transpose();
  }
  return m;
}

/// Random start: means from jittered observed-data quantiles, SDs from the
/// overall SD, covariate logit coefficients ~ Normal(0, 0.5), covariate-free
/// probability rows ~ Dirichlet(1, ..., 1), phi ~ Uniform(0.05, 0.95).
inline HmmModel random_initialization(const HmmModel& model_template, const Dataset& dataset, std::mt19937_64& rng) {
  const int k = model_template.n_states;
  const auto y = detail::sorted_observed(dataset);
  const double sd = std::max(detail::standard_deviation(y), kSigmaFloor);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 0.1 * sd);
  std::normal_distribution<double> coef(0.0, 0.5);

  HmmModel m = model_template;
  std::vector<double> u(static_cast<std::size_t>(k));
  for (auto& v : u) v = unif(rng);
  std::sort(u.begin(), u.end());
  m.emissions.clear();
  for (int s = 0; s < k; ++s) m.emissions.push_back({detail::quantile_sorted(y, u[static_cast<std::size_t>(s)]) + jitter(rng), sd});

  auto draw_logit = [&](const MultinomialLogit& shape) {
    if (shape.covariates.empty()) return MultinomialLogit::from_probabilities(detail::dirichlet_ones(k, rng));
    MultinomialLogit out = MultinomialLogit::uniform(k, shape.covariates);
    for (Eigen::Index i = 0; i < out.coefficients.size(); ++i) out.coefficients.data()[i] = coef(rng);
    return out;
  };
  m.initial = draw_logit(model_template.initial);
  for (int s = 0; s < k; ++s) m.transition[static_cast<std::size_t>(s)] = draw_logit(model_template.transition[static_cast<std::size_t>(s)]);

  if (auto* b = std::get_if<missingness::StateBernoulli>(&m.missingness)) {
    b->phi.resize(static_cast<std::size_t>(k));
    for (auto& p : b->phi) p = 0.05 + 0.9 * unif(rng);
  } else if (auto* l = std::get_if<missingness::StateLogistic>(&m.missingness)) {
    l->coefficients.resize(k, l->n_predictors());
    for (Eigen::Index i = 0; i < l->coefficients.size(); ++i) l->coefficients.data()[i] = coef(rng);
  }
  return m;
}

/// Builds a model with the given structure. Emission and logit values are
/// placeholders for the initializers; missingness parameters of the right
/// shape are kept, others are reset.
inline HmmModel model_template(int n_states, std::vector<std::string> initial_covariates,
                               std::vector<std::string> transition_covariates, MissingnessSpec missingness) {
  HmmModel m;
  m.n_states = n_states;
  m.initial = MultinomialLogit::uniform(n_states, std::move(initial_covariates));
  for (int s = 0; s < n_states; ++s) m.transition.push_back(MultinomialLogit::uniform(n_states, transition_covariates));
  m.emissions.assign(static_cast<std::size_t>(n_states), GaussianEmission{});
  if (auto* b = std::get_if<missingness::StateBernoulli>(&missingness)) {
    if (b->phi.size() != static_cast<std::size_t>(n_states)) b->phi.assign(static_cast<std::size_t>(n_states), 0.5);
  } else if (auto* l = std::get_if<missingness::StateLogistic>(&missingness)) {
    if (l->coefficients.rows() != n_states || l->coefficients.cols() != l->n_predictors())
      l->coefficients = Eigen::MatrixXd::Zero(n_states, l->n_predictors());
  }
  m.missingness = std::move(missingness);
  return m;
}

struct MultiStartResult {
  FitResult best;
  int best_start = -1;                  // 0 is the moment-based start
  std::vector<double> final_log_likelihoods;  // NaN for failed starts
  std::vector<std::string> failures;
};

/// Start 0 is moment-based; starts 1..n_starts are random. The random stream
/// of start i depends only on (master_seed, i), so the result is independent
/// of scheduling.
inline MultiStartResult multi_start_fit(const HmmModel& model_template, const Dataset& dataset, int n_starts,
                                        std::uint64_t master_seed, const FitConfig& config = {},
                                        unsigned threads = default_thread_count()) {
  if (n_starts < 0) throw InputError("n_starts must be >= 0");
  const auto total = static_cast<std::size_t>(n_starts) + 1;
  std::vector<std::optional<FitResult>> fits(total);
  std::vector<std::string> errors(total);

  parallel_for(total, [&](std::size_t i) {
    try {
      HmmModel start;
      if (i == 0) {
        start = moment_initialization(model_template, dataset);
      } else {
        std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                          static_cast<std::uint32_t>(i)};
        std::mt19937_64 rng(seq);
        start = random_initialization(model_template, dataset, rng);
      }
      fits[i] = em_fit(start, dataset, config);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  }, threads);

  MultiStartResult out;
  for (std::size_t i = 0; i < total; ++i) {
    if (!fits[i]) {
      out.final_log_likelihoods.push_back(std::numeric_limits<double>::quiet_NaN());
      out.failures.push_back("start " + std::to_string(i) + ": " + errors[i]);
      continue;
    }
    const double ll = fits[i]->log_likelihood();
    out.final_log_likelihoods.push_back(ll);
    if (out.best_start < 0 || ll > out.best.log_likelihood()) {
      out.best = *fits[i];
      out.best_start = static_cast<int>(i);
    }
  }
  if (out.best_start < 0) {
    std::string msg = "all " + std::to_string(total) + " starts failed:";
    for (const auto& f : out.failures) msg += "\n  " + f;
    throw Error(msg);
  }
  return out;
}

}  // namespace mnarhmm
