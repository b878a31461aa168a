#pragma once

// Generative scenarios, replicated fitting studies and state-recovery
// ceilings for three-state Gaussian HMMs with missing responses.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "mnarhmm/error.hpp"
#include "mnarhmm/estimation.hpp"
#include "mnarhmm/inference.hpp"
#include "mnarhmm/model.hpp"
#include "mnarhmm/parallel.hpp"

namespace mnarhmm {

/// Name of the time covariate (1..T) attached to every simulated record.
inline constexpr const char* kTimeCovariate = "time";

namespace mechanism {

struct StateBernoulli {
  std::vector<double> phi;
};
struct ConstantRate {
  double p = 0.0;
};
/// p(M_t = 1) = logistic(beta0 + beta_time * t), independent of the state.
struct TimeLogistic {
  double beta0 = 0.0;
  double beta_time = 0.0;
};

}  // namespace mechanism

using MissingnessMechanism = std::variant<mechanism::StateBernoulli, mechanism::ConstantRate, mechanism::TimeLogistic>;

struct Scenario {
  std::string name;
  std::vector<double> mu;
  std::vector<double> sigma;
  Eigen::VectorXd initial;
  Eigen::MatrixXd transition;
  MissingnessMechanism mechanism = mechanism::ConstantRate{0.0};
  int n_series = 100;
  int n_time = 50;

  int n_states() const { return static_cast<int>(mu.size()); }

  /// p(M_t = 1 | S_t = state) at 1-based time t.
  double missing_probability(int state, int t) const {
    return std::visit(
        [&](const auto& m) -> double {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, mechanism::StateBernoulli>) return m.phi[static_cast<std::size_t>(state)];
          else if constexpr (std::is_same_v<M, mechanism::ConstantRate>) return m.p;
          else return logistic(m.beta0 + m.beta_time * t);
        },
        mechanism);
  }

  void validate() const {
    const auto k = static_cast<Eigen::Index>(mu.size());
    if (k < 1 || static_cast<Eigen::Index>(sigma.size()) != k) throw InputError("scenario: mu/sigma sizes differ");
    if (initial.size() != k || transition.rows() != k || transition.cols() != k)
      throw InputError("scenario: initial/transition dimensions do not match the state count");
    auto simplex = [](const Eigen::VectorXd& p) {
      return (p.array() >= 0.0).all() && std::fabs(p.sum() - 1.0) < 1e-9;
    };
    if (!simplex(initial)) throw InputError("scenario: initial probabilities are not a simplex");
    for (Eigen::Index i = 0; i < k; ++i)
      if (!simplex(transition.row(i).transpose())) throw InputError("scenario: transition row is not a simplex");
    for (double s : sigma)
      if (!(s > 0.0)) throw InputError("scenario: sigma must be positive");
    if (const auto* b = std::get_if<mechanism::StateBernoulli>(&mechanism))
      if (static_cast<Eigen::Index>(b->phi.size()) != k) throw InputError("scenario: phi length differs from state count");
    if (n_series < 1 || n_time < 1) throw InputError("scenario: N and T must be >= 1");
  }
};

/// Simulations 1-5: three states, pi = (.8,.1,.1), .75 self-transitions, N = 100, T = 50.
inline std::map<std::string, Scenario> builtin_scenarios() {
  Scenario base;
  base.mu = {-1.0, 0.0, 1.0};
  base.sigma = {1.0, 1.0, 1.0};
  base.initial = Eigen::Vector3d(0.8, 0.1, 0.1);
  base.transition = Eigen::MatrixXd::Constant(3, 3, 0.125);
  base.transition.diagonal().setConstant(0.75);

  const mechanism::StateBernoulli state_dependent{{0.05, 0.25, 0.50}};
  const mechanism::ConstantRate constant{0.25};

  std::map<std::string, Scenario> out;
  Scenario s = base;
  s.name = "sim1";
  s.mechanism = state_dependent;
  out[s.name] = s;
  s.name = "sim2";
  s.mechanism = constant;
  out[s.name] = s;
  s.sigma = {3.0, 3.0, 3.0};
  s.name = "sim3";
  s.mechanism = state_dependent;
  out[s.name] = s;
  s.name = "sim4";
  s.mechanism = constant;
  out[s.name] = s;
  s = base;
  s.name = "sim5";
  s.mechanism = mechanism::TimeLogistic{-5.0, 0.125};
  out[s.name] = s;
  return out;
}

inline Scenario builtin_scenario(const std::string& name) {
  auto all = builtin_scenarios();
  if (auto it = all.find(name); it != all.end()) return it->second;
  std::string valid;
  for (const auto& [n, _] : all) valid += (valid.empty() ? "" : ", ") + n;
  throw InputError("unknown scenario '" + name + "' (valid: " + valid + ")");
}

struct SimulatedData {
  Dataset dataset;
  std::vector<std::vector<int>> true_states;  // 0-based, one path per series
};

inline std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

namespace detail {

inline int draw_category(const Eigen::Ref<const Eigen::VectorXd>& p, double u) {
  double acc = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    acc += p(k);
    if (u < acc) return static_cast<int>(k);
  }
  for (Eigen::Index k = p.size() - 1; k >= 0; --k)
    if (p(k) > 0.0) return static_cast<int>(k);
  return 0;
}

}  // namespace detail

/// Samples state paths from the chain, then responses, then missingness,
/// erasing the response where M = 1. Deterministic per seed.
inline SimulatedData generate_dataset(const Scenario& scenario, std::uint64_t seed) {
  scenario.validate();
  auto rng = seeded_engine(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n_time = scenario.n_time;

  SimulatedData out;
  out.dataset.covariate_names = {kTimeCovariate};
  out.dataset.series.reserve(static_cast<std::size_t>(scenario.n_series));
  for (int i = 0; i < scenario.n_series; ++i) {
    std::vector<int> path(static_cast<std::size_t>(n_time));
    path[0] = detail::draw_category(scenario.initial, unif(rng));
    for (int t = 1; t < n_time; ++t)
      path[static_cast<std::size_t>(t)] =
          detail::draw_category(scenario.transition.row(path[static_cast<std::size_t>(t - 1)]).transpose(), unif(rng));
    TimeSeries series;
    series.id = std::to_string(i + 1);
    series.records.resize(static_cast<std::size_t>(n_time));
    for (int t = 0; t < n_time; ++t) {
      const int s = path[static_cast<std::size_t>(t)];
      auto& r = series.records[static_cast<std::size_t>(t)];
      r.t = t + 1;
      r.y = scenario.mu[static_cast<std::size_t>(s)] + scenario.sigma[static_cast<std::size_t>(s)] * normal(rng);
      r.covariates.set(kTimeCovariate, t + 1.0);
    }
    for (int t = 0; t < n_time; ++t)
      if (unif(rng) < scenario.missing_probability(path[static_cast<std::size_t>(t)], t + 1))
        series.records[static_cast<std::size_t>(t)].y.reset();
    out.dataset.series.push_back(std::move(series));
    out.true_states.push_back(std::move(path));
  }
  return out;
}

enum class FitFamily { MAR, MNARState, MNARTime };

inline std::string to_string(FitFamily f) {
  switch (f) {
    case FitFamily::MAR: return "MAR";
    case FitFamily::MNARState: return "MNAR-state";
    case FitFamily::MNARTime: return "MNAR-time";
  }
  return "?";
}

inline FitFamily parse_family(const std::string& s) {
  if (s == "MAR" || s == "mar") return FitFamily::MAR;
  if (s == "MNAR-state" || s == "mnar-state" || s == "MNAR" || s == "mnar") return FitFamily::MNARState;
  if (s == "MNAR-time" || s == "mnar-time") return FitFamily::MNARTime;
  throw InputError("unknown model family '" + s + "' (valid: MAR, MNAR-state, MNAR-time)");
}

/// The family that matches the scenario's own missingness mechanism.
inline FitFamily natural_family(const Scenario& s) {
  return std::holds_alternative<mechanism::TimeLogistic>(s.mechanism) ? FitFamily::MNARTime : FitFamily::MNARState;
}

/// True parameters expressed in a fit family. Where the family cannot
/// represent the mechanism exactly, the missingness part is its nearest
/// analogue: the time-averaged rate (MNAR-state) or a zero time slope (MNAR-time).
inline HmmModel truth_model(const Scenario& scenario, FitFamily family) {
  scenario.validate();
  const int k = scenario.n_states();
  std::vector<GaussianEmission> em;
  for (int s = 0; s < k; ++s) em.push_back({scenario.mu[static_cast<std::size_t>(s)], scenario.sigma[static_cast<std::size_t>(s)]});

  auto state_rate = [&](int s) {
    if (const auto* tl = std::get_if<mechanism::TimeLogistic>(&scenario.mechanism)) {
      double acc = 0.0;
      for (int t = 1; t <= scenario.n_time; ++t) acc += logistic(tl->beta0 + tl->beta_time * t);
      return acc / scenario.n_time;
    }
    return scenario.missing_probability(s, 1);
  };

  MissingnessSpec spec = missingness::Ignorable{};
  if (family == FitFamily::MNARState) {
    missingness::StateBernoulli b;
    for (int s = 0; s < k; ++s) b.phi.push_back(state_rate(s));
    spec = b;
  } else if (family == FitFamily::MNARTime) {
    missingness::StateLogistic l;
    l.covariates = {kTimeCovariate};
    l.coefficients.resize(k, 2);
    for (int s = 0; s < k; ++s) {
      if (const auto* tl = std::get_if<mechanism::TimeLogistic>(&scenario.mechanism)) {
        l.coefficients.row(s) << tl->beta0, tl->beta_time;
      } else {
        l.coefficients.row(s) << logit(clamp_probability(state_rate(s))), 0.0;
      }
    }
    spec = l;
  }
  return HmmModel::from_probabilities(scenario.initial, scenario.transition, em, spec);
}

/// Fraction of agreeing points over all series. With `align`, the best label
/// permutation of the decoded paths is used.
inline double recovery_accuracy(const std::vector<std::vector<int>>& truth, const std::vector<std::vector<int>>& decoded,
                                bool align = false) {
  if (truth.size() != decoded.size()) throw InputError("recovery_accuracy: series counts differ");
  std::size_t total = 0;
  int max_state = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].size() != decoded[i].size()) throw InputError("recovery_accuracy: path lengths differ");
    total += truth[i].size();
    for (int s : truth[i]) max_state = std::max(max_state, s);
    for (int s : decoded[i]) max_state = std::max(max_state, s);
  }
  if (total == 0) throw InputError("recovery_accuracy: no points");
  const int k = max_state + 1;
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  auto agree = [&](const std::vector<int>& p) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
      for (std::size_t t = 0; t < truth[i].size(); ++t) hits += truth[i][t] == p[static_cast<std::size_t>(decoded[i][t])];
    return static_cast<double>(hits) / static_cast<double>(total);
  };
  if (!align) return agree(perm);
  double best = 0.0;
  do best = std::max(best, agree(perm));
  while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Exact p(S_t) at 1-based time t.
inline Eigen::VectorXd state_marginal(const Scenario& scenario, int t) {
  Eigen::RowVectorXd p = scenario.initial.transpose();
  for (int s = 1; s < t; ++s) p = p * scenario.transition;
  return p.transpose();
}

enum class MixtureScore {
  MaximumPosterior,   // share of points whose argmax class is the true state
  ExpectedPosterior,  // mean posterior mass on the true state
};

/// Monte-Carlo accuracy of the pointwise classifier built on
/// p(S_t = k) p(y_t, m_t | k) under the true parameters.
inline double mixture_oracle_accuracy(const Scenario& scenario, int n_mc_series, std::uint64_t seed,
                                      MixtureScore score = MixtureScore::MaximumPosterior) {
  if (n_mc_series < 1) throw InputError("n_mc must be >= 1");
  Scenario sc = scenario;
  sc.n_series = n_mc_series;
  const auto sim = generate_dataset(sc, seed);
  const int k = sc.n_states();
  std::vector<Eigen::VectorXd> marg;
  for (int t = 1; t <= sc.n_time; ++t) marg.push_back(state_marginal(sc, t));

  double hits = 0.0;
  std::size_t total = 0;
  Eigen::VectorXd post(k);
  for (std::size_t i = 0; i < sim.dataset.series.size(); ++i) {
    const auto& recs = sim.dataset.series[i].records;
    for (std::size_t t = 0; t < recs.size(); ++t) {
      int best = 0;
      double best_score = -1.0;
      for (int s = 0; s < k; ++s) {
        const double pm = sc.missing_probability(s, static_cast<int>(t) + 1);
        const double w = recs[t].missing() ? pm
                                           : (1.0 - pm) * normal_pdf(*recs[t].y, sc.mu[static_cast<std::size_t>(s)],
                                                                     sc.sigma[static_cast<std::size_t>(s)]);
        post(s) = marg[t](s) * w;
        if (post(s) > best_score) {
          best_score = post(s);
          best = s;
        }
      }
      const int truth = sim.true_states[i][t];
      hits += score == MixtureScore::MaximumPosterior ? (best == truth ? 1.0 : 0.0) : post(truth) / post.sum();
      ++total;
    }
  }
  return hits / static_cast<double>(total);
}

/// Viterbi recovery with the true parameters; `missingness_aware` chooses
/// between the scenario's own missingness model and an ignorable one.
inline double hmm_oracle_accuracy(const Scenario& scenario, int n_mc_series, std::uint64_t seed,
                                  bool missingness_aware = true) {
  if (n_mc_series < 1) throw InputError("n_mc_series must be >= 1");
  Scenario sc = scenario;
  sc.n_series = n_mc_series;
  const auto sim = generate_dataset(sc, seed);
  const auto model = truth_model(sc, missingness_aware ? natural_family(sc) : FitFamily::MAR);
  std::vector<std::vector<int>> decoded;
  for (const auto& s : sim.dataset.series) decoded.push_back(viterbi(model, s));
  return recovery_accuracy(sim.true_states, decoded);
}

/// Natural-scale parameters of a covariate-free fitted model: mu, sigma, pi,
/// the transition matrix, then the family's missingness parameters.
inline std::vector<std::pair<std::string, double>> natural_parameters(const HmmModel& model) {
  const int k = model.n_states;
  std::vector<std::pair<std::string, double>> out;
  for (int s = 0; s < k; ++s) out.emplace_back("mu_" + std::to_string(s + 1), model.emissions[static_cast<std::size_t>(s)].mu);
  for (int s = 0; s < k; ++s) out.emplace_back("sigma_" + std::to_string(s + 1), model.emissions[static_cast<std::size_t>(s)].sigma);
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
  const Eigen::VectorXd pi = model.initial.probabilities(one);
  for (int s = 0; s < k; ++s) out.emplace_back("pi_" + std::to_string(s + 1), pi(s));
  const Eigen::MatrixXd a = transition_matrix_from_design(model, one);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) out.emplace_back("a_" + std::to_string(i + 1) + std::to_string(j + 1), a(i, j));
  if (const auto* b = std::get_if<missingness::StateBernoulli>(&model.missingness)) {
    for (int s = 0; s < k; ++s) out.emplace_back("phi_" + std::to_string(s + 1), b->phi[static_cast<std::size_t>(s)]);
  } else if (const auto* l = std::get_if<missingness::StateLogistic>(&model.missingness)) {
    for (int s = 0; s < k; ++s) out.emplace_back("beta0_" + std::to_string(s + 1), l->coefficients(s, 0));
    for (int s = 0; s < k; ++s)
      for (Eigen::Index c = 1; c < l->coefficients.cols(); ++c)
        out.emplace_back("beta_" + l->covariates[static_cast<std::size_t>(c - 1)] + "_" + std::to_string(s + 1),
                         l->coefficients(s, c));
  }
  return out;
}

/// True values keyed like natural_parameters(); NaN where a parameter has no
/// counterpart in the generating mechanism.
inline std::map<std::string, double> true_parameters(const Scenario& scenario) {
  std::map<std::string, double> truth;
  for (const auto& [name, v] : natural_parameters(truth_model(scenario, FitFamily::MAR))) truth[name] = v;
  const int k = scenario.n_states();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int s = 0; s < k; ++s) {
    const auto idx = std::to_string(s + 1);
    const bool time_mech = std::holds_alternative<mechanism::TimeLogistic>(scenario.mechanism);
    truth["phi_" + idx] = time_mech ? nan : scenario.missing_probability(s, 1);
    if (const auto* tl = std::get_if<mechanism::TimeLogistic>(&scenario.mechanism)) {
      truth["beta0_" + idx] = tl->beta0;
      truth[std::string("beta_") + kTimeCovariate + "_" + idx] = tl->beta_time;
    } else {
      truth["beta0_" + idx] = nan;
      truth[std::string("beta_") + kTimeCovariate + "_" + idx] = nan;
    }
  }
  return truth;
}

struct StudyFitSpec {
  std::string label;
  FitFamily family = FitFamily::MAR;
  bool start_at_truth = true;
};

struct StudyConfig {
  int n_replications = 100;
  std::vector<StudyFitSpec> specs;
  std::uint64_t master_seed = 1;
  FitConfig fit{};
  int n_starts = 10;       // random starts for specs not started at truth
  int reference_spec = 0;  // denominator of every relative MAE
  unsigned threads = default_thread_count();

  void validate() const {
    if (n_replications < 1) throw InputError("n_replications must be >= 1");
    if (specs.empty()) throw InputError("study needs at least one fit specification");
    if (reference_spec < 0 || reference_spec >= static_cast<int>(specs.size())) throw InputError("bad reference spec index");
    fit.validate();
  }
};

struct ParameterSummary {
  std::string name;
  double true_value = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> mean, sd, mae;  // per spec; NaN where the spec lacks the parameter
  std::vector<double> rel_mae;        // per spec: MAE(spec) / MAE(reference)
};

struct StudySummary {
  std::string scenario;
  std::vector<std::string> spec_labels;
  int reference_spec = 0;
  int n_replications = 0;
  int n_used = 0;                      // replications in which every spec fitted
  std::vector<int> failures;           // per spec
  std::vector<int> nonconverged;       // per spec, among used replications
  std::vector<double> mean_accuracy;   // per spec
  std::vector<double> average_rel_mae; // per spec, over parameters with a finite relative MAE
  std::vector<ParameterSummary> parameters;
  std::vector<std::string> failure_messages;

  /// Layout: parameter, true_value, then mean/sd/mae per spec, then rel_mae
  /// columns for every non-reference spec.
  void write_csv(std::ostream& os) const {
    auto num = [&](double v) {
      if (std::isnan(v)) return std::string("NA");
      std::ostringstream s;
      s << std::setprecision(10) << v;
      return s.str();
    };
    os << "parameter,true_value";
    for (const auto& l : spec_labels) os << ',' << l << "_mean," << l << "_sd," << l << "_mae";
    for (std::size_t j = 0; j < spec_labels.size(); ++j)
      if (static_cast<int>(j) != reference_spec) os << ",rel_mae_" << spec_labels[j] << "_over_" << spec_labels[static_cast<std::size_t>(reference_spec)];
    os << '\n';
    for (const auto& p : parameters) {
      os << p.name << ',' << num(p.true_value);
      for (std::size_t j = 0; j < spec_labels.size(); ++j) os << ',' << num(p.mean[j]) << ',' << num(p.sd[j]) << ',' << num(p.mae[j]);
      for (std::size_t j = 0; j < spec_labels.size(); ++j)
        if (static_cast<int>(j) != reference_spec) os << ',' << num(p.rel_mae[j]);
      os << '\n';
    }
  }

  void write_accuracy_csv(std::ostream& os) const {
    os << "spec,mean_recovery_accuracy,average_rel_mae,replications_used,failures,nonconverged\n";
    for (std::size_t j = 0; j < spec_labels.size(); ++j)
      os << spec_labels[j] << ',' << std::setprecision(10) << mean_accuracy[j] << ','
         << (std::isnan(average_rel_mae[j]) ? std::string("NA") : std::to_string(average_rel_mae[j])) << ','
         << n_used << ',' << failures[j] << ',' << nonconverged[j] << '\n';
  }
};

namespace detail {

struct ReplicationOutcome {
  bool ok = true;
  std::string error;
  std::vector<std::vector<std::pair<std::string, double>>> estimates;  // per spec
  std::vector<double> accuracy;
  std::vector<int> failed;  // per spec, 1 if that spec threw
  std::vector<bool> converged;
};

}  // namespace detail

/// Generates and fits `n_replications` datasets. Replication r draws from a
/// stream derived from (master_seed, r); aggregation is in replication order,
/// so the summary is identical for any thread count.
inline StudySummary run_study(const Scenario& scenario, const StudyConfig& config) {
  scenario.validate();
  config.validate();
  const auto n_specs = config.specs.size();
  std::vector<detail::ReplicationOutcome> outcomes(static_cast<std::size_t>(config.n_replications));

  parallel_for(
      outcomes.size(),
      [&](std::size_t r) {
        auto& out = outcomes[r];
        out.estimates.resize(n_specs);
        out.accuracy.assign(n_specs, 0.0);
        out.failed.assign(n_specs, 0);
        out.converged.assign(n_specs, false);
        const std::uint64_t rep_seed = seeded_engine(config.master_seed, r + 1)();
        const auto sim = generate_dataset(scenario, rep_seed);
        for (std::size_t j = 0; j < n_specs; ++j) {
          const auto& spec = config.specs[j];
          try {
            FitResult fit;
            if (spec.start_at_truth) {
              fit = em_fit(truth_model(scenario, spec.family), sim.dataset, config.fit);
            } else {
              auto tmpl = truth_model(scenario, spec.family);
              fit = multi_start_fit(tmpl, sim.dataset, config.n_starts, rep_seed ^ (0x9e3779b97f4a7c15ULL * (j + 1)), config.fit,
                                    config.threads > 1 ? 1u : default_thread_count()).best;
            }
            std::vector<std::vector<int>> decoded;
            for (const auto& s : sim.dataset.series) decoded.push_back(viterbi(fit.model, s));
            out.accuracy[j] = recovery_accuracy(sim.true_states, decoded);
            out.estimates[j] = natural_parameters(fit.model);
            out.converged[j] = fit.converged;
          } catch (const Error& e) {
            out.ok = false;
            out.failed[j] = 1;
            out.error += "replication " + std::to_string(r + 1) + ", " + spec.label + ": " + e.what() + "\n";
          }
        }
      },
      config.threads);

  StudySummary summary;
  summary.scenario = scenario.name;
  summary.reference_spec = config.reference_spec;
  summary.n_replications = config.n_replications;
  summary.failures.assign(n_specs, 0);
  summary.nonconverged.assign(n_specs, 0);
  summary.mean_accuracy.assign(n_specs, 0.0);
  for (const auto& s : config.specs) summary.spec_labels.push_back(s.label);

  const auto truth = true_parameters(scenario);
  std::vector<std::string> names;
  for (const auto& [n, _] : natural_parameters(truth_model(scenario, FitFamily::MAR))) names.push_back(n);
  for (const auto& spec : config.specs)
    for (const auto& [n, _] : natural_parameters(truth_model(scenario, spec.family)))
      if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);

  std::map<std::string, std::vector<std::vector<double>>> values;  // name -> spec -> replication values
  for (const auto& n : names) values[n].resize(n_specs);
  for (const auto& o : outcomes) {
    for (std::size_t j = 0; j < n_specs; ++j) summary.failures[j] += o.failed[j];
    if (!o.ok) {
      summary.failure_messages.push_back(o.error);
      continue;
    }
    ++summary.n_used;
    for (std::size_t j = 0; j < n_specs; ++j) {
      summary.mean_accuracy[j] += o.accuracy[j];
      summary.nonconverged[j] += o.converged[j] ? 0 : 1;
      for (const auto& [n, v] : o.estimates[j]) values[n][j].push_back(v);
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (auto& a : summary.mean_accuracy) a = summary.n_used > 0 ? a / summary.n_used : nan;

  std::vector<double> rel_sum(n_specs, 0.0);
  std::vector<int> rel_count(n_specs, 0);
  for (const auto& n : names) {
    ParameterSummary p;
    p.name = n;
    p.true_value = truth.count(n) ? truth.at(n) : nan;
    for (std::size_t j = 0; j < n_specs; ++j) {
      const auto& v = values[n][j];
      if (v.empty()) {
        p.mean.push_back(nan);
        p.sd.push_back(nan);
        p.mae.push_back(nan);
        continue;
      }
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double ss = 0.0, ae = 0.0;
      for (double x : v) {
        ss += (x - mean) * (x - mean);
        ae += std::fabs(x - p.true_value);
      }
      p.mean.push_back(mean);
      p.sd.push_back(v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0);
      p.mae.push_back(ae / static_cast<double>(v.size()));
    }
    const double ref = p.mae[static_cast<std::size_t>(config.reference_spec)];
    for (std::size_t j = 0; j < n_specs; ++j) {
      const double rel = p.mae[j] / ref;
      p.rel_mae.push_back(std::isfinite(rel) ? rel : nan);
      if (std::isfinite(rel) && static_cast<int>(j) != config.reference_spec) {
        rel_sum[j] += rel;
        ++rel_count[j];
      }
    }
    summary.parameters.push_back(std::move(p));
  }
  for (std::size_t j = 0; j < n_specs; ++j)
    summary.average_rel_mae.push_back(rel_count[j] > 0 ? rel_sum[j] / rel_count[j] : nan);
  return summary;
}

}  // namespace mnarhmm
