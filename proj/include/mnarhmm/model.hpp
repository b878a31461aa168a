#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "mnarhmm/error.hpp"
#include "mnarhmm/math.hpp"

namespace mnarhmm {

struct GaussianEmission {
  double mu = 0.0;
  double sigma = 1.0;

  bool operator==(const GaussianEmission&) const = default;
};

/// Small ordered name -> value list attached to every record.
class Covariates {
 public:
  Covariates() = default;
  Covariates(std::initializer_list<std::pair<std::string, double>> init) {
    for (const auto& [name, value] : init) set(name, value);
  }

  void set(std::string_view name, double value) {
    for (auto& entry : entries_) {
      if (entry.first == name) {
        entry.second = value;
        return;
      }
    }
    entries_.emplace_back(std::string(name), value);
  }

  std::optional<double> find(std::string_view name) const {
    for (const auto& entry : entries_)
      if (entry.first == name) return entry.second;
    return std::nullopt;
  }

  double at(std::string_view name) const {
    if (auto v = find(name)) return *v;
    throw SchemaError("missing required covariate '" + std::string(name) + "'");
  }

  const std::vector<std::pair<std::string, double>>& entries() const { return entries_; }
  bool operator==(const Covariates&) const = default;

 private:
  std::vector<std::pair<std::string, double>> entries_;
};

/// One person-period. The response is absent exactly when the record is missing.
struct Record {
  int t = 1;
  std::optional<double> y;
  Covariates covariates;

  bool missing() const { return !y.has_value(); }
  bool operator==(const Record&) const = default;
};

struct TimeSeries {
  std::string id;
  std::vector<Record> records;

  std::size_t length() const { return records.size(); }

  void validate() const {
    if (records.empty()) throw InputError("series '" + id + "' is empty");
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].t < 1) throw InputError("series '" + id + "': time index must be >= 1");
      if (i > 0 && records[i].t != records[i - 1].t + 1)
        throw InputError("series '" + id + "': time indices must increase by 1");
      if (records[i].y && !std::isfinite(*records[i].y))
        throw InputError("series '" + id + "': non-finite response");
    }
  }

  bool operator==(const TimeSeries&) const = default;
};

struct Dataset {
  std::vector<std::string> covariate_names;
  std::vector<TimeSeries> series;
  std::string response_name = "y";

  std::size_t record_count() const {
    std::size_t n = 0;
    for (const auto& s : series) n += s.records.size();
    return n;
  }

  /// Number of records with an observed response.
  std::size_t observed_count() const {
    std::size_t n = 0;
    for (const auto& s : series)
      for (const auto& r : s.records) n += r.missing() ? 0 : 1;
    return n;
  }

  void validate() const {
    if (series.empty()) throw InputError("dataset has no series");
    for (const auto& s : series) {
      s.validate();
      for (const auto& r : s.records)
        for (const auto& name : covariate_names)
          if (!r.covariates.find(name))
            throw SchemaError("series '" + s.id + "' lacks covariate '" + name + "'");
    }
  }

  bool operator==(const Dataset&) const = default;
};

/// Multinomial logit over `n_categories` outcomes; category 1 (row-less) is the
/// reference with all coefficients fixed at zero. Row k-1 of `coefficients`
/// holds (intercept, covariate slopes) for category k.
struct MultinomialLogit {
  std::vector<std::string> covariates;
  Eigen::MatrixXd coefficients;

  int n_categories() const { return static_cast<int>(coefficients.rows()) + 1; }
  int n_predictors() const { return static_cast<int>(covariates.size()) + 1; }

  static MultinomialLogit uniform(int n_categories, std::vector<std::string> covariates = {}) {
    MultinomialLogit m;
    m.coefficients = Eigen::MatrixXd::Zero(n_categories - 1, static_cast<Eigen::Index>(covariates.size()) + 1);
    m.covariates = std::move(covariates);
    return m;
  }

  /// Covariate-free logit reproducing `p` (entries clamped away from 0).
  static MultinomialLogit from_probabilities(const Eigen::VectorXd& p) {
    MultinomialLogit m = uniform(static_cast<int>(p.size()));
    const double ref = std::max(p(0), 1e-300);
    for (Eigen::Index k = 1; k < p.size(); ++k)
      m.coefficients(k - 1, 0) = std::log(std::max(p(k), 1e-300) / ref);
    return m;
  }

  /// Softmax probabilities for a design row (leading 1 then covariates).
  Eigen::VectorXd probabilities(const Eigen::Ref<const Eigen::VectorXd>& design) const {
    const int k = n_categories();
    Eigen::VectorXd eta(k);
    eta(0) = 0.0;
    if (k > 1) eta.tail(k - 1) = coefficients * design;
    const double m = eta.maxCoeff();
    Eigen::VectorXd p = (eta.array() - m).exp();
    return p / p.sum();
  }

  bool operator==(const MultinomialLogit& o) const {
    return covariates == o.covariates && coefficients.rows() == o.coefficients.rows() &&
           coefficients.cols() == o.coefficients.cols() && coefficients == o.coefficients;
  }
};

namespace missingness {

struct Ignorable {
  bool operator==(const Ignorable&) const = default;
};

/// p(M = 1 | S = k) = phi[k].
struct StateBernoulli {
  std::vector<double> phi;
  bool operator==(const StateBernoulli&) const = default;
};

/// p(M = 1 | S = k, x) = logistic(coefficients.row(k) . (1, x)).
struct StateLogistic {
  std::vector<std::string> covariates;
  Eigen::MatrixXd coefficients;  // K x (1 + C)

  int n_predictors() const { return static_cast<int>(covariates.size()) + 1; }
  bool operator==(const StateLogistic& o) const {
    return covariates == o.covariates && coefficients.rows() == o.coefficients.rows() &&
           coefficients.cols() == o.coefficients.cols() && coefficients == o.coefficients;
  }
};

}  // namespace missingness

using MissingnessSpec =
    std::variant<missingness::Ignorable, missingness::StateBernoulli, missingness::StateLogistic>;

inline bool is_ignorable(const MissingnessSpec& spec) {
  return std::holds_alternative<missingness::Ignorable>(spec);
}

struct HmmModel {
  int n_states = 1;
  MultinomialLogit initial;
  std::vector<MultinomialLogit> transition;  // one per origin state
  std::vector<GaussianEmission> emissions;
  MissingnessSpec missingness = missingness::Ignorable{};

  void validate() const {
    const auto k = static_cast<std::size_t>(n_states);
    if (n_states < 1) throw InputError("model needs at least one state");
    if (initial.n_categories() != n_states) throw InputError("initial model has wrong category count");
    if (initial.coefficients.cols() != initial.n_predictors())
      throw InputError("initial model coefficient width does not match its covariates");
    if (transition.size() != k) throw InputError("transition list length must equal the state count");
    for (const auto& row : transition) {
      if (row.n_categories() != n_states) throw InputError("transition model has wrong category count");
      if (row.coefficients.cols() != row.n_predictors())
        throw InputError("transition coefficient width does not match its covariates");
      if (row.covariates != transition.front().covariates)
        throw InputError("all transition rows must share one covariate list");
    }
    if (emissions.size() != k) throw InputError("need exactly one emission per state");
    for (const auto& e : emissions)
      if (!(e.sigma >= kSigmaFloor) || !std::isfinite(e.mu))
        throw InputError("emission sigma below floor or non-finite mean");
    if (const auto* b = std::get_if<missingness::StateBernoulli>(&missingness)) {
      if (b->phi.size() != k) throw InputError("missingness phi list length must equal the state count");
      for (double p : b->phi)
        if (!(p >= 0.0 && p <= 1.0)) throw InputError("missingness phi outside [0,1]");
    } else if (const auto* l = std::get_if<missingness::StateLogistic>(&missingness)) {
      if (l->coefficients.rows() != n_states || l->coefficients.cols() != l->n_predictors())
        throw InputError("missingness coefficient matrix must be K x (1 + covariates)");
    }
  }

  /// Covariate-free model built from probability vectors (simulation truths).
  static HmmModel from_probabilities(const Eigen::VectorXd& initial_probs, const Eigen::MatrixXd& transition_matrix,
                                     std::vector<GaussianEmission> emissions,
                                     MissingnessSpec missingness = missingness::Ignorable{}) {
    HmmModel m;
    m.n_states = static_cast<int>(initial_probs.size());
    m.initial = MultinomialLogit::from_probabilities(initial_probs);
    for (int i = 0; i < m.n_states; ++i)
      m.transition.push_back(MultinomialLogit::from_probabilities(transition_matrix.row(i).transpose()));
    m.emissions = std::move(emissions);
    m.missingness = std::move(missingness);
    m.validate();
    return m;
  }

  bool operator==(const HmmModel&) const = default;
};

/// Parameter-equality constraints applied during estimation.
struct Constraints {
  bool missingness_equal_across_states = false;
  bool operator==(const Constraints&) const = default;
};

/// Design row (1, x_1, ..., x_C) for the named covariates of a record.
inline Eigen::VectorXd design_row(const std::vector<std::string>& names, const Record& record) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(names.size()) + 1);
  x(0) = 1.0;
  for (std::size_t c = 0; c < names.size(); ++c) x(static_cast<Eigen::Index>(c) + 1) = record.covariates.at(names[c]);
  return x;
}

/// Relabels states so that new state j is old state perm[j]. Logit
/// coefficients are re-referenced exactly, so probabilities permute identically.
inline HmmModel permute_states(const HmmModel& model, const std::vector<int>& perm) {
  const int k = model.n_states;
  if (static_cast<int>(perm.size()) != k) throw InputError("permutation length must equal the state count");

  auto relabel = [&](const MultinomialLogit& logit) {
    const Eigen::Index p = logit.coefficients.cols();
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(k, p);
    full.bottomRows(k - 1) = logit.coefficients;
    Eigen::MatrixXd out(k - 1, p);
    for (int j = 1; j < k; ++j) out.row(j - 1) = full.row(perm[j]) - full.row(perm[0]);
    MultinomialLogit r;
    r.covariates = logit.covariates;
    r.coefficients = out;
    return r;
  };

  HmmModel out;
  out.n_states = k;
  out.initial = relabel(model.initial);
  for (int j = 0; j < k; ++j) {
    out.transition.push_back(relabel(model.transition[perm[j]]));
    out.emissions.push_back(model.emissions[perm[j]]);
  }
  if (const auto* b = std::get_if<missingness::StateBernoulli>(&model.missingness)) {
    missingness::StateBernoulli nb;
    for (int j = 0; j < k; ++j) nb.phi.push_back(b->phi[perm[j]]);
    out.missingness = nb;
  } else if (const auto* l = std::get_if<missingness::StateLogistic>(&model.missingness)) {
    missingness::StateLogistic nl{l->covariates, l->coefficients};
    for (int j = 0; j < k; ++j) nl.coefficients.row(j) = l->coefficients.row(perm[j]);
    out.missingness = nl;
  }
  return out;
}

}  // namespace mnarhmm
