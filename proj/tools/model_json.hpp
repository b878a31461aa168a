#pragma once

// Fitted-model documents: the model structure, every parameter value, the
// constraint annotations and the fit summary in one JSON object.

#include <json.hpp>

#include <mnarhmm/mnarhmm.hpp>

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace mnarhmm::cli {

using nlohmann::json;

inline constexpr const char* kModelFormat = "mnarhmm.fitted-model";
inline constexpr int kModelFormatVersion = 1;

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw InputError(what + ": expected " + std::to_string(rows) + " rows");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw InputError(what + ": row " + std::to_string(r + 1) + " needs " + std::to_string(cols) + " values");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline json logit_to_json(const MultinomialLogit& l) {
  return {{"covariates", l.covariates}, {"coefficients", matrix_to_json(l.coefficients)}};
}

inline MultinomialLogit logit_from_json(const json& j, int k, const std::string& what) {
  MultinomialLogit l;
  l.covariates = j.at("covariates").get<std::vector<std::string>>();
  l.coefficients = matrix_from_json(j.at("coefficients"), k - 1, static_cast<Eigen::Index>(l.covariates.size()) + 1, what);
  return l;
}

inline json model_to_json(const HmmModel& m, const Constraints& c = {}) {
  json j;
  j["n_states"] = m.n_states;
  j["reference_category"] = 1;
  j["initial"] = logit_to_json(m.initial);
  json trans = json::array();
  for (const auto& row : m.transition) trans.push_back(logit_to_json(row));
  j["transition"] = trans;
  json em = json::array();
  for (const auto& e : m.emissions) em.push_back({{"mu", e.mu}, {"sigma", e.sigma}});
  j["emissions"] = em;
  json miss;
  if (const auto* b = std::get_if<missingness::StateBernoulli>(&m.missingness)) {
    miss = {{"type", "state_bernoulli"}, {"phi", b->phi}};
  } else if (const auto* l = std::get_if<missingness::StateLogistic>(&m.missingness)) {
    miss = {{"type", "state_logistic"}, {"covariates", l->covariates}, {"coefficients", matrix_to_json(l->coefficients)}};
  } else {
    miss = {{"type", "ignorable"}};
  }
  j["missingness"] = miss;
  j["constraints"] = {{"missingness_equal_across_states", c.missingness_equal_across_states}};
  return j;
}

inline HmmModel model_from_json(const json& j, Constraints* constraints = nullptr) {
  try {
    HmmModel m;
    m.n_states = j.at("n_states").get<int>();
    if (m.n_states < 1) throw InputError("n_states must be >= 1");
    m.initial = logit_from_json(j.at("initial"), m.n_states, "initial");
    const auto& trans = j.at("transition");
    if (!trans.is_array() || static_cast<int>(trans.size()) != m.n_states)
      throw InputError("transition: need one entry per state");
    for (int s = 0; s < m.n_states; ++s)
      m.transition.push_back(logit_from_json(trans[static_cast<std::size_t>(s)], m.n_states, "transition " + std::to_string(s + 1)));
    for (const auto& e : j.at("emissions")) m.emissions.push_back({e.at("mu").get<double>(), e.at("sigma").get<double>()});
    const auto& miss = j.at("missingness");
    const auto type = miss.at("type").get<std::string>();
    if (type == "state_bernoulli") {
      m.missingness = missingness::StateBernoulli{miss.at("phi").get<std::vector<double>>()};
    } else if (type == "state_logistic") {
      missingness::StateLogistic l;
      l.covariates = miss.at("covariates").get<std::vector<std::string>>();
      l.coefficients = matrix_from_json(miss.at("coefficients"), m.n_states, l.n_predictors(), "missingness");
      m.missingness = l;
    } else if (type != "ignorable") {
      throw InputError("unknown missingness type '" + type + "'");
    }
    if (constraints) {
      *constraints = {};
      if (j.contains("constraints"))
        constraints->missingness_equal_across_states = j["constraints"].value("missingness_equal_across_states", false);
    }
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed model: ") + e.what());
  }
}

/// A fitted model plus the numbers needed to compare it with other fits.
struct FittedModelDocument {
  std::string label;
  std::string data;
  std::string response = "y";
  HmmModel model;
  Constraints constraints{};
  double log_likelihood = 0.0;
  bool converged = false;
  int iterations = 0;
  std::size_t nobs = 0;
  int free_parameters = 0;
  int raw_parameters = 0;
  double aic = 0.0;
  double bic = 0.0;
  int best_start = -1;
  std::vector<double> start_log_likelihoods;
};

inline json document_to_json(const FittedModelDocument& d) {
  json starts = json::array();
  for (double v : d.start_log_likelihoods) starts.push_back(std::isfinite(v) ? json(v) : json(nullptr));
  return {{"format", kModelFormat},
          {"version", kModelFormatVersion},
          {"label", d.label},
          {"data", d.data},
          {"response", d.response},
          {"model", model_to_json(d.model, d.constraints)},
          {"fit",
           {{"log_likelihood", d.log_likelihood},
            {"converged", d.converged},
            {"iterations", d.iterations},
            {"nobs", d.nobs},
            {"free_parameters", d.free_parameters},
            {"raw_parameters", d.raw_parameters},
            {"aic", d.aic},
            {"bic", d.bic},
            {"best_start", d.best_start},
            {"start_log_likelihoods", starts}}}};
}

inline FittedModelDocument document_from_json(const json& j) {
  try {
    if (j.value("format", "") != kModelFormat) throw InputError("not a fitted-model document (format field)");
    FittedModelDocument d;
    d.label = j.value("label", "");
    d.data = j.value("data", "");
    d.response = j.value("response", "y");
    d.model = model_from_json(j.at("model"), &d.constraints);
    if (j.contains("fit")) {
      const auto& f = j["fit"];
      d.log_likelihood = f.at("log_likelihood").get<double>();
      d.converged = f.value("converged", false);
      d.iterations = f.value("iterations", 0);
      d.nobs = f.value("nobs", std::size_t{0});
      d.best_start = f.value("best_start", -1);
      d.free_parameters = count_free_parameters(d.model, d.constraints);
      d.raw_parameters = count_raw_parameters(d.model, d.constraints);
      d.aic = aic(d.log_likelihood, d.free_parameters);
      d.bic = d.nobs > 0 ? bic(d.log_likelihood, d.free_parameters, d.nobs) : std::nan("");
      if (f.contains("start_log_likelihoods"))
        for (const auto& v : f["start_log_likelihoods"]) d.start_log_likelihoods.push_back(v.is_null() ? std::nan("") : v.get<double>());
    }
    return d;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed fitted-model document: ") + e.what());
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline FittedModelDocument read_document(const std::string& path) {
  try {
    return document_from_json(read_json_file(path));
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

}  // namespace mnarhmm::cli
