#pragma once

// Subcommands of the mnarhmm tool. run_cli() returns the process exit code:
// 0 success, 2 usage or input error, 3 fit written but not converged.

#include <CLI11.hpp>
#include <json.hpp>

#include <mnarhmm/mnarhmm.hpp>

#include "model_json.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mnarhmm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNotConverged = 3;

/// `out` with its extension replaced by `suffix` ("run.csv" + ".states.csv" -> "run.states.csv").
inline std::string sibling_path(const std::string& out, const std::string& suffix) {
  std::filesystem::path p(out);
  p.replace_extension();
  return p.string() + suffix;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write '" + path + "'");
  return f;
}

template <typename T>
void config_value(const json& cfg, const char* key, const CLI::Option* flag, T& target) {
  if ((flag == nullptr || flag->count() == 0) && cfg.contains(key)) {
    try {
      target = cfg.at(key).get<T>();
    } catch (const json::exception& e) {
      throw InputError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// ---------------------------------------------------------------------------
// Data and model settings shared by fit, decode and describe

struct DataSettings {
  std::string path;
  std::string format = "auto";  // auto, csv, long
  json schema = json::object();

  void add_to(CLI::App* app) {
    app->add_option("--data", path, "Dataset: expanded CSV or whitespace-delimited long file");
    app->add_option("--format", format, "auto, csv or long")->check(CLI::IsMember({"auto", "csv", "long"}));
  }
};

inline LongRecordSchema schema_from_json(const json& j) {
  LongRecordSchema s;
  config_value(j, "columns", nullptr, s.columns);
  config_value(j, "id", nullptr, s.id_column);
  config_value(j, "response", nullptr, s.response_column);
  config_value(j, "week", nullptr, s.week_column);
  config_value(j, "treatment", nullptr, s.treatment_column);
  config_value(j, "missing_tokens", nullptr, s.missing_tokens);
  config_value(j, "first_week", nullptr, s.first_week);
  config_value(j, "last_week", nullptr, s.last_week);
  config_value(j, "main_weeks", nullptr, s.main_weeks);
  config_value(j, "response_min", nullptr, s.response_min);
  config_value(j, "response_max", nullptr, s.response_max);
  return s;
}

inline Dataset load_data(const DataSettings& ds, std::ostream& log) {
  if (ds.path.empty()) throw InputError("--data is required");
  std::string fmt = ds.format;
  if (fmt == "auto") fmt = std::filesystem::path(ds.path).extension() == ".csv" ? "csv" : "long";
  Dataset d;
  if (fmt == "csv") {
    d = read_dataset_csv(ds.path);
  } else {
    std::vector<std::string> warnings;
    d = load_long(ds.path, schema_from_json(ds.schema), &warnings);
    for (const auto& w : warnings) log << "warning: " << w << '\n';
  }
  log << "data: " << d.series.size() << " series, " << d.record_count() << " records, " << d.observed_count()
      << " observed\n";
  return d;
}

inline void require_covariates(const Dataset& d, const std::vector<std::string>& names, const std::string& role) {
  for (const auto& n : names)
    if (std::find(d.covariate_names.begin(), d.covariate_names.end(), n) == d.covariate_names.end()) {
      std::string avail;
      for (const auto& c : d.covariate_names) avail += (avail.empty() ? "" : ", ") + c;
      throw SchemaError(role + " covariate '" + n + "' is not in the data (available: " + (avail.empty() ? "none" : avail) + ")");
    }
}

inline void check_model_against_data(const HmmModel& m, const Dataset& d) {
  require_covariates(d, m.initial.covariates, "initial-state");
  require_covariates(d, m.transition.front().covariates, "transition");
  if (const auto* l = std::get_if<missingness::StateLogistic>(&m.missingness)) require_covariates(d, l->covariates, "missingness");
}

struct ModelSettings {
  int states = 2;
  std::string missingness = "ignorable";
  std::vector<std::string> initial_covariates, transition_covariates, missingness_covariates;
  bool equal_missingness = false;
  CLI::Option *o_states{}, *o_miss{}, *o_init{}, *o_trans{}, *o_mcov{}, *o_equal{};

  void add_to(CLI::App* app) {
    o_states = app->add_option("--states", states, "Number of hidden states")->check(CLI::PositiveNumber);
    o_miss = app->add_option("--missingness", missingness, "ignorable (MAR), bernoulli (state MNAR) or logistic (state + covariate MNAR)")
                 ->check(CLI::IsMember({"ignorable", "mar", "bernoulli", "mnar-state", "logistic", "mnar-time"}));
    o_init = app->add_option("--initial-covariates", initial_covariates, "Covariates of the initial-state logit")->delimiter(',');
    o_trans = app->add_option("--transition-covariates", transition_covariates, "Covariates of the transition logits")->delimiter(',');
    o_mcov = app->add_option("--missingness-covariates", missingness_covariates, "Covariates of the logistic missingness model")->delimiter(',');
    o_equal = app->add_flag("--equal-missingness", equal_missingness, "Constrain missingness parameters to be equal across states");
  }

  void merge(const json& cfg) {
    config_value(cfg, "states", o_states, states);
    const json miss = cfg.value("missingness", json::object());
    if (miss.is_string()) {
      if (o_miss->count() == 0) missingness = miss.get<std::string>();
    } else {
      config_value(miss, "type", o_miss, missingness);
      config_value(miss, "covariates", o_mcov, missingness_covariates);
      config_value(miss, "equal_across_states", o_equal, equal_missingness);
    }
    config_value(cfg, "initial_covariates", o_init, initial_covariates);
    config_value(cfg, "transition_covariates", o_trans, transition_covariates);
  }

  HmmModel model_template() const {
    MissingnessSpec spec = missingness::Ignorable{};
    if (missingness == "bernoulli" || missingness == "mnar-state") {
      spec = missingness::StateBernoulli{};
    } else if (missingness == "logistic" || missingness == "mnar-time") {
      missingness::StateLogistic l;
      l.covariates = missingness_covariates;
      spec = l;
    } else if (missingness != "ignorable" && missingness != "mar") {
      throw InputError("unknown missingness model '" + missingness + "'");
    }
    if (!std::holds_alternative<missingness::StateLogistic>(spec) && !missingness_covariates.empty())
      throw InputError("missingness covariates need --missingness logistic");
    return mnarhmm::model_template(states, initial_covariates, transition_covariates, spec);
  }

  Constraints constraints() const { return {equal_missingness}; }
};

struct EmSettings {
  FitConfig config{};
  CLI::Option *o_iter{}, *o_tol{}, *o_ptol{};

  void add_to(CLI::App* app) {
    o_iter = app->add_option("--max-iterations", config.max_iterations, "EM iteration budget per start");
    o_tol = app->add_option("--tolerance", config.tolerance, "Absolute log-likelihood change for convergence");
    o_ptol = app->add_option("--parameter-tolerance", config.parameter_tolerance,
                             "Also require the largest parameter change below this (0 = off)");
  }

  void merge(const json& cfg) {
    const json em = cfg.value("em", json::object());
    config_value(em, "max_iterations", o_iter, config.max_iterations);
    config_value(em, "tolerance", o_tol, config.tolerance);
    config_value(em, "parameter_tolerance", o_ptol, config.parameter_tolerance);
    config_value(em, "inner_max_iterations", nullptr, config.inner.max_iterations);
    config_value(em, "inner_gradient_tolerance", nullptr, config.inner.gradient_tolerance);
  }
};

// ---------------------------------------------------------------------------
// Scenario configuration

inline Scenario scenario_from_json(const json& j) {
  if (j.is_string()) return builtin_scenario(j.get<std::string>());
  try {
    Scenario s;
    if (j.contains("base")) s = builtin_scenario(j["base"].get<std::string>());
    s.name = j.value("name", s.name.empty() ? std::string("custom") : s.name);
    config_value(j, "mu", nullptr, s.mu);
    config_value(j, "sigma", nullptr, s.sigma);
    if (j.contains("initial")) {
      const auto v = j["initial"].get<std::vector<double>>();
      s.initial = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    if (j.contains("transition")) {
      const auto rows = j["transition"].get<std::vector<std::vector<double>>>();
      s.transition.resize(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size()) throw InputError("scenario transition matrix is ragged");
        for (std::size_t c = 0; c < rows[r].size(); ++c) s.transition(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
      }
    }
    if (j.contains("missingness")) {
      const auto& m = j["missingness"];
      const auto type = m.at("type").get<std::string>();
      if (type == "state_bernoulli") {
        s.mechanism = mechanism::StateBernoulli{m.at("phi").get<std::vector<double>>()};
      } else if (type == "constant") {
        s.mechanism = mechanism::ConstantRate{m.at("rate").get<double>()};
      } else if (type == "time_logistic") {
        s.mechanism = mechanism::TimeLogistic{m.at("beta0").get<double>(), m.at("beta_time").get<double>()};
      } else {
        throw InputError("unknown scenario missingness type '" + type + "' (valid: state_bernoulli, constant, time_logistic)");
      }
    }
    config_value(j, "n_series", nullptr, s.n_series);
    config_value(j, "n_time", nullptr, s.n_time);
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw InputError(std::string("scenario: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_simulate(const std::string& scenario_name, const json& cfg, std::uint64_t seed, std::optional<int> series,
                        std::optional<int> time, const std::string& out_path, std::ostream& log) {
  Scenario sc;
  if (!scenario_name.empty()) {
    sc = builtin_scenario(scenario_name);
  } else if (cfg.contains("scenario")) {
    sc = scenario_from_json(cfg["scenario"]);
  } else {
    throw InputError("simulate needs --scenario or a config with a 'scenario' entry");
  }
  if (series) sc.n_series = *series;
  if (time) sc.n_time = *time;
  if (out_path.empty()) throw InputError("--out is required");
  const auto sim = generate_dataset(sc, seed);
  auto f = open_output(out_path);
  write_dataset_csv(f, sim.dataset);
  const auto states_path = sibling_path(out_path, ".states.csv");
  auto g = open_output(states_path);
  g << "id,t,state\n";
  for (std::size_t i = 0; i < sim.dataset.series.size(); ++i)
    for (std::size_t t = 0; t < sim.true_states[i].size(); ++t)
      g << sim.dataset.series[i].id << ',' << t + 1 << ',' << sim.true_states[i][t] + 1 << '\n';
  const double rate = 1.0 - static_cast<double>(sim.dataset.observed_count()) / static_cast<double>(sim.dataset.record_count());
  log << "simulate: " << sc.name << ", " << sc.n_series << " series x " << sc.n_time << " steps, missing rate " << std::setprecision(4)
      << rate << "\nwrote " << out_path << " and " << states_path << '\n';
  return kExitOk;
}

struct FitOptions {
  int starts = 10;
  std::uint64_t seed = 1;
  std::string init_path, out_path, label, intervals_path;
  double level = 0.95;
};

inline int cmd_fit(const Dataset& data, const DataSettings& ds, const ModelSettings& ms, const EmSettings& em,
                   const FitOptions& fo, unsigned threads, std::ostream& log) {
  if (fo.out_path.empty()) throw InputError("--out is required");
  FitConfig cfg = em.config;
  FittedModelDocument doc;
  FitResult fit;
  if (!fo.init_path.empty()) {
    const auto init = read_document(fo.init_path);
    cfg.constraints = ms.o_equal->count() ? ms.constraints() : init.constraints;
    check_model_against_data(init.model, data);
    fit = em_fit(init.model, data, cfg);
    log << "fit: refined " << fo.init_path << '\n';
  } else {
    const HmmModel tmpl = ms.model_template();
    check_model_against_data(tmpl, data);
    cfg.constraints = ms.constraints();
    const auto ms_fit = multi_start_fit(tmpl, data, fo.starts, fo.seed, cfg, threads);
    fit = ms_fit.best;
    doc.best_start = ms_fit.best_start;
    doc.start_log_likelihoods = ms_fit.final_log_likelihoods;
    for (const auto& f : ms_fit.failures) log << "warning: " << f << '\n';
  }
  doc.label = fo.label.empty() ? std::filesystem::path(fo.out_path).stem().string() : fo.label;
  doc.data = ds.path;
  doc.response = data.response_name;
  doc.model = fit.model;
  doc.constraints = fit.constraints;
  doc.log_likelihood = fit.log_likelihood();
  doc.converged = fit.converged;
  doc.iterations = fit.iterations;
  doc.nobs = data.observed_count();
  doc.free_parameters = count_free_parameters(fit.model, fit.constraints);
  doc.raw_parameters = count_raw_parameters(fit.model, fit.constraints);
  doc.aic = aic(doc.log_likelihood, doc.free_parameters);
  doc.bic = bic(doc.log_likelihood, doc.free_parameters, doc.nobs);
  {
    auto f = open_output(fo.out_path);
    f << document_to_json(doc).dump(2) << '\n';
  }
  log << std::setprecision(10) << "fit: K=" << fit.model.n_states << " logLik " << doc.log_likelihood << ", free parameters "
      << doc.free_parameters << ", AIC " << doc.aic << ", BIC " << doc.bic << ", "
      << (fit.converged ? "converged" : "NOT converged") << " after " << fit.iterations << " iterations\nwrote " << fo.out_path << '\n';
  if (!fo.intervals_path.empty()) {
    const auto ci = approx_confidence_intervals(fit.model, fit.constraints, data, fo.level, threads);
    auto f = open_output(fo.intervals_path);
    write_intervals_csv(f, ci);
    log << "wrote " << fo.intervals_path << '\n';
  }
  return fit.converged ? kExitOk : kExitNotConverged;
}

inline int cmd_decode(const Dataset& data, const std::string& model_path, const std::string& out_path,
                      const std::string& proportions_path, const std::string& group, std::ostream& log) {
  if (model_path.empty() || out_path.empty()) throw InputError("--model and --out are required");
  const auto doc = read_document(model_path);
  const auto& m = doc.model;
  check_model_against_data(m, data);
  if (!group.empty()) require_covariates(data, {group}, "grouping");
  const int k = m.n_states;

  auto f = open_output(out_path);
  f << "id,t," << data.response_name << ",missing";
  for (const auto& c : data.covariate_names) f << ',' << c;
  f << ",state";
  for (int s = 0; s < k; ++s) f << ",posterior_" << s + 1;
  f << '\n' << std::setprecision(12);

  // group value -> occasion index -> state counts
  std::map<double, std::vector<std::vector<int>>> counts;
  std::vector<double> occasion_label;
  for (const auto& s : data.series) {
    const auto post = forward_backward(m, s);
    const auto path = viterbi(m, s);
    const double g = group.empty() ? 0.0 : s.records.front().covariates.at(group);
    auto& tab = counts[g];
    for (std::size_t t = 0; t < s.records.size(); ++t) {
      const auto& r = s.records[t];
      f << s.id << ',' << r.t << ',' << (r.y ? detail::format_double(*r.y) : std::string()) << ',' << (r.missing() ? 1 : 0);
      for (const auto& c : data.covariate_names) f << ',' << detail::format_double(r.covariates.at(c));
      f << ',' << path[t] + 1;
      for (int j = 0; j < k; ++j) f << ',' << post.gamma(static_cast<Eigen::Index>(t), j);
      f << '\n';
      if (tab.size() <= t) tab.resize(t + 1, std::vector<int>(static_cast<std::size_t>(k), 0));
      ++tab[t][static_cast<std::size_t>(path[t])];
      if (occasion_label.size() <= t) occasion_label.push_back(r.covariates.find(kWeekCovariate).value_or(r.t));
    }
  }
  log << "decode: " << data.series.size() << " series with " << k << " states\nwrote " << out_path << '\n';
  if (!proportions_path.empty()) {
    auto p = open_output(proportions_path);
    p << (group.empty() ? "group" : group) << ",occasion,state,proportion,n\n";
    for (const auto& [g, tab] : counts)
      for (std::size_t t = 0; t < tab.size(); ++t) {
        int n = 0;
        for (int c : tab[t]) n += c;
        for (int s = 0; s < k; ++s)
          p << detail::format_double(g) << ',' << detail::format_double(occasion_label[t]) << ',' << s + 1 << ','
            << detail::format_double(n > 0 ? static_cast<double>(tab[t][static_cast<std::size_t>(s)]) / n : 0.0) << ',' << n << '\n';
      }
    log << "wrote " << proportions_path << '\n';
  }
  return kExitOk;
}

struct StudyOptions {
  std::string scenario;
  int replications = 100;
  std::uint64_t seed = 1;
  std::vector<std::string> specs;
  int random_starts = 0;
  int oracle_series = 1000;
  std::string out_path, accuracy_path;
  CLI::Option *o_rep{}, *o_seed{}, *o_specs{}, *o_starts{}, *o_oracle{};
};

inline int cmd_study(StudyOptions so, const EmSettings& em, const json& cfg, unsigned threads, std::ostream& log) {
  config_value(cfg, "replications", so.o_rep, so.replications);
  config_value(cfg, "seed", so.o_seed, so.seed);
  config_value(cfg, "specs", so.o_specs, so.specs);
  config_value(cfg, "random_starts", so.o_starts, so.random_starts);
  config_value(cfg, "oracle_series", so.o_oracle, so.oracle_series);
  Scenario sc;
  if (!so.scenario.empty()) {
    sc = builtin_scenario(so.scenario);
  } else if (cfg.contains("scenario")) {
    sc = scenario_from_json(cfg["scenario"]);
  } else {
    throw InputError("study needs --scenario or a config with a 'scenario' entry");
  }
  if (so.out_path.empty()) throw InputError("--out is required");
  if (so.specs.empty()) so.specs = {to_string(FitFamily::MAR), to_string(natural_family(sc))};

  StudyConfig config;
  config.n_replications = so.replications;
  config.master_seed = so.seed;
  config.fit = em.config;
  config.n_starts = std::max(1, so.random_starts);
  config.threads = threads;
  for (const auto& s : so.specs) config.specs.push_back({to_string(parse_family(s)), parse_family(s), so.random_starts == 0});
  log << "study: " << sc.name << ", " << so.replications << " replications, specs";
  for (const auto& s : config.specs) log << ' ' << s.label;
  log << '\n';
  const auto summary = run_study(sc, config);

  {
    auto f = open_output(so.out_path);
    summary.write_csv(f);
  }
  const auto acc_path = so.accuracy_path.empty() ? sibling_path(so.out_path, ".accuracy.csv") : so.accuracy_path;
  {
    auto f = open_output(acc_path);
    summary.write_accuracy_csv(f);
  }
  log << std::setprecision(4);
  for (std::size_t j = 0; j < summary.spec_labels.size(); ++j) {
    log << "  " << summary.spec_labels[j] << ": recovery " << summary.mean_accuracy[j];
    if (static_cast<int>(j) != summary.reference_spec)
      log << ", average relative MAE " << summary.spec_labels[j] << "/"
          << summary.spec_labels[static_cast<std::size_t>(summary.reference_spec)] << ' ' << summary.average_rel_mae[j];
    log << ", failures " << summary.failures[j] << '\n';
  }
  if (so.oracle_series > 0) {
    const auto oracle_path = sibling_path(so.out_path, ".oracle.csv");
    auto f = open_output(oracle_path);
    const std::uint64_t oseed = seeded_engine(so.seed, 0)();
    f << "oracle,accuracy\n" << std::setprecision(10);
    f << "mixture," << mixture_oracle_accuracy(sc, so.oracle_series, oseed) << '\n';
    f << "hmm_truth," << hmm_oracle_accuracy(sc, so.oracle_series, oseed, true) << '\n';
    f << "hmm_truth_ignoring_missingness," << hmm_oracle_accuracy(sc, so.oracle_series, oseed, false) << '\n';
    log << "wrote " << oracle_path << '\n';
  }
  log << "wrote " << so.out_path << " and " << acc_path << '\n';
  return kExitOk;
}

inline int cmd_select(const std::vector<std::string>& fits, const std::vector<std::string>& lrt, const std::string& out_path,
                      std::string lrt_path, std::ostream& log) {
  if (fits.empty()) throw InputError("select needs at least one --fit file");
  if (out_path.empty()) throw InputError("--out is required");
  std::vector<ComparisonRow> rows;
  std::size_t nobs = 0;
  for (const auto& path : fits) {
    const auto doc = read_document(path);
    if (doc.nobs == 0) throw InputError(path + ": fitted-model document lacks nobs");
    if (nobs != 0 && doc.nobs != nobs)
      throw InputError(path + ": fitted on " + std::to_string(doc.nobs) + " observations, others on " + std::to_string(nobs));
    nobs = doc.nobs;
    const auto label = doc.label.empty() ? std::filesystem::path(path).stem().string() : doc.label;
    rows.push_back(make_comparison_row(label, doc.model, doc.constraints, doc.log_likelihood, doc.nobs));
  }
  {
    auto f = open_output(out_path);
    write_comparison_csv(f, rows);
  }
  const auto best_bic = std::min_element(rows.begin(), rows.end(), [](auto& a, auto& b) { return a.bic < b.bic; });
  log << "select: " << rows.size() << " models, nobs " << nobs << ", lowest BIC: " << best_bic->label << "\nwrote " << out_path << '\n';
  if (lrt.empty()) return kExitOk;
  if (lrt.size() != 2) throw InputError("--lrt takes FULL RESTRICTED");
  auto find = [&](const std::string& key) -> const ComparisonRow& {
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (rows[i].label == key || fits[i] == key) return rows[i];
    throw InputError("--lrt: no model labelled '" + key + "'");
  };
  const auto res = likelihood_ratio_test(find(lrt[0]), find(lrt[1]));
  if (lrt_path.empty()) lrt_path = sibling_path(out_path, ".lrt.csv");
  auto f = open_output(lrt_path);
  f << "full,restricted,statistic,df,p_value\n" << std::setprecision(10) << lrt[0] << ',' << lrt[1] << ',' << res.statistic << ','
    << res.df << ',' << res.p_value << '\n';
  log << "LRT " << lrt[0] << " vs " << lrt[1] << ": chi2(" << res.df << ") = " << res.statistic << ", p = " << res.p_value
      << "\nwrote " << lrt_path << '\n';
  return kExitOk;
}

inline int cmd_describe(const Dataset& data, std::vector<std::string> terms, const std::string& out_path,
                        const std::string& glm_path, const std::string& expanded_path, std::ostream& log) {
  const auto prof = summarize_missingness(data);
  log << std::setprecision(4) << "observed fraction per occasion:";
  for (std::size_t i = 0; i < prof.occasions.size(); ++i) log << ' ' << prof.occasions[i] << ':' << prof.observed_fraction[i];
  log << "\nsubjects with >= 4 observations: " << prof.fraction_at_least(4) << " (main occasions only: "
      << prof.fraction_at_least(4, true) << ")\n";
  if (!out_path.empty()) {
    auto f = open_output(out_path);
    write_profile_csv(f, prof);
    log << "wrote " << out_path << '\n';
  }
  if (!expanded_path.empty()) {
    auto f = open_output(expanded_path);
    const bool has_week = std::find(data.covariate_names.begin(), data.covariate_names.end(), kWeekCovariate) != data.covariate_names.end();
    write_dataset_csv(f, data, has_week ? kWeekCovariate : "");
    log << "wrote " << expanded_path << '\n';
  }
  if (!glm_path.empty()) {
    if (terms.empty()) terms = data.covariate_names;
    const auto g = glm_missingness(data, terms);
    auto f = open_output(glm_path);
    write_glm_csv(f, g);
    log << "missingness GLM: " << g.terms.size() << " terms" << (g.separated ? ", separation detected" : "") << "\nwrote "
        << glm_path << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Hidden Markov models for time series with missing observations"};
  app.name("mnarhmm");
  app.require_subcommand(1);
  unsigned threads = default_thread_count();
  std::string config_path;
  app.add_option("--threads", threads, "Worker threads (default: MNARHMM_THREADS or hardware concurrency)")
      ->check(CLI::PositiveNumber);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a dataset from a simulation scenario");
  std::string sim_scenario, sim_out;
  std::uint64_t sim_seed = 1;
  std::optional<int> sim_series, sim_time;
  sim->add_option("--scenario", sim_scenario, "Built-in scenario (sim1 ... sim5)");
  sim->add_option("--config", config_path, "JSON configuration");
  sim->add_option("--seed", sim_seed, "Random seed");
  sim->add_option("--series", sim_series, "Override the number of series");
  sim->add_option("--time", sim_time, "Override the series length");
  sim->add_option("--out", sim_out, "Output CSV; true states go to <stem>.states.csv");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a model by multi-start EM");
  DataSettings fit_data;
  ModelSettings fit_model;
  EmSettings fit_em;
  FitOptions fit_opts;
  fit_data.add_to(fit);
  fit_model.add_to(fit);
  fit_em.add_to(fit);
  fit->add_option("--config", config_path, "JSON configuration");
  auto* o_starts = fit->add_option("--starts", fit_opts.starts, "Random starts in addition to the moment-based start");
  auto* o_seed = fit->add_option("--seed", fit_opts.seed, "Seed of the random starts");
  fit->add_option("--init", fit_opts.init_path, "Start from a fitted-model file instead of multi-start");
  fit->add_option("--label", fit_opts.label, "Model label used by select");
  fit->add_option("--out", fit_opts.out_path, "Fitted-model JSON output");
  fit->add_option("--intervals", fit_opts.intervals_path, "Also write Wald confidence intervals to this CSV");
  fit->add_option("--level", fit_opts.level, "Confidence level")->check(CLI::Range(0.0, 1.0));

  // decode
  auto* dec = app.add_subcommand("decode", "MAP states and posterior state probabilities");
  DataSettings dec_data;
  dec_data.add_to(dec);
  std::string dec_model, dec_out, dec_props, dec_group;
  dec->add_option("--config", config_path, "JSON configuration (schema)");
  dec->add_option("--model", dec_model, "Fitted-model JSON");
  dec->add_option("--out", dec_out, "Per-record CSV");
  dec->add_option("--proportions", dec_props, "Per-occasion MAP state proportions CSV");
  dec->add_option("--group", dec_group, "Covariate defining groups for the proportions (e.g. drug)");

  // study
  auto* stu = app.add_subcommand("study", "Replicated simulate-and-fit study");
  StudyOptions so;
  EmSettings stu_em;
  stu_em.add_to(stu);
  stu->add_option("--config", config_path, "JSON configuration");
  stu->add_option("--scenario", so.scenario, "Built-in scenario (sim1 ... sim5)");
  so.o_rep = stu->add_option("--replications", so.replications, "Number of replications")->check(CLI::PositiveNumber);
  so.o_seed = stu->add_option("--seed", so.seed, "Master seed");
  so.o_specs = stu->add_option("--specs", so.specs, "Fit families: MAR, MNAR-state, MNAR-time (first is the reference)")->delimiter(',');
  so.o_starts = stu->add_option("--random-starts", so.random_starts, "Random starts per fit (0: start at the truth)");
  so.o_oracle = stu->add_option("--oracle-series", so.oracle_series, "Monte-Carlo series for the oracle accuracies (0: skip)");
  stu->add_option("--out", so.out_path, "Parameter summary CSV");
  stu->add_option("--accuracy-out", so.accuracy_path, "Recovery accuracy CSV (default <stem>.accuracy.csv)");

  // select
  auto* sel = app.add_subcommand("select", "Compare fitted models by AIC/BIC and likelihood-ratio test");
  std::vector<std::string> sel_fits, sel_lrt;
  std::string sel_out, sel_lrt_out;
  sel->add_option("--fit", sel_fits, "Fitted-model JSON files")->expected(1, -1);
  sel->add_option("--lrt", sel_lrt, "FULL RESTRICTED labels for a likelihood-ratio test")->expected(2);
  sel->add_option("--out", sel_out, "Comparison CSV");
  sel->add_option("--lrt-out", sel_lrt_out, "LRT CSV (default <stem>.lrt.csv)");

  // describe
  auto* des = app.add_subcommand("describe", "Missingness profile and state-free missingness regression");
  DataSettings des_data;
  des_data.add_to(des);
  std::vector<std::string> des_terms;
  std::string des_out, des_glm, des_expanded;
  des->add_option("--config", config_path, "JSON configuration (schema)");
  des->add_option("--terms", des_terms, "GLM terms; a:b is a product")->delimiter(',');
  des->add_option("--out", des_out, "Per-occasion observed-fraction CSV");
  des->add_option("--glm-out", des_glm, "Missingness GLM coefficient CSV");
  des->add_option("--expanded-out", des_expanded, "Expanded dataset CSV");

  std::vector<const char*> argv{"mnarhmm"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    json cfg = json::object();
    if (!config_path.empty()) cfg = read_json_file(config_path);
    if (cfg.contains("threads") && app.get_option("--threads")->count() == 0) threads = cfg["threads"].get<unsigned>();
    auto with_schema = [&](DataSettings& ds) {
      if (cfg.contains("schema")) ds.schema = cfg["schema"];
      if (ds.path.empty()) config_value(cfg, "data", nullptr, ds.path);
    };

    if (sim->parsed()) {
      if (sim->get_option("--seed")->count() == 0) config_value(cfg, "seed", nullptr, sim_seed);
      if (sim_out.empty()) config_value(cfg, "out", nullptr, sim_out);
      return cmd_simulate(sim_scenario, cfg, sim_seed, sim_series, sim_time, sim_out, out);
    }
    if (fit->parsed()) {
      with_schema(fit_data);
      fit_model.merge(cfg);
      fit_em.merge(cfg);
      config_value(cfg, "starts", o_starts, fit_opts.starts);
      config_value(cfg, "seed", o_seed, fit_opts.seed);
      if (fit_opts.out_path.empty()) config_value(cfg, "out", nullptr, fit_opts.out_path);
      const auto data = load_data(fit_data, out);
      return cmd_fit(data, fit_data, fit_model, fit_em, fit_opts, threads, out);
    }
    if (dec->parsed()) {
      with_schema(dec_data);
      const auto data = load_data(dec_data, out);
      return cmd_decode(data, dec_model, dec_out, dec_props, dec_group, out);
    }
    if (stu->parsed()) {
      stu_em.merge(cfg);
      if (so.out_path.empty()) config_value(cfg, "out", nullptr, so.out_path);
      return cmd_study(so, stu_em, cfg, threads, out);
    }
    if (sel->parsed()) return cmd_select(sel_fits, sel_lrt, sel_out, sel_lrt_out, out);
    if (des->parsed()) {
      with_schema(des_data);
      const auto data = load_data(des_data, out);
      return cmd_describe(data, des_terms, des_out, des_glm, des_expanded, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const json::exception& e) {
    err << "error: configuration: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace mnarhmm::cli
