// Acceptance suite. One line per criterion:
//   PASS|FAIL|SKIP  <n>  <name>: <measured values>  (<seconds>)
// MNARHMM_ACCEPTANCE=1,2,5 restricts the run to the listed criteria.
// MNARHMM_SCHIZ_DATA points at the public schizophrenia trial file; without
// it (or data/SCHIZREP.DAT.txt in the source tree) criterion 10 is skipped.

#include "test_support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

using namespace mnarhmm;
using mnarhmm::test::Regime;

namespace {

enum class Status { Pass, Fail, Skip };

struct Outcome {
  Status status = Status::Pass;
  std::string detail;
};

// Accumulates sub-checks; the first failure is listed first in the detail.
class Checks {
 public:
  void check(bool ok, const std::string& what) {
    (ok ? passed_ : failed_).push_back(what);
  }
  void note(const std::string& what) { passed_.push_back(what); }
  Outcome outcome() const {
    Outcome o;
    o.status = failed_.empty() ? Status::Pass : Status::Fail;
    std::string s;
    for (const auto& f : failed_) s += (s.empty() ? "" : "; ") + ("MISS " + f);
    for (const auto& p : passed_) s += (s.empty() ? "" : "; ") + p;
    o.detail = s;
    return o;
  }

 private:
  std::vector<std::string> passed_, failed_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool within(double v, double target, double tol) { return std::fabs(v - target) <= tol; }

std::string range_note(const std::string& name, double v, double target, double tol, const char* f = "%.4f") {
  return name + " " + fmt(f, v) + " (target " + fmt(f, target) + " +/- " + fmt("%g", tol) + ")";
}

void check_near(Checks& c, const std::string& name, double v, double target, double tol, const char* f = "%.4f") {
  c.check(within(v, target, tol), range_note(name, v, target, tol, f));
}

// ---------------------------------------------------------------------------
// 1-4: exact identities

Outcome oracle_equivalence() {
  std::mt19937_64 rng(101);
  const Regime regimes[] = {Regime::Ignorable, Regime::Bernoulli, Regime::Logistic};
  double worst = 0.0;
  int n = 0;
  for (int k = 1; k <= 3; ++k)
    for (int rep = 0; rep < 67 && n < 200; ++rep, ++n) {
      const auto regime = regimes[n % 3];
      const int length = 1 + static_cast<int>(rng() % 8);
      const auto model = test::random_model(k, regime, rng);
      const auto series = test::random_series(length, rng, 0.35);
      const double fb = forward_backward(model, series).log_likelihood;
      const double bf = test::enumerated_log_likelihood(model, series);
      worst = std::max(worst, std::fabs(fb - bf) / std::max(1.0, std::fabs(bf)));
    }
  Checks c;
  c.check(n == 200, std::to_string(n) + " pairs");
  c.check(worst <= 1e-10, "max relative error " + fmt("%.2e", worst) + " (<= 1e-10)");
  return c.outcome();
}

Outcome viterbi_optimality() {
  std::mt19937_64 rng(202);
  const Regime regimes[] = {Regime::Ignorable, Regime::Bernoulli, Regime::Logistic};
  int optimal = 0;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto model = test::random_model(3, regimes[i % 3], rng);
    const auto series = test::random_series(6, rng, 0.35);
    const auto path = viterbi(model, series);
    const double lp = test::path_log_probability(model, series, path);
    const double best = test::enumerated_max_log_probability(model, series);
    const double gap = best - lp;
    worst = std::max(worst, gap);
    optimal += gap <= 1e-12 * std::max(1.0, std::fabs(best));
  }
  Checks c;
  c.check(optimal == 100, std::to_string(optimal) + "/100 paths attain the enumerated maximum over 729");
  c.note("largest gap " + fmt("%.2e", worst));
  return c.outcome();
}

Outcome em_monotone_fixed_point() {
  std::mt19937_64 rng(303);
  const Regime regimes[] = {Regime::Ignorable, Regime::Bernoulli, Regime::Logistic};
  FitConfig cfg;
  cfg.tolerance = 1e-9;
  cfg.parameter_tolerance = 1e-9;
  cfg.max_iterations = 60000;
  std::uniform_real_distribution<double> persistence(0.6, 0.9);
  std::normal_distribution<double> norm(0.0, 1.0);
  double worst_drop = 0.0, worst_move = 0.0;
  int converged = 0, failed = 0;
  for (int i = 0; i < 50; ++i) {
    auto truth = test::random_model(2, regimes[i % 3], rng, false);
    truth.emissions = {{-1.5, 1.0}, {1.5, 1.0}};
    // persistent, balanced chain; starts below stay fully random
    truth.initial.coefficients(0, 0) = 0.5 * norm(rng);
    truth.transition[0].coefficients(0, 0) = logit(1.0 - persistence(rng));
    truth.transition[1].coefficients(0, 0) = logit(persistence(rng));
    const auto data = test::sample_dataset(truth, 30, 30, rng);
    try {
      const auto fit = em_fit(test::random_model(2, regimes[i % 3], rng, false), data, cfg);
      for (std::size_t t = 1; t < fit.trace.size(); ++t) worst_drop = std::max(worst_drop, fit.trace[t - 1] - fit.trace[t]);
      if (!fit.converged) continue;
      ++converged;
      const auto refit = em_fit(fit.model, data, cfg);
      worst_move = std::max(worst_move, max_parameter_change(fit.model, refit.model));
    } catch (const Error&) {
      ++failed;
    }
  }
  Checks c;
  c.check(worst_drop <= 1e-8, "largest log-likelihood decrease " + fmt("%.2e", worst_drop) + " (<= 1e-8)");
  c.check(converged == 50, std::to_string(converged) + "/50 fits converged" + (failed ? ", " + std::to_string(failed) + " threw" : ""));
  c.check(worst_move <= 1e-6, "largest refit parameter move " + fmt("%.2e", worst_move) + " (<= 1e-6)");
  return c.outcome();
}

Outcome mar_factorization() {
  std::mt19937_64 rng(404);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const int k = 1 + i % 3;
    auto model = test::random_model(k, Regime::Logistic, rng);
    auto& l = std::get<missingness::StateLogistic>(model.missingness);
    for (int s = 1; s < k; ++s) l.coefficients.row(s) = l.coefficients.row(0);
    const auto data = test::random_dataset(8, 12, rng);
    auto ignorable = model;
    ignorable.missingness = missingness::Ignorable{};
    const double diff = log_likelihood(model, data) - log_likelihood(ignorable, data);
    worst = std::max(worst, std::fabs(diff - test::shared_missingness_log_likelihood(l, data)));
  }
  Checks c;
  c.check(worst <= 1e-9, "max |LL(MNAR) - LL(MAR) - LL(missingness)| " + fmt("%.2e", worst) + " over 20 datasets (<= 1e-9)");
  return c.outcome();
}

// ---------------------------------------------------------------------------
// 5-8: simulation studies at 100 replications, fits started at the truth

StudySummary study(const std::string& scenario, std::vector<StudyFitSpec> specs, std::uint64_t seed) {
  StudyConfig cfg;
  cfg.n_replications = 100;
  cfg.master_seed = seed;
  cfg.specs = std::move(specs);
  cfg.reference_spec = 0;
  cfg.fit.max_iterations = 50000;  // run to the 1e-6 rule; overlapping states need ~20k
  return run_study(builtin_scenario(scenario), cfg);
}

double parameter_mean(const StudySummary& s, const std::string& name, std::size_t spec) {
  for (const auto& p : s.parameters)
    if (p.name == name) return p.mean[spec];
  return std::nan("");
}

void describe_study(Checks& c, const StudySummary& s) {
  std::string d = std::to_string(s.n_used) + "/" + std::to_string(s.n_replications) + " replications used";
  for (std::size_t j = 0; j < s.spec_labels.size(); ++j)
    if (s.nonconverged[j]) d += ", " + s.spec_labels[j] + " not converged in " + std::to_string(s.nonconverged[j]);
  c.note(d);
}

Outcome simulation1() {
  const auto s = study("sim1", {{"MAR", FitFamily::MAR, true}, {"MNAR", FitFamily::MNARState, true}}, 5001);
  Checks c;
  const double rel = s.average_rel_mae[1];
  c.check(rel < 1.0 && within(rel, 0.770, 0.10), range_note("average relative MAE MNAR/MAR", rel, 0.770, 0.10) + ", < 1");
  check_near(c, "MAR recovery", s.mean_accuracy[0], 0.531, 0.02);
  check_near(c, "MNAR recovery", s.mean_accuracy[1], 0.629, 0.02);
  const double phi[] = {0.05, 0.25, 0.50};
  for (int k = 0; k < 3; ++k)
    check_near(c, "MNAR phi_" + std::to_string(k + 1) + " mean", parameter_mean(s, "phi_" + std::to_string(k + 1), 1), phi[k], 0.02);
  describe_study(c, s);
  return c.outcome();
}

Outcome simulation2() {
  const auto s = study("sim2", {{"MAR", FitFamily::MAR, true}, {"MNAR", FitFamily::MNARState, true}}, 5002);
  Checks c;
  check_near(c, "average relative MAE MNAR/MAR", s.average_rel_mae[1], 1.00, 0.05);
  const double gap = std::fabs(s.mean_accuracy[0] - s.mean_accuracy[1]);
  c.check(gap <= 0.02, "recovery MAR " + fmt("%.4f", s.mean_accuracy[0]) + " vs MNAR " + fmt("%.4f", s.mean_accuracy[1]) +
                           " (gap " + fmt("%.4f", gap) + " <= 0.02)");
  describe_study(c, s);
  return c.outcome();
}

Outcome simulation3() {
  const auto s = study("sim3", {{"MAR", FitFamily::MAR, true}, {"MNAR", FitFamily::MNARState, true}}, 5003);
  Checks c;
  const double rel = s.average_rel_mae[1];
  c.check(rel <= 0.75, "average relative MAE MNAR/MAR " + fmt("%.4f", rel) + " (<= 0.75)");
  check_near(c, "MAR recovery", s.mean_accuracy[0], 0.35, 0.03);
  check_near(c, "MNAR recovery", s.mean_accuracy[1], 0.45, 0.03);
  describe_study(c, s);
  return c.outcome();
}

Outcome simulation5() {
  const auto s = study("sim5",
                       {{"MAR", FitFamily::MAR, true}, {"MNAR-state", FitFamily::MNARState, true},
                        {"MNAR-time", FitFamily::MNARTime, true}},
                       5005);
  Checks c;
  c.check(s.average_rel_mae[1] >= 1.2, "average relative MAE MNAR(state)/MAR " + fmt("%.4f", s.average_rel_mae[1]) + " (>= 1.2)");
  c.check(s.average_rel_mae[2] >= 0.95 && s.average_rel_mae[2] <= 1.15,
          "average relative MAE MNAR(time)/MAR " + fmt("%.4f", s.average_rel_mae[2]) + " (in [0.95, 1.15])");
  check_near(c, "MNAR(state) recovery", s.mean_accuracy[1], 0.50, 0.03);
  c.note("MAR recovery " + fmt("%.4f", s.mean_accuracy[0]) + ", MNAR(time) recovery " + fmt("%.4f", s.mean_accuracy[2]));
  describe_study(c, s);
  return c.outcome();
}

// ---------------------------------------------------------------------------
// 9: classification ceilings under the true parameters

Outcome oracle_ceilings() {
  constexpr int kSeries = 4000;  // 200000 points per estimate, MC SE about 0.001
  const auto sim1 = builtin_scenario("sim1"), sim3 = builtin_scenario("sim3");
  Checks c;
  check_near(c, "sim1 mixture", mixture_oracle_accuracy(sim1, kSeries, 9001), 0.5009, 0.01);
  check_near(c, "sim1 HMM truth", hmm_oracle_accuracy(sim1, kSeries, 9002), 0.6651, 0.01);
  check_near(c, "sim3 mixture", mixture_oracle_accuracy(sim3, kSeries, 9003), 0.4403, 0.01);
  check_near(c, "sim3 HMM truth", hmm_oracle_accuracy(sim3, kSeries, 9004), 0.5404, 0.015);
  // alternative mixture convention, reported only
  c.note("expected-posterior mixture score sim1 " +
         fmt("%.4f", mixture_oracle_accuracy(sim1, kSeries, 9001, MixtureScore::ExpectedPosterior)) + ", sim3 " +
         fmt("%.4f", mixture_oracle_accuracy(sim3, kSeries, 9003, MixtureScore::ExpectedPosterior)));
  return c.outcome();
}

// ---------------------------------------------------------------------------
// 10: schizophrenia trial application

std::string application_data_path() {
  if (const char* p = std::getenv("MNARHMM_SCHIZ_DATA"); p && *p) return p;
  const std::string local = std::string(MNARHMM_SOURCE_DIR) + "/data/SCHIZREP.DAT.txt";
  return std::filesystem::exists(local) ? local : std::string();
}

// States ordered by increasing mean.
HmmModel order_by_mean(const HmmModel& m) {
  std::vector<int> perm(static_cast<std::size_t>(m.n_states));
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(), [&](int a, int b) {
    return m.emissions[static_cast<std::size_t>(a)].mu < m.emissions[static_cast<std::size_t>(b)].mu;
  });
  return permute_states(m, perm);
}

Outcome application() {
  const auto path = application_data_path();
  if (path.empty()) return {Status::Skip, "data file not supplied (set MNARHMM_SCHIZ_DATA)"};
  const auto data = load_long(path);
  Checks c;
  c.check(data.series.size() == 437, std::to_string(data.series.size()) + " subjects (437)");

  const auto profile = summarize_missingness(data);
  const double weeks[] = {0.9931, 0.9748, 0.032, 0.8558, 0.0252, 0.0206, 0.7666};
  bool weeks_ok = profile.observed_fraction.size() == 7;
  std::string w;
  for (std::size_t i = 0; i < profile.observed_fraction.size() && i < 7; ++i) {
    const double v = std::round(profile.observed_fraction[i] * 1e4) / 1e4;
    weeks_ok = weeks_ok && within(v, weeks[i], 5e-5);
    w += (i ? " " : "") + fmt("%.4f", v);
  }
  c.check(weeks_ok, "week observed fractions " + w);

  const auto glm = glm_missingness(data, {"drug", "week", "main", "drug:week", "drug:main"});
  const double beta[] = {1.921, 0.433, 0.496, -5.381, -0.112, -0.596};
  bool glm_ok = glm.terms.size() == 6;
  std::string g;
  for (std::size_t i = 0; i < glm.terms.size() && i < 6; ++i) {
    glm_ok = glm_ok && within(glm.terms[i].estimate, beta[i], 0.01);
    g += (i ? " " : "") + fmt("%.3f", glm.terms[i].estimate);
  }
  c.check(glm_ok, "missingness GLM " + g);

  const std::size_t nobs = data.observed_count();
  FitConfig cfg;
  cfg.max_iterations = 5000;
  cfg.tolerance = 1e-8;
  auto fit = [&](int k, bool mnar) {
    missingness::StateLogistic l;
    l.covariates = {"week", "main"};
    const auto tmpl = model_template(k, {"drug"}, {"drug"}, mnar ? MissingnessSpec(l) : MissingnessSpec(missingness::Ignorable{}));
    return multi_start_fit(tmpl, data, 20, 2024 + static_cast<std::uint64_t>(k), cfg).best;
  };
  const double table_ll[2][4] = {{-2422.675, -2266.603, -2225.871, -2182.390}, {-3074.628, -2889.040, -2841.108, -2800.336}};
  const double table_aic[2][4] = {{4865.350, 4577.206, 4527.742, 4480.781}, {6181.256, 5840.081, 5782.215, 5746.671}};
  const double table_bic[2][4] = {{4919.146, 4695.558, 4732.168, 4792.799}, {6267.330, 6006.849, 6051.197, 6139.385}};
  FitResult mar3, mnar3;
  for (int family = 0; family < 2; ++family) {
    const char* label = family ? "MNAR" : "MAR";
    int best_k = 0;
    double best_bic = std::numeric_limits<double>::infinity();
    bool ic_ok = true;
    std::string lls;
    for (int k = 2; k <= 5; ++k) {
      const auto f = fit(k, family == 1);
      const auto row = make_comparison_row(label, f, nobs);
      if (k == 3) (family ? mnar3 : mar3) = f;
      if (row.bic < best_bic) best_bic = row.bic, best_k = k;
      ic_ok = ic_ok && within(row.aic, table_aic[family][k - 2], 4.0) && within(row.bic, table_bic[family][k - 2], 4.0);
      lls += (k > 2 ? " " : "") + fmt("%.3f", row.log_likelihood);
    }
    c.check(ic_ok, std::string(label) + " AIC/BIC within 4 of the table; LL K=2..5 " + lls);
    c.check(best_k == 3, std::string(label) + " BIC-minimal K = " + std::to_string(best_k));
  }
  check_near(c, "MAR3 LL", mar3.log_likelihood(), table_ll[0][1], 2.0, "%.3f");
  check_near(c, "MNAR3 LL", mnar3.log_likelihood(), table_ll[1][1], 2.0, "%.3f");

  FitSpec tied = constrain_missingness_equal({mnar3.model, cfg});
  const auto tied_fit = em_fit(tied.model, data, tied.config);
  const auto lrt = likelihood_ratio_test(make_comparison_row("MNAR3", mnar3, nobs), make_comparison_row("tied", tied_fit, nobs));
  c.check(within(lrt.statistic, 1328.57, 10.0) && lrt.df == 6,
          "LRT " + fmt("%.2f", lrt.statistic) + " on " + std::to_string(lrt.df) + " df (1328.57 +/- 10, 6 df)");

  const auto mar_o = order_by_mean(mar3.model), mnar_o = order_by_mean(mnar3.model);
  const double mar_mu[] = {2.315, 4.339, 5.7}, mnar_mu[] = {2.325, 4.424, 5.756};
  for (int k = 0; k < 3; ++k) {
    check_near(c, "MAR mu_" + std::to_string(k + 1), mar_o.emissions[static_cast<std::size_t>(k)].mu, mar_mu[k], 0.1, "%.3f");
    check_near(c, "MNAR mu_" + std::to_string(k + 1), mnar_o.emissions[static_cast<std::size_t>(k)].mu, mnar_mu[k], 0.1, "%.3f");
  }
  try {
    const auto ci = approx_confidence_intervals(mnar_o, {}, data, 0.95);
    const std::pair<const char*, std::array<double, 2>> bounds[] = {
        {"miss_1_(Intercept)", {1.998, 3.272}}, {"miss_1_week", {0.028, 0.269}}, {"miss_1_main", {-5.037, -3.984}}};
    for (const auto& [name, b] : bounds) {
      const auto& p = ci.at(name);
      c.check(within(p.lower, b[0], 0.1) && within(p.upper, b[1], 0.1),
              std::string(name) + " CI [" + fmt("%.3f", p.lower) + ", " + fmt("%.3f", p.upper) + "] vs [" + fmt("%.3f", b[0]) +
                  ", " + fmt("%.3f", b[1]) + "]");
    }
  } catch (const Error& e) {
    c.check(false, std::string("state-1 missingness intervals: ") + e.what());
  }
  return c.outcome();
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
  double time_limit = 0.0;  // seconds; 0 = none
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "forward-backward equals enumeration", oracle_equivalence, 10.0},
      {2, "Viterbi optimality", viterbi_optimality, 5.0},
      {3, "EM monotonicity and fixed point", em_monotone_fixed_point},
      {4, "MAR factorization identity", mar_factorization},
      {5, "simulation 1 (state-dependent, well separated)", simulation1},
      {6, "simulation 2 (MAR, well separated)", simulation2},
      {7, "simulation 3 (state-dependent, overlapping)", simulation3},
      {8, "simulation 5 (time-dependent)", simulation5},
      {9, "classification ceilings", oracle_ceilings},
      {10, "schizophrenia trial application", application},
  };
  std::set<int> selected;
  if (const char* sel = std::getenv("MNARHMM_ACCEPTANCE"); sel && *sel) {
    std::stringstream ss(sel);
    for (std::string tok; std::getline(ss, tok, ',');) selected.insert(std::stoi(tok));
  }

  int failures = 0;
  for (const auto& cr : criteria) {
    if (!selected.empty() && !selected.count(cr.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (cr.time_limit > 0.0 && secs > cr.time_limit && o.status == Status::Pass) {
      o.status = Status::Fail;
      o.detail += "; runtime over " + fmt("%.0f", cr.time_limit) + " s";
    }
    const char* tag = o.status == Status::Pass ? "PASS" : o.status == Status::Fail ? "FAIL" : "SKIP";
    std::cout << tag << "  " << cr.id << "  " << cr.name << ": " << o.detail << "  (" << fmt("%.1f", secs) << " s)" << std::endl;
    failures += o.status == Status::Fail;
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all run criteria passed")) << std::endl;
  return failures ? 1 : 0;
}
