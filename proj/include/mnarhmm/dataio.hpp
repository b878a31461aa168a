#pragma once

// Long-format longitudinal ingestion, expanded-grid CSV round trip,
// missingness summaries and the state-free missingness logistic model.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mnarhmm/error.hpp"
#include "mnarhmm/logit_fit.hpp"
#include "mnarhmm/math.hpp"
#include "mnarhmm/model.hpp"

namespace mnarhmm {

/// Column roles of a whitespace-delimited long file. A header line, when
/// present, overrides `columns`.
struct LongRecordSchema {
  std::vector<std::string> columns{"id", "imps79", "week", "drug", "sex"};
  std::string id_column = "id";
  std::string response_column = "imps79";
  std::string week_column = "week";
  std::string treatment_column = "drug";  // empty: no treatment covariate
  std::vector<std::string> missing_tokens{".", "NA"};
  int first_week = 0;
  int last_week = 6;
  std::vector<int> main_weeks{0, 1, 3, 6};
  double response_min = 1.0;
  double response_max = 7.0;

  void validate() const {
    if (id_column.empty() || response_column.empty() || week_column.empty())
      throw InputError("schema must assign the id, response and week columns");
    if (last_week < first_week) throw InputError("schema week range is empty");
  }
};

inline constexpr const char* kWeekCovariate = "week";
inline constexpr const char* kMainCovariate = "main";

namespace detail {

inline std::vector<std::string> split_whitespace(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Parses a long-format stream and expands every subject to the full week
/// grid. Absent subject-weeks and missing-token responses become missing
/// records. Covariates per record: week, treatment (when configured), main.
inline Dataset parse_long(std::istream& in, const LongRecordSchema& schema, std::vector<std::string>* warnings = nullptr) {
  schema.validate();
  std::vector<std::string> columns = schema.columns;
  auto column_index = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (detail::lower(columns[i]) == detail::lower(name)) return i;
    throw InputError("column '" + name + "' not found in the schema");
  };
  auto is_missing = [&](const std::string& tok) {
    return std::find(schema.missing_tokens.begin(), schema.missing_tokens.end(), tok) != schema.missing_tokens.end();
  };

  struct Row {
    std::optional<double> y;
    std::optional<double> treatment;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, std::map<int, Row>> subjects;
  std::unordered_map<std::string, double> treatment_of;

  std::size_t id_col = 0, y_col = 0, week_col = 0, trt_col = 0, needed = 0;
  auto resolve = [&] {
    id_col = column_index(schema.id_column);
    y_col = column_index(schema.response_column);
    week_col = column_index(schema.week_column);
    needed = std::max({id_col, y_col, week_col});
    if (!schema.treatment_column.empty()) {
      trt_col = column_index(schema.treatment_column);
      needed = std::max(needed, trt_col);
    }
  };
  resolve();

  std::string line;
  int line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tok = detail::split_whitespace(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (first) {
      first = false;
      const bool header = std::any_of(tok.begin(), tok.end(), [&](const std::string& t) {
        return detail::lower(t) == detail::lower(schema.week_column);
      });
      if (header) {
        columns = tok;
        resolve();
        continue;
      }
    }
    if (tok.size() <= needed)
      throw InputError(where + "expected at least " + std::to_string(needed + 1) + " columns, found " + std::to_string(tok.size()));
    const std::string& id = tok[id_col];
    const auto week = detail::parse_double(tok[week_col]);
    if (!week || *week != std::floor(*week)) throw InputError(where + "unparseable week '" + tok[week_col] + "'");
    const int w = static_cast<int>(*week);
    if (w < schema.first_week || w > schema.last_week)
      throw InputError(where + "week " + std::to_string(w) + " outside " + std::to_string(schema.first_week) + ".." +
                       std::to_string(schema.last_week));
    Row row;
    if (!is_missing(tok[y_col])) {
      row.y = detail::parse_double(tok[y_col]);
      if (!row.y) throw InputError(where + "unparseable response '" + tok[y_col] + "'");
      if ((*row.y < schema.response_min || *row.y > schema.response_max) && warnings)
        warnings->push_back(where + "response " + tok[y_col] + " outside [" + detail::format_double(schema.response_min) +
                            ", " + detail::format_double(schema.response_max) + "], kept");
    }
    if (!schema.treatment_column.empty()) {
      row.treatment = detail::parse_double(tok[trt_col]);
      if (!row.treatment) throw InputError(where + "unparseable treatment '" + tok[trt_col] + "'");
      auto [it, fresh] = treatment_of.emplace(id, *row.treatment);
      if (!fresh && it->second != *row.treatment)
        throw InputError(where + "treatment of subject " + id + " changes within the subject");
    }
    auto [sit, new_subject] = subjects.try_emplace(id);
    if (new_subject) order.push_back(id);
    if (!sit->second.emplace(w, row).second)
      throw InputError(where + "duplicate record for subject " + id + " week " + std::to_string(w));
  }
  if (order.empty()) throw InputError("no data rows");

  Dataset d;
  d.response_name = schema.response_column;
  d.covariate_names = {kWeekCovariate};
  if (!schema.treatment_column.empty()) d.covariate_names.push_back(schema.treatment_column);
  d.covariate_names.push_back(kMainCovariate);
  for (const auto& id : order) {
    const auto& rows = subjects.at(id);
    TimeSeries s;
    s.id = id;
    for (int w = schema.first_week; w <= schema.last_week; ++w) {
      Record r;
      r.t = w - schema.first_week + 1;
      if (auto it = rows.find(w); it != rows.end()) r.y = it->second.y;
      r.covariates.set(kWeekCovariate, w);
      if (!schema.treatment_column.empty()) r.covariates.set(schema.treatment_column, treatment_of.at(id));
      const bool main = std::find(schema.main_weeks.begin(), schema.main_weeks.end(), w) != schema.main_weeks.end();
      r.covariates.set(kMainCovariate, main ? 1.0 : 0.0);
      s.records.push_back(std::move(r));
    }
    d.series.push_back(std::move(s));
  }
  return d;
}

inline Dataset load_long(const std::string& path, const LongRecordSchema& schema = {},
                         std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  try {
    return parse_long(in, schema, warnings);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV round trip
//
// Header: id, [time column], <response>, missing, covariates... The response
// is the column just before "missing". A column named "t" gives the time
// index; without it records are numbered 1, 2, ... in file order within each
// id. Every other column is a covariate, in column order.

/// Writes id, t, response, missing, covariates. With `time_covariate` set,
/// that covariate replaces the t column (the expanded long layout).
inline void write_dataset_csv(std::ostream& out, const Dataset& d, const std::string& time_covariate = "") {
  std::vector<std::string> rest;
  for (const auto& c : d.covariate_names)
    if (c != time_covariate) rest.push_back(c);
  out << "id," << (time_covariate.empty() ? "t" : time_covariate) << ',' << d.response_name << ",missing";
  for (const auto& c : rest) out << ',' << c;
  out << '\n';
  for (const auto& s : d.series)
    for (const auto& r : s.records) {
      out << s.id << ','
          << (time_covariate.empty() ? std::to_string(r.t) : detail::format_double(r.covariates.at(time_covariate))) << ','
          << (r.y ? detail::format_double(*r.y) : std::string()) << ',' << (r.missing() ? 1 : 0);
      for (const auto& c : rest) out << ',' << detail::format_double(r.covariates.at(c));
      out << '\n';
    }
}

inline void write_expanded_csv(std::ostream& out, const Dataset& d) { write_dataset_csv(out, d, kWeekCovariate); }

inline Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty CSV");
  const auto header = detail::split_csv(line);
  auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  };
  const auto id_col = find("id");
  const auto miss_col = find("missing");
  if (!id_col || !miss_col) throw InputError("CSV header needs 'id' and 'missing' columns");
  if (*miss_col == 0 || *miss_col - 1 == *id_col) throw InputError("CSV header needs a response column before 'missing'");
  const std::size_t y_col = *miss_col - 1;
  const auto t_col = find("t");
  if (t_col && *t_col == y_col) throw InputError("CSV response column cannot be 't'");

  Dataset d;
  d.response_name = header[y_col];
  std::vector<std::size_t> cov_cols;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (i != *id_col && i != y_col && i != *miss_col && (!t_col || i != *t_col)) {
      cov_cols.push_back(i);
      d.covariate_names.push_back(header[i]);
    }

  std::unordered_map<std::string, std::size_t> index;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::string where = "CSV line " + std::to_string(line_no) + ": ";
    const auto f = detail::split_csv(line);
    if (f.size() != header.size())
      throw InputError(where + "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
    auto [it, fresh] = index.try_emplace(f[*id_col], d.series.size());
    if (fresh) d.series.push_back(TimeSeries{f[*id_col], {}});
    auto& s = d.series[it->second];
    Record r;
    if (t_col) {
      const auto t = detail::parse_double(f[*t_col]);
      if (!t || *t != std::floor(*t)) throw InputError(where + "bad time index '" + f[*t_col] + "'");
      r.t = static_cast<int>(*t);
    } else {
      r.t = static_cast<int>(s.records.size()) + 1;
    }
    const auto m = detail::parse_double(f[*miss_col]);
    if (!m || (*m != 0.0 && *m != 1.0)) throw InputError(where + "missing must be 0 or 1");
    if (!f[y_col].empty()) {
      r.y = detail::parse_double(f[y_col]);
      if (!r.y) throw InputError(where + "unparseable response '" + f[y_col] + "'");
    }
    if ((*m == 1.0) != r.missing()) throw InputError(where + "missing flag disagrees with the response field");
    for (std::size_t c = 0; c < cov_cols.size(); ++c) {
      const auto v = detail::parse_double(f[cov_cols[c]]);
      if (!v) throw InputError(where + "unparseable covariate '" + header[cov_cols[c]] + "'");
      r.covariates.set(header[cov_cols[c]], *v);
    }
    s.records.push_back(std::move(r));
  }
  d.validate();
  return d;
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  try {
    return read_dataset_csv(in);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Missingness summaries

struct MissingnessProfile {
  std::vector<double> occasions;          // week covariate when present, else t
  std::vector<double> observed_fraction;  // per occasion
  std::vector<int> observed_per_subject;
  std::vector<int> main_observed_per_subject;  // only occasions with main == 1 (all when absent)
  std::map<double, std::vector<double>> observed_fraction_by_treatment;

  /// Fraction of subjects observed at least n times.
  double fraction_at_least(int n, bool main_only = false) const {
    const auto& v = main_only ? main_observed_per_subject : observed_per_subject;
    if (v.empty()) return 0.0;
    const auto hits = std::count_if(v.begin(), v.end(), [n](int c) { return c >= n; });
    return static_cast<double>(hits) / static_cast<double>(v.size());
  }

  double fraction_exactly(int n, bool main_only = false) const {
    return fraction_at_least(n, main_only) - fraction_at_least(n + 1, main_only);
  }

  /// Subjects per observed count.
  std::map<int, int> count_distribution(bool main_only = false) const {
    std::map<int, int> out;
    for (int c : main_only ? main_observed_per_subject : observed_per_subject) ++out[c];
    return out;
  }
};

inline MissingnessProfile summarize_missingness(const Dataset& d, const std::string& treatment = "drug") {
  MissingnessProfile p;
  std::size_t width = 0;
  for (const auto& s : d.series) width = std::max(width, s.records.size());
  std::vector<double> seen(width, 0.0), hit(width, 0.0);
  p.occasions.assign(width, std::numeric_limits<double>::quiet_NaN());
  std::map<double, std::pair<std::vector<double>, std::vector<double>>> by_trt;

  for (const auto& s : d.series) {
    int obs = 0, main_obs = 0;
    std::optional<double> trt;
    if (!s.records.empty()) trt = s.records.front().covariates.find(treatment);
    if (trt) by_trt.try_emplace(*trt, std::vector<double>(width, 0.0), std::vector<double>(width, 0.0));
    for (std::size_t i = 0; i < s.records.size(); ++i) {
      const auto& r = s.records[i];
      if (std::isnan(p.occasions[i])) p.occasions[i] = r.covariates.find(kWeekCovariate).value_or(r.t);
      const bool o = !r.missing();
      seen[i] += 1.0;
      hit[i] += o;
      obs += o;
      if (r.covariates.find(kMainCovariate).value_or(1.0) == 1.0) main_obs += o;
      if (trt) {
        by_trt[*trt].first[i] += 1.0;
        by_trt[*trt].second[i] += o;
      }
    }
    p.observed_per_subject.push_back(obs);
    p.main_observed_per_subject.push_back(main_obs);
  }
  for (std::size_t i = 0; i < width; ++i) p.observed_fraction.push_back(seen[i] > 0 ? hit[i] / seen[i] : 0.0);
  for (const auto& [k, v] : by_trt) {
    std::vector<double> f(width, 0.0);
    for (std::size_t i = 0; i < width; ++i) f[i] = v.first[i] > 0 ? v.second[i] / v.first[i] : 0.0;
    p.observed_fraction_by_treatment[k] = std::move(f);
  }
  return p;
}

inline void write_profile_csv(std::ostream& out, const MissingnessProfile& p) {
  out << "occasion,observed_fraction";
  for (const auto& [k, v] : p.observed_fraction_by_treatment) out << ",observed_fraction_treatment_" << detail::format_double(k);
  out << '\n';
  for (std::size_t i = 0; i < p.occasions.size(); ++i) {
    out << detail::format_double(p.occasions[i]) << ',' << detail::format_double(p.observed_fraction[i]);
    for (const auto& [k, v] : p.observed_fraction_by_treatment) out << ',' << detail::format_double(v[i]);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// State-free missingness logistic regression

struct GlmTerm {
  std::string name;
  double estimate = 0.0;
  double se = std::numeric_limits<double>::quiet_NaN();
  double z = std::numeric_limits<double>::quiet_NaN();
  double p_value = std::numeric_limits<double>::quiet_NaN();
};

struct GlmResult {
  std::vector<GlmTerm> terms;  // "(Intercept)" first
  double log_likelihood = 0.0;
  std::size_t n = 0;
  bool converged = false;
  bool separated = false;

  const GlmTerm& at(const std::string& name) const {
    for (const auto& t : terms)
      if (t.name == name) return t;
    throw InputError("no GLM term '" + name + "'");
  }
};

/// Logistic regression of the missingness indicator on an intercept and the
/// given terms. A term is a covariate name or a product "a:b".
inline GlmResult glm_missingness(const Dataset& d, const std::vector<std::string>& terms) {
  std::vector<std::vector<std::string>> factors;
  for (const auto& t : terms) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : t) {
      if (c == ':') {
        parts.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    parts.push_back(cur);
    for (const auto& p : parts)
      if (p.empty()) throw InputError("malformed GLM term '" + t + "'");
    factors.push_back(std::move(parts));
  }
  const Eigen::Index n = static_cast<Eigen::Index>(d.record_count());
  const Eigen::Index p = static_cast<Eigen::Index>(terms.size()) + 1;
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n);
  Eigen::Index row = 0;
  for (const auto& s : d.series)
    for (const auto& r : s.records) {
      x(row, 0) = 1.0;
      for (std::size_t j = 0; j < factors.size(); ++j) {
        double v = 1.0;
        for (const auto& f : factors[j]) v *= r.covariates.at(f);
        x(row, static_cast<Eigen::Index>(j) + 1) = v;
      }
      y(row) = r.missing() ? 1.0 : 0.0;
      ++row;
    }
  const Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  const auto fit = weighted_logistic_irls(x, y, w);

  GlmResult out;
  out.n = static_cast<std::size_t>(n);
  out.log_likelihood = fit.log_likelihood;
  out.converged = fit.converged;
  out.separated = fit.separated;
  const Eigen::VectorXd eta = x * fit.coefficients;
  Eigen::VectorXd h(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pr = logistic(eta(i));
    h(i) = pr * (1.0 - pr);
  }
  const Eigen::MatrixXd info = x.transpose() * h.asDiagonal() * x;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  const bool invertible = ldlt.info() == Eigen::Success && ldlt.isPositive() &&
                          ldlt.vectorD().minCoeff() > 1e-12 * ldlt.vectorD().maxCoeff();
  Eigen::MatrixXd cov;
  if (invertible) cov = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
  for (Eigen::Index j = 0; j < p; ++j) {
    GlmTerm t;
    t.name = j == 0 ? "(Intercept)" : terms[static_cast<std::size_t>(j - 1)];
    t.estimate = fit.coefficients(j);
    if (invertible && !fit.separated) {
      t.se = std::sqrt(cov(j, j));
      t.z = t.estimate / t.se;
      t.p_value = std::erfc(std::fabs(t.z) / std::numbers::sqrt2);
    }
    out.terms.push_back(t);
  }
  return out;
}

inline void write_glm_csv(std::ostream& out, const GlmResult& g) {
  out << "term,estimate,se,z,p\n";
  for (const auto& t : g.terms)
    out << t.name << ',' << detail::format_double(t.estimate) << ',' << detail::format_double(t.se) << ','
        << detail::format_double(t.z) << ',' << detail::format_double(t.p_value) << '\n';
}

}  // namespace mnarhmm
