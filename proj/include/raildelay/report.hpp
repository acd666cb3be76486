#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "raildelay/cox.hpp"
#include "raildelay/diagnostics.hpp"
#include "raildelay/domain.hpp"
#include "raildelay/errors.hpp"
#include "raildelay/markov.hpp"
#include "raildelay/stats.hpp"

namespace raildelay::report {

// Human reports print 6 significant digits; the JSON files keep full precision.
inline std::string format_sig(double v, int digits = 6) {
  if (std::isnan(v)) return "NA";
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

struct TextTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string render() const {
    std::vector<std::size_t> widths(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) widths[c] = header[c].size();
    for (const auto& row : rows)
      for (std::size_t c = 0; c < row.size(); ++c)
        widths[c] = std::max(widths[c], row[c].size());
    std::string out;
    const auto emit = [&](const std::vector<std::string>& fields) {
      for (std::size_t c = 0; c < fields.size(); ++c) {
        out += fields[c];
        if (c + 1 < fields.size())
          out += std::string(widths[c] - fields[c].size() + 2, ' ');
      }
      out += '\n';
    };
    emit(header);
    std::vector<std::string> rule;
    for (std::size_t c = 0; c < header.size(); ++c)
      rule.push_back(std::string(widths[c], '-'));
    emit(rule);
    for (const auto& row : rows) emit(row);
    return out;
  }
};

inline void write_text_file(const std::string& text, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << text;
  out.close();
  if (!out) throw DataError("failed writing '" + path + "'");
}

inline void write_json_file(const json& j, const std::string& path) {
  write_text_file(j.dump(2) + "\n", path);
}

// ---- Cox ----

// Interval-specific effects for covariates with heaviside terms: the first
// interval reports the main coefficient, later intervals report the running
// sum main + step coefficients, with the variance of that linear combination.
inline std::vector<cox::HazardRatioRow> table4_rows(
    const CoxFit& fit, const std::vector<std::string>& base_names,
    const std::vector<cox::HeavisideSpec>& specs) {
  if (!fit.converged) throw ValidationError("table4_rows: fit did not converge");
  const std::size_t p0 = base_names.size();
  const auto p_total = static_cast<std::size_t>(fit.beta.size());
  if (p_total != p0 + specs.size())
    throw ValidationError("table4_rows: coefficient count does not match names + specs");

  std::map<std::size_t, std::vector<std::pair<double, std::size_t>>> by_covariate;
  for (std::size_t k = 0; k < specs.size(); ++k)
    by_covariate[specs[k].covariate_index].push_back({specs[k].changepoint_t0, p0 + k});
  for (auto& [unused, cuts] : by_covariate) {
    (void)unused;
    std::sort(cuts.begin(), cuts.end());
  }

  const auto combo_row = [&](const std::string& label,
                             const Eigen::VectorXd& weights) {
    cox::HazardRatioRow row;
    row.predictor = label;
    row.coefficient = weights.dot(fit.beta);
    row.hazard_ratio = std::exp(row.coefficient);
    row.robust_se = std::sqrt(weights.dot(fit.robust_covariance * weights));
    row.z = row.robust_se > 0.0 ? row.coefficient / row.robust_se
                                : std::numeric_limits<double>::quiet_NaN();
    row.p = stats::normal_two_sided_p(row.z);
    return row;
  };

  std::vector<cox::HazardRatioRow> rows;
  for (std::size_t m = 0; m < p0; ++m) {
    auto it = by_covariate.find(m);
    Eigen::VectorXd weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p_total));
    weights(static_cast<Eigen::Index>(m)) = 1.0;
    if (it == by_covariate.end()) {
      rows.push_back(combo_row(base_names[m], weights));
      continue;
    }
    const auto& cuts = it->second;
    double lower = 0.0;
    for (std::size_t seg = 0; seg <= cuts.size(); ++seg) {
      std::string label;
      if (seg < cuts.size())
        label = base_names[m] + " (" + cox::detail::trim_number(lower) + " - " +
                cox::detail::trim_number(cuts[seg].first) + " km)";
      else
        label = base_names[m] + " (" + cox::detail::trim_number(lower) + " km - the end)";
      rows.push_back(combo_row(label, weights));
      if (seg < cuts.size()) {
        weights(static_cast<Eigen::Index>(cuts[seg].second)) = 1.0;
        lower = cuts[seg].first;
      }
    }
  }
  return rows;
}

inline json hazard_ratio_row_json(const cox::HazardRatioRow& row) {
  return json{{"predictor", row.predictor},   {"coefficient", row.coefficient},
              {"hazard_ratio", row.hazard_ratio}, {"robust_se", row.robust_se},
              {"z", row.z},                   {"p", row.p}};
}

inline std::string render_cox_report(const CoxFit& fit,
                                     const std::vector<cox::HazardRatioRow>& rows,
                                     cox::Ties ties) {
  std::string out = "Estimates from the fitted extended Cox model\n";
  out += "Ties: " + std::string(ties == cox::Ties::efron ? "efron" : "breslow");
  out += "  Subjects: " + std::to_string(fit.n_subjects);
  out += "  Events: " + std::to_string(fit.n_events) + "\n";
  out += "Log-likelihood: " + format_sig(fit.loglik_at_start) + " -> " +
         format_sig(fit.loglik_at_end) + " in " + std::to_string(fit.n_iterations) +
         " iterations (converged: " + (fit.converged ? "yes" : "no") + ")\n\n";
  TextTable table;
  table.header = {"Predictor", "Coefficient", "Hazard ratio", "Robust standard error",
                  "z-value", "p(>|z|)"};
  for (const auto& row : rows)
    table.rows.push_back({row.predictor, format_sig(row.coefficient),
                          format_sig(row.hazard_ratio), format_sig(row.robust_se),
                          format_sig(row.z), format_sig(row.p)});
  return out + table.render();
}

struct CoxRun {
  CoxFit fit;
  std::vector<std::string> base_names;
  std::vector<std::string> expanded_names;
  std::vector<cox::HeavisideSpec> specs;
  cox::Ties ties = cox::Ties::efron;
};

inline json cox_run_json(const CoxRun& run) {
  json specs = json::array();
  for (const auto& s : run.specs)
    specs.push_back(json{{"covariate", run.base_names[s.covariate_index]},
                         {"covariate_index", s.covariate_index},
                         {"changepoint_km", s.changepoint_t0}});
  json columns = json::array();
  for (const auto& row : cox::hazard_ratios(run.fit, run.expanded_names))
    columns.push_back(hazard_ratio_row_json(row));
  json table = json::array();
  for (const auto& row : table4_rows(run.fit, run.base_names, run.specs))
    table.push_back(hazard_ratio_row_json(row));
  return json{{"model", "cox_counting_process"},
              {"ties", run.ties == cox::Ties::efron ? "efron" : "breslow"},
              {"base_covariate_names", run.base_names},
              {"covariate_names", run.expanded_names},
              {"heaviside", specs},
              {"fit", run.fit},
              {"columns", columns},
              {"table", table}};
}

inline CoxRun cox_run_from_json(const json& j) {
  if (j.value("model", "") != "cox_counting_process")
    throw DataError("fit file is not a Cox fit report");
  CoxRun run;
  run.ties = j.at("ties").get<std::string>() == "breslow" ? cox::Ties::breslow
                                                          : cox::Ties::efron;
  j.at("base_covariate_names").get_to(run.base_names);
  j.at("covariate_names").get_to(run.expanded_names);
  for (const auto& s : j.at("heaviside")) {
    cox::HeavisideSpec spec;
    spec.covariate_index = s.at("covariate_index").get<std::size_t>();
    spec.changepoint_t0 = s.at("changepoint_km").get<double>();
    run.specs.push_back(spec);
  }
  j.at("fit").get_to(run.fit);
  return run;
}

inline CoxRun load_cox_run(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  json j;
  in >> j;
  return cox_run_from_json(j);
}

// ---- Proportionality test ----

inline std::string render_ph_report(const diag::PhTestResult& result) {
  std::string out = "P-values from proportionality test\n\n";
  TextTable table;
  table.header = {"Predictor", "P-value"};
  for (const auto& row : result.rows)
    table.rows.push_back(
        {row.predictor, row.skipped ? "skipped (degenerate column)" : format_sig(row.p)});
  table.rows.push_back({"Global", format_sig(result.global_p)});
  return out + table.render();
}

inline json ph_result_json(const diag::PhTestResult& result) {
  json rows = json::array();
  for (const auto& row : result.rows)
    rows.push_back(json{{"predictor", row.predictor},
                        {"correlation", row.correlation},
                        {"chisq", row.chisq},
                        {"p", row.p},
                        {"skipped", row.skipped}});
  return json{{"model", "ph_test"},
              {"rows", rows},
              {"global",
               {{"chisq", result.global_chisq},
                {"df", result.global_df},
                {"p", result.global_p}}}};
}

inline void write_residuals_csv(const diag::SchoenfeldResult& residuals,
                                const std::vector<std::string>& names,
                                const std::string& path) {
  csv::Writer out(path);
  std::vector<std::string> header = {"event_km"};
  header.insert(header.end(), names.begin(), names.end());
  out.write_row(header);
  for (std::size_t j = 0; j < residuals.event_km.size(); ++j) {
    std::vector<std::string> fields = {csv::format_double(residuals.event_km[j])};
    for (Eigen::Index c = 0; c < residuals.residuals.cols(); ++c)
      fields.push_back(
          csv::format_double(residuals.residuals(static_cast<Eigen::Index>(j), c)));
    out.write_row(fields);
  }
  out.close();
}

// ---- Markov chain ----

inline std::string msm_state_label(int state, int n_states) {
  if (n_states == 2) return state == 1 ? "non-delayed" : "delayed";
  return "state " + std::to_string(state);
}

inline std::string render_msm_report(const MsmFit& fit, const msm::IntensitySpec& spec,
                                     const std::vector<msm::TransitionHr>& rows) {
  std::string out = "Fitted continuous-time Markov chain (" +
                    std::to_string(fit.n_states) + " states)\n";
  out += "Log-likelihood: " + format_sig(fit.loglik) + " in " +
         std::to_string(fit.n_iterations) +
         " iterations (converged: " + (fit.converged ? "yes" : "no") + ")\n";
  out += "Baseline intensities (per hour):";
  for (std::size_t k = 0; k < spec.n_transitions(); ++k) {
    const auto [r, s] = spec.transitions[k];
    out += " q" + std::to_string(r) + std::to_string(s) + " = " +
           format_sig(fit.q0(r - 1, s - 1));
  }
  out += "\n";
  if (!fit.covariance_valid)
    out += "Warning: observed information not positive definite; intervals suppressed\n";

  for (const auto& [r, s] : spec.transitions) {
    out += "\nHazard ratios from " + msm_state_label(r, fit.n_states) + " to " +
           msm_state_label(s, fit.n_states) + " states\n";
    TextTable table;
    table.header = {"Predictor", "Hazard Ratio", "CI: Lower", "CI: Upper"};
    for (const auto& row : rows) {
      if (row.from != r || row.to != s) continue;
      table.rows.push_back({row.predictor, format_sig(row.hazard_ratio),
                            row.ci_suppressed ? "suppressed" : format_sig(row.ci_lower),
                            row.ci_suppressed ? "suppressed" : format_sig(row.ci_upper)});
    }
    out += table.render();
  }
  return out;
}

inline json msm_run_json(const MsmFit& fit, const msm::IntensitySpec& spec,
                         const std::vector<std::string>& covariate_names,
                         const std::vector<msm::TransitionHr>& rows) {
  json transitions = json::array();
  for (const auto& [r, s] : spec.transitions) transitions.push_back(json::array({r, s}));
  json indices = json::array();
  for (const auto& idx : spec.covariate_indices) indices.push_back(idx);
  json hr = json::array();
  for (const auto& row : rows)
    hr.push_back(json{{"from", row.from},
                      {"to", row.to},
                      {"predictor", row.predictor},
                      {"log_hr", row.log_hr},
                      {"hazard_ratio", row.hazard_ratio},
                      {"ci_lower", row.ci_suppressed ? json(nullptr) : json(row.ci_lower)},
                      {"ci_upper", row.ci_suppressed ? json(nullptr) : json(row.ci_upper)},
                      {"ci_suppressed", row.ci_suppressed}});
  return json{{"model", "markov_panel"},
              {"covariate_names", covariate_names},
              {"spec",
               {{"n_states", spec.n_states},
                {"transitions", transitions},
                {"covariate_indices", indices}}},
              {"fit", fit},
              {"hazard_ratios", hr}};
}

}  // namespace raildelay::report
