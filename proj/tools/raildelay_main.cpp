#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "raildelay/cox.hpp"
#include "raildelay/diagnostics.hpp"
#include "raildelay/domain.hpp"
#include "raildelay/errors.hpp"
#include "raildelay/io.hpp"
#include "raildelay/markov.hpp"
#include "raildelay/prepare.hpp"
#include "raildelay/report.hpp"
#include "raildelay/rng.hpp"
#include "raildelay/simulate.hpp"

namespace {

using namespace raildelay;

Eigen::VectorXd parse_beta_list(const std::string& text) {
  std::vector<double> values;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    const std::size_t comma = text.find(',', begin);
    const std::string field =
        text.substr(begin, comma == std::string::npos ? std::string::npos : comma - begin);
    values.push_back(csv::parse_double(field, "--beta"));
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  Eigen::VectorXd beta(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i)
    beta(static_cast<Eigen::Index>(i)) = values[i];
  return beta;
}

std::vector<cox::HeavisideSpec> parse_heaviside_flags(
    const std::vector<std::string>& flags, const std::vector<std::string>& names) {
  std::vector<cox::HeavisideSpec> specs;
  for (const auto& flag : flags) {
    const std::size_t colon = flag.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == flag.size())
      throw DataError("malformed --heaviside '" + flag + "': expected <covariate>:<km>");
    const std::string name = flag.substr(0, colon);
    cox::HeavisideSpec spec;
    spec.changepoint_t0 = csv::parse_double(flag.substr(colon + 1), "--heaviside km");
    bool found = false;
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) {
        spec.covariate_index = i;
        found = true;
        break;
      }
    if (!found)
      throw DataError("--heaviside covariate '" + name + "' is not a dataset column");
    specs.push_back(spec);
  }
  return specs;
}

int cmd_prepare(const std::string& trips, const std::string& weather,
                const std::string& out_counting, const std::string& out_panel,
                const std::string& out_log, int event_threshold, int delay_threshold) {
  pipeline::PrepareOptions options;
  options.event_threshold_min = event_threshold;
  options.delay_threshold_min = delay_threshold;
  const pipeline::PrepareResult result = pipeline::prepare_files(trips, weather, options);
  io::write_counting_dataset(result.counting, out_counting);
  io::write_panel_dataset(result.panel, out_panel);
  pipeline::write_log_lines(result.log_lines, out_log);
  std::cout << "prepared " << result.n_trips_used << " trips (" << result.n_trips_dropped
            << " dropped), " << result.counting.rows.size() << " counting rows, "
            << result.panel.observations.size() << " panel observations, "
            << result.n_imputed << " imputed times\n";
  return 0;
}

int cmd_fit_cox(const std::string& data, const std::vector<std::string>& heaviside,
                const std::string& ties_name, int max_iter, const std::string& out_report,
                const std::string& out_json) {
  const CountingProcessDataset dataset = io::read_counting_dataset(data);
  report::CoxRun run;
  run.base_names = dataset.covariate_names;
  run.specs = parse_heaviside_flags(heaviside, dataset.covariate_names);
  run.ties = ties_name == "breslow" ? cox::Ties::breslow : cox::Ties::efron;

  const CountingProcessDataset expanded = cox::heaviside_expand(dataset, run.specs);
  run.expanded_names = expanded.covariate_names;

  cox::FitOptions options;
  options.ties = run.ties;
  options.max_iterations = max_iter;
  run.fit = cox::fit(expanded, options);
  if (!run.fit.converged) {
    std::cerr << "error: fit did not converge in " << run.fit.n_iterations
              << " iterations\n  last beta:";
    for (Eigen::Index i = 0; i < run.fit.beta.size(); ++i)
      std::cerr << ' ' << report::format_sig(run.fit.beta(i));
    std::cerr << "\n  loglik trace:";
    for (double ll : run.fit.loglik_trace) std::cerr << ' ' << report::format_sig(ll, 12);
    std::cerr << '\n';
    return 3;
  }

  const auto rows = report::table4_rows(run.fit, run.base_names, run.specs);
  const std::string text = report::render_cox_report(run.fit, rows, run.ties);
  report::write_text_file(text, out_report);
  report::write_json_file(report::cox_run_json(run), out_json);
  std::cout << text;
  return 0;
}

int cmd_test_ph(const std::string& data, const std::string& fit_path,
                const std::string& out_report, const std::string& out_json,
                const std::string& out_residuals, const std::string& transform_name) {
  const CountingProcessDataset dataset = io::read_counting_dataset(data);
  const report::CoxRun run = report::load_cox_run(fit_path);
  if (dataset.covariate_names != run.base_names)
    throw DataError("fit/dataset mismatch: dataset has " +
                    std::to_string(dataset.covariate_names.size()) +
                    " covariates but the fit was built on " +
                    std::to_string(run.base_names.size()));
  const CountingProcessDataset expanded = cox::heaviside_expand(dataset, run.specs);
  if (expanded.covariate_names != run.expanded_names ||
      static_cast<Eigen::Index>(expanded.covariate_names.size()) != run.fit.beta.size())
    throw DataError("fit/dataset mismatch after heaviside expansion");

  const diag::TimeTransform transform = transform_name == "rank"
                                            ? diag::TimeTransform::km_rank
                                            : diag::TimeTransform::identity;
  const diag::PhTestResult result = diag::ph_test(expanded, run.fit, run.ties, transform);
  std::string text = report::render_ph_report(result);

  const diag::SchoenfeldResult residuals =
      diag::schoenfeld_residuals(expanded, run.fit, run.ties);
  if (!out_residuals.empty())
    report::write_residuals_csv(residuals, run.expanded_names, out_residuals);

  if (residuals.event_km.size() >= 10) {
    text += "\nAdvisory changepoint scan (largest before/after shift in mean residuals):\n";
    for (Eigen::Index c = 0; c < residuals.residuals.cols(); ++c) {
      const Eigen::VectorXd col = residuals.residuals.col(c);
      const std::vector<double> r(col.data(), col.data() + col.size());
      const auto suggestion = diag::suggest_changepoint(r, residuals.event_km);
      text += "  " + run.expanded_names[static_cast<std::size_t>(c)] + ": ";
      if (suggestion.degenerate)
        text += "degenerate residuals, no changepoint\n";
      else if (suggestion.below_threshold)
        text += report::format_sig(*suggestion.km) + " km (effect size " +
                report::format_sig(suggestion.effect_size) + ", below threshold - noise)\n";
      else
        text += report::format_sig(*suggestion.km) + " km (effect size " +
                report::format_sig(suggestion.effect_size) + ")\n";
    }
  }

  report::write_text_file(text, out_report);
  if (!out_json.empty()) report::write_json_file(report::ph_result_json(result), out_json);
  std::cout << text;
  return 0;
}

int cmd_fit_msm(const std::string& data, int n_states, double time_unit_min, int max_iter,
                const std::string& out_report, const std::string& out_json) {
  const PanelStateDataset panel = io::read_panel_dataset(data);
  std::string bad_labels;
  for (const auto& obs : panel.observations)
    if (obs.state < 1 || obs.state > n_states) {
      const std::string label = std::to_string(obs.state);
      if (bad_labels.find(label) == std::string::npos)
        bad_labels += (bad_labels.empty() ? "" : ", ") + label;
    }
  if (!bad_labels.empty())
    throw DataError("panel contains state labels outside 1.." + std::to_string(n_states) +
                    ": " + bad_labels);

  msm::IntensitySpec spec = msm::IntensitySpec::two_state(panel.covariate_names.size());
  if (n_states != 2) {
    spec.n_states = n_states;
    spec.transitions.clear();
    spec.covariate_indices.clear();
    std::vector<std::size_t> all(panel.covariate_names.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (int r = 1; r <= n_states; ++r)
      for (int s = 1; s <= n_states; ++s)
        if (r != s) {
          spec.transitions.emplace_back(r, s);
          spec.covariate_indices.push_back(all);
        }
  }

  msm::MsmFitOptions options;
  options.time_unit_min = time_unit_min;
  options.max_iterations = max_iter;
  const MsmFit fit = msm::fit_msm(panel, spec, options);
  if (!fit.converged) {
    std::cerr << "error: fit did not converge in " << fit.n_iterations
              << " iterations (gradient norm " << report::format_sig(fit.gradient_norm)
              << ", loglik " << report::format_sig(fit.loglik, 12) << ")\n";
    return 3;
  }
  const auto rows = msm::transition_hazard_ratios(fit, spec, panel.covariate_names);
  const std::string text = report::render_msm_report(fit, spec, rows);
  report::write_text_file(text, out_report);
  report::write_json_file(report::msm_run_json(fit, spec, panel.covariate_names, rows),
                          out_json);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"raildelay: winter-weather effects on train delays "
               "(recurrent-event Cox model + panel Markov chain)"};
  app.require_subcommand(1);
  app.set_config("--config")->description("key = value file; flags take precedence");

  // prepare
  auto* prepare = app.add_subcommand(
      "prepare", "Build counting-process and panel datasets from trips + weather");
  std::string trips_path, weather_path, out_counting, out_panel, out_log;
  int event_threshold = 1, delay_threshold = 5;
  prepare->add_option("--trips", trips_path, "trip file (CSV)")->required();
  prepare->add_option("--weather", weather_path, "weather file (CSV)")->required();
  prepare->add_option("--out-counting", out_counting, "output counting-process file")
      ->required();
  prepare->add_option("--out-panel", out_panel, "output panel file")->required();
  prepare->add_option("--out-log", out_log, "imputation/drop log")->required();
  prepare->add_option("--event-threshold", event_threshold,
                      "min running-time increment (minutes) that counts as an event");
  prepare->add_option("--delay-threshold", delay_threshold,
                      "arrival lateness (minutes) beyond which a spot is delayed");

  // fit-cox
  auto* fit_cox = app.add_subcommand("fit-cox", "Fit the extended Cox model");
  std::string cox_data, cox_report_path, cox_json_path, ties_name = "efron";
  std::vector<std::string> heaviside_flags;
  int cox_max_iter = 25;
  fit_cox->add_option("--data", cox_data, "counting-process file")->required();
  fit_cox->add_option("--heaviside", heaviside_flags,
                      "step term <covariate>:<km>, repeatable");
  fit_cox->add_option("--ties", ties_name, "efron|breslow")
      ->check(CLI::IsMember({"efron", "breslow"}));
  fit_cox->add_option("--max-iter", cox_max_iter, "Newton iteration cap");
  fit_cox->add_option("--out-report", cox_report_path, "text report")->required();
  fit_cox->add_option("--out-json", cox_json_path, "machine-readable report")->required();

  // test-ph
  auto* test_ph = app.add_subcommand("test-ph", "Schoenfeld-residual proportionality test");
  std::string ph_data, ph_fit, ph_report_path, ph_json_path, ph_residuals,
      transform_name = "identity";
  test_ph->add_option("--data", ph_data, "counting-process file")->required();
  test_ph->add_option("--fit", ph_fit, "fit JSON from fit-cox")->required();
  test_ph->add_option("--out-report", ph_report_path, "text report")->required();
  test_ph->add_option("--out-json", ph_json_path, "machine-readable report");
  test_ph->add_option("--out-residuals", ph_residuals, "residuals CSV for plotting");
  test_ph->add_option("--transform", transform_name, "identity|rank time transform")
      ->check(CLI::IsMember({"identity", "rank"}));

  // fit-msm
  auto* fit_msm = app.add_subcommand("fit-msm", "Fit the panel Markov chain model");
  std::string msm_data, msm_report_path, msm_json_path;
  int n_states = 2, msm_max_iter = 200;
  double time_unit_min = 60.0;
  fit_msm->add_option("--data", msm_data, "panel file")->required();
  fit_msm->add_option("--states", n_states, "number of states")->check(CLI::Range(2, 50));
  fit_msm->add_option("--time-unit-min", time_unit_min,
                      "minutes per intensity time unit (default 60: per hour)");
  fit_msm->add_option("--max-iter", msm_max_iter, "optimizer iteration cap");
  fit_msm->add_option("--out-report", msm_report_path, "text report")->required();
  fit_msm->add_option("--out-json", msm_json_path, "machine-readable report")->required();

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Generate seeded fixture datasets");
  simulate->require_subcommand(1);

  auto* sim_cox = simulate->add_subcommand("cox", "counting-process data from a known model");
  std::uint64_t cox_seed = 0;
  int sim_subjects = 2000;
  double sim_length = 300.0, sim_baseline = 0.01, sim_reversal = 0.0;
  std::string sim_beta = "0.5,-0.3", sim_out, sim_truth;
  sim_cox->add_option("--seed", cox_seed, "RNG seed")->required();
  sim_cox->add_option("--subjects", sim_subjects, "number of subjects");
  sim_cox->add_option("--length-km", sim_length, "trip length");
  sim_cox->add_option("--baseline", sim_baseline, "baseline hazard per km");
  sim_cox->add_option("--beta", sim_beta, "comma-separated coefficients");
  sim_cox->add_option("--reversal-km", sim_reversal,
                      "flip the effect sign at this km (0 = proportional)");
  sim_cox->add_option("--out", sim_out, "output counting-process file")->required();
  sim_cox->add_option("--truth-json", sim_truth, "write generating parameters");

  auto* sim_msm = simulate->add_subcommand("msm", "panel data from a known 2-state chain");
  std::uint64_t msm_seed = 0;
  int msm_subjects = 1000, msm_obs = 20;
  double q12 = 0.3, q21 = 0.5, beta12 = 0.0, beta21 = 0.0, gap_min = 0.5, gap_max = 1.5;
  std::string msm_out, msm_truth;
  sim_msm->add_option("--seed", msm_seed, "RNG seed")->required();
  sim_msm->add_option("--subjects", msm_subjects, "number of subjects");
  sim_msm->add_option("--obs", msm_obs, "observations per subject");
  sim_msm->add_option("--q12", q12, "baseline 1->2 intensity per hour");
  sim_msm->add_option("--q21", q21, "baseline 2->1 intensity per hour");
  sim_msm->add_option("--beta12", beta12, "covariate effect on 1->2");
  sim_msm->add_option("--beta21", beta21, "covariate effect on 2->1");
  sim_msm->add_option("--gap-min", gap_min, "min observation gap (hours)");
  sim_msm->add_option("--gap-max", gap_max, "max observation gap (hours)");
  sim_msm->add_option("--out", msm_out, "output panel file")->required();
  sim_msm->add_option("--truth-json", msm_truth, "write generating parameters");

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed())
      return cmd_prepare(trips_path, weather_path, out_counting, out_panel, out_log,
                         event_threshold, delay_threshold);
    if (fit_cox->parsed())
      return cmd_fit_cox(cox_data, heaviside_flags, ties_name, cox_max_iter,
                         cox_report_path, cox_json_path);
    if (test_ph->parsed())
      return cmd_test_ph(ph_data, ph_fit, ph_report_path, ph_json_path, ph_residuals,
                         transform_name);
    if (fit_msm->parsed())
      return cmd_fit_msm(msm_data, n_states, time_unit_min, msm_max_iter, msm_report_path,
                         msm_json_path);
    if (sim_cox->parsed()) {
      sim::CoxSimOptions options;
      options.n_subjects = sim_subjects;
      options.trip_length_km = sim_length;
      options.baseline_hazard = sim_baseline;
      options.beta = parse_beta_list(sim_beta);
      options.reversal_km = sim_reversal;
      Rng rng(cox_seed);
      io::write_counting_dataset(sim::simulate_cox(options, rng), sim_out);
      if (!sim_truth.empty())
        report::write_json_file(json{{"model", "cox_sim"},
                                     {"seed", cox_seed},
                                     {"subjects", sim_subjects},
                                     {"length_km", sim_length},
                                     {"baseline_hazard", sim_baseline},
                                     {"beta", vector_to_json(options.beta)},
                                     {"reversal_km", sim_reversal}},
                                sim_truth);
      std::cout << "wrote " << sim_out << "\n";
      return 0;
    }
    if (sim_msm->parsed()) {
      sim::CtmcSimOptions options;
      options.n_subjects = msm_subjects;
      options.n_observations = msm_obs;
      options.q12 = q12;
      options.q21 = q21;
      options.beta12 = beta12;
      options.beta21 = beta21;
      options.gap_hours_min = gap_min;
      options.gap_hours_max = gap_max;
      Rng rng(msm_seed);
      io::write_panel_dataset(sim::simulate_ctmc(options, rng), msm_out);
      if (!msm_truth.empty())
        report::write_json_file(json{{"model", "ctmc_sim"},
                                     {"seed", msm_seed},
                                     {"subjects", msm_subjects},
                                     {"obs", msm_obs},
                                     {"q12", q12},
                                     {"q21", q21},
                                     {"beta12", beta12},
                                     {"beta21", beta21}},
                                msm_truth);
      std::cout << "wrote " << msm_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
