#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "raildelay/domain.hpp"
#include "raildelay/errors.hpp"
#include "raildelay/rng.hpp"

namespace raildelay::sim {

inline std::string subject_label(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%05d", i);
  return buf;
}

// Covariates for simulated subjects: even columns standard normal, odd
// columns Bernoulli(0.5) in {0,1}.
inline Eigen::VectorXd draw_covariates(Eigen::Index p, Rng& rng) {
  Eigen::VectorXd x(p);
  for (Eigen::Index c = 0; c < p; ++c)
    x(c) = (c % 2 == 0) ? rng.normal() : (rng.bernoulli(0.5) ? 1.0 : 0.0);
  return x;
}

struct CoxSimOptions {
  int n_subjects = 2000;
  double trip_length_km = 300.0;
  double baseline_hazard = 0.01;  // events per km when x = 0
  Eigen::VectorXd beta;
  // nonzero -> the covariate effect flips sign at this km (non-proportional)
  double reversal_km = 0.0;
};

// Recurrent events from a (piecewise) constant-intensity process per subject:
// gaps are exponential with rate h0 exp(beta' x), resampled at the reversal
// point where the effect switches to -beta. Covariates are constant per
// subject; rows partition [0, trip_length_km].
inline CountingProcessDataset simulate_cox(const CoxSimOptions& options, Rng& rng) {
  if (options.n_subjects < 1) throw ValidationError("simulate_cox: n_subjects must be >= 1");
  if (!(options.trip_length_km > 0.0))
    throw ValidationError("simulate_cox: trip_length_km must be > 0");
  if (!(options.baseline_hazard > 0.0))
    throw ValidationError("simulate_cox: baseline_hazard must be > 0");
  const Eigen::Index p = options.beta.size();
  if (p < 1) throw ValidationError("simulate_cox: needs at least one covariate");
  if (options.reversal_km != 0.0 &&
      !(options.reversal_km > 0.0 && options.reversal_km < options.trip_length_km))
    throw ValidationError("simulate_cox: reversal_km must lie inside the trip");

  CountingProcessDataset dataset;
  for (Eigen::Index c = 0; c < p; ++c)
    dataset.covariate_names.push_back("x" + std::to_string(c + 1));

  for (int i = 0; i < options.n_subjects; ++i) {
    const Eigen::VectorXd x = draw_covariates(p, rng);
    const double lin = options.beta.dot(x);

    std::vector<double> events;
    double position = 0.0;
    // segment boundaries where the rate changes
    std::vector<std::pair<double, double>> segments;
    if (options.reversal_km > 0.0) {
      segments.push_back({options.reversal_km, options.baseline_hazard * std::exp(lin)});
      segments.push_back({options.trip_length_km, options.baseline_hazard * std::exp(-lin)});
    } else {
      segments.push_back({options.trip_length_km, options.baseline_hazard * std::exp(lin)});
    }
    for (const auto& [segment_end, rate] : segments) {
      while (position < segment_end) {
        const double gap = rng.exponential(rate);
        if (position + gap >= segment_end) {
          position = segment_end;  // memoryless: restart in the next segment
          break;
        }
        position += gap;
        events.push_back(position);
      }
    }

    const std::string subject = subject_label(i);
    const std::vector<double> covs(x.data(), x.data() + p);
    double start = 0.0;
    int j = 1;
    for (double event_km : events) {
      CountingProcessRow row{subject, j++, start, event_km, true, covs};
      dataset.rows.push_back(std::move(row));
      start = event_km;
    }
    if (start < options.trip_length_km) {
      CountingProcessRow row{subject, j, start, options.trip_length_km, false, covs};
      dataset.rows.push_back(std::move(row));
    }
  }
  dataset.validate();
  return dataset;
}

struct CtmcSimOptions {
  int n_subjects = 1000;
  int n_observations = 20;    // panel snapshots per subject, first at t = 0
  double q12 = 0.3;           // per hour, covariate at 0
  double q21 = 0.5;
  double beta12 = 0.0;        // effect of the single binary covariate
  double beta21 = 0.0;
  double gap_hours_min = 0.5;
  double gap_hours_max = 1.5;
};

// Exact two-state chain paths (exponential holding times), observed at random
// panel times. One binary covariate, fixed per subject.
inline PanelStateDataset simulate_ctmc(const CtmcSimOptions& options, Rng& rng) {
  if (options.n_subjects < 1 || options.n_observations < 2)
    throw ValidationError("simulate_ctmc: needs >= 1 subject and >= 2 observations");
  if (!(options.q12 > 0.0) || !(options.q21 > 0.0))
    throw ValidationError("simulate_ctmc: baseline intensities must be > 0");
  if (!(options.gap_hours_min > 0.0) || options.gap_hours_max < options.gap_hours_min)
    throw ValidationError("simulate_ctmc: bad observation gap range");

  PanelStateDataset panel;
  panel.covariate_names = {"x1"};
  for (int i = 0; i < options.n_subjects; ++i) {
    const double x = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const double rate_leave_1 = options.q12 * std::exp(options.beta12 * x);
    const double rate_leave_2 = options.q21 * std::exp(options.beta21 * x);

    int state = rng.bernoulli(0.5) ? 2 : 1;
    double path_time = 0.0;
    double next_jump = rng.exponential(state == 1 ? rate_leave_1 : rate_leave_2);

    const std::string subject = subject_label(i);
    double obs_time = 0.0;
    for (int j = 0; j < options.n_observations; ++j) {
      if (j > 0) obs_time += rng.uniform(options.gap_hours_min, options.gap_hours_max);
      while (next_jump <= obs_time) {
        path_time = next_jump;
        state = (state == 1) ? 2 : 1;
        next_jump = path_time +
                    rng.exponential(state == 1 ? rate_leave_1 : rate_leave_2);
      }
      PanelObservation obs{subject, obs_time * 60.0, state, {x}};
      panel.observations.push_back(std::move(obs));
    }
  }
  panel.validate();
  return panel;
}

}  // namespace raildelay::sim
