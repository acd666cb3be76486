#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "raildelay/cox.hpp"
#include "raildelay/domain.hpp"
#include "raildelay/errors.hpp"
#include "raildelay/stats.hpp"

namespace raildelay::diag {

struct SchoenfeldResult {
  std::vector<double> event_km;  // ascending; ties keep dataset row order
  Eigen::MatrixXd residuals;     // one row per event, one column per covariate
};

// Observed minus risk-set-weighted expected covariate at each event. With
// Efron ties each tied event subtracts the average of the per-death weighted
// means, so the columns still sum to the score.
inline SchoenfeldResult schoenfeld_residuals(const CountingProcessDataset& dataset,
                                             const CoxFit& fit,
                                             cox::Ties ties = cox::Ties::efron) {
  if (!fit.converged)
    throw ValidationError("schoenfeld_residuals: fit did not converge on this dataset");
  const cox::detail::Flat flat = cox::detail::flatten(dataset);
  const Eigen::Index p = flat.p();
  if (fit.beta.size() != p)
    throw ValidationError("schoenfeld_residuals: fit has " + std::to_string(fit.beta.size()) +
                          " coefficients but dataset has " + std::to_string(p) +
                          " covariates");

  Eigen::VectorXd eta = flat.x * fit.beta;
  const double eta_max = eta.size() > 0 ? eta.maxCoeff() : 0.0;
  Eigen::VectorXd risk(flat.n());
  for (Eigen::Index i = 0; i < flat.n(); ++i) risk(i) = std::exp(eta(i) - eta_max);

  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);

  struct EventResidual {
    double km;
    Eigen::VectorXd value;
  };
  std::vector<EventResidual> collected;
  collected.reserve(flat.n_events);

  std::vector<int> group_deaths;
  std::size_t remove_ptr = 0;
  std::size_t i = 0;
  while (i < flat.by_stop.size()) {
    const double dtime = flat.stop[flat.by_stop[i]];
    group_deaths.clear();
    double s0_dead = 0.0;
    Eigen::VectorXd s1_dead = Eigen::VectorXd::Zero(p);

    for (; i < flat.by_stop.size() && flat.stop[flat.by_stop[i]] == dtime; ++i) {
      const int row = flat.by_stop[i];
      const double w = risk(row);
      s0 += w;
      s1.noalias() += w * flat.x.row(row).transpose();
      if (flat.event[row]) {
        group_deaths.push_back(row);
        s0_dead += w;
        s1_dead.noalias() += w * flat.x.row(row).transpose();
      }
    }
    for (; remove_ptr < flat.by_start.size(); ++remove_ptr) {
      const int row = flat.by_start[remove_ptr];
      if (flat.start[row] < dtime) break;
      const double w = risk(row);
      s0 -= w;
      s1.noalias() -= w * flat.x.row(row).transpose();
    }

    const int deaths = static_cast<int>(group_deaths.size());
    if (deaths == 0) continue;
    Eigen::VectorXd expected;
    if (ties == cox::Ties::breslow || deaths == 1) {
      expected = s1 / s0;
    } else {
      expected = Eigen::VectorXd::Zero(p);
      for (int k = 0; k < deaths; ++k) {
        const double frac = static_cast<double>(k) / deaths;
        expected += (s1 - frac * s1_dead) / (s0 - frac * s0_dead);
      }
      expected /= deaths;
    }
    for (int row : group_deaths)
      collected.push_back({dtime, flat.x.row(row).transpose() - expected});
  }

  std::reverse(collected.begin(), collected.end());
  SchoenfeldResult out;
  out.event_km.reserve(collected.size());
  out.residuals.resize(static_cast<Eigen::Index>(collected.size()), p);
  for (std::size_t j = 0; j < collected.size(); ++j) {
    out.event_km.push_back(collected[j].km);
    out.residuals.row(static_cast<Eigen::Index>(j)) = collected[j].value;
  }
  return out;
}

enum class TimeTransform { identity, km_rank };

struct PhTestRow {
  std::string predictor;
  double correlation = 0.0;  // scaled residual vs transformed km
  double chisq = 0.0;
  double p = 1.0;
  bool skipped = false;  // degenerate column, no test
};

struct PhTestResult {
  std::vector<PhTestRow> rows;
  double global_chisq = 0.0;
  double global_df = 0.0;
  double global_p = 1.0;
};

namespace detail {

inline std::vector<double> transform_times(const std::vector<double>& km,
                                           TimeTransform transform) {
  if (transform == TimeTransform::identity) return km;
  // average ranks, so tied kms stay deterministic
  const std::size_t n = km.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return km[a] < km[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && km[order[j + 1]] == km[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

// Score-type test of zero correlation between scaled Schoenfeld residuals and
// (transformed) event km: per covariate a 1-df chi-squared, plus a global
// #covariates-df chi-squared. Covariates whose residual column has zero
// variance are skipped and excluded from the global statistic.
inline PhTestResult ph_test(const CountingProcessDataset& dataset, const CoxFit& fit,
                            cox::Ties ties = cox::Ties::efron,
                            TimeTransform transform = TimeTransform::identity) {
  const SchoenfeldResult sch = schoenfeld_residuals(dataset, fit, ties);
  const auto d = static_cast<Eigen::Index>(sch.event_km.size());
  if (d < 3)
    throw ValidationError("ph_test: needs at least 3 events, got " + std::to_string(d));
  const Eigen::Index p = sch.residuals.cols();
  const Eigen::MatrixXd& v = fit.model_covariance;

  const std::vector<double> g = detail::transform_times(sch.event_km, transform);
  Eigen::VectorXd xx(d);
  const double g_mean = stats::mean(g);
  for (Eigen::Index j = 0; j < d; ++j) xx(j) = g[static_cast<std::size_t>(j)] - g_mean;
  const double xx_ss = xx.squaredNorm();
  if (xx_ss <= 0.0)
    throw ValidationError("ph_test: all event kms identical, time axis is degenerate");

  std::vector<Eigen::Index> active;
  PhTestResult out;
  out.rows.resize(p);
  for (Eigen::Index m = 0; m < p; ++m) {
    out.rows[m].predictor = static_cast<std::size_t>(m) < dataset.covariate_names.size()
                                ? dataset.covariate_names[m]
                                : "x" + std::to_string(m);
    const Eigen::VectorXd col = sch.residuals.col(m);
    const double centered_ss = (col.array() - col.mean()).square().sum();
    if (centered_ss <= 1e-300) {
      out.rows[m].skipped = true;
      out.rows[m].p = std::numeric_limits<double>::quiet_NaN();
      out.rows[m].chisq = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    active.push_back(m);
  }

  if (active.empty())
    throw ValidationError("ph_test: every covariate column is degenerate");

  const auto n_active = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd resid_active(d, n_active);
  Eigen::MatrixXd v_active(n_active, n_active);
  for (Eigen::Index a = 0; a < n_active; ++a) {
    resid_active.col(a) = sch.residuals.col(active[a]);
    for (Eigen::Index b = 0; b < n_active; ++b)
      v_active(a, b) = v(active[a], active[b]);
  }

  // scaled residuals: d * r V  (classic scaled-Schoenfeld form)
  const Eigen::MatrixXd scaled = static_cast<double>(d) * resid_active * v_active;
  for (Eigen::Index a = 0; a < n_active; ++a) {
    const Eigen::Index m = active[a];
    const double test = xx.dot(scaled.col(a));
    const double denom = static_cast<double>(d) * v_active(a, a) * xx_ss;
    PhTestRow& row = out.rows[m];
    row.chisq = test * test / denom;
    row.p = stats::chi_squared_upper_p(row.chisq, 1.0);
    std::vector<double> sc(scaled.col(a).data(), scaled.col(a).data() + d);
    row.correlation = stats::pearson_correlation(g, sc);
  }

  const Eigen::VectorXd u = resid_active.transpose() * xx;
  out.global_chisq = static_cast<double>(d) * u.dot(v_active * u) / xx_ss;
  out.global_df = static_cast<double>(n_active);
  out.global_p = stats::chi_squared_upper_p(out.global_chisq, out.global_df);
  return out;
}

struct ChangepointOptions {
  double grid_step_km = 10.0;
  int min_events_per_side = 2;
  double effect_size_threshold = 3.0;  // two-sample z below this is flagged as noise
};

struct ChangepointSuggestion {
  std::optional<double> km;
  double effect_size = 0.0;  // |standardized mean difference| at the suggestion
  bool below_threshold = false;
  bool degenerate = false;
};

// Advisory changepoint scan for one covariate's residuals: the grid km with
// the largest two-sample standardized difference in mean residuals before and
// after it.
inline ChangepointSuggestion suggest_changepoint(const std::vector<double>& residuals,
                                                 const std::vector<double>& event_kms,
                                                 const ChangepointOptions& options = {}) {
  if (residuals.size() != event_kms.size())
    throw ValidationError("suggest_changepoint: residuals and kms differ in length");
  if (residuals.size() < 10)
    throw ValidationError("suggest_changepoint: needs at least 10 events, got " +
                          std::to_string(residuals.size()));

  ChangepointSuggestion out;
  if (stats::variance(residuals) <= 0.0) {
    out.degenerate = true;
    return out;
  }

  std::vector<std::size_t> order(event_kms.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return event_kms[a] < event_kms[b]; });

  const double km_min = event_kms[order.front()];
  const double km_max = event_kms[order.back()];
  double best_z = -1.0;
  for (double cut = std::ceil(km_min / options.grid_step_km) * options.grid_step_km;
       cut < km_max; cut += options.grid_step_km) {
    std::vector<double> before, after;
    for (std::size_t i = 0; i < event_kms.size(); ++i)
      (event_kms[i] <= cut ? before : after).push_back(residuals[i]);
    if (static_cast<int>(before.size()) < options.min_events_per_side ||
        static_cast<int>(after.size()) < options.min_events_per_side)
      continue;
    const double n1 = static_cast<double>(before.size());
    const double n2 = static_cast<double>(after.size());
    const double pooled = ((n1 - 1.0) * stats::variance(before) +
                           (n2 - 1.0) * stats::variance(after)) /
                          (n1 + n2 - 2.0);
    if (pooled <= 0.0) continue;
    const double z = std::abs(stats::mean(after) - stats::mean(before)) /
                     std::sqrt(pooled * (1.0 / n1 + 1.0 / n2));
    if (z > best_z) {
      best_z = z;
      out.km = cut;
      out.effect_size = z;
    }
  }
  if (!out.km.has_value()) {
    out.degenerate = true;
    return out;
  }
  out.below_threshold = out.effect_size < options.effect_size_threshold;
  return out;
}

}  // namespace raildelay::diag
