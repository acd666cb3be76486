#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "raildelay/domain.hpp"
#include "raildelay/errors.hpp"
#include "raildelay/log.hpp"
#include "raildelay/stats.hpp"

namespace raildelay::cox {

enum class Ties { efron, breslow };

// Step covariate g(t) = 0 for t <= t0, 1 for t > t0, multiplied onto one
// existing covariate column to relax the proportionality assumption past t0.
struct HeavisideSpec {
  std::size_t covariate_index = 0;
  double changepoint_t0 = 0.0;

  void validate(std::size_t n_covariates) const {
    if (!(changepoint_t0 > 0.0))
      throw ValidationError("HeavisideSpec: changepoint_t0 must be > 0");
    if (covariate_index >= n_covariates)
      throw ValidationError("HeavisideSpec: covariate_index " +
                            std::to_string(covariate_index) + " out of range (have " +
                            std::to_string(n_covariates) + " covariates)");
  }
};

namespace detail {

inline std::string trim_number(double v) {
  std::string s = std::to_string(v);
  s.erase(s.find_last_not_of('0') + 1);
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

}  // namespace detail

// Appends one column per spec with value x_m * g(stop_km). Rows straddling a
// changepoint are split there first so every expanded covariate is constant
// within a row; the left part is censored, the right part keeps the event
// flag, both keep the source row's event_index.
inline CountingProcessDataset heaviside_expand(const CountingProcessDataset& dataset,
                                               const std::vector<HeavisideSpec>& specs) {
  dataset.validate();
  for (const auto& spec : specs) spec.validate(dataset.n_covariates());

  std::vector<double> cuts;
  for (const auto& spec : specs) cuts.push_back(spec.changepoint_t0);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  CountingProcessDataset out;
  out.covariate_names = dataset.covariate_names;
  for (const auto& spec : specs)
    out.covariate_names.push_back(dataset.covariate_names[spec.covariate_index] + ":gt" +
                                  detail::trim_number(spec.changepoint_t0));

  for (const auto& row : dataset.rows) {
    std::vector<double> bounds = {row.start_km};
    for (double t0 : cuts)
      if (row.start_km < t0 && t0 < row.stop_km) bounds.push_back(t0);
    bounds.push_back(row.stop_km);

    for (std::size_t seg = 0; seg + 1 < bounds.size(); ++seg) {
      CountingProcessRow piece = row;
      piece.start_km = bounds[seg];
      piece.stop_km = bounds[seg + 1];
      piece.event = row.event && (seg + 2 == bounds.size());
      for (const auto& spec : specs)
        piece.covariates.push_back(piece.stop_km > spec.changepoint_t0
                                       ? row.covariates[spec.covariate_index]
                                       : 0.0);
      out.rows.push_back(std::move(piece));
    }
  }
  out.validate();
  return out;
}

struct FitOptions {
  Ties ties = Ties::efron;
  int max_iterations = 25;
  double tol_beta = 1e-9;    // max |delta beta|
  double tol_loglik = 1e-12; // relative log-likelihood change
};

namespace detail {

// Flattened, sorted view of a counting-process dataset for the risk-set
// sweep. Event kms duplicated within one subject are perturbed by +1e-6 km in
// input order and logged, so risk sets stay non-degenerate.
struct Flat {
  Eigen::MatrixXd x;            // n x p
  std::vector<double> start;
  std::vector<double> stop;
  std::vector<char> event;
  std::vector<int> subject;     // dense subject index, by first appearance
  std::vector<int> by_stop;     // row indices, stop descending
  std::vector<int> by_start;    // row indices, start descending
  int n_subjects = 0;
  int n_events = 0;
  Eigen::Index n() const { return x.rows(); }
  Eigen::Index p() const { return x.cols(); }
};

inline Flat flatten(const CountingProcessDataset& dataset) {
  dataset.validate();
  const auto n = static_cast<Eigen::Index>(dataset.rows.size());
  const auto p = static_cast<Eigen::Index>(dataset.n_covariates());
  Flat flat;
  flat.x.resize(n, p);
  flat.start.resize(n);
  flat.stop.resize(n);
  flat.event.resize(n);
  flat.subject.resize(n);

  std::map<std::string, int> subject_ids;
  std::map<std::pair<int, double>, int> event_km_seen;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = dataset.rows[i];
    auto [it, inserted] =
        subject_ids.emplace(row.subject_id, static_cast<int>(subject_ids.size()));
    flat.subject[i] = it->second;
    (void)inserted;
    flat.start[i] = row.start_km;
    flat.stop[i] = row.stop_km;
    flat.event[i] = row.event ? 1 : 0;
    for (Eigen::Index c = 0; c < p; ++c) flat.x(i, c) = row.covariates[c];
    if (row.event) {
      ++flat.n_events;
      auto key = std::make_pair(it->second, row.stop_km);
      int& count = event_km_seen[key];
      if (count > 0) {
        flat.stop[i] += 1e-6 * count;
        log::warn("subject '" + row.subject_id + "': duplicate event km " +
                  std::to_string(row.stop_km) + " perturbed by +" +
                  std::to_string(1e-6 * count));
      }
      ++count;
    }
  }
  flat.n_subjects = static_cast<int>(subject_ids.size());

  flat.by_stop.resize(n);
  flat.by_start.resize(n);
  std::iota(flat.by_stop.begin(), flat.by_stop.end(), 0);
  std::iota(flat.by_start.begin(), flat.by_start.end(), 0);
  std::stable_sort(flat.by_stop.begin(), flat.by_stop.end(),
                   [&](int a, int b) { return flat.stop[a] > flat.stop[b]; });
  std::stable_sort(flat.by_start.begin(), flat.by_start.end(),
                   [&](int a, int b) { return flat.start[a] > flat.start[b]; });
  return flat;
}

struct SweepResult {
  double loglik = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd information;
};

// One pass over event kms in decreasing order, maintaining the weighted
// risk-set sums S0, S1, S2. Linear predictors are centered on their maximum
// so every exponential and log-sum stays in range.
inline SweepResult sweep(const Flat& flat, const Eigen::VectorXd& beta, Ties ties,
                         bool want_derivatives) {
  const Eigen::Index n = flat.n();
  const Eigen::Index p = flat.p();
  SweepResult out;
  out.gradient = Eigen::VectorXd::Zero(p);
  out.information = Eigen::MatrixXd::Zero(p, p);
  if (n == 0) return out;

  Eigen::VectorXd eta = flat.x * beta;
  const double eta_max = eta.maxCoeff();
  Eigen::VectorXd risk(n);
  for (Eigen::Index i = 0; i < n; ++i) risk(i) = std::exp(eta(i) - eta_max);

  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);

  std::size_t remove_ptr = 0;
  std::size_t i = 0;
  while (i < flat.by_stop.size()) {
    const double dtime = flat.stop[flat.by_stop[i]];

    int deaths = 0;
    double s0_dead = 0.0;
    Eigen::VectorXd s1_dead = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd s2_dead = Eigen::MatrixXd::Zero(p, p);

    for (; i < flat.by_stop.size() && flat.stop[flat.by_stop[i]] == dtime; ++i) {
      const int row = flat.by_stop[i];
      const double w = risk(row);
      s0 += w;
      if (want_derivatives) {
        s1.noalias() += w * flat.x.row(row).transpose();
        s2.noalias() += w * flat.x.row(row).transpose() * flat.x.row(row);
      }
      if (flat.event[row]) {
        ++deaths;
        s0_dead += w;
        out.loglik += eta(row) - eta_max;
        if (want_derivatives) {
          s1_dead.noalias() += w * flat.x.row(row).transpose();
          s2_dead.noalias() += w * flat.x.row(row).transpose() * flat.x.row(row);
          out.gradient += flat.x.row(row).transpose();
        }
      }
    }

    for (; remove_ptr < flat.by_start.size(); ++remove_ptr) {
      const int row = flat.by_start[remove_ptr];
      if (flat.start[row] < dtime) break;
      const double w = risk(row);
      s0 -= w;
      if (want_derivatives) {
        s1.noalias() -= w * flat.x.row(row).transpose();
        s2.noalias() -= w * flat.x.row(row).transpose() * flat.x.row(row);
      }
    }

    if (deaths == 0) continue;
    if (ties == Ties::breslow || deaths == 1) {
      out.loglik -= deaths * std::log(s0);
      if (want_derivatives) {
        const Eigen::VectorXd mean = s1 / s0;
        out.gradient -= deaths * mean;
        out.information.noalias() += deaths * (s2 / s0 - mean * mean.transpose());
      }
    } else {
      for (int k = 0; k < deaths; ++k) {
        const double frac = static_cast<double>(k) / deaths;
        const double denom = s0 - frac * s0_dead;
        out.loglik -= std::log(denom);
        if (want_derivatives) {
          const Eigen::VectorXd mean = (s1 - frac * s1_dead) / denom;
          out.gradient -= mean;
          out.information.noalias() +=
              (s2 - frac * s2_dead) / denom - mean * mean.transpose();
        }
      }
    }
  }
  return out;
}

inline void require_finite(double value, const char* what) {
  if (!std::isfinite(value))
    throw NumericError(std::string(what) + ": result is not finite (numerical overflow)");
}

// Inverts the information, or reports which covariate columns are linearly
// dependent when it is singular.
inline Eigen::MatrixXd invert_information(const Eigen::MatrixXd& info,
                                          const std::vector<std::string>& names) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(info);
  qr.setThreshold(1e-12);
  if (qr.rank() < info.rows()) {
    const auto perm = qr.colsPermutation().indices();
    std::string culprits;
    for (Eigen::Index k = qr.rank(); k < info.rows(); ++k) {
      const auto col = static_cast<std::size_t>(perm(k));
      if (!culprits.empty()) culprits += ", ";
      culprits += col < names.size() ? names[col] : ("column " + std::to_string(col));
    }
    throw NumericError("information matrix is singular; dependent columns: " + culprits);
  }
  const Eigen::MatrixXd inv = qr.inverse();
  return 0.5 * (inv + inv.transpose());
}

}  // namespace detail

// Log partial likelihood: sum over event rows of beta'x minus the log-sum of
// exp(beta'x) over the risk set {rows with start < t <= stop}.
inline double partial_loglik(const CountingProcessDataset& dataset,
                             const Eigen::VectorXd& beta, Ties ties = Ties::efron) {
  if (dataset.rows.empty()) throw ValidationError("partial_loglik: dataset is empty");
  if (!beta.allFinite()) throw ValidationError("partial_loglik: beta must be finite");
  const detail::Flat flat = detail::flatten(dataset);
  const double ll = detail::sweep(flat, beta, ties, false).loglik;
  detail::require_finite(ll, "partial_loglik");
  return ll;
}

inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> score_and_information(
    const CountingProcessDataset& dataset, const Eigen::VectorXd& beta,
    Ties ties = Ties::efron) {
  if (dataset.rows.empty())
    throw ValidationError("score_and_information: dataset is empty");
  const detail::Flat flat = detail::flatten(dataset);
  detail::SweepResult r = detail::sweep(flat, beta, ties, true);
  detail::require_finite(r.loglik, "score_and_information");
  return {std::move(r.gradient), std::move(r.information)};
}

namespace detail {

// Per-row score residuals. Sweep mirror of the loglik pass: each row follows
// x_l Lambda - xhaz between the moment it enters the risk set and the moment
// it leaves, and event rows add their observed-minus-expected term. The
// per-subject sums of these rows feed the sandwich.
inline Eigen::MatrixXd score_residuals(const Flat& flat, const Eigen::VectorXd& beta,
                                       Ties ties) {
  const Eigen::Index n = flat.n();
  const Eigen::Index p = flat.p();
  Eigen::MatrixXd resid = Eigen::MatrixXd::Zero(n, p);
  if (n == 0) return resid;

  Eigen::VectorXd eta = flat.x * beta;
  const double eta_max = eta.maxCoeff();
  Eigen::VectorXd risk(n);
  for (Eigen::Index i = 0; i < n; ++i) risk(i) = std::exp(eta(i) - eta_max);

  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  double cumhaz = 0.0;
  Eigen::VectorXd xhaz = Eigen::VectorXd::Zero(p);

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
      resid.row(row) =
          risk(row) * (flat.x.row(row) * cumhaz - xhaz.transpose());
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
      resid.row(row) -= w * (flat.x.row(row) * cumhaz - xhaz.transpose());
      s0 -= w;
      s1.noalias() -= w * flat.x.row(row).transpose();
    }

    const int deaths = static_cast<int>(group_deaths.size());
    if (deaths == 0) continue;
    if (ties == Ties::breslow || deaths == 1) {
      const double hazard = deaths / s0;
      const Eigen::VectorXd mean = s1 / s0;
      cumhaz += hazard;
      xhaz.noalias() += mean * hazard;
      for (int row : group_deaths)
        resid.row(row) += flat.x.row(row) - mean.transpose();
    } else {
      double mh1 = 0.0;
      Eigen::VectorXd mh2 = Eigen::VectorXd::Zero(p);
      Eigen::VectorXd mh3 = Eigen::VectorXd::Zero(p);
      for (int k = 0; k < deaths; ++k) {
        const double frac = static_cast<double>(k) / deaths;
        const double denom = s0 - frac * s0_dead;
        const Eigen::VectorXd mean = (s1 - frac * s1_dead) / denom;
        const double hazard = 1.0 / denom;
        cumhaz += hazard;
        xhaz.noalias() += mean * hazard;
        mh1 += hazard * frac;
        mh2.noalias() += mean * hazard * frac;
        mh3 += mean / deaths;
      }
      for (int row : group_deaths)
        resid.row(row) += (flat.x.row(row) - mh3.transpose()) +
                          risk(row) * (flat.x.row(row) * mh1 - mh2.transpose());
    }
  }

  for (; remove_ptr < flat.by_start.size(); ++remove_ptr) {
    const int row = flat.by_start[remove_ptr];
    resid.row(row) -= risk(row) * (flat.x.row(row) * cumhaz - xhaz.transpose());
  }
  return resid;
}

inline Eigen::MatrixXd sandwich(const Flat& flat, const Eigen::VectorXd& beta, Ties ties,
                                const Eigen::MatrixXd& model_cov) {
  const Eigen::MatrixXd resid = score_residuals(flat, beta, ties);
  Eigen::MatrixXd per_subject = Eigen::MatrixXd::Zero(flat.n_subjects, flat.p());
  for (Eigen::Index row = 0; row < flat.n(); ++row)
    per_subject.row(flat.subject[row]) += resid.row(row);
  const Eigen::MatrixXd meat = per_subject.transpose() * per_subject;
  const Eigen::MatrixXd robust = model_cov * meat * model_cov;
  return 0.5 * (robust + robust.transpose());
}

}  // namespace detail

// Newton-Raphson maximization of the partial likelihood from beta = 0, with
// step-halving whenever a step lowers the log likelihood. Model covariance is
// the inverse information at the optimum; robust covariance is the sandwich
// with score residuals summed per subject (clustered by trip).
inline CoxFit fit(const CountingProcessDataset& dataset, const FitOptions& options = {}) {
  const detail::Flat flat = detail::flatten(dataset);
  if (flat.n_events < 1) throw ValidationError("cox::fit: dataset has no event rows");

  const Eigen::Index p = flat.p();
  if (p == 0) throw ValidationError("cox::fit: dataset has no covariates");

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  detail::SweepResult cur = detail::sweep(flat, beta, options.ties, true);
  detail::require_finite(cur.loglik, "cox::fit");

  CoxFit result;
  result.loglik_at_start = cur.loglik;
  result.loglik_trace.push_back(cur.loglik);
  result.n_events = flat.n_events;
  result.n_subjects = flat.n_subjects;

  bool converged = false;
  int iter = 0;
  while (iter < options.max_iterations && !converged) {
    ++iter;
    // throws with the dependent column names when the information is singular
    const Eigen::MatrixXd inv_info =
        detail::invert_information(cur.information, dataset.covariate_names);
    const Eigen::VectorXd step = inv_info * cur.gradient;
    if (!step.allFinite())
      throw NumericError("cox::fit: Newton step is not finite");

    double scale = 1.0;
    Eigen::VectorXd beta_new;
    detail::SweepResult next;
    // accept within rounding noise of the current value, otherwise halve
    const double accept_floor = cur.loglik - 1e-11 * (std::abs(cur.loglik) + 1.0);
    for (int halving = 0; halving < 30; ++halving) {
      beta_new = beta + scale * step;
      next = detail::sweep(flat, beta_new, options.ties, true);
      if (std::isfinite(next.loglik) && next.loglik >= accept_floor) break;
      scale /= 2.0;
    }
    const double delta_max = (scale * step).cwiseAbs().maxCoeff();
    const double rel_change =
        std::abs(next.loglik - cur.loglik) / (std::abs(cur.loglik) + 1.0);
    beta = beta_new;
    cur = next;
    result.loglik_trace.push_back(cur.loglik);
    converged = delta_max < options.tol_beta || rel_change < options.tol_loglik;
  }

  result.beta = beta;
  result.loglik_at_end = cur.loglik;
  result.converged = converged;
  result.n_iterations = iter;
  result.model_covariance = detail::invert_information(cur.information,
                                                       dataset.covariate_names);
  result.robust_covariance =
      detail::sandwich(flat, beta, options.ties, result.model_covariance);

  if (!converged) {
    std::string trace;
    for (double ll : result.loglik_trace) trace += " " + std::to_string(ll);
    log::warn("cox::fit did not converge in " + std::to_string(options.max_iterations) +
              " iterations; loglik trace:" + trace);
  }
  result.validate();
  return result;
}

struct HazardRatioRow {
  std::string predictor;
  double coefficient = 0.0;
  double hazard_ratio = 1.0;
  double robust_se = 0.0;
  double z = 0.0;
  double p = 1.0;
};

// Per-column report rows: HR = exp(coef), z = coef / robust SE, two-sided
// normal p.
inline std::vector<HazardRatioRow> hazard_ratios(const CoxFit& fit,
                                                 const std::vector<std::string>& names) {
  if (!fit.converged)
    throw ValidationError("hazard_ratios: fit did not converge");
  if (static_cast<Eigen::Index>(names.size()) != fit.beta.size())
    throw ValidationError("hazard_ratios: name count does not match coefficients");
  std::vector<HazardRatioRow> rows;
  for (Eigen::Index i = 0; i < fit.beta.size(); ++i) {
    HazardRatioRow row;
    row.predictor = names[i];
    row.coefficient = fit.beta(i);
    row.hazard_ratio = std::exp(fit.beta(i));
    row.robust_se = std::sqrt(fit.robust_covariance(i, i));
    row.z = row.robust_se > 0.0 ? row.coefficient / row.robust_se
                                : std::numeric_limits<double>::quiet_NaN();
    row.p = stats::normal_two_sided_p(row.z);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace raildelay::cox
