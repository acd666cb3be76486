#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "raildelay/domain.hpp"
#include "raildelay/errors.hpp"
#include "raildelay/expm.hpp"
#include "raildelay/log.hpp"
#include "raildelay/optim.hpp"

namespace raildelay::msm {

// Which transitions of the q-state chain carry an intensity, and which
// covariate columns act on each of them.
struct IntensitySpec {
  int n_states = 2;
  std::vector<std::pair<int, int>> transitions;              // 1-based (r, s), r != s
  std::vector<std::vector<std::size_t>> covariate_indices;   // per transition

  static IntensitySpec two_state(std::size_t n_covariates) {
    IntensitySpec spec;
    spec.n_states = 2;
    spec.transitions = {{1, 2}, {2, 1}};
    std::vector<std::size_t> all(n_covariates);
    for (std::size_t i = 0; i < n_covariates; ++i) all[i] = i;
    spec.covariate_indices = {all, all};
    return spec;
  }

  std::size_t n_transitions() const { return transitions.size(); }

  std::size_t n_parameters() const {
    std::size_t n = transitions.size();
    for (const auto& idx : covariate_indices) n += idx.size();
    return n;
  }

  // Offset of transition k's coefficient block within the parameter vector
  // [log q0 (one per transition)] ++ [beta blocks in transition order].
  std::size_t beta_offset(std::size_t k) const {
    std::size_t off = transitions.size();
    for (std::size_t j = 0; j < k; ++j) off += covariate_indices[j].size();
    return off;
  }

  void validate(std::size_t n_covariates) const {
    if (n_states < 2) throw ValidationError("IntensitySpec: n_states must be >= 2");
    if (transitions.empty())
      throw ValidationError("IntensitySpec: needs at least one allowed transition");
    if (covariate_indices.size() != transitions.size())
      throw ValidationError("IntensitySpec: one covariate-index set per transition");
    std::map<std::pair<int, int>, int> seen;
    for (const auto& [r, s] : transitions) {
      if (r < 1 || r > n_states || s < 1 || s > n_states)
        throw ValidationError("IntensitySpec: transition " + std::to_string(r) + "->" +
                              std::to_string(s) + " out of state range");
      if (r == s)
        throw ValidationError("IntensitySpec: self-transition " + std::to_string(r) +
                              "->" + std::to_string(s) + " is not allowed");
      if (++seen[{r, s}] > 1)
        throw ValidationError("IntensitySpec: duplicate transition " + std::to_string(r) +
                              "->" + std::to_string(s));
    }
    for (const auto& idx : covariate_indices)
      for (std::size_t c : idx)
        if (c >= n_covariates)
          throw ValidationError("IntensitySpec: covariate index " + std::to_string(c) +
                                " out of range");
  }
};

// Intensity matrix with proportional covariate effects: off-diagonal
// q_rs = q0_rs * exp(beta_rs' x), diagonal set so every row sums to zero.
inline Eigen::MatrixXd build_q(const IntensitySpec& spec,
                               const std::vector<double>& q0_offdiag,
                               const std::vector<Eigen::VectorXd>& beta_rs,
                               const Eigen::VectorXd& x) {
  if (q0_offdiag.size() != spec.n_transitions() || beta_rs.size() != spec.n_transitions())
    throw ValidationError("build_q: one q0 and one beta vector per transition");
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(spec.n_states, spec.n_states);
  for (std::size_t k = 0; k < spec.n_transitions(); ++k) {
    if (!(q0_offdiag[k] > 0.0))
      throw ValidationError("build_q: baseline intensities must be > 0");
    const auto& idx = spec.covariate_indices[k];
    if (static_cast<std::size_t>(beta_rs[k].size()) != idx.size())
      throw ValidationError("build_q: beta length mismatch for a transition");
    double lin = 0.0;
    for (std::size_t m = 0; m < idx.size(); ++m)
      lin += beta_rs[k](static_cast<Eigen::Index>(m)) * x(static_cast<Eigen::Index>(idx[m]));
    const auto [r, s] = spec.transitions[k];
    q(r - 1, s - 1) = q0_offdiag[k] * std::exp(lin);
  }
  for (int r = 0; r < spec.n_states; ++r) {
    double row_sum = 0.0;
    for (int s = 0; s < spec.n_states; ++s)
      if (s != r) row_sum += q(r, s);
    q(r, r) = -row_sum;
  }
  return q;
}

// P(t) = Exp(tQ), entries nudged into [0,1]; anything farther than 1e-12
// outside is reported before clamping.
inline Eigen::MatrixXd transition_probability(const Eigen::MatrixXd& q, double t) {
  if (q.rows() != q.cols()) throw ValidationError("transition_probability: Q not square");
  if (!(t >= 0.0)) throw ValidationError("transition_probability: t must be >= 0");
  for (Eigen::Index r = 0; r < q.rows(); ++r) {
    double row_sum = 0.0;
    for (Eigen::Index s = 0; s < q.cols(); ++s) {
      if (r != s && q(r, s) < 0.0)
        throw ValidationError("transition_probability: off-diagonal intensity < 0");
      row_sum += q(r, s);
    }
    if (std::abs(row_sum) > 1e-10 * std::max(1.0, q.cwiseAbs().maxCoeff()))
      throw ValidationError("transition_probability: rows of Q must sum to 0");
  }
  Eigen::MatrixXd p = expm::matrix_exp(t * q);
  for (Eigen::Index r = 0; r < p.rows(); ++r)
    for (Eigen::Index s = 0; s < p.cols(); ++s) {
      if (p(r, s) < -1e-12 || p(r, s) > 1.0 + 1e-12)
        log::warn("transition_probability: entry (" + std::to_string(r + 1) + "," +
                  std::to_string(s + 1) + ") = " + std::to_string(p(r, s)) +
                  " outside [0,1] beyond tolerance; clamped");
      p(r, s) = std::clamp(p(r, s), 0.0, 1.0);
    }
  return p;
}

namespace detail {

struct Pairs {
  std::vector<int> from;        // 0-based states
  std::vector<int> to;
  std::vector<double> dt;       // in intensity time units
  Eigen::MatrixXd x;            // left-endpoint covariates, one row per pair
  std::vector<std::string> subject;
  std::vector<double> left_time_min;
};

inline Pairs build_pairs(const PanelStateDataset& panel, int n_states,
                         double time_unit_min) {
  panel.validate(n_states);
  const auto p = static_cast<Eigen::Index>(panel.covariate_names.size());
  Pairs pairs;
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i + 1 < panel.observations.size(); ++i) {
    const auto& a = panel.observations[i];
    const auto& b = panel.observations[i + 1];
    if (a.subject_id != b.subject_id) continue;
    pairs.from.push_back(a.state - 1);
    pairs.to.push_back(b.state - 1);
    pairs.dt.push_back((b.obs_time_min - a.obs_time_min) / time_unit_min);
    pairs.subject.push_back(a.subject_id);
    pairs.left_time_min.push_back(a.obs_time_min);
    keep.push_back(static_cast<Eigen::Index>(i));
  }
  pairs.x.resize(static_cast<Eigen::Index>(keep.size()), p);
  for (std::size_t row = 0; row < keep.size(); ++row)
    for (Eigen::Index c = 0; c < p; ++c)
      pairs.x(static_cast<Eigen::Index>(row), c) =
          panel.observations[static_cast<std::size_t>(keep[row])].covariates
              [static_cast<std::size_t>(c)];
  return pairs;
}

struct ThetaView {
  std::vector<double> q0;
  std::vector<Eigen::VectorXd> beta;
};

inline ThetaView unpack(const IntensitySpec& spec, const Eigen::VectorXd& theta) {
  ThetaView view;
  view.q0.resize(spec.n_transitions());
  view.beta.resize(spec.n_transitions());
  for (std::size_t k = 0; k < spec.n_transitions(); ++k) {
    view.q0[k] = std::exp(theta(static_cast<Eigen::Index>(k)));
    const auto& idx = spec.covariate_indices[k];
    Eigen::VectorXd b(static_cast<Eigen::Index>(idx.size()));
    const std::size_t off = spec.beta_offset(k);
    for (std::size_t m = 0; m < idx.size(); ++m)
      b(static_cast<Eigen::Index>(m)) = theta(static_cast<Eigen::Index>(off + m));
    view.beta[k] = std::move(b);
  }
  return view;
}

struct PairFailure {
  std::size_t pair_index;
  double probability;
};

// Log likelihood of all pairs; optionally the gradient on the estimation
// scale via the Frechet derivative of each pair's matrix exponential. A
// non-positive transition probability aborts with the failing pair.
inline std::optional<double> loglik_impl(const Pairs& pairs, const IntensitySpec& spec,
                                         const Eigen::VectorXd& theta,
                                         Eigen::VectorXd* gradient,
                                         PairFailure* failure) {
  const ThetaView view = unpack(spec, theta);
  const int q_dim = spec.n_states;
  if (gradient) gradient->setZero(theta.size());

  double total = 0.0;
  for (std::size_t i = 0; i < pairs.from.size(); ++i) {
    const Eigen::VectorXd x = pairs.x.row(static_cast<Eigen::Index>(i)).transpose();
    const Eigen::MatrixXd q = build_q(spec, view.q0, view.beta, x);
    if (!q.allFinite()) return std::nullopt;
    const Eigen::MatrixXd a = pairs.dt[i] * q;
    const int r = pairs.from[i];
    const int s = pairs.to[i];

    double prob;
    Eigen::MatrixXd dprob_da;
    if (gradient) {
      Eigen::MatrixXd direction = Eigen::MatrixXd::Zero(q_dim, q_dim);
      direction(r, s) = 1.0;
      // adjoint trick: d[exp(A)]_{rs} / dA_ab = [L(A', e_r e_s')]_ab
      const auto [exp_at, frechet] = expm::matrix_exp_with_frechet(a.transpose(), direction);
      prob = exp_at(s, r);  // exp(A')_{sr} = exp(A)_{rs}
      dprob_da = frechet;
    } else {
      prob = expm::matrix_exp(a)(r, s);
    }
    if (!(prob > 0.0) || !std::isfinite(prob)) {
      if (failure) *failure = {i, prob};
      return std::nullopt;
    }
    total += std::log(prob);

    if (gradient) {
      for (std::size_t k = 0; k < spec.n_transitions(); ++k) {
        const auto [u1, v1] = spec.transitions[k];
        const int u = u1 - 1;
        const int v = v1 - 1;
        const double q_uv = q(u, v);
        // dA/d(log q0_k) = dt * q_uv * (E_uv - E_uu)
        const double sens = pairs.dt[i] * q_uv * (dprob_da(u, v) - dprob_da(u, u)) / prob;
        (*gradient)(static_cast<Eigen::Index>(k)) += sens;
        const auto& idx = spec.covariate_indices[k];
        const std::size_t off = spec.beta_offset(k);
        for (std::size_t m = 0; m < idx.size(); ++m)
          (*gradient)(static_cast<Eigen::Index>(off + m)) +=
              sens * x(static_cast<Eigen::Index>(idx[m]));
      }
    }
  }
  return total;
}

}  // namespace detail

// Panel log likelihood: sum over consecutive observation pairs of
// log p_{S(t_j) S(t_j+1)}(dt), with Q built from the pair's left-endpoint
// covariates. Subjects with a single observation contribute nothing.
inline double msm_loglik(const PanelStateDataset& panel, const IntensitySpec& spec,
                         const Eigen::VectorXd& theta, double time_unit_min = 60.0) {
  spec.validate(panel.covariate_names.size());
  if (theta.size() != static_cast<Eigen::Index>(spec.n_parameters()))
    throw ValidationError("msm_loglik: parameter vector has wrong length");
  const detail::Pairs pairs = detail::build_pairs(panel, spec.n_states, time_unit_min);
  detail::PairFailure failure{0, 0.0};
  const auto value = detail::loglik_impl(pairs, spec, theta, nullptr, &failure);
  if (!value) {
    const std::size_t i = failure.pair_index;
    throw NumericError(
        "msm_loglik: degenerate transition probability " +
        std::to_string(failure.probability) + " for subject '" + pairs.subject[i] +
        "' pair at t = " + std::to_string(pairs.left_time_min[i]) + " min (state " +
        std::to_string(pairs.from[i] + 1) + " -> " + std::to_string(pairs.to[i] + 1) + ")");
  }
  return *value;
}

struct MsmFitOptions {
  double time_unit_min = 60.0;  // intensities are per hour by default
  int max_iterations = 200;
  double gradient_tol = 1e-6;
  double hessian_step = 1e-4;   // central-difference step for the observed information
};

// Maximum likelihood over (log q0, beta) by BFGS. Start values: crude rates
// (observed r->s pairs over time spent in r) and beta = 0. Covariance is the
// inverse of the numerically differenced observed information.
inline MsmFit fit_msm(const PanelStateDataset& panel, const IntensitySpec& spec,
                      const MsmFitOptions& options = {}) {
  spec.validate(panel.covariate_names.size());
  const detail::Pairs pairs = detail::build_pairs(panel, spec.n_states, options.time_unit_min);
  if (pairs.from.empty())
    throw ValidationError("fit_msm: panel has no consecutive observation pairs");

  std::map<std::pair<int, int>, int> pair_counts;
  std::vector<double> time_in_state(static_cast<std::size_t>(spec.n_states), 0.0);
  for (std::size_t i = 0; i < pairs.from.size(); ++i) {
    ++pair_counts[{pairs.from[i] + 1, pairs.to[i] + 1}];
    time_in_state[static_cast<std::size_t>(pairs.from[i])] += pairs.dt[i];
  }
  std::string unobserved;
  for (const auto& [r, s] : spec.transitions)
    if (pair_counts[{r, s}] == 0)
      unobserved += (unobserved.empty() ? "" : ", ") + std::to_string(r) + "->" +
                    std::to_string(s);
  if (!unobserved.empty())
    throw ValidationError("fit_msm: allowed transitions never observed in the panel: " +
                          unobserved);

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.n_parameters()));
  for (std::size_t k = 0; k < spec.n_transitions(); ++k) {
    const auto [r, s] = spec.transitions[k];
    const double crude = pair_counts[{r, s}] / time_in_state[static_cast<std::size_t>(r - 1)];
    theta(static_cast<Eigen::Index>(k)) = std::log(crude);
  }

  const auto objective = [&](const Eigen::VectorXd& t, Eigen::VectorXd& grad) -> double {
    Eigen::VectorXd g(t.size());
    const auto value = detail::loglik_impl(pairs, spec, t, &g, nullptr);
    if (!value) {
      grad.setZero(t.size());
      return std::numeric_limits<double>::infinity();
    }
    grad = -g;
    return -*value;
  };

  optim::BfgsOptions bfgs;
  bfgs.max_iterations = options.max_iterations;
  bfgs.gradient_tol = options.gradient_tol;
  const optim::BfgsResult opt = optim::minimize_bfgs(objective, theta, bfgs);

  const Eigen::Index np = opt.x.size();

  // observed information by central differences of the analytic gradient
  const auto numeric_information = [&](const Eigen::VectorXd& at,
                                       Eigen::MatrixXd& info) -> bool {
    Eigen::MatrixXd hessian(np, np);
    for (Eigen::Index j = 0; j < np; ++j) {
      const double h = options.hessian_step * std::max(1.0, std::abs(at(j)));
      Eigen::VectorXd tp = at, tm = at;
      tp(j) += h;
      tm(j) -= h;
      Eigen::VectorXd gp(np), gm(np);
      if (!detail::loglik_impl(pairs, spec, tp, &gp, nullptr) ||
          !detail::loglik_impl(pairs, spec, tm, &gm, nullptr))
        return false;
      hessian.col(j) = (gp - gm) / (2.0 * h);  // of the loglik
    }
    info = -0.5 * (hessian + hessian.transpose());
    return true;
  };

  // Newton polish: near the optimum the line search cannot certify
  // improvements below the floating-point resolution of the total loglik, so
  // BFGS can stall with the gradient slightly above tolerance. A couple of
  // Newton steps on the differenced information drive it the rest of the way.
  Eigen::VectorXd at = opt.x;
  Eigen::VectorXd grad = -opt.gradient;  // gradient of the loglik
  double value = -opt.value;
  int iterations = opt.iterations;
  for (int polish = 0; polish < 8; ++polish) {
    if (grad.cwiseAbs().maxCoeff() < options.gradient_tol) break;
    Eigen::MatrixXd info(np, np);
    if (!numeric_information(at, info)) break;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) break;
    Eigen::VectorXd step = ldlt.solve(grad);
    if (!step.allFinite()) break;
    bool improved = false;
    for (int halving = 0; halving < 10 && !improved; ++halving) {
      const Eigen::VectorXd candidate = at + step;
      Eigen::VectorXd g_new(np);
      const auto v_new = detail::loglik_impl(pairs, spec, candidate, &g_new, nullptr);
      if (v_new && g_new.cwiseAbs().maxCoeff() < grad.cwiseAbs().maxCoeff()) {
        at = candidate;
        grad = g_new;
        value = *v_new;
        improved = true;
      } else {
        step /= 2.0;
      }
    }
    ++iterations;
    if (!improved) break;
  }

  MsmFit fit;
  fit.n_states = spec.n_states;
  fit.transitions = spec.transitions;
  fit.loglik = value;
  fit.gradient_norm = grad.cwiseAbs().maxCoeff();
  fit.converged = fit.gradient_norm < options.gradient_tol;
  fit.n_iterations = iterations;
  if (!fit.converged) {
    log::warn("fit_msm did not converge in " + std::to_string(iterations) +
              " iterations; gradient norm " + std::to_string(fit.gradient_norm) +
              ", loglik " + std::to_string(fit.loglik));
  }

  const detail::ThetaView view = detail::unpack(spec, at);
  fit.beta_rs = view.beta;
  fit.q0 = build_q(spec, view.q0, view.beta,
                   Eigen::VectorXd::Zero(static_cast<Eigen::Index>(panel.covariate_names.size())));

  fit.covariance = Eigen::MatrixXd::Zero(np, np);
  Eigen::MatrixXd info(np, np);
  if (numeric_information(at, info)) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info);
    if (eig.eigenvalues().minCoeff() > 0.0) {
      fit.covariance = eig.eigenvectors() *
                       eig.eigenvalues().cwiseInverse().asDiagonal() *
                       eig.eigenvectors().transpose();
      fit.covariance = 0.5 * (fit.covariance + fit.covariance.transpose());
      fit.covariance_valid = true;
    }
  }
  if (!fit.covariance_valid)
    log::warn("fit_msm: observed information is not positive definite; "
              "confidence intervals suppressed");
  fit.validate();
  return fit;
}

struct TransitionHr {
  int from = 1;
  int to = 2;
  std::string predictor;
  double log_hr = 0.0;
  double hazard_ratio = 1.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  bool ci_suppressed = false;
};

// HR = exp(beta) per transition and covariate; 95% CI exp(beta +- 1.96 SE) on
// the log scale. Rows carry a flag instead of intervals when the covariance
// was suppressed.
inline std::vector<TransitionHr> transition_hazard_ratios(
    const MsmFit& fit, const IntensitySpec& spec,
    const std::vector<std::string>& covariate_names) {
  if (!fit.converged)
    throw ValidationError("transition_hazard_ratios: fit did not converge");
  if (fit.transitions != spec.transitions)
    throw ValidationError("transition_hazard_ratios: fit and spec transitions differ");
  std::vector<TransitionHr> rows;
  for (std::size_t k = 0; k < spec.n_transitions(); ++k) {
    const auto [r, s] = spec.transitions[k];
    const auto& idx = spec.covariate_indices[k];
    const std::size_t off = spec.beta_offset(k);
    for (std::size_t m = 0; m < idx.size(); ++m) {
      TransitionHr row;
      row.from = r;
      row.to = s;
      row.predictor = idx[m] < covariate_names.size() ? covariate_names[idx[m]]
                                                      : "x" + std::to_string(idx[m]);
      row.log_hr = fit.beta_rs[k](static_cast<Eigen::Index>(m));
      row.hazard_ratio = std::exp(row.log_hr);
      const auto pi = static_cast<Eigen::Index>(off + m);
      if (fit.covariance_valid && fit.covariance(pi, pi) >= 0.0) {
        const double se = std::sqrt(fit.covariance(pi, pi));
        row.ci_lower = std::exp(row.log_hr - 1.96 * se);
        row.ci_upper = std::exp(row.log_hr + 1.96 * se);
      } else {
        row.ci_suppressed = true;
        row.ci_lower = std::numeric_limits<double>::quiet_NaN();
        row.ci_upper = std::numeric_limits<double>::quiet_NaN();
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace raildelay::msm
