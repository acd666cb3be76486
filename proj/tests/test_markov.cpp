#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "raildelay/expm.hpp"
#include "raildelay/markov.hpp"
#include "raildelay/rng.hpp"
#include "raildelay/simulate.hpp"

using namespace raildelay;

namespace {

// closed-form 2-state transition matrix for Q = [[-a, a], [b, -b]]
Eigen::Matrix2d two_state_closed_form(double a, double b, double t) {
  const double s = a + b;
  const double e = std::exp(-s * t);
  Eigen::Matrix2d p;
  p << (b + a * e) / s, (a - a * e) / s, (b - b * e) / s, (a + b * e) / s;
  return p;
}

Eigen::MatrixXd two_state_q(double a, double b) {
  Eigen::MatrixXd q(2, 2);
  q << -a, a, b, -b;
  return q;
}

PanelStateDataset tiny_panel() {
  PanelStateDataset panel;
  panel.covariate_names = {"x1"};
  panel.observations = {{"t1", 0.0, 1, {1.0}},
                        {"t1", 60.0, 2, {1.0}},
                        {"t1", 150.0, 2, {0.0}},
                        {"t2", 0.0, 2, {0.0}},
                        {"t2", 90.0, 1, {0.0}}};
  panel.validate();
  return panel;
}

}  // namespace

TEST_CASE("build_q applies proportional covariate effects") {
  const auto spec = msm::IntensitySpec::two_state(1);
  Eigen::VectorXd x(1);

  SECTION("x = 0 gives the baseline") {
    x << 0.0;
    const Eigen::MatrixXd q = msm::build_q(spec, {0.2, 0.5},
                                           {Eigen::VectorXd::Constant(1, 0.38),
                                            Eigen::VectorXd::Constant(1, -0.2)},
                                           x);
    CHECK(q(0, 1) == 0.2);
    CHECK(q(1, 0) == 0.5);
    CHECK(q(0, 0) == -0.2);
  }

  SECTION("q12 = 0.2 e^0.38 for x = 1") {
    x << 1.0;
    const Eigen::MatrixXd q = msm::build_q(spec, {0.2, 0.5},
                                           {Eigen::VectorXd::Constant(1, 0.38),
                                            Eigen::VectorXd::Constant(1, 0.0)},
                                           x);
    CHECK_THAT(q(0, 1), Catch::Matchers::WithinAbs(0.2 * std::exp(0.38), 1e-15));
    CHECK_THAT(q(0, 1), Catch::Matchers::WithinAbs(0.2924, 1e-4));
    CHECK(q(0, 0) == -q(0, 1));
  }

  SECTION("rows sum to zero for random parameters") {
    Rng rng(15);
    for (int rep = 0; rep < 50; ++rep) {
      x << rng.normal();
      const Eigen::MatrixXd q = msm::build_q(
          spec, {rng.uniform(0.01, 2.0), rng.uniform(0.01, 2.0)},
          {Eigen::VectorXd::Constant(1, rng.normal()),
           Eigen::VectorXd::Constant(1, rng.normal())},
          x);
      CHECK(std::abs(q.row(0).sum()) <= 1e-12);
      CHECK(std::abs(q.row(1).sum()) <= 1e-12);
    }
  }

  SECTION("non-positive baselines are rejected") {
    x << 0.0;
    CHECK_THROWS_AS(msm::build_q(spec, {0.0, 0.5},
                                 {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)}, x),
                    ValidationError);
  }
}

TEST_CASE("matrix exponential matches the 2-state closed form on the full grid") {
  const double qs[] = {0.01, 0.1, 1.0, 10.0};
  const double ts[] = {0.1, 1.0, 10.0};
  for (double a : qs)
    for (double b : qs)
      for (double t : ts) {
        const Eigen::MatrixXd p = msm::transition_probability(two_state_q(a, b), t);
        const Eigen::Matrix2d want = two_state_closed_form(a, b, t);
        CHECK((p - want).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(std::abs(p.row(0).sum() - 1.0) < 1e-12);
        CHECK(std::abs(p.row(1).sum() - 1.0) < 1e-12);
        CHECK(p.minCoeff() >= 0.0);
        CHECK(p.maxCoeff() <= 1.0);
      }
}

TEST_CASE("transition probability at t = 0 is the identity") {
  const Eigen::MatrixXd p = msm::transition_probability(two_state_q(0.7, 0.1), 0.0);
  CHECK((p - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("a = b = 1, t = 0.5 reproduces the closed-form value") {
  const Eigen::MatrixXd p = msm::transition_probability(two_state_q(1.0, 1.0), 0.5);
  const double want = (1.0 + std::exp(-1.0)) / 2.0;
  CHECK_THAT(p(0, 0), Catch::Matchers::WithinAbs(want, 1e-14));
  CHECK_THAT(p(0, 0), Catch::Matchers::WithinAbs(0.68394, 5e-6));
}

TEST_CASE("Chapman-Kolmogorov holds: P(s) P(t) = P(s + t)") {
  Rng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::MatrixXd q = two_state_q(rng.uniform(0.05, 3.0), rng.uniform(0.05, 3.0));
    const Eigen::MatrixXd lhs =
        msm::transition_probability(q, 0.3) * msm::transition_probability(q, 0.7);
    const Eigen::MatrixXd rhs = msm::transition_probability(q, 1.0);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("invalid intensity matrices are rejected") {
  Eigen::MatrixXd q(2, 2);
  q << -1.0, 1.0, 0.5, -0.4;  // row sum != 0
  CHECK_THROWS_AS(msm::transition_probability(q, 1.0), ValidationError);
  q << -1.0, 1.0, -0.5, 0.5;  // negative off-diagonal
  CHECK_THROWS_AS(msm::transition_probability(q, 1.0), ValidationError);
  CHECK_THROWS_AS(msm::transition_probability(two_state_q(1.0, 1.0), -0.1),
                  ValidationError);
}

TEST_CASE("panel log likelihood equals the closed-form sum of pair terms") {
  const PanelStateDataset panel = tiny_panel();
  const auto spec = msm::IntensitySpec::two_state(1);
  Eigen::VectorXd theta(4);
  theta << std::log(0.3), std::log(0.5), 0.4, -0.2;

  // oracle: accumulate log p over the three pairs via the closed form
  const auto pair_term = [&](int from, int to, double dt_hours, double x) {
    const double a = 0.3 * std::exp(0.4 * x);
    const double b = 0.5 * std::exp(-0.2 * x);
    return std::log(two_state_closed_form(a, b, dt_hours)(from - 1, to - 1));
  };
  const double want =
      pair_term(1, 2, 1.0, 1.0) + pair_term(2, 2, 1.5, 1.0) + pair_term(2, 1, 1.5, 0.0);
  CHECK_THAT(msm::msm_loglik(panel, spec, theta), Catch::Matchers::WithinAbs(want, 1e-12));
}

TEST_CASE("panels of singleton subjects have log likelihood 0") {
  PanelStateDataset panel;
  panel.covariate_names = {"x1"};
  panel.observations = {{"t1", 0.0, 1, {0.0}}, {"t2", 5.0, 2, {1.0}}};
  panel.validate();
  const auto spec = msm::IntensitySpec::two_state(1);
  Eigen::VectorXd theta(4);
  theta << std::log(0.3), std::log(0.5), 0.1, 0.1;
  CHECK(msm::msm_loglik(panel, spec, theta) == 0.0);
}

TEST_CASE("log likelihood is additive over subjects and invariant to relabeling") {
  Rng rng(21);
  sim::CtmcSimOptions options;
  options.n_subjects = 5;
  options.n_observations = 6;
  options.beta12 = 0.4;
  options.beta21 = -0.2;
  const PanelStateDataset panel = sim::simulate_ctmc(options, rng);
  const auto spec = msm::IntensitySpec::two_state(1);
  Eigen::VectorXd theta(4);
  theta << std::log(0.25), std::log(0.6), 0.3, -0.1;

  const double whole = msm::msm_loglik(panel, spec, theta);

  double parts = 0.0;
  for (int i = 0; i < options.n_subjects; ++i) {
    PanelStateDataset one;
    one.covariate_names = panel.covariate_names;
    for (const auto& obs : panel.observations)
      if (obs.subject_id == sim::subject_label(i)) one.observations.push_back(obs);
    parts += msm::msm_loglik(one, spec, theta);
  }
  CHECK_THAT(whole, Catch::Matchers::WithinAbs(parts, 1e-10));

  PanelStateDataset renamed = panel;
  for (auto& obs : renamed.observations) obs.subject_id = "zz_" + obs.subject_id;
  CHECK(msm::msm_loglik(renamed, spec, theta) == whole);
}

TEST_CASE("analytic likelihood gradient matches central finite differences") {
  Rng rng(33);
  sim::CtmcSimOptions options;
  options.n_subjects = 8;
  options.n_observations = 5;
  options.beta12 = 0.4;
  options.beta21 = -0.2;
  const PanelStateDataset panel = sim::simulate_ctmc(options, rng);
  const auto spec = msm::IntensitySpec::two_state(1);
  const auto pairs = msm::detail::build_pairs(panel, 2, 60.0);

  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd theta(4);
    theta << std::log(rng.uniform(0.1, 1.0)), std::log(rng.uniform(0.1, 1.0)),
        rng.normal() * 0.5, rng.normal() * 0.5;
    Eigen::VectorXd grad(4);
    const auto value = msm::detail::loglik_impl(pairs, spec, theta, &grad, nullptr);
    REQUIRE(value.has_value());
    for (int j = 0; j < 4; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(theta(j)));
      Eigen::VectorXd up = theta, down = theta;
      up(j) += h;
      down(j) -= h;
      const auto fu = msm::detail::loglik_impl(pairs, spec, up, nullptr, nullptr);
      const auto fd = msm::detail::loglik_impl(pairs, spec, down, nullptr, nullptr);
      const double want = (*fu - *fd) / (2.0 * h);
      CHECK_THAT(grad(j), Catch::Matchers::WithinRel(want, 1e-6) ||
                              Catch::Matchers::WithinAbs(want, 1e-8));
    }
  }
}

TEST_CASE("fit recovers simulated parameters within 3 SE") {
  Rng rng(777);
  sim::CtmcSimOptions options;
  options.n_subjects = 400;
  options.n_observations = 12;
  options.q12 = 0.3;
  options.q21 = 0.5;
  options.beta12 = 0.4;
  options.beta21 = -0.2;
  const PanelStateDataset panel = sim::simulate_ctmc(options, rng);
  const auto spec = msm::IntensitySpec::two_state(1);
  const MsmFit fit = msm::fit_msm(panel, spec);
  REQUIRE(fit.converged);
  REQUIRE(fit.covariance_valid);

  const double truth[4] = {std::log(0.3), std::log(0.5), 0.4, -0.2};
  Eigen::VectorXd estimate(4);
  estimate << std::log(fit.q0(0, 1)), std::log(fit.q0(1, 0)), fit.beta_rs[0](0),
      fit.beta_rs[1](0);
  for (int j = 0; j < 4; ++j) {
    const double se = std::sqrt(fit.covariance(j, j));
    INFO("parameter " << j << " estimate " << estimate(j) << " truth " << truth[j]
                      << " se " << se);
    CHECK(std::abs(estimate(j) - truth[j]) < 3.0 * se);
  }
  CHECK(fit.gradient_norm < 1e-6);
}

TEST_CASE("identically-zero covariate collapses to the no-covariate fit") {
  Rng rng(88);
  sim::CtmcSimOptions options;
  options.n_subjects = 60;
  options.n_observations = 8;
  PanelStateDataset panel = sim::simulate_ctmc(options, rng);
  for (auto& obs : panel.observations) obs.covariates = {0.0};

  const auto spec = msm::IntensitySpec::two_state(1);
  const MsmFit with_cov = msm::fit_msm(panel, spec);
  CHECK(with_cov.beta_rs[0](0) == 0.0);  // flat likelihood in beta, start stays
  CHECK(with_cov.beta_rs[1](0) == 0.0);
  CHECK_FALSE(with_cov.covariance_valid);  // information is singular in beta

  msm::IntensitySpec bare = spec;
  bare.covariate_indices = {{}, {}};
  const MsmFit no_cov = msm::fit_msm(panel, bare);
  REQUIRE(no_cov.converged);
  CHECK_THAT(with_cov.q0(0, 1), Catch::Matchers::WithinAbs(no_cov.q0(0, 1), 1e-6));
  CHECK_THAT(with_cov.q0(1, 0), Catch::Matchers::WithinAbs(no_cov.q0(1, 0), 1e-6));
}

TEST_CASE("duplicating the panel halves variances and keeps estimates") {
  Rng rng(55);
  sim::CtmcSimOptions options;
  options.n_subjects = 150;
  options.n_observations = 8;
  options.beta12 = 0.3;
  options.beta21 = -0.1;
  const PanelStateDataset panel = sim::simulate_ctmc(options, rng);
  PanelStateDataset doubled = panel;
  for (const auto& obs : panel.observations) {
    PanelObservation copy = obs;
    copy.subject_id = obs.subject_id + "_dup";
    doubled.observations.push_back(std::move(copy));
  }
  std::stable_sort(doubled.observations.begin(), doubled.observations.end(),
                   [](const PanelObservation& a, const PanelObservation& b) {
                     return a.subject_id < b.subject_id;
                   });

  const auto spec = msm::IntensitySpec::two_state(1);
  const MsmFit f1 = msm::fit_msm(panel, spec);
  const MsmFit f2 = msm::fit_msm(doubled, spec);
  REQUIRE(f1.converged);
  REQUIRE(f2.converged);

  CHECK_THAT(f2.q0(0, 1), Catch::Matchers::WithinAbs(f1.q0(0, 1), 1e-6));
  CHECK_THAT(f2.q0(1, 0), Catch::Matchers::WithinAbs(f1.q0(1, 0), 1e-6));
  CHECK_THAT(f2.beta_rs[0](0), Catch::Matchers::WithinAbs(f1.beta_rs[0](0), 1e-6));
  for (int j = 0; j < 4; ++j) {
    const double ratio = std::sqrt(f1.covariance(j, j)) / std::sqrt(f2.covariance(j, j));
    CHECK_THAT(ratio, Catch::Matchers::WithinAbs(std::sqrt(2.0), 0.05 * std::sqrt(2.0)));
  }
}

TEST_CASE("never-observed transitions abort the fit with their names") {
  PanelStateDataset panel;
  panel.covariate_names = {};
  // both subjects only ever move 1 -> 2
  panel.observations = {{"a", 0.0, 1, {}},  {"a", 60.0, 2, {}}, {"a", 120.0, 2, {}},
                        {"b", 0.0, 1, {}},  {"b", 90.0, 1, {}}, {"b", 150.0, 2, {}}};
  panel.validate();
  msm::IntensitySpec spec = msm::IntensitySpec::two_state(0);
  CHECK_THROWS_WITH(msm::fit_msm(panel, spec),
                    Catch::Matchers::ContainsSubstring("never observed") &&
                        Catch::Matchers::ContainsSubstring("2->1"));
}

TEST_CASE("degenerate transition probabilities are reported with the pair") {
  PanelStateDataset panel;
  panel.covariate_names = {};
  panel.observations = {{"a", 0.0, 1, {}}, {"a", 60.0, 2, {}}};
  panel.validate();
  msm::IntensitySpec spec;
  spec.n_states = 2;
  spec.transitions = {{2, 1}};  // state 1 is absorbing: 1 -> 2 is impossible
  spec.covariate_indices = {{}};
  Eigen::VectorXd theta(1);
  theta << std::log(0.5);
  CHECK_THROWS_WITH(msm::msm_loglik(panel, spec, theta),
                    Catch::Matchers::ContainsSubstring("degenerate") &&
                        Catch::Matchers::ContainsSubstring("'a'"));
}

TEST_CASE("hazard ratio intervals use the delta method on the log scale") {
  MsmFit fit;
  fit.n_states = 2;
  fit.transitions = {{1, 2}, {2, 1}};
  fit.q0.resize(2, 2);
  fit.q0 << -0.3, 0.3, 0.5, -0.5;
  fit.converged = true;
  fit.covariance_valid = true;
  const auto spec = msm::IntensitySpec::two_state(1);

  SECTION("beta = 0, SE = 0.1 gives (0.822, 1.217)") {
    fit.beta_rs = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};
    fit.covariance = Eigen::MatrixXd::Identity(4, 4) * 0.01;
    const auto rows = msm::transition_hazard_ratios(fit, spec, {"x1"});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].hazard_ratio == 1.0);
    CHECK_THAT(rows[0].ci_lower, Catch::Matchers::WithinAbs(0.822, 5e-4));
    CHECK_THAT(rows[0].ci_upper, Catch::Matchers::WithinAbs(1.217, 5e-4));
  }

  SECTION("beta = ln 1.46, SE = 0.116 matches the (1.163, 1.83) interval shape") {
    fit.beta_rs = {Eigen::VectorXd::Constant(1, std::log(1.46)),
                   Eigen::VectorXd::Zero(1)};
    Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(4, 4) * 0.01;
    cov(2, 2) = 0.116 * 0.116;
    fit.covariance = cov;
    const auto rows = msm::transition_hazard_ratios(fit, spec, {"icing"});
    CHECK_THAT(rows[0].hazard_ratio, Catch::Matchers::WithinAbs(1.460, 5e-4));
    CHECK_THAT(rows[0].ci_lower, Catch::Matchers::WithinAbs(1.163, 5e-4));
    CHECK_THAT(rows[0].ci_upper, Catch::Matchers::WithinAbs(1.83, 5e-3));
  }

  SECTION("interval always contains the point estimate") {
    Rng rng(14);
    for (int rep = 0; rep < 50; ++rep) {
      fit.beta_rs = {Eigen::VectorXd::Constant(1, rng.normal()),
                     Eigen::VectorXd::Constant(1, rng.normal())};
      fit.covariance = Eigen::MatrixXd::Identity(4, 4) * rng.uniform(0.001, 0.5);
      for (const auto& row : msm::transition_hazard_ratios(fit, spec, {"x1"})) {
        CHECK(row.ci_lower <= row.hazard_ratio);
        CHECK(row.hazard_ratio <= row.ci_upper);
      }
    }
  }

  SECTION("suppressed covariance propagates as flagged rows") {
    fit.beta_rs = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};
    fit.covariance = Eigen::MatrixXd::Zero(4, 4);
    fit.covariance_valid = false;
    const auto rows = msm::transition_hazard_ratios(fit, spec, {"x1"});
    CHECK(rows[0].ci_suppressed);
    CHECK(std::isnan(rows[0].ci_lower));
  }
}
