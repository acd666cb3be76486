#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "raildelay/cox.hpp"
#include "raildelay/rng.hpp"
#include "raildelay/simulate.hpp"

using namespace raildelay;

namespace {

// Literal term-by-term evaluation of the log partial likelihood: for every
// event row, beta'x minus log of the plain exp-sum over the rows whose
// (start, stop] interval contains the event km. Independent of the sweep.
double oracle_partial_loglik(const CountingProcessDataset& d, const Eigen::VectorXd& beta) {
  double ll = 0.0;
  for (const auto& row : d.rows) {
    if (!row.event) continue;
    const double t = row.stop_km;
    double num = 0.0;
    for (std::size_t c = 0; c < row.covariates.size(); ++c)
      num += beta(static_cast<Eigen::Index>(c)) * row.covariates[c];
    double denom = 0.0;
    for (const auto& other : d.rows) {
      if (!(other.start_km < t && t <= other.stop_km)) continue;
      double lin = 0.0;
      for (std::size_t c = 0; c < other.covariates.size(); ++c)
        lin += beta(static_cast<Eigen::Index>(c)) * other.covariates[c];
      denom += std::exp(lin);
    }
    ll += num - std::log(denom);
  }
  return ll;
}

// Random tie-free dataset: subjects with consecutive (start, stop] rows and
// continuous interval lengths, so event kms never coincide.
CountingProcessDataset random_dataset(Rng& rng, int max_subjects = 5, int max_rows = 5,
                                      int p = 2) {
  CountingProcessDataset d;
  for (int c = 0; c < p; ++c) d.covariate_names.push_back("x" + std::to_string(c + 1));
  const int n_subjects = 1 + static_cast<int>(rng.below(max_subjects));
  bool any_event = false;
  for (int i = 0; i < n_subjects; ++i) {
    const int n_rows = 1 + static_cast<int>(rng.below(max_rows));
    double start = 0.0;
    for (int r = 0; r < n_rows; ++r) {
      CountingProcessRow row;
      row.subject_id = "s" + std::to_string(i);
      row.start_km = start;
      row.stop_km = start + 0.1 + 3.0 * rng.uniform();
      row.event = rng.bernoulli(0.6);
      // last row of the dataset must keep at least one event overall
      for (int c = 0; c < p; ++c) row.covariates.push_back(rng.normal());
      start = row.stop_km;
      any_event = any_event || row.event;
      d.rows.push_back(std::move(row));
    }
  }
  if (!any_event) d.rows.front().event = true;
  int j = 1;
  std::string subject;
  for (auto& row : d.rows) {
    if (row.subject_id != subject) {
      subject = row.subject_id;
      j = 1;
    }
    row.event_index = j;
    if (row.event) ++j;
  }
  d.validate();
  return d;
}

Eigen::VectorXd random_beta(Rng& rng, int p) {
  Eigen::VectorXd beta(p);
  for (int c = 0; c < p; ++c) beta(c) = rng.uniform(-1.0, 1.0);
  return beta;
}

CountingProcessDataset single_covariate_rows(
    const std::vector<std::tuple<std::string, double, double, bool, double>>& rows) {
  CountingProcessDataset d;
  d.covariate_names = {"x1"};
  std::string subject;
  int j = 1;
  for (const auto& [id, start, stop, event, x] : rows) {
    if (id != subject) {
      subject = id;
      j = 1;
    }
    d.rows.push_back({id, j, start, stop, event, {x}});
    if (event) ++j;
  }
  d.validate();
  return d;
}

}  // namespace

TEST_CASE("partial likelihood matches the literal oracle on random data") {
  Rng rng(42);
  for (int rep = 0; rep < 25; ++rep) {
    const int p = 1 + static_cast<int>(rng.below(3));
    const CountingProcessDataset d = random_dataset(rng, 5, 4, p);
    const Eigen::VectorXd beta = random_beta(rng, p);
    const double got = cox::partial_loglik(d, beta);
    const double want = oracle_partial_loglik(d, beta);
    CHECK_THAT(got, Catch::Matchers::WithinAbs(want, 1e-12));
  }
}

TEST_CASE("beta = 0 collapses each event term to -log(risk-set size)") {
  const auto d = single_covariate_rows({{"a", 0.0, 1.0, true, 0.3},
                                        {"b", 0.0, 2.0, true, -0.2},
                                        {"c", 0.0, 3.0, true, 0.9}});
  const double got = cox::partial_loglik(d, Eigen::VectorXd::Zero(1));
  CHECK_THAT(got, Catch::Matchers::WithinAbs(-(std::log(3.0) + std::log(2.0) + std::log(1.0)),
                                             1e-12));
  CHECK_THAT(got, Catch::Matchers::WithinAbs(-1.791759469228055, 1e-9));
}

TEST_CASE("no event rows gives log-likelihood 0") {
  CountingProcessDataset d;
  d.covariate_names = {"x1"};
  d.rows = {{"a", 1, 0.0, 5.0, false, {1.0}}, {"b", 1, 0.0, 3.0, false, {-1.0}}};
  d.validate();
  Eigen::VectorXd beta(1);
  beta << 0.5;
  CHECK(cox::partial_loglik(d, beta) == 0.0);
}

TEST_CASE("specific 4-row toy dataset agrees with the direct-sum oracle") {
  const auto d = single_covariate_rows({{"a", 0.0, 1.5, true, 1.0},
                                        {"a", 1.5, 4.0, false, 1.0},
                                        {"b", 0.0, 2.5, true, 0.0},
                                        {"c", 0.0, 4.0, true, -0.5}});
  Eigen::VectorXd beta(1);
  beta << 0.5;
  CHECK_THAT(cox::partial_loglik(d, beta),
             Catch::Matchers::WithinAbs(oracle_partial_loglik(d, beta), 1e-12));
}

TEST_CASE("analytic score matches central finite differences") {
  Rng rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    const int p = 1 + static_cast<int>(rng.below(3));
    const CountingProcessDataset d = random_dataset(rng, 6, 4, p);
    const Eigen::VectorXd beta = random_beta(rng, p);
    const auto [grad, info] = cox::score_and_information(d, beta);
    const double h = 1e-6;
    for (int c = 0; c < p; ++c) {
      Eigen::VectorXd up = beta, down = beta;
      up(c) += h;
      down(c) -= h;
      const double fd = (cox::partial_loglik(d, up) - cox::partial_loglik(d, down)) / (2 * h);
      CHECK_THAT(grad(c), Catch::Matchers::WithinRel(fd, 1e-6) ||
                              Catch::Matchers::WithinAbs(fd, 1e-6));
    }
    // information is positive semidefinite
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info);
    CHECK(eig.eigenvalues().minCoeff() > -1e-10);
  }
}

TEST_CASE("gradient vanishes at the fitted optimum") {
  Rng rng(99);
  const CountingProcessDataset d = random_dataset(rng, 8, 4, 2);
  cox::FitOptions tight;
  tight.tol_beta = 1e-12;
  tight.tol_loglik = 0.0;
  tight.max_iterations = 50;
  const CoxFit fit = cox::fit(d, tight);
  REQUIRE(fit.converged);
  const auto [grad, info] = cox::score_and_information(d, fit.beta);
  CHECK(grad.cwiseAbs().maxCoeff() < 1e-8);
  CHECK(fit.loglik_at_end >= fit.loglik_at_start);
}

TEST_CASE("two-subject recurrent dataset has the closed-form optimum log(2)") {
  // Subject a (x=1) has 2 events, subject b (x=0) has 1; both span [0, 10].
  // Every risk set holds exactly one x=1 row and one x=0 row, so the score is
  // 2 - 3 e^b / (e^b + 1) and the optimum is b = log 2.
  const auto d = single_covariate_rows({{"a", 0.0, 2.0, true, 1.0},
                                        {"a", 2.0, 6.0, true, 1.0},
                                        {"a", 6.0, 10.0, false, 1.0},
                                        {"b", 0.0, 4.5, true, 0.0},
                                        {"b", 4.5, 10.0, false, 0.0}});
  const CoxFit fit = cox::fit(d);
  REQUIRE(fit.converged);
  CHECK_THAT(fit.beta(0), Catch::Matchers::WithinAbs(std::log(2.0), 1e-8));
}

TEST_CASE("duplicating every subject leaves the optimum unchanged (breslow)") {
  Rng rng(17);
  const CountingProcessDataset d = random_dataset(rng, 6, 3, 2);
  CountingProcessDataset doubled = d;
  for (const auto& row : d.rows) {
    CountingProcessRow copy = row;
    copy.subject_id = row.subject_id + "_dup";
    doubled.rows.push_back(std::move(copy));
  }
  std::stable_sort(doubled.rows.begin(), doubled.rows.end(),
                   [](const CountingProcessRow& a, const CountingProcessRow& b) {
                     return a.subject_id < b.subject_id;
                   });
  doubled.validate();
  cox::FitOptions options;
  options.ties = cox::Ties::breslow;
  const CoxFit fit1 = cox::fit(d, options);
  const CoxFit fit2 = cox::fit(doubled, options);
  REQUIRE(fit1.converged);
  REQUIRE(fit2.converged);
  CHECK((fit1.beta - fit2.beta).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("covariate scaling and shifting behave like a partial likelihood") {
  Rng rng(23);
  const CountingProcessDataset d = random_dataset(rng, 8, 4, 2);
  const CoxFit base = cox::fit(d);
  REQUIRE(base.converged);

  SECTION("scaling a column by c scales its coefficient by 1/c") {
    const double c = 2.5;
    CountingProcessDataset scaled = d;
    for (auto& row : scaled.rows) row.covariates[0] *= c;
    const CoxFit fit = cox::fit(scaled);
    REQUIRE(fit.converged);
    CHECK_THAT(fit.beta(0), Catch::Matchers::WithinAbs(base.beta(0) / c, 1e-8));
    CHECK_THAT(fit.beta(1), Catch::Matchers::WithinAbs(base.beta(1), 1e-8));
    CHECK_THAT(fit.loglik_at_end, Catch::Matchers::WithinAbs(base.loglik_at_end, 1e-8));
  }

  SECTION("adding a constant to a column leaves coefficients unchanged") {
    CountingProcessDataset shifted = d;
    for (auto& row : shifted.rows) row.covariates[1] += 7.0;
    const CoxFit fit = cox::fit(shifted);
    REQUIRE(fit.converged);
    CHECK((fit.beta - base.beta).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("log partial likelihood is midpoint-concave") {
  Rng rng(31);
  for (int rep = 0; rep < 20; ++rep) {
    const CountingProcessDataset d = random_dataset(rng, 5, 4, 2);
    const Eigen::VectorXd b1 = random_beta(rng, 2);
    const Eigen::VectorXd b2 = random_beta(rng, 2);
    const double mid = cox::partial_loglik(d, (b1 + b2) / 2.0);
    const double chord =
        (cox::partial_loglik(d, b1) + cox::partial_loglik(d, b2)) / 2.0;
    CHECK(mid >= chord - 1e-10);
  }
}

TEST_CASE("tie handling: efron and breslow match hand formulas and coincide tie-free") {
  SECTION("tied deaths, hand-evaluated denominators") {
    // a and b die at km 1 (x 1 and 0), c censored at 2 with x 0.5
    const auto d = single_covariate_rows({{"a", 0.0, 1.0, true, 1.0},
                                          {"b", 0.0, 1.0, true, 0.0},
                                          {"c", 0.0, 2.0, false, 0.5}});
    Eigen::VectorXd beta(1);
    beta << 0.3;
    const double s0 = std::exp(0.3) + 1.0 + std::exp(0.15);
    const double dead = std::exp(0.3) + 1.0;
    const double breslow_want = 0.3 - 2.0 * std::log(s0);
    const double efron_want = 0.3 - std::log(s0) - std::log(s0 - dead / 2.0);
    CHECK_THAT(cox::partial_loglik(d, beta, cox::Ties::breslow),
               Catch::Matchers::WithinAbs(breslow_want, 1e-12));
    CHECK_THAT(cox::partial_loglik(d, beta, cox::Ties::efron),
               Catch::Matchers::WithinAbs(efron_want, 1e-12));
  }

  SECTION("tie-free data: identical fits") {
    Rng rng(5);
    const CountingProcessDataset d = random_dataset(rng, 8, 4, 2);
    cox::FitOptions efron, breslow;
    breslow.ties = cox::Ties::breslow;
    const CoxFit f1 = cox::fit(d, efron);
    const CoxFit f2 = cox::fit(d, breslow);
    CHECK((f1.beta - f2.beta).cwiseAbs().maxCoeff() < 1e-10);
    CHECK_THAT(f1.loglik_at_end, Catch::Matchers::WithinAbs(f2.loglik_at_end, 1e-10));
    CHECK((f1.robust_covariance - f2.robust_covariance).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("robust sandwich equals the explicit per-subject oracle") {
  // one event row per subject, no censoring rows
  Rng rng(61);
  CountingProcessDataset d;
  d.covariate_names = {"x1", "x2"};
  for (int i = 0; i < 30; ++i) {
    CountingProcessRow row;
    row.subject_id = "s" + std::to_string(i);
    row.event_index = 1;
    row.start_km = 0.0;
    row.stop_km = 0.5 + 10.0 * rng.uniform();
    row.event = true;
    row.covariates = {rng.normal(), rng.bernoulli(0.5) ? 1.0 : 0.0};
    d.rows.push_back(std::move(row));
  }
  d.validate();
  const CoxFit fit = cox::fit(d);
  REQUIRE(fit.converged);

  // oracle: per-subject score residual accumulated directly from the formula
  // U_l = delta_l (x_l - xbar(t_l)) - sum over events t_k in (start,stop] of
  //       exp(eta_l)/S0(t_k) * (x_l - xbar(t_k))
  const Eigen::Index p = 2;
  const auto n = static_cast<Eigen::Index>(d.rows.size());
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd eta(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < p; ++c) x(i, c) = d.rows[i].covariates[c];
    eta(i) = x.row(i) * fit.beta;
  }
  Eigen::MatrixXd residuals = Eigen::MatrixXd::Zero(n, p);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (!d.rows[k].event) continue;
    const double t = d.rows[k].stop_km;
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    for (Eigen::Index l = 0; l < n; ++l) {
      if (!(d.rows[l].start_km < t && t <= d.rows[l].stop_km)) continue;
      s0 += std::exp(eta(l));
      s1 += std::exp(eta(l)) * x.row(l).transpose();
    }
    const Eigen::VectorXd xbar = s1 / s0;
    residuals.row(k) += x.row(k) - xbar.transpose();
    for (Eigen::Index l = 0; l < n; ++l) {
      if (!(d.rows[l].start_km < t && t <= d.rows[l].stop_km)) continue;
      residuals.row(l) -=
          std::exp(eta(l)) / s0 * (x.row(l) - xbar.transpose());
    }
  }
  // each row is one subject here, so the meat is just U'U
  const Eigen::MatrixXd meat = residuals.transpose() * residuals;
  const Eigen::MatrixXd want = fit.model_covariance * meat * fit.model_covariance;
  CHECK((fit.robust_covariance - want).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("simulation recovery: estimates land within 3 robust SE") {
  Rng rng(2024);
  sim::CoxSimOptions options;
  options.n_subjects = 400;
  options.trip_length_km = 200.0;
  options.baseline_hazard = 0.01;
  options.beta.resize(2);
  options.beta << 0.5, -0.3;
  const CountingProcessDataset d = sim::simulate_cox(options, rng);
  const CoxFit fit = cox::fit(d);
  REQUIRE(fit.converged);
  for (int c = 0; c < 2; ++c) {
    const double se = std::sqrt(fit.robust_covariance(c, c));
    CHECK(std::abs(fit.beta(c) - options.beta(c)) < 3.0 * se);
  }
}

TEST_CASE("singular information names the dependent columns") {
  Rng rng(3);
  CountingProcessDataset d;
  d.covariate_names = {"temp", "temp_copy"};
  for (int i = 0; i < 10; ++i) {
    const double x = rng.normal();
    d.rows.push_back({"s" + std::to_string(i), 1, 0.0, 1.0 + rng.uniform(), true, {x, 2.0 * x}});
  }
  d.validate();
  CHECK_THROWS_WITH(cox::fit(d), Catch::Matchers::ContainsSubstring("singular") &&
                                     (Catch::Matchers::ContainsSubstring("temp_copy") ||
                                      Catch::Matchers::ContainsSubstring("temp")));
}

TEST_CASE("non-convergence is reported with the trace instead of throwing") {
  // monotone likelihood: the event subject has the larger covariate, so the
  // optimum runs to infinity
  const auto d = single_covariate_rows(
      {{"a", 0.0, 1.0, true, 1.0}, {"b", 0.0, 2.0, false, 0.0}});
  cox::FitOptions options;
  options.max_iterations = 5;
  const CoxFit fit = cox::fit(d, options);
  CHECK_FALSE(fit.converged);
  CHECK(fit.n_iterations == 5);
  CHECK(fit.loglik_trace.size() == 6);
  CHECK_THROWS_AS(cox::hazard_ratios(fit, {"x1"}), ValidationError);
}

TEST_CASE("hazard ratio table reproduces the analytic coef -> HR mapping") {
  CoxFit fit;
  fit.beta.resize(3);
  fit.beta << -0.19, 0.025, 0.0;
  fit.model_covariance = Eigen::MatrixXd::Identity(3, 3);
  fit.robust_covariance = Eigen::MatrixXd::Identity(3, 3) * 0.0025;
  fit.converged = true;
  const auto rows = cox::hazard_ratios(fit, {"a", "b", "c"});
  REQUIRE(rows.size() == 3);
  // within one unit of the last reported digit (published values are rounded)
  CHECK_THAT(rows[0].hazard_ratio, Catch::Matchers::WithinAbs(0.83, 0.01));
  CHECK_THAT(rows[1].hazard_ratio, Catch::Matchers::WithinAbs(1.026, 0.001));
  CHECK(rows[2].hazard_ratio == 1.0);
  CHECK_THAT(rows[0].z, Catch::Matchers::WithinAbs(-0.19 / 0.05, 1e-12));
}

TEST_CASE("heaviside expansion codes g(t) and splits straddling rows") {
  CountingProcessDataset d;
  d.covariate_names = {"temp"};
  d.rows = {{"a", 1, 0.0, 100.0, true, {-4.0}},
            {"a", 2, 100.0, 140.0, false, {-4.0}},
            {"a", 2, 140.0, 160.0, true, {-4.0}},
            {"a", 3, 160.0, 200.0, true, {-4.0}}};
  d.validate();
  const std::vector<cox::HeavisideSpec> specs = {{0, 150.0}};
  const CountingProcessDataset out = cox::heaviside_expand(d, specs);

  REQUIRE(out.covariate_names.size() == 2);
  CHECK(out.covariate_names[1] == "temp:gt150");
  REQUIRE(out.rows.size() == 5);

  // stop 100 <= 150 -> 0
  CHECK(out.rows[0].stop_km == 100.0);
  CHECK(out.rows[0].covariates[1] == 0.0);
  // straddling row split at 150
  CHECK(out.rows[2].start_km == 140.0);
  CHECK(out.rows[2].stop_km == 150.0);
  CHECK_FALSE(out.rows[2].event);
  CHECK(out.rows[2].covariates[1] == 0.0);
  CHECK(out.rows[3].start_km == 150.0);
  CHECK(out.rows[3].stop_km == 160.0);
  CHECK(out.rows[3].event);
  CHECK(out.rows[3].covariates[1] == -4.0);
  // stop 200 > 150 -> carries the covariate value
  CHECK(out.rows[4].stop_km == 200.0);
  CHECK(out.rows[4].covariates[1] == -4.0);

  // expansion keeps the partition + event_index invariants
  CHECK_NOTHROW(out.validate());

  SECTION("bad spec is rejected") {
    CHECK_THROWS_AS(cox::heaviside_expand(d, {{1, 150.0}}), ValidationError);
    CHECK_THROWS_AS(cox::heaviside_expand(d, {{0, 0.0}}), ValidationError);
  }
}
