#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "raildelay/errors.hpp"
#include "raildelay/minute_time.hpp"

namespace raildelay {

using json = nlohmann::json;

// One measuring spot within a trip. Planned times are always present; actual
// times may be missing until imputation. lat/lon locate the spot for weather
// matching.
struct SpotObservation {
  std::string spot_id;
  int spot_index = 0;           // 0-based position along the line
  double cumulative_km = 0.0;   // from origin
  double section_km = 0.0;      // length of the section ending here; 0 at origin
  double lat = 0.0;
  double lon = 0.0;
  MinuteTime planned_arrival;
  MinuteTime planned_departure;
  std::optional<MinuteTime> actual_arrival;
  std::optional<MinuteTime> actual_departure;

  void validate() const {
    if (spot_index < 0)
      throw ValidationError("SpotObservation: spot_index must be >= 0");
    if (!(cumulative_km >= 0.0))
      throw ValidationError("SpotObservation: cumulative_km must be >= 0");
    if (spot_index > 0 && !(section_km > 0.0))
      throw ValidationError("SpotObservation '" + spot_id +
                            "': section_km must be > 0 for a non-origin spot");
    if (planned_departure < planned_arrival)
      throw ValidationError("SpotObservation '" + spot_id +
                            "': planned departure precedes planned arrival");
  }
};

struct TripRecord {
  std::string train_number;
  std::int64_t departure_date_days = 0;  // days since epoch
  std::string train_type;
  std::vector<SpotObservation> spots;

  std::string subject_id() const {
    return train_number + "_" + format_date(departure_date_days);
  }

  double end_km() const { return spots.back().cumulative_km; }

  bool fully_imputed() const {
    for (const auto& s : spots)
      if (!s.actual_arrival || !s.actual_departure) return false;
    return true;
  }

  void validate(bool require_imputed = false) const {
    if (spots.size() < 2)
      throw ValidationError("TripRecord '" + train_number + "': needs at least 2 spots");
    if (spots.front().cumulative_km != 0.0)
      throw ValidationError("TripRecord '" + train_number +
                            "': first spot must have cumulative_km = 0");
    int prev_index = -1;
    double prev_km = -1.0;
    for (std::size_t k = 0; k < spots.size(); ++k) {
      const auto& s = spots[k];
      s.validate();
      if (s.spot_index <= prev_index)
        throw ValidationError("TripRecord '" + train_number +
                              "': spot_index must be strictly increasing");
      if (s.cumulative_km < prev_km)
        throw ValidationError("TripRecord '" + train_number +
                              "': cumulative_km must be non-decreasing");
      if (k > 0) {
        if (std::abs(s.cumulative_km - spots[k - 1].cumulative_km - s.section_km) > 1e-9)
          throw ValidationError("TripRecord '" + train_number + "', spot '" + s.spot_id +
                                "': cumulative_km must advance by section_km");
        if (s.planned_arrival < spots[k - 1].planned_departure)
          throw ValidationError("TripRecord '" + train_number + "', spot '" + s.spot_id +
                                "': planned arrival precedes previous planned departure");
      }
      prev_index = s.spot_index;
      prev_km = s.cumulative_km;
    }
    if (require_imputed && !fully_imputed())
      throw ValidationError("TripRecord '" + train_number +
                            "': actual times still missing after imputation");
  }
};

struct WeatherSample {
  double grid_lat = 0.0;
  double grid_lon = 0.0;
  MinuteTime valid_time;   // on the hour
  double temperature_c = 0.0;
  double humidity_pct = 0.0;
  double snow_depth_m = 0.0;
  double icing_mm = 0.0;

  void validate() const {
    if (valid_time.minute_of_hour() != 0)
      throw ValidationError("WeatherSample: valid_time must be on the hour (got " +
                            format_datetime(valid_time) + ")");
    if (!(humidity_pct >= 0.0 && humidity_pct <= 100.0))
      throw ValidationError("WeatherSample: humidity_pct must lie in [0,100]");
    if (!(snow_depth_m >= 0.0))
      throw ValidationError("WeatherSample: snow_depth_m must be >= 0");
    if (!(icing_mm >= 0.0))
      throw ValidationError("WeatherSample: icing_mm must be >= 0");
  }
};

// Section-mean weather plus the dichotomized icing indicator. icing_flag is 0
// exactly when the section-mean icing is 0.
struct SectionCovariates {
  double temperature_c = 0.0;
  double humidity_pct = 0.0;
  double snow_depth_m = 0.0;
  double mean_icing_mm = 0.0;
  int icing_flag = 0;

  void validate() const {
    if (icing_flag != 0 && icing_flag != 1)
      throw ValidationError("SectionCovariates: icing_flag must be 0 or 1");
    if ((icing_flag == 0) != (mean_icing_mm == 0.0))
      throw ValidationError(
          "SectionCovariates: icing_flag must be 0 iff section-mean icing is exactly 0");
  }
};

// One (start, stop] interval on the distance axis in counting-process layout.
struct CountingProcessRow {
  std::string subject_id;
  int event_index = 1;  // j; increments by 1 after each event row
  double start_km = 0.0;
  double stop_km = 0.0;
  bool event = false;  // 1 = cumulative-delay event at stop_km
  std::vector<double> covariates;

  void validate() const {
    if (event_index < 1)
      throw ValidationError("CountingProcessRow: event_index must be >= 1");
    if (!(start_km < stop_km))
      throw ValidationError("CountingProcessRow (subject '" + subject_id +
                            "'): start_km must be < stop_km");
  }
};

struct PanelObservation {
  std::string subject_id;
  double obs_time_min = 0.0;  // minutes since the trip's first scheduled departure
  int state = 1;              // 1 = non-delayed, 2 = delayed
  std::vector<double> covariates;

  void validate(int n_states = 2) const {
    if (state < 1 || state > n_states)
      throw ValidationError("PanelObservation (subject '" + subject_id +
                            "'): state must lie in {1.." + std::to_string(n_states) + "}");
  }
};

struct CountingProcessDataset {
  std::vector<std::string> covariate_names;
  std::vector<CountingProcessRow> rows;

  std::size_t n_covariates() const { return covariate_names.size(); }

  // Per-subject rows must partition [0, trip_end_km] in order and event_index
  // must advance by one after every event row.
  void validate() const {
    std::string subject;
    double expect_start = 0.0;
    int expect_index = 1;
    for (const auto& row : rows) {
      row.validate();
      if (row.covariates.size() != covariate_names.size())
        throw ValidationError("CountingProcessDataset: row of subject '" + row.subject_id +
                              "' has " + std::to_string(row.covariates.size()) +
                              " covariates, expected " +
                              std::to_string(covariate_names.size()));
      if (row.subject_id != subject) {
        subject = row.subject_id;
        expect_start = 0.0;
        expect_index = 1;
      }
      if (row.start_km != expect_start)
        throw ValidationError("CountingProcessDataset: subject '" + subject +
                              "' rows do not partition the km axis at km " +
                              std::to_string(row.start_km));
      if (row.event_index != expect_index)
        throw ValidationError("CountingProcessDataset: subject '" + subject +
                              "' event_index must increment by 1 at each event row");
      expect_start = row.stop_km;
      if (row.event) ++expect_index;
    }
  }
};

struct PanelStateDataset {
  std::vector<std::string> covariate_names;
  std::vector<PanelObservation> observations;  // grouped by subject, time-ordered

  void validate(int n_states = 2) const {
    std::string subject;
    double prev_time = 0.0;
    for (const auto& obs : observations) {
      obs.validate(n_states);
      if (obs.covariates.size() != covariate_names.size())
        throw ValidationError("PanelStateDataset: observation of subject '" +
                              obs.subject_id + "' has wrong covariate count");
      if (obs.subject_id != subject) {
        subject = obs.subject_id;
      } else if (!(obs.obs_time_min > prev_time)) {
        throw ValidationError("PanelStateDataset: subject '" + subject +
                              "' obs_time_min must be strictly increasing");
      }
      prev_time = obs.obs_time_min;
    }
  }
};

namespace detail {

inline void require_symmetric(const Eigen::MatrixXd& m, const char* what,
                              double tol = 1e-12) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = i + 1; j < m.cols(); ++j)
      if (std::abs(m(i, j) - m(j, i)) > tol)
        throw ValidationError(std::string(what) + ": matrix must be symmetric within " +
                              std::to_string(tol));
}

}  // namespace detail

// Result of a Cox partial-likelihood fit. beta holds the main-effect and
// heaviside-interaction columns jointly, in dataset column order.
struct CoxFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd model_covariance;   // inverse information at beta
  Eigen::MatrixXd robust_covariance;  // sandwich, clustered by subject
  double loglik_at_start = 0.0;
  double loglik_at_end = 0.0;
  std::int64_t n_events = 0;
  std::int64_t n_subjects = 0;
  bool converged = false;
  int n_iterations = 0;
  std::vector<double> loglik_trace;

  void validate() const {
    detail::require_symmetric(model_covariance, "CoxFit.model_covariance");
    detail::require_symmetric(robust_covariance, "CoxFit.robust_covariance");
    if (loglik_at_end < loglik_at_start - 1e-9 * (std::abs(loglik_at_start) + 1.0))
      throw ValidationError("CoxFit: loglik_at_end must be >= loglik_at_start");
  }
};

// Result of a continuous-time Markov chain fit. Estimation scale is
// (log q0_rs, beta_rs); covariance refers to that parameter vector.
struct MsmFit {
  int n_states = 2;
  std::vector<std::pair<int, int>> transitions;      // (r, s), 1-based, fit order
  Eigen::MatrixXd q0;                                // baseline intensity matrix
  std::vector<Eigen::VectorXd> beta_rs;              // per transition, fit order
  Eigen::MatrixXd covariance;                        // joint, estimation scale
  bool covariance_valid = false;
  double loglik = 0.0;
  bool converged = false;
  int n_iterations = 0;
  double gradient_norm = 0.0;

  void validate() const {
    if (q0.rows() != n_states || q0.cols() != n_states)
      throw ValidationError("MsmFit: q0 must be n_states x n_states");
    for (int r = 0; r < n_states; ++r) {
      double row_sum = 0.0;
      for (int s = 0; s < n_states; ++s) {
        row_sum += q0(r, s);
        if (r != s && q0(r, s) < 0.0)
          throw ValidationError("MsmFit: off-diagonal intensities must be >= 0");
      }
      if (q0(r, r) > 0.0)
        throw ValidationError("MsmFit: diagonal intensities must be <= 0");
      if (std::abs(row_sum) > 1e-10)
        throw ValidationError("MsmFit: rows of q0 must sum to 0 within 1e-10");
    }
    if (covariance_valid)
      detail::require_symmetric(covariance, "MsmFit.covariance", 1e-9);
  }
};

// ---- JSON encoding (round-trip exact; decode re-validates) ----

inline void to_json(json& j, const MinuteTime& t) { j = t.minutes; }
inline void from_json(const json& j, MinuteTime& t) { t.minutes = j.get<std::int64_t>(); }

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto n_rows = static_cast<Eigen::Index>(j.size());
  if (n_rows == 0) return Eigen::MatrixXd(0, 0);
  const auto n_cols = static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(n_rows, n_cols);
  for (Eigen::Index i = 0; i < n_rows; ++i)
    for (Eigen::Index k = 0; k < n_cols; ++k) m(i, k) = j.at(i).at(k).get<double>();
  return m;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

inline Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j.at(i).get<double>();
  return v;
}

inline void to_json(json& j, const SpotObservation& s) {
  j = json{{"spot_id", s.spot_id},
           {"spot_index", s.spot_index},
           {"cumulative_km", s.cumulative_km},
           {"section_km", s.section_km},
           {"lat", s.lat},
           {"lon", s.lon},
           {"planned_arrival", s.planned_arrival},
           {"planned_departure", s.planned_departure},
           {"actual_arrival", s.actual_arrival ? json(*s.actual_arrival) : json(nullptr)},
           {"actual_departure",
            s.actual_departure ? json(*s.actual_departure) : json(nullptr)}};
}

inline void from_json(const json& j, SpotObservation& s) {
  j.at("spot_id").get_to(s.spot_id);
  j.at("spot_index").get_to(s.spot_index);
  j.at("cumulative_km").get_to(s.cumulative_km);
  j.at("section_km").get_to(s.section_km);
  j.at("lat").get_to(s.lat);
  j.at("lon").get_to(s.lon);
  j.at("planned_arrival").get_to(s.planned_arrival);
  j.at("planned_departure").get_to(s.planned_departure);
  s.actual_arrival = j.at("actual_arrival").is_null()
                         ? std::nullopt
                         : std::optional<MinuteTime>(j.at("actual_arrival").get<MinuteTime>());
  s.actual_departure =
      j.at("actual_departure").is_null()
          ? std::nullopt
          : std::optional<MinuteTime>(j.at("actual_departure").get<MinuteTime>());
  s.validate();
}

inline void to_json(json& j, const TripRecord& t) {
  j = json{{"train_number", t.train_number},
           {"departure_date_days", t.departure_date_days},
           {"train_type", t.train_type},
           {"spots", t.spots}};
}

inline void from_json(const json& j, TripRecord& t) {
  j.at("train_number").get_to(t.train_number);
  j.at("departure_date_days").get_to(t.departure_date_days);
  j.at("train_type").get_to(t.train_type);
  j.at("spots").get_to(t.spots);
  t.validate();
}

inline void to_json(json& j, const WeatherSample& w) {
  j = json{{"grid_lat", w.grid_lat},   {"grid_lon", w.grid_lon},
           {"valid_time", w.valid_time}, {"temperature_c", w.temperature_c},
           {"humidity_pct", w.humidity_pct}, {"snow_depth_m", w.snow_depth_m},
           {"icing_mm", w.icing_mm}};
}

inline void from_json(const json& j, WeatherSample& w) {
  j.at("grid_lat").get_to(w.grid_lat);
  j.at("grid_lon").get_to(w.grid_lon);
  j.at("valid_time").get_to(w.valid_time);
  j.at("temperature_c").get_to(w.temperature_c);
  j.at("humidity_pct").get_to(w.humidity_pct);
  j.at("snow_depth_m").get_to(w.snow_depth_m);
  j.at("icing_mm").get_to(w.icing_mm);
  w.validate();
}

inline void to_json(json& j, const SectionCovariates& c) {
  j = json{{"temperature_c", c.temperature_c},
           {"humidity_pct", c.humidity_pct},
           {"snow_depth_m", c.snow_depth_m},
           {"mean_icing_mm", c.mean_icing_mm},
           {"icing_flag", c.icing_flag}};
}

inline void from_json(const json& j, SectionCovariates& c) {
  j.at("temperature_c").get_to(c.temperature_c);
  j.at("humidity_pct").get_to(c.humidity_pct);
  j.at("snow_depth_m").get_to(c.snow_depth_m);
  j.at("mean_icing_mm").get_to(c.mean_icing_mm);
  j.at("icing_flag").get_to(c.icing_flag);
  c.validate();
}

inline void to_json(json& j, const CountingProcessRow& r) {
  j = json{{"subject_id", r.subject_id}, {"event_index", r.event_index},
           {"start_km", r.start_km},     {"stop_km", r.stop_km},
           {"event", r.event},           {"covariates", r.covariates}};
}

inline void from_json(const json& j, CountingProcessRow& r) {
  j.at("subject_id").get_to(r.subject_id);
  j.at("event_index").get_to(r.event_index);
  j.at("start_km").get_to(r.start_km);
  j.at("stop_km").get_to(r.stop_km);
  j.at("event").get_to(r.event);
  j.at("covariates").get_to(r.covariates);
  r.validate();
}

inline void to_json(json& j, const PanelObservation& p) {
  j = json{{"subject_id", p.subject_id},
           {"obs_time_min", p.obs_time_min},
           {"state", p.state},
           {"covariates", p.covariates}};
}

inline void from_json(const json& j, PanelObservation& p) {
  j.at("subject_id").get_to(p.subject_id);
  j.at("obs_time_min").get_to(p.obs_time_min);
  j.at("state").get_to(p.state);
  j.at("covariates").get_to(p.covariates);
  p.validate(std::numeric_limits<int>::max());
}

inline void to_json(json& j, const CoxFit& f) {
  j = json{{"beta", vector_to_json(f.beta)},
           {"model_covariance", matrix_to_json(f.model_covariance)},
           {"robust_covariance", matrix_to_json(f.robust_covariance)},
           {"loglik_at_start", f.loglik_at_start},
           {"loglik_at_end", f.loglik_at_end},
           {"n_events", f.n_events},
           {"n_subjects", f.n_subjects},
           {"converged", f.converged},
           {"n_iterations", f.n_iterations},
           {"loglik_trace", f.loglik_trace}};
}

inline void from_json(const json& j, CoxFit& f) {
  f.beta = vector_from_json(j.at("beta"));
  f.model_covariance = matrix_from_json(j.at("model_covariance"));
  f.robust_covariance = matrix_from_json(j.at("robust_covariance"));
  j.at("loglik_at_start").get_to(f.loglik_at_start);
  j.at("loglik_at_end").get_to(f.loglik_at_end);
  j.at("n_events").get_to(f.n_events);
  j.at("n_subjects").get_to(f.n_subjects);
  j.at("converged").get_to(f.converged);
  j.at("n_iterations").get_to(f.n_iterations);
  j.at("loglik_trace").get_to(f.loglik_trace);
  f.validate();
}

inline void to_json(json& j, const MsmFit& f) {
  json trans = json::array();
  for (const auto& [r, s] : f.transitions) trans.push_back(json::array({r, s}));
  json betas = json::array();
  for (const auto& b : f.beta_rs) betas.push_back(vector_to_json(b));
  j = json{{"n_states", f.n_states},
           {"transitions", trans},
           {"q0", matrix_to_json(f.q0)},
           {"beta_rs", betas},
           {"covariance", matrix_to_json(f.covariance)},
           {"covariance_valid", f.covariance_valid},
           {"loglik", f.loglik},
           {"converged", f.converged},
           {"n_iterations", f.n_iterations},
           {"gradient_norm", f.gradient_norm}};
}

inline void from_json(const json& j, MsmFit& f) {
  j.at("n_states").get_to(f.n_states);
  f.transitions.clear();
  for (const auto& t : j.at("transitions"))
    f.transitions.emplace_back(t.at(0).get<int>(), t.at(1).get<int>());
  f.q0 = matrix_from_json(j.at("q0"));
  f.beta_rs.clear();
  for (const auto& b : j.at("beta_rs")) f.beta_rs.push_back(vector_from_json(b));
  f.covariance = matrix_from_json(j.at("covariance"));
  j.at("covariance_valid").get_to(f.covariance_valid);
  j.at("loglik").get_to(f.loglik);
  j.at("converged").get_to(f.converged);
  j.at("n_iterations").get_to(f.n_iterations);
  j.at("gradient_norm").get_to(f.gradient_norm);
  f.validate();
}

}  // namespace raildelay
