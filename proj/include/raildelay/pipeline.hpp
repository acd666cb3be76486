#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "raildelay/domain.hpp"
#include "raildelay/errors.hpp"
#include "raildelay/log.hpp"
#include "raildelay/minute_time.hpp"

namespace raildelay::pipeline {

// Missing-time classes for a spot's actual times.
enum class MissingClass { none = 0, departure_only = 1, arrival_only = 2, both = 3 };

inline MissingClass classify_missing(const SpotObservation& spot) {
  const bool dep_missing = !spot.actual_departure.has_value();
  const bool arr_missing = !spot.actual_arrival.has_value();
  if (dep_missing && arr_missing) return MissingClass::both;
  if (dep_missing) return MissingClass::departure_only;
  if (arr_missing) return MissingClass::arrival_only;
  return MissingClass::none;
}

struct ImputationEntry {
  std::string subject_id;
  std::string spot_id;
  MissingClass missing_class = MissingClass::none;
  std::string field;  // "arrival" or "departure"
  MinuteTime imputed;
};

// Carry-forward imputation: a missing arrival becomes the latest departure
// plus the planned driving time of the previous section; a missing departure
// becomes the latest arrival plus the planned dwell time. Each imputed time
// becomes the new latest time. Idempotent.
inline TripRecord locf_impute(const TripRecord& trip,
                              std::vector<ImputationEntry>* entries = nullptr) {
  trip.validate();
  if (!trip.spots.front().actual_departure)
    throw DataError("trip '" + trip.subject_id() +
                    "': first actual departure is missing; imputation has no anchor");
  if (!trip.spots.front().actual_arrival)
    throw DataError("trip '" + trip.subject_id() +
                    "': first actual arrival is missing and the origin has no previous "
                    "section to derive it from");

  TripRecord out = trip;
  MinuteTime latest_arrival = *out.spots.front().actual_arrival;
  MinuteTime latest_departure = *out.spots.front().actual_departure;

  for (std::size_t k = 1; k < out.spots.size(); ++k) {
    SpotObservation& spot = out.spots[k];
    const SpotObservation& prev = out.spots[k - 1];
    const MissingClass cls = classify_missing(spot);

    if (!spot.actual_arrival) {
      const std::int64_t planned_drive = spot.planned_arrival - prev.planned_departure;
      spot.actual_arrival = latest_departure + planned_drive;
      if (entries)
        entries->push_back({trip.subject_id(), spot.spot_id, cls, "arrival",
                            *spot.actual_arrival});
    }
    latest_arrival = *spot.actual_arrival;

    if (!spot.actual_departure) {
      const std::int64_t planned_dwell = spot.planned_departure - spot.planned_arrival;
      spot.actual_departure = latest_arrival + planned_dwell;
      if (entries)
        entries->push_back({trip.subject_id(), spot.spot_id, cls, "departure",
                            *spot.actual_departure});
    }
    latest_departure = *spot.actual_departure;
  }
  out.validate(/*require_imputed=*/true);
  return out;
}

inline double great_circle_km(double lat1, double lon1, double lat2, double lon2) {
  constexpr double kEarthRadiusKm = 6371.0088;
  constexpr double kDegToRad = 0.017453292519943295;
  const double dlat = (lat2 - lat1) * kDegToRad;
  const double dlon = (lon2 - lon1) * kDegToRad;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  const double h =
      s1 * s1 + std::cos(lat1 * kDegToRad) * std::cos(lat2 * kDegToRad) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

// Hourly weather samples indexed by valid time.
class WeatherIndex {
public:
  explicit WeatherIndex(const std::vector<WeatherSample>& samples) {
    for (const auto& s : samples) {
      s.validate();
      by_hour_[s.valid_time.minutes].push_back(s);
    }
  }

  const std::vector<WeatherSample>* at_hour(MinuteTime hour) const {
    auto it = by_hour_.find(hour.minutes);
    return it == by_hour_.end() ? nullptr : &it->second;
  }

  std::size_t n_hours() const { return by_hour_.size(); }

private:
  std::map<std::int64_t, std::vector<WeatherSample>> by_hour_;
};

// Nearest grid point by great-circle distance at the rounded hour; exact
// distance ties go to the lexicographically smaller (lat, lon).
inline WeatherSample match_spot_weather(double lat, double lon, MinuteTime t,
                                        const WeatherIndex& weather,
                                        const std::string& spot_label) {
  const MinuteTime hour = round_to_hour(t);
  const auto* samples = weather.at_hour(hour);
  if (samples == nullptr || samples->empty())
    throw DataError("no weather sample at " + format_datetime(hour) + " needed by spot " +
                    spot_label);
  const WeatherSample* best = nullptr;
  double best_dist = 0.0;
  for (const auto& s : *samples) {
    const double d = great_circle_km(lat, lon, s.grid_lat, s.grid_lon);
    if (best == nullptr || d < best_dist ||
        (d == best_dist && (s.grid_lat < best->grid_lat ||
                            (s.grid_lat == best->grid_lat && s.grid_lon < best->grid_lon)))) {
      best = &s;
      best_dist = d;
    }
  }
  return *best;
}

// Arithmetic mean of the two endpoint samples; icing is dichotomized, 0 only
// when the section mean is exactly 0.
inline SectionCovariates section_covariates(const WeatherSample& a, const WeatherSample& b) {
  SectionCovariates c;
  c.temperature_c = (a.temperature_c + b.temperature_c) / 2.0;
  c.humidity_pct = (a.humidity_pct + b.humidity_pct) / 2.0;
  c.snow_depth_m = (a.snow_depth_m + b.snow_depth_m) / 2.0;
  c.mean_icing_mm = (a.icing_mm + b.icing_mm) / 2.0;
  c.icing_flag = (c.mean_icing_mm == 0.0) ? 0 : 1;
  c.validate();
  return c;
}

inline const std::vector<std::string>& weather_covariate_names() {
  static const std::vector<std::string> names = {"temp_c", "rh_pct", "snow_m", "icing"};
  return names;
}

inline std::vector<double> covariate_vector(const SectionCovariates& c) {
  return {c.temperature_c, c.humidity_pct, c.snow_depth_m,
          static_cast<double>(c.icing_flag)};
}

namespace detail {

inline void check_actual_monotone(const TripRecord& trip) {
  for (std::size_t k = 0; k < trip.spots.size(); ++k) {
    const auto& s = trip.spots[k];
    if (*s.actual_departure < *s.actual_arrival)
      throw DataError("trip '" + trip.subject_id() + "', spot '" + s.spot_id +
                      "': actual departure precedes actual arrival");
    if (k > 0 && *s.actual_arrival < *trip.spots[k - 1].actual_departure)
      throw DataError("trip '" + trip.subject_id() + "', spot '" + s.spot_id +
                      "': actual arrival precedes the previous actual departure");
  }
}

// Index of the section that contains km (sections are (cum[k-1], cum[k]]).
inline std::size_t section_containing(const TripRecord& trip, double km) {
  for (std::size_t k = 1; k < trip.spots.size(); ++k)
    if (km <= trip.spots[k].cumulative_km) return k - 1;
  return trip.spots.size() - 2;
}

}  // namespace detail

// Counting-process rows on the distance axis. A cumulative-delay event fires
// at a section's end spot when the running-time increment (actual minus
// planned, minutes) reaches event_threshold_min. Rows span consecutive
// event-or-trip-end boundaries; each row carries the covariates of the
// section containing its stop_km.
inline std::vector<CountingProcessRow> build_counting_process(
    const TripRecord& trip, const std::vector<SectionCovariates>& covs,
    int event_threshold_min) {
  if (event_threshold_min < 1) throw ValidationError("event_threshold_min must be >= 1");
  if (!trip.fully_imputed())
    throw DataError("trip '" + trip.subject_id() + "' is not fully imputed");
  if (covs.size() != trip.spots.size() - 1)
    throw DataError("trip '" + trip.subject_id() + "': expected " +
                    std::to_string(trip.spots.size() - 1) + " section covariates, got " +
                    std::to_string(covs.size()));
  detail::check_actual_monotone(trip);

  struct Boundary {
    double km;
    bool event;
  };
  std::vector<Boundary> boundaries;
  for (std::size_t k = 1; k < trip.spots.size(); ++k) {
    const auto& spot = trip.spots[k];
    const auto& prev = trip.spots[k - 1];
    const std::int64_t planned_run = spot.planned_arrival - prev.planned_departure;
    const std::int64_t actual_run = *spot.actual_arrival - *prev.actual_departure;
    const std::int64_t increment = actual_run - planned_run;
    if (increment >= event_threshold_min)
      boundaries.push_back({spot.cumulative_km, true});
  }
  const double end_km = trip.end_km();
  if (boundaries.empty() || boundaries.back().km != end_km)
    boundaries.push_back({end_km, false});

  std::vector<CountingProcessRow> rows;
  const std::string subject = trip.subject_id();
  double start = 0.0;
  int event_index = 1;
  for (const auto& b : boundaries) {
    CountingProcessRow row;
    row.subject_id = subject;
    row.event_index = event_index;
    row.start_km = start;
    row.stop_km = b.km;
    row.event = b.event;
    row.covariates = covariate_vector(covs[detail::section_containing(trip, b.km)]);
    row.validate();
    rows.push_back(std::move(row));
    start = b.km;
    if (b.event) ++event_index;
  }
  return rows;
}

// Panel snapshots at arrival instants: state 2 (delayed) when the arrival
// lateness exceeds delay_threshold_min, else 1. Observation clock is minutes
// since the trip's first scheduled departure. The origin spot has no section
// ending at it (hence no covariates) and is skipped. When two spots share an
// arrival minute only the later one is kept.
inline std::vector<PanelObservation> build_panel_states(
    const TripRecord& trip, const std::vector<SectionCovariates>& covs,
    int delay_threshold_min) {
  if (delay_threshold_min < 0) throw ValidationError("delay_threshold_min must be >= 0");
  if (!trip.fully_imputed())
    throw DataError("trip '" + trip.subject_id() + "' is not fully imputed");
  if (covs.size() != trip.spots.size() - 1)
    throw DataError("trip '" + trip.subject_id() + "': expected " +
                    std::to_string(trip.spots.size() - 1) + " section covariates, got " +
                    std::to_string(covs.size()));
  detail::check_actual_monotone(trip);

  const MinuteTime clock_origin = trip.spots.front().planned_departure;
  std::vector<PanelObservation> out;
  for (std::size_t k = 1; k < trip.spots.size(); ++k) {
    const auto& spot = trip.spots[k];
    PanelObservation obs;
    obs.subject_id = trip.subject_id();
    obs.obs_time_min = static_cast<double>(*spot.actual_arrival - clock_origin);
    const std::int64_t lateness = *spot.actual_arrival - spot.planned_arrival;
    obs.state = lateness > delay_threshold_min ? 2 : 1;
    obs.covariates = covariate_vector(covs[k - 1]);
    obs.validate();
    if (!out.empty() && out.back().obs_time_min == obs.obs_time_min)
      out.back() = obs;
    else
      out.push_back(std::move(obs));
  }
  return out;
}

}  // namespace raildelay::pipeline
