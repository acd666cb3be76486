#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "raildelay/domain.hpp"
#include "raildelay/errors.hpp"
#include "raildelay/io.hpp"
#include "raildelay/log.hpp"
#include "raildelay/pipeline.hpp"

namespace raildelay::pipeline {

struct PrepareOptions {
  int event_threshold_min = 1;  // smallest running-time increment that counts as an event
  int delay_threshold_min = 5;  // arrival lateness that makes a spot "delayed"
};

struct PrepareResult {
  CountingProcessDataset counting;
  PanelStateDataset panel;
  std::vector<std::string> log_lines;  // imputations and dropped trips, in order
  std::size_t n_trips_used = 0;
  std::size_t n_trips_dropped = 0;
  std::size_t n_imputed = 0;
};

namespace detail {

inline std::string log_line(const ImputationEntry& e) {
  return "imputed," + e.subject_id + "," + e.spot_id + ",class=" +
         std::to_string(static_cast<int>(e.missing_class)) + "," + e.field + "," +
         format_datetime(e.imputed);
}

}  // namespace detail

// Full pipeline over in-memory inputs: impute every trip, match weather at
// each spot's (imputed) arrival time, aggregate section covariates, derive
// events and states. Trips without an imputation anchor (missing first
// departure or origin arrival) are dropped and logged; any other data defect
// is an error.
inline PrepareResult prepare(const std::vector<TripRecord>& trips,
                             const std::vector<WeatherSample>& weather,
                             const PrepareOptions& options = {}) {
  if (trips.empty()) throw DataError("no trips in input");
  const WeatherIndex index(weather);

  PrepareResult result;
  result.counting.covariate_names = weather_covariate_names();
  result.panel.covariate_names = weather_covariate_names();

  for (const TripRecord& raw : trips) {
    raw.validate();
    if (!raw.spots.front().actual_departure) {
      result.log_lines.push_back("dropped," + raw.subject_id() +
                                 ",first actual departure missing");
      log::warn("dropping trip " + raw.subject_id() + ": first actual departure missing");
      ++result.n_trips_dropped;
      continue;
    }
    if (!raw.spots.front().actual_arrival) {
      result.log_lines.push_back("dropped," + raw.subject_id() +
                                 ",first actual arrival missing");
      log::warn("dropping trip " + raw.subject_id() + ": first actual arrival missing");
      ++result.n_trips_dropped;
      continue;
    }

    std::vector<ImputationEntry> entries;
    const TripRecord trip = locf_impute(raw, &entries);
    for (const auto& e : entries) result.log_lines.push_back(detail::log_line(e));
    result.n_imputed += entries.size();

    std::vector<WeatherSample> spot_weather;
    spot_weather.reserve(trip.spots.size());
    for (const auto& spot : trip.spots)
      spot_weather.push_back(match_spot_weather(
          spot.lat, spot.lon, *spot.actual_arrival, index,
          "'" + spot.spot_id + "' of trip '" + trip.subject_id() + "'"));

    std::vector<SectionCovariates> covs;
    covs.reserve(trip.spots.size() - 1);
    for (std::size_t k = 1; k < trip.spots.size(); ++k)
      covs.push_back(section_covariates(spot_weather[k - 1], spot_weather[k]));

    for (auto& row : build_counting_process(trip, covs, options.event_threshold_min))
      result.counting.rows.push_back(std::move(row));
    for (auto& obs : build_panel_states(trip, covs, options.delay_threshold_min))
      result.panel.observations.push_back(std::move(obs));
    ++result.n_trips_used;
  }

  if (result.n_trips_used == 0) throw DataError("no usable trips after dropping");
  result.counting.validate();
  result.panel.validate();
  return result;
}

inline PrepareResult prepare_files(const std::string& trip_path,
                                   const std::string& weather_path,
                                   const PrepareOptions& options = {}) {
  return prepare(io::read_trips(trip_path), io::read_weather(weather_path), options);
}

inline void write_log_lines(const std::vector<std::string>& lines, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  for (const auto& line : lines) out << line << '\n';
  out.close();
  if (!out) throw DataError("failed writing '" + path + "'");
}

}  // namespace raildelay::pipeline
