#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "raildelay/csv.hpp"
#include "raildelay/domain.hpp"
#include "raildelay/errors.hpp"
#include "raildelay/minute_time.hpp"
#include "raildelay/pipeline.hpp"

namespace raildelay::io {

// Trip file schema (see docs/data-formats.md): one row per measuring spot,
// grouped by (train_number, departure_date), ordered by spot_index. Dates are
// YYYY-MM-DD, times HH:MM, empty date+time pair = missing actual time.
inline const std::vector<std::string>& trip_columns() {
  static const std::vector<std::string> cols = {
      "train_number",         "departure_date",        "train_type",
      "spot_id",              "spot_index",            "lat",
      "lon",                  "section_km",            "planned_arrival_date",
      "planned_arrival_time", "planned_departure_date", "planned_departure_time",
      "actual_arrival_date",  "actual_arrival_time",   "actual_departure_date",
      "actual_departure_time"};
  return cols;
}

namespace detail {

inline std::optional<MinuteTime> parse_optional_time(const std::string& date,
                                                     const std::string& hhmm,
                                                     const std::string& context) {
  if (date.empty() && hhmm.empty()) return std::nullopt;
  if (date.empty() || hhmm.empty())
    throw DataError(context + ": date and time must be both present or both empty");
  return make_minute_time(date, hhmm);
}

inline void require_header(const csv::Table& table, const std::vector<std::string>& want) {
  if (table.header != want) {
    std::string got;
    for (const auto& h : table.header) got += (got.empty() ? "" : ",") + h;
    std::string expected;
    for (const auto& h : want) expected += (expected.empty() ? "" : ",") + h;
    throw DataError(table.path + ":1: header mismatch\n  expected: " + expected +
                    "\n  got:      " + got);
  }
}

}  // namespace detail

inline std::vector<TripRecord> read_trips(const std::string& path) {
  const csv::Table table = csv::read_file(path);
  detail::require_header(table, trip_columns());

  std::vector<TripRecord> trips;
  std::map<std::pair<std::string, std::int64_t>, std::size_t> index;
  for (const auto& row : table.rows) {
    const std::string context = path + ":" + std::to_string(row.line_number);
    const std::string train_number = row.at(0, path);
    const std::int64_t date_days = parse_date_days(row.at(1, path));

    const auto key = std::make_pair(train_number, date_days);
    auto it = index.find(key);
    if (it == index.end()) {
      TripRecord trip;
      trip.train_number = train_number;
      trip.departure_date_days = date_days;
      trip.train_type = row.at(2, path);
      trips.push_back(std::move(trip));
      it = index.emplace(key, trips.size() - 1).first;
    }
    TripRecord& trip = trips[it->second];

    SpotObservation spot;
    spot.spot_id = row.at(3, path);
    spot.spot_index = static_cast<int>(csv::parse_int(row.at(4, path), context));
    spot.lat = csv::parse_double(row.at(5, path), context);
    spot.lon = csv::parse_double(row.at(6, path), context);
    const std::string& section = row.at(7, path);
    spot.section_km = section.empty() ? 0.0 : csv::parse_double(section, context);
    try {
      spot.planned_arrival = make_minute_time(row.at(8, path), row.at(9, path));
      spot.planned_departure = make_minute_time(row.at(10, path), row.at(11, path));
      spot.actual_arrival =
          detail::parse_optional_time(row.at(12, path), row.at(13, path), context);
      spot.actual_departure =
          detail::parse_optional_time(row.at(14, path), row.at(15, path), context);
    } catch (const DataError& e) {
      throw DataError(context + ": " + e.what());
    }
    trip.spots.push_back(std::move(spot));
  }

  for (auto& trip : trips) {
    std::sort(trip.spots.begin(), trip.spots.end(),
              [](const SpotObservation& a, const SpotObservation& b) {
                return a.spot_index < b.spot_index;
              });
    double cumulative = 0.0;
    for (auto& spot : trip.spots) {
      cumulative += spot.section_km;
      spot.cumulative_km = cumulative;
    }
    trip.validate();
  }
  std::sort(trips.begin(), trips.end(), [](const TripRecord& a, const TripRecord& b) {
    return std::tie(a.train_number, a.departure_date_days) <
           std::tie(b.train_number, b.departure_date_days);
  });
  return trips;
}

inline const std::vector<std::string>& weather_columns() {
  static const std::vector<std::string> cols = {"lat",    "lon",        "valid_time",
                                                "t2_c",   "rh2_pct",    "snowdepth_m",
                                                "icing_mm"};
  return cols;
}

inline std::vector<WeatherSample> read_weather(const std::string& path) {
  const csv::Table table = csv::read_file(path);
  detail::require_header(table, weather_columns());
  std::vector<WeatherSample> samples;
  for (const auto& row : table.rows) {
    const std::string context = path + ":" + std::to_string(row.line_number);
    WeatherSample s;
    s.grid_lat = csv::parse_double(row.at(0, path), context);
    s.grid_lon = csv::parse_double(row.at(1, path), context);
    try {
      s.valid_time = parse_datetime(row.at(2, path));
      s.temperature_c = csv::parse_double(row.at(3, path), context);
      s.humidity_pct = csv::parse_double(row.at(4, path), context);
      s.snow_depth_m = csv::parse_double(row.at(5, path), context);
      s.icing_mm = csv::parse_double(row.at(6, path), context);
      s.validate();
    } catch (const std::runtime_error& e) {
      throw DataError(context + ": " + e.what());
    }
    samples.push_back(s);
  }
  return samples;
}

// Counting-process dataset file: 5 fixed columns then one column per covariate.
inline void write_counting_dataset(const CountingProcessDataset& dataset,
                                   const std::string& path) {
  csv::Writer out(path);
  std::vector<std::string> header = {"subject_id", "event_index", "start_km", "stop_km",
                                     "event"};
  header.insert(header.end(), dataset.covariate_names.begin(),
                dataset.covariate_names.end());
  out.write_row(header);
  for (const auto& row : dataset.rows) {
    std::vector<std::string> fields = {row.subject_id, std::to_string(row.event_index),
                                       csv::format_double(row.start_km),
                                       csv::format_double(row.stop_km),
                                       row.event ? "1" : "0"};
    for (double x : row.covariates) fields.push_back(csv::format_double(x));
    out.write_row(fields);
  }
  out.close();
}

inline CountingProcessDataset read_counting_dataset(const std::string& path) {
  const csv::Table table = csv::read_file(path);
  const std::vector<std::string> fixed = {"subject_id", "event_index", "start_km",
                                          "stop_km", "event"};
  if (table.header.size() < fixed.size() + 1 ||
      !std::equal(fixed.begin(), fixed.end(), table.header.begin()))
    throw DataError(path + ":1: expected header starting with subject_id,event_index,"
                           "start_km,stop_km,event plus covariate columns");
  CountingProcessDataset dataset;
  dataset.covariate_names.assign(table.header.begin() + fixed.size(), table.header.end());
  for (const auto& row : table.rows) {
    const std::string context = path + ":" + std::to_string(row.line_number);
    CountingProcessRow r;
    r.subject_id = row.at(0, path);
    r.event_index = static_cast<int>(csv::parse_int(row.at(1, path), context));
    r.start_km = csv::parse_double(row.at(2, path), context);
    r.stop_km = csv::parse_double(row.at(3, path), context);
    const std::string& ev = row.at(4, path);
    if (ev != "0" && ev != "1") throw DataError(context + ": event must be 0 or 1");
    r.event = ev == "1";
    for (std::size_t c = 0; c < dataset.covariate_names.size(); ++c)
      r.covariates.push_back(csv::parse_double(row.at(5 + c, path), context));
    try {
      r.validate();
    } catch (const ValidationError& e) {
      throw DataError(context + ": " + e.what());
    }
    dataset.rows.push_back(std::move(r));
  }
  std::stable_sort(dataset.rows.begin(), dataset.rows.end(),
                   [](const CountingProcessRow& a, const CountingProcessRow& b) {
                     return a.subject_id < b.subject_id;
                   });
  dataset.validate();
  return dataset;
}

inline void write_panel_dataset(const PanelStateDataset& dataset, const std::string& path) {
  csv::Writer out(path);
  std::vector<std::string> header = {"subject_id", "obs_time_min", "state"};
  header.insert(header.end(), dataset.covariate_names.begin(),
                dataset.covariate_names.end());
  out.write_row(header);
  for (const auto& obs : dataset.observations) {
    std::vector<std::string> fields = {obs.subject_id, csv::format_double(obs.obs_time_min),
                                       std::to_string(obs.state)};
    for (double x : obs.covariates) fields.push_back(csv::format_double(x));
    out.write_row(fields);
  }
  out.close();
}

inline PanelStateDataset read_panel_dataset(const std::string& path) {
  const csv::Table table = csv::read_file(path);
  const std::vector<std::string> fixed = {"subject_id", "obs_time_min", "state"};
  if (table.header.size() < fixed.size() + 1 ||
      !std::equal(fixed.begin(), fixed.end(), table.header.begin()))
    throw DataError(path + ":1: expected header starting with subject_id,obs_time_min,"
                           "state plus covariate columns");
  PanelStateDataset dataset;
  dataset.covariate_names.assign(table.header.begin() + fixed.size(), table.header.end());
  for (const auto& row : table.rows) {
    const std::string context = path + ":" + std::to_string(row.line_number);
    PanelObservation obs;
    obs.subject_id = row.at(0, path);
    obs.obs_time_min = csv::parse_double(row.at(1, path), context);
    obs.state = static_cast<int>(csv::parse_int(row.at(2, path), context));
    for (std::size_t c = 0; c < dataset.covariate_names.size(); ++c)
      obs.covariates.push_back(csv::parse_double(row.at(3 + c, path), context));
    dataset.observations.push_back(std::move(obs));
  }
  std::stable_sort(dataset.observations.begin(), dataset.observations.end(),
                   [](const PanelObservation& a, const PanelObservation& b) {
                     return a.subject_id < b.subject_id;
                   });
  dataset.validate(std::numeric_limits<int>::max());
  return dataset;
}

}  // namespace raildelay::io
