#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "csf/flowgraph.hpp"

namespace csf {

inline constexpr std::size_t kForcingCount = 4;
inline constexpr std::array<std::string_view, kForcingCount> kForcingNames = {"precip_mm", "tmax_c", "tmin_c",
                                                                              "wind_ms"};
enum ForcingIndex : std::size_t { kPrecip = 0, kTmax = 1, kTmin = 2, kWind = 3 };

using Forcing = std::array<double, kForcingCount>;

/// Daily forcings and observed streamflow of one station plus its static features.
struct StationSeries {
    std::string station_id;
    std::vector<Forcing> forcings;
    std::vector<double> flow;
    std::vector<double> statics;
};

/// Stations sharing one daily calendar; stations[i] is graph node i.
struct SeriesSet {
    std::vector<std::string> dates;
    std::vector<StationSeries> stations;

    std::size_t days() const { return dates.size(); }
};

/// Static feature vector used by the models: elevation, soil class, lat, lon.
inline constexpr std::size_t kStaticCount = 4;
std::vector<double> static_features(const flow::Station& station);

/// ISO yyyy-mm-dd arithmetic.
std::string add_days(const std::string& iso_date, long days);
std::vector<std::string> date_range(const std::string& start, std::size_t count);
bool valid_date(const std::string& iso_date);

}  // namespace csf
