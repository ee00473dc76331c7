#include "csf/series.hpp"

#include <chrono>
#include <cstdio>

#include "csf/error.hpp"

namespace csf {

std::vector<double> static_features(const flow::Station& station) {
    return {station.elevation, static_cast<double>(station.soil_class), station.lat, station.lon};
}

namespace {

std::chrono::sys_days parse_date(const std::string& iso) {
    int y = 0;
    unsigned m = 0, d = 0;
    char tail = 0;
    if (iso.size() != 10 || std::sscanf(iso.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3)
        fail(ErrorKind::ParseError, "bad date '" + iso + "' (expected yyyy-mm-dd)");
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) fail(ErrorKind::ParseError, "bad date '" + iso + "'");
    return std::chrono::sys_days{ymd};
}

std::string format_date(std::chrono::sys_days days) {
    const std::chrono::year_month_day ymd{days};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

}  // namespace

std::string add_days(const std::string& iso_date, long days) {
    return format_date(parse_date(iso_date) + std::chrono::days{days});
}

std::vector<std::string> date_range(const std::string& start, std::size_t count) {
    std::vector<std::string> out;
    out.reserve(count);
    const auto first = parse_date(start);
    for (std::size_t i = 0; i < count; ++i) out.push_back(format_date(first + std::chrono::days{static_cast<long>(i)}));
    return out;
}

bool valid_date(const std::string& iso_date) {
    try {
        parse_date(iso_date);
        return true;
    } catch (const Error&) {
        return false;
    }
}

}  // namespace csf
