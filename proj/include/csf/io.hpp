#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "csf/flowgraph.hpp"
#include "csf/series.hpp"

namespace csf::io {

namespace fs = std::filesystem;

/// Shortest text that parses back to the same double.
std::string format_double(double v);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> lines;  // source line of each row

    /// Index of a header column; throws ParseError naming the file when absent.
    std::size_t column(const std::string& name) const;
    std::string source;
};

/// Comma-separated, first line is the header, blank lines skipped, fields
/// trimmed. Throws IoError when unreadable and ParseError on ragged rows.
CsvTable read_csv(const fs::path& path);

/// Number in a CSV field; ParseError names the file, line and column.
double parse_number(const CsvTable& table, std::size_t row, std::size_t col);

// ------------------------------------------------------------ panel data

/// Values keyed by (station, date) with a fixed number of columns per key.
/// Stations keep first-appearance order, dates are sorted; absent cells are NaN.
struct Panel {
    std::vector<std::string> columns;  // value column names
    std::vector<std::string> stations;
    std::vector<std::string> dates;
    std::vector<double> values;  // [station][date][column]

    std::size_t width() const { return columns.size(); }
    double at(std::size_t station, std::size_t date, std::size_t column = 0) const {
        return values[(station * dates.size() + date) * columns.size() + column];
    }
    double& at(std::size_t station, std::size_t date, std::size_t column = 0) {
        return values[(station * dates.size() + date) * columns.size() + column];
    }
    /// Index of a station id; throws UnknownStation.
    std::size_t station_index(const std::string& id) const;
};

/// `station_id,date,<columns...>`. Throws ParseError for duplicate keys,
/// bad dates or non-numeric values.
Panel read_panel(const fs::path& path);
void write_panel(const fs::path& path, const Panel& panel);

// ------------------------------------------------------------- stations

/// `id,lat,lon,elevation,huc8,huc4,soil_class`
std::vector<flow::Station> read_stations(const fs::path& path);
void write_stations(const fs::path& path, const std::vector<flow::Station>& stations);

/// `upstream_id,downstream_id`
std::vector<std::pair<std::string, std::string>> read_edges(const fs::path& path);
void write_edges(const fs::path& path, const flow::FlowGraph& graph);

/// Whitespace-separated rows of numbers, `#` comments. Throws ParseError
/// for ragged or empty grids.
flow::Grid read_grid(const fs::path& path);

// ----------------------------------------------------------- series sets

/// Builds the series set in the order of `stations` from a forcings panel
/// (precip_mm, tmax_c, tmin_c, wind_ms) and an optional streamflow panel
/// (flow_cms). Cells missing from a file become NaN. Throws UnknownStation
/// when a station has no forcings and IndexMismatch when the calendars differ.
SeriesSet series_from_panels(const std::vector<flow::Station>& stations, const Panel& forcings, const Panel* flow);

/// forcings.csv and streamflow.csv (when present) from a dataset directory.
SeriesSet read_series(const fs::path& data_dir, const std::vector<flow::Station>& stations);

void write_forcings(const fs::path& path, const SeriesSet& series);
void write_streamflow(const fs::path& path, const SeriesSet& series);

/// [station][day] values as a one-column panel.
Panel station_values(const std::vector<std::string>& stations, const std::vector<std::string>& dates,
                     const std::vector<std::vector<double>>& values, const std::string& column);

// ---------------------------------------------------------- graph bundle

struct GraphBundle {
    flow::FlowGraph graph;
    flow::Grouping grouping;
};

/// stations.csv, edges.csv, adjacency.csv, grouping.json and validation.json.
nlohmann::json write_graph_bundle(const fs::path& dir, const flow::FlowGraph& graph);
GraphBundle read_graph_bundle(const fs::path& dir);

nlohmann::json to_json(const flow::ValidationReport& report);

// ----------------------------------------------------------------- misc

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const fs::path& path);
std::string sha256_text(const std::string& text);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace csf::io
