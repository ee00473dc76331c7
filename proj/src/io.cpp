#include "csf/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include <openssl/evp.h>

#include "csf/error.hpp"

namespace csf::io {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
    return out;
}

void require_columns(const CsvTable& t, const std::vector<std::string>& names) {
    for (const auto& n : names) t.column(n);
}

std::string location(const CsvTable& t, std::size_t row) {
    return t.source + ":" + std::to_string(t.lines[row]);
}

}  // namespace

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::size_t CsvTable::column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(ErrorKind::ParseError, source + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::IoError, "cannot read " + path.string());
    CsvTable t;
    t.source = path.string();
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (trim(line).empty()) continue;
        auto fields = split_fields(line);
        if (t.header.empty()) {
            t.header = std::move(fields);
            continue;
        }
        if (fields.size() != t.header.size())
            fail(ErrorKind::ParseError, t.source + ":" + std::to_string(number) + ": expected " +
                                            std::to_string(t.header.size()) + " fields, found " +
                                            std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
        t.lines.push_back(number);
    }
    if (t.header.empty()) fail(ErrorKind::ParseError, t.source + ": empty file");
    return t;
}

double parse_number(const CsvTable& t, std::size_t row, std::size_t col) {
    const std::string& s = t.rows[row][col];
    if (s.empty() || s == "nan" || s == "NaN" || s == "NA") return kNaN;
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        fail(ErrorKind::ParseError, location(t, row) + ": column '" + t.header[col] + "' is not a number: '" + s + "'");
    return v;
}

// ------------------------------------------------------------ panels

std::size_t Panel::station_index(const std::string& id) const {
    const auto it = std::find(stations.begin(), stations.end(), id);
    if (it == stations.end()) fail(ErrorKind::UnknownStation, "no values for station '" + id + "'");
    return static_cast<std::size_t>(it - stations.begin());
}

Panel read_panel(const fs::path& path) {
    const CsvTable t = read_csv(path);
    const std::size_t sc = t.column("station_id"), dc = t.column("date");
    Panel p;
    std::vector<std::size_t> value_cols;
    for (std::size_t c = 0; c < t.header.size(); ++c)
        if (c != sc && c != dc) {
            p.columns.push_back(t.header[c]);
            value_cols.push_back(c);
        }
    if (p.columns.empty()) fail(ErrorKind::ParseError, t.source + ": no value columns");

    std::map<std::string, std::size_t> station_of;
    std::string first, last;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const std::string& d = t.rows[r][dc];
        if (!valid_date(d)) fail(ErrorKind::ParseError, location(t, r) + ": bad date '" + d + "'");
        if (first.empty() || d < first) first = d;
        if (last.empty() || d > last) last = d;
        if (station_of.emplace(t.rows[r][sc], p.stations.size()).second) p.stations.push_back(t.rows[r][sc]);
    }
    if (!first.empty()) {
        for (std::string d = first; d <= last; d = add_days(d, 1)) p.dates.push_back(d);
    }
    std::map<std::string, std::size_t> date_of;
    for (std::size_t i = 0; i < p.dates.size(); ++i) date_of[p.dates[i]] = i;

    const std::size_t w = p.width();
    p.values.assign(p.stations.size() * p.dates.size() * w, kNaN);
    std::vector<bool> seen(p.stations.size() * p.dates.size(), false);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const std::size_t s = station_of.at(t.rows[r][sc]), d = date_of.at(t.rows[r][dc]);
        if (seen[s * p.dates.size() + d])
            fail(ErrorKind::ParseError, location(t, r) + ": duplicate row for " + t.rows[r][sc] + " " + t.rows[r][dc]);
        seen[s * p.dates.size() + d] = true;
        for (std::size_t k = 0; k < w; ++k) p.at(s, d, k) = parse_number(t, r, value_cols[k]);
    }
    return p;
}

void write_panel(const fs::path& path, const Panel& p) {
    std::ofstream out = open_out(path);
    out << "station_id,date";
    for (const auto& c : p.columns) out << ',' << c;
    out << '\n';
    for (std::size_t s = 0; s < p.stations.size(); ++s)
        for (std::size_t d = 0; d < p.dates.size(); ++d) {
            out << p.stations[s] << ',' << p.dates[d];
            for (std::size_t k = 0; k < p.width(); ++k) out << ',' << format_double(p.at(s, d, k));
            out << '\n';
        }
}

// ---------------------------------------------------------- stations

std::vector<flow::Station> read_stations(const fs::path& path) {
    const CsvTable t = read_csv(path);
    require_columns(t, {"id", "lat", "lon", "elevation", "huc8", "huc4", "soil_class"});
    const std::size_t id = t.column("id"), lat = t.column("lat"), lon = t.column("lon"), el = t.column("elevation"),
                      h8 = t.column("huc8"), h4 = t.column("huc4"), soil = t.column("soil_class");
    std::vector<flow::Station> out;
    std::map<std::string, std::size_t> seen;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        flow::Station s;
        s.id = t.rows[r][id];
        if (s.id.empty()) fail(ErrorKind::ParseError, location(t, r) + ": empty station id");
        if (!seen.emplace(s.id, r).second) fail(ErrorKind::ParseError, location(t, r) + ": duplicate station " + s.id);
        s.lat = parse_number(t, r, lat);
        s.lon = parse_number(t, r, lon);
        s.elevation = parse_number(t, r, el);
        if (!std::isfinite(s.lat) || !std::isfinite(s.lon) || !std::isfinite(s.elevation))
            fail(ErrorKind::ParseError, location(t, r) + ": station coordinates must be finite");
        s.huc8 = t.rows[r][h8];
        s.huc4 = t.rows[r][h4];
        const double sc = parse_number(t, r, soil);
        if (!(sc >= 0.0) || sc != std::floor(sc))
            fail(ErrorKind::ParseError, location(t, r) + ": soil_class must be a non-negative integer");
        s.soil_class = static_cast<int>(sc);
        out.push_back(std::move(s));
    }
    return out;
}

void write_stations(const fs::path& path, const std::vector<flow::Station>& stations) {
    std::ofstream out = open_out(path);
    out << "id,lat,lon,elevation,huc8,huc4,soil_class\n";
    for (const auto& s : stations)
        out << s.id << ',' << format_double(s.lat) << ',' << format_double(s.lon) << ',' << format_double(s.elevation)
            << ',' << s.huc8 << ',' << s.huc4 << ',' << s.soil_class << '\n';
}

std::vector<std::pair<std::string, std::string>> read_edges(const fs::path& path) {
    const CsvTable t = read_csv(path);
    const std::size_t up = t.column("upstream_id"), down = t.column("downstream_id");
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& row : t.rows) out.emplace_back(row[up], row[down]);
    return out;
}

void write_edges(const fs::path& path, const flow::FlowGraph& graph) {
    std::ofstream out = open_out(path);
    out << "upstream_id,downstream_id\n";
    for (const auto& [u, d] : graph.edges()) out << graph.station(u).id << ',' << graph.station(d).id << '\n';
}

flow::Grid read_grid(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::IoError, "cannot read " + path.string());
    flow::Grid g;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream fields(line);
        std::vector<double> row;
        std::string tok;
        while (fields >> tok) {
            double v = 0.0;
            const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v))
                fail(ErrorKind::ParseError, path.string() + ":" + std::to_string(number) + ": bad value '" + tok + "'");
            row.push_back(v);
        }
        if (row.empty()) continue;
        if (g.cols == 0) g.cols = row.size();
        if (row.size() != g.cols)
            fail(ErrorKind::ParseError, path.string() + ":" + std::to_string(number) + ": expected " +
                                            std::to_string(g.cols) + " values, found " + std::to_string(row.size()));
        g.values.insert(g.values.end(), row.begin(), row.end());
        ++g.rows;
    }
    if (g.rows == 0) fail(ErrorKind::ParseError, path.string() + ": empty grid");
    return g;
}

// ------------------------------------------------------------- series

SeriesSet series_from_panels(const std::vector<flow::Station>& stations, const Panel& forcings, const Panel* flow) {
    std::vector<std::size_t> fcol;
    for (const auto name : kForcingNames) {
        const auto it = std::find(forcings.columns.begin(), forcings.columns.end(), std::string(name));
        if (it == forcings.columns.end()) fail(ErrorKind::ParseError, "forcings lack column '" + std::string(name) + "'");
        fcol.push_back(static_cast<std::size_t>(it - forcings.columns.begin()));
    }
    std::size_t qcol = 0;
    if (flow) {
        const auto it = std::find(flow->columns.begin(), flow->columns.end(), "flow_cms");
        if (it == flow->columns.end()) fail(ErrorKind::ParseError, "streamflow lacks column 'flow_cms'");
        qcol = static_cast<std::size_t>(it - flow->columns.begin());
    }
    SeriesSet set;
    set.dates = forcings.dates;
    // Streamflow may cover a sub-range of the forcing calendar.
    std::vector<long> flow_day(set.dates.size(), -1);
    if (flow) {
        std::map<std::string, std::size_t> idx;
        for (std::size_t d = 0; d < flow->dates.size(); ++d) idx[flow->dates[d]] = d;
        for (std::size_t d = 0; d < set.dates.size(); ++d)
            if (auto it = idx.find(set.dates[d]); it != idx.end()) flow_day[d] = static_cast<long>(it->second);
        for (const auto& d : flow->dates)
            if (!std::binary_search(set.dates.begin(), set.dates.end(), d))
                fail(ErrorKind::IndexMismatch, "streamflow date " + d + " lies outside the forcing calendar");
    }
    for (const auto& st : stations) {
        const std::size_t fi = forcings.station_index(st.id);
        StationSeries s;
        s.station_id = st.id;
        s.statics = static_features(st);
        s.forcings.resize(set.dates.size());
        for (std::size_t d = 0; d < set.dates.size(); ++d)
            for (std::size_t c = 0; c < kForcingCount; ++c) s.forcings[d][c] = forcings.at(fi, d, fcol[c]);
        if (flow) {
            const auto it = std::find(flow->stations.begin(), flow->stations.end(), st.id);
            s.flow.assign(set.dates.size(), kNaN);
            if (it != flow->stations.end()) {
                const std::size_t qi = static_cast<std::size_t>(it - flow->stations.begin());
                for (std::size_t d = 0; d < set.dates.size(); ++d)
                    if (flow_day[d] >= 0) s.flow[d] = flow->at(qi, static_cast<std::size_t>(flow_day[d]), qcol);
            }
        }
        set.stations.push_back(std::move(s));
    }
    return set;
}

SeriesSet read_series(const fs::path& data_dir, const std::vector<flow::Station>& stations) {
    const Panel forcings = read_panel(data_dir / "forcings.csv");
    if (fs::exists(data_dir / "streamflow.csv")) {
        const Panel flow = read_panel(data_dir / "streamflow.csv");
        return series_from_panels(stations, forcings, &flow);
    }
    return series_from_panels(stations, forcings, nullptr);
}

void write_forcings(const fs::path& path, const SeriesSet& series) {
    Panel p;
    for (const auto name : kForcingNames) p.columns.emplace_back(name);
    p.dates = series.dates;
    for (const auto& s : series.stations) {
        p.stations.push_back(s.station_id);
        for (const auto& f : s.forcings) p.values.insert(p.values.end(), f.begin(), f.end());
    }
    write_panel(path, p);
}

void write_streamflow(const fs::path& path, const SeriesSet& series) {
    std::vector<std::string> ids;
    std::vector<std::vector<double>> values;
    for (const auto& s : series.stations) {
        ids.push_back(s.station_id);
        values.push_back(s.flow);
    }
    write_panel(path, station_values(ids, series.dates, values, "flow_cms"));
}

Panel station_values(const std::vector<std::string>& stations, const std::vector<std::string>& dates,
                     const std::vector<std::vector<double>>& values, const std::string& column) {
    if (values.size() != stations.size()) fail(ErrorKind::IndexMismatch, "one value series per station expected");
    Panel p;
    p.columns = {column};
    p.stations = stations;
    p.dates = dates;
    for (const auto& v : values) {
        if (v.size() != dates.size()) fail(ErrorKind::IndexMismatch, "value series does not match the calendar");
        p.values.insert(p.values.end(), v.begin(), v.end());
    }
    return p;
}

// ------------------------------------------------------- graph bundle

nlohmann::json to_json(const flow::ValidationReport& r) {
    nlohmann::json degenerate = nlohmann::json::array();
    for (std::size_t i : r.degenerate_rows) degenerate.push_back(i);
    return {{"nodes", r.nodes},     {"edges", r.edges},           {"acyclic", r.acyclic},
            {"outlets", r.outlets}, {"groups", r.group_sizes},    {"degenerate_rows", degenerate}};
}

nlohmann::json write_graph_bundle(const fs::path& dir, const flow::FlowGraph& graph) {
    fs::create_directories(dir);
    const flow::Grouping grouping = flow::hierarchical_groups(graph.stations());
    const flow::CausalAdjacency adj = flow::causal_adjacency(graph);
    const flow::ValidationReport report = flow::validate(graph, grouping, flow::aggregation_matrix(adj));
    write_stations(dir / "stations.csv", graph.stations());
    write_edges(dir / "edges.csv", graph);
    {
        std::ofstream out = open_out(dir / "adjacency.csv");
        out << "id";
        for (const auto& s : graph.stations()) out << ',' << s.id;
        out << '\n';
        for (std::size_t i = 0; i < graph.size(); ++i) {
            out << graph.station(i).id;
            for (std::size_t j = 0; j < graph.size(); ++j) out << ',' << static_cast<int>(adj.at(i, j));
            out << '\n';
        }
    }
    nlohmann::json groups = nlohmann::json::object();
    for (const auto& g : grouping.groups()) {
        nlohmann::json members = nlohmann::json::array();
        for (std::size_t i : grouping.members(g)) members.push_back(graph.station(i).id);
        groups[g] = {{"huc4", grouping.hierarchy.at(g)}, {"members", members}};
    }
    write_text(dir / "grouping.json", groups.dump(2) + "\n");
    const nlohmann::json j = to_json(report);
    write_text(dir / "validation.json", j.dump(2) + "\n");
    return j;
}

GraphBundle read_graph_bundle(const fs::path& dir) {
    GraphBundle b;
    b.graph = flow::build_from_edges(read_stations(dir / "stations.csv"), read_edges(dir / "edges.csv"));
    b.grouping = flow::hierarchical_groups(b.graph.stations());
    return b;
}

// --------------------------------------------------------------- misc

namespace {

std::string hex_digest(const unsigned char* bytes, unsigned len) {
    std::ostringstream s;
    for (unsigned i = 0; i < len; ++i) s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(bytes[i]);
    return s.str();
}

struct Sha256 {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    Sha256() {
        if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) fail(ErrorKind::Internal, "SHA-256 unavailable");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx); }
    void update(const char* data, std::size_t n) { EVP_DigestUpdate(ctx, data, n); }
    std::string finish() {
        unsigned char out[EVP_MAX_MD_SIZE];
        unsigned len = 0;
        EVP_DigestFinal_ex(ctx, out, &len);
        return hex_digest(out, len);
    }
};

}  // namespace

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot read " + path.string());
    Sha256 h;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) h.update(buf, static_cast<std::size_t>(in.gcount()));
    return h.finish();
}

std::string sha256_text(const std::string& text) {
    Sha256 h;
    h.update(text.data(), text.size());
    return h.finish();
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot read " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out = open_out(path);
    out << text;
    if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
}

}  // namespace csf::io
