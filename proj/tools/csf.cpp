// csf: command-line front end for graph building, simulation, training,
// forecasting, evaluation, embedding alignment and ablation sweeps.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "csf/error.hpp"
#include "csf/flowgraph.hpp"
#include "csf/io.hpp"
#include "csf/metrics.hpp"
#include "csf/pipeline.hpp"
#include "csf/station_vae.hpp"
#include "csf/synthbasin.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace csf;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr int kManifestFormat = 1;

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

// Provenance record written as manifest.json into each output directory.
class Manifest {
public:
    Manifest(std::string command, std::uint64_t seed) : started_(utc_now()) {
        j_["command"] = std::move(command);
        j_["seed"] = seed;
        j_["config_hash"] = io::sha256_text("");
        j_["inputs"] = json::object();
        j_["outputs"] = json::array();
    }

    void config(const std::string& text) { j_["config_hash"] = io::sha256_text(text); }

    void input(const fs::path& p) {
        if (fs::is_directory(p)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::recursive_directory_iterator(p))
                if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) j_["inputs"][f.string()] = io::sha256_file(f);
        } else {
            j_["inputs"][p.string()] = io::sha256_file(p);
        }
    }

    void output(const fs::path& p) { j_["outputs"].push_back(p.string()); }
    json& extra() { return j_["details"]; }

    void write(const fs::path& dir) {
        j_["started"] = started_;
        j_["finished"] = utc_now();
        j_["versions"] = {{"csf", kVersion}, {"manifest_format", kManifestFormat}};
        io::write_text(dir / "manifest.json", j_.dump(2) + "\n");
    }

private:
    std::string started_;
    json j_;
};

// `key = value` lines with `#` comments.
std::vector<std::pair<std::string, std::string>> key_values(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        const auto eq = line.find('=');
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
        };
        if (trim(line).empty()) continue;
        if (eq == std::string::npos) fail(ErrorKind::ConfigInvalid, "expected 'key = value', got '" + trim(line) + "'");
        out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
}

double to_number(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used == value.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::ConfigInvalid, "invalid value '" + value + "' for key '" + key + "'");
}

struct SimulationSettings {
    synth::ScenarioConfig scenario;
    std::size_t days = 2000;
    std::string start_date = "2000-01-01";
};

SimulationSettings parse_scenario(const std::string& text) {
    SimulationSettings s;
    auto& c = s.scenario;
    auto& f = c.forcing;
    for (const auto& [k, v] : key_values(text)) {
        auto count = [&] {
            const double x = to_number(k, v);
            if (x < 0 || x != std::floor(x)) fail(ErrorKind::ConfigInvalid, "invalid value '" + v + "' for key '" + k + "'");
            return static_cast<std::size_t>(x);
        };
        if (k == "stations") c.stations = count();
        else if (k == "groups") c.groups = count();
        else if (k == "days") s.days = count();
        else if (k == "start_date") {
            if (!valid_date(v)) fail(ErrorKind::ConfigInvalid, "invalid value '" + v + "' for key 'start_date'");
            s.start_date = v;
        }
        else if (k == "kappa_min") c.kappa_min = to_number(k, v);
        else if (k == "kappa_max") c.kappa_max = to_number(k, v);
        else if (k == "delay_min") c.delay_min = static_cast<int>(count());
        else if (k == "delay_max") c.delay_max = static_cast<int>(count());
        else if (k == "alpha_min") c.alpha_min = to_number(k, v);
        else if (k == "alpha_max") c.alpha_max = to_number(k, v);
        else if (k == "evaporation") c.evaporation = to_number(k, v);
        else if (k == "p_dry_to_wet") f.p_dry_to_wet = to_number(k, v);
        else if (k == "p_wet_to_wet") f.p_wet_to_wet = to_number(k, v);
        else if (k == "gamma_shape") f.gamma_shape = to_number(k, v);
        else if (k == "gamma_scale") f.gamma_scale = to_number(k, v);
        else if (k == "shared_fraction") f.shared_fraction = to_number(k, v);
        else if (k == "temp_mean") f.temp_mean = to_number(k, v);
        else if (k == "temp_amplitude") f.temp_amplitude = to_number(k, v);
        else if (k == "group_temp_spacing") f.group_temp_spacing = to_number(k, v);
        else fail(ErrorKind::ConfigInvalid, "unknown scenario key '" + k + "'");
    }
    return s;
}

pipeline::DayRange split_range(const std::string& name, std::size_t days, const pipeline::SplitFractions& fractions) {
    if (name == "all") return {0, days};
    const auto s = pipeline::temporal_split(days, fractions);
    if (name == "train") return s.train;
    if (name == "val") return s.val;
    if (name == "test") return s.test;
    fail(ErrorKind::ConfigInvalid, "unknown split '" + name + "' (train, val, test or all)");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

// ---------------------------------------------------------- build-graph

struct GraphArgs {
    std::string stations, edges, dem, mask, out;
};

void cmd_build_graph(const GraphArgs& a) {
    Manifest m("build-graph", 0);
    flow::FlowGraph graph;
    if (!a.dem.empty()) {
        const flow::Grid dem = io::read_grid(a.dem);
        m.input(a.dem);
        std::vector<bool> mask(dem.rows * dem.cols, true);
        if (!a.mask.empty()) {
            const flow::Grid g = io::read_grid(a.mask);
            m.input(a.mask);
            if (g.rows != dem.rows || g.cols != dem.cols)
                fail(ErrorKind::ShapeMismatch, "mask and DEM sizes differ");
            for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = g.values[i] != 0.0;
        }
        std::vector<flow::Station> records;
        if (!a.stations.empty()) {
            records = io::read_stations(a.stations);
            m.input(a.stations);
        } else {
            for (std::size_t i = 0; i < mask.size(); ++i)
                if (mask[i]) {
                    flow::Station s;
                    s.id = "r" + std::to_string(i / dem.cols) + "c" + std::to_string(i % dem.cols);
                    s.lat = -static_cast<double>(i / dem.cols);
                    s.lon = static_cast<double>(i % dem.cols);
                    s.elevation = dem.values[i];
                    s.huc8 = "00000001";
                    s.huc4 = "0000";
                    records.push_back(std::move(s));
                }
        }
        graph = flow::build_from_d8(dem, mask, records).graph;
    } else {
        if (a.stations.empty() || a.edges.empty())
            fail(ErrorKind::ConfigInvalid, "build-graph needs --stations with --edges, or --dem");
        graph = flow::build_from_edges(io::read_stations(a.stations), io::read_edges(a.edges));
        m.input(a.stations);
        m.input(a.edges);
    }
    const json report = io::write_graph_bundle(a.out, graph);
    for (const char* f : {"stations.csv", "edges.csv", "adjacency.csv", "grouping.json", "validation.json"})
        m.output(fs::path(a.out) / f);
    m.write(a.out);
    std::cout << report.dump(2) << "\n";
}

// ------------------------------------------------------------- simulate

void cmd_simulate(const std::string& config, std::uint64_t seed, long days_override, const std::string& out) {
    Manifest m("simulate", seed);
    std::string text;
    if (!config.empty()) {
        text = io::read_text(config);
        m.input(config);
        m.config(text);
    }
    SimulationSettings s = parse_scenario(text);
    if (days_override > 0) s.days = static_cast<std::size_t>(days_override);
    const synth::SimulatedBasin sim = synth::simulate(s.scenario, s.days, seed, s.start_date);
    const fs::path dir(out);
    io::write_stations(dir / "stations.csv", sim.scenario.graph.stations());
    io::write_edges(dir / "edges.csv", sim.scenario.graph);
    io::write_forcings(dir / "forcings.csv", sim.series);
    io::write_streamflow(dir / "streamflow.csv", sim.series);
    std::vector<std::string> ids;
    for (const auto& st : sim.series.stations) ids.push_back(st.station_id);
    io::write_panel(dir / "runoff_truth.csv", io::station_values(ids, sim.series.dates, sim.runoff, "runoff_mm"));
    json truth = json::array();
    for (std::size_t i = 0; i < ids.size(); ++i)
        truth.push_back({{"station_id", ids[i]},
                         {"storage_coef", sim.scenario.storage_coef[i]},
                         {"runoff_coef", sim.scenario.runoff_coef[i]},
                         {"area_coef", sim.scenario.area_coef[i]},
                         {"delay", sim.scenario.delay[i]},
                         {"attenuation", sim.scenario.attenuation[i]}});
    io::write_text(dir / "scenario.json", json{{"days", s.days}, {"seed", seed}, {"stations", truth}}.dump(2) + "\n");
    for (const char* f : {"stations.csv", "edges.csv", "forcings.csv", "streamflow.csv", "runoff_truth.csv", "scenario.json"})
        m.output(dir / f);
    m.write(dir);
    std::cout << "simulated " << ids.size() << " stations over " << s.days << " days into " << out << "\n";
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string config, data, graph, out;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

pipeline::TrainConfig load_config(const std::string& path, Manifest& m, std::string* text_out = nullptr) {
    std::string text;
    if (!path.empty()) {
        text = io::read_text(path);
        m.input(path);
    }
    pipeline::TrainConfig c = pipeline::parse_config(text);
    if (text_out) *text_out = text;
    return c;
}

struct TrainedRun {
    pipeline::TrainResult result;
    metrics::MetricsReport test;
};

TrainedRun train_and_test(const pipeline::TrainConfig& c, const SeriesSet& series, const io::GraphBundle& g,
                          std::ostream* log) {
    TrainedRun run;
    run.result = pipeline::train(c, series, g.graph, g.grouping, [&](const pipeline::EpochRecord& r) {
        if (log) *log << pipeline::to_json(r).dump() << "\n";
    });
    const auto split = pipeline::temporal_split(series.days(), c.split);
    const auto cube = pipeline::build_features(pipeline::apply_stats(series, run.result.model.stats, c.preprocess.impute),
                                               run.result.model.forcing_window());
    run.test = pipeline::evaluate(run.result.model, series, cube, split.test);
    return run;
}

void cmd_train(const TrainArgs& a) {
    Manifest m("train", a.seed);
    std::string text;
    pipeline::TrainConfig c = load_config(a.config, m, &text);
    if (a.seed_given) c.seed = a.seed;
    m.config(pipeline::to_text(c));
    const io::GraphBundle g = io::read_graph_bundle(a.graph);
    m.input(fs::path(a.graph) / "stations.csv");
    m.input(fs::path(a.graph) / "edges.csv");
    const SeriesSet series = io::read_series(a.data, g.graph.stations());
    m.input(fs::path(a.data) / "forcings.csv");
    m.input(fs::path(a.data) / "streamflow.csv");

    const fs::path dir(a.out);
    fs::create_directories(dir);
    std::ofstream log(dir / "training_log.jsonl");
    const TrainedRun run = train_and_test(c, series, g, &log);
    log.close();
    pipeline::save_model((dir / "model").string(), run.result.model);
    io::write_stations(dir / "stations.csv", g.graph.stations());
    io::write_text(dir / "config.txt", pipeline::to_text(c));
    io::write_text(dir / "metrics.json", metrics::to_json(run.test).dump(2) + "\n");
    for (const char* f : {"training_log.jsonl", "model", "stations.csv", "config.txt", "metrics.json"}) m.output(dir / f);
    m.extra() = {{"best_epoch", run.result.best_epoch},
                 {"epochs_run", run.result.log.size()},
                 {"train_seconds", run.result.train_seconds}};
    m.write(dir);
    std::cout << "best epoch " << run.result.best_epoch << ", test NSE " << run.test.mean_nse << ", KGE "
              << run.test.mean_kge << "\n";
}

// ------------------------------------------------------------- forecast

struct LoadedRun {
    pipeline::CsfModel model;
    std::vector<flow::Station> stations;
    SeriesSet series;
    pipeline::FeatureCube cube;
};

LoadedRun load_run(const std::string& run_dir, const std::string& data_dir, Manifest& m) {
    LoadedRun r;
    r.model = pipeline::load_model((fs::path(run_dir) / "model").string());
    r.stations = io::read_stations(fs::path(run_dir) / "stations.csv");
    m.input(run_dir);
    r.series = io::read_series(data_dir, r.stations);
    m.input(fs::path(data_dir) / "forcings.csv");
    if (fs::exists(fs::path(data_dir) / "streamflow.csv")) m.input(fs::path(data_dir) / "streamflow.csv");
    r.cube = pipeline::build_features(pipeline::apply_stats(r.series, r.model.stats, r.model.config.preprocess.impute),
                                      r.model.forcing_window());
    return r;
}

std::vector<std::size_t> target_nodes(const std::string& targets, const std::vector<std::string>& ids) {
    std::vector<std::size_t> out;
    if (targets.empty()) {
        for (std::size_t i = 0; i < ids.size(); ++i) out.push_back(i);
        return out;
    }
    for (const auto& t : split_list(targets)) {
        const auto it = std::find(ids.begin(), ids.end(), t);
        if (it == ids.end()) fail(ErrorKind::UnknownStation, "unknown target station '" + t + "'");
        out.push_back(static_cast<std::size_t>(it - ids.begin()));
    }
    return out;
}

io::Panel forecast_panel(const LoadedRun& r, const pipeline::DayRange& range, std::size_t lead,
                         const std::vector<std::size_t>& nodes) {
    const auto fc = pipeline::forecast_range(r.model, r.cube, range, lead);
    io::Panel p;
    p.columns = {"flow"};
    for (std::size_t day : fc.target_days) p.dates.push_back(r.series.dates[day]);
    for (std::size_t i : nodes) {
        p.stations.push_back(r.model.station_ids[i]);
        p.values.insert(p.values.end(), fc.flow[i].begin(), fc.flow[i].end());
    }
    return p;
}

void cmd_forecast(const std::string& run_dir, const std::string& data_dir, const std::string& targets, long horizon,
                  const std::string& split, bool all_leads, const std::string& out) {
    Manifest m("forecast", 0);
    const LoadedRun r = load_run(run_dir, data_dir, m);
    const std::size_t h = horizon > 0 ? static_cast<std::size_t>(horizon) : r.model.task.output_days;
    const auto range = split_range(split, r.series.days(), r.model.config.split);
    const auto nodes = target_nodes(targets, r.model.station_ids);
    const fs::path dir(out);
    io::write_panel(dir / "predictions.csv", forecast_panel(r, range, h, nodes));
    m.output(dir / "predictions.csv");
    if (all_leads)
        for (std::size_t lead = 1; lead <= h; ++lead) {
            const fs::path f = dir / ("predictions_lead" + std::to_string(lead) + ".csv");
            io::write_panel(f, forecast_panel(r, range, lead, nodes));
            m.output(f);
        }
    m.extra() = {{"horizon", h}, {"split", split}};
    m.write(dir);
    std::cout << "wrote " << (dir / "predictions.csv").string() << "\n";
}

void cmd_embed(const std::string& run_dir, const std::string& data_dir, const std::string& split, const std::string& out) {
    Manifest m("embed", 0);
    const LoadedRun r = load_run(run_dir, data_dir, m);
    if (!r.model.config.use_embeddings) fail(ErrorKind::ConfigInvalid, "the model was trained without embeddings");
    const auto range = split_range(split, r.series.days(), r.model.config.split);
    const auto feats = pipeline::model_features(r.model, r.cube, range);
    const std::size_t n = r.cube.nodes, d = r.model.config.latent_dim, f = r.model.feature_count();
    io::Panel p;
    for (std::size_t k = 0; k < d; ++k) p.columns.push_back("z" + std::to_string(k));
    p.stations = r.model.station_ids;
    for (std::size_t t = range.begin; t < range.end; ++t) p.dates.push_back(r.series.dates[t]);
    p.values.resize(n * range.size() * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < range.size(); ++t)
            for (std::size_t k = 0; k < d; ++k) p.at(i, t, k) = feats[(t * n + i) * f + 1 + k];
    const fs::path dir(out);
    io::write_panel(dir / "embeddings.csv", p);
    m.output(dir / "embeddings.csv");
    m.write(dir);
    std::cout << "wrote " << (dir / "embeddings.csv").string() << "\n";
}

// ------------------------------------------------------------- evaluate

std::string hydrograph_svg(const std::string& id, const std::vector<std::string>& dates, const std::vector<double>& obs,
                           const std::vector<double>& pred) {
    constexpr double W = 800, H = 300, L = 60, R = 20, T = 30, B = 40;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto* v : {&obs, &pred})
        for (double x : *v) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
    if (!(hi > lo)) hi = lo + 1.0;
    const double n = static_cast<double>(std::max<std::size_t>(dates.size(), 2) - 1);
    auto line = [&](const std::vector<double>& v, const char* colour) {
        std::ostringstream s;
        s << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.2\" points=\"";
        for (std::size_t i = 0; i < v.size(); ++i)
            s << L + (W - L - R) * static_cast<double>(i) / n << ',' << T + (H - T - B) * (hi - v[i]) / (hi - lo) << ' ';
        s << "\"/>\n";
        return s.str();
    };
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << L << "\" y=\"18\" font-size=\"13\" font-family=\"sans-serif\">" << id
      << "  observed (black) vs predicted (red)</text>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"#888\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"#888\"/>\n"
      << "<text x=\"4\" y=\"" << T + 4 << "\" font-size=\"11\" font-family=\"sans-serif\">" << io::format_double(hi)
      << "</text>\n"
      << "<text x=\"4\" y=\"" << H - B << "\" font-size=\"11\" font-family=\"sans-serif\">" << io::format_double(lo)
      << "</text>\n";
    if (!dates.empty())
        s << "<text x=\"" << L << "\" y=\"" << H - 12 << "\" font-size=\"11\" font-family=\"sans-serif\">" << dates.front()
          << "</text>\n"
          << "<text x=\"" << W - R - 70 << "\" y=\"" << H - 12 << "\" font-size=\"11\" font-family=\"sans-serif\">"
          << dates.back() << "</text>\n";
    s << line(obs, "black") << line(pred, "#c0392b") << "</svg>\n";
    return s.str();
}

// Day-major embedding matrices and runoff vectors over dates where every
// station has finite values in both files, in the runoff file's station order.
struct AlignmentInput {
    std::vector<std::string> stations;
    std::vector<std::string> dates;
    std::vector<std::vector<double>> z;  // [day][station * dim]
    std::vector<std::vector<double>> r;  // [day][station]
    std::size_t dim = 0;
};

AlignmentInput alignment_input(const io::Panel& emb, const io::Panel& runoff) {
    AlignmentInput a;
    a.stations = runoff.stations;
    a.dim = emb.width();
    std::vector<std::size_t> ei;
    for (const auto& id : a.stations) ei.push_back(emb.station_index(id));
    std::map<std::string, std::size_t> edate;
    for (std::size_t d = 0; d < emb.dates.size(); ++d) edate[emb.dates[d]] = d;
    for (std::size_t d = 0; d < runoff.dates.size(); ++d) {
        const auto it = edate.find(runoff.dates[d]);
        if (it == edate.end()) continue;
        std::vector<double> z, r;
        bool ok = true;
        for (std::size_t s = 0; s < a.stations.size() && ok; ++s) {
            r.push_back(runoff.at(s, d));
            for (std::size_t k = 0; k < a.dim; ++k) z.push_back(emb.at(ei[s], it->second, k));
            ok = std::isfinite(r.back()) && std::all_of(z.end() - static_cast<long>(a.dim), z.end(), [](double v) { return std::isfinite(v); });
        }
        if (!ok) continue;
        a.dates.push_back(runoff.dates[d]);
        a.z.push_back(std::move(z));
        a.r.push_back(std::move(r));
    }
    if (a.dates.empty()) fail(ErrorKind::IndexMismatch, "embeddings and runoff share no complete day");
    return a;
}

struct EvalArgs {
    std::string predictions, observed, out, task = "custom", embeddings, runoff;
    std::size_t k = 10;
    bool svg = false;
};

void cmd_evaluate(const EvalArgs& a) {
    Manifest m("evaluate", 0);
    const io::Panel pred = io::read_panel(a.predictions);
    const io::Panel obs = io::read_panel(a.observed);
    m.input(a.predictions);
    m.input(a.observed);
    std::size_t pc = 0, oc = 0;
    if (pred.width() > 1) pc = static_cast<std::size_t>(std::find(pred.columns.begin(), pred.columns.end(), "flow") - pred.columns.begin());
    if (obs.width() > 1) {
        const auto it = std::find(obs.columns.begin(), obs.columns.end(), "flow_cms");
        oc = it == obs.columns.end() ? 0 : static_cast<std::size_t>(it - obs.columns.begin());
    }
    if (pc >= pred.width()) fail(ErrorKind::ParseError, "predictions lack a 'flow' column");

    std::map<std::string, std::size_t> odate;
    for (std::size_t d = 0; d < obs.dates.size(); ++d) odate[obs.dates[d]] = d;
    std::vector<metrics::StationSeriesPair> pairs;
    std::vector<std::vector<std::string>> pair_dates;
    for (std::size_t s = 0; s < pred.stations.size(); ++s) {
        const std::size_t os = obs.station_index(pred.stations[s]);
        metrics::StationSeriesPair p;
        p.station_id = pred.stations[s];
        std::vector<std::string> dates;
        for (std::size_t d = 0; d < pred.dates.size(); ++d) {
            const auto it = odate.find(pred.dates[d]);
            if (it == odate.end()) continue;
            const double y = obs.at(os, it->second, oc), yhat = pred.at(s, d, pc);
            if (!std::isfinite(y) || !std::isfinite(yhat)) continue;
            p.observed.push_back(y);
            p.predicted.push_back(yhat);
            dates.push_back(pred.dates[d]);
        }
        if (p.observed.empty()) fail(ErrorKind::IndexMismatch, "no overlapping days for station " + p.station_id);
        pairs.push_back(std::move(p));
        pair_dates.push_back(std::move(dates));
    }

    metrics::MetricsReport report;
    if (!a.embeddings.empty() && !a.runoff.empty()) {
        const AlignmentInput al = alignment_input(io::read_panel(a.embeddings), io::read_panel(a.runoff));
        m.input(a.embeddings);
        m.input(a.runoff);
        report = metrics::build_report(pairs, a.task, &al.z, al.dim, &al.r, a.k);
    } else {
        report = metrics::build_report(pairs, a.task);
    }

    const fs::path dir(a.out);
    io::write_text(dir / "metrics.json", metrics::to_json(report).dump(2) + "\n");
    {
        std::ofstream csv(dir / "metrics.csv");
        csv << "station_id,nse,kge,ve,rho\n";
        for (const auto& s : report.stations)
            csv << s.station_id << ',' << io::format_double(s.nse) << ',' << io::format_double(s.kge) << ','
                << io::format_double(s.ve) << ',' << io::format_double(s.rho) << '\n';
    }
    m.output(dir / "metrics.json");
    m.output(dir / "metrics.csv");
    for (std::size_t s = 0; s < pairs.size(); ++s) {
        const fs::path f = dir / "hydrographs" / (pairs[s].station_id + ".csv");
        std::ostringstream text;
        text << "date,observed,predicted\n";
        for (std::size_t d = 0; d < pairs[s].observed.size(); ++d)
            text << pair_dates[s][d] << ',' << io::format_double(pairs[s].observed[d]) << ','
                 << io::format_double(pairs[s].predicted[d]) << '\n';
        io::write_text(f, text.str());
        m.output(f);
        if (a.svg) {
            const fs::path g = dir / "hydrographs" / (pairs[s].station_id + ".svg");
            io::write_text(g, hydrograph_svg(pairs[s].station_id, pair_dates[s], pairs[s].observed, pairs[s].predicted));
            m.output(g);
        }
    }
    m.write(dir);
    std::cout << "mean NSE " << report.mean_nse << ", KGE " << report.mean_kge << ", VE " << report.mean_ve << ", rho "
              << report.mean_rho;
    if (report.knn_alignment) std::cout << ", kNN alignment " << *report.knn_alignment;
    std::cout << "\n";
}

// ---------------------------------------------------------------- align

void cmd_align(const std::string& embeddings, const std::string& runoff, std::size_t k, bool station_mean,
               const std::string& out) {
    Manifest m("align", 0);
    const AlignmentInput a = alignment_input(io::read_panel(embeddings), io::read_panel(runoff));
    m.input(embeddings);
    m.input(runoff);
    const std::size_t n = a.stations.size();
    std::vector<double> overlap(n, 0.0);
    double value = 0.0;
    if (station_mean) {
        std::vector<double> zbar(n * a.dim, 0.0), rbar(n, 0.0);
        for (std::size_t d = 0; d < a.dates.size(); ++d) {
            for (std::size_t i = 0; i < n * a.dim; ++i) zbar[i] += a.z[d][i] / static_cast<double>(a.dates.size());
            for (std::size_t i = 0; i < n; ++i) rbar[i] += a.r[d][i] / static_cast<double>(a.dates.size());
        }
        overlap = metrics::knn_overlaps(zbar, a.dim, rbar, k);
        value = metrics::knn_alignment(zbar, a.dim, rbar, k);
    } else {
        for (std::size_t d = 0; d < a.dates.size(); ++d) {
            const auto o = metrics::knn_overlaps(a.z[d], a.dim, a.r[d], k);
            for (std::size_t i = 0; i < n; ++i) overlap[i] += o[i] / static_cast<double>(a.dates.size());
            value += metrics::knn_alignment(a.z[d], a.dim, a.r[d], k) / static_cast<double>(a.dates.size());
        }
    }
    const fs::path dir(out);
    std::ostringstream csv;
    csv << "station_id,overlap\n";
    for (std::size_t i = 0; i < n; ++i) csv << a.stations[i] << ',' << io::format_double(overlap[i]) << '\n';
    io::write_text(dir / "overlap.csv", csv.str());
    io::write_text(dir / "alignment.json", json{{"knn_alignment", value},
                                                {"k", k},
                                                {"days", a.dates.size()},
                                                {"stations", n},
                                                {"mode", station_mean ? "station_mean" : "per_day"}}
                                                   .dump(2) + "\n");
    m.output(dir / "overlap.csv");
    m.output(dir / "alignment.json");
    m.write(dir);
    std::cout << "kNN alignment " << value << " (k = " << k << ", " << a.dates.size() << " days)\n";
}

// --------------------------------------------------------------- ablate

void cmd_ablate(const TrainArgs& a) {
    Manifest m("ablate", a.seed);
    pipeline::TrainConfig base = load_config(a.config, m);
    if (a.seed_given) base.seed = a.seed;
    m.config(pipeline::to_text(base));
    const io::GraphBundle g = io::read_graph_bundle(a.graph);
    m.input(fs::path(a.graph) / "stations.csv");
    m.input(fs::path(a.graph) / "edges.csv");
    const SeriesSet series = io::read_series(a.data, g.graph.stations());
    m.input(fs::path(a.data) / "forcings.csv");
    m.input(fs::path(a.data) / "streamflow.csv");

    struct Arm {
        const char* name;
        bool hn, rg, emb;
    };
    const Arm arms[] = {{"Vanilla", false, false, false}, {"+HN", true, false, false}, {"+RG", false, true, false},
                        {"+HN+RG", true, true, true}};
    json rows = json::array();
    json timing = json::object();
    std::ostringstream csv;
    csv << "arm,nse,kge,ve,rho\n";
    for (const Arm& arm : arms) {
        pipeline::TrainConfig c = base;
        c.use_hn = arm.hn;
        c.use_rg = arm.rg;
        c.use_embeddings = arm.emb;
        const TrainedRun run = train_and_test(c, series, g, nullptr);
        const auto& t = run.test;
        csv << arm.name << ',' << io::format_double(t.mean_nse) << ',' << io::format_double(t.mean_kge) << ','
            << io::format_double(t.mean_ve) << ',' << io::format_double(t.mean_rho) << '\n';
        rows.push_back({{"arm", arm.name}, {"nse", t.mean_nse}, {"kge", t.mean_kge}, {"ve", t.mean_ve}, {"rho", t.mean_rho}});
        timing[arm.name] = run.result.train_seconds;
        std::cout << arm.name << ": NSE " << t.mean_nse << ", KGE " << t.mean_kge << ", VE " << t.mean_ve << ", rho "
                  << t.mean_rho << "\n";
    }
    const fs::path dir(a.out);
    io::write_text(dir / "ablation.csv", csv.str());
    io::write_text(dir / "ablation.json", json{{"task", base.task}, {"seed", base.seed}, {"arms", rows}}.dump(2) + "\n");
    m.output(dir / "ablation.csv");
    m.output(dir / "ablation.json");
    m.extra() = {{"train_seconds", timing}};
    m.write(dir);
}

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::NonFinite: return 3;
        case ErrorKind::Internal: return 4;
        default: return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Causal streamflow forecasting"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    GraphArgs graph;
    auto* bg = app.add_subcommand("build-graph", "Validate a river graph from edges or a DEM and write a graph bundle");
    bg->add_option("--stations", graph.stations, "stations.csv");
    bg->add_option("--edges", graph.edges, "edges.csv");
    bg->add_option("--dem", graph.dem, "Whitespace-separated elevation grid");
    bg->add_option("--mask", graph.mask, "Station mask grid (nonzero = station), default every cell");
    bg->add_option("--out", graph.out, "Output directory")->required();

    std::string sim_config, sim_out;
    std::uint64_t sim_seed = 0;
    long sim_days = 0;
    auto* sim = app.add_subcommand("simulate", "Generate a synthetic basin dataset");
    sim->add_option("--config", sim_config, "Scenario key = value file");
    sim->add_option("--seed", sim_seed, "Random seed");
    sim->add_option("--days", sim_days, "Days to simulate (overrides the config)");
    sim->add_option("--out", sim_out, "Output directory")->required();

    TrainArgs tr;
    auto* tc = app.add_subcommand("train", "Train a model and write a run directory");
    tc->add_option("--config", tr.config, "Training key = value file");
    tc->add_option("--data", tr.data, "Dataset directory (forcings.csv, streamflow.csv)")->required();
    tc->add_option("--graph", tr.graph, "Graph bundle directory")->required();
    auto* train_seed = tc->add_option("--seed", tr.seed, "Random seed (overrides the config)");
    tc->add_option("--out", tr.out, "Run directory")->required();

    std::string fc_run, fc_data, fc_targets, fc_split = "test", fc_out;
    long fc_horizon = 0;
    bool fc_all = false;
    std::uint64_t unused_seed = 0;
    std::string unused_config;
    auto* fc = app.add_subcommand("forecast", "Rolling forecasts from a trained run");
    fc->add_option("--run", fc_run, "Run directory")->required();
    fc->add_option("--data", fc_data, "Dataset directory")->required();
    fc->add_option("--targets", fc_targets, "Comma-separated station ids (default all)");
    fc->add_option("--horizon", fc_horizon, "Lead time in days (default: the task's output window)");
    fc->add_option("--split", fc_split, "train, val, test or all");
    fc->add_flag("--all-leads", fc_all, "Also write predictions_lead<k>.csv for every lead up to the horizon");
    fc->add_option("--seed", unused_seed, "Accepted for uniformity; forecasts are deterministic");
    fc->add_option("--config", unused_config, "Accepted for uniformity; the run's own config is used");
    fc->add_option("--out", fc_out, "Output directory")->required();

    std::string em_run, em_data, em_split = "all", em_out;
    auto* em = app.add_subcommand("embed", "Export posterior-mean runoff embeddings");
    em->add_option("--run", em_run, "Run directory")->required();
    em->add_option("--data", em_data, "Dataset directory")->required();
    em->add_option("--split", em_split, "train, val, test or all");
    em->add_option("--out", em_out, "Output directory")->required();

    EvalArgs ev;
    auto* evc = app.add_subcommand("evaluate", "Metrics report and hydrographs for predictions against observations");
    evc->add_option("--predictions", ev.predictions, "station_id,date,flow")->required();
    evc->add_option("--observed", ev.observed, "station_id,date,flow_cms")->required();
    evc->add_option("--task", ev.task, "Task label stored in the report");
    evc->add_option("--embeddings", ev.embeddings, "Optional embeddings.csv for the alignment entry");
    evc->add_option("--runoff", ev.runoff, "Optional runoff_truth.csv for the alignment entry");
    evc->add_option("--k", ev.k, "Neighbours for the alignment entry");
    evc->add_flag("--svg", ev.svg, "Also write an SVG hydrograph per station");
    evc->add_option("--out", ev.out, "Output directory")->required();

    std::string al_emb, al_runoff, al_out;
    std::size_t al_k = 10;
    bool al_mean = false;
    auto* al = app.add_subcommand("align", "kNN alignment between embeddings and reference runoff");
    al->add_option("--embeddings", al_emb, "station_id,date,z0..")->required();
    al->add_option("--runoff", al_runoff, "station_id,date,runoff_mm")->required();
    al->add_option("--k", al_k, "Neighbours");
    al->add_flag("--station-mean", al_mean, "Compare per-station means instead of averaging over days");
    al->add_option("--out", al_out, "Output directory")->required();

    TrainArgs ab;
    auto* abc = app.add_subcommand("ablate", "Train Vanilla, +HN, +RG and +HN+RG arms and tabulate test metrics");
    abc->add_option("--config", ab.config, "Base training config");
    abc->add_option("--data", ab.data, "Dataset directory")->required();
    abc->add_option("--graph", ab.graph, "Graph bundle directory")->required();
    auto* ablate_seed = abc->add_option("--seed", ab.seed, "Random seed (overrides the config)");
    abc->add_option("--out", ab.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*bg) cmd_build_graph(graph);
        else if (*sim) cmd_simulate(sim_config, sim_seed, sim_days, sim_out);
        else if (*tc) {
            tr.seed_given = train_seed->count() > 0;
            cmd_train(tr);
        } else if (*fc) cmd_forecast(fc_run, fc_data, fc_targets, fc_horizon, fc_split, fc_all, fc_out);
        else if (*em) cmd_embed(em_run, em_data, em_split, em_out);
        else if (*evc) cmd_evaluate(ev);
        else if (*al) cmd_align(al_emb, al_runoff, al_k, al_mean, al_out);
        else if (*abc) {
            ab.seed_given = ablate_seed->count() > 0;
            cmd_ablate(ab);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
