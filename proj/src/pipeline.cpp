#include "csf/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "csf/checkpoint.hpp"
#include "csf/error.hpp"
#include "csf/optimizer.hpp"

namespace csf::pipeline {

using num::Shape;
using num::Tensor;
using num::Var;

ForecastTask task_by_name(const std::string& name) {
    if (name == "short") return {"short", 7, 1};
    if (name == "medium") return {"medium", 14, 3};
    if (name == "long") return {"long", 28, 7};
    fail(ErrorKind::ConfigInvalid, "unknown task '" + name + "' (expected short, medium or long)");
}

// ---------------------------------------------------------------- splits

TemporalSplit temporal_split(std::size_t days, const SplitFractions& f) {
    if (!(f.train >= 0.0 && f.val >= 0.0 && f.test >= 0.0) || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
        fail(ErrorKind::ConfigInvalid, "split fractions must be non-negative and sum to 1");
    const double total = static_cast<double>(days);
    const auto train = static_cast<std::size_t>(std::floor(total * f.train + 1e-9));
    const auto val = static_cast<std::size_t>(std::floor(total * f.val + 1e-9));
    const std::size_t used = std::min(days, train + val);
    TemporalSplit s{{0, train}, {train, used}, {used, days}};
    if (s.train.size() == 0) fail(ErrorKind::TooShort, "training split is empty");
    if (s.val.size() == 0) fail(ErrorKind::TooShort, "validation split is empty");
    if (s.test.size() == 0) fail(ErrorKind::TooShort, "test split is empty");
    return s;
}

// --------------------------------------------------------- preprocessing

double percentile(std::vector<double> values, double p) {
    if (values.empty()) fail(ErrorKind::MissingData, "percentile of an empty series");
    if (!(p >= 0.0 && p <= 100.0)) fail(ErrorKind::ConfigInvalid, "percentile must lie in [0, 100]");
    std::sort(values.begin(), values.end());
    const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double PreprocessStats::standardize_flow(std::size_t i, double flow) const {
    const StationStats& s = stations.at(i);
    return (std::min(flow, s.flow_cap) - s.flow_mean) / s.flow_std;
}

double PreprocessStats::inverse_flow(std::size_t i, double z) const {
    const StationStats& s = stations.at(i);
    return z * s.flow_std + s.flow_mean;
}

double PreprocessStats::capped_flow(std::size_t i, double flow) const { return std::min(flow, stations.at(i).flow_cap); }

namespace {

struct Moments {
    double mean = 0.0;
    double std = 0.0;
};

Moments moments(const std::vector<double>& v) {
    Moments m;
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(v.size()));
    return m;
}

// Fills NaN runs by linear interpolation, holding the nearest value at the ends.
void fill_gaps(std::vector<double>& v, const std::string& what) {
    std::vector<std::size_t> known;
    for (std::size_t t = 0; t < v.size(); ++t)
        if (!std::isnan(v[t])) known.push_back(t);
    if (known.empty()) fail(ErrorKind::MissingData, what + " has no observed values");
    for (std::size_t t = 0; t < v.size(); ++t) {
        if (!std::isnan(v[t])) continue;
        auto next = std::upper_bound(known.begin(), known.end(), t);
        if (next == known.begin()) {
            v[t] = v[known.front()];
        } else if (next == known.end()) {
            v[t] = v[known.back()];
        } else {
            const std::size_t b = *next, a = *(next - 1);
            const double w = static_cast<double>(t - a) / static_cast<double>(b - a);
            v[t] = v[a] + w * (v[b] - v[a]);
        }
    }
}

// Checks lengths and NaNs; returns a gap-free copy.
SeriesSet clean_series(const SeriesSet& raw, bool impute) {
    const std::size_t days = raw.days();
    if (raw.stations.empty()) fail(ErrorKind::MissingData, "no stations");
    SeriesSet out = raw;
    for (auto& s : out.stations) {
        if (s.forcings.size() != days || s.flow.size() != days)
            fail(ErrorKind::MissingData, "station " + s.station_id + " does not cover all " + std::to_string(days) +
                                             " days");
        if (s.statics.size() != kStaticCount)
            fail(ErrorKind::MissingData, "station " + s.station_id + " lacks static features");
        auto check = [&](std::vector<double>& col, const std::string& name) {
            for (std::size_t t = 0; t < col.size(); ++t) {
                if (!std::isnan(col[t])) continue;
                if (!impute)
                    fail(ErrorKind::MissingData, "station " + s.station_id + " " + name + " missing on " +
                                                     raw.dates[t]);
                fill_gaps(col, "station " + s.station_id + " " + name);
                return;
            }
        };
        check(s.flow, "flow");
        for (std::size_t c = 0; c < kForcingCount; ++c) {
            std::vector<double> col(days);
            for (std::size_t t = 0; t < days; ++t) col[t] = s.forcings[t][c];
            check(col, std::string(kForcingNames[c]));
            for (std::size_t t = 0; t < days; ++t) s.forcings[t][c] = col[t];
        }
    }
    return out;
}

SeriesSet standardize(const SeriesSet& clean, const PreprocessStats& stats) {
    SeriesSet out = clean;
    for (std::size_t i = 0; i < out.stations.size(); ++i) {
        StationSeries& s = out.stations[i];
        const StationStats& st = stats.stations[i];
        for (double& q : s.flow) q = stats.standardize_flow(i, q);
        for (auto& f : s.forcings)
            for (std::size_t c = 0; c < kForcingCount; ++c) f[c] = (f[c] - st.forcing_mean[c]) / st.forcing_std[c];
        for (std::size_t k = 0; k < kStaticCount; ++k)
            s.statics[k] = stats.static_std[k] > 0.0 ? (s.statics[k] - stats.static_mean[k]) / stats.static_std[k] : 0.0;
    }
    return out;
}

}  // namespace

Preprocessed preprocess(const SeriesSet& raw, const DayRange& train, const PreprocessOptions& options) {
    if (train.end > raw.days() || train.size() < 2)
        fail(ErrorKind::TooShort, "training range does not fit the series");
    const SeriesSet clean = clean_series(raw, options.impute);
    PreprocessStats stats;
    stats.options = options;
    stats.train = train;

    double global_cap = 0.0;
    if (options.cap_mode == CapMode::Global) {
        std::vector<double> pooled;
        for (const auto& s : clean.stations) pooled.insert(pooled.end(), s.flow.begin() + train.begin, s.flow.begin() + train.end);
        global_cap = percentile(pooled, options.cap_percentile);
    }
    for (const auto& s : clean.stations) {
        StationStats st;
        st.station_id = s.station_id;
        std::vector<double> flow(s.flow.begin() + train.begin, s.flow.begin() + train.end);
        st.flow_cap = options.cap_mode == CapMode::Global ? global_cap : percentile(flow, options.cap_percentile);
        for (double& q : flow) q = std::min(q, st.flow_cap);
        const Moments fm = moments(flow);
        if (!(fm.std > 0.0)) fail(ErrorKind::DegenerateSeries, "station " + s.station_id + " flow is constant");
        st.flow_mean = fm.mean;
        st.flow_std = fm.std;
        for (std::size_t c = 0; c < kForcingCount; ++c) {
            std::vector<double> col;
            for (std::size_t t = train.begin; t < train.end; ++t) col.push_back(s.forcings[t][c]);
            const Moments m = moments(col);
            if (!(m.std > 0.0))
                fail(ErrorKind::DegenerateSeries,
                     "station " + s.station_id + " " + std::string(kForcingNames[c]) + " is constant");
            st.forcing_mean[c] = m.mean;
            st.forcing_std[c] = m.std;
        }
        stats.stations.push_back(st);
    }
    for (std::size_t k = 0; k < kStaticCount; ++k) {
        std::vector<double> col;
        for (const auto& s : clean.stations) col.push_back(s.statics[k]);
        const Moments m = moments(col);
        stats.static_mean.push_back(m.mean);
        stats.static_std.push_back(m.std > 1e-12 * std::max(1.0, std::abs(m.mean)) ? m.std : 0.0);
    }
    return {standardize(clean, stats), stats};
}

SeriesSet apply_stats(const SeriesSet& raw, const PreprocessStats& stats, bool impute) {
    if (raw.stations.size() != stats.stations.size())
        fail(ErrorKind::IndexMismatch, "series has " + std::to_string(raw.stations.size()) + " stations, statistics " +
                                           std::to_string(stats.stations.size()));
    for (std::size_t i = 0; i < raw.stations.size(); ++i)
        if (raw.stations[i].station_id != stats.stations[i].station_id)
            fail(ErrorKind::IndexMismatch, "station order differs at " + raw.stations[i].station_id);
    return standardize(clean_series(raw, impute), stats);
}

nlohmann::json to_json(const PreprocessStats& s) {
    nlohmann::json j;
    j["cap_percentile"] = s.options.cap_percentile;
    j["cap_mode"] = s.options.cap_mode == CapMode::Global ? "global" : "per_station";
    j["impute"] = s.options.impute;
    j["train"] = {s.train.begin, s.train.end};
    j["static_mean"] = s.static_mean;
    j["static_std"] = s.static_std;
    j["stations"] = nlohmann::json::array();
    for (const auto& st : s.stations)
        j["stations"].push_back({{"station_id", st.station_id},
                                 {"flow_cap", st.flow_cap},
                                 {"flow_mean", st.flow_mean},
                                 {"flow_std", st.flow_std},
                                 {"forcing_mean", st.forcing_mean},
                                 {"forcing_std", st.forcing_std}});
    return j;
}

PreprocessStats stats_from_json(const nlohmann::json& j) {
    try {
        PreprocessStats s;
        s.options.cap_percentile = j.at("cap_percentile").get<double>();
        s.options.cap_mode = j.at("cap_mode").get<std::string>() == "global" ? CapMode::Global : CapMode::PerStation;
        s.options.impute = j.at("impute").get<bool>();
        s.train = {j.at("train").at(0).get<std::size_t>(), j.at("train").at(1).get<std::size_t>()};
        s.static_mean = j.at("static_mean").get<std::vector<double>>();
        s.static_std = j.at("static_std").get<std::vector<double>>();
        for (const auto& e : j.at("stations")) {
            StationStats st;
            st.station_id = e.at("station_id").get<std::string>();
            st.flow_cap = e.at("flow_cap").get<double>();
            st.flow_mean = e.at("flow_mean").get<double>();
            st.flow_std = e.at("flow_std").get<double>();
            st.forcing_mean = e.at("forcing_mean").get<std::array<double, kForcingCount>>();
            st.forcing_std = e.at("forcing_std").get<std::array<double, kForcingCount>>();
            s.stations.push_back(st);
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("preprocessing statistics: ") + e.what());
    }
}

// --------------------------------------------------------------- windows

FeatureCube build_features(const SeriesSet& s, std::size_t forcing_window) {
    if (forcing_window == 0) fail(ErrorKind::ConfigInvalid, "forcing window must be at least one day");
    FeatureCube cube;
    cube.days = s.days();
    cube.nodes = s.stations.size();
    cube.dates = s.dates;
    const std::size_t vin = forcing_window * kForcingCount + kStaticCount;
    cube.flow = Tensor(Shape{cube.days, cube.nodes});
    cube.forcings = Tensor(Shape{cube.days, cube.nodes, kForcingCount});
    cube.vae_input = Tensor(Shape{cube.days, cube.nodes, vin});
    for (std::size_t t = 0; t < cube.days; ++t) {
        for (std::size_t i = 0; i < cube.nodes; ++i) {
            const StationSeries& st = s.stations[i];
            const std::size_t cell = t * cube.nodes + i;
            cube.flow[cell] = st.flow.empty() ? 0.0 : st.flow[t];
            for (std::size_t c = 0; c < kForcingCount; ++c) cube.forcings[cell * kForcingCount + c] = st.forcings[t][c];
            // oldest day first; days before the record stay at the standardized mean
            double* x = cube.vae_input.ptr() + cell * vin;
            for (std::size_t j = 0; j < forcing_window; ++j) {
                const std::size_t lag = forcing_window - 1 - j;
                if (lag > t) continue;
                for (std::size_t c = 0; c < kForcingCount; ++c) x[j * kForcingCount + c] = st.forcings[t - lag][c];
            }
            for (std::size_t k = 0; k < kStaticCount; ++k) x[forcing_window * kForcingCount + k] = st.statics[k];
        }
    }
    return cube;
}

std::vector<Window> make_windows(const DayRange& range, const ForecastTask& task) {
    const std::size_t span = task.input_days + task.output_days;
    if (range.size() < span)
        fail(ErrorKind::TooShort, std::to_string(range.size()) + " days cannot hold a " +
                                      std::to_string(task.input_days) + "+" + std::to_string(task.output_days) +
                                      " day window");
    std::vector<Window> out;
    for (std::size_t s = range.begin; s + span <= range.end; ++s)
        out.push_back({s, s + task.input_days, task.input_days, task.output_days});
    return out;
}

// -------------------------------------------------------------- batching

namespace {

// Fisher-Yates over our own generator, so schedules do not depend on the
// standard library's shuffle algorithm.
template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

std::vector<Batch> cluster_batches(std::size_t n_windows, std::size_t n_nodes, const flow::Grouping& grouping, Rng& rng,
                                   bool use_hn, std::size_t batch_windows) {
    if (batch_windows == 0) fail(ErrorKind::ConfigInvalid, "batch_windows must be positive");
    auto chunk = [&](std::vector<std::size_t> order, const std::string& group, const std::vector<std::size_t>& nodes,
                     std::vector<Batch>& out) {
        for (std::size_t b = 0; b < order.size(); b += batch_windows) {
            Batch batch{group, nodes, {}};
            batch.windows.assign(order.begin() + b, order.begin() + std::min(order.size(), b + batch_windows));
            out.push_back(std::move(batch));
        }
    };
    std::vector<std::size_t> order(n_windows);
    std::vector<Batch> out;
    if (!use_hn) {
        std::iota(order.begin(), order.end(), 0);
        shuffle_in_place(order, rng);
        std::vector<std::size_t> all(n_nodes);
        std::iota(all.begin(), all.end(), 0);
        chunk(order, "", all, out);
        return out;
    }
    if (grouping.assignment.size() != n_nodes)
        fail(ErrorKind::IndexMismatch, "grouping does not cover every node");
    for (const auto& g : grouping.groups()) {
        std::iota(order.begin(), order.end(), 0);
        shuffle_in_place(order, rng);
        chunk(order, g, grouping.members(g), out);
    }
    shuffle_in_place(out, rng);
    return out;
}

// ---------------------------------------------------------------- config

namespace {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
    fail(ErrorKind::ConfigInvalid, "invalid value '" + value + "' for key '" + key + "'");
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v);
    return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v);
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    bad_value(key, v);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
    const std::string& v = value;
    auto size = [&] { return static_cast<std::size_t>(parse_uint(key, v)); };
    if (key == "task") {
        task_by_name(v);
        c.task = v;
    } else if (key == "lambda") c.lambda = parse_double(key, v);
    else if (key == "seed") c.seed = parse_uint(key, v);
    else if (key == "epochs") c.epochs = size();
    else if (key == "batch_windows") c.batch_windows = size();
    else if (key == "use_rg") c.use_rg = parse_bool(key, v);
    else if (key == "use_hn") c.use_hn = parse_bool(key, v);
    else if (key == "use_embeddings") c.use_embeddings = parse_bool(key, v);
    else if (key == "use_forcings") c.use_forcings = parse_bool(key, v);
    else if (key == "latent_dim") c.latent_dim = size();
    else if (key == "hidden_dim") c.hidden_dim = size();
    else if (key == "vae_hidden_dim") c.vae_hidden_dim = size();
    else if (key == "vae_window") c.vae_window = size();
    else if (key == "kernel_width") c.kernel_width = size();
    else if (key == "blocks") c.blocks = size();
    else if (key == "split_train") c.split.train = parse_double(key, v);
    else if (key == "split_val") c.split.val = parse_double(key, v);
    else if (key == "split_test") c.split.test = parse_double(key, v);
    else if (key == "step_size") c.adam.step_size = parse_double(key, v);
    else if (key == "beta1") c.adam.beta1 = parse_double(key, v);
    else if (key == "beta2") c.adam.beta2 = parse_double(key, v);
    else if (key == "epsilon") c.adam.epsilon = parse_double(key, v);
    else if (key == "kl_weight") c.kl_weight = parse_double(key, v);
    else if (key == "mode") {
        if (v == "joint") c.mode = TrainMode::Joint;
        else if (v == "staged") c.mode = TrainMode::Staged;
        else bad_value(key, v);
    } else if (key == "stage1_epochs") c.stage1_epochs = size();
    else if (key == "patience") c.patience = size();
    else if (key == "cap_percentile") c.preprocess.cap_percentile = parse_double(key, v);
    else if (key == "cap_mode") {
        if (v == "per_station") c.preprocess.cap_mode = CapMode::PerStation;
        else if (v == "global") c.preprocess.cap_mode = CapMode::Global;
        else bad_value(key, v);
    } else if (key == "impute") c.preprocess.impute = parse_bool(key, v);
    else if (key == "direct_multi_output") c.direct_multi_output = parse_bool(key, v);
    else if (key == "distance_neighbors") c.distance_neighbors = size();
    else fail(ErrorKind::ConfigInvalid, "unknown config key '" + key + "'");
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            fail(ErrorKind::ConfigInvalid, "line " + std::to_string(number) + " is not key = value: '" + line + "'");
        set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

std::string to_text(const TrainConfig& c) {
    std::ostringstream o;
    auto b = [](bool v) { return v ? "true" : "false"; };
    o << "task = " << c.task << "\n"
      << "lambda = " << format_double(c.lambda) << "\n"
      << "seed = " << c.seed << "\n"
      << "epochs = " << c.epochs << "\n"
      << "batch_windows = " << c.batch_windows << "\n"
      << "use_rg = " << b(c.use_rg) << "\n"
      << "use_hn = " << b(c.use_hn) << "\n"
      << "use_embeddings = " << b(c.use_embeddings) << "\n"
      << "use_forcings = " << b(c.use_forcings) << "\n"
      << "latent_dim = " << c.latent_dim << "\n"
      << "hidden_dim = " << c.hidden_dim << "\n"
      << "vae_hidden_dim = " << c.vae_hidden_dim << "\n"
      << "vae_window = " << c.vae_window << "\n"
      << "kernel_width = " << c.kernel_width << "\n"
      << "blocks = " << c.blocks << "\n"
      << "split_train = " << format_double(c.split.train) << "\n"
      << "split_val = " << format_double(c.split.val) << "\n"
      << "split_test = " << format_double(c.split.test) << "\n"
      << "step_size = " << format_double(c.adam.step_size) << "\n"
      << "beta1 = " << format_double(c.adam.beta1) << "\n"
      << "beta2 = " << format_double(c.adam.beta2) << "\n"
      << "epsilon = " << format_double(c.adam.epsilon) << "\n"
      << "kl_weight = " << format_double(c.kl_weight) << "\n"
      << "mode = " << (c.mode == TrainMode::Staged ? "staged" : "joint") << "\n"
      << "stage1_epochs = " << c.stage1_epochs << "\n"
      << "patience = " << c.patience << "\n"
      << "cap_percentile = " << format_double(c.preprocess.cap_percentile) << "\n"
      << "cap_mode = " << (c.preprocess.cap_mode == CapMode::Global ? "global" : "per_station") << "\n"
      << "impute = " << b(c.preprocess.impute) << "\n"
      << "direct_multi_output = " << b(c.direct_multi_output) << "\n"
      << "distance_neighbors = " << c.distance_neighbors << "\n";
    return o.str();
}

bool TrainConfig::operator==(const TrainConfig& other) const { return to_text(*this) == to_text(other); }

void validate_config(const TrainConfig& c) {
    task_by_name(c.task);
    if (!(c.lambda >= 0.0 && c.lambda <= 1.0))
        fail(ErrorKind::LambdaOutOfRange, "lambda=" + format_double(c.lambda) + " must lie in [0, 1]");
    auto positive = [](std::size_t v, const char* key) {
        if (v == 0) fail(ErrorKind::ConfigInvalid, std::string(key) + " must be positive");
    };
    positive(c.batch_windows, "batch_windows");
    positive(c.latent_dim, "latent_dim");
    positive(c.hidden_dim, "hidden_dim");
    positive(c.vae_hidden_dim, "vae_hidden_dim");
    positive(c.kernel_width, "kernel_width");
    positive(c.blocks, "blocks");
    positive(c.distance_neighbors, "distance_neighbors");
    if (!(c.adam.step_size > 0.0)) fail(ErrorKind::ConfigInvalid, "step_size must be positive");
    if (!(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0 && c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0))
        fail(ErrorKind::ConfigInvalid, "beta1 and beta2 must lie in [0, 1)");
    if (!(c.adam.epsilon > 0.0)) fail(ErrorKind::ConfigInvalid, "epsilon must be positive");
    if (!(c.kl_weight >= 0.0)) fail(ErrorKind::ConfigInvalid, "kl_weight must be non-negative");
    if (!(c.preprocess.cap_percentile > 0.0 && c.preprocess.cap_percentile <= 100.0))
        fail(ErrorKind::ConfigInvalid, "cap_percentile must lie in (0, 100]");
    const SplitFractions& f = c.split;
    if (!(f.train > 0.0 && f.val > 0.0 && f.test > 0.0) || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
        fail(ErrorKind::ConfigInvalid, "split fractions must be positive and sum to 1");
}

// ----------------------------------------------------------------- model

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
    constexpr double kEarthRadiusKm = 6371.0088;
    constexpr double rad = 3.14159265358979323846 / 180.0;
    const double dlat = (lat2 - lat1) * rad, dlon = (lon2 - lon1) * rad;
    const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(lat1 * rad) * std::cos(lat2 * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

Tensor distance_weights(const std::vector<flow::Station>& s, std::size_t neighbors) {
    const std::size_t n = s.size();
    Tensor d(Shape{n, n});
    std::vector<double> pairs;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            d.at(i, j) = d.at(j, i) = haversine_km(s[i].lat, s[i].lon, s[j].lat, s[j].lon);
            pairs.push_back(d.at(i, j));
        }
    Tensor w(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) w.at(i, i) = 1.0;
    if (pairs.empty()) return w;
    const double sigma = percentile(pairs, 50.0);
    auto kernel = [&](std::size_t i, std::size_t j) {
        return sigma > 0.0 ? std::exp(-(d.at(i, j) * d.at(i, j)) / (sigma * sigma)) : 1.0;
    };
    const std::size_t keep = std::min(neighbors, n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::size_t>> order;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) order.emplace_back(d.at(i, j), j);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end());
        for (std::size_t m = 0; m < keep; ++m) {
            const std::size_t j = order[m].second;
            w.at(i, j) = w.at(j, i) = kernel(i, j);
        }
    }
    return w;
}

Tensor river_weights(const flow::FlowGraph& graph) {
    Tensor w = flow::aggregation_matrix(flow::causal_adjacency(graph), false, false);
    for (std::size_t i = 0; i < graph.size(); ++i) w.at(i, i) += 1.0;
    return w;
}

Tensor subset_aggregation(const Tensor& raw, const std::vector<std::size_t>& nodes) {
    const std::size_t k = nodes.size();
    Tensor m(Shape{k, k});
    for (std::size_t a = 0; a < k; ++a) {
        double sum = 0.0;
        for (std::size_t b = 0; b < k; ++b) sum += m.at(a, b) = raw.at(nodes[a], nodes[b]);
        if (sum > 0.0)
            for (std::size_t b = 0; b < k; ++b) m.at(a, b) /= sum;
    }
    return m;
}

Tensor CsfModel::aggregation() const {
    std::vector<std::size_t> all(raw_weights.dim(0));
    std::iota(all.begin(), all.end(), 0);
    return subset_aggregation(raw_weights, all);
}

std::size_t forcing_window(const TrainConfig& config) {
    return config.vae_window > 0 ? config.vae_window : task_by_name(config.task).input_days;
}

namespace {

// Architecture fields that follow from the config.
void derive_shapes(CsfModel& m) {
    const TrainConfig& c = m.config;
    m.task = task_by_name(c.task);
    m.vae = {forcing_window(c) * kForcingCount + kStaticCount, c.vae_hidden_dim, c.latent_dim, c.kl_weight};
    m.basin.input_features = 1 + (c.use_embeddings ? c.latent_dim : 0) + (c.use_forcings ? kForcingCount : 0);
    m.basin.hidden_dim = c.hidden_dim;
    m.basin.kernel_width = c.kernel_width;
    m.basin.blocks = c.blocks;
    m.basin.output_steps = c.direct_multi_output ? m.task.output_days : 1;
}

}  // namespace

CsfModel init_model(const TrainConfig& config, const flow::FlowGraph& graph, const PreprocessStats& stats) {
    validate_config(config);
    if (stats.stations.size() != graph.size())
        fail(ErrorKind::IndexMismatch, "statistics cover " + std::to_string(stats.stations.size()) +
                                           " stations, graph has " + std::to_string(graph.size()));
    CsfModel m;
    m.config = config;
    derive_shapes(m);
    m.stats = stats;
    Rng init = Rng(config.seed).split(rng_stream::kInit);
    if (config.use_embeddings) {
        Rng vae_rng = init.split(1);
        vae::init_params(m.params, m.vae, vae_rng);
    }
    Rng basin_rng = init.split(2);
    stgcn::init_params(m.params, m.basin, basin_rng);
    m.raw_weights = config.use_rg ? river_weights(graph) : distance_weights(graph.stations(), config.distance_neighbors);
    for (const auto& s : graph.stations()) m.station_ids.push_back(s.id);
    return m;
}

Tensor model_features(const CsfModel& model, const FeatureCube& cube, const DayRange& range) {
    if (range.end > cube.days) fail(ErrorKind::IndexMismatch, "feature range exceeds the calendar");
    const std::size_t n = cube.nodes, len = range.size(), f = model.feature_count();
    const std::size_t d = model.config.use_embeddings ? model.config.latent_dim : 0;
    const std::size_t vin = cube.vae_input.dim(2);
    Tensor z;
    if (d > 0) {
        if (vin != model.vae.input_dim)
            fail(ErrorKind::IndexMismatch, "feature cube forcing window does not match the model");
        Tensor x(Shape{len * n, vin},
                 std::vector<double>(cube.vae_input.ptr() + range.begin * n * vin, cube.vae_input.ptr() + range.end * n * vin));
        z = vae::posterior_mean(model.params, x);
    }
    Tensor out(Shape{len, n, f});
    for (std::size_t r = 0; r < len * n; ++r) {
        double* row = out.ptr() + r * f;
        const std::size_t cell = range.begin * n + r;
        row[0] = cube.flow[cell];
        for (std::size_t k = 0; k < d; ++k) row[1 + k] = z[r * d + k];
        if (model.config.use_forcings)
            for (std::size_t c = 0; c < kForcingCount; ++c) row[1 + d + c] = cube.forcings[cell * kForcingCount + c];
    }
    return out;
}

StepPredictor step_predictor(const CsfModel& model) {
    return [params = model.params, basin = model.basin, m = model.aggregation()](const Tensor& windows) {
        return stgcn::predict(params, basin, windows, m);
    };
}

Tensor rolling_forecast_batch(const StepPredictor& predictor, const Tensor& features, std::span<const std::size_t> origins,
                              std::size_t input_days, std::size_t horizon, std::size_t flow_channel) {
    if (features.rank() != 3) fail(ErrorKind::ShapeMismatch, "features must be [days, nodes, channels]");
    if (input_days == 0 || horizon == 0) fail(ErrorKind::HistoryTooShort, "need at least one input day and one step");
    const std::size_t days = features.dim(0), n = features.dim(1), f = features.dim(2);
    if (flow_channel >= f) fail(ErrorKind::ShapeMismatch, "flow channel out of range");
    const std::size_t span = input_days + horizon - 1;
    for (std::size_t o : origins)
        if (o + span > days)
            fail(ErrorKind::HistoryTooShort, "origin " + std::to_string(o) + " needs " + std::to_string(span) +
                                                 " days, " + std::to_string(days - std::min(days, o)) + " available");
    const std::size_t batch = origins.size();
    const std::size_t day_size = n * f;
    Tensor buffer(Shape{batch, span, n, f});
    for (std::size_t b = 0; b < batch; ++b)
        std::copy_n(features.ptr() + origins[b] * day_size, span * day_size, buffer.ptr() + b * span * day_size);
    Tensor out(Shape{batch, horizon, n});
    Tensor windows(Shape{batch, input_days, n, f});
    for (std::size_t s = 0; s < horizon; ++s) {
        for (std::size_t b = 0; b < batch; ++b)
            std::copy_n(buffer.ptr() + (b * span + s) * day_size, input_days * day_size,
                        windows.ptr() + b * input_days * day_size);
        const Tensor pred = predictor(windows);
        if (pred.rank() != 3 || pred.dim(0) != batch || pred.dim(1) != n)
            fail(ErrorKind::ShapeMismatch, "predictor returned " + num::shape_str(pred.shape()));
        const std::size_t steps = pred.dim(2);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < n; ++i) {
                const double y = pred[(b * n + i) * steps];
                out[(b * horizon + s) * n + i] = y;
                if (s + 1 < horizon) buffer[((b * span + input_days + s) * n + i) * f + flow_channel] = y;
            }
    }
    return out;
}

Tensor rolling_forecast(const StepPredictor& predictor, const Tensor& features, std::size_t input_days,
                        std::size_t horizon, std::size_t flow_channel) {
    if (features.rank() != 3) fail(ErrorKind::ShapeMismatch, "features must be [days, nodes, channels]");
    if (features.dim(0) < input_days + horizon - 1 || input_days == 0 || horizon == 0)
        fail(ErrorKind::HistoryTooShort, std::to_string(features.dim(0)) + " days cannot feed " +
                                             std::to_string(input_days) + " input days and " +
                                             std::to_string(horizon) + " steps");
    const std::size_t origin = 0;
    Tensor out = rolling_forecast_batch(predictor, features, std::span(&origin, 1), input_days, horizon, flow_channel);
    return out.reshaped(Shape{horizon, features.dim(1)});
}

ForecastSeries forecast_range(const CsfModel& model, const FeatureCube& cube, const DayRange& range, std::size_t lead) {
    const ForecastTask& task = model.task;
    const bool direct = model.basin.output_steps > 1;
    if (lead < 1 || (direct && lead > task.output_days))
        fail(ErrorKind::ConfigInvalid, "lead " + std::to_string(lead) + " outside 1.." + std::to_string(task.output_days));
    const auto windows = make_windows(range, {task.name, task.input_days, direct ? task.output_days : lead});
    const Tensor features = model_features(model, cube, range);
    const std::size_t n = cube.nodes;
    ForecastSeries out;
    out.lead = lead;
    out.flow.assign(n, {});
    const StepPredictor predictor = step_predictor(model);
    constexpr std::size_t kChunk = 64;
    for (std::size_t w0 = 0; w0 < windows.size(); w0 += kChunk) {
        const std::size_t w1 = std::min(windows.size(), w0 + kChunk);
        std::vector<std::size_t> origins;
        for (std::size_t w = w0; w < w1; ++w) origins.push_back(windows[w].input_begin - range.begin);
        std::vector<double> values(origins.size() * n);
        if (direct) {
            const std::size_t f = features.dim(2), day = n * f;
            Tensor batch(Shape{origins.size(), task.input_days, n, f});
            for (std::size_t b = 0; b < origins.size(); ++b)
                std::copy_n(features.ptr() + origins[b] * day, task.input_days * day, batch.ptr() + b * task.input_days * day);
            const Tensor pred = predictor(batch);
            const std::size_t steps = pred.dim(2);
            for (std::size_t b = 0; b < origins.size(); ++b)
                for (std::size_t i = 0; i < n; ++i) values[b * n + i] = pred[(b * n + i) * steps + lead - 1];
        } else {
            const Tensor pred = rolling_forecast_batch(predictor, features, origins, task.input_days, lead);
            for (std::size_t b = 0; b < origins.size(); ++b)
                for (std::size_t i = 0; i < n; ++i) values[b * n + i] = pred[(b * lead + lead - 1) * n + i];
        }
        for (std::size_t b = 0; b < origins.size(); ++b) {
            out.target_days.push_back(range.begin + origins[b] + task.input_days + lead - 1);
            for (std::size_t i = 0; i < n; ++i) out.flow[i].push_back(model.stats.inverse_flow(i, values[b * n + i]));
        }
    }
    return out;
}

metrics::MetricsReport evaluate(const CsfModel& model, const SeriesSet& raw, const FeatureCube& cube, const DayRange& range,
                                std::vector<metrics::StationSeriesPair>* pairs) {
    const ForecastSeries fc = forecast_range(model, cube, range, model.task.output_days);
    std::vector<metrics::StationSeriesPair> series;
    for (std::size_t i = 0; i < cube.nodes; ++i) {
        metrics::StationSeriesPair p;
        p.station_id = raw.stations[i].station_id;
        for (std::size_t day : fc.target_days) p.observed.push_back(model.stats.capped_flow(i, raw.stations[i].flow[day]));
        p.predicted = fc.flow[i];
        series.push_back(std::move(p));
    }
    metrics::MetricsReport report = metrics::build_report(series, model.task.name);
    report.metadata["seed"] = std::to_string(model.config.seed);
    if (pairs) *pairs = std::move(series);
    return report;
}

// -------------------------------------------------------------- training

nlohmann::json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},
            {"total_loss", r.total_loss},
            {"station_loss", r.station_loss},
            {"prediction_loss", r.prediction_loss},
            {"val_nse", r.val_nse}};
}

namespace {

struct BatchGraph {
    Var window;           // [B, T, k, f]
    Var station_loss;     // valid only with trainable embeddings
    Tensor target;        // [B, k, steps]
};

// Builds one batch on the tape. Rows run over (window, day, node).
BatchGraph assemble(num::Tape& tape, const CsfModel& model, const FeatureCube& cube, const std::vector<Window>& all,
                    const Batch& batch, const vae::VaeVars* vars, Rng* reparam_rng, const Tensor* frozen_z) {
    const std::size_t bsz = batch.windows.size(), k = batch.nodes.size(), n = cube.nodes;
    const std::size_t steps_in = model.task.input_days, out_steps = model.basin.output_steps;
    const std::size_t rows = bsz * steps_in * k;
    const std::size_t d = model.config.use_embeddings ? model.config.latent_dim : 0;
    const std::size_t vin = cube.vae_input.dim(2);

    Tensor flow(Shape{rows, 1}), forcing(Shape{rows, kForcingCount}), x(Shape{rows, vin});
    Tensor target(Shape{bsz, k, out_steps});
    std::size_t r = 0;
    for (std::size_t b = 0; b < bsz; ++b) {
        const Window& w = all[batch.windows[b]];
        for (std::size_t t = 0; t < steps_in; ++t)
            for (std::size_t node : batch.nodes) {
                const std::size_t cell = (w.input_begin + t) * n + node;
                flow[r] = cube.flow[cell];
                std::copy_n(cube.forcings.ptr() + cell * kForcingCount, kForcingCount, forcing.ptr() + r * kForcingCount);
                std::copy_n(cube.vae_input.ptr() + cell * vin, vin, x.ptr() + r * vin);
                ++r;
            }
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t s = 0; s < out_steps; ++s)
                target[(b * k + a) * out_steps + s] = cube.flow[(w.target_begin + s) * n + batch.nodes[a]];
    }

    BatchGraph g;
    g.target = std::move(target);
    std::vector<Var> parts{tape.constant(std::move(flow))};
    if (d > 0) {
        if (frozen_z) {
            Tensor z(Shape{rows, d});
            r = 0;
            for (std::size_t b = 0; b < bsz; ++b)
                for (std::size_t t = 0; t < steps_in; ++t)
                    for (std::size_t node : batch.nodes) {
                        const std::size_t cell = (all[batch.windows[b]].input_begin + t) * n + node;
                        std::copy_n(frozen_z->ptr() + cell * d, d, z.ptr() + r * d);
                        ++r;
                    }
            parts.push_back(tape.constant(std::move(z)));
        } else {
            Var xv = tape.constant(std::move(x));
            const vae::Posterior post = vae::encode(*vars, xv);
            const Var sample = vae::reparameterize(post.mu, post.logvar, *reparam_rng);
            g.station_loss = vae::elbo_loss(xv, vae::decode(*vars, sample), post.mu, post.logvar, model.config.kl_weight);
            parts.push_back(post.mu);
        }
    }
    if (model.config.use_forcings) parts.push_back(tape.constant(std::move(forcing)));
    Var features = parts.size() == 1 ? parts[0] : num::concat(parts, 1);
    g.window = num::reshape(features, Shape{bsz, steps_in, k, model.feature_count()});
    return g;
}

// Stage one of staged training: the VAE alone on every training station-day.
double pretrain_vae(CsfModel& model, const FeatureCube& cube, const DayRange& train, Rng& shuffle_root, Rng& reparam) {
    const std::size_t n = cube.nodes;
    std::vector<std::size_t> cells;
    for (std::size_t t = train.begin; t < train.end; ++t)
        for (std::size_t i = 0; i < n; ++i) cells.push_back(t * n + i);
    num::OptimizerState opt{model.config.adam, {}, {}, 0};
    constexpr std::size_t kRows = 256;
    const std::size_t vin = cube.vae_input.dim(2);
    double last = 0.0;
    for (std::size_t epoch = 1; epoch <= model.config.stage1_epochs; ++epoch) {
        Rng rng = shuffle_root.split(1'000'000 + epoch);
        shuffle_in_place(cells, rng);
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t c0 = 0; c0 < cells.size(); c0 += kRows) {
            const std::size_t c1 = std::min(cells.size(), c0 + kRows);
            Tensor x(Shape{c1 - c0, vin});
            for (std::size_t r = c0; r < c1; ++r)
                std::copy_n(cube.vae_input.ptr() + cells[r] * vin, vin, x.ptr() + (r - c0) * vin);
            num::Tape tape;
            const auto vars = vae::bind(tape, model.params);
            Var xv = tape.constant(std::move(x));
            const auto post = vae::encode(vars, xv);
            Var loss = vae::elbo_loss(xv, vae::decode(vars, vae::reparameterize(post.mu, post.logvar, reparam)), post.mu,
                                      post.logvar, model.config.kl_weight);
            tape.backward(loss);
            num::optimizer_step(model.params, tape.gradients(), opt);
            sum += loss.value().item();
            ++count;
        }
        last = sum / static_cast<double>(count);
    }
    return last;
}

}  // namespace

TrainResult train(const TrainConfig& config, const SeriesSet& raw, const flow::FlowGraph& graph,
                  const flow::Grouping& grouping, const EpochCallback& on_epoch) {
    validate_config(config);
    if (raw.stations.size() != graph.size())
        fail(ErrorKind::IndexMismatch, "series has " + std::to_string(raw.stations.size()) + " stations, graph " +
                                           std::to_string(graph.size()));
    for (std::size_t i = 0; i < graph.size(); ++i)
        if (raw.stations[i].station_id != graph.station(i).id)
            fail(ErrorKind::IndexMismatch, "series station " + raw.stations[i].station_id + " does not match node " +
                                               graph.station(i).id);
    const TemporalSplit split = temporal_split(raw.days(), config.split);
    const Preprocessed pre = preprocess(raw, split.train, config.preprocess);
    const FeatureCube cube = build_features(pre.standardized, forcing_window(config));

    TrainResult result;
    result.model = init_model(config, graph, pre.stats);
    CsfModel& model = result.model;
    const ForecastTask fit_task{model.task.name, model.task.input_days, model.basin.output_steps};
    const auto windows = make_windows(split.train, fit_task);
    make_windows(split.val, model.task);

    Rng root(config.seed);
    Rng shuffle_root = root.split(rng_stream::kShuffle);
    Rng reparam = root.split(rng_stream::kReparam);

    const bool embeddings = config.use_embeddings;
    const bool staged = embeddings && config.mode == TrainMode::Staged;
    double frozen_station_loss = 0.0;
    Tensor frozen_z;
    if (staged && config.epochs > 0) {
        frozen_station_loss = pretrain_vae(model, cube, split.train, shuffle_root, reparam);
        const std::size_t rows = cube.days * cube.nodes, vin = cube.vae_input.dim(2);
        frozen_z = vae::posterior_mean(
            model.params, Tensor(Shape{rows, vin}, std::vector<double>(cube.vae_input.ptr(), cube.vae_input.ptr() + rows * vin)));
    }

    std::map<std::string, Tensor> aggregation_cache;
    auto aggregation_for = [&](const Batch& b) -> const Tensor& {
        auto it = aggregation_cache.find(b.group);
        if (it == aggregation_cache.end())
            it = aggregation_cache.emplace(b.group, subset_aggregation(model.raw_weights, b.nodes)).first;
        return it->second;
    };

    num::OptimizerState opt{config.adam, {}, {}, 0};
    num::ParamStore best = model.params;
    double best_nse = -std::numeric_limits<double>::infinity();
    std::size_t stall = 0;
    double seconds = 0.0;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        Rng rng = shuffle_root.split(epoch);
        const auto batches = cluster_batches(windows.size(), cube.nodes, grouping, rng, config.use_hn, config.batch_windows);
        double sum_total = 0.0, sum_station = 0.0, sum_pred = 0.0;
        for (const Batch& batch : batches) {
            num::Tape tape;
            vae::VaeVars vars;
            const bool joint = embeddings && !staged;
            if (joint) vars = vae::bind(tape, model.params);
            BatchGraph g = assemble(tape, model, cube, windows, batch, joint ? &vars : nullptr, &reparam,
                                    staged ? &frozen_z : nullptr);
            Var y = stgcn::forward(tape, model.params, model.basin, g.window, aggregation_for(batch));
            Var pred = stgcn::prediction_loss(tape.constant(std::move(g.target)), y);
            Var total = joint ? stgcn::total_loss(g.station_loss, pred, config.lambda) : pred;
            tape.backward(total);
            num::optimizer_step(model.params, tape.gradients(), opt);
            sum_total += total.value().item();
            sum_pred += pred.value().item();
            sum_station += joint ? g.station_loss.value().item() : frozen_station_loss;
        }
        seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        const double count = static_cast<double>(batches.size());
        EpochRecord rec{epoch, sum_total / count, sum_station / count, sum_pred / count, 0.0};
        rec.val_nse = evaluate(model, raw, cube, split.val).mean_nse;
        result.log.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (rec.val_nse > best_nse) {
            best_nse = rec.val_nse;
            best = model.params;
            result.best_epoch = epoch;
            stall = 0;
        } else if (++stall >= config.patience) {
            break;
        }
    }
    model.params = std::move(best);
    result.train_seconds = seconds;
    return result;
}

// ----------------------------------------------------------- persistence

void save_model(const std::string& dir, const CsfModel& model) {
    nlohmann::json meta;
    meta["config"] = to_text(model.config);
    meta["preprocess"] = to_json(model.stats);
    meta["station_ids"] = model.station_ids;
    meta["raw_weights"] = std::vector<double>(model.raw_weights.data().begin(), model.raw_weights.data().end());
    meta["basin"] = {{"input_features", model.basin.input_features},
                     {"hidden_dim", model.basin.hidden_dim},
                     {"kernel_width", model.basin.kernel_width},
                     {"blocks", model.basin.blocks},
                     {"output_steps", model.basin.output_steps}};
    num::save_checkpoint(dir, model.params, meta);
}

CsfModel load_model(const std::string& dir) {
    num::Checkpoint ck = num::load_checkpoint(dir);
    CsfModel m;
    try {
        m.config = parse_config(ck.metadata.at("config").get<std::string>());
        derive_shapes(m);
        m.stats = stats_from_json(ck.metadata.at("preprocess"));
        m.station_ids = ck.metadata.at("station_ids").get<std::vector<std::string>>();
        const std::size_t n = m.station_ids.size();
        m.raw_weights = Tensor(Shape{n, n}, ck.metadata.at("raw_weights").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("model manifest: ") + e.what());
    }
    m.params = std::move(ck.params);
    return m;
}

}  // namespace csf::pipeline
