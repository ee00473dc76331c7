#include "csf/synthbasin.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "csf/error.hpp"

namespace csf::synth {

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

std::string two_digits(std::size_t v) {
    std::string s = std::to_string(v);
    return s.size() < 2 ? "0" + s : s;
}

std::vector<std::size_t> group_sizes(std::size_t n, std::size_t groups, Rng& rng) {
    std::vector<std::size_t> sizes(groups, n / groups);
    for (std::size_t g = 0; g < n % groups; ++g) ++sizes[g];
    const std::size_t base = n / groups;
    // Random single-node transfers keep every group within +-50% of the mean.
    const std::size_t lo = std::max<std::size_t>(1, (base + 1) / 2);
    const std::size_t hi = base + base / 2;
    const std::size_t moves = groups > 1 ? n / 4 : 0;
    for (std::size_t m = 0; m < moves; ++m) {
        const std::size_t from = rng.below(groups);
        const std::size_t to = rng.below(groups);
        if (from == to || sizes[from] <= lo || sizes[to] + 1 > hi) continue;
        --sizes[from];
        ++sizes[to];
    }
    return sizes;
}

}  // namespace

BasinScenario generate_basin(std::size_t n_stations, std::size_t n_groups, Rng& rng) {
    ScenarioConfig config;
    config.stations = n_stations;
    config.groups = n_groups;
    return generate_basin(config, rng);
}

BasinScenario generate_basin(const ScenarioConfig& config, Rng& rng) {
    const std::size_t n = config.stations;
    const std::size_t groups = config.groups;
    if (groups < 1 || n < groups)
        fail(ErrorKind::ConfigInvalid, "need stations >= groups >= 1");
    if (!(config.kappa_min > 0.0 && config.kappa_max < 1.0 && config.kappa_min <= config.kappa_max))
        fail(ErrorKind::ConfigInvalid, "storage coefficient range must lie in (0, 1)");
    if (config.delay_min < 1 || config.delay_max < config.delay_min)
        fail(ErrorKind::ConfigInvalid, "delays must be >= 1 day");
    if (!(config.alpha_min > 0.0 && config.alpha_max <= 1.0 && config.alpha_min <= config.alpha_max))
        fail(ErrorKind::ConfigInvalid, "attenuation range must lie in (0, 1]");

    const auto sizes = group_sizes(n, groups, rng);
    std::vector<flow::Station> stations;
    std::vector<flow::Edge> edges;
    BasinScenario sc;
    sc.evaporation = config.evaporation;
    sc.forcing = config.forcing;

    std::size_t offset = 0;
    for (std::size_t g = 0; g < groups; ++g) {
        const std::string huc4 = "1207";
        const std::string huc8 = huc4 + "01" + two_digits(g + 1);
        const double center_lon = -97.5 + 0.55 * static_cast<double>(g);
        for (std::size_t k = 0; k < sizes[g]; ++k) {
            flow::Station s;
            const std::size_t index = offset + k;
            s.id = "S" + std::to_string(1000 + index).substr(1);
            s.huc4 = huc4;
            s.huc8 = huc8;
            s.soil_class = static_cast<int>(rng.below(4));
            if (k == 0) {
                s.lat = 31.0 + rng.uniform(-0.05, 0.05);
                s.lon = center_lon + rng.uniform(-0.05, 0.05);
                s.elevation = 80.0 + rng.uniform(0.0, 20.0);
            } else {
                const std::size_t parent = offset + rng.below(k);
                const flow::Station& p = stations[parent];
                const double angle = rng.uniform(0.15, 0.85) * std::numbers::pi;
                const double step = rng.uniform(0.08, 0.18);
                s.lat = p.lat + step * std::sin(angle);
                s.lon = p.lon + step * std::cos(angle);
                s.elevation = p.elevation + rng.uniform(10.0, 40.0);
                edges.emplace_back(index, parent);
            }
            const double kappa_span = config.kappa_max - config.kappa_min;
            sc.storage_coef.push_back(config.kappa_min +
                                      kappa_span * (s.soil_class + rng.uniform()) / 4.0);
            sc.runoff_coef.push_back(rng.uniform(0.5, 0.9));
            sc.area_coef.push_back(rng.uniform(0.5, 2.0));
            sc.delay.push_back(config.delay_min +
                               static_cast<int>(rng.below(static_cast<std::uint64_t>(config.delay_max - config.delay_min + 1))));
            sc.attenuation.push_back(rng.uniform(config.alpha_min, config.alpha_max));
            stations.push_back(std::move(s));
        }
        offset += sizes[g];
    }
    sc.grouping = flow::hierarchical_groups(stations);
    sc.graph = flow::make_graph(std::move(stations), std::move(edges));
    return sc;
}

SeriesSet generate_forcings(const BasinScenario& scenario, std::size_t n_days, Rng& rng,
                            const std::string& start_date) {
    if (n_days < 1) fail(ErrorKind::ConfigInvalid, "need at least one day");
    const ForcingParams& fp = scenario.forcing;
    const std::size_t n = scenario.graph.size();
    const auto groups = scenario.grouping.groups();
    std::vector<std::size_t> group_of(n);
    for (std::size_t i = 0; i < n; ++i)
        group_of[i] = static_cast<std::size_t>(
            std::find(groups.begin(), groups.end(), scenario.grouping.assignment[i]) - groups.begin());

    SeriesSet set;
    set.dates = date_range(start_date, n_days);
    set.stations.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        set.stations[i].station_id = scenario.graph.station(i).id;
        set.stations[i].forcings.resize(n_days);
        set.stations[i].statics = static_features(scenario.graph.station(i));
    }

    const double rho = fp.shared_fraction;
    if (!(rho >= 0.0 && rho <= 1.0)) fail(ErrorKind::ConfigInvalid, "shared_fraction must lie in [0, 1]");
    const double pi_wet = fp.stationary_wet();
    std::vector<bool> wet(n, false);
    std::vector<double> anomaly(groups.size(), 0.0);
    std::vector<double> station_bias(n);
    for (std::size_t i = 0; i < n; ++i) station_bias[i] = rng.normal() * 0.5;

    for (std::size_t t = 0; t < n_days; ++t) {
        std::vector<double> shared_noise(groups.size()), shared_rain(groups.size()), shared_wind(groups.size());
        for (std::size_t g = 0; g < groups.size(); ++g) {
            shared_noise[g] = rng.normal();
            shared_rain[g] = rho > 0.0 ? rng.gamma(fp.gamma_shape * rho, fp.gamma_scale) : 0.0;
            shared_wind[g] = rng.normal();
            anomaly[g] = 0.7 * anomaly[g] + 1.5 * rng.normal();
        }
        const double season =
            fp.temp_mean + fp.temp_amplitude * std::sin(2.0 * std::numbers::pi * (static_cast<double>(t) - 105.0) / 365.25);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t g = group_of[i];
            // Gaussian copula: every station's wet/dry sequence is exactly the
            // configured Markov chain, correlated within its group.
            const double u = normal_cdf(std::sqrt(rho) * shared_noise[g] + std::sqrt(1.0 - rho) * rng.normal());
            if (t == 0)
                wet[i] = u < pi_wet;
            else
                wet[i] = u < (wet[i] ? fp.p_wet_to_wet : fp.p_dry_to_wet);
            // Gamma(k rho) + Gamma(k (1 - rho)) with a common scale is Gamma(k).
            const double own_rain = rho < 1.0 ? rng.gamma(fp.gamma_shape * (1.0 - rho), fp.gamma_scale) : 0.0;
            const double precip = wet[i] ? shared_rain[g] + own_rain : 0.0;

            const flow::Station& st = scenario.graph.station(i);
            const double group_offset =
                fp.group_temp_spacing * (static_cast<double>(g) - 0.5 * static_cast<double>(groups.size() - 1));
            const double lapse = -0.0065 * (st.elevation - 100.0);
            const double tmax = season + anomaly[g] + group_offset + lapse + station_bias[i] + rng.normal() -
                                (wet[i] ? 2.0 : 0.0);
            const double range = 4.0 + rng.gamma(4.0, 1.5);
            const double wind = std::exp(1.2 + 0.3 * shared_wind[g] + 0.2 * rng.normal());

            set.stations[i].forcings[t] = {precip, tmax, tmax - range, wind};
        }
    }
    return set;
}

std::vector<std::vector<double>> simulate_runoff(const BasinScenario& scenario, const SeriesSet& forcings) {
    const std::size_t n = scenario.graph.size();
    if (forcings.stations.size() != n) fail(ErrorKind::IndexMismatch, "forcings do not cover every station");
    std::vector<std::vector<double>> runoff(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& f = forcings.stations[i].forcings;
        const double kappa = scenario.storage_coef[i];
        const double c = scenario.runoff_coef[i];
        runoff[i].resize(f.size());
        double storage = 0.0;
        for (std::size_t t = 0; t < f.size(); ++t) {
            if (scenario.evaporation > 0.0)
                storage -= std::min(storage, scenario.evaporation * std::max(0.0, f[t][kTmax]));
            const double release = kappa * storage;
            runoff[i][t] = release;
            storage = storage + c * f[t][kPrecip] - release;
        }
    }
    return runoff;
}

std::vector<std::vector<double>> route_streamflow(const BasinScenario& scenario,
                                                  const std::vector<std::vector<double>>& runoff) {
    const std::size_t n = scenario.graph.size();
    if (runoff.size() != n) fail(ErrorKind::IndexMismatch, "runoff does not cover every station");
    std::vector<std::vector<double>> q(n);
    for (std::size_t i : scenario.graph.topological_order()) {
        const std::size_t days = runoff[i].size();
        q[i].resize(days);
        for (std::size_t t = 0; t < days; ++t) q[i][t] = scenario.area_coef[i] * runoff[i][t];
        for (std::size_t j : scenario.graph.upstream(i)) {
            const auto delay = static_cast<std::size_t>(scenario.delay[j]);
            const double alpha = scenario.attenuation[j];
            for (std::size_t t = delay; t < days; ++t) q[i][t] += alpha * q[j][t - delay];
        }
    }
    return q;
}

SimulatedBasin simulate(const ScenarioConfig& config, std::size_t n_days, std::uint64_t seed,
                        const std::string& start_date) {
    Rng root(seed);
    Rng basin_rng = root.split(rng_stream::kBasin);
    Rng forcing_rng = root.split(rng_stream::kForcing);
    SimulatedBasin out;
    out.scenario = generate_basin(config, basin_rng);
    out.series = generate_forcings(out.scenario, n_days, forcing_rng, start_date);
    out.runoff = simulate_runoff(out.scenario, out.series);
    const auto flow = route_streamflow(out.scenario, out.runoff);
    for (std::size_t i = 0; i < flow.size(); ++i) out.series.stations[i].flow = flow[i];
    return out;
}

}  // namespace csf::synth
