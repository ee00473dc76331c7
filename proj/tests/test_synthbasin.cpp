#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "csf/error.hpp"
#include "csf/synthbasin.hpp"

using namespace csf;
using namespace csf::synth;

namespace {

flow::Station st(const std::string& id) { return flow::Station{id, 31.0, -97.0, 100.0, "12070101", "1207", 1}; }

// Hand-built scenario over the given edges with uniform parameters.
BasinScenario manual(std::size_t n, std::vector<flow::Edge> edges, double kappa, double c = 1.0, double a = 1.0,
                     int delay = 1, double alpha = 1.0) {
    std::vector<flow::Station> s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(st("N" + std::to_string(i)));
    BasinScenario sc;
    sc.grouping = flow::hierarchical_groups(s);
    sc.graph = flow::make_graph(s, std::move(edges));
    sc.storage_coef.assign(n, kappa);
    sc.runoff_coef.assign(n, c);
    sc.area_coef.assign(n, a);
    sc.delay.assign(n, delay);
    sc.attenuation.assign(n, alpha);
    return sc;
}

SeriesSet precip_only(const std::vector<std::vector<double>>& p) {
    SeriesSet s;
    s.dates = date_range("2000-01-01", p[0].size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        StationSeries ss;
        ss.station_id = "N" + std::to_string(i);
        for (double v : p[i]) ss.forcings.push_back({v, 20.0, 10.0, 3.0});
        s.stations.push_back(ss);
    }
    return s;
}

double haversine_like(const flow::Station& a, const flow::Station& b) {
    return std::hypot(a.lat - b.lat, (a.lon - b.lon) * std::cos(a.lat * 3.14159265 / 180.0));
}

}  // namespace

TEST_CASE("generate_basin examples") {
    Rng rng(1);
    BasinScenario one = generate_basin(1, 1, rng);
    CHECK(one.graph.size() == 1);
    CHECK(one.graph.edges().empty());
    CHECK(one.graph.outlets().size() == 1);

    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng r(seed);
        BasinScenario sc = generate_basin(30, 3, r);
        CHECK(sc.graph.outlets().size() == 3);
        CHECK(sc.grouping.groups().size() == 3);
        for (const auto& g : sc.grouping.groups()) {
            const auto members = sc.grouping.members(g);
            CHECK(members.size() >= 5);
            CHECK(members.size() <= 15);
            // One tree per group: exactly one outlet inside it.
            std::size_t outlets = 0;
            for (auto m : members) outlets += !sc.graph.downstream(m).has_value();
            CHECK(outlets == 1);
        }
        for (std::size_t i = 0; i < 30; ++i) {
            CHECK(sc.storage_coef[i] > 0.0);
            CHECK(sc.storage_coef[i] < 1.0);
            CHECK(sc.runoff_coef[i] > 0.0);
            CHECK(sc.runoff_coef[i] <= 1.0);
            CHECK(sc.delay[i] >= 1);
            CHECK(sc.attenuation[i] > 0.0);
            CHECK(sc.attenuation[i] <= 1.0);
        }
    }
    Rng a(9), b(9);
    BasinScenario x = generate_basin(30, 3, a), y = generate_basin(30, 3, b);
    CHECK(x.graph.stations() == y.graph.stations());
    CHECK(x.graph.edges() == y.graph.edges());
    CHECK(x.storage_coef == y.storage_coef);
}

TEST_CASE("some cross-group pairs are closer than same-group pairs") {
    std::size_t confounded = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng r(seed);
        BasinScenario sc = generate_basin(30, 3, r);
        const auto& s = sc.graph.stations();
        bool found = false;
        for (std::size_t i = 0; i < s.size() && !found; ++i) {
            double far_same = 0.0;
            for (std::size_t j = 0; j < s.size(); ++j)
                if (s[j].huc8 == s[i].huc8) far_same = std::max(far_same, haversine_like(s[i], s[j]));
            for (std::size_t j = 0; j < s.size(); ++j)
                if (s[j].huc8 != s[i].huc8 && haversine_like(s[i], s[j]) < far_same) found = true;
        }
        confounded += found;
    }
    CHECK(confounded == 10);
}

TEST_CASE("forcing examples") {
    Rng r(3);
    BasinScenario sc = generate_basin(30, 3, r);
    Rng fr(4);
    SeriesSet f = generate_forcings(sc, 3650, fr);
    CHECK(f.days() == 3650);
    CHECK(f.dates.front() == "2000-01-01");
    const double target = sc.forcing.stationary_wet();
    for (const auto& s : f.stations) {
        std::size_t wet = 0;
        for (const auto& d : s.forcings) {
            CHECK(d[kPrecip] >= 0.0);
            CHECK(d[kTmax] > d[kTmin]);
            CHECK(d[kWind] > 0.0);
            wet += d[kPrecip] > 0.0;
        }
        CHECK(std::abs(double(wet) / 3650.0 - target) <= 0.05);
    }
}

TEST_CASE("forcings are correlated within groups") {
    Rng r(3);
    BasinScenario sc = generate_basin(30, 3, r);
    Rng fr(4);
    SeriesSet f = generate_forcings(sc, 2000, fr);
    auto corr = [&](std::size_t i, std::size_t j) {
        double mi = 0, mj = 0;
        const auto& a = f.stations[i].forcings;
        const auto& b = f.stations[j].forcings;
        for (std::size_t t = 0; t < a.size(); ++t) {
            mi += a[t][kPrecip];
            mj += b[t][kPrecip];
        }
        mi /= double(a.size());
        mj /= double(a.size());
        double c = 0, vi = 0, vj = 0;
        for (std::size_t t = 0; t < a.size(); ++t) {
            c += (a[t][kPrecip] - mi) * (b[t][kPrecip] - mj);
            vi += std::pow(a[t][kPrecip] - mi, 2);
            vj += std::pow(b[t][kPrecip] - mj, 2);
        }
        return c / std::sqrt(vi * vj);
    };
    double within = 0, across = 0;
    std::size_t nw = 0, na = 0;
    for (std::size_t i = 0; i < 30; ++i)
        for (std::size_t j = i + 1; j < 30; ++j) {
            if (sc.grouping.assignment[i] == sc.grouping.assignment[j]) {
                within += corr(i, j);
                ++nw;
            } else {
                across += corr(i, j);
                ++na;
            }
        }
    CHECK(within / double(nw) > across / double(na) + 0.2);
}

TEST_CASE("runoff examples") {
    BasinScenario sc = manual(1, {}, 0.3);
    auto zero = simulate_runoff(sc, precip_only({std::vector<double>(50, 0.0)}));
    for (double v : zero[0]) CHECK(v == 0.0);

    std::vector<double> impulse(400, 0.0);
    impulse[0] = 1.0;
    auto r = simulate_runoff(sc, precip_only({impulse}));
    CHECK(r[0][0] == 0.0);
    double total = 0.0;
    for (std::size_t t = 0; t + 1 < r[0].size(); ++t)
        CHECK(r[0][t + 1] == doctest::Approx(0.3 * std::pow(0.7, double(t))).epsilon(1e-12));
    for (double v : r[0]) total += v;
    CHECK(std::abs(total - 1.0) < 1e-12);

    BasinScenario full = manual(1, {}, 1.0);
    std::vector<double> p{3.0, 0.0, 1.5, 2.0, 0.0, 7.0};
    auto rf = simulate_runoff(full, precip_only({p}));
    CHECK(rf[0][0] == 0.0);
    for (std::size_t t = 0; t + 1 < p.size(); ++t) CHECK(rf[0][t + 1] == p[t]);
}

TEST_CASE("evaporation removes storage before release") {
    BasinScenario sc = manual(1, {}, 0.5);
    sc.evaporation = 0.1;  // 2 mm at tmax 20
    auto r = simulate_runoff(sc, precip_only({{10.0, 0.0, 0.0}}));
    // s1 = 10, minus 2 -> 8, release 4; s2 = 4 - 2 = 2, release 1.
    CHECK(r[0][1] == doctest::Approx(4.0));
    CHECK(r[0][2] == doctest::Approx(1.0));
}

TEST_CASE("routing examples") {
    BasinScenario chain = manual(2, {{0, 1}}, 0.5, 1.0, 1.0, 1, 1.0);
    chain.area_coef = {1.7, 1.0};
    std::vector<std::vector<double>> runoff{{1.0, 2.0, 0.5, 3.0}, {0.0, 0.0, 0.0, 0.0}};
    auto q = route_streamflow(chain, runoff);
    for (std::size_t t = 0; t < 4; ++t) CHECK(q[0][t] == 1.7 * runoff[0][t]);
    CHECK(q[1][0] == 0.0);
    for (std::size_t t = 1; t < 4; ++t) CHECK(q[1][t] == q[0][t - 1]);
}

TEST_CASE("mass conservation at tree outlets") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ScenarioConfig cfg;
        cfg.alpha_min = cfg.alpha_max = 1.0;
        cfg.evaporation = 0.0;
        Rng r(seed);
        BasinScenario sc = generate_basin(cfg, r);
        Rng fr(seed + 100);
        SeriesSet f = generate_forcings(sc, 600, fr);
        // Rain stops after day 300; the rest is drain-out time.
        for (auto& s : f.stations)
            for (std::size_t t = 300; t < 600; ++t) s.forcings[t][kPrecip] = 0.0;
        auto runoff = simulate_runoff(sc, f);
        auto q = route_streamflow(sc, runoff);
        for (std::size_t outlet : sc.graph.outlets()) {
            const auto closure = flow::upstream_closure(sc.graph, {outlet});
            double upstream = 0.0;
            for (std::size_t i : closure) upstream += sc.area_coef[i] * std::accumulate(runoff[i].begin(), runoff[i].end(), 0.0);
            const double out = std::accumulate(q[outlet].begin(), q[outlet].end(), 0.0);
            CHECK(std::abs(out - upstream) <= 1e-9 * std::max(1.0, upstream));
        }
    }
}

TEST_CASE("ground truth is causal and deterministic") {
    SimulatedBasin a = simulate(ScenarioConfig{}, 400, 77);
    SimulatedBasin b = simulate(ScenarioConfig{}, 400, 77);
    for (std::size_t i = 0; i < a.series.stations.size(); ++i) {
        CHECK(a.series.stations[i].flow == b.series.stations[i].flow);
        for (double v : a.series.stations[i].flow) CHECK(v >= 0.0);
    }
    const auto& sc = a.scenario;
    Rng pick(1);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t target = pick.below(sc.graph.size());
        const auto closure = flow::upstream_closure(sc.graph, {target});
        SeriesSet perturbed = a.series;
        for (std::size_t j = 0; j < sc.graph.size(); ++j)
            if (!closure.count(j))
                for (auto& d : perturbed.stations[j].forcings) d[kPrecip] += 5.0;
        auto q = route_streamflow(sc, simulate_runoff(sc, perturbed));
        CHECK(q[target] == a.series.stations[target].flow);
    }
}
