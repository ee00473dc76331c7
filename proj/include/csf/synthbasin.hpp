#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "csf/flowgraph.hpp"
#include "csf/rng.hpp"
#include "csf/series.hpp"

namespace csf::synth {

/// Weather generator settings shared by every station.
struct ForcingParams {
    double p_dry_to_wet = 0.25;
    double p_wet_to_wet = 0.6;
    double gamma_shape = 0.8;
    double gamma_scale = 10.0;        // mm
    double shared_fraction = 0.7;     // within-group share of wet-state noise and rain amount
    double temp_mean = 20.0;          // deg C, daily maximum
    double temp_amplitude = 9.0;
    double group_temp_spacing = 2.0;  // deg C between neighbouring groups

    /// Long-run wet-day frequency of the two-state chain.
    double stationary_wet() const { return p_dry_to_wet / (1.0 - p_wet_to_wet + p_dry_to_wet); }
};

struct ScenarioConfig {
    std::size_t stations = 30;
    std::size_t groups = 3;
    double kappa_min = 0.2;
    double kappa_max = 0.6;
    int delay_min = 1;
    int delay_max = 2;
    double alpha_min = 0.8;
    double alpha_max = 1.0;
    double evaporation = 0.02;  // mm per deg C of tmax per day; 0 disables
    ForcingParams forcing;
};

/**
 * Synthetic basin with known dynamics. Per-node vectors are indexed like the
 * graph; delay/attenuation describe the node's outgoing edge and are unused
 * at outlets.
 */
struct BasinScenario {
    flow::FlowGraph graph;
    flow::Grouping grouping;
    std::vector<double> storage_coef;  // kappa, per day
    std::vector<double> runoff_coef;   // c
    std::vector<double> area_coef;     // a
    std::vector<int> delay;            // days
    std::vector<double> attenuation;   // alpha
    double evaporation = 0.0;
    ForcingParams forcing;
};

/**
 * Random forest with one rooted tree per group. Groups occupy contiguous
 * index ranges and sit side by side, so stations near a group boundary are
 * often closer to another group's stations than to their own headwaters.
 */
BasinScenario generate_basin(const ScenarioConfig& config, Rng& rng);
BasinScenario generate_basin(std::size_t n_stations, std::size_t n_groups, Rng& rng);

/// Daily forcings for every station (flow left empty).
SeriesSet generate_forcings(const BasinScenario& scenario, std::size_t n_days, Rng& rng,
                            const std::string& start_date = "2000-01-01");

/// Linear reservoir per station; result[station][day] in mm/day.
std::vector<std::vector<double>> simulate_runoff(const BasinScenario& scenario, const SeriesSet& forcings);

/// Delayed, attenuated accumulation of a_i * r_i in topological order.
std::vector<std::vector<double>> route_streamflow(const BasinScenario& scenario,
                                                  const std::vector<std::vector<double>>& runoff);

struct SimulatedBasin {
    BasinScenario scenario;
    SeriesSet series;  // forcings plus routed flow
    std::vector<std::vector<double>> runoff;
};

/// generate_basin + generate_forcings + simulate_runoff + route_streamflow.
SimulatedBasin simulate(const ScenarioConfig& config, std::size_t n_days, std::uint64_t seed,
                        const std::string& start_date = "2000-01-01");

}  // namespace csf::synth
