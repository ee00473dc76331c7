#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csf/autodiff.hpp"
#include "csf/basin_stgcn.hpp"
#include "csf/flowgraph.hpp"
#include "csf/metrics.hpp"
#include "csf/optimizer.hpp"
#include "csf/rng.hpp"
#include "csf/series.hpp"
#include "csf/station_vae.hpp"

namespace csf::pipeline {

struct ForecastTask {
    std::string name;
    std::size_t input_days = 7;
    std::size_t output_days = 1;

    bool operator==(const ForecastTask&) const = default;
};

/// short 7 -> 1, medium 14 -> 3, long 28 -> 7. Throws ConfigInvalid otherwise.
ForecastTask task_by_name(const std::string& name);

// ---------------------------------------------------------------- splits

struct SplitFractions {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

/// Half-open day range [begin, end).
struct DayRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool operator==(const DayRange&) const = default;
};

struct TemporalSplit {
    DayRange train;
    DayRange val;
    DayRange test;
};

/// Contiguous chronological segments, train first. Train and validation
/// lengths are floor(days * fraction); test takes the rest. Throws TooShort
/// when a segment would be empty and ConfigInvalid for bad fractions.
TemporalSplit temporal_split(std::size_t days, const SplitFractions& fractions = {});

// --------------------------------------------------------- preprocessing

enum class CapMode { PerStation, Global };

struct PreprocessOptions {
    double cap_percentile = 99.0;
    CapMode cap_mode = CapMode::PerStation;
    /// Fill NaN gaps by linear interpolation instead of throwing MissingData.
    bool impute = false;
};

/// Linear-interpolation percentile (p in [0, 100]) of the values.
double percentile(std::vector<double> values, double p);

struct StationStats {
    std::string station_id;
    double flow_cap = 0.0;
    double flow_mean = 0.0;
    double flow_std = 1.0;
    std::array<double, kForcingCount> forcing_mean{};
    std::array<double, kForcingCount> forcing_std{};

    bool operator==(const StationStats&) const = default;
};

/// Everything needed to standardize new data and to map predictions back.
struct PreprocessStats {
    PreprocessOptions options;
    DayRange train;
    std::vector<StationStats> stations;
    std::vector<double> static_mean;
    std::vector<double> static_std;  // 0 marks a constant static feature

    double standardize_flow(std::size_t station, double flow) const;
    double inverse_flow(std::size_t station, double z) const;
    double capped_flow(std::size_t station, double flow) const;
};

nlohmann::json to_json(const PreprocessStats& stats);
PreprocessStats stats_from_json(const nlohmann::json& j);

struct Preprocessed {
    SeriesSet standardized;
    PreprocessStats stats;
};

/**
 * Caps flow at the training-split percentile, then z-scores flow and every
 * forcing per station with training-split moments. Static features are
 * standardized across stations. Throws MissingData for NaN gaps (unless
 * imputing) or ragged series and DegenerateSeries for a zero-variance column.
 */
Preprocessed preprocess(const SeriesSet& raw, const DayRange& train, const PreprocessOptions& options = {});

/// Applies existing statistics to a series set with the same stations.
SeriesSet apply_stats(const SeriesSet& raw, const PreprocessStats& stats, bool impute = false);

// --------------------------------------------------------------- windows

/// Dense per-day arrays of a standardized series set.
struct FeatureCube {
    std::size_t days = 0;
    std::size_t nodes = 0;
    std::vector<std::string> dates;
    num::Tensor flow;       // [days, nodes]
    num::Tensor forcings;   // [days, nodes, kForcingCount]
    num::Tensor vae_input;  // [days, nodes, window * kForcingCount + kStaticCount]
};

/// vae_input row for day t: forcings of days t - window + 1 ..= t, then statics.
FeatureCube build_features(const SeriesSet& standardized, std::size_t forcing_window = 1);

struct Window {
    std::size_t input_begin = 0;   // first input day
    std::size_t target_begin = 0;  // first target day, right after the inputs
    std::size_t input_days = 0;
    std::size_t output_days = 0;
};

/// Stride-1 windows whose inputs and targets all lie inside `range`.
/// Throws TooShort when the range cannot hold a single window.
std::vector<Window> make_windows(const DayRange& range, const ForecastTask& task);

// -------------------------------------------------------------- batching

struct Batch {
    std::string group;                 // empty for full-graph batches
    std::vector<std::size_t> nodes;    // node subset in graph order
    std::vector<std::size_t> windows;  // indices into the window list
};

/**
 * One epoch schedule. With use_hn every batch holds one HUC8 group's nodes
 * and up to batch_windows of that group's windows; each group's windows are
 * shuffled and chunked, then the whole batch list is shuffled. Without it,
 * shuffled windows are chunked over the full node set.
 */
std::vector<Batch> cluster_batches(std::size_t n_windows, std::size_t n_nodes, const flow::Grouping& grouping,
                                   Rng& rng, bool use_hn, std::size_t batch_windows);

// ---------------------------------------------------------------- config

enum class TrainMode { Joint, Staged };

struct TrainConfig {
    std::string task = "short";
    double lambda = 0.5;
    std::uint64_t seed = 0;
    std::size_t epochs = 40;
    std::size_t batch_windows = 8;
    bool use_rg = true;
    bool use_hn = true;
    bool use_embeddings = true;
    bool use_forcings = true;
    std::size_t latent_dim = 8;
    std::size_t hidden_dim = 32;
    std::size_t vae_hidden_dim = 32;
    std::size_t vae_window = 0;  // trailing forcing days seen by the station encoder; 0 = task input days
    std::size_t kernel_width = 3;
    std::size_t blocks = 2;
    SplitFractions split;
    num::AdamConfig adam;
    double kl_weight = 1.0;
    TrainMode mode = TrainMode::Joint;
    std::size_t stage1_epochs = 10;
    std::size_t patience = 10;
    PreprocessOptions preprocess;
    bool direct_multi_output = false;
    std::size_t distance_neighbors = 4;

    bool operator==(const TrainConfig&) const;
};

/// Flat `key = value` text; `#` starts a comment. Unknown keys and malformed
/// values throw ConfigInvalid naming the key.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
/// Applies one key/value pair.
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);
/// Canonical text form; parse_config(to_text(c)) == c.
std::string to_text(const TrainConfig& config);
/// Range and consistency checks; throws ConfigInvalid or LambdaOutOfRange.
void validate_config(const TrainConfig& config);
/// Forcing days per encoder row after resolving the task default.
std::size_t forcing_window(const TrainConfig& config);

// ----------------------------------------------------------------- model

/// Great-circle distance in km.
double haversine_km(double lat1, double lon1, double lat2, double lon2);

/**
 * Distance-kernel weights for the graph-free baseline: exp(-d^2 / sigma^2)
 * with sigma the median pairwise distance, top `neighbors` per node kept,
 * symmetrized, self weight 1. Not normalized.
 */
num::Tensor distance_weights(const std::vector<flow::Station>& stations, std::size_t neighbors);

/// Unnormalized river weights: transposed causal adjacency plus identity.
num::Tensor river_weights(const flow::FlowGraph& graph);

/// Row-normalized weights among `nodes` (in the given order).
num::Tensor subset_aggregation(const num::Tensor& raw_weights, const std::vector<std::size_t>& nodes);

struct CsfModel {
    TrainConfig config;
    ForecastTask task;
    stgcn::BasinConfig basin;
    vae::VaeConfig vae;
    num::ParamStore params;
    PreprocessStats stats;
    num::Tensor raw_weights;  // [n, n] before normalization
    std::vector<std::string> station_ids;

    /// Channels per node-day: flow, then embedding, then forcings.
    std::size_t feature_count() const { return basin.input_features; }
    std::size_t forcing_window() const { return pipeline::forcing_window(config); }
    num::Tensor aggregation() const;
};

/// Fresh model with initialized parameters for the given graph and stats.
CsfModel init_model(const TrainConfig& config, const flow::FlowGraph& graph, const PreprocessStats& stats);

/// Model input channels for days in `range`: [range.size(), n, features].
/// Embeddings are posterior means.
num::Tensor model_features(const CsfModel& model, const FeatureCube& cube, const DayRange& range);

/// Maps windows [B, T, n, f] to next-step standardized flow [B, n, steps].
using StepPredictor = std::function<num::Tensor(const num::Tensor&)>;

StepPredictor step_predictor(const CsfModel& model);

/**
 * Recursive forecast from one origin. `features` holds T_in history days plus
 * horizon - 1 future days ([T_in + horizon - 1, n, f]); future forcings are
 * taken as given and each prediction replaces the flow channel of its day
 * before the window slides. Returns [horizon, n]. Throws HistoryTooShort.
 */
num::Tensor rolling_forecast(const StepPredictor& predictor, const num::Tensor& features, std::size_t input_days,
                             std::size_t horizon, std::size_t flow_channel = 0);

/// Batched form: one recursive forecast per origin (first input day within
/// `features`). Returns [origins, horizon, n].
num::Tensor rolling_forecast_batch(const StepPredictor& predictor, const num::Tensor& features,
                                   std::span<const std::size_t> origins, std::size_t input_days,
                                   std::size_t horizon, std::size_t flow_channel = 0);

/// Lead-h predictions in physical units for every window in `range`.
struct ForecastSeries {
    std::size_t lead = 1;
    std::vector<std::size_t> target_days;      // indices into the cube's calendar
    std::vector<std::vector<double>> flow;     // [station][origin]
};

/// Forecasts at `lead` for each origin in `range` with room for the lead (or
/// for the task's full output window with a direct head, where lead <= output_days).
ForecastSeries forecast_range(const CsfModel& model, const FeatureCube& cube, const DayRange& range,
                              std::size_t lead);

/// Metrics at the task's final lead time against capped observed flow.
metrics::MetricsReport evaluate(const CsfModel& model, const SeriesSet& raw, const FeatureCube& cube,
                                const DayRange& range, std::vector<metrics::StationSeriesPair>* pairs = nullptr);

// -------------------------------------------------------------- training

struct EpochRecord {
    std::size_t epoch = 0;
    double total_loss = 0.0;
    double station_loss = 0.0;
    double prediction_loss = 0.0;
    double val_nse = 0.0;

    bool operator==(const EpochRecord&) const = default;
};

nlohmann::json to_json(const EpochRecord& record);

struct TrainResult {
    CsfModel model;  // best validation parameters
    std::vector<EpochRecord> log;
    std::size_t best_epoch = 0;  // 0 when no epoch ran
    double train_seconds = 0.0;  // wall clock of the basin epochs, outside the log
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/**
 * Splits, preprocesses and trains. Joint mode minimizes
 * lambda * ELBO + (1 - lambda) * prediction MSE; staged mode fits the VAE for
 * stage1_epochs first and then trains the basin model on frozen embeddings.
 * Without embeddings the objective is the prediction loss alone. Stops early
 * after `patience` epochs without validation NSE improvement.
 */
TrainResult train(const TrainConfig& config, const SeriesSet& raw, const flow::FlowGraph& graph,
                  const flow::Grouping& grouping, const EpochCallback& on_epoch = {});

/// Checkpoint directory with parameters, config, statistics and weights.
void save_model(const std::string& dir, const CsfModel& model);
CsfModel load_model(const std::string& dir);

}  // namespace csf::pipeline
