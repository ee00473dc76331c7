#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace csf::metrics {

/// Nash-Sutcliffe efficiency: 1 - SSE / SS around the observed mean.
double nse(std::span<const double> y, std::span<const double> yhat);

enum class KgeVariability {
    CoefficientOfVariation,  // gamma = CV(yhat) / CV(y)
    StandardDeviation,       // alpha = sd(yhat) / sd(y)
};

/// Kling-Gupta efficiency from correlation, bias ratio and variability ratio.
double kge(std::span<const double> y, std::span<const double> yhat,
           KgeVariability variability = KgeVariability::CoefficientOfVariation);

/// 1 - sum|yhat - y| / sum y.
double volumetric_efficiency(std::span<const double> y, std::span<const double> yhat);

double pearson_rho(std::span<const double> y, std::span<const double> yhat);

/**
 * Mean over points of |S_z(i) ∩ S_r(i)| / k, where S_z(i) holds the k nearest
 * neighbours of row i of `z` (Euclidean) and S_r(i) those of r[i] (absolute
 * difference). Self is excluded; ties go to the lower index.
 * `z` is row-major with `dim` columns.
 */
double knn_alignment(std::span<const double> z, std::size_t dim, std::span<const double> r, std::size_t k);

/// Per-point overlap fractions behind knn_alignment.
std::vector<double> knn_overlaps(std::span<const double> z, std::size_t dim, std::span<const double> r,
                                 std::size_t k);

struct StationMetrics {
    std::string station_id;
    double nse = 0.0;
    double kge = 0.0;
    double ve = 0.0;
    double rho = 0.0;

    bool operator==(const StationMetrics&) const = default;
};

struct MetricsReport {
    std::string task;
    std::vector<StationMetrics> stations;
    double mean_nse = 0.0;
    double mean_kge = 0.0;
    double mean_ve = 0.0;
    double mean_rho = 0.0;
    std::optional<double> knn_alignment;
    std::map<std::string, std::string> metadata;

    bool operator==(const MetricsReport&) const = default;
};

/// One observed/predicted pair per station, aligned day by day.
struct StationSeriesPair {
    std::string station_id;
    std::vector<double> observed;
    std::vector<double> predicted;
};

/**
 * Per-station metrics plus their unweighted means. When embeddings (one
 * matrix of stations x dim per day) and reference runoff (stations per day)
 * are both given, the report also carries their day-averaged kNN alignment.
 */
MetricsReport build_report(const std::vector<StationSeriesPair>& series, const std::string& task,
                           const std::vector<std::vector<double>>* embeddings = nullptr,
                           std::size_t embedding_dim = 0,
                           const std::vector<std::vector<double>>* reference_runoff = nullptr,
                           std::size_t k = 10,
                           KgeVariability variability = KgeVariability::CoefficientOfVariation);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

}  // namespace csf::metrics
