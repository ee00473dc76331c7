#include "csf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "csf/error.hpp"

namespace csf::metrics {

namespace {

void check_lengths(std::span<const double> y, std::span<const double> yhat, std::size_t min_len) {
    if (y.size() != yhat.size())
        fail(ErrorKind::LengthMismatch,
             std::to_string(y.size()) + " observed vs " + std::to_string(yhat.size()) + " predicted");
    if (y.size() < min_len)
        fail(ErrorKind::LengthMismatch, "need at least " + std::to_string(min_len) + " values");
}

double mean(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Population standard deviation.
double stddev(std::span<const double> v, double m) {
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

// Sorted k nearest neighbours of every point given a distance function.
template <typename Dist>
std::vector<std::vector<std::size_t>> neighbour_sets(std::size_t n, std::size_t k, Dist&& dist) {
    std::vector<std::vector<std::size_t>> sets(n);
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) cand.emplace_back(dist(i, j), j);
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        for (std::size_t m = 0; m < k; ++m) sets[i].push_back(cand[m].second);
        std::sort(sets[i].begin(), sets[i].end());
    }
    return sets;
}

}  // namespace

double nse(std::span<const double> y, std::span<const double> yhat) {
    check_lengths(y, yhat, 2);
    const double m = mean(y);
    double sse = 0.0, sst = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        sse += (y[i] - yhat[i]) * (y[i] - yhat[i]);
        sst += (y[i] - m) * (y[i] - m);
    }
    if (sst == 0.0) fail(ErrorKind::ConstantObserved, "observed series is constant");
    return 1.0 - sse / sst;
}

double pearson_rho(std::span<const double> y, std::span<const double> yhat) {
    check_lengths(y, yhat, 2);
    const double my = mean(y), mp = mean(yhat);
    double cov = 0.0, vy = 0.0, vp = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        cov += (y[i] - my) * (yhat[i] - mp);
        vy += (y[i] - my) * (y[i] - my);
        vp += (yhat[i] - mp) * (yhat[i] - mp);
    }
    if (vy == 0.0 || vp == 0.0) fail(ErrorKind::ConstantSeries, "correlation of a constant series");
    return std::clamp(cov / std::sqrt(vy * vp), -1.0, 1.0);
}

double kge(std::span<const double> y, std::span<const double> yhat, KgeVariability variability) {
    check_lengths(y, yhat, 2);
    const double my = mean(y), mp = mean(yhat);
    if (my == 0.0) fail(ErrorKind::ZeroMeanObserved, "observed mean is zero");
    const double sy = stddev(y, my), sp = stddev(yhat, mp);
    if (sy == 0.0 || sp == 0.0) fail(ErrorKind::ConstantSeries, "KGE of a constant series");
    const double r = pearson_rho(y, yhat);
    const double beta = mp / my;
    const double gamma = variability == KgeVariability::CoefficientOfVariation ? (sp / mp) / (sy / my) : sp / sy;
    return 1.0 - std::sqrt((r - 1.0) * (r - 1.0) + (beta - 1.0) * (beta - 1.0) + (gamma - 1.0) * (gamma - 1.0));
}

double volumetric_efficiency(std::span<const double> y, std::span<const double> yhat) {
    check_lengths(y, yhat, 1);
    double volume = 0.0, error = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        volume += y[i];
        error += std::abs(yhat[i] - y[i]);
    }
    if (!(volume > 0.0)) fail(ErrorKind::ZeroVolume, "observed volume is not positive");
    return 1.0 - error / volume;
}

std::vector<double> knn_overlaps(std::span<const double> z, std::size_t dim, std::span<const double> r,
                                 std::size_t k) {
    const std::size_t n = r.size();
    if (dim == 0 || z.size() != n * dim)
        fail(ErrorKind::IndexMismatch, "embedding matrix does not match the reference length");
    if (k < 1 || k >= n)
        fail(ErrorKind::KTooLarge, "k=" + std::to_string(k) + " needs 1 <= k < n=" + std::to_string(n));
    auto sz = neighbour_sets(n, k, [&](std::size_t i, std::size_t j) {
        double d = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            const double diff = z[i * dim + c] - z[j * dim + c];
            d += diff * diff;
        }
        return d;  // squared distance preserves ordering
    });
    auto sr = neighbour_sets(n, k, [&](std::size_t i, std::size_t j) { return std::abs(r[i] - r[j]); });
    std::vector<double> overlaps(n);
    std::vector<std::size_t> common;
    for (std::size_t i = 0; i < n; ++i) {
        common.clear();
        std::set_intersection(sz[i].begin(), sz[i].end(), sr[i].begin(), sr[i].end(),
                              std::back_inserter(common));
        overlaps[i] = static_cast<double>(common.size()) / static_cast<double>(k);
    }
    return overlaps;
}

double knn_alignment(std::span<const double> z, std::size_t dim, std::span<const double> r, std::size_t k) {
    const auto overlaps = knn_overlaps(z, dim, r, k);
    return mean(overlaps);
}

MetricsReport build_report(const std::vector<StationSeriesPair>& series, const std::string& task,
                           const std::vector<std::vector<double>>* embeddings, std::size_t embedding_dim,
                           const std::vector<std::vector<double>>* reference_runoff, std::size_t k,
                           KgeVariability variability) {
    if (series.empty()) fail(ErrorKind::IndexMismatch, "no stations to report");
    MetricsReport report;
    report.task = task;
    for (const auto& s : series) {
        if (s.observed.size() != s.predicted.size())
            fail(ErrorKind::IndexMismatch, "station " + s.station_id + " has misaligned series");
        StationMetrics m;
        m.station_id = s.station_id;
        m.nse = nse(s.observed, s.predicted);
        m.kge = kge(s.observed, s.predicted, variability);
        m.ve = volumetric_efficiency(s.observed, s.predicted);
        m.rho = pearson_rho(s.observed, s.predicted);
        report.stations.push_back(m);
    }
    const double n = static_cast<double>(report.stations.size());
    for (const auto& m : report.stations) {
        report.mean_nse += m.nse / n;
        report.mean_kge += m.kge / n;
        report.mean_ve += m.ve / n;
        report.mean_rho += m.rho / n;
    }
    if (embeddings && reference_runoff) {
        if (embeddings->size() != reference_runoff->size() || embeddings->empty())
            fail(ErrorKind::IndexMismatch, "embeddings and reference runoff cover different days");
        double total = 0.0;
        for (std::size_t d = 0; d < embeddings->size(); ++d)
            total += knn_alignment((*embeddings)[d], embedding_dim, (*reference_runoff)[d], k);
        report.knn_alignment = total / static_cast<double>(embeddings->size());
    }
    return report;
}

nlohmann::json to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["task"] = report.task;
    j["stations"] = nlohmann::json::array();
    for (const auto& m : report.stations)
        j["stations"].push_back({{"station_id", m.station_id}, {"nse", m.nse}, {"kge", m.kge}, {"ve", m.ve},
                                 {"rho", m.rho}});
    j["aggregate"] = {{"nse", report.mean_nse}, {"kge", report.mean_kge}, {"ve", report.mean_ve},
                      {"rho", report.mean_rho}};
    j["knn_alignment"] = report.knn_alignment ? nlohmann::json(*report.knn_alignment) : nlohmann::json();
    j["metadata"] = report.metadata;
    return j;
}

MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.task = j.at("task").get<std::string>();
    for (const auto& s : j.at("stations"))
        r.stations.push_back({s.at("station_id").get<std::string>(), s.at("nse").get<double>(),
                              s.at("kge").get<double>(), s.at("ve").get<double>(), s.at("rho").get<double>()});
    const auto& agg = j.at("aggregate");
    r.mean_nse = agg.at("nse").get<double>();
    r.mean_kge = agg.at("kge").get<double>();
    r.mean_ve = agg.at("ve").get<double>();
    r.mean_rho = agg.at("rho").get<double>();
    if (j.contains("knn_alignment") && !j.at("knn_alignment").is_null())
        r.knn_alignment = j.at("knn_alignment").get<double>();
    if (j.contains("metadata")) r.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    return r;
}

}  // namespace csf::metrics
