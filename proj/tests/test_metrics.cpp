#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "csf/error.hpp"
#include "csf/metrics.hpp"
#include "csf/rng.hpp"

using namespace csf;
using namespace csf::metrics;
using V = std::vector<double>;

namespace {

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::Internal;
}

// Exhaustive neighbour enumeration: sort all other points by (distance, index).
std::set<std::size_t> brute_knn(std::size_t i, std::size_t n, std::size_t k, auto dist) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t j = 0; j < n; ++j)
        if (j != i) all.emplace_back(dist(i, j), j);
    std::sort(all.begin(), all.end());
    std::set<std::size_t> out;
    for (std::size_t m = 0; m < k; ++m) out.insert(all[m].second);
    return out;
}

double brute_alignment(const V& z, std::size_t dim, const V& r, std::size_t k) {
    const std::size_t n = r.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto a = brute_knn(i, n, k, [&](std::size_t p, std::size_t q) {
            double s = 0.0;
            for (std::size_t c = 0; c < dim; ++c) s += std::pow(z[p * dim + c] - z[q * dim + c], 2);
            return std::sqrt(s);
        });
        auto b = brute_knn(i, n, k, [&](std::size_t p, std::size_t q) { return std::abs(r[p] - r[q]); });
        std::size_t common = 0;
        for (auto x : a) common += b.count(x);
        total += double(common) / double(k);
    }
    return total / double(n);
}

V random_series(std::size_t n, Rng& rng, double lo = 0.5, double hi = 5.0) {
    V v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

}  // namespace

TEST_CASE("nse examples") {
    V y{1, 2, 3};
    CHECK(nse(y, y) == 1.0);
    CHECK(nse(y, V{2, 2, 2}) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(nse(y, V{1, 2, 4}) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(kind_of([] { nse(V{2, 2, 2}, V{1, 2, 3}); }) == ErrorKind::ConstantObserved);
    CHECK(kind_of([] { nse(V{1, 2}, V{1, 2, 3}); }) == ErrorKind::LengthMismatch);
}

TEST_CASE("kge examples") {
    V y{1, 2, 3};
    CHECK(kge(y, y) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(kge(y, V{2, 4, 6}) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(kge(y, V{3, 4, 5}) < 1.0);
    CHECK(kind_of([] { kge(V{-1, 0, 1}, V{1, 2, 3}); }) == ErrorKind::ZeroMeanObserved);
    CHECK(kind_of([] { kge(V{1, 2, 3}, V{2, 2, 2}); }) == ErrorKind::ConstantSeries);
    // The standard-deviation form scores a doubled series by alpha = 2 instead.
    CHECK(kge(y, V{2, 4, 6}, KgeVariability::StandardDeviation) ==
          doctest::Approx(1.0 - std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("volumetric efficiency examples") {
    V y{1, 2, 3};
    CHECK(volumetric_efficiency(y, y) == 1.0);
    CHECK(volumetric_efficiency(y, V{1, 2, 4}) == doctest::Approx(1.0 - 1.0 / 6.0).epsilon(1e-15));
    CHECK(volumetric_efficiency(y, V{2, 4, 6}) == doctest::Approx(0.0));
    CHECK(kind_of([] { volumetric_efficiency(V{0, 0}, V{1, 1}); }) == ErrorKind::ZeroVolume);
}

TEST_CASE("pearson examples") {
    V y{1, 2, 3, 5};
    V aff, neg;
    for (double v : y) {
        aff.push_back(3 * v + 7);
        neg.push_back(-v);
    }
    CHECK(pearson_rho(y, aff) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(pearson_rho(y, neg) == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(pearson_rho(V{1, 2, 3}, V{1, 3, 2}) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(kind_of([] { pearson_rho(V{1, 1}, V{1, 2}); }) == ErrorKind::ConstantSeries);
}

TEST_CASE("knn alignment examples") {
    V r{0.3, 1.7, 4.0, 9.5, 2.2};
    CHECK(knn_alignment(r, 1, r, 2) == 1.0);
    // Z pairs {0,1},{2,3}; R pairs {0,2},{1,3}.
    CHECK(knn_alignment(V{0, 1, 10, 11}, 1, V{0, 10, 1, 11}, 1) == 0.0);
    V z{0, 1, 2, 10}, rr{0, 1, 10, 2};
    CHECK(knn_alignment(z, 1, rr, 2) == brute_alignment(z, 1, rr, 2));
    CHECK(knn_alignment(z, 1, rr, 2) == 0.5);
    CHECK(kind_of([] { knn_alignment(V{0, 1, 2}, 1, V{0, 1, 2}, 3); }) == ErrorKind::KTooLarge);
    CHECK(kind_of([] { knn_alignment(V{0, 1, 2}, 1, V{0, 1, 2}, 0); }) == ErrorKind::KTooLarge);
    CHECK(kind_of([] { knn_alignment(V{0, 1, 2}, 2, V{0, 1, 2}, 1); }) == ErrorKind::IndexMismatch);
}

TEST_CASE("knn alignment matches brute force and its invariances") {
    Rng rng(5);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 3 + rng.below(30), dim = 1 + rng.below(4), k = 1 + rng.below(n - 1);
        V z(n * dim), r = random_series(n, rng, -3, 3);
        for (double& v : z) v = rng.normal();
        const double base = knn_alignment(z, dim, r, k);
        CHECK(base == doctest::Approx(brute_alignment(z, dim, r, k)));
        CHECK(base >= 0.0);
        CHECK(base <= 1.0);

        // Rotation in the first two axes plus a translation, and a shift of R.
        if (dim >= 2) {
            const double th = rng.uniform(0, 6.28);
            V moved = z;
            for (std::size_t i = 0; i < n; ++i) {
                const double a = z[i * dim], b = z[i * dim + 1];
                moved[i * dim] = std::cos(th) * a - std::sin(th) * b + 3.0;
                moved[i * dim + 1] = std::sin(th) * a + std::cos(th) * b - 1.0;
            }
            V shifted = r;
            for (double& v : shifted) v += 4.0;
            CHECK(knn_alignment(moved, dim, shifted, k) == doctest::Approx(base));
        }
        // Relabelling stations.
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        V zp(n * dim), rp(n);
        for (std::size_t i = 0; i < n; ++i) {
            rp[i] = r[perm[i]];
            for (std::size_t c = 0; c < dim; ++c) zp[i * dim + c] = z[perm[i] * dim + c];
        }
        CHECK(knn_alignment(zp, dim, rp, k) == doctest::Approx(base));
    }
}

TEST_CASE("metric properties") {
    Rng rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 2 + rng.below(50);
        V y = random_series(n, rng), yhat = random_series(n, rng);
        CHECK(nse(y, y) == 1.0);
        CHECK(kge(y, y) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(volumetric_efficiency(y, y) == 1.0);
        CHECK(nse(y, yhat) < 1.0);
        CHECK(kge(y, yhat) < 1.0);
        CHECK(volumetric_efficiency(y, yhat) < 1.0);
        const double rho = pearson_rho(y, yhat);
        CHECK(std::abs(rho) <= 1.0);
        V aff;
        for (double v : yhat) aff.push_back(2.5 * v + 1.0);
        CHECK(pearson_rho(y, aff) == doctest::Approx(rho).epsilon(1e-10));
        // NSE punishes the same affine change.
        V ay;
        for (double v : y) ay.push_back(2.5 * v + 1.0);
        CHECK(nse(y, ay) < 1.0);
        CHECK(pearson_rho(y, ay) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("report assembly") {
    StationSeriesPair perfect{"S0", {1, 2, 3, 4}, {1, 2, 3, 4}};
    MetricsReport one = build_report({perfect}, "short");
    CHECK(one.mean_nse == 1.0);
    CHECK(one.mean_ve == 1.0);
    CHECK(one.mean_kge == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(one.mean_rho == doctest::Approx(1.0).epsilon(1e-14));

    std::vector<StationSeriesPair> three{{"A", {1, 2, 3}, {1, 2, 4}},
                                         {"B", {2, 4, 1, 3}, {2, 3, 1, 4}},
                                         {"C", {5, 6, 9}, {5, 7, 8}}};
    MetricsReport r = build_report(three, "medium");
    double hand = (nse(three[0].observed, three[0].predicted) + nse(three[1].observed, three[1].predicted) +
                   nse(three[2].observed, three[2].predicted)) / 3.0;
    CHECK(r.mean_nse == doctest::Approx(hand).epsilon(1e-14));
    CHECK(r.stations[0].nse == doctest::Approx(0.5));

    std::vector<V> emb{{0, 1, 2, 10}}, ref{{0, 1, 10, 2}};
    MetricsReport with = build_report(three, "medium", &emb, 1, &ref, 2);
    REQUIRE(with.knn_alignment.has_value());
    CHECK(*with.knn_alignment == 0.5);
    with.metadata["seed"] = "7";
    CHECK(report_from_json(nlohmann::json::parse(to_json(with).dump())) == with);
    CHECK(report_from_json(nlohmann::json::parse(to_json(r).dump())) == r);

    CHECK(kind_of([] { build_report({{"A", {1, 2}, {1}}}, "short"); }) == ErrorKind::IndexMismatch);
}
