#include "doctest.h"

#include <cmath>

#include "csf/error.hpp"
#include "csf/optimizer.hpp"
#include "csf/station_vae.hpp"
#include "support/gradcheck.hpp"

using namespace csf;
using namespace csf::num;
using csf::testing::gradcheck;
using csf::testing::random_tensor;

namespace {

ParamStore fresh(const vae::VaeConfig& cfg, std::uint64_t seed = 1) {
    ParamStore p;
    Rng rng(seed);
    vae::init_params(p, cfg, rng);
    return p;
}

ParamStore zeroed(const vae::VaeConfig& cfg) {
    ParamStore p = fresh(cfg);
    for (auto& [name, t] : p.entries()) t.fill(0.0);
    return p;
}

SeriesSet tiny_set(std::size_t stations, std::size_t days, Rng& rng) {
    SeriesSet s;
    s.dates = date_range("2001-01-01", days);
    for (std::size_t i = 0; i < stations; ++i) {
        StationSeries ss;
        ss.station_id = "S" + std::to_string(i);
        for (std::size_t t = 0; t < days; ++t) ss.forcings.push_back({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
        ss.flow.assign(days, 0.0);
        ss.statics = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        s.stations.push_back(ss);
    }
    return s;
}

}  // namespace

TEST_CASE("encode examples") {
    vae::VaeConfig cfg;
    std::vector<double> x{0.3, -1.0, 2.0, 0.1, 0.0, 1.0, -0.5, 0.7};
    auto [mu0, lv0] = vae::encode(zeroed(cfg), x);
    CHECK(mu0 == std::vector<double>(8, 0.0));
    CHECK(lv0 == std::vector<double>(8, 0.0));

    ParamStore p = fresh(cfg);
    CHECK(vae::encode(p, x) == vae::encode(p, x));

    // Batched encoding equals row-by-row encoding: rows never mix.
    Rng rng(2);
    Tensor batch = random_tensor({5, 8}, rng);
    Tensor means = vae::posterior_mean(p, batch);
    Tensor bumped = batch;
    bumped.at(2, 3) += 0.25;
    Tensor means2 = vae::posterior_mean(p, bumped);
    for (std::size_t r = 0; r < 5; ++r) {
        std::vector<double> row(batch.ptr() + r * 8, batch.ptr() + r * 8 + 8);
        auto [mu, lv] = vae::encode(p, row);
        for (std::size_t c = 0; c < 8; ++c) {
            CHECK(means.at(r, c) == doctest::Approx(mu[c]).epsilon(1e-13));
            if (r != 2) CHECK(means2.at(r, c) == means.at(r, c));
        }
    }
}

TEST_CASE("reparameterize examples") {
    Tape tape;
    Var mu = tape.constant(Tensor::matrix(1, 1, {0.0}));
    Var lv = tape.constant(Tensor::matrix(1, 1, {0.0}));
    CHECK(vae::reparameterize(mu, lv, Tensor::matrix(1, 1, {0.5})).value().item() == 0.5);

    // Deep in the clamp range the noise is scaled by exp(-15).
    Var mu2 = tape.constant(Tensor::matrix(1, 1, {1.25}));
    Var lv2 = tape.constant(Tensor::matrix(1, 1, {-30.0}));
    for (double eps = -5.0; eps <= 5.0; eps += 0.5) {
        const double z = vae::reparameterize(mu2, lv2, Tensor::matrix(1, 1, {eps})).value().item();
        CHECK(std::abs((z - 1.25) - std::exp(-15.0) * eps) < 1e-15);
        if (std::abs(eps) <= 3.0) CHECK(std::abs(z - 1.25) < 1e-6);
    }
    Var huge = tape.constant(Tensor::matrix(1, 1, {-1000.0}));
    CHECK(vae::reparameterize(mu2, huge, Tensor::matrix(1, 1, {1.0})).value().item() ==
          doctest::Approx(1.25 + std::exp(-15.0)).epsilon(1e-14));

    Rng a(3), b(3);
    Tensor m(Shape{4, 8}, 0.2), l(Shape{4, 8}, -0.3);
    Tape t1, t2;
    CHECK(vae::reparameterize(t1.constant(m), t1.constant(l), a).value() ==
          vae::reparameterize(t2.constant(m), t2.constant(l), b).value());
}

TEST_CASE("reparameterize gradient reaches mu and logvar only") {
    Rng rng(4);
    Tensor eps = random_tensor({3, 2}, rng);
    CHECK(gradcheck([&](Tape&, const std::vector<Var>& v) {
              return reduce_sum(square(vae::reparameterize(v[0], v[1], eps)));
          },
          {random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)}) < 1e-4);
}

TEST_CASE("decode examples") {
    vae::VaeConfig cfg;
    ParamStore p = zeroed(cfg);
    Tensor& b2 = p.get("vae.dec.b2");
    for (std::size_t i = 0; i < b2.size(); ++i) b2[i] = 0.1 * double(i);
    auto out = vae::decode(p, std::vector<double>(8, 1.0));
    REQUIRE(out.size() == cfg.input_dim);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.1 * double(i));

    vae::VaeConfig wide{11, 16, 4, 1.0};
    CHECK(vae::decode(fresh(wide), std::vector<double>(4, 0.3)).size() == 11);
}

TEST_CASE("elbo examples") {
    Tape tape;
    Tensor x = Tensor::matrix(1, 2, {0.4, -0.2});
    Var zero = tape.constant(Tensor(Shape{1, 2}, 0.0));
    CHECK(vae::kl_divergence(zero, zero).value().item() == 0.0);
    CHECK(vae::kl_divergence(tape.constant(Tensor::matrix(1, 2, {1.0, 0.0})), zero).value().item() == 0.5);
    CHECK(vae::elbo_loss(tape.constant(x), tape.constant(x), zero, zero, 1.0).value().item() == 0.0);
    // kl_weight scales only the KL part.
    Var mu = tape.constant(Tensor::matrix(1, 2, {1.0, 0.0}));
    CHECK(vae::elbo_loss(tape.constant(x), tape.constant(x), mu, zero, 0.25).value().item() == 0.125);
}

TEST_CASE("kl is non-negative and zero only at the prior") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        Tape tape;
        Tensor mu = random_tensor({3, 4}, rng, -2, 2, 0.0), lv = random_tensor({3, 4}, rng, -3, 3, 0.0);
        CHECK(vae::kl_divergence(tape.constant(mu), tape.constant(lv)).value().item() > 0.0);
    }
}

TEST_CASE("elbo gradient matches finite differences") {
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        vae::VaeConfig cfg{3, 5, 2, 0.7};
        ParamStore p = fresh(cfg, 10 + trial);
        Tensor x = random_tensor({4, 3}, rng);
        Tensor eps = random_tensor({4, 2}, rng);
        std::vector<Tensor> inputs;
        std::vector<std::string> names;
        for (const auto& [name, t] : p.entries()) {
            names.push_back(name);
            inputs.push_back(t);
        }
        auto loss = [&](Tape& tape, const std::vector<Var>& v) {
            vae::VaeVars vars{v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
            Var xv = tape.constant(x);
            auto post = vae::encode(vars, xv);
            Var z = vae::reparameterize(post.mu, post.logvar, eps);
            return vae::elbo_loss(xv, vae::decode(vars, z), post.mu, post.logvar, cfg.kl_weight);
        };
        REQUIRE(names.size() == 10);
        CHECK(names[0] == "vae.enc.w");
        CHECK(gradcheck(loss, inputs) < 1e-4);
    }
}

TEST_CASE("training lowers the negative elbo") {
    vae::VaeConfig cfg;
    ParamStore p = fresh(cfg);
    Rng data(8);
    Tensor x = random_tensor({64, cfg.input_dim}, data, -1.5, 1.5, 0.0);
    Rng noise(9);
    auto evaluate = [&] {
        Tape tape;
        auto vars = vae::bind(tape, p);
        Var xv = tape.constant(x);
        auto post = vae::encode(vars, xv);
        return vae::elbo_loss(xv, vae::decode(vars, post.mu), post.mu, post.logvar, 1.0).value().item();
    };
    const double before = evaluate();
    OptimizerState opt;
    for (int step = 0; step < 200; ++step) {
        Tape tape;
        auto vars = vae::bind(tape, p);
        Var xv = tape.constant(x);
        auto post = vae::encode(vars, xv);
        Var z = vae::reparameterize(post.mu, post.logvar, noise);
        tape.backward(vae::elbo_loss(xv, vae::decode(vars, z), post.mu, post.logvar, 1.0));
        optimizer_step(p, tape.gradients(), opt);
    }
    CHECK(evaluate() < before);
}

TEST_CASE("embed_series") {
    vae::VaeConfig cfg;
    ParamStore p = fresh(cfg);
    Rng rng(11);
    SeriesSet one = tiny_set(1, 10, rng);
    auto e = vae::embed_series(one, p);
    REQUIRE(e.size() == 10);
    for (std::size_t t = 0; t < 10; ++t) {
        CHECK(e[t].day == t);
        CHECK(e[t].z.size() == 8);
    }
    auto again = vae::embed_series(one, p);
    for (std::size_t t = 0; t < 10; ++t) CHECK(again[t].z == e[t].z);

    SeriesSet twin = one;
    twin.stations.push_back(one.stations[0]);
    twin.stations[1].station_id = "twin";
    auto both = vae::embed_series(twin, p);
    REQUIRE(both.size() == 20);
    for (const auto& a : both)
        for (const auto& b : both)
            if (a.day == b.day) CHECK(a.z == b.z);

    // Sampling mode draws around the mean.
    Rng sample(12);
    auto sampled = vae::embed_series(one, p, false, &sample);
    CHECK(sampled[0].z != e[0].z);
}
