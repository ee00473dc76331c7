#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "csf/autodiff.hpp"
#include "csf/checkpoint.hpp"
#include "csf/error.hpp"
#include "csf/optimizer.hpp"
#include "support/gradcheck.hpp"

using namespace csf;
using namespace csf::num;
using csf::testing::gradcheck;
using csf::testing::random_tensor;

namespace {

Tensor values_of(Var v) { return v.value(); }

// Gradient checks use a weighted sum so every output element matters.
Var weighted_sum(Var y, Rng& rng) {
    Tensor w(y.shape());
    for (double& v : w.data()) v = rng.uniform(-1.0, 1.0);
    return reduce_sum(mul(y, y.tape().constant(w)));
}

}  // namespace

TEST_CASE("forward examples") {
    Tape tape;
    Var a = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    CHECK(values_of(matmul(a, tape.constant(Tensor::identity(2)))) == Tensor::matrix(2, 2, {1, 2, 3, 4}));
    CHECK(values_of(relu(tape.constant(Tensor::vector({-1, 0, 2})))) == Tensor::vector({0, 0, 2}));
    Var conv = causal_conv1d(tape.constant(Tensor::vector({1, 1, 1})), tape.constant(Tensor::vector({1, 1})));
    CHECK(values_of(conv) == Tensor::vector({1, 2, 2}));
}

TEST_CASE("backward examples") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(3.0));
    tape.backward(mul(x, x));
    CHECK(tape.grad(x).item() == doctest::Approx(6.0));

    Tape t2;
    Var v = t2.leaf(Tensor::vector({-1.0, 2.0}));
    t2.backward(reduce_mean(relu(v)));
    CHECK(t2.grad(v) == Tensor::vector({0.0, 0.5}));
}

TEST_CASE("relu subgradient at zero is zero") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({0.0, 0.0}));
    tape.backward(reduce_sum(relu(x)));
    CHECK(tape.grad(x) == Tensor::vector({0.0, 0.0}));
}

TEST_CASE("error paths") {
    Tape tape;
    Var a = tape.leaf(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    CHECK_THROWS_AS(matmul(a, a), Error);
    try {
        matmul(a, a);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ShapeMismatch);
    }
    try {
        tape.backward(a);
        FAIL("expected NotScalarLoss");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NotScalarLoss);
    }
    try {
        log(tape.constant(Tensor::vector({-1.0})));
        FAIL("expected NonFinite");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NonFinite);
    }
}

TEST_CASE("gradients match central differences on random shapes") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t r = 1 + rng.below(4), c = 1 + rng.below(4), k = 1 + rng.below(4);
        Rng wr = rng.split(100 + trial);
        auto ws = [&wr](Var y) { Rng local = wr; return weighted_sum(y, local); };
        CAPTURE(trial);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(matmul(v[0], v[1])); },
                        {random_tensor({r, k}, rng), random_tensor({k, c}, rng)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(add(v[0], v[1])); },
                        {random_tensor({r, c}, rng), random_tensor({r, c}, rng)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(sub(v[0], v[1])); },
                        {random_tensor({r, c}, rng), random_tensor({r, c}, rng)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(mul(v[0], v[1])); },
                        {random_tensor({r, c}, rng), random_tensor({r, c}, rng)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(add_bias(v[0], v[1])); },
                        {random_tensor({r, c}, rng), random_tensor({c}, rng)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(relu(v[0])); }, {random_tensor({r, c}, rng)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(sigmoid(v[0])); }, {random_tensor({r, c}, rng, -3, 3)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(exp(v[0])); }, {random_tensor({r, c}, rng)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(log(v[0])); }, {random_tensor({r, c}, rng, 0.2, 2.0)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(square(v[0])); }, {random_tensor({r, c}, rng)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(clamp(v[0], -0.5, 0.5)); },
                        {random_tensor({r, c}, rng, -1, 1, 0.05)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(reduce_mean(v[0], trial % 2)); },
                        {random_tensor({r, c}, rng)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(reduce_sum(v[0], 1 - trial % 2)); },
                        {random_tensor({r, c}, rng)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return reduce_mean(v[0]); }, {random_tensor({r, c}, rng)}) < 1e-4);
        std::vector<std::size_t> idx{0, r - 1, 0};
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(gather_rows(v[0], idx)); }, {random_tensor({r, c}, rng)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(concat(std::vector<Var>{v[0], v[1]}, 0)); },
                        {random_tensor({r, c}, rng), random_tensor({k, c}, rng)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(concat(std::vector<Var>{v[0], v[1]}, 1)); },
                        {random_tensor({r, c}, rng), random_tensor({r, k}, rng)}) < 1e-4);
        const std::size_t steps = 2 + rng.below(4), nodes = 1 + rng.below(3), width = 1 + rng.below(3);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(causal_conv1d(v[0], v[1])); },
                        {random_tensor({2, steps, nodes, c}, rng), random_tensor({width, c, k}, rng)}) < 1e-4);
        Tensor m = random_tensor({nodes, nodes}, rng);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(graph_aggregate(v[0], m)); },
                        {random_tensor({2, steps, nodes, c}, rng)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return mse(v[0], v[1]); },
                        {random_tensor({r, c}, rng), random_tensor({r, c}, rng)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(reshape(v[0], Shape{r * c})); },
                        {random_tensor({r, c}, rng)}) < 1e-4);
        CHECK(gradcheck([&](Tape&, auto& v) { return ws(scale(v[0], -2.5)); }, {random_tensor({r, c}, rng)}) < 1e-4);
    }
}

TEST_CASE("composed block gradient") {
    Rng rng(11);
    auto block = [](Tape&, const std::vector<Var>& v) {
        Var h = relu(add_bias(matmul(v[0], v[1]), v[2]));
        return mse(sigmoid(matmul(h, v[3])), v[4]);
    };
    CHECK(gradcheck(block, {random_tensor({5, 3}, rng), random_tensor({3, 4}, rng), random_tensor({4}, rng),
                            random_tensor({4, 2}, rng), random_tensor({5, 2}, rng)}) < 1e-4);
}

TEST_CASE("causal_conv1d ignores the future") {
    Rng rng(3);
    Tensor x = random_tensor({1, 6, 2, 3}, rng);
    Tensor k = random_tensor({3, 3, 2}, rng);
    Tape tape;
    const Tensor base = causal_conv1d(tape.constant(x), tape.constant(k)).value();
    for (std::size_t t = 0; t < 6; ++t) {
        Tensor probe = x;
        for (std::size_t later = t + 1; later < 6; ++later)
            for (std::size_t j = 0; j < 6; ++j) probe[later * 6 + j] += 10.0;
        const Tensor out = causal_conv1d(tape.constant(probe), tape.constant(k)).value();
        for (std::size_t i = 0; i < (t + 1) * 2 * 2; ++i) CHECK(out[i] == base[i]);
    }
}

TEST_CASE("optimizer step") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        ParamStore p;
        p.add("w", Tensor::vector({0.3, -1.2}));
        OptimizerState s;
        optimizer_step(p, {{"w", Tensor::vector({0.0, 0.0})}}, s);
        CHECK(std::abs(p.get("w")[0] - 0.3) < 1e-12);
        CHECK(std::abs(p.get("w")[1] + 1.2) < 1e-12);
        CHECK(s.step == 1);
    }
    SUBCASE("first step with unit gradient moves by the step size") {
        ParamStore p;
        p.add("x", Tensor::scalar(1.0));
        OptimizerState s;
        s.config.step_size = 0.01;
        optimizer_step(p, {{"x", Tensor::scalar(1.0)}}, s);
        // m_hat = v_hat = 1, so the update is 0.01 / (1 + 1e-8).
        CHECK(p.get("x").item() == doctest::Approx(1.0 - 0.01 / (1.0 + 1e-8)).epsilon(1e-14));
    }
    SUBCASE("identical runs are bit-identical") {
        auto run = [] {
            Rng rng(5);
            ParamStore p;
            p.add("w", random_tensor({3, 2}, rng));
            OptimizerState s;
            for (int i = 0; i < 100; ++i) {
                Tape tape;
                Var w = tape.param(p, "w");
                tape.backward(reduce_sum(square(w)));
                optimizer_step(p, tape.gradients(), s);
            }
            return p;
        };
        CHECK(run() == run());
    }
    SUBCASE("shape mismatch") {
        ParamStore p;
        p.add("w", Tensor::vector({1.0}));
        OptimizerState s;
        CHECK_THROWS_AS(optimizer_step(p, {{"w", Tensor::vector({1.0, 2.0})}}, s), Error);
    }
}

TEST_CASE("checkpoint round trip is bit exact") {
    Rng rng(21);
    const auto dir = std::filesystem::temp_directory_path() / "csf_ckpt_test";
    for (int trial = 0; trial < 5; ++trial) {
        ParamStore p;
        for (int k = 0; k < 4; ++k) {
            Tensor t({1 + rng.below(5), 1 + rng.below(5)});
            for (double& v : t.data()) v = std::ldexp(rng.uniform(-1, 1), static_cast<int>(rng.below(80)) - 40);
            p.add("p" + std::to_string(k), t);
        }
        save_checkpoint(dir, p, {{"trial", trial}});
        Checkpoint back = load_checkpoint(dir);
        CHECK(back.params == p);
        CHECK(back.metadata["trial"] == trial);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("rng streams are deterministic and independent") {
    Rng a(1), b(1);
    for (int i = 0; i < 10; ++i) CHECK(a() == b());
    Rng c = Rng(1).split(rng_stream::kInit), d = Rng(1).split(rng_stream::kShuffle);
    CHECK(c() != d());
    Rng e(1);
    e();
    CHECK(e.split(9)() == Rng(1).split(9)());  // split depends on the key, not the counter
}
