#include "csf/station_vae.hpp"

#include "csf/error.hpp"

namespace csf::vae {

using num::Shape;
using num::Tensor;
using num::Var;

void init_params(num::ParamStore& params, const VaeConfig& c, Rng& rng) {
    const std::size_t in = c.input_dim, hid = c.hidden_dim, d = c.latent_dim;
    params.add("vae.enc.w", num::glorot_uniform(Shape{in, hid}, in, hid, rng));
    params.add("vae.enc.b", Tensor(Shape{hid}));
    params.add("vae.mu.w", num::glorot_uniform(Shape{hid, d}, hid, d, rng));
    params.add("vae.mu.b", Tensor(Shape{d}));
    params.add("vae.logvar.w", num::glorot_uniform(Shape{hid, d}, hid, d, rng));
    params.add("vae.logvar.b", Tensor(Shape{d}));
    params.add("vae.dec.w1", num::glorot_uniform(Shape{d, hid}, d, hid, rng));
    params.add("vae.dec.b1", Tensor(Shape{hid}));
    params.add("vae.dec.w2", num::glorot_uniform(Shape{hid, in}, hid, in, rng));
    params.add("vae.dec.b2", Tensor(Shape{in}));
}

VaeVars bind(num::Tape& tape, const num::ParamStore& p) {
    return {tape.param(p, "vae.enc.w"),    tape.param(p, "vae.enc.b"),   tape.param(p, "vae.mu.w"),
            tape.param(p, "vae.mu.b"),     tape.param(p, "vae.logvar.w"), tape.param(p, "vae.logvar.b"),
            tape.param(p, "vae.dec.w1"),   tape.param(p, "vae.dec.b1"),  tape.param(p, "vae.dec.w2"),
            tape.param(p, "vae.dec.b2")};
}

Posterior encode(const VaeVars& v, Var x) {
    Var h = num::relu(num::add_bias(num::matmul(x, v.enc_w), v.enc_b));
    return {num::add_bias(num::matmul(h, v.mu_w), v.mu_b), num::add_bias(num::matmul(h, v.logvar_w), v.logvar_b)};
}

Var reparameterize(Var mu, Var logvar, const Tensor& eps) {
    if (eps.shape() != mu.shape() || logvar.shape() != mu.shape())
        fail(ErrorKind::ShapeMismatch, "reparameterize operands differ in shape");
    Var sigma = num::exp(num::scale(num::clamp(logvar, kLogvarMin, kLogvarMax), 0.5));
    return num::add(mu, num::mul(sigma, mu.tape().constant(eps)));
}

Var reparameterize(Var mu, Var logvar, Rng& rng) {
    Tensor eps(mu.shape());
    for (double& e : eps.data()) e = rng.normal();
    return reparameterize(mu, logvar, eps);
}

Var decode(const VaeVars& v, Var z) {
    Var h = num::relu(num::add_bias(num::matmul(z, v.dec_w1), v.dec_b1));
    return num::add_bias(num::matmul(h, v.dec_w2), v.dec_b2);
}

Var kl_divergence(Var mu, Var logvar) {
    num::Tape& tape = mu.tape();
    Var lv = num::clamp(logvar, kLogvarMin, kLogvarMax);
    Var inner = num::sub(num::add(num::square(mu), num::exp(lv)), lv);
    const double rows = static_cast<double>(mu.value().rows());
    const double cells = static_cast<double>(mu.value().size());
    // sum(inner - 1) / rows * 0.5
    Var total = num::reduce_sum(inner);
    Var shifted = num::sub(total, tape.constant(Tensor::scalar(cells)));
    return num::scale(shifted, 0.5 / rows);
}

Var elbo_loss(Var x, Var x_hat, Var mu, Var logvar, double kl_weight) {
    Var recon = num::mse(x_hat, x);
    return num::add(recon, num::scale(kl_divergence(mu, logvar), kl_weight));
}

std::pair<std::vector<double>, std::vector<double>> encode(const num::ParamStore& params,
                                                           std::span<const double> x) {
    num::Tape tape;
    VaeVars v = bind(tape, params);
    Var input = tape.constant(Tensor(Shape{1, x.size()}, std::vector<double>(x.begin(), x.end())));
    Posterior post = encode(v, input);
    const auto& mu = post.mu.value().data();
    const auto& lv = post.logvar.value().data();
    return {std::vector<double>(mu.begin(), mu.end()), std::vector<double>(lv.begin(), lv.end())};
}

std::vector<double> decode(const num::ParamStore& params, std::span<const double> z) {
    num::Tape tape;
    VaeVars v = bind(tape, params);
    Var out = decode(v, tape.constant(Tensor(Shape{1, z.size()}, std::vector<double>(z.begin(), z.end()))));
    const auto data = out.value().data();
    return {data.begin(), data.end()};
}

Tensor posterior_mean(const num::ParamStore& params, const Tensor& x) {
    num::Tape tape;
    VaeVars v = bind(tape, params);
    return encode(v, tape.constant(x)).mu.value();
}

std::vector<double> encoder_input(const StationSeries& station, std::size_t day, std::size_t window) {
    if (window == 0) fail(ErrorKind::ConfigInvalid, "forcing window must be at least one day");
    if (day >= station.forcings.size()) fail(ErrorKind::IndexMismatch, "day outside the series");
    std::vector<double> row(window * kForcingCount, 0.0);
    for (std::size_t j = 0; j < window; ++j) {
        const std::size_t lag = window - 1 - j;
        if (lag <= day) std::copy_n(station.forcings[day - lag].begin(), kForcingCount, row.begin() + j * kForcingCount);
    }
    row.insert(row.end(), station.statics.begin(), station.statics.end());
    return row;
}

std::vector<RunoffEmbedding> embed_series(const SeriesSet& standardized, const num::ParamStore& params,
                                          bool deterministic, Rng* rng, std::size_t window) {
    if (!deterministic && rng == nullptr) fail(ErrorKind::Internal, "sampling mode needs an rng");
    std::vector<RunoffEmbedding> out;
    for (std::size_t s = 0; s < standardized.stations.size(); ++s) {
        const StationSeries& st = standardized.stations[s];
        const std::size_t days = st.forcings.size();
        if (days == 0) continue;
        const std::size_t width = window * kForcingCount + st.statics.size();
        Tensor x(Shape{days, width});
        for (std::size_t t = 0; t < days; ++t) {
            const auto row = encoder_input(st, t, window);
            std::copy(row.begin(), row.end(), x.ptr() + t * width);
        }
        num::Tape tape;
        VaeVars v = bind(tape, params);
        Posterior post = encode(v, tape.constant(x));
        Tensor z = deterministic ? post.mu.value() : reparameterize(post.mu, post.logvar, *rng).value();
        const std::size_t d = z.cols();
        for (std::size_t t = 0; t < days; ++t)
            out.push_back({s, t, std::vector<double>(z.ptr() + t * d, z.ptr() + (t + 1) * d)});
    }
    return out;
}

}  // namespace csf::vae
