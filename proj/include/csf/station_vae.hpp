#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "csf/autodiff.hpp"
#include "csf/rng.hpp"
#include "csf/series.hpp"

namespace csf::vae {

struct VaeConfig {
    std::size_t input_dim = kForcingCount + kStaticCount;
    std::size_t hidden_dim = 32;
    std::size_t latent_dim = 8;
    double kl_weight = 1.0;
};

/// log-variance is clamped to this range before it is exponentiated.
inline constexpr double kLogvarMin = -30.0;
inline constexpr double kLogvarMax = 20.0;

/// Adds "vae.*" parameters: encoder trunk, mean and log-variance heads, and
/// the mirrored decoder.
void init_params(num::ParamStore& params, const VaeConfig& config, Rng& rng);

/// Parameters bound to one tape.
struct VaeVars {
    num::Var enc_w, enc_b, mu_w, mu_b, logvar_w, logvar_b;
    num::Var dec_w1, dec_b1, dec_w2, dec_b2;
};
VaeVars bind(num::Tape& tape, const num::ParamStore& params);

struct Posterior {
    num::Var mu;
    num::Var logvar;
};

/// x: [rows, input_dim] -> mean and log-variance, each [rows, latent_dim].
Posterior encode(const VaeVars& vars, num::Var x);

/// z = mu + exp(logvar / 2) * eps with eps ~ N(0, 1) drawn from rng; eps is a
/// constant, so gradients reach mu and logvar only.
num::Var reparameterize(num::Var mu, num::Var logvar, Rng& rng);
/// Same, with caller-provided noise.
num::Var reparameterize(num::Var mu, num::Var logvar, const num::Tensor& eps);

num::Var decode(const VaeVars& vars, num::Var z);

/// Mean over rows of 0.5 * sum_d (mu^2 + exp(logvar) - logvar - 1).
num::Var kl_divergence(num::Var mu, num::Var logvar);

/// Negative ELBO: reconstruction MSE + kl_weight * KL.
num::Var elbo_loss(num::Var x, num::Var x_hat, num::Var mu, num::Var logvar, double kl_weight);

// Value-level helpers for single vectors and batches.
std::pair<std::vector<double>, std::vector<double>> encode(const num::ParamStore& params,
                                                           std::span<const double> x);
std::vector<double> decode(const num::ParamStore& params, std::span<const double> z);
/// Posterior means for every row of x ([rows, input_dim]).
num::Tensor posterior_mean(const num::ParamStore& params, const num::Tensor& x);

struct RunoffEmbedding {
    std::size_t station = 0;
    std::size_t day = 0;
    std::vector<double> z;
};

/**
 * One embedding per (station, day) of a standardized series set, from the
 * trailing `window` days of forcings followed by the station's static
 * features. Deterministic mode returns the posterior mean; otherwise z is
 * sampled from `rng`.
 */
std::vector<RunoffEmbedding> embed_series(const SeriesSet& standardized, const num::ParamStore& params,
                                          bool deterministic = true, Rng* rng = nullptr, std::size_t window = 1);

/// Encoder row for (station, day): forcings of days day - window + 1 ..= day,
/// oldest first and zero before the record starts, then the statics.
std::vector<double> encoder_input(const StationSeries& station, std::size_t day, std::size_t window = 1);

}  // namespace csf::vae
