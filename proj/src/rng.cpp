#include "csf/rng.hpp"

#include <random>

namespace csf {

double Rng::normal() {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(*this);
}

double Rng::gamma(double shape, double scale) {
    std::gamma_distribution<double> dist(shape, scale);
    return dist(*this);
}

std::uint64_t Rng::below(std::uint64_t n) {
    std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
    return dist(*this);
}

}  // namespace csf
