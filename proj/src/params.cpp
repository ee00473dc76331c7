#include "csf/params.hpp"

#include <cmath>

#include "csf/error.hpp"

namespace csf::num {

void ParamStore::add(const std::string& name, Tensor value) {
    if (contains(name)) fail(ErrorKind::Internal, "duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(value));
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::Internal, "unknown parameter " + name);
    return entries_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::Internal, "unknown parameter " + name);
    return entries_[it->second].second;
}

std::size_t ParamStore::total_values() const {
    std::size_t total = 0;
    for (const auto& [name, t] : entries_) total += t.size();
    return total;
}

void ParamStore::merge(const ParamStore& other) {
    for (const auto& [name, t] : other.entries()) add(name, t);
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(-limit, limit);
    return t;
}

}  // namespace csf::num
