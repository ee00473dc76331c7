#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "csf/rng.hpp"
#include "csf/tensor.hpp"

namespace csf::num {

/// Named trainable tensors in insertion order. Order is part of the
/// checkpoint layout, so it never changes after construction.
class ParamStore {
public:
    void add(const std::string& name, Tensor value);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t total_values() const;

    /// Copies every entry of `other` into this store (names must be new).
    void merge(const ParamStore& other);

    bool operator==(const ParamStore& other) const { return entries_ == other.entries_; }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

using Gradients = std::map<std::string, Tensor>;

/// Glorot-style uniform init: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace csf::num
