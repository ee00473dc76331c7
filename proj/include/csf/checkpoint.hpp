#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "csf/params.hpp"

namespace csf::num {

struct Checkpoint {
    ParamStore params;
    nlohmann::json metadata;
};

/**
 * Writes `<dir>/manifest.json` (names, shapes, dtype, byte offsets, metadata)
 * and `<dir>/params.bin` (little-endian float64 values, concatenated in
 * manifest order). Loading reproduces every value bit-for-bit.
 */
void save_checkpoint(const std::filesystem::path& dir, const ParamStore& params,
                     const nlohmann::json& metadata);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace csf::num
