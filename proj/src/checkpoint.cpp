#include "csf/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "csf/error.hpp"

namespace csf::num {

namespace fs = std::filesystem;
using nlohmann::json;

void save_checkpoint(const fs::path& dir, const ParamStore& params, const json& metadata) {
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "csf-checkpoint";
    manifest["version"] = 1;
    manifest["dtype"] = "float64";
    manifest["byte_order"] = "little";
    manifest["blob"] = "params.bin";
    manifest["metadata"] = metadata;
    manifest["params"] = json::array();

    std::ofstream blob(dir / "params.bin", std::ios::binary);
    if (!blob) fail(ErrorKind::IoError, "cannot write " + (dir / "params.bin").string());
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : params.entries()) {
        manifest["params"].push_back(
            {{"name", name}, {"shape", tensor.shape()}, {"offset", offset}, {"count", tensor.size()}});
        for (double v : tensor.data()) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            char bytes[8];
            for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xffU);
            blob.write(bytes, 8);
        }
        offset += 8 * tensor.size();
    }
    manifest["blob_bytes"] = offset;
    std::ofstream out(dir / "manifest.json");
    if (!out) fail(ErrorKind::IoError, "cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) fail(ErrorKind::IoError, "missing " + (dir / "manifest.json").string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::ParseError, std::string("checkpoint manifest: ") + e.what());
    }
    if (manifest.value("dtype", "") != "float64")
        fail(ErrorKind::ParseError, "checkpoint dtype must be float64");

    std::ifstream blob(dir / manifest.value("blob", "params.bin"), std::ios::binary);
    if (!blob) fail(ErrorKind::IoError, "missing checkpoint blob in " + dir.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());

    Checkpoint ckpt;
    ckpt.metadata = manifest.value("metadata", json::object());
    for (const auto& entry : manifest.at("params")) {
        const Shape shape = entry.at("shape").get<Shape>();
        const auto offset = entry.at("offset").get<std::uint64_t>();
        const auto count = entry.at("count").get<std::uint64_t>();
        if (count != numel(shape) || offset + 8 * count > bytes.size())
            fail(ErrorKind::ParseError, "checkpoint entry " + entry.at("name").get<std::string>() +
                                            " is inconsistent with the blob");
        std::vector<double> values(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b)
                bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + 8 * i + b]))
                        << (8 * b);
            values[i] = std::bit_cast<double>(bits);
        }
        ckpt.params.add(entry.at("name").get<std::string>(), Tensor(shape, std::move(values)));
    }
    return ckpt;
}

}  // namespace csf::num
