#include "fcx/core/checkpoint.hpp"

#include "fcx/core/io.hpp"

namespace fcx {

namespace fs = std::filesystem;
using nlohmann::json;

bool ModelParams::all_finite() const {
    for (const auto& p : params) {
        if (!p.value.all_finite()) return false;
    }
    return true;
}

namespace {

struct Encoded {
    std::string manifest;
    std::vector<uint8_t> blob;
};

Encoded encode(const ModelParams& mp) {
    json tensors = json::array();
    Encoded e;
    for (const auto& p : mp.params) {
        auto bytes = floats_to_le_bytes(p.value.data());
        tensors.push_back({{"name", p.name},
                           {"shape", p.value.shape()},
                           {"dtype", "f32"},
                           {"offset", e.blob.size()},
                           {"len", bytes.size()}});
        e.blob.insert(e.blob.end(), bytes.begin(), bytes.end());
    }
    json manifest = {{"version", kCheckpointVersion}, {"arch", mp.arch}, {"tensors", tensors}};
    e.manifest = manifest.dump(2) + "\n";
    return e;
}

std::string digest_of(const std::string& manifest, std::span<const uint8_t> blob) {
    Sha256 h;
    h.update(manifest);
    h.update(blob);
    return h.hex_digest();
}

}  // namespace

std::string params_digest(const ModelParams& params) {
    auto e = encode(params);
    return digest_of(e.manifest, e.blob);
}

std::string save_checkpoint(const ModelParams& params, const fs::path& dir) {
    if (!params.all_finite()) throw std::invalid_argument("refusing to checkpoint non-finite parameters");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
    auto e = encode(params);
    const std::string digest = digest_of(e.manifest, e.blob);
    write_text(dir / "manifest.json", e.manifest);
    write_file(dir / "weights.bin", e.blob);
    write_text(dir / "digest", digest + "\n");
    return digest;
}

ModelParams load_checkpoint(const fs::path& dir) {
    const std::string manifest_text = read_text(dir / "manifest.json");
    const std::vector<uint8_t> blob = read_file(dir / "weights.bin");
    std::string recorded = read_text(dir / "digest");
    while (!recorded.empty() && (recorded.back() == '\n' || recorded.back() == ' ')) recorded.pop_back();

    if (digest_of(manifest_text, blob) != recorded) {
        throw IoError("checkpoint digest mismatch in " + dir.string());
    }

    json manifest;
    try {
        manifest = json::parse(manifest_text);
    } catch (const json::exception& ex) {
        throw IoError("malformed checkpoint manifest in " + dir.string() + ": " + ex.what());
    }
    const int version = manifest.value("version", -1);
    if (version != kCheckpointVersion) {
        throw IoError("checkpoint version " + std::to_string(version) + " in " + dir.string() + ", expected " +
                      std::to_string(kCheckpointVersion));
    }

    ModelParams out;
    out.arch = manifest.at("arch").get<ArchConfig>();
    for (const auto& t : manifest.at("tensors")) {
        if (t.value("dtype", "") != "f32") throw IoError("unsupported dtype in checkpoint " + dir.string());
        const auto name = t.at("name").get<std::string>();
        const auto shape = t.at("shape").get<Shape>();
        const auto offset = t.at("offset").get<uint64_t>();
        const auto len = t.at("len").get<uint64_t>();
        if (offset > blob.size() || len > blob.size() - offset) {
            throw IoError("tensor " + name + " extends past end of weights.bin in " + dir.string());
        }
        if (len != static_cast<uint64_t>(shape_numel(shape)) * sizeof(float)) {
            throw IoError("tensor " + name + " length does not match shape " + shape_str(shape));
        }
        size_t k = out.params.add(name, shape);
        out.params[k].value = Tensor<float>(shape, le_bytes_to_floats(std::span(blob).subspan(offset, len)));
    }
    return out;
}

}  // namespace fcx
