#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace fcx {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<uint8_t> read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

/// Little-endian f32 serialization (host order is asserted little-endian).
std::vector<uint8_t> floats_to_le_bytes(std::span<const float> values);
std::vector<float> le_bytes_to_floats(std::span<const uint8_t> bytes);

/// Incremental SHA-256.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(std::span<const uint8_t> bytes);
    void update(const std::string& s);
    std::string hex_digest();

private:
    void* ctx_;
};

std::string sha256_hex(std::span<const uint8_t> bytes);

}  // namespace fcx
