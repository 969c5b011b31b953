#pragma once

#include <filesystem>
#include <string>

#include "fcx/core/params.hpp"

namespace fcx {

inline constexpr int kCheckpointVersion = 1;

/// Writes `manifest.json`, `weights.bin` and `digest` into `dir` and
/// returns the hex SHA-256 recorded in `digest`.
std::string save_checkpoint(const ModelParams& params, const std::filesystem::path& dir);

/// Loads a checkpoint written by save_checkpoint. Fails closed: digest
/// mismatch, truncation, version or layout mismatch all throw and no
/// partial parameters are returned.
ModelParams load_checkpoint(const std::filesystem::path& dir);

/// Digest of the in-memory parameters as save_checkpoint would record it.
std::string params_digest(const ModelParams& params);

}  // namespace fcx
