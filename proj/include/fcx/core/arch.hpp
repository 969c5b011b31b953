#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace fcx {

enum class NormMode { Pre, PostPlain, PostDeepNorm };
enum class FlowMode { None, Shared2, PerChannel };

std::string to_string(NormMode m);
std::string to_string(FlowMode m);
NormMode parse_norm_mode(const std::string& s);
FlowMode parse_flow_mode(const std::string& s);

/// Architecture descriptor of the spectral vision transformer.
///
/// Stored in every checkpoint manifest; the parameter layout is a pure
/// function of this struct.
struct ArchConfig {
    int64_t grid_h = 32;
    int64_t grid_w = 64;
    int64_t channels = 4;
    int64_t patch = 4;
    int64_t embed_dim = 64;
    int64_t depth = 8;
    int64_t mlp_ratio = 2;
    NormMode norm_mode = NormMode::PostDeepNorm;
    int64_t spectral_blocks = 4;
    double softshrink = 0.01;
    double kept_modes = 1.0;
    FlowMode flow_mode = FlowMode::Shared2;

    int64_t tokens_h() const { return grid_h / patch; }
    int64_t tokens_w() const { return grid_w / patch; }
    int64_t flow_channels() const;
    int64_t hidden_dim() const { return embed_dim * mlp_ratio; }

    /// Residual scale alpha; 1 unless norm_mode is post_deepnorm.
    double residual_alpha() const;

    /// Throws std::invalid_argument naming the first violated constraint.
    void validate() const;

    bool operator==(const ArchConfig&) const = default;
};

/// Deep-norm constants for an encoder of `depth` blocks.
double deepnorm_alpha(int64_t depth);
double deepnorm_beta(int64_t depth);

void to_json(nlohmann::json& j, const ArchConfig& a);
void from_json(const nlohmann::json& j, ArchConfig& a);

}  // namespace fcx
