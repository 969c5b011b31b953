#include "fcx/core/arch.hpp"

#include <cmath>
#include <stdexcept>

namespace fcx {

std::string to_string(NormMode m) {
    switch (m) {
        case NormMode::Pre: return "pre";
        case NormMode::PostPlain: return "post_plain";
        case NormMode::PostDeepNorm: return "post_deepnorm";
    }
    throw std::logic_error("bad norm mode");
}

std::string to_string(FlowMode m) {
    switch (m) {
        case FlowMode::None: return "none";
        case FlowMode::Shared2: return "shared2";
        case FlowMode::PerChannel: return "per_channel";
    }
    throw std::logic_error("bad flow mode");
}

NormMode parse_norm_mode(const std::string& s) {
    if (s == "pre") return NormMode::Pre;
    if (s == "post_plain") return NormMode::PostPlain;
    if (s == "post_deepnorm") return NormMode::PostDeepNorm;
    throw std::invalid_argument("unknown norm_mode '" + s + "'");
}

FlowMode parse_flow_mode(const std::string& s) {
    if (s == "none") return FlowMode::None;
    if (s == "shared2") return FlowMode::Shared2;
    if (s == "per_channel") return FlowMode::PerChannel;
    throw std::invalid_argument("unknown flow_mode '" + s + "'");
}

int64_t ArchConfig::flow_channels() const {
    switch (flow_mode) {
        case FlowMode::None: return 0;
        case FlowMode::Shared2: return 2;
        case FlowMode::PerChannel: return 2 * channels;
    }
    return 0;
}

double ArchConfig::residual_alpha() const {
    return norm_mode == NormMode::PostDeepNorm ? deepnorm_alpha(depth) : 1.0;
}

void ArchConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("arch: " + m); };
    if (grid_h < 2 || grid_w < 2 || grid_h % 2 || grid_w % 2) fail("grid must be even and >= 2");
    if (channels < 1) fail("channels must be >= 1");
    if (patch < 1) fail("patch must be >= 1");
    if (grid_h % patch || grid_w % patch) fail("patch size must divide H and W");
    if (embed_dim < 1 || depth < 1 || mlp_ratio < 1) fail("embed_dim, depth and mlp_ratio must be >= 1");
    if (spectral_blocks < 1 || embed_dim % spectral_blocks) fail("embed_dim must be divisible by spectral_blocks");
    if (!(softshrink >= 0.0)) fail("softshrink must be >= 0");
    if (!(kept_modes > 0.0 && kept_modes <= 1.0)) fail("kept_modes must be in (0, 1]");
}

double deepnorm_alpha(int64_t depth) {
    if (depth < 1) throw std::invalid_argument("deep-norm requires at least one block");
    return std::pow(2.0 * static_cast<double>(depth), 0.25);
}

double deepnorm_beta(int64_t depth) {
    if (depth < 1) throw std::invalid_argument("deep-norm requires at least one block");
    return std::pow(8.0 * static_cast<double>(depth), -0.25);
}

void to_json(nlohmann::json& j, const ArchConfig& a) {
    j = nlohmann::json{{"grid_h", a.grid_h},
                       {"grid_w", a.grid_w},
                       {"channels", a.channels},
                       {"patch", a.patch},
                       {"embed_dim", a.embed_dim},
                       {"depth", a.depth},
                       {"mlp_ratio", a.mlp_ratio},
                       {"norm_mode", to_string(a.norm_mode)},
                       {"spectral_blocks", a.spectral_blocks},
                       {"softshrink", a.softshrink},
                       {"kept_modes", a.kept_modes},
                       {"flow_mode", to_string(a.flow_mode)}};
}

void from_json(const nlohmann::json& j, ArchConfig& a) {
    ArchConfig d;
    a.grid_h = j.value("grid_h", d.grid_h);
    a.grid_w = j.value("grid_w", d.grid_w);
    a.channels = j.value("channels", d.channels);
    a.patch = j.value("patch", d.patch);
    a.embed_dim = j.value("embed_dim", d.embed_dim);
    a.depth = j.value("depth", d.depth);
    a.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
    a.norm_mode = parse_norm_mode(j.value("norm_mode", to_string(d.norm_mode)));
    a.spectral_blocks = j.value("spectral_blocks", d.spectral_blocks);
    a.softshrink = j.value("softshrink", d.softshrink);
    a.kept_modes = j.value("kept_modes", d.kept_modes);
    a.flow_mode = parse_flow_mode(j.value("flow_mode", to_string(d.flow_mode)));
}

}  // namespace fcx
