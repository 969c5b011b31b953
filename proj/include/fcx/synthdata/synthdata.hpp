#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fcx/core/rng.hpp"
#include "fcx/core/tensor.hpp"

namespace fcx {

/// Half-open interval of frame indices.
struct TimeRange {
    int64_t begin = 0;
    int64_t end = 0;

    int64_t size() const { return end - begin; }
    bool operator==(const TimeRange&) const = default;
};

/// Generator configuration of a synthetic advection dataset.
struct DatasetMeta {
    int64_t height = 32;
    int64_t width = 64;
    std::vector<std::string> channel_names = {"tracer0", "tracer1", "tracer2", "tracer3"};
    int64_t timesteps = 2048;
    double dt = 1.0;
    uint64_t seed = 0;
    int64_t n_modes = 3;
    double amplitude = 0.8;  // cells per step
    double diffusion = 0.02;
    double drift = 0.25;        // stream-function translation along x, cells per step (scaled per mode)
    double relaxation = 0.02;   // per-step pull of every channel toward its initial pattern
    double test_fraction = 0.125;

    int64_t channels() const { return static_cast<int64_t>(channel_names.size()); }
    /// Training frames come first, the held-out test frames last.
    TimeRange train_range() const;
    TimeRange test_range() const;
    void validate() const;

    bool operator==(const DatasetMeta&) const = default;
};

void to_json(nlohmann::json& j, const DatasetMeta& m);
void from_json(const nlohmann::json& j, DatasetMeta& m);
void to_json(nlohmann::json& j, const NormStats& s);
void from_json(const nlohmann::json& j, NormStats& s);

/// One Fourier term of the stream function,
/// psi(i, j) = amp * cos(2 pi (kx j / W + ky i / H) + phase).
struct StreamMode {
    int kx = 0;
    int ky = 0;
    double amp = 0.0;
    double phase = 0.0;
};

/// Velocity in cells per step. u moves along columns (x), v along rows (y).
struct VelocityField {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<double> u;
    std::vector<double> v;
    std::vector<StreamMode> modes;
    double scale = 0.0;  // multiplier applied to the raw stream-function differences

    double u_at(int64_t i, int64_t j) const { return u[static_cast<size_t>(i * width + j)]; }
    double v_at(int64_t i, int64_t j) const { return v[static_cast<size_t>(i * width + j)]; }
};

/// Evaluates a stream-function mode sum on the grid.
std::vector<double> stream_function(const std::vector<StreamMode>& modes, int64_t height, int64_t width);

/// Divergence-free field from a random low-wavenumber stream function,
/// u = d(psi)/dy, v = -d(psi)/dx with periodic centered differences, scaled
/// so the maximum speed equals `amplitude`.
VelocityField make_velocity_field(RngStream& rng, int64_t height, int64_t width, int64_t n_modes, double amplitude);

/// Velocity of the stream-function modes translated by shifts[m] cells
/// along x, rescaled so the maximum speed equals `amplitude`.
VelocityField translated_velocity(const std::vector<StreamMode>& modes, const std::vector<double>& shifts,
                                  int64_t height, int64_t width, double amplitude);

/// Maximum absolute periodic centered-difference divergence.
double max_divergence(const VelocityField& vel);

/// One step of semi-Lagrangian bilinear advection followed by explicit
/// five-point diffusion, periodic in both axes, with a global additive
/// mass fixer per channel. `state` has shape (C, H, W).
Tensor<double> step_state(const Tensor<double>& state, const VelocityField& vel, double dt, double kappa);

struct DatasetManifest {
    std::string digest;
    int64_t frames = 0;
    NormStats stats;
};

/// Writes meta.json, frames/NNNNNN.bin and stats.json into out_dir.
/// The output is a pure function of `meta`.
DatasetManifest generate_dataset(const DatasetMeta& meta, const std::filesystem::path& out_dir);

/// Read-only view of a generated dataset, fully resident in memory.
class Dataset {
public:
    static Dataset open(const std::filesystem::path& dir);
    /// In-memory dataset, used by tests. Frames have shape (C, H, W).
    static Dataset from_frames(DatasetMeta meta, std::vector<Tensor<float>> frames);

    const DatasetMeta& meta() const { return meta_; }
    int64_t frames() const { return static_cast<int64_t>(frames_.size()); }
    const Tensor<float>& frame(int64_t t) const;
    /// SHA-256 over meta.json followed by every frame blob in order.
    const std::string& digest() const { return digest_; }
    const std::filesystem::path& dir() const { return dir_; }

private:
    DatasetMeta meta_;
    std::vector<Tensor<float>> frames_;
    std::string digest_;
    std::filesystem::path dir_;
};

/// Population mean and std per channel over `range`. Throws on an empty
/// range or a zero-variance channel.
NormStats compute_stats(const Dataset& dataset, TimeRange range);

NormStats load_stats(const std::filesystem::path& dataset_dir);

}  // namespace fcx
