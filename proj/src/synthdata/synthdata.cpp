#include "fcx/synthdata/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "fcx/core/io.hpp"

namespace fcx {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

inline int64_t wrap(int64_t k, int64_t n) {
    k %= n;
    return k < 0 ? k + n : k;
}

std::string frame_name(int64_t t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06lld.bin", static_cast<long long>(t));
    return buf;
}

}  // namespace

TimeRange DatasetMeta::train_range() const {
    const auto n_test = static_cast<int64_t>(std::llround(static_cast<double>(timesteps) * test_fraction));
    return {0, timesteps - n_test};
}

TimeRange DatasetMeta::test_range() const { return {train_range().end, timesteps}; }

void DatasetMeta::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("dataset config: " + m); };
    if (height < 2 || width < 2 || height % 2 || width % 2) fail("grid must be even and >= 2");
    if (channel_names.empty()) fail("at least one channel is required");
    if (timesteps < 2) fail("timesteps must be >= 2");
    if (!(dt > 0.0)) fail("dt must be positive");
    if (n_modes < 1) fail("n_modes must be >= 1");
    if (!(amplitude >= 0.0)) fail("amplitude must be >= 0");
    if (amplitude * dt > 2.0) fail("per-step displacement amplitude*dt must be <= 2 cells");
    if (!(diffusion >= 0.0)) fail("diffusion must be >= 0");
    if (diffusion * dt > 0.25) fail("explicit diffusion requires diffusion*dt <= 0.25");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) fail("test_fraction must be in [0, 1)");
    if (!std::isfinite(drift)) fail("drift must be finite");
    if (!(relaxation >= 0.0 && relaxation <= 1.0)) fail("relaxation must be in [0, 1]");
}

void to_json(json& j, const DatasetMeta& m) {
    j = json{{"height", m.height},     {"width", m.width},       {"channels", m.channel_names},
             {"timesteps", m.timesteps}, {"dt", m.dt},           {"seed", m.seed},
             {"n_modes", m.n_modes},   {"amplitude", m.amplitude}, {"diffusion", m.diffusion},
             {"drift", m.drift},       {"relaxation", m.relaxation}, {"test_fraction", m.test_fraction}};
}

void from_json(const json& j, DatasetMeta& m) {
    DatasetMeta d;
    m.height = j.value("height", d.height);
    m.width = j.value("width", d.width);
    m.channel_names = j.value("channels", d.channel_names);
    m.timesteps = j.value("timesteps", d.timesteps);
    m.dt = j.value("dt", d.dt);
    m.seed = j.value("seed", d.seed);
    m.n_modes = j.value("n_modes", d.n_modes);
    m.amplitude = j.value("amplitude", d.amplitude);
    m.diffusion = j.value("diffusion", d.diffusion);
    m.drift = j.value("drift", d.drift);
    m.relaxation = j.value("relaxation", d.relaxation);
    m.test_fraction = j.value("test_fraction", d.test_fraction);
}

void to_json(json& j, const NormStats& s) { j = json{{"mean", s.mean}, {"std", s.std}}; }

void from_json(const json& j, NormStats& s) {
    s.mean = j.at("mean").get<std::vector<double>>();
    s.std = j.at("std").get<std::vector<double>>();
}

std::vector<double> stream_function(const std::vector<StreamMode>& modes, int64_t height, int64_t width) {
    std::vector<double> psi(static_cast<size_t>(height * width), 0.0);
    for (const auto& m : modes) {
        for (int64_t i = 0; i < height; ++i) {
            for (int64_t j = 0; j < width; ++j) {
                const double arg = 2.0 * std::numbers::pi *
                                       (static_cast<double>(m.kx * j) / static_cast<double>(width) +
                                        static_cast<double>(m.ky * i) / static_cast<double>(height)) +
                                   m.phase;
                psi[static_cast<size_t>(i * width + j)] += m.amp * std::cos(arg);
            }
        }
    }
    return psi;
}

namespace {

VelocityField velocity_from_modes(std::vector<StreamMode> modes, int64_t height, int64_t width, double amplitude) {
    VelocityField vel;
    vel.height = height;
    vel.width = width;
    vel.modes = std::move(modes);
    const auto psi = stream_function(vel.modes, height, width);
    auto at = [&](int64_t i, int64_t j) { return psi[static_cast<size_t>(wrap(i, height) * width + wrap(j, width))]; };
    const size_t n = static_cast<size_t>(height * width);
    vel.u.assign(n, 0.0);
    vel.v.assign(n, 0.0);
    double max_speed = 0.0;
    for (int64_t i = 0; i < height; ++i) {
        for (int64_t j = 0; j < width; ++j) {
            const double u = 0.5 * (at(i + 1, j) - at(i - 1, j));
            const double v = -0.5 * (at(i, j + 1) - at(i, j - 1));
            vel.u[static_cast<size_t>(i * width + j)] = u;
            vel.v[static_cast<size_t>(i * width + j)] = v;
            max_speed = std::max(max_speed, std::hypot(u, v));
        }
    }
    vel.scale = max_speed > 0.0 ? amplitude / max_speed : 0.0;
    for (size_t k = 0; k < n; ++k) {
        vel.u[k] *= vel.scale;
        vel.v[k] *= vel.scale;
    }
    return vel;
}

}  // namespace

VelocityField make_velocity_field(RngStream& rng, int64_t height, int64_t width, int64_t n_modes, double amplitude) {
    if (n_modes < 1) throw std::invalid_argument("make_velocity_field: n_modes must be >= 1");
    std::vector<StreamMode> modes;
    for (int64_t m = 0; m < n_modes; ++m) {
        StreamMode mode;
        do {
            mode.kx = static_cast<int>(rng.next_below(3));      // 0..2
            mode.ky = static_cast<int>(rng.next_below(5)) - 2;  // -2..2
        } while (mode.kx == 0 && mode.ky == 0);
        mode.amp = 0.5 + 0.5 * rng.next_uniform();
        mode.phase = 2.0 * std::numbers::pi * rng.next_uniform();
        modes.push_back(mode);
    }
    return velocity_from_modes(std::move(modes), height, width, amplitude);
}

VelocityField translated_velocity(const std::vector<StreamMode>& modes, const std::vector<double>& shifts,
                                  int64_t height, int64_t width, double amplitude) {
    if (shifts.size() != modes.size()) throw std::invalid_argument("translated_velocity: one shift per mode");
    std::vector<StreamMode> moved = modes;
    for (size_t m = 0; m < moved.size(); ++m) {
        // psi(x - s): the cosine argument loses 2 pi kx s / W.
        moved[m].phase -= 2.0 * std::numbers::pi * static_cast<double>(moved[m].kx) * shifts[m] / static_cast<double>(width);
    }
    return velocity_from_modes(std::move(moved), height, width, amplitude);
}

double max_divergence(const VelocityField& vel) {
    const int64_t h = vel.height, w = vel.width;
    double worst = 0.0;
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            const double du = 0.5 * (vel.u_at(i, wrap(j + 1, w)) - vel.u_at(i, wrap(j - 1, w)));
            const double dv = 0.5 * (vel.v_at(wrap(i + 1, h), j) - vel.v_at(wrap(i - 1, h), j));
            worst = std::max(worst, std::abs(du + dv));
        }
    }
    return worst;
}

Tensor<double> step_state(const Tensor<double>& state, const VelocityField& vel, double dt, double kappa) {
    if (state.rank() != 3) throw std::invalid_argument("step_state expects a (C, H, W) state");
    const int64_t C = state.dim(0), H = state.dim(1), W = state.dim(2);
    if (vel.height != H || vel.width != W) throw std::invalid_argument("velocity grid does not match state");
    if (kappa < 0.0 || kappa * dt > 0.25) {
        throw std::invalid_argument("step_state: explicit diffusion is unstable unless kappa*dt <= 0.25");
    }

    Tensor<double> advected(state.shape());
    for (int64_t c = 0; c < C; ++c) {
        const double* src = state.ptr() + c * H * W;
        double* dst = advected.ptr() + c * H * W;
        for (int64_t i = 0; i < H; ++i) {
            for (int64_t j = 0; j < W; ++j) {
                const double sy = static_cast<double>(i) - vel.v_at(i, j) * dt;
                const double sx = static_cast<double>(j) - vel.u_at(i, j) * dt;
                const double fy = std::floor(sy), fx = std::floor(sx);
                const double ay = sy - fy, ax = sx - fx;
                const int64_t y0 = wrap(static_cast<int64_t>(fy), H), y1 = wrap(static_cast<int64_t>(fy) + 1, H);
                const int64_t x0 = wrap(static_cast<int64_t>(fx), W), x1 = wrap(static_cast<int64_t>(fx) + 1, W);
                dst[i * W + j] = (1.0 - ay) * ((1.0 - ax) * src[y0 * W + x0] + ax * src[y0 * W + x1]) +
                                 ay * ((1.0 - ax) * src[y1 * W + x0] + ax * src[y1 * W + x1]);
            }
        }
    }

    Tensor<double> out(state.shape());
    for (int64_t c = 0; c < C; ++c) {
        const double* a = advected.ptr() + c * H * W;
        double* o = out.ptr() + c * H * W;
        for (int64_t i = 0; i < H; ++i) {
            const int64_t up = wrap(i - 1, H) * W, down = wrap(i + 1, H) * W, row = i * W;
            for (int64_t j = 0; j < W; ++j) {
                const double lap = a[up + j] + a[down + j] + a[row + wrap(j - 1, W)] + a[row + wrap(j + 1, W)] -
                                   4.0 * a[row + j];
                o[row + j] = a[row + j] + kappa * dt * lap;
            }
        }
        // Bilinear semi-Lagrangian transport is not exactly conservative;
        // restore the channel mean.
        double before = 0.0, after = 0.0;
        const double* s = state.ptr() + c * H * W;
        for (int64_t k = 0; k < H * W; ++k) {
            before += s[k];
            after += o[k];
        }
        const double fix = (before - after) / static_cast<double>(H * W);
        for (int64_t k = 0; k < H * W; ++k) o[k] += fix;
    }
    return out;
}

namespace {

Tensor<double> initial_state(const DatasetMeta& meta) {
    RngStream rng(meta.seed, streams::kDatasetInitial);
    const int64_t C = meta.channels(), H = meta.height, W = meta.width;
    Tensor<double> state({C, H, W});
    for (int64_t c = 0; c < C; ++c) {
        const double offset = -5.0 + 20.0 * rng.next_uniform();
        const double gain = 0.5 + 2.5 * rng.next_uniform();
        std::vector<StreamMode> modes;
        for (int m = 0; m < 6; ++m) {
            StreamMode mode;
            mode.kx = static_cast<int>(rng.next_below(9)) - 4;
            mode.ky = static_cast<int>(rng.next_below(9)) - 4;
            const double k = std::hypot(mode.kx, mode.ky);
            mode.amp = rng.next_normal() / (1.0 + k);
            mode.phase = 2.0 * std::numbers::pi * rng.next_uniform();
            modes.push_back(mode);
        }
        const auto field = stream_function(modes, H, W);
        for (int64_t k = 0; k < H * W; ++k) state[c * H * W + k] = offset + gain * field[static_cast<size_t>(k)];
    }
    return state;
}

}  // namespace

DatasetManifest generate_dataset(const DatasetMeta& meta, const fs::path& out_dir) {
    meta.validate();
    std::error_code ec;
    fs::create_directories(out_dir / "frames", ec);
    if (ec) throw IoError("cannot create " + (out_dir / "frames").string() + ": " + ec.message());

    RngStream vel_rng(meta.seed, streams::kDatasetVelocity);
    const auto base = make_velocity_field(vel_rng, meta.height, meta.width, meta.n_modes, meta.amplitude);
    // Each mode translates at its own speed, so the flow never settles and
    // the transported tracers never reach a steady state.
    std::vector<double> speed;
    for (int64_t m = 0; m < meta.n_modes; ++m) {
        const double sign = vel_rng.next_below(2) ? 1.0 : -1.0;
        speed.push_back(sign * meta.drift * (0.5 + vel_rng.next_uniform()));
    }

    const std::string meta_text = json(meta).dump(2) + "\n";
    write_text(out_dir / "meta.json", meta_text);

    Sha256 digest;
    digest.update(meta_text);

    std::vector<Tensor<float>> frames;
    frames.reserve(static_cast<size_t>(meta.timesteps));
    const Tensor<double> rest = initial_state(meta);
    Tensor<double> state = rest;
    std::vector<double> shifts(speed.size(), 0.0);
    for (int64_t t = 0; t < meta.timesteps; ++t) {
        if (t > 0) {
            for (size_t m = 0; m < speed.size(); ++m) shifts[m] = speed[m] * meta.dt * static_cast<double>(t - 1);
            const auto vel = meta.drift == 0.0 ? base
                                               : translated_velocity(base.modes, shifts, meta.height, meta.width,
                                                                     meta.amplitude);
            state = step_state(state, vel, meta.dt, meta.diffusion);
            // Relaxation toward the initial pattern keeps tracer variance from
            // mixing away; the pattern has the state's mean, so means hold.
            for (int64_t k = 0; k < state.size(); ++k) state[k] += meta.relaxation * (rest[k] - state[k]);
        }
        frames.push_back(state.cast<float>());
        const auto bytes = floats_to_le_bytes(frames.back().data());
        write_file(out_dir / "frames" / frame_name(t), bytes);
        digest.update(bytes);
    }

    DatasetManifest manifest;
    manifest.digest = digest.hex_digest();
    manifest.frames = meta.timesteps;
    auto ds = Dataset::from_frames(meta, std::move(frames));
    manifest.stats = compute_stats(ds, meta.train_range());
    write_json(out_dir / "stats.json", manifest.stats);
    return manifest;
}

Dataset Dataset::open(const fs::path& dir) {
    Dataset ds;
    ds.dir_ = dir;
    const std::string meta_text = read_text(dir / "meta.json");
    try {
        ds.meta_ = json::parse(meta_text).get<DatasetMeta>();
    } catch (const json::exception& e) {
        throw IoError("malformed meta.json in " + dir.string() + ": " + e.what());
    }
    ds.meta_.validate();
    Sha256 digest;
    digest.update(meta_text);
    const Shape shape = {ds.meta_.channels(), ds.meta_.height, ds.meta_.width};
    const size_t expected = static_cast<size_t>(shape_numel(shape)) * sizeof(float);
    for (int64_t t = 0; t < ds.meta_.timesteps; ++t) {
        const auto path = dir / "frames" / frame_name(t);
        const auto bytes = read_file(path);
        if (bytes.size() != expected) throw IoError("frame " + path.string() + " has unexpected size");
        digest.update(bytes);
        ds.frames_.emplace_back(shape, le_bytes_to_floats(bytes));
    }
    ds.digest_ = digest.hex_digest();
    return ds;
}

Dataset Dataset::from_frames(DatasetMeta meta, std::vector<Tensor<float>> frames) {
    Dataset ds;
    meta.timesteps = static_cast<int64_t>(frames.size());
    const Shape shape = {meta.channels(), meta.height, meta.width};
    Sha256 digest;
    digest.update(json(meta).dump(2) + "\n");
    for (const auto& f : frames) {
        if (f.shape() != shape) throw std::invalid_argument("frame shape " + shape_str(f.shape()) + " != " + shape_str(shape));
        digest.update(floats_to_le_bytes(f.data()));
    }
    ds.meta_ = std::move(meta);
    ds.frames_ = std::move(frames);
    ds.digest_ = digest.hex_digest();
    return ds;
}

const Tensor<float>& Dataset::frame(int64_t t) const {
    if (t < 0 || t >= frames()) throw std::out_of_range("frame index " + std::to_string(t) + " out of range");
    return frames_[static_cast<size_t>(t)];
}

NormStats compute_stats(const Dataset& dataset, TimeRange range) {
    if (range.size() <= 0) throw std::invalid_argument("compute_stats: empty time range");
    if (range.begin < 0 || range.end > dataset.frames()) throw std::invalid_argument("compute_stats: range outside dataset");
    const int64_t C = dataset.meta().channels();
    const int64_t hw = dataset.meta().height * dataset.meta().width;
    const double count = static_cast<double>(hw * range.size());
    NormStats stats;
    for (int64_t c = 0; c < C; ++c) {
        double sum = 0.0;
        for (int64_t t = range.begin; t < range.end; ++t) {
            const float* p = dataset.frame(t).ptr() + c * hw;
            for (int64_t k = 0; k < hw; ++k) sum += p[k];
        }
        const double mean = sum / count;
        double sq = 0.0;
        for (int64_t t = range.begin; t < range.end; ++t) {
            const float* p = dataset.frame(t).ptr() + c * hw;
            for (int64_t k = 0; k < hw; ++k) {
                const double d = p[k] - mean;
                sq += d * d;
            }
        }
        const double sd = std::sqrt(sq / count);
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
            throw std::invalid_argument("compute_stats: channel " + dataset.meta().channel_names[static_cast<size_t>(c)] +
                                        " has zero variance");
        }
        stats.mean.push_back(mean);
        stats.std.push_back(sd);
    }
    return stats;
}

NormStats load_stats(const fs::path& dataset_dir) {
    auto s = read_json(dataset_dir / "stats.json").get<NormStats>();
    s.validate();
    return s;
}

}  // namespace fcx
