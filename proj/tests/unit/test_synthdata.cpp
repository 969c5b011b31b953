#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fcx/core/io.hpp"
#include "fcx/synthdata/synthdata.hpp"
#include "test_util.hpp"

using namespace fcx;
using fcx::testing::TempDir;

namespace {

VelocityField uniform_velocity(int64_t h, int64_t w, double u, double v) {
    VelocityField vel;
    vel.height = h;
    vel.width = w;
    vel.u.assign(static_cast<size_t>(h * w), u);
    vel.v.assign(static_cast<size_t>(h * w), v);
    return vel;
}

Tensor<double> random_state(int64_t c, int64_t h, int64_t w, uint64_t seed) {
    RngStream r(seed, 0);
    Tensor<double> s({c, h, w});
    for (auto& x : s.vec()) x = r.next_normal();
    return s;
}

double channel_mean(const Tensor<float>& f, int64_t c) {
    const int64_t hw = f.dim(1) * f.dim(2);
    double s = 0.0;
    for (int64_t k = 0; k < hw; ++k) s += f[c * hw + k];
    return s / static_cast<double>(hw);
}

}  // namespace

TEST_CASE("zero amplitude gives a zero velocity field") {
    RngStream r(1, streams::kDatasetVelocity);
    const auto vel = make_velocity_field(r, 16, 32, 3, 0.0);
    for (double x : vel.u) CHECK(x == 0.0);
    for (double x : vel.v) CHECK(x == 0.0);
}

TEST_CASE("velocity fields are discretely divergence free with max speed equal to the amplitude") {
    for (uint64_t seed = 0; seed < 8; ++seed) {
        RngStream r(seed, streams::kDatasetVelocity);
        const auto vel = make_velocity_field(r, 32, 64, 3, 0.8);
        CHECK(max_divergence(vel) < 1e-10);
        double vmax = 0.0;
        for (size_t k = 0; k < vel.u.size(); ++k) vmax = std::max(vmax, std::hypot(vel.u[k], vel.v[k]));
        CHECK(vmax == doctest::Approx(0.8).epsilon(1e-12));
    }
}

TEST_CASE("single-mode velocity matches the analytic centered-difference formula") {
    const int64_t H = 16, W = 24;
    RngStream r(11, streams::kDatasetVelocity);
    const auto vel = make_velocity_field(r, H, W, 1, 1.3);
    REQUIRE(vel.modes.size() == 1);
    const auto& m = vel.modes[0];
    const double pi = std::numbers::pi;
    // psi = A cos(theta); centered differences of a cosine.
    const double sy = std::sin(2 * pi * m.ky / double(H)), sx = std::sin(2 * pi * m.kx / double(W));
    std::vector<double> u(H * W), v(H * W);
    double vmax = 0.0;
    for (int64_t i = 0; i < H; ++i) {
        for (int64_t j = 0; j < W; ++j) {
            const double th = 2 * pi * (m.kx * j / double(W) + m.ky * i / double(H)) + m.phase;
            u[i * W + j] = -m.amp * std::sin(th) * sy;
            v[i * W + j] = m.amp * std::sin(th) * sx;
            vmax = std::max(vmax, std::hypot(u[i * W + j], v[i * W + j]));
        }
    }
    for (int64_t k = 0; k < H * W; ++k) {
        CHECK(vel.u[k] == doctest::Approx(u[k] * 1.3 / vmax).epsilon(1e-9).scale(1.0));
        CHECK(vel.v[k] == doctest::Approx(v[k] * 1.3 / vmax).epsilon(1e-9).scale(1.0));
    }
}

TEST_CASE("step_state identities") {
    const auto s = random_state(2, 8, 12, 3);
    SUBCASE("zero velocity and zero diffusion is exactly the identity") {
        CHECK(step_state(s, uniform_velocity(8, 12, 0, 0), 1.0, 0.0) == s);
    }
    SUBCASE("constant field is unchanged") {
        Tensor<double> c({2, 8, 12}, 3.25);
        RngStream r(2, 0);
        const auto vel = make_velocity_field(r, 8, 12, 3, 1.5);
        const auto out = step_state(c, vel, 1.0, 0.2);
        for (int64_t k = 0; k < out.size(); ++k) CHECK(out[k] == doctest::Approx(3.25).epsilon(1e-13));
    }
    // The mass fixer re-sums in a different order, so agreement is to rounding.
    SUBCASE("unit column velocity is a circular shift by one column") {
        const auto out = step_state(s, uniform_velocity(8, 12, 1.0, 0.0), 1.0, 0.0);
        for (int64_t c = 0; c < 2; ++c) {
            for (int64_t i = 0; i < 8; ++i) {
                for (int64_t j = 0; j < 12; ++j) {
                    CHECK(out[(c * 8 + i) * 12 + j] ==
                          doctest::Approx(s[(c * 8 + i) * 12 + (j + 11) % 12]).epsilon(1e-12));
                }
            }
        }
    }
    SUBCASE("unit row velocity is a circular shift by one row") {
        const auto out = step_state(s, uniform_velocity(8, 12, 0.0, 1.0), 1.0, 0.0);
        for (int64_t i = 0; i < 8; ++i) {
            for (int64_t j = 0; j < 12; ++j) {
                CHECK(std::abs(out[i * 12 + j] - s[((i + 7) % 8) * 12 + j]) < 1e-12);
            }
        }
    }
    SUBCASE("unstable diffusion is rejected") {
        CHECK_THROWS_AS(step_state(s, uniform_velocity(8, 12, 0, 0), 1.0, 0.3), std::invalid_argument);
    }
}

TEST_CASE("explicit diffusion of a single spike") {
    Tensor<double> s({1, 4, 4});
    s[5] = 1.0;  // (1, 1)
    const auto out = step_state(s, uniform_velocity(4, 4, 0, 0), 1.0, 0.1);
    CHECK(out[5] == doctest::Approx(0.6));
    CHECK(out[1] == doctest::Approx(0.1));
    CHECK(out[4] == doctest::Approx(0.1));
    CHECK(out[6] == doctest::Approx(0.1));
    CHECK(out[9] == doctest::Approx(0.1));
    CHECK(out[0] == doctest::Approx(0.0));
}

TEST_CASE("dataset meta validation") {
    DatasetMeta m;
    CHECK_NOTHROW(m.validate());
    CHECK(m.train_range() == TimeRange{0, 1792});
    CHECK(m.test_range() == TimeRange{1792, 2048});
    m.amplitude = 2.5;
    CHECK_THROWS(m.validate());
    m = DatasetMeta{};
    m.timesteps = 1;
    CHECK_THROWS(m.validate());
    m = DatasetMeta{};
    m.diffusion = 0.3;
    CHECK_THROWS(m.validate());
    m = DatasetMeta{};
    m.width = 31;
    CHECK_THROWS(m.validate());
}

TEST_CASE("generation is deterministic and the on-disk layout is readable") {
    TempDir tmp;
    const auto meta = fcx::testing::small_meta();
    const auto a = generate_dataset(meta, tmp / "a");
    const auto b = generate_dataset(meta, tmp / "b");
    CHECK(a.digest == b.digest);
    CHECK(a.frames == meta.timesteps);
    for (int64_t t : {0, 7, 47}) {
        char name[32];
        std::snprintf(name, sizeof(name), "%06lld.bin", static_cast<long long>(t));
        const auto fa = read_file(tmp / "a" / "frames" / name);
        CHECK(fa == read_file(tmp / "b" / "frames" / name));
        CHECK(fa.size() == 4u * 4 * 16 * 32);
    }
    const Dataset ds = Dataset::open(tmp / "a");
    CHECK(ds.digest() == a.digest);
    CHECK(ds.meta() == meta);
    CHECK(ds.frames() == meta.timesteps);
    const NormStats s = load_stats(tmp / "a");
    CHECK(s.mean == a.stats.mean);
    CHECK(s.std == a.stats.std);
    CHECK(compute_stats(ds, meta.train_range()).mean == s.mean);

    DatasetMeta other = meta;
    other.seed = 6;
    CHECK(generate_dataset(other, tmp / "c").digest != a.digest);
}

TEST_CASE("static dynamics reproduce the first frame") {
    TempDir tmp;
    auto meta = fcx::testing::small_meta(8, 8, 2);
    meta.amplitude = 0.0;
    meta.diffusion = 0.0;
    generate_dataset(meta, tmp.path());
    const Dataset ds = Dataset::open(tmp.path());
    CHECK(ds.frame(1) == ds.frame(0));
}

TEST_CASE("channel means are conserved along the whole trajectory") {
    TempDir tmp;
    auto meta = fcx::testing::small_meta(32, 64, 200);
    meta.amplitude = 1.0;
    generate_dataset(meta, tmp.path());
    const Dataset ds = Dataset::open(tmp.path());
    for (int64_t c = 0; c < meta.channels(); ++c) {
        const double m0 = channel_mean(ds.frame(0), c);
        for (int64_t t = 1; t < ds.frames(); ++t) {
            CHECK(std::abs(channel_mean(ds.frame(t), c) - m0) <= 1e-5 * std::max(1.0, std::abs(m0)));
        }
    }
}

TEST_CASE("statistics") {
    DatasetMeta meta = fcx::testing::small_meta(2, 2, 1);
    meta.channel_names = {"x", "k"};
    Tensor<float> f({2, 2, 2}, 7.0f);
    f[0] = 0;
    f[1] = 1;
    f[2] = 0;
    f[3] = 1;
    SUBCASE("population formula") {
        Tensor<float> g = f;
        g[4] = 1.0f;
        const auto ds = Dataset::from_frames(meta, {g});
        const auto s = compute_stats(ds, {0, 1});
        CHECK(s.mean[0] == 0.5);
        CHECK(s.std[0] == 0.5);
        CHECK(compute_stats(ds, {0, 1}).std == s.std);
    }
    SUBCASE("constant channel is rejected") {
        const auto ds = Dataset::from_frames(meta, {f});
        CHECK_THROWS_AS(compute_stats(ds, {0, 1}), std::invalid_argument);
    }
    SUBCASE("empty range is rejected") {
        const auto ds = Dataset::from_frames(meta, {f});
        CHECK_THROWS_AS(compute_stats(ds, {0, 0}), std::invalid_argument);
    }
}

TEST_CASE("stats are computed on the training split only") {
    DatasetMeta meta = fcx::testing::small_meta(2, 2, 4);
    meta.channel_names = {"x"};
    meta.test_fraction = 0.5;
    std::vector<Tensor<float>> frames;
    for (float v : {0.f, 1.f, 100.f, 200.f}) frames.push_back(Tensor<float>({1, 2, 2}, v));
    const auto ds = Dataset::from_frames(meta, frames);
    const auto s = compute_stats(ds, ds.meta().train_range());
    CHECK(s.mean[0] == 0.5);
}

TEST_CASE("translated velocity fields") {
    const int64_t H = 16, W = 32;
    RngStream rng(3, streams::kDatasetVelocity);
    const auto base = make_velocity_field(rng, H, W, 3, 0.8);
    const std::vector<double> none(base.modes.size(), 0.0);
    const auto same = translated_velocity(base.modes, none, H, W, 0.8);
    for (size_t k = 0; k < base.u.size(); ++k) {
        REQUIRE(same.u[k] == doctest::Approx(base.u[k]).epsilon(1e-12).scale(1e-12));
        REQUIRE(same.v[k] == doctest::Approx(base.v[k]).epsilon(1e-12).scale(1e-12));
    }

    // A common integer shift of every mode rolls the field along x.
    const int64_t s = 5;
    const auto rolled = translated_velocity(base.modes, std::vector<double>(base.modes.size(), double(s)), H, W, 0.8);
    for (int64_t i = 0; i < H; ++i) {
        for (int64_t j = 0; j < W; ++j) {
            REQUIRE(rolled.u_at(i, (j + s) % W) == doctest::Approx(base.u_at(i, j)).scale(1e-9));
            REQUIRE(rolled.v_at(i, (j + s) % W) == doctest::Approx(base.v_at(i, j)).scale(1e-9));
        }
    }

    const auto full = translated_velocity(base.modes, std::vector<double>(base.modes.size(), double(W)), H, W, 0.8);
    for (size_t k = 0; k < base.u.size(); ++k) REQUIRE(full.u[k] == doctest::Approx(base.u[k]).scale(1e-9));

    const auto moved = translated_velocity(base.modes, {0.3, -2.7, 11.1}, H, W, 0.8);
    CHECK(max_divergence(moved) < 1e-12);
    double vmax = 0.0;
    for (size_t k = 0; k < moved.u.size(); ++k) vmax = std::max(vmax, std::hypot(moved.u[k], moved.v[k]));
    CHECK(vmax == doctest::Approx(0.8).epsilon(1e-12));
    CHECK_THROWS(translated_velocity(base.modes, {0.0}, H, W, 0.8));
}

TEST_CASE("full relaxation pins every frame to the initial pattern") {
    TempDir tmp;
    auto meta = fcx::testing::small_meta(8, 16, 6);
    meta.relaxation = 1.0;
    generate_dataset(meta, tmp.path());
    const Dataset ds = Dataset::open(tmp.path());
    for (int64_t t = 1; t < ds.frames(); ++t) CHECK(ds.frame(t) == ds.frame(0));

    meta.relaxation = 1.5;
    CHECK_THROWS(meta.validate());
    meta.relaxation = 0.0;
    meta.drift = std::nan("");
    CHECK_THROWS(meta.validate());
}
