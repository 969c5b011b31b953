#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "fcx/afno/model.hpp"
#include "fcx/core/checkpoint.hpp"
#include "fcx/core/io.hpp"
#include "fcx/core/rng.hpp"
#include "fcx/core/tensor.hpp"
#include "test_util.hpp"

using namespace fcx;
using fcx::testing::TempDir;

TEST_CASE("philox4x32-10 known-answer vectors") {
    using A4 = std::array<uint32_t, 4>;
    CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
          A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
          A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("golden draws of stream (42, 3)") {
    // Frozen from an independent implementation of the same block function.
    RngStream r = rng_stream(42, 3);
    const uint64_t raw[] = {0x72148a910a51a6b2ull, 0x1d91b19b85a8df3cull, 0xe58a6d8c5229c193ull,
                            0xb83e95863d0acc33ull};
    const double uni[] = {0.44562593499205727, 0.11550436064650016, 0.8966434924679225, 0.7197049572687703};
    for (int k = 0; k < 4; ++k) CHECK(r.next_u64() == raw[k]);
    RngStream u = rng_stream(42, 3);
    for (int k = 0; k < 4; ++k) CHECK(u.next_uniform() == uni[k]);
}

TEST_CASE("streams are reproducible, separated and addressable") {
    RngStream a = rng_stream(7, 0), b = rng_stream(7, 0), c = rng_stream(7, 1), d = rng_stream(8, 0);
    std::vector<uint64_t> sa, sc, sd;
    for (int k = 0; k < 16; ++k) {
        const uint64_t v = a.next_u64();
        CHECK(v == b.next_u64());
        sa.push_back(v);
        sc.push_back(c.next_u64());
        sd.push_back(d.next_u64());
    }
    CHECK(sa != sc);
    CHECK(sa != sd);
    RngStream jump(7, 0, 10);
    CHECK(jump.next_u64() == sa[10]);
    CHECK(a.counter() == 16);
}

TEST_CASE("uniform, bounded and normal draws") {
    RngStream r(1, 2);
    const int n = 200000;
    double sum = 0, sq = 0;
    int64_t below[5] = {0};
    for (int k = 0; k < n; ++k) {
        const double u = r.next_uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        ++below[r.next_below(5)];
        const double z = r.next_normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(std::abs(sq / n - 1.0) < 0.02);
    for (auto c : below) CHECK(std::abs(c / double(n) - 0.2) < 0.005);
    CHECK_THROWS_AS(r.next_below(0), std::invalid_argument);
    const uint64_t before = r.counter();
    r.next_normal();
    CHECK(r.counter() == before + 2);
}

TEST_CASE("field batch validation") {
    CHECK_NOTHROW(FieldBatch(Tensor<float>({1, 2, 4, 6}), {"a", "b"}));
    CHECK_THROWS_AS(FieldBatch(Tensor<float>({1, 2, 3, 6}), {"a", "b"}), std::invalid_argument);
    CHECK_THROWS_AS(FieldBatch(Tensor<float>({1, 2, 4, 6}), {"a"}), std::invalid_argument);
    CHECK_THROWS_AS(FieldBatch(Tensor<float>({0, 2, 4, 6}), {"a", "b"}), std::invalid_argument);
    CHECK_THROWS_AS(FieldBatch(Tensor<float>({2, 4, 6}), {"a", "b"}), std::invalid_argument);
    Tensor<float> bad({1, 1, 2, 2});
    bad[3] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(FieldBatch(bad, {"a"}), std::invalid_argument);
    bad[3] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(FieldBatch(bad, {"a"}), std::invalid_argument);
}

TEST_CASE("norm stats require positive std") {
    NormStats ok{{1.0, 2.0}, {0.5, 3.0}};
    CHECK_NOTHROW(ok.validate());
    CHECK_THROWS(NormStats{{1.0}, {0.0}}.validate());
    CHECK_THROWS(NormStats{{1.0, 2.0}, {1.0}}.validate());
}

TEST_CASE("sha256 of known strings") {
    CHECK(sha256_hex({}) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    const std::string abc = "abc";
    CHECK(sha256_hex(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(abc.data()), abc.size())) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    Sha256 inc;
    inc.update(std::string("a"));
    inc.update(std::string("bc"));
    CHECK(inc.hex_digest() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("little-endian float serialization") {
    const std::vector<float> v = {1.0f, -2.5f};
    const auto b = floats_to_le_bytes(v);
    const std::vector<uint8_t> expect = {0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x20, 0xc0};
    CHECK(b == expect);
    CHECK(le_bytes_to_floats(b) == v);
    CHECK_THROWS(le_bytes_to_floats(std::vector<uint8_t>{1, 2, 3}));
}

namespace {

ModelParams sample_params(int64_t depth = 2) {
    ArchConfig a;
    a.grid_h = 8;
    a.grid_w = 16;
    a.channels = 2;
    a.patch = 2;
    a.embed_dim = 8;
    a.depth = depth;
    RngStream rng(3, streams::kInit);
    ModelParams p = init_model(a, rng);
    RngStream noise(4, 0);
    for (auto& t : p.params) {
        for (auto& v : t.value.vec()) v += static_cast<float>(0.1 * noise.next_normal());
    }
    return p;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact and digest is stable") {
    TempDir tmp;
    const ModelParams p = sample_params();
    const std::string d1 = save_checkpoint(p, tmp / "a");
    const std::string d2 = save_checkpoint(p, tmp / "b");
    CHECK(d1 == d2);
    CHECK(d1.size() == 64);
    CHECK(d1 == params_digest(p));
    const ModelParams q = load_checkpoint(tmp / "a");
    CHECK(q == p);
    CHECK(q.arch == p.arch);
    for (size_t i = 0; i < p.params.count(); ++i) {
        CHECK(std::memcmp(p.params[i].value.ptr(), q.params[i].value.ptr(), 4 * p.params[i].value.size()) == 0);
    }

    // Digest is SHA-256 over manifest bytes then blob bytes.
    auto manifest = read_file(tmp / "a" / "manifest.json");
    auto blob = read_file(tmp / "a" / "weights.bin");
    manifest.insert(manifest.end(), blob.begin(), blob.end());
    CHECK(sha256_hex(manifest) == d1);

    auto j = read_json(tmp / "a" / "manifest.json");
    CHECK(j.at("version") == kCheckpointVersion);
    CHECK(j.at("tensors").at(0).at("dtype") == "f32");
    CHECK(j.at("tensors").at(0).at("offset") == 0);
}

TEST_CASE("checkpoint load fails closed") {
    TempDir tmp;
    const ModelParams p = sample_params();
    save_checkpoint(p, tmp / "c");
    const auto dir = tmp / "c";

    SUBCASE("one flipped byte") {
        auto blob = read_file(dir / "weights.bin");
        blob[blob.size() / 2] ^= 0x01;
        write_file(dir / "weights.bin", blob);
        CHECK_THROWS_AS(load_checkpoint(dir), IoError);
    }
    SUBCASE("truncated blob") {
        auto blob = read_file(dir / "weights.bin");
        blob.resize(blob.size() - 4);
        write_file(dir / "weights.bin", blob);
        CHECK_THROWS_AS(load_checkpoint(dir), IoError);
    }
    SUBCASE("missing file") {
        std::filesystem::remove(dir / "digest");
        CHECK_THROWS_AS(load_checkpoint(dir), IoError);
    }
    SUBCASE("version mismatch with a consistent digest") {
        auto j = read_json(dir / "manifest.json");
        j["version"] = kCheckpointVersion + 1;
        const std::string text = j.dump(2) + "\n";
        auto blob = read_file(dir / "weights.bin");
        write_text(dir / "manifest.json", text);
        Sha256 h;
        h.update(text);
        h.update(blob);
        write_text(dir / "digest", h.hex_digest() + "\n");
        CHECK_THROWS_WITH_AS(load_checkpoint(dir), doctest::Contains("version"), IoError);
    }
}

TEST_CASE("stored descriptor is honored when loading a deeper model") {
    TempDir tmp;
    const ModelParams p = sample_params(4);
    save_checkpoint(p, tmp / "n4");
    const ModelParams q = load_checkpoint(tmp / "n4");
    CHECK(q.arch.depth == 4);
    const AfnoNet<float> net(q.arch);
    Tensor<float> x({1, q.arch.channels, q.arch.grid_h, q.arch.grid_w}, 0.5f);
    CHECK_NOTHROW(net.forward(q.params, x));
}

TEST_CASE("non-finite parameters are never checkpointed") {
    TempDir tmp;
    ModelParams p = sample_params();
    p.params[0].value[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_FALSE(p.all_finite());
    CHECK_THROWS(save_checkpoint(p, tmp / "nan"));
}

TEST_CASE("arch descriptor json round trip") {
    ArchConfig a;
    a.norm_mode = NormMode::Pre;
    a.flow_mode = FlowMode::PerChannel;
    a.softshrink = 0.0123456789;
    a.kept_modes = 0.75;
    const nlohmann::json j = a;
    CHECK(j.get<ArchConfig>() == a);
    CHECK(nlohmann::json::parse(j.dump()).get<ArchConfig>() == a);
    CHECK(parse_norm_mode("post_deepnorm") == NormMode::PostDeepNorm);
    CHECK_THROWS(parse_flow_mode("sideways"));
}
