#include <doctest.h>

#include "fcx/core/checkpoint.hpp"
#include "fcx/core/io.hpp"
#include "fcx/train/loss.hpp"
#include "fcx/train/pretrain.hpp"
#include "test_util.hpp"

using namespace fcx;

namespace {

ArchConfig small_arch() {
    ArchConfig a;
    a.grid_h = 16;
    a.grid_w = 32;
    a.channels = 4;
    a.patch = 4;
    a.embed_dim = 16;
    a.depth = 2;
    return a;
}

/// Model whose value and flow heads are exactly zero: it predicts its input.
ModelParams persistence_model(const ArchConfig& a) {
    RngStream rng(0, streams::kInit);
    ModelParams mp = init_model(a, rng);
    for (const char* n : {"value_head.weight", "value_head.bias", "flow_head.weight", "flow_head.bias"}) {
        for (auto& v : mp.params.get(n).vec()) v = 0.0f;
    }
    return mp;
}

Tensor<float> random_field(Shape s, uint64_t seed) {
    RngStream r(seed, 0);
    Tensor<float> t(std::move(s));
    for (auto& v : t.vec()) v = static_cast<float>(r.next_normal());
    return t;
}

struct RunFixture {
    testing::TempDir dir;
    RunConfig cfg;
    RunFixture(int64_t steps = 40) {
        generate_dataset(testing::small_meta(16, 32, 120), dir / "ds");
        cfg.data_dir = (dir / "ds").string();
        cfg.arch = small_arch();
        cfg.max_steps = steps;
        cfg.seed = 3;
    }
};

std::string strip_seconds(const std::string& csv) {
    std::string out;
    std::istringstream in(csv);
    std::string line;
    while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
    return out;
}

}  // namespace

TEST_CASE("loss of a persistence model") {
    const ArchConfig a = small_arch();
    const ModelParams mp = persistence_model(a);
    const AfnoNet<float> net(a);
    const auto x = random_field({3, 4, 16, 32}, 1);
    CHECK(training_loss(net, mp.params, x, x) == 0.0);

    Tensor<float> shifted = x;
    const float delta = 0.375f;  // exact in binary
    for (auto& v : shifted.vec()) v += delta;
    CHECK(training_loss(net, mp.params, x, shifted) == doctest::Approx(double(delta) * delta).epsilon(1e-6));

    CHECK_THROWS_AS(training_loss(net, mp.params, x, random_field({3, 4, 16, 16}, 2)), std::invalid_argument);
}

TEST_CASE("loss is invariant under batch permutation") {
    const ArchConfig a = small_arch();
    RngStream rng(4, streams::kInit);
    ModelParams mp = init_model(a, rng);
    RngStream noise(5, 0);
    for (auto& t : mp.params) {
        for (auto& v : t.value.vec()) v += static_cast<float>(0.05 * noise.next_normal());
    }
    const AfnoNet<float> net(a);
    const auto x = random_field({3, 4, 16, 32}, 6);
    const auto y = random_field({3, 4, 16, 32}, 7);
    const int64_t n = x.size() / 3;
    Tensor<float> xp(x.shape()), yp(y.shape());
    const int perm[] = {2, 0, 1};
    for (int b = 0; b < 3; ++b) {
        std::copy(x.ptr() + perm[b] * n, x.ptr() + (perm[b] + 1) * n, xp.ptr() + b * n);
        std::copy(y.ptr() + perm[b] * n, y.ptr() + (perm[b] + 1) * n, yp.ptr() + b * n);
    }
    CHECK(training_loss(net, mp.params, xp, yp) == doctest::Approx(training_loss(net, mp.params, x, y)).epsilon(1e-6));
}

TEST_CASE("run config JSON round trip and validation") {
    RunConfig c;
    c.data_dir = "d";
    c.workers = {"h:1", "h:2"};
    c.arch = small_arch();
    c.max_steps = 17;
    c.curriculum.max_time_steps = 3;
    const RunConfig back = nlohmann::json(c).get<RunConfig>();
    CHECK(back == c);
    nlohmann::json j = c;
    j["bogus"] = 1;
    CHECK_THROWS_AS(j.get<RunConfig>(), std::invalid_argument);
    RunConfig bad = c;
    bad.crop_h = 8;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.data_dir.clear();
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.curriculum.max_time_steps = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("zero steps leave the initialization") {
    RunFixture fx(0);
    fx.cfg.out_dir = (fx.dir / "run").string();
    const PretrainOutcome o = pretrain(fx.cfg);
    CHECK(o.log.empty());
    CHECK(load_checkpoint(o.checkpoint) == initial_params(fx.cfg));
    CHECK(o.checkpoint_digest == params_digest(initial_params(fx.cfg)));
}

TEST_CASE("identical configs give identical runs") {
    RunFixture fx(30);
    fx.cfg.log_every = 5;
    fx.cfg.checkpoint_every = 10;
    fx.cfg.out_dir = (fx.dir / "a").string();
    const PretrainOutcome a = pretrain(fx.cfg);
    fx.cfg.out_dir = (fx.dir / "b").string();
    const PretrainOutcome b = pretrain(fx.cfg);
    CHECK(a.checkpoint_digest == b.checkpoint_digest);
    CHECK(a.stream_digest == b.stream_digest);
    CHECK(strip_seconds(read_text(fx.dir / "a" / "metrics.csv")) == strip_seconds(read_text(fx.dir / "b" / "metrics.csv")));
    CHECK(read_text(fx.dir / "a" / "persistence.csv") == read_text(fx.dir / "b" / "persistence.csv"));
    for (const char* f : {"config.json", "summary.json", "final/manifest.json", "step_000010/manifest.json",
                          "step_000020/manifest.json"}) {
        CAPTURE(f);
        CHECK(std::filesystem::exists(fx.dir / "a" / f));
    }
    CHECK_FALSE(std::filesystem::exists(fx.dir / "a" / "step_000030"));
    const auto rows = read_metrics_csv(fx.dir / "a" / "metrics.csv");
    REQUIRE(rows.size() == 7);  // steps 0, 5, ..., 25 and the last step 29
    CHECK(rows.back().step == 29);
    CHECK(rows.front().lr == doctest::Approx(3e-3));
    CHECK(rows.front().batch_size == 4);
    const RunConfig echoed = read_json(fx.dir / "a" / "config.json").get<RunConfig>();
    RunConfig first = fx.cfg;
    first.out_dir = (fx.dir / "a").string();
    CHECK(echoed == first);

    fx.cfg.seed = 4;
    fx.cfg.out_dir.clear();
    CHECK(pretrain(fx.cfg).stream_digest != a.stream_digest);
}

TEST_CASE("training beats persistence on the sampled stream") {
    RunFixture fx(300);
    const PretrainOutcome o = pretrain(fx.cfg);
    REQUIRE_FALSE(o.diverged);
    double loss = 0.0, persist = 0.0;
    for (size_t i = o.log.size() - 50; i < o.log.size(); ++i) {
        loss += o.log[i].loss;
        persist += o.persistence[i];
    }
    INFO("loss " << loss / 50 << " persistence " << persist / 50);
    CHECK(loss < persist);
}

TEST_CASE("non-finite data stops the run with the last good parameters") {
    RunFixture fx(10);
    const Dataset ds = Dataset::open(fx.cfg.data_dir);
    const NormStats stats = load_stats(fx.cfg.data_dir);
    struct Poisoned : ExampleSource {
        LocalSource inner;
        int64_t calls = 0;
        explicit Poisoned(LocalSource s) : inner(std::move(s)) {}
        ExampleBatch next_batch(int64_t n) override {
            ExampleBatch b = inner.next_batch(n);
            if (++calls == 4) b.inputs[0] = std::numeric_limits<float>::quiet_NaN();
            return b;
        }
    } source(LocalSource(ds, stats, fx.cfg.crop(16, 32), 1, ds.meta().train_range(), 3, 0));
    std::vector<std::string> digests;
    const TrainResult r = train_single_step(fx.cfg, source, initial_params(fx.cfg),
                                            [&](int64_t, const ModelParams& p) { digests.push_back(params_digest(p)); });
    CHECK(r.diverged);
    CHECK(r.diverged_reason.find("step 3") != std::string::npos);
    REQUIRE(r.log.size() == 3);
    CHECK(params_digest(r.params) == digests.back());
}
