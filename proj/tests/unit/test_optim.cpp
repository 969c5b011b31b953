#include <doctest.h>

#include <cmath>
#include <limits>

#include "fcx/core/rng.hpp"
#include "fcx/optim/optim.hpp"

using namespace fcx;

namespace {

/// Independent per-element reference: plain loops over std::vector<double>.
struct RefLamb {
    double b1 = 0.9, b2 = 0.999, eps = 1e-6, wd = 0.0;
    std::vector<std::vector<double>> m, v;
    int t = 0;

    void step(std::vector<std::vector<double>>& w, const std::vector<std::vector<double>>& g, double lr) {
        if (m.empty()) {
            for (const auto& x : w) {
                m.emplace_back(x.size(), 0.0);
                v.emplace_back(x.size(), 0.0);
            }
        }
        ++t;
        for (size_t p = 0; p < w.size(); ++p) {
            std::vector<double> r(w[p].size());
            double wn = 0.0, rn = 0.0;
            for (size_t k = 0; k < w[p].size(); ++k) {
                m[p][k] = b1 * m[p][k] + (1 - b1) * g[p][k];
                v[p][k] = b2 * v[p][k] + (1 - b2) * g[p][k] * g[p][k];
                const double mh = m[p][k] / (1 - std::pow(b1, t));
                const double vh = v[p][k] / (1 - std::pow(b2, t));
                r[k] = mh / (std::sqrt(vh) + eps) + wd * w[p][k];
                wn += w[p][k] * w[p][k];
                rn += r[k] * r[k];
            }
            wn = std::sqrt(wn);
            rn = std::sqrt(rn);
            const double trust = (wn == 0.0 || rn == 0.0) ? 1.0 : wn / rn;
            for (size_t k = 0; k < w[p].size(); ++k) w[p][k] -= lr * trust * r[k];
        }
    }
};

ParamSet<double> make_set(const std::vector<std::pair<std::string, Shape>>& spec) {
    ParamSet<double> s;
    for (const auto& [n, sh] : spec) s.add(n, sh);
    return s;
}

}  // namespace

TEST_CASE("scalar worked example") {
    ParamSet<double> w = make_set({{"w", {1}}});
    w.get("w")[0] = 1.0;
    ParamSet<double> g = w.zeros_like();
    g.get("w")[0] = 1.0;
    Lamb<double> opt(w);
    opt.step(w, g, 0.1);
    CHECK(opt.steps() == 1);
    CHECK(opt.first_moment().get("w")[0] == doctest::Approx(0.1));
    CHECK(opt.last_trust()[0] == doctest::Approx(1.0 + 1e-6).epsilon(1e-12));
    CHECK(w.get("w")[0] == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("zero gradient leaves parameters unchanged") {
    ParamSet<double> w = make_set({{"a", {3}}, {"b", {2, 2}}});
    RngStream r(1, 0);
    for (auto& p : w) {
        for (auto& x : p.value.vec()) x = r.next_normal();
    }
    const ParamSet<double> before = w;
    Lamb<double> opt(w);
    opt.step(w, w.zeros_like(), 0.5);
    CHECK(w == before);
}

TEST_CASE("matches the per-element reference over three steps") {
    for (double wd : {0.0, 0.01}) {
        ParamSet<double> w = make_set({{"vec", {2}}, {"mat", {3, 4}}, {"zero", {5}}});
        RngStream r(77, 0);
        for (size_t p = 0; p < 2; ++p) {
            for (auto& x : w[p].value.vec()) x = r.next_normal();
        }
        std::vector<std::vector<double>> ref;
        for (const auto& p : w) ref.emplace_back(p.value.vec().begin(), p.value.vec().end());
        LambConfig cfg;
        cfg.weight_decay = wd;
        Lamb<double> opt(w, cfg);
        RefLamb oracle;
        oracle.wd = wd;
        for (int s = 0; s < 3; ++s) {
            ParamSet<double> g = w.zeros_like();
            std::vector<std::vector<double>> gref;
            for (auto& p : g) {
                for (auto& x : p.value.vec()) x = r.next_normal();
                gref.emplace_back(p.value.vec().begin(), p.value.vec().end());
            }
            const double lr = 0.01 * (s + 1);
            opt.step(w, g, lr);
            oracle.step(ref, gref, lr);
            for (size_t p = 0; p < w.count(); ++p) {
                for (size_t k = 0; k < ref[p].size(); ++k) {
                    CHECK(std::abs(w[p].value.vec()[k] - ref[p][k]) < 1e-10);
                }
            }
        }
    }
}

TEST_CASE("update is homogeneous in parameter and gradient scale") {
    LambConfig cfg;
    cfg.eps = 0.0;
    const double k = 3.5;
    ParamSet<double> w1 = make_set({{"x", {6}}});
    RngStream r(5, 0);
    for (auto& x : w1.get("x").vec()) x = r.next_normal();
    ParamSet<double> w2 = w1;
    for (auto& x : w2.get("x").vec()) x *= k;
    Lamb<double> o1(w1, cfg), o2(w2, cfg);
    for (int s = 0; s < 3; ++s) {
        ParamSet<double> g1 = w1.zeros_like();
        for (auto& x : g1.get("x").vec()) x = r.next_normal();
        ParamSet<double> g2 = g1;
        for (auto& x : g2.get("x").vec()) x *= k;
        const ParamSet<double> b1 = w1, b2 = w2;
        o1.step(w1, g1, 0.05);
        o2.step(w2, g2, 0.05);
        for (int64_t i = 0; i < 6; ++i) {
            const double d1 = w1.get("x")[i] - b1.get("x")[i];
            const double d2 = w2.get("x")[i] - b2.get("x")[i];
            CHECK(d2 == doctest::Approx(k * d1).epsilon(1e-12));
        }
    }
}

TEST_CASE("non-finite gradient is rejected by name without side effects") {
    ParamSet<float> w;
    w.add("good", {2});
    w.add("head.weight", {2});
    w.get("good")[0] = 1.0f;
    ParamSet<float> g = w.zeros_like();
    g.get("good")[0] = 1.0f;
    g.get("head.weight")[1] = std::numeric_limits<float>::infinity();
    Lamb<float> opt(w);
    const ParamSet<float> before = w;
    CHECK_THROWS_WITH_AS(opt.step(w, g, 0.1), doctest::Contains("head.weight"), std::invalid_argument);
    CHECK(w == before);
    CHECK(opt.steps() == 0);
}

TEST_CASE("cosine schedule") {
    const LrSchedule s{3e-3, 3e-4, 1000};
    CHECK(cosine_lr(0, s) == doctest::Approx(3e-3).epsilon(1e-15));
    CHECK(cosine_lr(1000, s) == doctest::Approx(3e-4).epsilon(1e-15));
    CHECK(cosine_lr(500, s) == doctest::Approx(1.65e-3).epsilon(1e-12));
    CHECK(cosine_lr(5000, s) == 3e-4);
    double prev = cosine_lr(0, s);
    for (int64_t t = 1; t <= 1000; ++t) {
        const double lr = cosine_lr(t, s);
        CHECK(lr <= prev);
        prev = lr;
    }
    const LrSchedule ft{1e-4, 1e-5, 300};
    CHECK(cosine_lr(0, ft) == doctest::Approx(1e-4));
    CHECK(cosine_lr(300, ft) == doctest::Approx(1e-5));
}

TEST_CASE("batch size schedule") {
    const BatchSchedule s;
    CHECK(batch_size_at(0, s) == 4);
    CHECK(batch_size_at(11999, s) == 4);
    CHECK(batch_size_at(12000, s) == 8);
    CHECK(batch_size_at(40000, s) == 8);
    CHECK_THROWS(batch_size_at(0, BatchSchedule{{}}));
    CHECK_THROWS(BatchSchedule{{{5, 4}}}.validate());
    CHECK_THROWS(BatchSchedule{{{0, 4}, {100, 8}, {50, 16}}}.validate());
    const nlohmann::json j = s;
    CHECK(j.get<BatchSchedule>().entries == s.entries);
}
