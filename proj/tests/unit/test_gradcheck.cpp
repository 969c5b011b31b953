#include <doctest.h>

#include "fcx/train/gradcheck.hpp"

using namespace fcx;

namespace {

void require_pass(const GradCheckReport& r) {
    for (const auto& g : r.groups) {
        INFO(g.name << " max_error=" << g.max_error << " abs_diff=" << g.max_abs_diff << " nonsmooth=" << g.nonsmooth);
        CHECK(g.nonsmooth * 4 <= g.checked);
        CHECK(g.pass);
    }
    CHECK(r.pass);
}

}  // namespace

TEST_CASE("every parameter group matches finite differences on the tiny arch") {
    GradCheckReport r = grad_check();
    CHECK(r.groups.size() == 21);
    require_pass(r);
}

TEST_CASE("gradients hold for every norm and flow mode") {
    for (NormMode norm : {NormMode::Pre, NormMode::PostPlain, NormMode::PostDeepNorm}) {
        for (FlowMode flow : {FlowMode::None, FlowMode::Shared2, FlowMode::PerChannel}) {
            GradCheckOptions o;
            o.arch.norm_mode = norm;
            o.arch.flow_mode = flow;
            o.arch.depth = 2;
            o.batch = 2;
            o.seed = 7;
            INFO(to_string(norm) << " / " << to_string(flow));
            require_pass(grad_check(o));
        }
    }
}

TEST_CASE("truncated spectral modes and a rectangular grid") {
    GradCheckOptions o;
    o.arch.grid_w = 16;
    o.arch.kept_modes = 0.5;
    o.seed = 3;
    require_pass(grad_check(o));
}

TEST_CASE("one percent corruption of the flow-head gradient is detected") {
    GradCheckOptions o;
    o.corrupt_group = "flow_head.weight";
    o.corrupt_factor = 1.01;
    GradCheckReport r = grad_check(o);
    CHECK_FALSE(r.pass);
    CHECK_FALSE(r.group("flow_head.weight").pass);
    CHECK(r.group("value_head.weight").pass);
}

TEST_CASE("zero gradients are scored with absolute error") {
    GradCheckOptions o;
    o.target_is_prediction = true;
    GradCheckReport r = grad_check(o);
    CHECK(r.pass);
    const auto& pos = r.group("embed.pos");
    CHECK(pos.absolute == pos.checked);
    CHECK(pos.max_error < 1e-8);
    for (const auto& g : r.groups) CHECK(g.max_error < 1e-8);
}
