#include "fcx/train/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "fcx/afno/model.hpp"
#include "fcx/core/rng.hpp"
#include "fcx/flowwarp/warp.hpp"
#include "fcx/train/loss.hpp"

namespace fcx {

ArchConfig tiny_arch() {
    ArchConfig a;
    a.grid_h = 8;
    a.grid_w = 8;
    a.channels = 2;
    a.patch = 2;
    a.embed_dim = 8;
    a.depth = 1;
    return a;
}

const GradCheckGroup& GradCheckReport::group(const std::string& name) const {
    for (const auto& g : groups) {
        if (g.name == name) return g;
    }
    throw std::out_of_range("no gradient group " + name);
}

namespace {

Tensor<double> normal_tensor(RngStream& rng, Shape shape, double scale) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.vec()) v = scale * rng.next_normal();
    return t;
}

/// Scores `analytic` against central differences of `loss` in `values`.
/// A coordinate whose central difference changes by more than the
/// tolerance when the step is halved sits on a kink (softshrink threshold,
/// warp cell edge); it is counted as non-smooth and replaced by a fresh draw.
GradCheckGroup check_group(const std::string& name, AlignedVec<double>& values, const AlignedVec<double>& analytic,
                           const std::function<double()>& loss, RngStream& rng, const GradCheckOptions& opts) {
    GradCheckGroup g;
    g.name = name;
    const double factor = name == opts.corrupt_group ? opts.corrupt_factor : 1.0;
    const auto n = static_cast<int64_t>(values.size());
    const bool enumerate = n <= opts.samples_per_group;
    const int64_t budget = enumerate ? n : 4 * opts.samples_per_group;
    auto central = [&](int64_t k, double h) {
        const double saved = values[k];
        values[k] = saved + h;
        const double up = loss();
        values[k] = saved - h;
        const double down = loss();
        values[k] = saved;
        return (up - down) / (2.0 * h);
    };
    for (int64_t attempt = 0; attempt < budget && g.checked < opts.samples_per_group; ++attempt) {
        const int64_t k = enumerate ? attempt : static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n)));
        const double numeric = central(k, opts.step);
        const double half = central(k, 0.5 * opts.step);
        const double spread = std::max({std::abs(numeric), std::abs(half), opts.absolute_floor});
        if (std::abs(numeric - half) > 0.5 * opts.tol * spread) {
            ++g.nonsmooth;
            continue;
        }
        const double a = analytic[k] * factor;
        const double diff = std::abs(a - numeric);
        const double scale = std::max(std::abs(a), std::abs(numeric));
        double err = diff;
        if (scale < opts.absolute_floor) {
            ++g.absolute;
        } else {
            err = diff / scale;
        }
        g.max_error = std::max(g.max_error, err);
        g.max_abs_diff = std::max(g.max_abs_diff, diff);
        ++g.checked;
    }
    g.pass = g.checked > 0 && g.max_error < opts.tol;
    return g;
}

}  // namespace

GradCheckReport grad_check(const GradCheckOptions& opts) {
    opts.arch.validate();
    if (opts.batch < 1) throw std::invalid_argument("grad_check batch must be positive");
    RngStream rng(opts.seed, streams::kGradCheck);
    RngStream init_rng(opts.seed, streams::kInit);
    const ArchConfig& arch = opts.arch;

    ParamSet<double> params = init_model(arch, init_rng).params.cast<double>();
    for (auto& p : params) {
        for (auto& v : p.value.vec()) v += opts.perturbation * rng.next_normal();
    }
    const AfnoNet<double> net(arch);
    const Shape field{opts.batch, arch.channels, arch.grid_h, arch.grid_w};
    Tensor<double> input = normal_tensor(rng, field, 1.0);
    Tensor<double> target = opts.target_is_prediction ? predict(net, params, input) : normal_tensor(rng, field, 1.0);

    ParamSet<double> grads = params.zeros_like();
    training_loss(net, params, input, target, &grads);

    GradCheckReport report;
    report.tol = opts.tol;
    auto model_loss = [&] { return training_loss(net, params, input, target); };
    for (size_t i = 0; i < params.count(); ++i) {
        report.groups.push_back(
            check_group(params[i].name, params[i].value.vec(), grads[i].value.vec(), model_loss, rng, opts));
    }

    if (arch.flow_mode != FlowMode::None) {
        // Network output frozen; the loss depends on input and flow through the warp only.
        ModelOutput<double> out = net.forward(params, input);
        auto warp_loss = [&] {
            return mse(compose_prediction(out.value, input, out.flow, arch.flow_mode), target);
        };
        const Tensor<double> pred = compose_prediction(out.value, input, out.flow, arch.flow_mode);
        Tensor<double> dpred(pred.shape());
        for (int64_t k = 0; k < pred.size(); ++k) dpred[k] = 2.0 * (pred[k] - target[k]) / pred.size();
        Tensor<double> dinput, dflow;
        compose_prediction_backward(input, out.flow, arch.flow_mode, dpred, &dinput, &dflow);
        report.groups.push_back(check_group("warp.input", input.vec(), dinput.vec(), warp_loss, rng, opts));
        report.groups.push_back(check_group("warp.flow", out.flow.vec(), dflow.vec(), warp_loss, rng, opts));
    }

    report.pass = std::all_of(report.groups.begin(), report.groups.end(), [](const auto& g) { return g.pass; });
    return report;
}

nlohmann::json to_json_report(const GradCheckReport& r) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : r.groups) {
        groups.push_back({{"name", g.name},
                          {"checked", g.checked},
                          {"absolute", g.absolute},
                          {"nonsmooth", g.nonsmooth},
                          {"max_error", g.max_error},
                          {"max_abs_diff", g.max_abs_diff},
                          {"pass", g.pass}});
    }
    return {{"tol", r.tol}, {"pass", r.pass}, {"groups", groups}};
}

}  // namespace fcx
