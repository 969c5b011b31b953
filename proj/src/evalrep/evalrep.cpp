#include "fcx/evalrep/evalrep.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "fcx/sampler/sampler.hpp"
#include "fcx/train/loss.hpp"

namespace fcx {

namespace {

/// Per-channel sums of squared physical error over (B, H, W).
std::vector<double> squared_error(const Tensor<float>& pred, const Tensor<float>& truth, const NormStats& stats) {
    if (pred.shape() != truth.shape() || pred.rank() != 4) {
        throw std::invalid_argument("rmse expects equal (B, C, H, W) shapes, got " + shape_str(pred.shape()) + " and " +
                                    shape_str(truth.shape()));
    }
    const int64_t B = pred.dim(0), C = pred.dim(1), hw = pred.dim(2) * pred.dim(3);
    if (static_cast<int64_t>(stats.channels()) != C) {
        throw std::invalid_argument("stats have " + std::to_string(stats.channels()) + " channels, tensors have " +
                                    std::to_string(C));
    }
    std::vector<double> acc(static_cast<size_t>(C), 0.0);
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            const double m = stats.mean[static_cast<size_t>(c)], s = stats.std[static_cast<size_t>(c)];
            const int64_t base = (b * C + c) * hw;
            double sum = 0.0;
            for (int64_t k = 0; k < hw; ++k) {
                const double d = (static_cast<double>(pred[base + k]) * s + m) - (static_cast<double>(truth[base + k]) * s + m);
                sum += d * d;
            }
            acc[static_cast<size_t>(c)] += sum;
        }
    }
    return acc;
}

Tensor<float> stack_frames(const Dataset& dataset, const NormStats& stats, const std::vector<int64_t>& times) {
    const auto& m = dataset.meta();
    Tensor<float> out({static_cast<int64_t>(times.size()), m.channels(), m.height, m.width});
    const int64_t n = m.channels() * m.height * m.width;
    for (size_t i = 0; i < times.size(); ++i) {
        const Tensor<float> z = standardize(dataset.frame(times[i]), stats);
        std::copy(z.ptr(), z.ptr() + n, out.ptr() + static_cast<int64_t>(i) * n);
    }
    return out;
}

template <typename Advance>
RolloutReport score_rollout(const Dataset& dataset, const NormStats& stats, TimeRange split, int64_t k_max,
                            int64_t n_ic, Advance advance) {
    if (k_max < 1) throw std::invalid_argument("rollout length must be at least 1");
    const auto starts = initial_conditions(split, k_max, n_ic);
    const auto& m = dataset.meta();
    const double per_channel = static_cast<double>(starts.size()) * static_cast<double>(m.height * m.width);
    Tensor<float> state = stack_frames(dataset, stats, starts);
    std::vector<std::vector<double>> per_step;
    for (int64_t k = 1; k <= k_max; ++k) {
        state = advance(state, k);
        std::vector<int64_t> times;
        for (int64_t t : starts) times.push_back(t + k);
        auto sq = squared_error(state, stack_frames(dataset, stats, times), stats);
        for (double& v : sq) v = std::sqrt(v / per_channel);
        per_step.push_back(std::move(sq));
    }
    return RolloutReport::from_values(m.channel_names, per_step, static_cast<int64_t>(starts.size()));
}

}  // namespace

std::vector<double> rmse(const Tensor<float>& pred, const Tensor<float>& truth, const NormStats& stats) {
    auto acc = squared_error(pred, truth, stats);
    const double n = static_cast<double>(pred.dim(0) * pred.dim(2) * pred.dim(3));
    for (double& v : acc) v = std::sqrt(v / n);
    return acc;
}

int64_t RolloutReport::steps() const {
    int64_t k = 0;
    for (const auto& r : rows) k = std::max(k, r.step);
    return k;
}

double RolloutReport::at(int64_t step, const std::string& channel) const {
    for (const auto& r : rows) {
        if (r.step == step && r.channel == channel) return r.rmse;
    }
    throw std::out_of_range("report has no row for step " + std::to_string(step) + ", channel " + channel);
}

double RolloutReport::mean_average(int64_t from, int64_t to) const {
    if (from < 1 || to < from) throw std::invalid_argument("empty step window");
    double acc = 0.0;
    for (int64_t k = from; k <= to; ++k) acc += average(k);
    return acc / static_cast<double>(to - from + 1);
}

std::string RolloutReport::to_csv() const {
    std::ostringstream out;
    out << "step,channel,rmse,n\n";
    char buf[96];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), ",%.17g,%lld\n", r.rmse, static_cast<long long>(r.n));
        out << r.step << ',' << r.channel << buf;
    }
    return out.str();
}

RolloutReport RolloutReport::from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "step,channel,rmse,n") throw std::invalid_argument("bad report header");
    RolloutReport rep;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string step, channel, value, n;
        if (!std::getline(ls, step, ',') || !std::getline(ls, channel, ',') || !std::getline(ls, value, ',') ||
            !std::getline(ls, n)) {
            throw std::invalid_argument("bad report row '" + line + "'");
        }
        rep.rows.push_back({std::stoll(step), channel, std::stod(value), std::stoll(n)});
        if (channel != kAverageChannel &&
            std::find(rep.channels.begin(), rep.channels.end(), channel) == rep.channels.end()) {
            rep.channels.push_back(channel);
        }
    }
    return rep;
}

RolloutReport RolloutReport::from_values(const std::vector<std::string>& channels,
                                         const std::vector<std::vector<double>>& per_step, int64_t n) {
    RolloutReport rep;
    rep.channels = channels;
    for (size_t k = 0; k < per_step.size(); ++k) {
        if (per_step[k].size() != channels.size()) throw std::invalid_argument("report row width mismatch");
        double sum = 0.0;
        for (size_t c = 0; c < channels.size(); ++c) {
            rep.rows.push_back({static_cast<int64_t>(k + 1), channels[c], per_step[k][c], n});
            sum += per_step[k][c];
        }
        rep.rows.push_back({static_cast<int64_t>(k + 1), kAverageChannel, sum / static_cast<double>(channels.size()), n});
    }
    return rep;
}

std::vector<int64_t> initial_conditions(TimeRange split, int64_t k_max, int64_t n) {
    if (n < 1) throw std::invalid_argument("need at least one initial condition");
    const int64_t span = split.size() - k_max;  // valid starts: begin .. begin + span - 1
    if (span < 1) {
        throw std::invalid_argument("split of " + std::to_string(split.size()) + " frames is too short for a " +
                                    std::to_string(k_max) + "-step rollout");
    }
    if (n > span) {
        throw std::invalid_argument("split offers only " + std::to_string(span) + " initial conditions for " +
                                    std::to_string(k_max) + "-step rollouts, " + std::to_string(n) + " requested");
    }
    std::vector<int64_t> out;
    for (int64_t i = 0; i < n; ++i) out.push_back(split.begin + i * span / n);
    return out;
}

RolloutReport evaluate_rollout(const ModelParams& model, const Dataset& dataset, const NormStats& stats,
                               TimeRange split, int64_t k_max, int64_t n_ic) {
    const auto& m = dataset.meta();
    if (model.arch.grid_h != m.height || model.arch.grid_w != m.width || model.arch.channels != m.channels()) {
        throw std::invalid_argument("model grid does not match the dataset's full grid");
    }
    const AfnoNet<float> net(model.arch);
    return score_rollout(dataset, stats, split, k_max, n_ic, [&](const Tensor<float>& x, int64_t k) {
        Tensor<float> y = predict(net, model.params, x);
        for (float v : y.vec()) {
            if (!std::isfinite(v)) throw std::runtime_error("rollout produced a non-finite state at step " + std::to_string(k));
        }
        return y;
    });
}

RolloutReport persistence_report(const Dataset& dataset, const NormStats& stats, TimeRange split, int64_t k_max,
                                 int64_t n_ic) {
    return score_rollout(dataset, stats, split, k_max, n_ic, [](const Tensor<float>& x, int64_t) { return x; });
}

Comparison compare_reports(const RolloutReport& a, const RolloutReport& b, const CompareOptions& opts) {
    if (a.rows.size() != b.rows.size()) throw std::invalid_argument("reports have different row counts");
    Comparison c;
    for (size_t i = 0; i < a.rows.size(); ++i) {
        const auto& ra = a.rows[i];
        const auto& rb = b.rows[i];
        if (ra.step != rb.step || ra.channel != rb.channel) throw std::invalid_argument("reports have different schemas");
        c.deltas.push_back({ra.step, ra.channel, rb.rmse - ra.rmse, rb.n});
    }
    const int64_t K = a.steps();
    for (int64_t k = 1; k <= K; ++k) c.gain_at_step[k] = b.average(k) < a.average(k);
    const int64_t to = opts.gain_to == 0 ? K : opts.gain_to;
    if (opts.gain_from <= to) c.multi_step_gain = b.mean_average(opts.gain_from, to) < a.mean_average(opts.gain_from, to);
    c.single_step_ratio = a.average(1) > 0.0 ? b.average(1) / a.average(1) : (b.average(1) > 0.0 ? INFINITY : 1.0);
    c.forgetting = c.single_step_ratio > 1.0 + opts.forgetting_bound;
    return c;
}

}  // namespace fcx
