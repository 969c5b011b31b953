#include "fcx/ablate/ablate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "fcx/core/checkpoint.hpp"
#include "fcx/core/io.hpp"
#include "fcx/evalrep/evalrep.hpp"
#include "fcx/finetune/finetune.hpp"
#include "fcx/train/pretrain.hpp"

namespace fcx {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

const std::vector<std::pair<AblationAxis, std::string>>& axis_names() {
    static const std::vector<std::pair<AblationAxis, std::string>> names = {
        {AblationAxis::NormMode, "norm_mode"},
        {AblationAxis::Patch, "patch"},
        {AblationAxis::Flow, "flow"},
        {AblationAxis::FinetuneDepth, "finetune_depth"}};
    return names;
}

bool has(const std::vector<std::string>& v, const std::string& s) { return std::find(v.begin(), v.end(), s) != v.end(); }

int64_t parse_int(const std::string& s) {
    size_t used = 0;
    int64_t v = 0;
    try {
        v = std::stoll(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) throw std::invalid_argument("expected an integer variant, got '" + s + "'");
    return v;
}

double eval_metric(const ModelParams& p, const Dataset& ds, const NormStats& stats, const AblationSpec& spec) {
    try {
        const auto rep = evaluate_rollout(p, ds, stats, ds.meta().test_range(), spec.eval_steps, spec.eval_ics);
        return rep.mean_average(1, spec.eval_steps);
    } catch (const std::runtime_error&) {
        return kInf;  // rollout blew up
    }
}

std::string run_dir(const AblationSpec& spec, const std::string& variant, uint64_t seed) {
    if (spec.out_dir.empty()) return {};
    return (std::filesystem::path(spec.out_dir) / (variant + "_seed" + std::to_string(seed))).string();
}

}  // namespace

nlohmann::json ablation_verdicts(const AblationResult& r) {
    const int64_t need = required_wins(r.seeds.size());
    nlohmann::json v;
    v["required_wins"] = need;
    v["paired_streams"] = r.paired;
    auto count = [&](auto pred) {
        int64_t n = 0;
        for (uint64_t s : r.seeds) n += pred(s) ? 1 : 0;
        return n;
    };
    switch (r.axis) {
        case AblationAxis::NormMode:
            if (has(r.variants, "post_deepnorm") && has(r.variants, "pre")) {
                const int64_t n = count([&](uint64_t s) {
                    return r.run("post_deepnorm", s).final_loss <= r.run("pre", s).final_loss;
                });
                v["deepnorm_loss_le_pre"] = {{"wins", n}, {"pass", n >= need}};
            }
            if (has(r.variants, "post_deepnorm") && has(r.variants, "post_plain")) {
                const int64_t n = count([&](uint64_t s) {
                    const auto& plain = r.run("post_plain", s);
                    return plain.diverged || plain.final_loss > r.run("post_deepnorm", s).final_loss;
                });
                v["plain_diverges_or_worse"] = {{"wins", n}, {"pass", n >= need}};
            }
            break;
        case AblationAxis::Patch:
            if (has(r.variants, "4") && has(r.variants, "8")) {
                const int64_t n = r.rmse_wins("4", "8");
                v["patch_4_beats_8"] = {{"wins", n}, {"pass", n >= need}, {"mean_reduction", r.mean_reduction("4", "8")}};
            }
            break;
        case AblationAxis::Flow:
            for (const char* on : {"shared2", "per_channel"}) {
                if (has(r.variants, on) && has(r.variants, "none")) {
                    const int64_t n = r.rmse_wins(on, "none");
                    v[std::string("flow_") + on + "_beats_none"] = {
                        {"wins", n}, {"pass", n >= need}, {"mean_reduction", r.mean_reduction(on, "none")}};
                }
            }
            break;
        case AblationAxis::FinetuneDepth: {
            // Reported only: whether deeper curricula keep lowering the metric.
            std::vector<std::pair<int64_t, double>> means;
            for (const auto& var : r.variants) {
                double acc = 0.0;
                for (uint64_t s : r.seeds) acc += r.run(var, s).eval_rmse;
                means.emplace_back(parse_int(var), acc / static_cast<double>(r.seeds.size()));
            }
            std::sort(means.begin(), means.end());
            bool monotone = true;
            for (size_t i = 1; i < means.size(); ++i) monotone = monotone && means[i].second < means[i - 1].second;
            nlohmann::json m = nlohmann::json::object();
            for (const auto& [d, x] : means) m[std::to_string(d)] = x;
            v["mean_eval_rmse"] = m;
            v["monotone_gain"] = monotone;
            break;
        }
    }
    return v;
}

std::string to_string(AblationAxis a) {
    for (const auto& [k, n] : axis_names()) {
        if (k == a) return n;
    }
    throw std::invalid_argument("unknown ablation axis");
}

AblationAxis parse_axis(const std::string& s) {
    for (const auto& [k, n] : axis_names()) {
        if (n == s) return k;
    }
    throw std::invalid_argument("unknown ablation axis '" + s + "'");
}

int64_t required_wins(size_t seeds) { return static_cast<int64_t>(std::ceil(0.8 * static_cast<double>(seeds))); }

RunConfig apply_variant(const RunConfig& base, AblationAxis axis, const std::string& value) {
    RunConfig c = base;
    switch (axis) {
        case AblationAxis::NormMode:
            c.arch.norm_mode = parse_norm_mode(value);
            break;
        case AblationAxis::Patch:
            c.arch.patch = parse_int(value);
            break;
        case AblationAxis::Flow:
            c.arch.flow_mode = parse_flow_mode(value);
            break;
        case AblationAxis::FinetuneDepth:
            c.curriculum.max_time_steps = parse_int(value);
            break;
    }
    c.validate();
    return c;
}

void AblationSpec::validate() const {
    if (variants.empty()) throw std::invalid_argument("ablation needs at least one variant");
    if (seeds.empty()) throw std::invalid_argument("ablation needs at least one seed");
    if (budget < 0 || eval_steps < 1 || eval_ics < 1 || final_window < 1) {
        throw std::invalid_argument("ablation budget, eval_steps, eval_ics and final_window must be positive");
    }
    for (size_t i = 0; i < variants.size(); ++i) {
        apply_variant(base, axis, variants[i]);
        if (std::count(variants.begin(), variants.begin() + static_cast<std::ptrdiff_t>(i), variants[i])) {
            throw std::invalid_argument("duplicate ablation variant '" + variants[i] + "'");
        }
    }
    for (size_t i = 0; i < seeds.size(); ++i) {
        if (std::count(seeds.begin(), seeds.begin() + static_cast<std::ptrdiff_t>(i), seeds[i])) {
            throw std::invalid_argument("duplicate ablation seed " + std::to_string(seeds[i]));
        }
    }
}

void to_json(nlohmann::json& j, const AblationSpec& s) {
    j = nlohmann::json{{"base", s.base},         {"axis", to_string(s.axis)},   {"variants", s.variants},
                       {"seeds", s.seeds},       {"budget", s.budget},          {"eval_steps", s.eval_steps},
                       {"eval_ics", s.eval_ics}, {"final_window", s.final_window}, {"out_dir", s.out_dir}};
}

void from_json(const nlohmann::json& j, AblationSpec& s) {
    static const std::vector<std::string> known = {"base",     "axis",     "variants",     "seeds",  "budget",
                                                   "eval_steps", "eval_ics", "final_window", "out_dir"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!has(known, it.key())) throw std::invalid_argument("unknown ablation key '" + it.key() + "'");
    }
    const AblationSpec d;
    s.base = j.contains("base") ? j.at("base").get<RunConfig>() : d.base;
    s.axis = parse_axis(j.at("axis").get<std::string>());
    s.variants.clear();
    for (const auto& v : j.at("variants")) s.variants.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    s.seeds = j.value("seeds", d.seeds);
    s.budget = j.value("budget", d.budget);
    s.eval_steps = j.value("eval_steps", d.eval_steps);
    s.eval_ics = j.value("eval_ics", d.eval_ics);
    s.final_window = j.value("final_window", d.final_window);
    s.out_dir = j.value("out_dir", d.out_dir);
}

const AblationRun& AblationResult::run(const std::string& variant, uint64_t seed) const {
    for (const auto& r : runs) {
        if (r.variant == variant && r.seed == seed) return r;
    }
    throw std::out_of_range("no run for variant " + variant + ", seed " + std::to_string(seed));
}

int64_t AblationResult::rmse_wins(const std::string& better, const std::string& worse) const {
    int64_t n = 0;
    for (uint64_t s : seeds) n += run(better, s).eval_rmse < run(worse, s).eval_rmse ? 1 : 0;
    return n;
}

double AblationResult::mean_reduction(const std::string& better, const std::string& worse) const {
    double acc = 0.0;
    for (uint64_t s : seeds) acc += run(worse, s).eval_rmse - run(better, s).eval_rmse;
    return acc / static_cast<double>(seeds.size());
}

std::string AblationResult::to_csv() const {
    std::ostringstream out;
    out << "axis,variant,seed,final_loss,diverged,eval_rmse,stream_digest,checkpoint_digest\n";
    char buf[128];
    for (const auto& r : runs) {
        std::snprintf(buf, sizeof(buf), ",%llu,%.17g,%d,%.17g,", static_cast<unsigned long long>(r.seed), r.final_loss,
                      r.diverged ? 1 : 0, r.eval_rmse);
        out << to_string(axis) << ',' << r.variant << buf << r.stream_digest << ',' << r.checkpoint_digest << '\n';
    }
    return out.str();
}

AblationResult run_ablation(const AblationSpec& spec) {
    spec.validate();
    const Dataset dataset = Dataset::open(spec.base.data_dir);
    const NormStats stats = load_stats(spec.base.data_dir);
    AblationResult result;
    result.axis = spec.axis;
    result.variants = spec.variants;
    result.seeds = spec.seeds;
    result.paired = true;

    for (uint64_t seed : spec.seeds) {
        std::string seed_stream;
        // The fine-tune depth axis shares one pretrained model per seed.
        PretrainOutcome shared;
        if (spec.axis == AblationAxis::FinetuneDepth) {
            RunConfig c = spec.base;
            c.seed = seed;
            c.max_steps = spec.budget;
            c.out_dir = run_dir(spec, "pretrained", seed);
            shared = pretrain(c);
        }
        for (const auto& variant : spec.variants) {
            RunConfig c = apply_variant(spec.base, spec.axis, variant);
            c.seed = seed;
            c.max_steps = spec.budget;
            c.out_dir = run_dir(spec, variant, seed);
            AblationRun run;
            run.variant = variant;
            run.seed = seed;
            if (spec.axis == AblationAxis::FinetuneDepth) {
                if (!c.out_dir.empty()) std::filesystem::create_directories(c.out_dir);
                const SourceFactory data = [&](int64_t horizon, uint64_t first) {
                    return open_source(c, dataset, stats, horizon, streams::kFinetuneData, first);
                };
                const FinetuneResult ft = shared.diverged ? FinetuneResult{shared.params, {}, {}, {}, {}, true, "", ""}
                                                          : curriculum_finetune(c, shared.params, data);
                run.diverged = ft.diverged;
                run.final_loss = ft.log.empty() ? kInf : ft.log.back().loss;
                run.stream_digest = shared.stream_digest;
                run.checkpoint_digest = params_digest(ft.params);
                run.eval_rmse = ft.diverged ? kInf : eval_metric(ft.params, dataset, stats, spec);
                if (!c.out_dir.empty()) {
                    save_run_checkpoint(ft.params, c, std::filesystem::path(c.out_dir) / "final");
                    write_metrics_csv(std::filesystem::path(c.out_dir) / "metrics.csv", ft.log);
                }
            } else {
                const PretrainOutcome o = pretrain(c);
                run.diverged = o.diverged;
                run.final_loss = o.diverged ? kInf : o.final_loss(spec.final_window);
                run.stream_digest = o.stream_digest;
                run.checkpoint_digest = o.checkpoint_digest;
                run.eval_rmse = o.diverged ? kInf : eval_metric(o.params, dataset, stats, spec);
            }
            if (seed_stream.empty() && !run.diverged) seed_stream = run.stream_digest;
            // A diverged run stops early, so only complete runs must match.
            if (!run.diverged && run.stream_digest != seed_stream) result.paired = false;
            result.runs.push_back(run);
        }
    }
    result.verdicts = ablation_verdicts(result);
    if (!spec.out_dir.empty()) {
        std::filesystem::create_directories(spec.out_dir);
        write_json(std::filesystem::path(spec.out_dir) / "spec.json", nlohmann::json(spec));
        write_text(std::filesystem::path(spec.out_dir) / "results.csv", result.to_csv());
        write_json(std::filesystem::path(spec.out_dir) / "verdicts.json", result.verdicts);
    }
    return result;
}

std::vector<AxisReduction> axis_reductions(const std::vector<AblationResult>& results) {
    std::vector<AxisReduction> out;
    for (const auto& r : results) {
        std::string better, worse;
        switch (r.axis) {
            case AblationAxis::NormMode:
                better = "post_deepnorm";
                worse = "pre";
                break;
            case AblationAxis::Patch:
                better = "4";
                worse = "8";
                break;
            case AblationAxis::Flow:
                better = "shared2";
                worse = "none";
                break;
            case AblationAxis::FinetuneDepth:
                continue;
        }
        if (!has(r.variants, better) || !has(r.variants, worse)) continue;
        out.push_back({r.axis, better, worse, r.mean_reduction(better, worse)});
    }
    return out;
}

}  // namespace fcx
