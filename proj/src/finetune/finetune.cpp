#include "fcx/finetune/finetune.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "fcx/core/checkpoint.hpp"
#include "fcx/core/io.hpp"
#include "fcx/optim/optim.hpp"
#include "fcx/train/loss.hpp"
#include "fcx/train/pretrain.hpp"

namespace fcx {

namespace {

bool finite(const Tensor<float>& t) {
    for (float v : t.vec()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

int64_t sample_size(const Tensor<float>& t) { return t.size() / t.dim(0); }

/// Row b of `out` <- row b of `src`.
void copy_row(Tensor<float>& out, const Tensor<float>& src, int64_t b) {
    const int64_t n = sample_size(out);
    std::copy(src.ptr() + b * n, src.ptr() + (b + 1) * n, out.ptr() + b * n);
}

/// Frame t0 + k of every batch row; k = 0 is the input.
Tensor<float> observed(const ExampleBatch& batch, const std::vector<int64_t>& k) {
    Tensor<float> out(batch.inputs.shape());
    const int64_t n = sample_size(out), K = batch.targets.dim(1);
    for (int64_t b = 0; b < out.dim(0); ++b) {
        const int64_t kb = k[static_cast<size_t>(b)];
        const float* src = kb == 0 ? batch.inputs.ptr() + b * n : batch.targets.ptr() + (b * K + kb - 1) * n;
        std::copy(src, src + n, out.ptr() + b * n);
    }
    return out;
}

}  // namespace

std::vector<Tensor<float>> rollout(const AfnoNet<float>& net, const ParamSet<float>& params, const Tensor<float>& x0,
                                   int64_t k) {
    if (k < 0) throw std::invalid_argument("rollout length must be non-negative");
    std::vector<Tensor<float>> states;
    const Tensor<float>* cur = &x0;
    for (int64_t i = 1; i <= k; ++i) {
        states.push_back(predict(net, params, *cur));
        if (!finite(states.back())) throw std::runtime_error("rollout produced a non-finite state at step " + std::to_string(i));
        cur = &states.back();
    }
    return states;
}

TeacherFn frozen_teacher(const AfnoNet<float>& net, const ParamSet<float>& params) {
    return [&net, &params](const Tensor<float>& x0, const std::vector<int64_t>& steps) {
        const int64_t most = steps.empty() ? 0 : *std::max_element(steps.begin(), steps.end());
        const auto states = rollout(net, params, x0, most);
        Tensor<float> out = x0;
        for (int64_t b = 0; b < x0.dim(0); ++b) {
            const int64_t s = steps[static_cast<size_t>(b)];
            if (s > 0) copy_row(out, states[static_cast<size_t>(s - 1)], b);
        }
        return out;
    };
}

std::vector<int64_t> sample_teacher_steps(RngStream& rng, int64_t curr_step, int64_t n) {
    if (curr_step < 1) throw std::invalid_argument("curr_step must be at least 1");
    std::vector<int64_t> out;
    for (int64_t b = 0; b < n; ++b) out.push_back(1 + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(curr_step))));
    return out;
}

FinetuneLosses finetune_step(const AfnoNet<float>& net, const ParamSet<float>& student, const TeacherFn& teacher,
                             const ExampleBatch& batch, int64_t curr_step, RngStream& rng, ParamSet<float>* grads) {
    if (curr_step < 1) throw std::invalid_argument("curr_step must be at least 1");
    if (curr_step > batch.targets.dim(1)) {
        throw std::invalid_argument("curr_step " + std::to_string(curr_step) + " exceeds the example horizon " +
                                    std::to_string(batch.targets.dim(1)));
    }
    FinetuneLosses out;
    out.teacher_steps = sample_teacher_steps(rng, curr_step, batch.inputs.dim(0));
    std::vector<int64_t> prior = out.teacher_steps;
    for (auto& s : prior) s -= 1;
    const Tensor<float> teacher_output = teacher(batch.inputs, prior);
    const Tensor<float> obs2 = observed(batch, prior);
    const Tensor<float> target = observed(batch, out.teacher_steps);
    out.multi = training_loss(net, student, teacher_output, target, grads);
    out.single = training_loss(net, student, obs2, target, grads);
    return out;
}

FinetuneResult curriculum_finetune(const RunConfig& cfg, const ModelParams& pretrained, const SourceFactory& data,
                                   const StepCallback& after_step) {
    cfg.validate();
    check_layout(cfg.arch, pretrained.params);
    if (!(pretrained.arch == cfg.arch)) throw std::invalid_argument("pretrained checkpoint was built for another arch");
    const CurriculumConfig& cc = cfg.curriculum;
    const AfnoNet<float> net(cfg.arch);

    FinetuneResult result;
    result.params = pretrained;
    ModelParams teacher = pretrained;
    RngStream steps_rng(cfg.seed, streams::kCurriculum);
    Sha256 stream;
    uint64_t counter = 0;
    int64_t global = 0;
    const auto start = std::chrono::steady_clock::now();

    for (int64_t curr = 1; curr <= cc.max_time_steps && !result.diverged; ++curr) {
        IncrementRecord rec;
        rec.curr_step = curr;
        rec.teacher_digest_start = params_digest(teacher);
        const TeacherFn teach = frozen_teacher(net, teacher.params);
        auto source = data(curr, counter);
        Lamb<float> opt(result.params.params, cfg.optimizer);
        ParamSet<float> grads = result.params.params.zeros_like();
        const LrSchedule sched = cc.lr_schedule();

        for (int64_t step = 0; step < cc.steps_per_increment; ++step, ++global) {
            const int64_t bs = batch_size_at(global, cfg.batch);
            const double lr = cosine_lr(step, sched);
            const ExampleBatch batch = source->next_batch(bs);
            counter += static_cast<uint64_t>(bs);
            hash_example_metas(stream, batch.metas);
            for (auto& g : grads) std::fill(g.value.vec().begin(), g.value.vec().end(), 0.0f);
            FinetuneLosses l;
            try {
                l = finetune_step(net, result.params.params, teach, batch, curr, steps_rng, &grads);
            } catch (const std::runtime_error& e) {
                result.diverged = true;
                result.diverged_reason = "step " + std::to_string(global) + ": " + e.what();
                break;
            }
            const double loss = l.multi + l.single;
            if (!std::isfinite(loss)) {
                result.diverged = true;
                result.diverged_reason = "non-finite loss at step " + std::to_string(global);
                break;
            }
            ParamSet<float> before = result.params.params;
            try {
                opt.step(result.params.params, grads, lr);
            } catch (const std::invalid_argument& e) {
                result.diverged = true;
                result.diverged_reason = "step " + std::to_string(global) + ": " + e.what();
                break;
            }
            if (!result.params.all_finite()) {
                result.params.params = std::move(before);
                result.diverged = true;
                result.diverged_reason = "non-finite parameters after step " + std::to_string(global);
                break;
            }
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            result.log.push_back({global, lr, bs, loss, secs});
            result.multi.push_back(l.multi);
            result.single.push_back(l.single);
            if (after_step) after_step(global + 1, result.params);
        }
        rec.teacher_digest_end = params_digest(teacher);
        rec.student_digest_end = params_digest(result.params);
        result.increments.push_back(rec);
        teacher = result.params;
    }
    result.stream_digest = stream.hex_digest();
    return result;
}

FinetuneOutcome finetune(const RunConfig& cfg, const std::filesystem::path& init) {
    cfg.validate();
    const Dataset dataset = Dataset::open(cfg.data_dir);
    const NormStats stats = load_stats(cfg.data_dir);
    const ModelParams pretrained = load_checkpoint(init);
    const std::filesystem::path out = cfg.out_dir;
    if (!out.empty()) {
        std::filesystem::create_directories(out);
        write_json(out / "config.json", nlohmann::json(cfg));
    }
    const SourceFactory data = [&](int64_t horizon, uint64_t first) {
        return open_source(cfg, dataset, stats, horizon, streams::kFinetuneData, first);
    };
    FinetuneOutcome o;
    o.result = curriculum_finetune(cfg, pretrained, data);
    o.checkpoint_digest = params_digest(o.result.params);
    if (!out.empty()) {
        o.checkpoint = out / (o.result.diverged ? "last_good" : "final");
        save_run_checkpoint(o.result.params, cfg, o.checkpoint);
        write_metrics_csv(out / "metrics.csv", thin_log(o.result.log, cfg.log_every));
        nlohmann::json inc = nlohmann::json::array();
        for (const auto& r : o.result.increments) {
            inc.push_back({{"curr_step", r.curr_step},
                           {"teacher_digest_start", r.teacher_digest_start},
                           {"teacher_digest_end", r.teacher_digest_end},
                           {"student_digest_end", r.student_digest_end}});
        }
        write_json(out / "increments.json", inc);
        write_json(out / "summary.json", nlohmann::json{{"steps", o.result.log.size()},
                                                        {"diverged", o.result.diverged},
                                                        {"diverged_reason", o.result.diverged_reason},
                                                        {"stream_digest", o.result.stream_digest},
                                                        {"init", init.string()},
                                                        {"init_digest", params_digest(pretrained)},
                                                        {"checkpoint", o.checkpoint.filename().string()},
                                                        {"checkpoint_digest", o.checkpoint_digest}});
    }
    return o;
}

}  // namespace fcx
