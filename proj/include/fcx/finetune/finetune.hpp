#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fcx/afno/model.hpp"
#include "fcx/train/run_config.hpp"
#include "fcx/train/trainer.hpp"

namespace fcx {

/// Autoregressive states 1..k from x0; k = 0 returns an empty list.
/// Throws naming the first step that produces a non-finite value.
std::vector<Tensor<float>> rollout(const AfnoNet<float>& net, const ParamSet<float>& params, const Tensor<float>& x0,
                                   int64_t k);

/// Advances batch row b of x0 by steps[b] model steps (0 keeps the row).
using TeacherFn = std::function<Tensor<float>(const Tensor<float>& x0, const std::vector<int64_t>& steps)>;

/// Teacher backed by a frozen parameter snapshot; `params` must outlive it.
TeacherFn frozen_teacher(const AfnoNet<float>& net, const ParamSet<float>& params);

/// `n` independent draws from Uniform{1..curr_step}.
std::vector<int64_t> sample_teacher_steps(RngStream& rng, int64_t curr_step, int64_t n);

struct FinetuneLosses {
    double multi = 0.0;
    double single = 0.0;
    std::vector<int64_t> teacher_steps;
};

/// One fine-tuning objective evaluation.
///
/// Per example, teacher_step ~ Uniform{1..curr_step}; the teacher rolls
/// obs(t0) forward teacher_step - 1 steps. multi = loss(student(teacher
/// output), obs(t0 + teacher_step)) and single = loss(student(obs(t0 +
/// teacher_step - 1)), same target). Gradients of multi + single are
/// accumulated into `grads` when it is non-null; the teacher is never
/// differentiated.
FinetuneLosses finetune_step(const AfnoNet<float>& net, const ParamSet<float>& student, const TeacherFn& teacher,
                             const ExampleBatch& batch, int64_t curr_step, RngStream& rng, ParamSet<float>* grads);

struct IncrementRecord {
    int64_t curr_step = 0;
    std::string teacher_digest_start;
    std::string teacher_digest_end;
    std::string student_digest_end;
};

struct FinetuneResult {
    ModelParams params;
    std::vector<StepLog> log;  // loss is multi + single
    std::vector<double> multi;
    std::vector<double> single;
    std::vector<IncrementRecord> increments;
    bool diverged = false;
    std::string diverged_reason;
    std::string stream_digest;
};

/// Example source with `horizon` targets starting at example counter `first_counter`.
using SourceFactory = std::function<std::unique_ptr<ExampleSource>(int64_t horizon, uint64_t first_counter)>;

/// Curriculum over curr_step = 1..max_time_steps. Teacher and student start
/// from `pretrained`; after each increment the teacher becomes a frozen
/// snapshot of the student. `after_step` sees the global step count.
FinetuneResult curriculum_finetune(const RunConfig& cfg, const ModelParams& pretrained, const SourceFactory& data,
                                   const StepCallback& after_step = {});

struct FinetuneOutcome {
    FinetuneResult result;
    std::string checkpoint_digest;
    std::filesystem::path checkpoint;
};

/// File-level run: loads `init`, fine-tunes on cfg's data and, with a
/// non-empty out_dir, writes config.json, metrics.csv, increments.json and
/// final/ (last_good/ after divergence).
FinetuneOutcome finetune(const RunConfig& cfg, const std::filesystem::path& init);

}  // namespace fcx
