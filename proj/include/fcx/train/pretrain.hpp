#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "fcx/train/run_config.hpp"
#include "fcx/train/trainer.hpp"

namespace fcx {

/// Example source for a run: the in-process sampler, or a worker pool when
/// cfg.workers is set. Both produce the same stream for the same arguments.
std::unique_ptr<ExampleSource> open_source(const RunConfig& cfg, const Dataset& dataset, const NormStats& stats,
                                           int64_t horizon, uint64_t stream_id, uint64_t first_counter = 0);

ModelParams initial_params(const RunConfig& cfg);

struct PretrainOutcome {
    ModelParams params;
    std::vector<StepLog> log;
    std::vector<double> persistence;  // per-step MSE of predicting the input unchanged
    bool diverged = false;
    std::string diverged_reason;
    std::string stream_digest;
    std::string checkpoint_digest;
    std::filesystem::path checkpoint;  // final/ or, after divergence, last_good/; empty without out_dir

    /// Mean loss over the last `window` logged steps.
    double final_loss(int64_t window = 50) const;
};

/// Single-step pretraining from the seed's initialization.
///
/// With a non-empty cfg.out_dir writes config.json (the resolved config),
/// metrics.csv, persistence.csv, summary.json, a checkpoint every
/// checkpoint_every steps and final/. A non-finite loss stops the run and
/// keeps the last finite parameters in last_good/ instead of final/.
PretrainOutcome pretrain(const RunConfig& cfg);

void write_persistence_csv(const std::filesystem::path& path, const std::vector<double>& persistence);

/// metrics.csv rows thinned to every log_every-th step plus the last one.
std::vector<StepLog> thin_log(const std::vector<StepLog>& log, int64_t log_every);

}  // namespace fcx
