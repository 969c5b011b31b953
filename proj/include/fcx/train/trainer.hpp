#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcx/core/io.hpp"
#include "fcx/core/params.hpp"
#include "fcx/sampler/sampler.hpp"
#include "fcx/train/run_config.hpp"

namespace fcx {

struct StepLog {
    int64_t step = 0;
    double lr = 0.0;
    int64_t batch_size = 0;
    double loss = 0.0;
    double seconds = 0.0;  // wall time since the loop started
};

/// Raised when a loss or gradient turns non-finite. The last finite
/// parameters are checkpointed under `last_good` before it propagates.
struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    ModelParams params;
    std::vector<StepLog> log;
    std::vector<double> persistence;  // MSE of predicting the input, per step, same batches
    bool diverged = false;
    std::string diverged_reason;
    std::string stream_digest;  // SHA-256 over the example metadata consumed
};

/// Runs cfg.max_steps single-step LAMB updates from `init`, drawing
/// batch_size_at(step) examples per step from `source`. Stops early (with
/// `diverged` set and `params` at the last finite state) on a non-finite
/// loss or gradient. `after_step`, if set, sees the number of completed
/// steps and the updated parameters.
using StepCallback = std::function<void(int64_t completed, const ModelParams&)>;
TrainResult train_single_step(const RunConfig& cfg, ExampleSource& source, ModelParams init,
                              const StepCallback& after_step = {});

/// Folds example metadata into a running stream digest.
void hash_example_metas(Sha256& hasher, const std::vector<ExampleMeta>& metas);

/// CSV `step,lr,batch_size,loss,seconds`; every row of `log`.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepLog>& log);
std::vector<StepLog> read_metrics_csv(const std::filesystem::path& path);

/// save_checkpoint plus the run config echoed as run.json alongside it.
std::string save_run_checkpoint(const ModelParams& params, const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace fcx
