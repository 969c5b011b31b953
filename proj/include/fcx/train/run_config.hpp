#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "fcx/core/arch.hpp"
#include "fcx/optim/optim.hpp"
#include "fcx/sampler/sampler.hpp"

namespace fcx {

/// Multi-step fine-tuning schedule: one increment of the prediction horizon
/// per stage, each stage a fresh cosine decay from lr_init to lr_final.
struct CurriculumConfig {
    int64_t max_time_steps = 4;
    int64_t steps_per_increment = 300;
    double lr_init = 1e-4;
    double lr_final = 1e-5;

    LrSchedule lr_schedule() const { return {lr_init, lr_final, steps_per_increment}; }
    void validate() const;
    bool operator==(const CurriculumConfig&) const = default;
};

void to_json(nlohmann::json& j, const CurriculumConfig& c);
void from_json(const nlohmann::json& j, CurriculumConfig& c);

/// Everything that determines a training run. Two runs with equal configs
/// (and equal data) produce identical metric logs and checkpoints.
struct RunConfig {
    std::string data_dir;              // always required: digest, grid and statistics come from it
    std::vector<std::string> workers;  // HOST:PORT; empty means in-process sampling
    ArchConfig arch;
    LambConfig optimizer;
    double lr_init = 3e-3;
    double lr_final = 3e-4;
    BatchSchedule batch;
    int64_t max_steps = 2000;
    int64_t crop_h = 0;  // 0 selects the model grid
    int64_t crop_w = 0;
    uint64_t seed = 0;
    int64_t log_every = 1;
    int64_t checkpoint_every = 0;  // 0 writes only the final checkpoint
    std::string out_dir;
    CurriculumConfig curriculum;

    LrSchedule lr_schedule() const { return {lr_init, lr_final, max_steps}; }
    /// Crop policy over a dataset of `full_h` x `full_w`. The crop always
    /// equals the model grid, since the positional embedding fixes it.
    CropSpec crop(int64_t full_h, int64_t full_w) const;
    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

}  // namespace fcx
