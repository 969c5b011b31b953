#include "fcx/train/run_config.hpp"

#include <algorithm>
#include <stdexcept>

namespace fcx {

CropSpec RunConfig::crop(int64_t full_h, int64_t full_w) const {
    CropSpec c{full_h, full_w, crop_h == 0 ? arch.grid_h : crop_h, crop_w == 0 ? arch.grid_w : crop_w};
    c.validate();
    return c;
}

void CurriculumConfig::validate() const {
    if (max_time_steps < 1) throw std::invalid_argument("max_time_steps must be at least 1");
    if (steps_per_increment < 0) throw std::invalid_argument("steps_per_increment must be non-negative");
    if (!(lr_init > 0.0) || !(lr_final > 0.0)) throw std::invalid_argument("fine-tune learning rates must be positive");
}

void to_json(nlohmann::json& j, const CurriculumConfig& c) {
    j = nlohmann::json{{"max_time_steps", c.max_time_steps},
                       {"steps_per_increment", c.steps_per_increment},
                       {"lr_init", c.lr_init},
                       {"lr_final", c.lr_final}};
}

void from_json(const nlohmann::json& j, CurriculumConfig& c) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() != "max_time_steps" && it.key() != "steps_per_increment" && it.key() != "lr_init" &&
            it.key() != "lr_final") {
            throw std::invalid_argument("unknown curriculum key '" + it.key() + "'");
        }
    }
    const CurriculumConfig d;
    c.max_time_steps = j.value("max_time_steps", d.max_time_steps);
    c.steps_per_increment = j.value("steps_per_increment", d.steps_per_increment);
    c.lr_init = j.value("lr_init", d.lr_init);
    c.lr_final = j.value("lr_final", d.lr_final);
}

void RunConfig::validate() const {
    arch.validate();
    batch.validate();
    if (max_steps < 0) throw std::invalid_argument("max_steps must be non-negative");
    if (log_every < 1) throw std::invalid_argument("log_every must be at least 1");
    if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be non-negative");
    if (!(lr_init > 0.0) || !(lr_final > 0.0)) throw std::invalid_argument("learning rates must be positive");
    const int64_t ch = crop_h == 0 ? arch.grid_h : crop_h;
    const int64_t cw = crop_w == 0 ? arch.grid_w : crop_w;
    if (ch != arch.grid_h || cw != arch.grid_w) {
        throw std::invalid_argument("crop " + std::to_string(ch) + "x" + std::to_string(cw) +
                                    " does not match the model grid " + std::to_string(arch.grid_h) + "x" +
                                    std::to_string(arch.grid_w));
    }
    if (data_dir.empty()) throw std::invalid_argument("run needs data_dir");
    curriculum.validate();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"data_dir", c.data_dir},
                       {"workers", c.workers},
                       {"arch", c.arch},
                       {"optimizer", c.optimizer},
                       {"lr_init", c.lr_init},
                       {"lr_final", c.lr_final},
                       {"batch", c.batch},
                       {"max_steps", c.max_steps},
                       {"crop_h", c.crop_h},
                       {"crop_w", c.crop_w},
                       {"seed", c.seed},
                       {"log_every", c.log_every},
                       {"checkpoint_every", c.checkpoint_every},
                       {"out_dir", c.out_dir},
                       {"curriculum", c.curriculum}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    static const std::vector<std::string> known = {"data_dir", "workers",   "arch",     "optimizer", "lr_init",
                                                   "lr_final", "batch",     "max_steps", "crop_h",   "crop_w",
                                                   "seed",     "log_every", "checkpoint_every", "out_dir", "curriculum"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw std::invalid_argument("unknown run config key '" + it.key() + "'");
        }
    }
    RunConfig d;
    c.data_dir = j.value("data_dir", d.data_dir);
    c.workers = j.value("workers", d.workers);
    c.arch = j.contains("arch") ? j.at("arch").get<ArchConfig>() : d.arch;
    c.optimizer = j.contains("optimizer") ? j.at("optimizer").get<LambConfig>() : d.optimizer;
    c.lr_init = j.value("lr_init", d.lr_init);
    c.lr_final = j.value("lr_final", d.lr_final);
    c.batch = j.contains("batch") ? j.at("batch").get<BatchSchedule>() : d.batch;
    c.max_steps = j.value("max_steps", d.max_steps);
    c.crop_h = j.value("crop_h", d.crop_h);
    c.crop_w = j.value("crop_w", d.crop_w);
    c.seed = j.value("seed", d.seed);
    c.log_every = j.value("log_every", d.log_every);
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    c.out_dir = j.value("out_dir", d.out_dir);
    c.curriculum = j.contains("curriculum") ? j.at("curriculum").get<CurriculumConfig>() : d.curriculum;
}

}  // namespace fcx
