#include "fcx/train/pretrain.hpp"

#include <cstdio>
#include <limits>
#include <sstream>

#include "fcx/afno/model.hpp"
#include "fcx/core/checkpoint.hpp"
#include "fcx/core/io.hpp"
#include "fcx/shardnet/pool.hpp"

namespace fcx {

std::unique_ptr<ExampleSource> open_source(const RunConfig& cfg, const Dataset& dataset, const NormStats& stats,
                                           int64_t horizon, uint64_t stream_id, uint64_t first_counter) {
    const auto& m = dataset.meta();
    if (cfg.workers.empty()) {
        return std::make_unique<LocalSource>(dataset, stats, cfg.crop(m.height, m.width), horizon, m.train_range(),
                                             cfg.seed, stream_id, first_counter);
    }
    std::vector<net::Endpoint> eps;
    for (const auto& w : cfg.workers) eps.push_back(net::parse_endpoint(w));
    return std::make_unique<net::WorkerPool>(eps, dataset.digest(), horizon, cfg.seed, stream_id, first_counter);
}

ModelParams initial_params(const RunConfig& cfg) {
    RngStream rng(cfg.seed, streams::kInit);
    return init_model(cfg.arch, rng);
}

double PretrainOutcome::final_loss(int64_t window) const {
    if (log.empty()) return std::numeric_limits<double>::quiet_NaN();
    const size_t n = std::min(log.size(), static_cast<size_t>(std::max<int64_t>(window, 1)));
    double acc = 0.0;
    for (size_t i = log.size() - n; i < log.size(); ++i) acc += log[i].loss;
    return acc / static_cast<double>(n);
}

std::vector<StepLog> thin_log(const std::vector<StepLog>& log, int64_t log_every) {
    std::vector<StepLog> out;
    for (size_t i = 0; i < log.size(); ++i) {
        if (log[i].step % log_every == 0 || i + 1 == log.size()) out.push_back(log[i]);
    }
    return out;
}

void write_persistence_csv(const std::filesystem::path& path, const std::vector<double>& persistence) {
    std::ostringstream out;
    out << "step,mse\n";
    char buf[64];
    for (size_t i = 0; i < persistence.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, persistence[i]);
        out << buf;
    }
    write_text(path, out.str());
}

PretrainOutcome pretrain(const RunConfig& cfg) {
    cfg.validate();
    const Dataset dataset = Dataset::open(cfg.data_dir);
    const NormStats stats = load_stats(cfg.data_dir);
    if (dataset.meta().channels() != cfg.arch.channels) {
        throw std::invalid_argument("dataset has " + std::to_string(dataset.meta().channels()) +
                                    " channels, model expects " + std::to_string(cfg.arch.channels));
    }
    const std::filesystem::path out = cfg.out_dir;
    if (!out.empty()) {
        std::filesystem::create_directories(out);
        write_json(out / "config.json", nlohmann::json(cfg));
    }
    auto source = open_source(cfg, dataset, stats, 1, streams::kData);

    StepCallback periodic;
    if (!out.empty() && cfg.checkpoint_every > 0) {
        periodic = [&](int64_t done, const ModelParams& p) {
            if (done % cfg.checkpoint_every == 0 && done < cfg.max_steps) {
                char name[32];
                std::snprintf(name, sizeof(name), "step_%06lld", static_cast<long long>(done));
                save_run_checkpoint(p, cfg, out / name);
            }
        };
    }
    TrainResult r = train_single_step(cfg, *source, initial_params(cfg), periodic);

    PretrainOutcome o;
    o.params = std::move(r.params);
    o.log = std::move(r.log);
    o.persistence = std::move(r.persistence);
    o.diverged = r.diverged;
    o.diverged_reason = r.diverged_reason;
    o.stream_digest = r.stream_digest;
    o.checkpoint_digest = params_digest(o.params);
    if (!out.empty()) {
        o.checkpoint = out / (o.diverged ? "last_good" : "final");
        save_run_checkpoint(o.params, cfg, o.checkpoint);
        write_metrics_csv(out / "metrics.csv", thin_log(o.log, cfg.log_every));
        write_persistence_csv(out / "persistence.csv", o.persistence);
        write_json(out / "summary.json", nlohmann::json{{"steps", o.log.size()},
                                                        {"diverged", o.diverged},
                                                        {"diverged_reason", o.diverged_reason},
                                                        {"stream_digest", o.stream_digest},
                                                        {"checkpoint", o.checkpoint.filename().string()},
                                                        {"checkpoint_digest", o.checkpoint_digest}});
    }
    return o;
}

}  // namespace fcx
