#include "fcx/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fcx/afno/model.hpp"
#include "fcx/core/checkpoint.hpp"
#include "fcx/optim/optim.hpp"
#include "fcx/train/loss.hpp"

namespace fcx {

void hash_example_metas(Sha256& hasher, const std::vector<ExampleMeta>& metas) {
    for (const auto& m : metas) {
        const uint64_t words[] = {static_cast<uint64_t>(m.t0), static_cast<uint64_t>(m.origin_i),
                                  static_cast<uint64_t>(m.origin_j), m.seed, m.stream_id, m.counter};
        hasher.update(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(words), sizeof(words)));
    }
}

TrainResult train_single_step(const RunConfig& cfg, ExampleSource& source, ModelParams init,
                              const StepCallback& after_step) {
    check_layout(cfg.arch, init.params);
    if (!(init.arch == cfg.arch)) throw std::invalid_argument("initial parameters were built for another arch");

    TrainResult result;
    result.params = std::move(init);
    const AfnoNet<float> net(cfg.arch);
    Lamb<float> opt(result.params.params, cfg.optimizer);
    ParamSet<float> grads = result.params.params.zeros_like();
    const LrSchedule sched = cfg.lr_schedule();
    Sha256 stream;
    const auto start = std::chrono::steady_clock::now();

    for (int64_t step = 0; step < cfg.max_steps; ++step) {
        const int64_t bs = batch_size_at(step, cfg.batch);
        const double lr = cosine_lr(step, sched);
        const ExampleBatch batch = source.next_batch(bs);
        hash_example_metas(stream, batch.metas);
        const Tensor<float> target = batch.target_step(1);

        for (auto& g : grads) std::fill(g.value.vec().begin(), g.value.vec().end(), 0.0f);
        const double loss = training_loss(net, result.params.params, batch.inputs, target, &grads);
        if (!std::isfinite(loss)) {
            result.diverged = true;
            result.diverged_reason = "non-finite loss at step " + std::to_string(step);
            break;
        }
        ParamSet<float> before = result.params.params;
        try {
            opt.step(result.params.params, grads, lr);
        } catch (const std::invalid_argument& e) {
            result.diverged = true;
            result.diverged_reason = "step " + std::to_string(step) + ": " + e.what();
            break;
        }
        if (!result.params.all_finite()) {
            result.params.params = std::move(before);
            result.diverged = true;
            result.diverged_reason = "non-finite parameters after step " + std::to_string(step);
            break;
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.log.push_back({step, lr, bs, loss, secs});
        result.persistence.push_back(mse(batch.inputs, target));
        if (after_step) after_step(step + 1, result.params);
    }
    result.stream_digest = stream.hex_digest();
    return result;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepLog>& log) {
    std::ostringstream out;
    out << "step,lr,batch_size,loss,seconds\n";
    char buf[160];
    for (const auto& r : log) {
        std::snprintf(buf, sizeof(buf), "%lld,%.17g,%lld,%.17g,%.6f\n", static_cast<long long>(r.step), r.lr,
                      static_cast<long long>(r.batch_size), r.loss, r.seconds);
        out << buf;
    }
    write_text(path, out.str());
}

std::vector<StepLog> read_metrics_csv(const std::filesystem::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line) || line != "step,lr,batch_size,loss,seconds") {
        throw IoError("bad metrics header in " + path.string());
    }
    std::vector<StepLog> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        StepLog r;
        long long step = 0, bs = 0;
        if (std::sscanf(line.c_str(), "%lld,%lf,%lld,%lf,%lf", &step, &r.lr, &bs, &r.loss, &r.seconds) != 5) {
            throw IoError("bad metrics row '" + line + "' in " + path.string());
        }
        r.step = step;
        r.batch_size = bs;
        rows.push_back(r);
    }
    return rows;
}

std::string save_run_checkpoint(const ModelParams& params, const RunConfig& cfg, const std::filesystem::path& dir) {
    std::string digest = save_checkpoint(params, dir);
    write_json(dir / "run.json", nlohmann::json(cfg));
    return digest;
}

}  // namespace fcx
