#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>

#include "fcx/ablate/ablate.hpp"
#include "fcx/core/checkpoint.hpp"
#include "fcx/core/io.hpp"
#include "fcx/evalrep/evalrep.hpp"
#include "fcx/finetune/finetune.hpp"
#include "fcx/shardnet/worker.hpp"
#include "fcx/train/gradcheck.hpp"
#include "fcx/train/pretrain.hpp"

using namespace fcx;

namespace {

/// Flags every command accepts.
struct Common {
    std::optional<uint64_t> seed;
    std::string out;
    std::string config;
};

void add_common(CLI::App* cmd, Common& c, const std::string& config_help) {
    cmd->add_option("--seed", c.seed, "Seed override");
    cmd->add_option("--out", c.out, "Output path");
    cmd->add_option("--config", c.config, config_help)->check(CLI::ExistingFile);
}

void echo(const std::string& what, const nlohmann::json& j) {
    std::cout << what << ": " << j.dump() << std::endl;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    size_t start = 0;
    while (start <= s.size()) {
        const size_t comma = s.find(',', start);
        const std::string item = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!item.empty()) out.push_back(item);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

/// User-supplied JSON; a syntax error is a usage error, not an I/O failure.
nlohmann::json read_config(const std::string& path) { return nlohmann::json::parse(read_text(path)); }

RunConfig load_run_config(const Common& c) {
    RunConfig cfg;
    if (!c.config.empty()) cfg = read_config(c.config).get<RunConfig>();
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.out_dir = c.out;
    return cfg;
}

/// Thrown for a command-line mistake detected after parsing.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spectral transformer forecasting lab: data, training, evaluation and ablations"};
    app.require_subcommand(1);
    app.fallthrough(false);

    // gen-data
    Common gen_c;
    DatasetMeta gen_meta;
    std::optional<int64_t> gen_h, gen_w, gen_t, gen_modes, gen_channels;
    std::optional<double> gen_amp, gen_kappa;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic advection dataset");
    add_common(gen, gen_c, "Dataset meta JSON");
    gen->add_option("--height", gen_h, "Grid rows");
    gen->add_option("--width", gen_w, "Grid columns");
    gen->add_option("--timesteps", gen_t, "Frames");
    gen->add_option("--channels", gen_channels, "Number of tracer channels");
    gen->add_option("--modes", gen_modes, "Stream function modes");
    gen->add_option("--amplitude", gen_amp, "Maximum speed in cells per step");
    gen->add_option("--diffusion", gen_kappa, "Diffusion coefficient");

    // stats
    Common stats_c;
    std::string stats_data;
    auto* stats = app.add_subcommand("stats", "Recompute per-channel statistics of a dataset's training split");
    add_common(stats, stats_c, "Run config JSON (supplies data_dir)");
    stats->add_option("--data", stats_data, "Dataset directory");

    // worker
    Common worker_c;
    std::string worker_data, worker_listen = "127.0.0.1:0";
    int64_t worker_crop_h = 0, worker_crop_w = 0;
    auto* worker = app.add_subcommand("worker", "Serve training examples over TCP");
    add_common(worker, worker_c, "Run config JSON (supplies data_dir and crop)");
    worker->add_option("--data", worker_data, "Dataset directory");
    worker->add_option("--listen", worker_listen, "HOST:PORT; port 0 picks a free port");
    worker->add_option("--crop-h", worker_crop_h, "Crop rows (0: full grid)");
    worker->add_option("--crop-w", worker_crop_w, "Crop columns (0: full grid)");

    // pretrain
    Common pre_c;
    std::string pre_workers, pre_data;
    std::optional<int64_t> pre_steps;
    auto* pre = app.add_subcommand("pretrain", "Single-step pretraining");
    add_common(pre, pre_c, "Run config JSON");
    pre->add_option("--workers", pre_workers, "Comma-separated HOST:PORT list");
    pre->add_option("--data", pre_data, "Dataset directory");
    pre->add_option("--max-steps", pre_steps, "Optimizer steps");

    // finetune
    Common ft_c;
    std::string ft_init, ft_workers, ft_data;
    std::optional<int64_t> ft_depth, ft_per;
    auto* ft = app.add_subcommand("finetune", "Multi-step curriculum fine-tuning from a pretrained checkpoint");
    add_common(ft, ft_c, "Run config JSON");
    ft->add_option("--init", ft_init, "Pretrained checkpoint directory")->required()->check(CLI::ExistingDirectory);
    ft->add_option("--max-steps", ft_depth, "Maximum prediction steps of the curriculum");
    ft->add_option("--steps-per-increment", ft_per, "Optimizer steps per curriculum increment");
    ft->add_option("--workers", ft_workers, "Comma-separated HOST:PORT list");
    ft->add_option("--data", ft_data, "Dataset directory");

    // eval
    Common ev_c;
    std::string ev_ckpt, ev_data, ev_split = "test";
    int64_t ev_k = 8, ev_ics = 32;
    bool ev_persistence = false;
    auto* ev = app.add_subcommand("eval", "Rollout RMSE report on the full grid");
    add_common(ev, ev_c, "Run config JSON (supplies data_dir)");
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint directory")->check(CLI::ExistingDirectory);
    ev->add_option("--data", ev_data, "Dataset directory");
    ev->add_option("--rollout", ev_k, "Rollout steps")->check(CLI::PositiveNumber);
    ev->add_option("--ics", ev_ics, "Initial conditions")->check(CLI::PositiveNumber);
    ev->add_option("--split", ev_split, "test or train")->check(CLI::IsMember({"test", "train"}));
    ev->add_flag("--persistence", ev_persistence, "Score the persistence forecast instead of a checkpoint");

    // gradcheck
    Common gc_c;
    GradCheckOptions gc_opts;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check on a tiny model");
    add_common(gc, gc_c, "Architecture JSON for the tiny model");
    gc->add_option("--tol", gc_opts.tol, "Relative error tolerance");
    gc->add_option("--samples", gc_opts.samples_per_group, "Coordinates per parameter group");

    // ablate
    Common ab_c;
    std::string ab_spec;
    auto* ab = app.add_subcommand("ablate", "Paired-seed ablation of one architecture or curriculum axis");
    add_common(ab, ab_c, "Ablation spec JSON (same as --spec)");
    ab->add_option("--spec", ab_spec, "Ablation spec JSON")->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (gen->parsed()) {
            if (gen_c.out.empty()) throw UsageError("gen-data needs --out");
            DatasetMeta meta;
            if (!gen_c.config.empty()) meta = read_config(gen_c.config).get<DatasetMeta>();
            if (gen_c.seed) meta.seed = *gen_c.seed;
            if (gen_h) meta.height = *gen_h;
            if (gen_w) meta.width = *gen_w;
            if (gen_t) meta.timesteps = *gen_t;
            if (gen_modes) meta.n_modes = *gen_modes;
            if (gen_amp) meta.amplitude = *gen_amp;
            if (gen_kappa) meta.diffusion = *gen_kappa;
            if (gen_channels) {
                meta.channel_names.clear();
                for (int64_t c = 0; c < *gen_channels; ++c) meta.channel_names.push_back("tracer" + std::to_string(c));
            }
            meta.validate();
            echo("config", meta);
            const auto m = generate_dataset(meta, gen_c.out);
            std::cout << "dataset " << gen_c.out << " frames " << m.frames << " digest " << m.digest << std::endl;
        } else if (stats->parsed()) {
            std::string dir = stats_data;
            if (dir.empty() && !stats_c.config.empty()) dir = read_config(stats_c.config).get<RunConfig>().data_dir;
            if (dir.empty()) throw UsageError("stats needs --data");
            const Dataset ds = Dataset::open(dir);
            const NormStats s = compute_stats(ds, ds.meta().train_range());
            const nlohmann::json j = s;
            if (!stats_c.out.empty()) write_json(stats_c.out, j);
            std::cout << j.dump(2) << std::endl;
        } else if (worker->parsed()) {
            std::string dir = worker_data;
            if (!worker_c.config.empty()) {
                const RunConfig cfg = read_config(worker_c.config).get<RunConfig>();
                if (dir.empty()) dir = cfg.data_dir;
                if (worker_crop_h == 0) worker_crop_h = cfg.crop_h == 0 ? cfg.arch.grid_h : cfg.crop_h;
                if (worker_crop_w == 0) worker_crop_w = cfg.crop_w == 0 ? cfg.arch.grid_w : cfg.crop_w;
            }
            if (dir.empty()) throw UsageError("worker needs --data");
            const net::Endpoint ep = net::parse_endpoint(worker_listen);
            std::signal(SIGPIPE, SIG_IGN);
            net::worker_serve(dir, ep, worker_crop_h, worker_crop_w, [&](uint16_t port) {
                std::cout << "listening on " << ep.host << ":" << port << std::endl;
            });
        } else if (pre->parsed()) {
            RunConfig cfg = load_run_config(pre_c);
            if (!pre_data.empty()) cfg.data_dir = pre_data;
            if (!pre_workers.empty()) cfg.workers = split_list(pre_workers);
            if (pre_steps) cfg.max_steps = *pre_steps;
            if (cfg.out_dir.empty()) throw UsageError("pretrain needs --out or out_dir in the config");
            cfg.validate();
            echo("config", cfg);
            const PretrainOutcome o = pretrain(cfg);
            std::cout << "steps " << o.log.size() << " final_loss " << o.final_loss() << " checkpoint "
                      << o.checkpoint.string() << " digest " << o.checkpoint_digest << std::endl;
            if (o.diverged) {
                std::cerr << "training diverged: " << o.diverged_reason << "; last good parameters kept in "
                          << o.checkpoint.string() << "\n";
                return 2;
            }
        } else if (ft->parsed()) {
            RunConfig cfg = load_run_config(ft_c);
            if (ft_c.config.empty()) {
                // Without a config the architecture comes from the checkpoint.
                cfg.arch = load_checkpoint(ft_init).arch;
            }
            if (!ft_data.empty()) cfg.data_dir = ft_data;
            if (!ft_workers.empty()) cfg.workers = split_list(ft_workers);
            if (ft_depth) cfg.curriculum.max_time_steps = *ft_depth;
            if (ft_per) cfg.curriculum.steps_per_increment = *ft_per;
            if (cfg.out_dir.empty()) throw UsageError("finetune needs --out or out_dir in the config");
            cfg.validate();
            echo("config", cfg);
            const FinetuneOutcome o = finetune(cfg, ft_init);
            std::cout << "steps " << o.result.log.size() << " increments " << o.result.increments.size()
                      << " checkpoint " << o.checkpoint.string() << " digest " << o.checkpoint_digest << std::endl;
            if (o.result.diverged) {
                std::cerr << "fine-tuning diverged: " << o.result.diverged_reason << "\n";
                return 2;
            }
        } else if (ev->parsed()) {
            std::string dir = ev_data;
            if (dir.empty() && !ev_c.config.empty()) dir = read_config(ev_c.config).get<RunConfig>().data_dir;
            if (dir.empty()) throw UsageError("eval needs --data");
            if (ev_ckpt.empty() && !ev_persistence) throw UsageError("eval needs --ckpt or --persistence");
            if (ev_c.out.empty()) throw UsageError("eval needs --out");
            echo("config", {{"ckpt", ev_ckpt},
                            {"data", dir},
                            {"rollout", ev_k},
                            {"ics", ev_ics},
                            {"split", ev_split},
                            {"persistence", ev_persistence},
                            {"out", ev_c.out}});
            const Dataset ds = Dataset::open(dir);
            const NormStats s = load_stats(dir);
            const TimeRange split = ev_split == "test" ? ds.meta().test_range() : ds.meta().train_range();
            const RolloutReport rep = ev_persistence ? persistence_report(ds, s, split, ev_k, ev_ics)
                                                     : evaluate_rollout(load_checkpoint(ev_ckpt), ds, s, split, ev_k, ev_ics);
            write_text(ev_c.out, rep.to_csv());
            for (int64_t k = 1; k <= ev_k; ++k) std::printf("step %lld avg_rmse %.6g\n", static_cast<long long>(k), rep.average(k));
        } else if (gc->parsed()) {
            if (!gc_c.config.empty()) gc_opts.arch = read_config(gc_c.config).get<ArchConfig>();
            if (gc_c.seed) gc_opts.seed = *gc_c.seed;
            const GradCheckReport r = grad_check(gc_opts);
            for (const auto& g : r.groups) {
                std::printf("%-28s checked %3lld max_error %.3e %s\n", g.name.c_str(), static_cast<long long>(g.checked),
                            g.max_error, g.pass ? "ok" : "FAIL");
            }
            std::printf("gradcheck %s at tol %g\n", r.pass ? "PASS" : "FAIL", r.tol);
            if (!gc_c.out.empty()) write_json(gc_c.out, to_json_report(r));
            return r.pass ? 0 : 2;
        } else if (ab->parsed()) {
            const std::string path = !ab_spec.empty() ? ab_spec : ab_c.config;
            if (path.empty()) throw UsageError("ablate needs --spec");
            AblationSpec spec = read_config(path).get<AblationSpec>();
            if (!ab_c.out.empty()) spec.out_dir = ab_c.out;
            if (ab_c.seed) spec.seeds = {*ab_c.seed};
            if (spec.out_dir.empty()) throw UsageError("ablate needs --out or out_dir in the spec");
            spec.validate();
            echo("config", spec);
            const AblationResult r = run_ablation(spec);
            std::cout << r.verdicts.dump(2) << std::endl;
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed JSON: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failed: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
