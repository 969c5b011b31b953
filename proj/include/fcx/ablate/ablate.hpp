#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fcx/train/run_config.hpp"

namespace fcx {

enum class AblationAxis { NormMode, Patch, Flow, FinetuneDepth };

std::string to_string(AblationAxis a);
AblationAxis parse_axis(const std::string& s);

/// Variants of one axis trained on paired seeds: within a seed every
/// variant consumes the same example stream.
struct AblationSpec {
    RunConfig base;
    AblationAxis axis = AblationAxis::NormMode;
    std::vector<std::string> variants;  // axis values, e.g. "pre", "4", "none", "2"
    std::vector<uint64_t> seeds = {0, 1, 2, 3, 4};
    int64_t budget = 1000;         // pretraining steps per run
    int64_t eval_steps = 1;        // rollout steps scored on the test split
    int64_t eval_ics = 32;
    int64_t final_window = 50;     // steps averaged into the final training loss
    std::string out_dir;

    void validate() const;
};

void to_json(nlohmann::json& j, const AblationSpec& s);
void from_json(const nlohmann::json& j, AblationSpec& s);

/// `base` with one axis value applied.
RunConfig apply_variant(const RunConfig& base, AblationAxis axis, const std::string& value);

struct AblationRun {
    std::string variant;
    uint64_t seed = 0;
    double final_loss = 0.0;  // +inf after divergence
    bool diverged = false;
    double eval_rmse = 0.0;   // mean average RMSE over steps 1..eval_steps; +inf after divergence
    std::string stream_digest;
    std::string checkpoint_digest;
};

struct AblationResult {
    AblationAxis axis = AblationAxis::NormMode;
    std::vector<std::string> variants;
    std::vector<uint64_t> seeds;
    std::vector<AblationRun> runs;  // seed-major, variants in spec order
    bool paired = false;            // stream digests agree within every seed
    nlohmann::json verdicts;

    const AblationRun& run(const std::string& variant, uint64_t seed) const;
    /// Seeds on which `better` has strictly lower eval RMSE than `worse`.
    int64_t rmse_wins(const std::string& better, const std::string& worse) const;
    /// Mean over seeds of eval_rmse(worse) - eval_rmse(better).
    double mean_reduction(const std::string& better, const std::string& worse) const;
    std::string to_csv() const;
};

/// Seeds required for a directional verdict: four of five, scaled.
int64_t required_wins(size_t seeds);

/// Directional verdicts of a finished ablation, keyed by claim.
nlohmann::json ablation_verdicts(const AblationResult& r);

/// Trains and evaluates every (seed, variant), computes verdicts for the
/// axis, and with a non-empty out_dir writes per-run directories,
/// results.csv and verdicts.json.
AblationResult run_ablation(const AblationSpec& spec);

/// The axis whose design variant lowers RMSE the most on average.
/// Each entry pairs a result with its (better, worse) variants.
struct AxisReduction {
    AblationAxis axis;
    std::string better;
    std::string worse;
    double reduction;
};
std::vector<AxisReduction> axis_reductions(const std::vector<AblationResult>& results);

}  // namespace fcx
