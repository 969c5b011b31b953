#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fcx/core/params.hpp"
#include "fcx/synthdata/synthdata.hpp"

namespace fcx {

/// Per-channel RMSE in physical units of two standardized (B, C, H, W)
/// tensors: both are un-standardized, then the squared error is averaged
/// over batch and grid.
std::vector<double> rmse(const Tensor<float>& pred, const Tensor<float>& truth, const NormStats& stats);

inline const std::string kAverageChannel = "__avg__";

struct ReportRow {
    int64_t step = 0;
    std::string channel;
    double rmse = 0.0;
    int64_t n = 0;  // initial conditions
    bool operator==(const ReportRow&) const = default;
};

/// Rows ordered by step, then channel order, then one __avg__ row per step
/// holding the arithmetic mean of that step's channel rows.
struct RolloutReport {
    std::vector<std::string> channels;
    std::vector<ReportRow> rows;

    int64_t steps() const;
    double at(int64_t step, const std::string& channel) const;
    double average(int64_t step) const { return at(step, kAverageChannel); }
    /// Mean of the per-step averages over steps [from, to].
    double mean_average(int64_t from, int64_t to) const;

    std::string to_csv() const;
    static RolloutReport from_csv(const std::string& text);
    /// Builds a report from per-(step, channel) RMSE, adding average rows.
    static RolloutReport from_values(const std::vector<std::string>& channels,
                                     const std::vector<std::vector<double>>& per_step, int64_t n);
    bool operator==(const RolloutReport&) const = default;
};

/// `n` evenly spaced start frames in `split` that leave room for k_max
/// ground-truth steps. Throws when the split is too short.
std::vector<int64_t> initial_conditions(TimeRange split, int64_t k_max, int64_t n);

/// Rolls the model out k_max steps from each initial condition on the full
/// grid and scores every step against the trajectory. Squared errors are
/// pooled over initial conditions before the square root.
RolloutReport evaluate_rollout(const ModelParams& model, const Dataset& dataset, const NormStats& stats,
                               TimeRange split, int64_t k_max, int64_t n_initial_conditions = 32);

/// The same scoring for the forecast that repeats the initial state.
RolloutReport persistence_report(const Dataset& dataset, const NormStats& stats, TimeRange split, int64_t k_max,
                                 int64_t n_initial_conditions = 32);

struct CompareOptions {
    int64_t gain_from = 2;        // multi-step window, inclusive
    int64_t gain_to = 0;          // 0 selects the last step
    double forgetting_bound = 0.10;
};

/// Candidate `b` against baseline `a`.
struct Comparison {
    std::vector<ReportRow> deltas;           // b - a for every row
    std::map<int64_t, bool> gain_at_step;    // b's average strictly below a's
    bool multi_step_gain = false;            // window mean of b strictly below a's
    double single_step_ratio = 1.0;          // b / a average at step 1
    bool forgetting = false;                 // single_step_ratio exceeds 1 + bound
};

Comparison compare_reports(const RolloutReport& a, const RolloutReport& b, const CompareOptions& opts = {});

}  // namespace fcx
