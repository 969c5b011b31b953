#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "fcx/core/arch.hpp"

namespace fcx {

/// H=W=8, p=2, D=8, one block, two channels.
ArchConfig tiny_arch();

struct GradCheckOptions {
    ArchConfig arch = tiny_arch();
    double tol = 1e-3;
    double step = 1e-5;
    /// Below this magnitude (both analytic and numeric) the error is absolute.
    double absolute_floor = 1e-7;
    int64_t samples_per_group = 32;
    int64_t batch = 1;
    uint64_t seed = 0;
    /// Scale of the normal perturbation added to the initialization, so
    /// that heads and flows are non-trivial.
    double perturbation = 0.3;
    /// Sets the target to the model's own prediction, zeroing every gradient.
    bool target_is_prediction = false;
    /// Multiplies the analytic gradient of this group before comparison.
    std::string corrupt_group;
    double corrupt_factor = 1.0;
};

struct GradCheckGroup {
    std::string name;
    int64_t checked = 0;
    int64_t absolute = 0;      // coordinates scored with absolute error
    int64_t nonsmooth = 0;     // coordinates skipped on a kink
    double max_error = 0.0;    // relative, or absolute below the floor
    double max_abs_diff = 0.0;
    bool pass = false;
};

/// Parameter groups follow the checkpoint layout; two extra groups,
/// `warp.input` and `warp.flow`, check the warp composition directly.
struct GradCheckReport {
    double tol = 0.0;
    std::vector<GradCheckGroup> groups;
    bool pass = false;
    const GradCheckGroup& group(const std::string& name) const;
};

/// Compares analytic gradients of the training loss with central finite
/// differences, in double precision.
GradCheckReport grad_check(const GradCheckOptions& opts = {});

nlohmann::json to_json_report(const GradCheckReport& r);

}  // namespace fcx
