#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fcx/core/params.hpp"

namespace fcx {

struct LambConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-6;
    double weight_decay = 0.0;
    bool operator==(const LambConfig&) const = default;
};

/// Layer-wise adaptive moments optimizer (LAMB) with bias correction.
///
/// Per tensor w: m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2,
/// r = m_hat / (sqrt(v_hat) + eps) + wd w, and
/// w <- w - lr * (|w| / |r|) * r, with the trust ratio taken as 1 when
/// either norm is zero.
template <typename T>
class Lamb {
public:
    Lamb(const ParamSet<T>& like, LambConfig cfg = {});

    /// Throws std::invalid_argument naming the first parameter with a
    /// non-finite gradient; state and params are untouched in that case.
    void step(ParamSet<T>& params, const ParamSet<T>& grads, double lr);

    int64_t steps() const { return t_; }
    const ParamSet<T>& first_moment() const { return m_; }
    const ParamSet<T>& second_moment() const { return v_; }
    const LambConfig& config() const { return cfg_; }
    /// Trust ratios applied in the last step, in parameter order.
    const std::vector<double>& last_trust() const { return trust_; }

private:
    LambConfig cfg_;
    ParamSet<T> m_, v_;
    int64_t t_ = 0;
    std::vector<double> trust_;
};

extern template class Lamb<float>;
extern template class Lamb<double>;

struct LrSchedule {
    double lr_init = 3e-3;
    double lr_final = 3e-4;
    int64_t total_steps = 1;
    bool operator==(const LrSchedule&) const = default;
};

/// lr_final + (lr_init - lr_final) (1 + cos(pi t / T)) / 2; t > T clamps to lr_final.
double cosine_lr(int64_t t, const LrSchedule& sched);

/// Step-indexed batch sizes: entries of (start_step, size), sorted,
/// first start at step 0.
struct BatchSchedule {
    std::vector<std::pair<int64_t, int64_t>> entries = {{0, 4}, {12000, 8}};
    void validate() const;
    bool operator==(const BatchSchedule&) const = default;
};

int64_t batch_size_at(int64_t step, const BatchSchedule& schedule);

void to_json(nlohmann::json& j, const LambConfig& c);
void from_json(const nlohmann::json& j, LambConfig& c);
void to_json(nlohmann::json& j, const LrSchedule& s);
void from_json(const nlohmann::json& j, LrSchedule& s);
void to_json(nlohmann::json& j, const BatchSchedule& s);
void from_json(const nlohmann::json& j, BatchSchedule& s);

}  // namespace fcx
