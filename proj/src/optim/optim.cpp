#include "fcx/optim/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fcx {

template <typename T>
Lamb<T>::Lamb(const ParamSet<T>& like, LambConfig cfg) : cfg_(cfg), m_(like.zeros_like()), v_(like.zeros_like()) {}

template <typename T>
void Lamb<T>::step(ParamSet<T>& params, const ParamSet<T>& grads, double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (params.count() != m_.count() || grads.count() != m_.count()) {
        throw std::invalid_argument("optimizer state does not match parameters");
    }
    for (size_t k = 0; k < grads.count(); ++k) {
        if (grads[k].value.shape() != params[k].value.shape() || params[k].value.shape() != m_[k].value.shape()) {
            throw std::invalid_argument("gradient shape mismatch for " + params[k].name);
        }
        if (!grads[k].value.all_finite()) throw std::invalid_argument("non-finite gradient for parameter " + grads[k].name);
    }

    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    trust_.assign(params.count(), 1.0);
    std::vector<double> r;
    for (size_t k = 0; k < params.count(); ++k) {
        auto& w = params[k].value.vec();
        const auto& g = grads[k].value.vec();
        auto& m = m_[k].value.vec();
        auto& v = v_[k].value.vec();
        r.resize(w.size());
        double w_norm = 0.0, r_norm = 0.0;
        for (size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
            const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double wi = w[i];
            r[i] = (mi / c1) / (std::sqrt(vi / c2) + cfg_.eps) + cfg_.weight_decay * wi;
            w_norm += wi * wi;
            r_norm += r[i] * r[i];
        }
        w_norm = std::sqrt(w_norm);
        r_norm = std::sqrt(r_norm);
        const double trust = (w_norm > 0.0 && r_norm > 0.0) ? w_norm / r_norm : 1.0;
        trust_[k] = trust;
        for (size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * trust * r[i]);
    }
}

template class Lamb<float>;
template class Lamb<double>;

double cosine_lr(int64_t t, const LrSchedule& sched) {
    if (sched.total_steps < 1) throw std::invalid_argument("schedule needs total_steps >= 1");
    if (t < 0) throw std::invalid_argument("step must be non-negative");
    if (t >= sched.total_steps) return sched.lr_final;
    const double frac = static_cast<double>(t) / static_cast<double>(sched.total_steps);
    return sched.lr_final + 0.5 * (sched.lr_init - sched.lr_final) * (1.0 + std::cos(std::numbers::pi * frac));
}

void BatchSchedule::validate() const {
    if (entries.empty()) throw std::invalid_argument("batch schedule is empty");
    if (entries.front().first != 0) throw std::invalid_argument("batch schedule must start at step 0");
    for (size_t k = 0; k < entries.size(); ++k) {
        if (entries[k].second < 1) throw std::invalid_argument("batch sizes must be >= 1");
        if (k && entries[k].first <= entries[k - 1].first) throw std::invalid_argument("batch schedule must be sorted");
    }
}

int64_t batch_size_at(int64_t step, const BatchSchedule& schedule) {
    schedule.validate();
    int64_t size = schedule.entries.front().second;
    for (const auto& [start, n] : schedule.entries) {
        if (start <= step) size = n;
    }
    return size;
}

void to_json(nlohmann::json& j, const LambConfig& c) {
    j = {{"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}, {"weight_decay", c.weight_decay}};
}

void from_json(const nlohmann::json& j, LambConfig& c) {
    LambConfig d;
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.eps = j.value("eps", d.eps);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
}

void to_json(nlohmann::json& j, const LrSchedule& s) {
    j = {{"lr_init", s.lr_init}, {"lr_final", s.lr_final}, {"total_steps", s.total_steps}};
}

void from_json(const nlohmann::json& j, LrSchedule& s) {
    LrSchedule d;
    s.lr_init = j.value("lr_init", d.lr_init);
    s.lr_final = j.value("lr_final", d.lr_final);
    s.total_steps = j.value("total_steps", d.total_steps);
}

void to_json(nlohmann::json& j, const BatchSchedule& s) {
    j = nlohmann::json::array();
    for (const auto& [start, n] : s.entries) j.push_back({start, n});
}

void from_json(const nlohmann::json& j, BatchSchedule& s) {
    s.entries.clear();
    for (const auto& e : j) s.entries.emplace_back(e.at(0).get<int64_t>(), e.at(1).get<int64_t>());
}

}  // namespace fcx
