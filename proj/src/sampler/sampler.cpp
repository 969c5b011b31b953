#include "fcx/sampler/sampler.hpp"

#include <stdexcept>
#include <string>

namespace fcx {

void CropSpec::validate() const {
    if (full_h < 1 || full_w < 1) throw std::invalid_argument("crop: full grid must be positive");
    if (crop_h < 1 || crop_h > full_h || crop_w < 1 || crop_w > full_w) {
        throw std::invalid_argument("crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                                    " does not fit in " + std::to_string(full_h) + "x" + std::to_string(full_w));
    }
}

uint64_t count_examples(uint64_t n_years, uint64_t steps_per_day, uint64_t days_per_year, int64_t full_h,
                        int64_t full_w, int64_t crop_h, int64_t crop_w) {
    CropSpec{full_h, full_w, crop_h, crop_w}.validate();
    const uint64_t factors[] = {n_years, steps_per_day, days_per_year, static_cast<uint64_t>(full_h - crop_h + 1),
                                static_cast<uint64_t>(full_w - crop_w + 1)};
    uint64_t total = 1;
    for (uint64_t f : factors) {
        if (__builtin_mul_overflow(total, f, &total)) throw std::overflow_error("count_examples overflows 64 bits");
    }
    return total;
}

namespace {

void check_stats(const Tensor<float>& x, const NormStats& stats) {
    if (x.rank() < 3) throw std::invalid_argument("standardize expects (C, h, w) or (B, C, h, w)");
    const int64_t c = x.dim(x.rank() - 3);
    if (static_cast<int64_t>(stats.channels()) != c || stats.std.size() != stats.mean.size()) {
        throw std::invalid_argument("stats have " + std::to_string(stats.channels()) + " channels, tensor has " +
                                    std::to_string(c));
    }
}

template <typename F>
Tensor<float> per_channel(const Tensor<float>& x, const NormStats& stats, F f) {
    check_stats(x, stats);
    const size_t r = x.rank();
    const int64_t C = x.dim(r - 3);
    const int64_t hw = x.dim(r - 2) * x.dim(r - 1);
    const int64_t outer = x.size() / (C * hw);
    Tensor<float> out(x.shape());
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t c = 0; c < C; ++c) {
            const int64_t base = (o * C + c) * hw;
            const double m = stats.mean[static_cast<size_t>(c)], s = stats.std[static_cast<size_t>(c)];
            for (int64_t k = 0; k < hw; ++k) out[base + k] = static_cast<float>(f(static_cast<double>(x[base + k]), m, s));
        }
    }
    return out;
}

Tensor<float> crop_frame(const Tensor<float>& frame, const CropSpec& crop, int64_t oi, int64_t oj) {
    const int64_t C = frame.dim(0), W = frame.dim(2);
    Tensor<float> out({C, crop.crop_h, crop.crop_w});
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t i = 0; i < crop.crop_h; ++i) {
            const float* src = frame.ptr() + (c * frame.dim(1) + oi + i) * W + oj;
            float* dst = out.ptr() + (c * crop.crop_h + i) * crop.crop_w;
            std::copy(src, src + crop.crop_w, dst);
        }
    }
    return out;
}

}  // namespace

Tensor<float> standardize(const Tensor<float>& x, const NormStats& stats) {
    return per_channel(x, stats, [](double v, double m, double s) { return (v - m) / s; });
}

Tensor<float> unstandardize(const Tensor<float>& z, const NormStats& stats) {
    return per_channel(z, stats, [](double v, double m, double s) { return v * s + m; });
}

TrainExample extract_example(const Dataset& dataset, const NormStats& stats, const CropSpec& crop, int64_t horizon,
                             int64_t t0, int64_t origin_i, int64_t origin_j) {
    crop.validate();
    if (crop.full_h != dataset.meta().height || crop.full_w != dataset.meta().width) {
        throw std::invalid_argument("crop spec full grid does not match dataset");
    }
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    if (t0 < 0 || t0 + horizon >= dataset.frames()) throw std::out_of_range("example extends past the trajectory");
    if (origin_i < 0 || origin_i >= crop.origins_h() || origin_j < 0 || origin_j >= crop.origins_w()) {
        throw std::out_of_range("crop origin out of range");
    }
    TrainExample ex;
    ex.meta.t0 = t0;
    ex.meta.origin_i = origin_i;
    ex.meta.origin_j = origin_j;
    ex.input = standardize(crop_frame(dataset.frame(t0), crop, origin_i, origin_j), stats);
    for (int64_t k = 1; k <= horizon; ++k) {
        ex.targets.push_back(standardize(crop_frame(dataset.frame(t0 + k), crop, origin_i, origin_j), stats));
    }
    return ex;
}

TrainExample sample_example(RngStream rng, const Dataset& dataset, const NormStats& stats, const CropSpec& crop,
                            int64_t horizon, TimeRange range) {
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    if (range.begin < 0 || range.end > dataset.frames()) throw std::invalid_argument("time range outside dataset");
    const int64_t n_t0 = range.size() - horizon;
    if (n_t0 < 1) {
        throw std::invalid_argument("horizon " + std::to_string(horizon) + " exceeds trajectory of " +
                                    std::to_string(range.size()) + " frames");
    }
    crop.validate();
    const uint64_t start = rng.counter();
    const int64_t t0 = range.begin + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n_t0)));
    const int64_t oi = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(crop.origins_h())));
    const int64_t oj = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(crop.origins_w())));
    auto ex = extract_example(dataset, stats, crop, horizon, t0, oi, oj);
    ex.meta.seed = rng.seed();
    ex.meta.stream_id = rng.stream_id();
    ex.meta.counter = start / kDrawsPerExample;
    return ex;
}

TrainExample sample_at(const Dataset& dataset, const NormStats& stats, const CropSpec& crop, int64_t horizon,
                       TimeRange range, uint64_t seed, uint64_t stream_id, uint64_t counter) {
    return sample_example(example_rng(seed, stream_id, counter), dataset, stats, crop, horizon, range);
}

Tensor<float> ExampleBatch::target_step(int64_t k) const {
    const int64_t B = targets.dim(0), K = targets.dim(1);
    if (k < 1 || k > K) throw std::out_of_range("target step " + std::to_string(k) + " outside horizon");
    const int64_t per = targets.dim(2) * targets.dim(3) * targets.dim(4);
    Tensor<float> out({B, targets.dim(2), targets.dim(3), targets.dim(4)});
    for (int64_t b = 0; b < B; ++b) {
        const float* src = targets.ptr() + (b * K + (k - 1)) * per;
        std::copy(src, src + per, out.ptr() + b * per);
    }
    return out;
}

ExampleBatch assemble_batch(const std::vector<TrainExample>& examples) {
    if (examples.empty()) throw std::invalid_argument("cannot assemble an empty batch");
    const auto& s = examples.front().input.shape();
    const int64_t B = static_cast<int64_t>(examples.size());
    const int64_t K = static_cast<int64_t>(examples.front().targets.size());
    const int64_t per = shape_numel(s);
    ExampleBatch batch;
    batch.inputs = Tensor<float>({B, s[0], s[1], s[2]});
    batch.targets = Tensor<float>({B, K, s[0], s[1], s[2]});
    for (int64_t b = 0; b < B; ++b) {
        const auto& ex = examples[static_cast<size_t>(b)];
        if (ex.input.shape() != s || static_cast<int64_t>(ex.targets.size()) != K) {
            throw std::invalid_argument("examples in a batch must share shape and horizon");
        }
        std::copy(ex.input.ptr(), ex.input.ptr() + per, batch.inputs.ptr() + b * per);
        for (int64_t k = 0; k < K; ++k) {
            const auto& t = ex.targets[static_cast<size_t>(k)];
            std::copy(t.ptr(), t.ptr() + per, batch.targets.ptr() + (b * K + k) * per);
        }
        batch.metas.push_back(ex.meta);
    }
    return batch;
}

LocalSource::LocalSource(const Dataset& dataset, NormStats stats, CropSpec crop, int64_t horizon, TimeRange range,
                         uint64_t seed, uint64_t stream_id, uint64_t first_counter)
    : dataset_(dataset),
      stats_(std::move(stats)),
      crop_(crop),
      horizon_(horizon),
      range_(range),
      seed_(seed),
      stream_id_(stream_id),
      counter_(first_counter) {
    stats_.validate();
}

ExampleBatch LocalSource::next_batch(int64_t batch_size) {
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    std::vector<TrainExample> examples;
    for (int64_t b = 0; b < batch_size; ++b) {
        examples.push_back(sample_at(dataset_, stats_, crop_, horizon_, range_, seed_, stream_id_, counter_++));
    }
    return assemble_batch(examples);
}

}  // namespace fcx
