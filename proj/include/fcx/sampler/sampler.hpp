#pragma once

#include <cstdint>
#include <vector>

#include "fcx/core/rng.hpp"
#include "fcx/core/tensor.hpp"
#include "fcx/synthdata/synthdata.hpp"

namespace fcx {

struct CropSpec {
    int64_t full_h = 0;
    int64_t full_w = 0;
    int64_t crop_h = 0;
    int64_t crop_w = 0;

    static CropSpec full(int64_t h, int64_t w) { return {h, w, h, w}; }
    /// Number of admissible top-left origins; crops never wrap around.
    int64_t origins_h() const { return full_h - crop_h + 1; }
    int64_t origins_w() const { return full_w - crop_w + 1; }
    void validate() const;

    bool operator==(const CropSpec&) const = default;
};

/// Total number of distinct (time step, crop origin) training examples.
/// Throws std::overflow_error if the product does not fit in 64 bits.
uint64_t count_examples(uint64_t n_years, uint64_t steps_per_day, uint64_t days_per_year, int64_t full_h,
                        int64_t full_w, int64_t crop_h, int64_t crop_w);

struct ExampleMeta {
    int64_t t0 = 0;
    int64_t origin_i = 0;
    int64_t origin_j = 0;
    uint64_t seed = 0;
    uint64_t stream_id = 0;
    uint64_t counter = 0;  // example counter, not the raw RNG counter

    bool operator==(const ExampleMeta&) const = default;
};

/// Standardized input crop plus K consecutive future target crops.
struct TrainExample {
    Tensor<float> input;                // (C, h, w)
    std::vector<Tensor<float>> targets; // K x (C, h, w); targets[k] is frame t0 + k + 1
    ExampleMeta meta;
};

/// RNG draws reserved per example: example `n` of a stream reads raw
/// counters [n * kDrawsPerExample, (n + 1) * kDrawsPerExample).
inline constexpr uint64_t kDrawsPerExample = 16;

inline RngStream example_rng(uint64_t seed, uint64_t stream_id, uint64_t example_counter) {
    return RngStream(seed, stream_id, example_counter * kDrawsPerExample);
}

/// Draws t0 uniformly from [range.begin, range.end - K - 1] and a crop
/// origin uniformly over all top-left positions, then crops and
/// standardizes the input frame and K targets at that shared origin.
TrainExample sample_example(RngStream rng, const Dataset& dataset, const NormStats& stats, const CropSpec& crop,
                            int64_t horizon, TimeRange range);

/// sample_example at example counter `counter` of stream (seed, stream_id).
TrainExample sample_at(const Dataset& dataset, const NormStats& stats, const CropSpec& crop, int64_t horizon,
                       TimeRange range, uint64_t seed, uint64_t stream_id, uint64_t counter);

/// Crops and standardizes frames t0 .. t0+horizon at a fixed origin.
TrainExample extract_example(const Dataset& dataset, const NormStats& stats, const CropSpec& crop, int64_t horizon,
                             int64_t t0, int64_t origin_i, int64_t origin_j);

/// Per-channel (x - mean) / std. The channel axis is rank-3, so both
/// (C, h, w) and (B, C, h, w) tensors are accepted.
Tensor<float> standardize(const Tensor<float>& x, const NormStats& stats);
Tensor<float> unstandardize(const Tensor<float>& z, const NormStats& stats);

/// A batch of examples: inputs (B, C, h, w) and targets (B, K, C, h, w).
struct ExampleBatch {
    Tensor<float> inputs;
    Tensor<float> targets;
    std::vector<ExampleMeta> metas;

    int64_t horizon() const { return targets.dim(1); }
    /// Targets at future step k (1-based), shape (B, C, h, w).
    Tensor<float> target_step(int64_t k) const;
};

ExampleBatch assemble_batch(const std::vector<TrainExample>& examples);

/// Blocking source of training batches. Sample n of the source is always
/// the example at counter n, however the source is implemented.
class ExampleSource {
public:
    virtual ~ExampleSource() = default;
    virtual ExampleBatch next_batch(int64_t batch_size) = 0;
};

/// In-process sampler.
class LocalSource final : public ExampleSource {
public:
    LocalSource(const Dataset& dataset, NormStats stats, CropSpec crop, int64_t horizon, TimeRange range, uint64_t seed,
                uint64_t stream_id, uint64_t first_counter = 0);

    ExampleBatch next_batch(int64_t batch_size) override;
    uint64_t next_counter() const { return counter_; }

private:
    const Dataset& dataset_;
    NormStats stats_;
    CropSpec crop_;
    int64_t horizon_;
    TimeRange range_;
    uint64_t seed_;
    uint64_t stream_id_;
    uint64_t counter_;
};

}  // namespace fcx
