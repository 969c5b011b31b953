#pragma once

#include <array>
#include <cstdint>

namespace fcx {

/// Philox4x32-10 block function: 128-bit counter, 64-bit key.
std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> counter, std::array<uint32_t, 2> key);

/// Counter-based random stream.
///
/// Draw k of stream (seed, stream_id) is a pure function of
/// (seed, stream_id, k), so streams can be split across processes and
/// replayed from any position. Each draw advances the counter by one.
class RngStream {
public:
    RngStream(uint64_t seed, uint64_t stream_id, uint64_t counter = 0)
        : seed_(seed), stream_id_(stream_id), counter_(counter) {}

    uint64_t seed() const { return seed_; }
    uint64_t stream_id() const { return stream_id_; }
    uint64_t counter() const { return counter_; }

    uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double next_uniform();
    /// Uniform integer in [0, n). n must be positive.
    uint64_t next_below(uint64_t n);
    /// Standard normal via Box-Muller; consumes two draws.
    double next_normal();

    bool operator==(const RngStream&) const = default;

private:
    uint64_t seed_;
    uint64_t stream_id_;
    uint64_t counter_;
};

inline RngStream rng_stream(uint64_t seed, uint64_t stream_id) { return RngStream(seed, stream_id); }

/// Well-known stream ids so that independent consumers of one run seed never overlap.
namespace streams {
inline constexpr uint64_t kData = 0;
inline constexpr uint64_t kInit = 1;
inline constexpr uint64_t kCurriculum = 2;
inline constexpr uint64_t kFinetuneData = 3;
inline constexpr uint64_t kDatasetVelocity = 10;
inline constexpr uint64_t kDatasetInitial = 11;
inline constexpr uint64_t kGradCheck = 20;
inline constexpr uint64_t kEval = 30;
}  // namespace streams

}  // namespace fcx
