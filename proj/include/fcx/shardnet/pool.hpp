#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "fcx/sampler/sampler.hpp"
#include "fcx/shardnet/socket.hpp"

namespace fcx::net {

struct PoolOptions {
    int64_t prefetch_batches = 4;
    int64_t request_size = 2;  // examples per SAMPLE_REQ
    std::chrono::milliseconds timeout{30000};
};

/// Example source backed by remote workers.
///
/// Example counters are handed out in small requests to whichever worker
/// is free; batches are assembled strictly in counter order, so the stream
/// is identical to LocalSource whatever the number, speed or failure of
/// workers. Counters a dead worker did not deliver are reassigned.
class WorkerPool final : public ExampleSource {
public:
    WorkerPool(const std::vector<Endpoint>& workers, std::string dataset_digest, int64_t horizon, uint64_t seed,
               uint64_t stream_id, uint64_t first_counter = 0, PoolOptions options = {});
    ~WorkerPool() override;
    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    /// Throws std::runtime_error if an example does not arrive within the
    /// timeout (all workers dead or stalled).
    ExampleBatch next_batch(int64_t batch_size) override;

    int64_t live_workers() const;
    /// Counters reassigned after a worker failure.
    int64_t reassigned() const;

private:
    struct Chunk {
        uint64_t base;
        int64_t count;
    };
    void run(size_t index);
    bool take_chunk(Chunk& out);

    std::string digest_;
    int64_t horizon_;
    uint64_t seed_;
    uint64_t stream_id_;
    PoolOptions opts_;

    mutable std::mutex mu_;
    std::condition_variable work_cv_;   // workers wait for assignable counters
    std::condition_variable ready_cv_;  // consumer waits for examples
    uint64_t next_consume_;
    uint64_t next_assign_;
    uint64_t window_;
    std::deque<Chunk> requeued_;
    std::map<uint64_t, TrainExample> ready_;
    int64_t live_ = 0;
    int64_t reassigned_ = 0;
    bool stop_ = false;
    std::string last_error_;

    std::vector<Socket> sockets_;
    std::vector<std::thread> threads_;
};

}  // namespace fcx::net
