#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "fcx/sampler/sampler.hpp"
#include "fcx/shardnet/socket.hpp"

namespace fcx::net {

/// Serves training examples over the frame protocol.
///
/// Each connection runs in its own thread: HELLO is checked against the
/// dataset digest, then every SAMPLE_REQ is answered with `count` SAMPLE
/// frames (example counters counter_base, counter_base+1, ...) and DONE.
class WorkerServer {
public:
    WorkerServer(const Dataset& dataset, NormStats stats, CropSpec crop, TimeRange range);
    ~WorkerServer();
    WorkerServer(const WorkerServer&) = delete;
    WorkerServer& operator=(const WorkerServer&) = delete;

    /// Binds and starts accepting in a background thread; returns the port.
    uint16_t start(const Endpoint& listen);
    /// Blocks until stop() or kill() is called from elsewhere.
    void wait();
    /// Stops accepting, closes every session and joins all threads.
    void stop();
    /// Simulated crash: every socket is dropped mid-stream without DONE or ERR.
    void kill();
    /// After `n` SAMPLE frames in total the server kills itself. Negative disables.
    void fail_after(int64_t n) { fail_after_ = n; }

    int64_t samples_sent() const { return sent_; }

private:
    void accept_loop();
    void session(int fd);
    void drop_all();

    const Dataset& dataset_;
    NormStats stats_;
    CropSpec crop_;
    TimeRange range_;
    Socket listener_;
    std::thread acceptor_;
    std::mutex mu_;
    std::vector<std::thread> sessions_;
    std::vector<int> session_fds_;
    std::atomic<bool> stopping_{false};
    std::atomic<int64_t> sent_{0};
    std::atomic<int64_t> fail_after_{-1};
};

/// Opens the dataset under `dataset_dir`, loads its training statistics and
/// serves its training split until the process is terminated. `crop_h` or
/// `crop_w` of 0 selects the full grid.
void worker_serve(const std::filesystem::path& dataset_dir, const Endpoint& listen, int64_t crop_h, int64_t crop_w,
                  std::function<void(uint16_t port)> on_ready = {});

}  // namespace fcx::net
