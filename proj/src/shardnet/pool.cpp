#include "fcx/shardnet/pool.hpp"

#include "fcx/core/io.hpp"
#include "fcx/shardnet/protocol.hpp"

namespace fcx::net {

WorkerPool::WorkerPool(const std::vector<Endpoint>& workers, std::string dataset_digest, int64_t horizon,
                       uint64_t seed, uint64_t stream_id, uint64_t first_counter, PoolOptions options)
    : digest_(std::move(dataset_digest)),
      horizon_(horizon),
      seed_(seed),
      stream_id_(stream_id),
      opts_(options),
      next_consume_(first_counter),
      next_assign_(first_counter),
      window_(0) {
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    if (opts_.prefetch_batches < 1 || opts_.request_size < 1) {
        throw std::invalid_argument("prefetch depth and request size must be positive");
    }
    if (workers.empty()) throw std::invalid_argument("worker pool needs at least one worker address");
    std::string failures;
    for (const auto& ep : workers) {
        try {
            Socket s = connect_to(ep, opts_.timeout);
            write_frame(s.fd(), make_hello({digest_, kProtocolVersion}));
            const Frame reply = read_frame(s.fd());
            if (reply.type == MsgType::Err) throw ProtocolError(parse_error(reply));
            if (reply.type != MsgType::HelloAck) throw ProtocolError("unexpected " + to_string(reply.type));
            sockets_.push_back(std::move(s));
        } catch (const std::exception& e) {
            failures += " " + ep.str() + " (" + e.what() + ")";
        }
    }
    if (sockets_.empty()) throw std::runtime_error("no worker accepted the handshake:" + failures);
    live_ = static_cast<int64_t>(sockets_.size());
    for (size_t i = 0; i < sockets_.size(); ++i) threads_.emplace_back([this, i] { run(i); });
}

WorkerPool::~WorkerPool() {
    {
        std::lock_guard lock(mu_);
        stop_ = true;
    }
    work_cv_.notify_all();
    for (auto& s : sockets_) s.shutdown();
    for (auto& t : threads_) t.join();
}

int64_t WorkerPool::live_workers() const {
    std::lock_guard lock(mu_);
    return live_;
}

int64_t WorkerPool::reassigned() const {
    std::lock_guard lock(mu_);
    return reassigned_;
}

bool WorkerPool::take_chunk(Chunk& out) {
    std::unique_lock lock(mu_);
    work_cv_.wait(lock, [&] { return stop_ || !requeued_.empty() || next_assign_ < next_consume_ + window_; });
    if (stop_) return false;
    if (!requeued_.empty()) {
        out = requeued_.front();
        requeued_.pop_front();
        return true;
    }
    const uint64_t room = next_consume_ + window_ - next_assign_;
    out = {next_assign_, static_cast<int64_t>(std::min<uint64_t>(room, static_cast<uint64_t>(opts_.request_size)))};
    next_assign_ += static_cast<uint64_t>(out.count);
    return true;
}

void WorkerPool::run(size_t index) {
    const int fd = sockets_[index].fd();
    Chunk chunk{0, 0};
    int64_t delivered = 0;
    try {
        while (take_chunk(chunk)) {
            delivered = 0;
            write_frame(fd, make_sample_req({chunk.count, horizon_, seed_, stream_id_, chunk.base}));
            for (int64_t i = 0; i < chunk.count; ++i) {
                const Frame f = read_frame(fd);
                if (f.type == MsgType::Err) throw ProtocolError("worker error: " + parse_error(f));
                if (f.type != MsgType::Sample) throw ProtocolError("expected SAMPLE, got " + to_string(f.type));
                DecodedSample s = decode_sample(f.payload);
                const uint64_t expect = chunk.base + static_cast<uint64_t>(i);
                if (s.dataset_digest != digest_ || s.example.meta.counter != expect ||
                    s.example.meta.seed != seed_ || s.example.meta.stream_id != stream_id_ ||
                    static_cast<int64_t>(s.example.targets.size()) != horizon_) {
                    throw ProtocolError("worker returned a sample for the wrong coordinates");
                }
                {
                    std::lock_guard lock(mu_);
                    ready_.emplace(expect, std::move(s.example));
                }
                ++delivered;
                ready_cv_.notify_all();
            }
            const Frame done = read_frame(fd);
            if (done.type != MsgType::Done) throw ProtocolError("expected DONE, got " + to_string(done.type));
            chunk.count = 0;
        }
    } catch (const std::exception& e) {
        std::lock_guard lock(mu_);
        if (!stop_) last_error_ = e.what();
    }
    {
        std::lock_guard lock(mu_);
        --live_;
        const int64_t left = chunk.count - delivered;
        if (left > 0) {
            requeued_.push_front({chunk.base + static_cast<uint64_t>(delivered), left});
            reassigned_ += left;
        }
    }
    work_cv_.notify_all();
    ready_cv_.notify_all();
}

ExampleBatch WorkerPool::next_batch(int64_t batch_size) {
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    std::vector<TrainExample> examples;
    std::unique_lock lock(mu_);
    window_ = static_cast<uint64_t>(opts_.prefetch_batches * batch_size);
    work_cv_.notify_all();
    for (int64_t b = 0; b < batch_size; ++b) {
        const uint64_t c = next_consume_ + static_cast<uint64_t>(b);
        if (!ready_cv_.wait_for(lock, opts_.timeout, [&] { return ready_.contains(c); })) {
            throw std::runtime_error("data starvation: example " + std::to_string(c) + " not delivered within " +
                                     std::to_string(opts_.timeout.count()) + " ms (" + std::to_string(live_) +
                                     " live workers" + (last_error_.empty() ? "" : "; last error: " + last_error_) +
                                     ")");
        }
    }
    for (int64_t b = 0; b < batch_size; ++b) {
        auto node = ready_.extract(next_consume_ + static_cast<uint64_t>(b));
        examples.push_back(std::move(node.mapped()));
    }
    next_consume_ += static_cast<uint64_t>(batch_size);
    lock.unlock();
    work_cv_.notify_all();
    return assemble_batch(examples);
}

}  // namespace fcx::net
