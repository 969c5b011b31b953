#include "fcx/shardnet/worker.hpp"

#include <sys/socket.h>

#include <algorithm>
#include <stdexcept>

#include "fcx/core/io.hpp"
#include "fcx/shardnet/protocol.hpp"

namespace fcx::net {

WorkerServer::WorkerServer(const Dataset& dataset, NormStats stats, CropSpec crop, TimeRange range)
    : dataset_(dataset), stats_(std::move(stats)), crop_(crop), range_(range) {
    stats_.validate();
    crop_.validate();
    if (crop_.full_h != dataset.meta().height || crop_.full_w != dataset.meta().width) {
        throw std::invalid_argument("worker crop spec does not match the dataset grid");
    }
}

WorkerServer::~WorkerServer() { stop(); }

uint16_t WorkerServer::start(const Endpoint& listen) {
    if (acceptor_.joinable()) throw std::logic_error("worker server already started");
    listener_ = listen_on(listen);
    const uint16_t port = local_port(listener_);
    acceptor_ = std::thread([this] { accept_loop(); });
    return port;
}

void WorkerServer::wait() {
    if (acceptor_.joinable()) acceptor_.join();
}

void WorkerServer::drop_all() {
    stopping_ = true;
    listener_.shutdown();
    std::lock_guard lock(mu_);
    for (int fd : session_fds_) ::shutdown(fd, SHUT_RDWR);
}

void WorkerServer::kill() { drop_all(); }

void WorkerServer::stop() {
    drop_all();
    if (acceptor_.joinable() && acceptor_.get_id() != std::this_thread::get_id()) acceptor_.join();
    std::vector<std::thread> threads;
    {
        std::lock_guard lock(mu_);
        threads.swap(sessions_);
    }
    for (auto& t : threads) {
        if (t.joinable()) t.join();
    }
    listener_.close();
}

void WorkerServer::accept_loop() {
    while (!stopping_) {
        const int fd = ::accept(listener_.fd(), nullptr, nullptr);
        if (fd < 0) {
            if (stopping_) break;
            if (errno == EINTR || errno == ECONNABORTED) continue;
            break;
        }
        std::lock_guard lock(mu_);
        if (stopping_) {
            ::close(fd);
            break;
        }
        session_fds_.push_back(fd);
        sessions_.emplace_back([this, fd] { session(fd); });
    }
}

void WorkerServer::session(int fd) {
    Socket sock(fd);
    auto forget = [&] {
        std::lock_guard lock(mu_);
        session_fds_.erase(std::remove(session_fds_.begin(), session_fds_.end(), fd), session_fds_.end());
    };
    auto reject = [&](const std::string& message) {
        try {
            write_frame(fd, make_error(message));
        } catch (const std::exception&) {
        }
    };
    try {
        const Frame first = read_frame(fd);
        if (first.type != MsgType::Hello) throw ProtocolError("expected HELLO, got " + to_string(first.type));
        const Hello hello = parse_hello(first);
        if (hello.protocol_version != kProtocolVersion) {
            reject("protocol version " + std::to_string(hello.protocol_version) + " not supported");
            forget();
            return;
        }
        if (hello.dataset_digest != dataset_.digest()) {
            reject("dataset digest mismatch: worker serves " + dataset_.digest());
            forget();
            return;
        }
        write_frame(fd, {MsgType::HelloAck, {}});
        while (!stopping_) {
            const Frame f = read_frame(fd);
            if (f.type == MsgType::Ping) {
                write_frame(fd, {MsgType::Ping, {}});
                continue;
            }
            const SampleReq req = parse_sample_req(f);
            for (int64_t i = 0; i < req.count; ++i) {
                const TrainExample ex = sample_at(dataset_, stats_, crop_, req.horizon, range_, req.seed, req.stream_id,
                                                  req.counter_base + static_cast<uint64_t>(i));
                write_frame(fd, {MsgType::Sample, encode_sample(ex, dataset_.digest())});
                const int64_t n = ++sent_;
                if (fail_after_ >= 0 && n >= fail_after_) {
                    drop_all();
                    throw IoError("simulated worker failure");
                }
            }
            write_frame(fd, {MsgType::Done, {}});
        }
    } catch (const ProtocolError& e) {
        reject(e.what());
    } catch (const IoError&) {
        // Peer went away or the server is stopping.
    } catch (const std::exception& e) {
        reject(e.what());
    }
    forget();
}

void worker_serve(const std::filesystem::path& dataset_dir, const Endpoint& listen, int64_t crop_h, int64_t crop_w,
                  std::function<void(uint16_t)> on_ready) {
    const Dataset dataset = Dataset::open(dataset_dir);
    const NormStats stats = load_stats(dataset_dir);
    const auto& m = dataset.meta();
    const CropSpec crop{m.height, m.width, crop_h == 0 ? m.height : crop_h, crop_w == 0 ? m.width : crop_w};
    WorkerServer server(dataset, stats, crop, m.train_range());
    const uint16_t port = server.start(listen);
    if (on_ready) on_ready(port);
    server.wait();
}

}  // namespace fcx::net
