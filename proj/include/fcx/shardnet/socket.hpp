#pragma once

#include <chrono>
#include <cstdint>
#include <string>

namespace fcx::net {

struct Endpoint {
    std::string host;
    uint16_t port = 0;
    std::string str() const { return host + ":" + std::to_string(port); }
};

/// Parses HOST:PORT. Throws std::invalid_argument.
Endpoint parse_endpoint(const std::string& s);

/// Owning socket descriptor.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket() { close(); }
    Socket(Socket&& o) noexcept : fd_(o.release()) {}
    Socket& operator=(Socket&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = o.release();
        }
        return *this;
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    int release() {
        int f = fd_;
        fd_ = -1;
        return f;
    }
    void close();
    /// Wakes any thread blocked on this socket without releasing the descriptor.
    void shutdown();
    void set_timeout(std::chrono::milliseconds timeout);

private:
    int fd_ = -1;
};

Socket connect_to(const Endpoint& ep, std::chrono::milliseconds timeout);
/// Listening socket; port 0 picks an ephemeral port, reported by local_port.
Socket listen_on(const Endpoint& ep, int backlog = 16);
uint16_t local_port(const Socket& s);

}  // namespace fcx::net
