#include "fcx/shardnet/socket.hpp"

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <memory>
#include <stdexcept>

#include "fcx/core/io.hpp"

namespace fcx::net {

Endpoint parse_endpoint(const std::string& s) {
    const auto colon = s.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == s.size()) {
        throw std::invalid_argument("expected HOST:PORT, got '" + s + "'");
    }
    const std::string port = s.substr(colon + 1);
    size_t used = 0;
    unsigned long p = 0;
    try {
        p = std::stoul(port, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != port.size() || p > 65535) throw std::invalid_argument("bad port in '" + s + "'");
    return {s.substr(0, colon), static_cast<uint16_t>(p)};
}

void Socket::close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
}

void Socket::shutdown() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void Socket::set_timeout(std::chrono::milliseconds timeout) {
    timeval tv{};
    tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
    tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    ::setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
}

namespace {

using AddrList = std::unique_ptr<addrinfo, decltype(&freeaddrinfo)>;

AddrList resolve(const Endpoint& ep, bool passive) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    if (passive) hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const int rc = ::getaddrinfo(ep.host.c_str(), std::to_string(ep.port).c_str(), &hints, &res);
    if (rc != 0) throw IoError("cannot resolve " + ep.str() + ": " + gai_strerror(rc));
    return AddrList(res, &freeaddrinfo);
}

}  // namespace

Socket connect_to(const Endpoint& ep, std::chrono::milliseconds timeout) {
    auto addrs = resolve(ep, false);
    std::string last = "no addresses";
    for (addrinfo* a = addrs.get(); a; a = a->ai_next) {
        Socket s(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
        if (!s.valid()) continue;
        s.set_timeout(timeout);
        if (::connect(s.fd(), a->ai_addr, a->ai_addrlen) == 0) {
            int one = 1;
            ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
            return s;
        }
        last = std::strerror(errno);
    }
    throw IoError("cannot connect to " + ep.str() + ": " + last);
}

Socket listen_on(const Endpoint& ep, int backlog) {
    auto addrs = resolve(ep, true);
    std::string last = "no addresses";
    for (addrinfo* a = addrs.get(); a; a = a->ai_next) {
        Socket s(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
        if (!s.valid()) continue;
        int one = 1;
        ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        if (::bind(s.fd(), a->ai_addr, a->ai_addrlen) == 0 && ::listen(s.fd(), backlog) == 0) return s;
        last = std::strerror(errno);
    }
    throw IoError("cannot listen on " + ep.str() + ": " + last);
}

uint16_t local_port(const Socket& s) {
    sockaddr_storage addr{};
    socklen_t len = sizeof(addr);
    if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
        throw IoError(std::string("getsockname: ") + std::strerror(errno));
    }
    if (addr.ss_family == AF_INET6) return ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);
    return ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
}

}  // namespace fcx::net
