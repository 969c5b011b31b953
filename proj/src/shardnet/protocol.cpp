#include "fcx/shardnet/protocol.hpp"

#include <sys/socket.h>

#include <cerrno>
#include <cstring>

#include <json.hpp>

#include "fcx/core/io.hpp"

namespace fcx::net {

namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32_be(const uint8_t* p) {
    return (uint32_t{p[0]} << 24) | (uint32_t{p[1]} << 16) | (uint32_t{p[2]} << 8) | uint32_t{p[3]};
}

bool known_type(uint8_t t) { return t >= 0x01 && t <= 0x07; }

std::vector<uint8_t> json_bytes(const nlohmann::json& j) {
    const std::string s = j.dump();
    return {s.begin(), s.end()};
}

nlohmann::json parse_json_payload(const Frame& f, MsgType expect) {
    if (f.type != expect) {
        throw ProtocolError("expected " + to_string(expect) + " frame, got " + to_string(f.type));
    }
    try {
        return nlohmann::json::parse(f.payload.begin(), f.payload.end());
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(to_string(expect) + " payload is not JSON: " + e.what());
    }
}

template <typename F>
auto json_field(const char* what, F f) {
    try {
        return f();
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("malformed ") + what + ": " + e.what());
    }
}

void read_exact(int fd, uint8_t* dst, size_t n) {
    size_t got = 0;
    while (got < n) {
        const ssize_t r = ::recv(fd, dst + got, n - got, 0);
        if (r == 0) throw IoError(got == 0 ? "connection closed" : "connection closed mid-frame (truncated)");
        if (r < 0) {
            if (errno == EINTR) continue;
            if (errno == EAGAIN || errno == EWOULDBLOCK) throw IoError("receive timed out");
            throw IoError(std::string("recv: ") + std::strerror(errno));
        }
        got += static_cast<size_t>(r);
    }
}

}  // namespace

std::string to_string(MsgType t) {
    switch (t) {
        case MsgType::Hello: return "HELLO";
        case MsgType::HelloAck: return "HELLO_ACK";
        case MsgType::SampleReq: return "SAMPLE_REQ";
        case MsgType::Sample: return "SAMPLE";
        case MsgType::Err: return "ERR";
        case MsgType::Ping: return "PING";
        case MsgType::Done: return "DONE";
    }
    return "0x" + std::to_string(static_cast<int>(t));
}

std::vector<uint8_t> encode_frame(MsgType type, std::span<const uint8_t> payload) {
    if (payload.size() > kMaxPayload) {
        throw ProtocolError("payload of " + std::to_string(payload.size()) + " bytes exceeds the 64 MiB limit");
    }
    if (!known_type(static_cast<uint8_t>(type))) throw ProtocolError("unknown msg_type");
    std::vector<uint8_t> out;
    out.reserve(kFrameHeader + payload.size());
    put_u32_be(out, static_cast<uint32_t>(payload.size()));
    out.push_back(static_cast<uint8_t>(type));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

std::vector<uint8_t> encode_frame(const Frame& f) { return encode_frame(f.type, f.payload); }

Frame decode_frame(std::span<const uint8_t> bytes, size_t* consumed) {
    if (bytes.size() < kFrameHeader) throw ProtocolError("truncated frame header");
    const uint32_t len = get_u32_be(bytes.data());
    if (len > kMaxPayload) throw ProtocolError("frame length " + std::to_string(len) + " exceeds the 64 MiB limit");
    const uint8_t type = bytes[4];
    if (!known_type(type)) throw ProtocolError("unknown msg_type " + std::to_string(type));
    if (bytes.size() < kFrameHeader + len) throw ProtocolError("truncated frame payload");
    Frame f;
    f.type = static_cast<MsgType>(type);
    f.payload.assign(bytes.begin() + kFrameHeader, bytes.begin() + kFrameHeader + len);
    if (consumed) *consumed = kFrameHeader + len;
    return f;
}

Frame make_hello(const Hello& h) {
    return {MsgType::Hello, json_bytes({{"dataset_digest", h.dataset_digest}, {"protocol_version", h.protocol_version}})};
}

Hello parse_hello(const Frame& f) {
    const auto j = parse_json_payload(f, MsgType::Hello);
    return json_field("HELLO", [&] {
        return Hello{j.at("dataset_digest").get<std::string>(), j.at("protocol_version").get<int>()};
    });
}

Frame make_sample_req(const SampleReq& r) {
    return {MsgType::SampleReq, json_bytes({{"count", r.count},
                                            {"horizon", r.horizon},
                                            {"seed", r.seed},
                                            {"stream_id", r.stream_id},
                                            {"counter_base", r.counter_base}})};
}

SampleReq parse_sample_req(const Frame& f) {
    const auto j = parse_json_payload(f, MsgType::SampleReq);
    SampleReq r = json_field("SAMPLE_REQ", [&] {
        return SampleReq{j.at("count").get<int64_t>(), j.at("horizon").get<int64_t>(), j.at("seed").get<uint64_t>(),
                         j.at("stream_id").get<uint64_t>(), j.at("counter_base").get<uint64_t>()};
    });
    if (r.count < 0) throw ProtocolError("SAMPLE_REQ count is negative");
    if (r.horizon < 1) throw ProtocolError("SAMPLE_REQ horizon must be >= 1");
    return r;
}

Frame make_error(const std::string& message) { return {MsgType::Err, json_bytes({{"message", message}})}; }

std::string parse_error(const Frame& f) {
    const auto j = parse_json_payload(f, MsgType::Err);
    return json_field("ERR", [&] { return j.at("message").get<std::string>(); });
}

std::vector<uint8_t> encode_sample(const TrainExample& ex, const std::string& dataset_digest) {
    const Shape& s = ex.input.shape();
    if (s.size() != 3) throw std::invalid_argument("sample input must be (C, h, w)");
    const nlohmann::json header = {{"dataset_digest", dataset_digest},
                                   {"t0", ex.meta.t0},
                                   {"origin", {ex.meta.origin_i, ex.meta.origin_j}},
                                   {"crop", {s[1], s[2]}},
                                   {"horizon", ex.targets.size()},
                                   {"channels", s[0]},
                                   {"dtype", "f32"},
                                   {"seed", ex.meta.seed},
                                   {"stream_id", ex.meta.stream_id},
                                   {"counter", ex.meta.counter}};
    const std::string h = header.dump();
    std::vector<uint8_t> out;
    const size_t per = static_cast<size_t>(ex.input.size());
    out.reserve(4 + h.size() + 4 * per * (1 + ex.targets.size()));
    put_u32_be(out, static_cast<uint32_t>(h.size()));
    out.insert(out.end(), h.begin(), h.end());
    auto append = [&](const Tensor<float>& t) {
        if (t.shape() != s) throw std::invalid_argument("sample targets must match the input shape");
        const auto bytes = floats_to_le_bytes(t.data());
        out.insert(out.end(), bytes.begin(), bytes.end());
    };
    append(ex.input);
    for (const auto& t : ex.targets) append(t);
    return out;
}

DecodedSample decode_sample(std::span<const uint8_t> payload) {
    if (payload.size() < 4) throw ProtocolError("SAMPLE payload shorter than its header length");
    const uint32_t hlen = get_u32_be(payload.data());
    if (payload.size() - 4 < hlen) throw ProtocolError("SAMPLE header truncated");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(payload.begin() + 4, payload.begin() + 4 + hlen);
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("SAMPLE header is not JSON: ") + e.what());
    }
    DecodedSample out;
    int64_t C = 0, h = 0, w = 0, K = 0;
    json_field("SAMPLE header", [&] {
        if (j.at("dtype").get<std::string>() != "f32") throw ProtocolError("SAMPLE dtype must be f32");
        out.dataset_digest = j.at("dataset_digest").get<std::string>();
        out.example.meta.t0 = j.at("t0").get<int64_t>();
        out.example.meta.origin_i = j.at("origin").at(0).get<int64_t>();
        out.example.meta.origin_j = j.at("origin").at(1).get<int64_t>();
        h = j.at("crop").at(0).get<int64_t>();
        w = j.at("crop").at(1).get<int64_t>();
        K = j.at("horizon").get<int64_t>();
        C = j.at("channels").get<int64_t>();
        out.example.meta.seed = j.at("seed").get<uint64_t>();
        out.example.meta.stream_id = j.at("stream_id").get<uint64_t>();
        out.example.meta.counter = j.at("counter").get<uint64_t>();
        return 0;
    });
    if (C < 1 || h < 1 || w < 1 || K < 0 || C > kMaxPayload || h > kMaxPayload || w > kMaxPayload ||
        K > kMaxPayload) {
        throw ProtocolError("SAMPLE header has invalid dimensions");
    }
    const uint64_t per = static_cast<uint64_t>(C) * static_cast<uint64_t>(h) * static_cast<uint64_t>(w);
    const uint64_t body = payload.size() - 4 - hlen;
    if (per > kMaxPayload || body != 4 * per * static_cast<uint64_t>(1 + K)) {
        throw ProtocolError("SAMPLE body length does not match its header");
    }
    const uint8_t* p = payload.data() + 4 + hlen;
    auto take = [&] {
        Tensor<float> t({C, h, w}, le_bytes_to_floats(std::span<const uint8_t>(p, 4 * per)));
        p += 4 * per;
        return t;
    };
    out.example.input = take();
    for (int64_t k = 0; k < K; ++k) out.example.targets.push_back(take());
    return out;
}

void write_frame(int fd, const Frame& f) {
    const auto bytes = encode_frame(f);
    size_t sent = 0;
    while (sent < bytes.size()) {
        const ssize_t r = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
        if (r < 0) {
            if (errno == EINTR) continue;
            throw IoError(std::string("send: ") + std::strerror(errno));
        }
        sent += static_cast<size_t>(r);
    }
}

Frame read_frame(int fd) {
    uint8_t header[kFrameHeader];
    read_exact(fd, header, kFrameHeader);
    const uint32_t len = get_u32_be(header);
    if (len > kMaxPayload) throw ProtocolError("frame length " + std::to_string(len) + " exceeds the 64 MiB limit");
    if (!known_type(header[4])) throw ProtocolError("unknown msg_type " + std::to_string(header[4]));
    Frame f;
    f.type = static_cast<MsgType>(header[4]);
    f.payload.resize(len);
    if (len > 0) read_exact(fd, f.payload.data(), len);
    return f;
}

}  // namespace fcx::net
