#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcx/sampler/sampler.hpp"

namespace fcx::net {

inline constexpr uint32_t kMaxPayload = 64u << 20;
inline constexpr int kProtocolVersion = 1;
inline constexpr size_t kFrameHeader = 5;

enum class MsgType : uint8_t {
    Hello = 0x01,
    HelloAck = 0x02,
    SampleReq = 0x03,
    Sample = 0x04,
    Err = 0x05,
    Ping = 0x06,
    Done = 0x07,
};

std::string to_string(MsgType t);

struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Frame {
    MsgType type = MsgType::Ping;
    std::vector<uint8_t> payload;
    bool operator==(const Frame&) const = default;
};

/// u32 big-endian payload length, one type byte, payload.
std::vector<uint8_t> encode_frame(MsgType type, std::span<const uint8_t> payload);
std::vector<uint8_t> encode_frame(const Frame& f);

/// Decodes one frame from the front of `bytes`. On success `consumed` is
/// length + 5. Truncation, oversize and unknown types throw ProtocolError.
Frame decode_frame(std::span<const uint8_t> bytes, size_t* consumed = nullptr);

struct Hello {
    std::string dataset_digest;
    int protocol_version = kProtocolVersion;
};

struct SampleReq {
    int64_t count = 0;
    int64_t horizon = 1;
    uint64_t seed = 0;
    uint64_t stream_id = 0;
    uint64_t counter_base = 0;
    bool operator==(const SampleReq&) const = default;
};

Frame make_hello(const Hello& h);
Hello parse_hello(const Frame& f);
Frame make_sample_req(const SampleReq& r);
SampleReq parse_sample_req(const Frame& f);
Frame make_error(const std::string& message);
std::string parse_error(const Frame& f);

/// SAMPLE payload: u32 big-endian header length, JSON header, then the
/// input and K targets as little-endian f32 in time order.
std::vector<uint8_t> encode_sample(const TrainExample& ex, const std::string& dataset_digest);

struct DecodedSample {
    TrainExample example;
    std::string dataset_digest;
};
DecodedSample decode_sample(std::span<const uint8_t> payload);

/// Blocking frame I/O on a connected socket. read_frame throws
/// ProtocolError on a malformed frame and IoError on a closed or timed-out
/// connection.
void write_frame(int fd, const Frame& f);
Frame read_frame(int fd);

}  // namespace fcx::net
