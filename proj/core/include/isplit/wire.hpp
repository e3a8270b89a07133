#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "isplit/tensor.hpp"

namespace isplit {

// Frame layout (little-endian):
//   magic "ISWF" (4) | version u16 | msg_type u8 | request_id u64 | dtype u8
//   | rank u8 | dims rank*u32 | payload | crc32 u32 over all preceding bytes.
// Rank 0 carries no payload (ping, empty error). A successful infer_response
// is followed on the stream by a timing frame: a ping echoing the request id
// whose single-f32 payload is the server-side compute time in milliseconds.

inline constexpr char kWireMagic[4] = {'I', 'S', 'W', 'F'};
inline constexpr std::uint16_t kWireVersion = 1;
inline constexpr std::size_t kWireHeaderBytes = 17;  // magic..rank, before dims

enum class MsgType : std::uint8_t {
  infer_request = 0,
  infer_response = 1,
  error = 2,
  ping = 3,
};

enum class WireDtype : std::uint8_t { f32 = 0, f64 = 1 };

enum class WireErrorCode : std::uint8_t {
  truncated = 1,
  bad_magic = 2,
  bad_version = 3,
  crc_mismatch = 4,
  bad_msg_type = 5,
  bad_dtype = 6,
  payload_size_mismatch = 7,
  bad_shape = 8,     // request tensor does not fit the served model
  internal = 9,
};

std::string to_string(WireErrorCode c);

struct WireError : std::runtime_error {
  WireError(WireErrorCode c, const std::string& what) : std::runtime_error(what), code(c) {}
  WireErrorCode code;
};

struct WireFrame {
  std::uint16_t version = kWireVersion;
  MsgType msg_type = MsgType::ping;
  std::uint64_t request_id = 0;
  WireDtype dtype = WireDtype::f32;
  std::vector<std::uint32_t> dims;       // rank = dims.size(); rank 0 => no payload
  std::vector<std::uint8_t> payload;     // raw little-endian scalars

  bool operator==(const WireFrame&) const = default;

  std::uint64_t payload_elements() const {
    if (dims.empty()) return 0;
    std::uint64_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return n;
  }
  std::size_t dtype_size() const { return dtype == WireDtype::f32 ? 4 : 8; }
};

std::vector<std::uint8_t> encode_frame(const WireFrame& frame);

/// Decodes exactly one frame; throws WireError with a distinct code for
/// truncation, bad magic, unknown version, CRC mismatch, unknown
/// message/dtype and payload size mismatch.
WireFrame decode_frame(const std::uint8_t* data, std::size_t size);
WireFrame decode_frame(const std::vector<std::uint8_t>& bytes);

WireFrame ping_frame(std::uint64_t request_id);
WireFrame error_frame(std::uint64_t request_id, WireErrorCode reason);
WireFrame tensor_frame(MsgType type, std::uint64_t request_id, const TensorF& t);
WireFrame tensor_frame(MsgType type, std::uint64_t request_id, const TensorD& t);

TensorF tensor_f32_from_frame(const WireFrame& frame);
TensorD tensor_f64_from_frame(const WireFrame& frame);

/// Reason code carried by an error frame (single-element f32 payload), or
/// WireErrorCode::internal if the frame has none.
WireErrorCode error_reason(const WireFrame& frame);

}  // namespace isplit
