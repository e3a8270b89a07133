#include "isplit/wire.hpp"

#include <zlib.h>

#include <cstring>

namespace isplit {

std::string to_string(WireErrorCode c) {
  switch (c) {
    case WireErrorCode::truncated: return "truncated";
    case WireErrorCode::bad_magic: return "bad_magic";
    case WireErrorCode::bad_version: return "bad_version";
    case WireErrorCode::crc_mismatch: return "crc_mismatch";
    case WireErrorCode::bad_msg_type: return "bad_msg_type";
    case WireErrorCode::bad_dtype: return "bad_dtype";
    case WireErrorCode::payload_size_mismatch: return "payload_size_mismatch";
    case WireErrorCode::bad_shape: return "bad_shape";
    case WireErrorCode::internal: return "internal";
  }
  return "unknown";
}

namespace {

void append(std::vector<std::uint8_t>& buf, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  buf.insert(buf.end(), b, b + n);
}

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, data, static_cast<uInt>(n)));
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const WireFrame& frame) {
  const std::uint64_t elems = frame.payload_elements();
  if (frame.payload.size() != elems * frame.dtype_size())
    throw WireError(WireErrorCode::payload_size_mismatch,
                    "payload holds " + std::to_string(frame.payload.size()) + " bytes, dims need " +
                        std::to_string(elems * frame.dtype_size()));
  std::vector<std::uint8_t> buf;
  buf.reserve(kWireHeaderBytes + 4 * frame.dims.size() + frame.payload.size() + 4);
  append(buf, kWireMagic, 4);
  append(buf, &frame.version, 2);
  const std::uint8_t mt = static_cast<std::uint8_t>(frame.msg_type);
  append(buf, &mt, 1);
  append(buf, &frame.request_id, 8);
  const std::uint8_t dt = static_cast<std::uint8_t>(frame.dtype);
  append(buf, &dt, 1);
  const std::uint8_t rank = static_cast<std::uint8_t>(frame.dims.size());
  if (frame.dims.size() > 255) throw WireError(WireErrorCode::payload_size_mismatch, "rank > 255");
  append(buf, &rank, 1);
  for (std::uint32_t d : frame.dims) append(buf, &d, 4);
  append(buf, frame.payload.data(), frame.payload.size());
  const std::uint32_t crc = crc_of(buf.data(), buf.size());
  append(buf, &crc, 4);
  return buf;
}

WireFrame decode_frame(const std::uint8_t* data, std::size_t size) {
  if (size < kWireHeaderBytes + 4)
    throw WireError(WireErrorCode::truncated, "frame shorter than header + crc");
  if (std::memcmp(data, kWireMagic, 4) != 0)
    throw WireError(WireErrorCode::bad_magic, "bad frame magic");
  WireFrame f;
  std::memcpy(&f.version, data + 4, 2);
  if (f.version != kWireVersion)
    throw WireError(WireErrorCode::bad_version, "unknown version " + std::to_string(f.version));
  const std::uint8_t mt = data[6];
  if (mt > 3) throw WireError(WireErrorCode::bad_msg_type, "unknown msg_type " + std::to_string(mt));
  f.msg_type = static_cast<MsgType>(mt);
  std::memcpy(&f.request_id, data + 7, 8);
  const std::uint8_t dt = data[15];
  if (dt > 1) throw WireError(WireErrorCode::bad_dtype, "unknown dtype " + std::to_string(dt));
  f.dtype = static_cast<WireDtype>(dt);
  const std::uint8_t rank = data[16];
  std::size_t pos = kWireHeaderBytes;
  if (size < pos + 4ull * rank + 4)
    throw WireError(WireErrorCode::truncated, "frame truncated in dims");
  f.dims.resize(rank);
  for (int i = 0; i < rank; ++i) {
    std::memcpy(&f.dims[i], data + pos, 4);
    pos += 4;
  }
  const std::uint64_t payload_bytes = f.payload_elements() * f.dtype_size();
  if (size != pos + payload_bytes + 4) {
    if (size < pos + payload_bytes + 4)
      throw WireError(WireErrorCode::truncated, "frame truncated in payload");
    throw WireError(WireErrorCode::payload_size_mismatch, "frame length does not match dims");
  }
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, data + size - 4, 4);
  if (stored_crc != crc_of(data, size - 4))
    throw WireError(WireErrorCode::crc_mismatch, "frame crc mismatch");
  f.payload.assign(data + pos, data + pos + payload_bytes);
  return f;
}

WireFrame decode_frame(const std::vector<std::uint8_t>& bytes) {
  return decode_frame(bytes.data(), bytes.size());
}

WireFrame ping_frame(std::uint64_t request_id) {
  WireFrame f;
  f.msg_type = MsgType::ping;
  f.request_id = request_id;
  return f;
}

WireFrame error_frame(std::uint64_t request_id, WireErrorCode reason) {
  WireFrame f;
  f.msg_type = MsgType::error;
  f.request_id = request_id;
  f.dims = {1};
  const float code = static_cast<float>(static_cast<std::uint8_t>(reason));
  f.payload.resize(4);
  std::memcpy(f.payload.data(), &code, 4);
  return f;
}

WireErrorCode error_reason(const WireFrame& frame) {
  if (frame.msg_type != MsgType::error || frame.dtype != WireDtype::f32 || frame.payload.size() != 4)
    return WireErrorCode::internal;
  float code;
  std::memcpy(&code, frame.payload.data(), 4);
  return static_cast<WireErrorCode>(static_cast<std::uint8_t>(code));
}

namespace {

template <typename S>
WireFrame tensor_frame_impl(MsgType type, std::uint64_t request_id, const TensorT<S>& t,
                            WireDtype dtype) {
  WireFrame f;
  f.msg_type = type;
  f.request_id = request_id;
  f.dtype = dtype;
  if (t.rank() == 0)
    f.dims = {1};  // scalars travel as one-element rank-1 tensors
  else
    for (int d : t.shape) f.dims.push_back(static_cast<std::uint32_t>(d));
  f.payload.resize(t.data.size() * sizeof(S));
  std::memcpy(f.payload.data(), t.data.data(), f.payload.size());
  return f;
}

template <typename S>
TensorT<S> tensor_from_frame_impl(const WireFrame& frame, WireDtype expected) {
  if (frame.dtype != expected)
    throw WireError(WireErrorCode::bad_dtype, "frame dtype does not match requested tensor type");
  std::vector<int> shape;
  for (std::uint32_t d : frame.dims) shape.push_back(static_cast<int>(d));
  TensorT<S> t(shape);
  if (t.data.size() * sizeof(S) != frame.payload.size())
    throw WireError(WireErrorCode::payload_size_mismatch, "frame payload/dims mismatch");
  std::memcpy(t.data.data(), frame.payload.data(), frame.payload.size());
  return t;
}

}  // namespace

WireFrame tensor_frame(MsgType type, std::uint64_t request_id, const TensorF& t) {
  return tensor_frame_impl(type, request_id, t, WireDtype::f32);
}

WireFrame tensor_frame(MsgType type, std::uint64_t request_id, const TensorD& t) {
  return tensor_frame_impl(type, request_id, t, WireDtype::f64);
}

TensorF tensor_f32_from_frame(const WireFrame& frame) {
  return tensor_from_frame_impl<float>(frame, WireDtype::f32);
}

TensorD tensor_f64_from_frame(const WireFrame& frame) {
  return tensor_from_frame_impl<double>(frame, WireDtype::f64);
}

}  // namespace isplit
