#pragma once

#include <cstdint>

#include "isplit/errors.hpp"

namespace isplit {

/// Reliable-transport channel for transfer-time estimates. The simulator
/// prices payloads; it never throttles real sockets.
struct ChannelModel {
  double bandwidth_bytes_per_s = 0;
  double latency_s = 0;
};

inline double estimate_transfer_s(std::uint64_t payload_bytes, const ChannelModel& ch) {
  if (!(ch.bandwidth_bytes_per_s > 0)) throw ConfigError("channel bandwidth must be > 0");
  if (ch.latency_s < 0) throw ConfigError("channel latency must be >= 0");
  return ch.latency_s + static_cast<double>(payload_bytes) / ch.bandwidth_bytes_per_s;
}

}  // namespace isplit
