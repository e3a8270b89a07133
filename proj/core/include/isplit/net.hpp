#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "isplit/model.hpp"
#include "isplit/wire.hpp"

namespace isplit {

struct NetworkError : std::runtime_error {
  explicit NetworkError(const std::string& what) : std::runtime_error(what) {}
};
struct ConnectError : NetworkError {
  explicit ConnectError(const std::string& what) : NetworkError(what) {}
};
struct TimeoutError : NetworkError {
  explicit TimeoutError(const std::string& what) : NetworkError(what) {}
};
struct ServerError : NetworkError {
  ServerError(WireErrorCode c, const std::string& what) : NetworkError(what), reason(c) {}
  WireErrorCode reason;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};
Endpoint parse_endpoint(const std::string& addr);

/// Hosts decoder+tail inference over TCP. Frames are length-prefixed
/// (u32 LE). Each connection handles one request at a time; up to
/// max_connections run concurrently over the shared read-only tail model.
class TailServer {
 public:
  TailServer(const std::string& host, std::uint16_t port, Model tail, int max_connections = 8);
  ~TailServer();

  TailServer(const TailServer&) = delete;
  TailServer& operator=(const TailServer&) = delete;

  void start();  // binds and spawns the accept loop; throws ConnectError on bind failure
  void stop();
  std::uint16_t port() const { return port_; }

  std::uint64_t requests_served() const { return requests_.load(); }
  std::uint64_t error_frames_sent() const { return errors_.load(); }

 private:
  void accept_loop();
  void handle_connection(int fd);

  std::string host_;
  std::uint16_t port_;
  Model tail_;
  int max_connections_;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::atomic<int> active_{0};
  std::atomic<std::uint64_t> requests_{0};
  std::atomic<std::uint64_t> errors_{0};
  std::thread acceptor_;
  std::mutex workers_mu_;
  std::vector<std::thread> workers_;
};

struct InferTiming {
  double head_ms = 0;
  double transfer_ms = 0;
  double tail_ms = 0;
};

struct InferResult {
  TensorF logits;
  InferTiming timing;
};

/// Runs head+encoder locally, ships the encoded tensor to the tail server,
/// and returns the logits (bit-exact f32 transport) with a timing breakdown.
InferResult head_infer(const TensorF& image, const Model& head, const std::string& host,
                       std::uint16_t port, int timeout_ms = 5000);

/// Single framed exchange on a fresh connection (used by tests and the CLI
/// ping path). Returns the first response frame.
WireFrame roundtrip_frame(const WireFrame& request, const std::string& host, std::uint16_t port,
                          int timeout_ms = 5000);

/// A persistent client connection; one request in flight at a time.
class ClientConnection {
 public:
  ClientConnection(const std::string& host, std::uint16_t port, int timeout_ms = 5000);
  ~ClientConnection();
  ClientConnection(const ClientConnection&) = delete;
  ClientConnection& operator=(const ClientConnection&) = delete;

  void send(const WireFrame& frame);
  void send_raw(const std::vector<std::uint8_t>& frame_bytes);  // pre-encoded (tests corrupt these)
  WireFrame receive();

  WireFrame exchange(const WireFrame& frame) {
    send(frame);
    return receive();
  }

 private:
  int fd_ = -1;
  int timeout_ms_;
};

}  // namespace isplit
