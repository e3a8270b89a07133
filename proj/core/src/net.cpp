#include "isplit/net.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>

namespace isplit {

namespace {

constexpr std::uint32_t kMaxFrameBytes = 1u << 28;  // 256 MiB
constexpr int kPollSliceMs = 100;

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

// Reads exactly n bytes. Returns false on clean EOF at a frame boundary
// (got == 0); throws on timeout/stop/mid-frame EOF.
bool read_exact(int fd, std::uint8_t* buf, std::size_t n, int timeout_ms,
                const std::atomic<bool>* running) {
  std::size_t got = 0;
  const auto deadline = Clock::now() + std::chrono::milliseconds(timeout_ms);
  while (got < n) {
    if (running && !running->load()) throw NetworkError("server stopping");
    pollfd p{fd, POLLIN, 0};
    int slice = kPollSliceMs;
    if (timeout_ms > 0) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
      if (left.count() <= 0) throw TimeoutError("timed out waiting for data");
      slice = std::min<int>(kPollSliceMs, static_cast<int>(left.count()) + 1);
    }
    const int pr = ::poll(&p, 1, slice);
    if (pr < 0) {
      if (errno == EINTR) continue;
      throw NetworkError(std::string("poll: ") + std::strerror(errno));
    }
    if (pr == 0) continue;
    const ssize_t r = ::recv(fd, buf + got, n - got, 0);
    if (r == 0) {
      if (got == 0) return false;
      throw NetworkError("connection closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      throw NetworkError(std::string("recv: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

void write_all(int fd, const std::uint8_t* buf, std::size_t n) {
  std::size_t sent = 0;
  while (sent < n) {
    const ssize_t r = ::send(fd, buf + sent, n - sent, MSG_NOSIGNAL);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw NetworkError(std::string("send: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(r);
  }
}

void send_frame(int fd, const WireFrame& frame) {
  const std::vector<std::uint8_t> bytes = encode_frame(frame);
  const std::uint32_t len = static_cast<std::uint32_t>(bytes.size());
  std::uint8_t hdr[4];
  std::memcpy(hdr, &len, 4);
  write_all(fd, hdr, 4);
  write_all(fd, bytes.data(), bytes.size());
}

// Returns false on clean EOF before a new frame. Frame decode errors
// propagate as WireError; transport errors as NetworkError.
bool recv_frame_bytes(int fd, std::vector<std::uint8_t>& out, int timeout_ms,
                      const std::atomic<bool>* running) {
  std::uint8_t hdr[4];
  if (!read_exact(fd, hdr, 4, timeout_ms, running)) return false;
  std::uint32_t len;
  std::memcpy(&len, hdr, 4);
  if (len == 0 || len > kMaxFrameBytes)
    throw WireError(WireErrorCode::truncated, "unreasonable frame length " + std::to_string(len));
  out.resize(len);
  if (!read_exact(fd, out.data(), len, timeout_ms, running))
    throw NetworkError("connection closed mid-frame");
  return true;
}

struct FdCloser {
  int fd = -1;
  ~FdCloser() {
    if (fd >= 0) ::close(fd);
  }
};

int connect_with_timeout(const std::string& host, std::uint16_t port, int timeout_ms) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw ConnectError("invalid IPv4 address '" + host + "'");
  const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_NONBLOCK, 0);
  if (fd < 0) throw ConnectError(std::string("socket: ") + std::strerror(errno));
  FdCloser guard{fd};
  const int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  if (rc < 0 && errno != EINPROGRESS)
    throw ConnectError("connect to " + host + ":" + std::to_string(port) + ": " +
                       std::strerror(errno));
  if (rc < 0) {
    pollfd p{fd, POLLOUT, 0};
    const int pr = ::poll(&p, 1, timeout_ms > 0 ? timeout_ms : -1);
    if (pr == 0) throw TimeoutError("connect to " + host + ":" + std::to_string(port) + " timed out");
    if (pr < 0) throw ConnectError(std::string("poll: ") + std::strerror(errno));
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0)
      throw ConnectError("connect to " + host + ":" + std::to_string(port) + ": " +
                         std::strerror(err));
  }
  // back to blocking; reads are poll-guarded anyway
  int flags = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &flags, sizeof(flags));
  guard.fd = -1;
  return fd;
}

}  // namespace

Endpoint parse_endpoint(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos)
    throw ConfigError("endpoint '" + addr + "' must be host:port");
  Endpoint ep;
  ep.host = addr.substr(0, colon);
  const int port = std::atoi(addr.c_str() + colon + 1);
  if (port < 0 || port > 65535) throw ConfigError("bad port in '" + addr + "'");
  ep.port = static_cast<std::uint16_t>(port);
  return ep;
}

TailServer::TailServer(const std::string& host, std::uint16_t port, Model tail,
                       int max_connections)
    : host_(host), port_(port), tail_(std::move(tail)), max_connections_(max_connections) {
  if (max_connections_ < 1) throw ConfigError("max_connections must be >= 1");
}

TailServer::~TailServer() { stop(); }

void TailServer::start() {
  if (running_.load()) return;
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port_);
  if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1)
    throw ConnectError("invalid bind address '" + host_ + "'");
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw ConnectError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw ConnectError("bind " + host_ + ":" + std::to_string(port_) + ": " + err);
  }
  if (::listen(listen_fd_, 16) < 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw ConnectError("listen: " + err);
  }
  if (port_ == 0) {
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
  }
  running_.store(true);
  acceptor_ = std::thread(&TailServer::accept_loop, this);
}

void TailServer::stop() {
  if (!running_.exchange(false)) return;
  if (acceptor_.joinable()) acceptor_.join();
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  std::vector<std::thread> workers;
  {
    std::lock_guard<std::mutex> lock(workers_mu_);
    workers.swap(workers_);
  }
  for (auto& w : workers)
    if (w.joinable()) w.join();
}

void TailServer::accept_loop() {
  while (running_.load()) {
    if (active_.load() >= max_connections_) {
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      continue;
    }
    pollfd p{listen_fd_, POLLIN, 0};
    const int pr = ::poll(&p, 1, kPollSliceMs);
    if (pr <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    active_.fetch_add(1);
    std::lock_guard<std::mutex> lock(workers_mu_);
    workers_.emplace_back(&TailServer::handle_connection, this, fd);
  }
}

void TailServer::handle_connection(int fd) {
  FdCloser guard{fd};
  std::vector<std::uint8_t> buf;
  while (running_.load()) {
    WireFrame request;
    try {
      if (!recv_frame_bytes(fd, buf, 0, &running_)) break;  // clean close
      request = decode_frame(buf);
    } catch (const WireError& e) {
      // Corrupt frame: report and keep the connection; the length prefix
      // keeps the stream aligned.
      errors_.fetch_add(1);
      try {
        send_frame(fd, error_frame(0, e.code));
      } catch (const NetworkError&) {
        break;
      }
      continue;
    } catch (const NetworkError&) {
      break;
    }

    try {
      switch (request.msg_type) {
        case MsgType::ping:
          send_frame(fd, ping_frame(request.request_id));
          break;
        case MsgType::infer_request: {
          if (request.dtype != WireDtype::f32) {
            errors_.fetch_add(1);
            send_frame(fd, error_frame(request.request_id, WireErrorCode::bad_dtype));
            break;
          }
          TensorF input;
          try {
            input = tensor_f32_from_frame(request);
          } catch (const WireError& e) {
            errors_.fetch_add(1);
            send_frame(fd, error_frame(request.request_id, e.code));
            break;
          }
          if (input.shape != tail_.input_shape) {
            errors_.fetch_add(1);
            send_frame(fd, error_frame(request.request_id, WireErrorCode::bad_shape));
            break;
          }
          const auto t0 = Clock::now();
          const TensorF logits = forward(tail_, input);
          const auto t1 = Clock::now();
          requests_.fetch_add(1);
          send_frame(fd, tensor_frame(MsgType::infer_response, request.request_id, logits));
          TensorF ms = TensorF::zeros({1});
          ms.data[0] = static_cast<float>(ms_between(t0, t1));
          send_frame(fd, tensor_frame(MsgType::ping, request.request_id, ms));
          break;
        }
        default:
          errors_.fetch_add(1);
          send_frame(fd, error_frame(request.request_id, WireErrorCode::bad_msg_type));
          break;
      }
    } catch (const NetworkError&) {
      break;
    } catch (const std::exception&) {
      errors_.fetch_add(1);
      try {
        send_frame(fd, error_frame(request.request_id, WireErrorCode::internal));
      } catch (const NetworkError&) {
        break;
      }
    }
  }
  active_.fetch_sub(1);
}

InferResult head_infer(const TensorF& image, const Model& head, const std::string& host,
                       std::uint16_t port, int timeout_ms) {
  static std::atomic<std::uint64_t> next_id{1};
  const std::uint64_t request_id = next_id.fetch_add(1);

  const auto t0 = Clock::now();
  const TensorF encoded = forward(head, image);
  const auto t1 = Clock::now();

  const int fd = connect_with_timeout(host, port, timeout_ms);
  FdCloser guard{fd};
  send_frame(fd, tensor_frame(MsgType::infer_request, request_id, encoded));
  std::vector<std::uint8_t> buf;
  if (!recv_frame_bytes(fd, buf, timeout_ms, nullptr))
    throw NetworkError("server closed the connection without responding");
  const WireFrame response = decode_frame(buf);
  if (response.msg_type == MsgType::error) {
    const WireErrorCode reason = error_reason(response);
    throw ServerError(reason, "server returned error frame: " + to_string(reason));
  }
  if (response.msg_type != MsgType::infer_response || response.request_id != request_id)
    throw NetworkError("unexpected response frame");
  InferResult result;
  result.logits = tensor_f32_from_frame(response);

  if (!recv_frame_bytes(fd, buf, timeout_ms, nullptr))
    throw NetworkError("server closed before sending timing frame");
  const WireFrame timing = decode_frame(buf);
  const auto t2 = Clock::now();
  double tail_ms = 0;
  if (timing.msg_type == MsgType::ping && timing.payload.size() == 4) {
    float v;
    std::memcpy(&v, timing.payload.data(), 4);
    tail_ms = static_cast<double>(v);
  }
  result.timing.head_ms = ms_between(t0, t1);
  result.timing.tail_ms = tail_ms;
  result.timing.transfer_ms = ms_between(t1, t2) - tail_ms;
  return result;
}

WireFrame roundtrip_frame(const WireFrame& request, const std::string& host, std::uint16_t port,
                          int timeout_ms) {
  const int fd = connect_with_timeout(host, port, timeout_ms);
  FdCloser guard{fd};
  send_frame(fd, request);
  std::vector<std::uint8_t> buf;
  if (!recv_frame_bytes(fd, buf, timeout_ms, nullptr))
    throw NetworkError("server closed the connection without responding");
  return decode_frame(buf);
}

ClientConnection::ClientConnection(const std::string& host, std::uint16_t port, int timeout_ms)
    : fd_(connect_with_timeout(host, port, timeout_ms)), timeout_ms_(timeout_ms) {}

ClientConnection::~ClientConnection() {
  if (fd_ >= 0) ::close(fd_);
}

void ClientConnection::send(const WireFrame& frame) { send_frame(fd_, frame); }

void ClientConnection::send_raw(const std::vector<std::uint8_t>& frame_bytes) {
  const std::uint32_t len = static_cast<std::uint32_t>(frame_bytes.size());
  std::uint8_t hdr[4];
  std::memcpy(hdr, &len, 4);
  write_all(fd_, hdr, 4);
  write_all(fd_, frame_bytes.data(), frame_bytes.size());
}

WireFrame ClientConnection::receive() {
  std::vector<std::uint8_t> buf;
  if (!recv_frame_bytes(fd_, buf, timeout_ms_, nullptr))
    throw NetworkError("server closed the connection");
  return decode_frame(buf);
}

}  // namespace isplit
