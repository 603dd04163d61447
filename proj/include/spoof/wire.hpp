#pragma once

// Newline-delimited JSON oracle protocol over TCP or a child process's stdio.
//
//   client -> {"op":"hello"}
//   server <- {"op":"hello","num_classes":N,"input_shape":[C,H,W]}
//   client -> {"op":"predict","id":u64,"shape":[B,C,H,W],"data":[...]}
//   server <- {"op":"probs","id":u64,"probs":[[...N...] x B]}
//          or {"op":"error","id":u64,"message":"..."}

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "spoof/error.hpp"
#include "spoof/image.hpp"
#include "spoof/oracle.hpp"

namespace spoof {

/// Bidirectional line transport.
class LineChannel {
 public:
  virtual ~LineChannel() = default;
  virtual void write_line(const std::string& line) = 0;
  /// Returns std::nullopt on orderly end of stream.
  virtual std::optional<std::string> read_line(int timeout_ms) = 0;
};

/// LineChannel over a pair of file descriptors (a socket uses the same fd
/// twice). Owns and closes the descriptors.
class FdChannel : public LineChannel {
 public:
  FdChannel(int read_fd, int write_fd, bool is_socket) : read_fd_(read_fd), write_fd_(write_fd), socket_(is_socket) {}
  ~FdChannel() override { close_fds(); }

  FdChannel(const FdChannel&) = delete;
  FdChannel& operator=(const FdChannel&) = delete;

  void write_line(const std::string& line) override {
    std::string framed = line;
    framed.push_back('\n');
    std::size_t sent = 0;
    while (sent < framed.size()) {
      const ssize_t n = socket_ ? ::send(write_fd_, framed.data() + sent, framed.size() - sent, MSG_NOSIGNAL)
                                : ::write(write_fd_, framed.data() + sent, framed.size() - sent);
      if (n < 0) {
        if (errno == EINTR) continue;
        fail(ErrorKind::Transport, std::string("write failed: ") + std::strerror(errno));
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  std::optional<std::string> read_line(int timeout_ms) override {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
      if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      if (eof_) {
        if (buffer_.empty()) return std::nullopt;
        std::string line = std::move(buffer_);
        buffer_.clear();
        return line;
      }
      int wait_ms = -1;
      if (timeout_ms >= 0) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) fail(ErrorKind::Transport, "timed out waiting for a response line");
        wait_ms = static_cast<int>(left.count());
      }
      pollfd pfd{read_fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, wait_ms);
      if (ready < 0) {
        if (errno == EINTR) continue;
        fail(ErrorKind::Transport, std::string("poll failed: ") + std::strerror(errno));
      }
      if (ready == 0) continue;
      char chunk[65536];
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        fail(ErrorKind::Transport, std::string("read failed: ") + std::strerror(errno));
      }
      if (n == 0) {
        eof_ = true;
      } else {
        buffer_.append(chunk, static_cast<std::size_t>(n));
      }
    }
  }

 protected:
  void close_fds() {
    if (read_fd_ >= 0) ::close(read_fd_);
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    read_fd_ = write_fd_ = -1;
  }

 private:
  int read_fd_;
  int write_fd_;
  bool socket_;
  bool eof_ = false;
  std::string buffer_;
};

/// Child process speaking the protocol on its stdin/stdout.
class ProcessChannel final : public FdChannel {
 public:
  ProcessChannel(int read_fd, int write_fd, pid_t pid) : FdChannel(read_fd, write_fd, false), pid_(pid) {}
  ~ProcessChannel() override {
    close_fds();
    if (pid_ > 0) {
      int status = 0;
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, &status, WNOHANG) != 0) return;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
      ::kill(pid_, SIGTERM);
      ::waitpid(pid_, &status, 0);
    }
  }

 private:
  pid_t pid_;
};

inline std::unique_ptr<LineChannel> connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* result = nullptr;
  const std::string service = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &result); rc != 0) {
    fail(ErrorKind::Transport, "cannot resolve " + host + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  for (addrinfo* ai = result; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(result);
  if (fd < 0) fail(ErrorKind::Transport, "cannot connect to " + host + ":" + service);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return std::make_unique<FdChannel>(fd, fd, true);
}

/// Launches `command` through /bin/sh and talks to it over pipes.
inline std::unique_ptr<LineChannel> spawn_stdio(const std::string& command) {
  static std::once_flag ignore_sigpipe;
  std::call_once(ignore_sigpipe, [] { ::signal(SIGPIPE, SIG_IGN); });
  int to_child[2];
  int from_child[2];
  if (::pipe(to_child) != 0) fail(ErrorKind::Transport, "pipe failed");
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    fail(ErrorKind::Transport, "pipe failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) fail(ErrorKind::Transport, "fork failed");
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  return std::make_unique<ProcessChannel>(from_child[0], to_child[1], pid);
}

/// "tcp://host:port", "host:port" or "stdio:<command>".
inline std::unique_ptr<LineChannel> open_channel(const std::string& address) {
  if (address.rfind("stdio:", 0) == 0) return spawn_stdio(address.substr(6));
  std::string rest = address.rfind("tcp://", 0) == 0 ? address.substr(6) : address;
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos) fail(ErrorKind::Configuration, "address '" + address + "' lacks a port");
  const std::string host = rest.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(rest.substr(colon + 1));
  } catch (const std::exception&) {
    fail(ErrorKind::Configuration, "bad port in address '" + address + "'");
  }
  if (port <= 0 || port > 65535) fail(ErrorKind::Configuration, "bad port in address '" + address + "'");
  return connect_tcp(host.empty() ? "127.0.0.1" : host, static_cast<std::uint16_t>(port));
}

namespace wire {

inline nlohmann::json predict_frame(std::uint64_t id, std::span<const Image> batch) {
  const auto& s = batch.front().shape();
  std::vector<double> data;
  data.reserve(batch.size() * s.size());
  for (const auto& img : batch)
    for (float v : img.data()) data.push_back(static_cast<double>(v));
  return {{"op", "predict"}, {"id", id}, {"shape", {batch.size(), s.channels, s.height, s.width}}, {"data", std::move(data)}};
}

inline nlohmann::json error_frame(std::uint64_t id, const std::string& message) {
  return {{"op", "error"}, {"id", id}, {"message", message}};
}

/// Server-side dispatch of one request line. Never throws: failures become
/// error frames carrying the request id when one could be read.
inline std::string handle_request(const std::string& line, Oracle& model, std::size_t max_batch) {
  std::uint64_t id = 0;
  try {
    const auto req = nlohmann::json::parse(line);
    if (req.contains("id") && req["id"].is_number_unsigned()) id = req["id"].get<std::uint64_t>();
    const auto op = req.at("op").get<std::string>();
    if (op == "hello") {
      const auto& s = model.input_shape();
      return nlohmann::json{{"op", "hello"}, {"num_classes", model.num_classes()},
                            {"input_shape", {s.channels, s.height, s.width}}}
          .dump();
    }
    if (op != "predict") return error_frame(id, "unknown op '" + op + "'").dump();
    if (!req.contains("id") || !req["id"].is_number_unsigned()) return error_frame(0, "predict requires an unsigned id").dump();
    const auto shape = req.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 4) return error_frame(id, "shape must be [B,C,H,W]").dump();
    const ImageShape image_shape{shape[1], shape[2], shape[3]};
    if (image_shape != model.input_shape()) {
      return error_frame(id, "expected images of shape " + to_string(model.input_shape())).dump();
    }
    if (shape[0] == 0) return error_frame(id, "empty batch").dump();
    if (shape[0] > max_batch) return error_frame(id, "batch of " + std::to_string(shape[0]) + " exceeds cap " + std::to_string(max_batch)).dump();
    const auto& data = req.at("data");
    if (!data.is_array() || data.size() != shape[0] * image_shape.size()) {
      return error_frame(id, "data length does not match shape").dump();
    }
    std::vector<Image> batch;
    batch.reserve(shape[0]);
    for (std::size_t b = 0; b < shape[0]; ++b) {
      std::vector<float> values(image_shape.size());
      for (std::size_t i = 0; i < values.size(); ++i) values[i] = data[b * image_shape.size() + i].get<float>();
      batch.emplace_back(image_shape, std::move(values));
    }
    const auto probs = model.predict(batch);
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& p : probs) rows.push_back(p.probs);
    return nlohmann::json{{"op", "probs"}, {"id", id}, {"probs", std::move(rows)}}.dump();
  } catch (const std::exception& e) {
    return error_frame(id, e.what()).dump();
  }
}

/// Answers requests on `channel` until end of stream.
inline void serve_channel(LineChannel& channel, Oracle& model, std::size_t max_batch = 4096) {
  while (auto line = channel.read_line(-1)) {
    if (line->empty()) continue;
    channel.write_line(handle_request(*line, model, max_batch));
  }
}

}  // namespace wire

/// Oracle that forwards queries to a remote classifier over the wire
/// protocol. Requests on one connection are serialized.
class RemoteOracle final : public Oracle {
 public:
  struct Hello {
    std::size_t num_classes = 0;
    ImageShape input_shape;
  };

  RemoteOracle(std::unique_ptr<LineChannel> channel, int timeout_ms = 60000, std::size_t batch_capacity = 256)
      : RemoteOracle(std::move(channel), timeout_ms, batch_capacity, Handshake{}) {}

  explicit RemoteOracle(const std::string& address, int timeout_ms = 60000, std::size_t batch_capacity = 256)
      : RemoteOracle(open_channel(address), timeout_ms, batch_capacity) {}

 protected:
  std::vector<ProbVector> evaluate(std::span<const Image> batch) override {
    std::lock_guard lock(mutex_);
    const std::uint64_t id = next_id_++;
    nlohmann::json reply;
    try {
      channel_->write_line(wire::predict_frame(id, batch).dump());
      auto line = channel_->read_line(timeout_ms_);
      if (!line) fail(ErrorKind::Transport, "connection closed");
      reply = nlohmann::json::parse(*line);
    } catch (const Error& e) {
      fail(ErrorKind::Transport, "request id " + std::to_string(id) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Protocol, "request id " + std::to_string(id) + ": malformed response: " + e.what());
    }
    try {
      const auto op = reply.at("op").get<std::string>();
      const auto reply_id = reply.at("id").get<std::uint64_t>();
      if (reply_id != id) {
        fail(ErrorKind::Protocol, "response id " + std::to_string(reply_id) + " does not match request id " + std::to_string(id));
      }
      if (op == "error") {
        fail(ErrorKind::Transport, "request id " + std::to_string(id) + ": server error: " + reply.value("message", std::string{}));
      }
      if (op != "probs") fail(ErrorKind::Protocol, "request id " + std::to_string(id) + ": unexpected op '" + op + "'");
      const auto& rows = reply.at("probs");
      if (!rows.is_array() || rows.size() != batch.size()) {
        fail(ErrorKind::Protocol, "request id " + std::to_string(id) + ": expected " + std::to_string(batch.size()) + " probability vectors");
      }
      std::vector<ProbVector> out;
      out.reserve(rows.size());
      for (const auto& row : rows) {
        ProbVector p{row.get<std::vector<double>>()};
        if (p.size() != num_classes()) {
          fail(ErrorKind::Protocol, "request id " + std::to_string(id) + ": probability vector has length " +
                                        std::to_string(p.size()) + ", expected " + std::to_string(num_classes()));
        }
        out.push_back(std::move(p));
      }
      return out;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Protocol, "request id " + std::to_string(id) + ": malformed response: " + e.what());
    }
  }

 private:
  struct Handshake {};

  RemoteOracle(std::unique_ptr<LineChannel> channel, int timeout_ms, std::size_t batch_capacity, Handshake)
      : RemoteOracle(handshake(std::move(channel), timeout_ms), timeout_ms, batch_capacity) {}

  RemoteOracle(std::pair<std::unique_ptr<LineChannel>, Hello> connected, int timeout_ms, std::size_t batch_capacity)
      : Oracle(connected.second.num_classes, connected.second.input_shape, batch_capacity),
        channel_(std::move(connected.first)),
        timeout_ms_(timeout_ms) {}

  static std::pair<std::unique_ptr<LineChannel>, Hello> handshake(std::unique_ptr<LineChannel> channel, int timeout_ms) {
    if (!channel) fail(ErrorKind::Transport, "no channel");
    channel->write_line(R"({"op":"hello"})");
    const auto line = channel->read_line(timeout_ms);
    if (!line) fail(ErrorKind::Transport, "connection closed during handshake");
    try {
      const auto reply = nlohmann::json::parse(*line);
      if (reply.at("op").get<std::string>() != "hello") fail(ErrorKind::Protocol, "handshake reply is not a hello frame");
      const auto shape = reply.at("input_shape").get<std::vector<std::size_t>>();
      if (shape.size() != 3) fail(ErrorKind::Protocol, "input_shape must be [C,H,W]");
      Hello hello{reply.at("num_classes").get<std::size_t>(), {shape[0], shape[1], shape[2]}};
      return {std::move(channel), hello};
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Protocol, std::string("malformed hello: ") + e.what());
    }
  }

  std::unique_ptr<LineChannel> channel_;
  int timeout_ms_;
  std::mutex mutex_;
  std::uint64_t next_id_ = 1;
};

/// Oracle returning the uniform distribution for every input.
inline std::unique_ptr<Oracle> make_uniform_oracle(std::size_t num_classes, ImageShape shape) {
  return std::make_unique<FunctionOracle>(num_classes, shape, [num_classes](const Image&) {
    return ProbVector{std::vector<double>(num_classes, 1.0 / static_cast<double>(num_classes))};
  });
}

/// Loopback TCP server answering the wire protocol from an Oracle, one
/// thread per connection. Binds 127.0.0.1; port 0 picks a free port.
class TcpServer {
 public:
  TcpServer(Oracle& model, std::uint16_t port = 0, std::size_t max_batch = 4096) : model_(model), max_batch_(max_batch) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) fail(ErrorKind::Transport, "socket failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 16) != 0) {
      ::close(listen_fd_);
      fail(ErrorKind::Transport, "cannot listen on port " + std::to_string(port) + ": " + std::strerror(errno));
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  ~TcpServer() { stop(); }

  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const noexcept { return port_; }

  void stop() {
    if (stopping_.exchange(true)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::thread> workers;
    {
      std::lock_guard lock(mutex_);
      for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
      workers.swap(workers_);
    }
    for (auto& t : workers) t.join();
  }

  /// Blocks the calling thread until stop() is called from elsewhere.
  void wait() {
    if (acceptor_.joinable()) acceptor_.join();
  }

 private:
  void accept_loop() {
    while (!stopping_) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        return;
      }
      std::lock_guard lock(mutex_);
      client_fds_.push_back(fd);
      workers_.emplace_back([this, fd] {
        FdChannel channel(fd, fd, true);
        try {
          while (auto line = channel.read_line(-1)) {
            if (line->empty()) continue;
            std::string reply;
            {
              std::lock_guard model_lock(model_mutex_);
              reply = wire::handle_request(*line, model_, max_batch_);
            }
            channel.write_line(reply);
          }
        } catch (const Error&) {
          // peer went away
        }
      });
    }
  }

  Oracle& model_;
  std::size_t max_batch_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mutex_;
  std::mutex model_mutex_;
  std::vector<int> client_fds_;
  std::vector<std::thread> workers_;
};

}  // namespace spoof
