#pragma once

// Newline-framed byte channels: TCP sockets and an in-memory pipe.

#include <chrono>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace eav {

class TransportError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class BindError : public TransportError {
public:
  using TransportError::TransportError;
};

class ConnectError : public TransportError {
public:
  using TransportError::TransportError;
};

class LineChannel {
public:
  enum class Status { Line, Eof, Timeout, TooLong, Error };

  struct ReadResult {
    Status status = Status::Eof;
    std::string line;  // without the trailing '\n'
    std::string error;
  };

  virtual ~LineChannel() = default;

  /// Waits at most `timeout` for one complete line of <= max_bytes
  /// (newline included).
  virtual ReadResult read_line(std::chrono::milliseconds timeout, std::size_t max_bytes) = 0;
  virtual bool write_all(std::string_view bytes) = 0;
  /// Signals end-of-stream to the peer.
  virtual void close() = 0;
};

/// Owning POSIX file descriptor.
class Fd {
public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset();

private:
  int fd_ = -1;
};

class TcpStream final : public LineChannel {
public:
  explicit TcpStream(Fd fd, std::string peer = {});

  /// Throws ConnectError on failure or when `timeout` elapses.
  static std::unique_ptr<TcpStream> connect(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout);

  ReadResult read_line(std::chrono::milliseconds timeout, std::size_t max_bytes) override;
  bool write_all(std::string_view bytes) override;
  void close() override;

  const std::string& peer() const { return peer_; }

private:
  Fd fd_;
  std::string peer_;
  std::string buf_;
  bool eof_ = false;
};

class TcpListener {
public:
  /// Port 0 picks an ephemeral port. Throws BindError.
  TcpListener(const std::string& bind_address, std::uint16_t port, int backlog = 128);

  std::uint16_t port() const { return port_; }
  const std::string& address() const { return address_; }

  /// Returns nullptr if nothing arrived within `timeout`.
  std::unique_ptr<TcpStream> accept(std::chrono::milliseconds timeout);

private:
  Fd fd_;
  std::string address_;
  std::uint16_t port_ = 0;
};

/// Two connected in-memory channel ends.
std::pair<std::unique_ptr<LineChannel>, std::unique_ptr<LineChannel>> make_memory_pipe();

}  // namespace eav
