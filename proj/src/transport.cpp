#include "eav/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <mutex>

namespace eav {

namespace {

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

using Clock = std::chrono::steady_clock;

int remaining_ms(Clock::time_point deadline) {
  auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left < 0 ? 0 : static_cast<int>(left);
}

// Pulls one line out of `buf` if a newline is present.
bool take_line(std::string& buf, std::string& line) {
  auto nl = buf.find('\n');
  if (nl == std::string::npos) return false;
  line.assign(buf, 0, nl);
  buf.erase(0, nl + 1);
  return true;
}

}  // namespace

void Fd::reset() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

// --- TcpStream -------------------------------------------------------------

TcpStream::TcpStream(Fd fd, std::string peer) : fd_(std::move(fd)), peer_(std::move(peer)) {
  int one = 1;
  ::setsockopt(fd_.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

std::unique_ptr<TcpStream> TcpStream::connect(const std::string& host, std::uint16_t port,
                                              std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const auto service = std::to_string(port);
  if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
    throw ConnectError("resolve " + host + ": " + ::gai_strerror(rc));
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);

  const auto deadline = Clock::now() + timeout;
  std::string last_error = "no addresses";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    Fd fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, ai->ai_protocol));
    if (!fd) {
      last_error = errno_text("socket");
      continue;
    }
    int rc = ::connect(fd.get(), ai->ai_addr, ai->ai_addrlen);
    if (rc != 0 && errno != EINPROGRESS) {
      last_error = errno_text("connect");
      continue;
    }
    if (rc != 0) {
      pollfd p{fd.get(), POLLOUT, 0};
      int n = ::poll(&p, 1, remaining_ms(deadline));
      if (n <= 0) {
        last_error = n == 0 ? "connect timed out" : errno_text("poll");
        continue;
      }
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
      if (err != 0) {
        last_error = std::string("connect: ") + std::strerror(err);
        continue;
      }
    }
    int flags = ::fcntl(fd.get(), F_GETFL);
    ::fcntl(fd.get(), F_SETFL, flags & ~O_NONBLOCK);
    return std::make_unique<TcpStream>(std::move(fd), host + ":" + service);
  }
  throw ConnectError("cannot connect to " + host + ":" + service + " (" + last_error + ")");
}

LineChannel::ReadResult TcpStream::read_line(std::chrono::milliseconds timeout, std::size_t max_bytes) {
  ReadResult r;
  const auto deadline = Clock::now() + timeout;
  while (true) {
    if (take_line(buf_, r.line)) {
      if (r.line.size() + 1 > max_bytes) {
        r.status = Status::TooLong;
        return r;
      }
      r.status = Status::Line;
      return r;
    }
    if (buf_.size() >= max_bytes) {
      r.status = Status::TooLong;
      return r;
    }
    if (eof_ || !fd_) {
      r.status = Status::Eof;
      return r;
    }
    pollfd p{fd_.get(), POLLIN, 0};
    int n = ::poll(&p, 1, remaining_ms(deadline));
    if (n < 0) {
      if (errno == EINTR) continue;
      r.status = Status::Error;
      r.error = errno_text("poll");
      return r;
    }
    if (n == 0) {
      r.status = Status::Timeout;
      return r;
    }
    char chunk[4096];
    ssize_t got = ::recv(fd_.get(), chunk, sizeof chunk, 0);
    if (got < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      r.status = Status::Error;
      r.error = errno_text("recv");
      return r;
    }
    if (got == 0) {
      eof_ = true;
      continue;
    }
    buf_.append(chunk, static_cast<std::size_t>(got));
  }
}

bool TcpStream::write_all(std::string_view bytes) {
  while (!bytes.empty()) {
    if (!fd_) return false;
    ssize_t n = ::send(fd_.get(), bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

void TcpStream::close() {
  if (fd_) ::shutdown(fd_.get(), SHUT_WR);
}

// --- TcpListener -----------------------------------------------------------

TcpListener::TcpListener(const std::string& bind_address, std::uint16_t port, int backlog) : address_(bind_address) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE | AI_NUMERICHOST;
  addrinfo* res = nullptr;
  const auto service = std::to_string(port);
  if (int rc = ::getaddrinfo(bind_address.c_str(), service.c_str(), &hints, &res); rc != 0)
    throw BindError("invalid bind address " + bind_address + ": " + ::gai_strerror(rc));
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);

  Fd fd(::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol));
  if (!fd) throw BindError(errno_text("socket"));
  int one = 1;
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd.get(), res->ai_addr, res->ai_addrlen) != 0)
    throw BindError("bind " + bind_address + ":" + service + ": " + std::strerror(errno));
  if (::listen(fd.get(), backlog) != 0) throw BindError(errno_text("listen"));

  sockaddr_storage ss{};
  socklen_t len = sizeof ss;
  ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&ss), &len);
  if (ss.ss_family == AF_INET)
    port_ = ntohs(reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
  else
    port_ = ntohs(reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port);
  fd_ = std::move(fd);
}

std::unique_ptr<TcpStream> TcpListener::accept(std::chrono::milliseconds timeout) {
  pollfd p{fd_.get(), POLLIN, 0};
  int n = ::poll(&p, 1, static_cast<int>(timeout.count()));
  if (n <= 0) return nullptr;
  sockaddr_storage ss{};
  socklen_t len = sizeof ss;
  Fd conn(::accept4(fd_.get(), reinterpret_cast<sockaddr*>(&ss), &len, SOCK_CLOEXEC));
  if (!conn) return nullptr;
  char host[INET6_ADDRSTRLEN] = {};
  std::uint16_t peer_port = 0;
  if (ss.ss_family == AF_INET) {
    auto* a = reinterpret_cast<sockaddr_in*>(&ss);
    ::inet_ntop(AF_INET, &a->sin_addr, host, sizeof host);
    peer_port = ntohs(a->sin_port);
  } else {
    auto* a = reinterpret_cast<sockaddr_in6*>(&ss);
    ::inet_ntop(AF_INET6, &a->sin6_addr, host, sizeof host);
    peer_port = ntohs(a->sin6_port);
  }
  return std::make_unique<TcpStream>(std::move(conn), std::string(host) + ":" + std::to_string(peer_port));
}

// --- memory pipe -----------------------------------------------------------

namespace {

struct PipeState {
  std::mutex mu;
  std::condition_variable cv;
  std::string buf[2];
  bool closed[2] = {false, false};
};

class MemoryEnd final : public LineChannel {
public:
  MemoryEnd(std::shared_ptr<PipeState> st, int self) : st_(std::move(st)), self_(self) {}
  ~MemoryEnd() override { close(); }

  ReadResult read_line(std::chrono::milliseconds timeout, std::size_t max_bytes) override {
    ReadResult r;
    std::unique_lock lock(st_->mu);
    auto& in = st_->buf[self_];
    const bool peer_closed_or_data = st_->cv.wait_for(lock, timeout, [&] {
      return in.find('\n') != std::string::npos || in.size() >= max_bytes || st_->closed[1 - self_];
    });
    if (take_line(in, r.line)) {
      r.status = r.line.size() + 1 > max_bytes ? Status::TooLong : Status::Line;
    } else if (in.size() >= max_bytes) {
      r.status = Status::TooLong;
    } else {
      r.status = peer_closed_or_data ? Status::Eof : Status::Timeout;
    }
    return r;
  }

  bool write_all(std::string_view bytes) override {
    std::lock_guard lock(st_->mu);
    if (st_->closed[self_]) return false;
    st_->buf[1 - self_].append(bytes);
    st_->cv.notify_all();
    return true;
  }

  void close() override {
    std::lock_guard lock(st_->mu);
    st_->closed[self_] = true;
    st_->cv.notify_all();
  }

private:
  std::shared_ptr<PipeState> st_;
  int self_;
};

}  // namespace

std::pair<std::unique_ptr<LineChannel>, std::unique_ptr<LineChannel>> make_memory_pipe() {
  auto st = std::make_shared<PipeState>();
  return {std::make_unique<MemoryEnd>(st, 0), std::make_unique<MemoryEnd>(st, 1)};
}

}  // namespace eav
