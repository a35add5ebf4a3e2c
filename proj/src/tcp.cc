// Copyright 2026 The SPNN Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "spnn/tcp.h"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <set>

#include "spnn/error.h"

namespace spnn {
namespace {

using SteadyClock = std::chrono::steady_clock;

int remaining_ms(SteadyClock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - SteadyClock::now());
  return static_cast<int>(std::max<std::int64_t>(0, left.count()));
}

// Reads exactly n bytes. With a deadline, returns false on timeout; throws
// PeerClosed on EOF or error.
bool read_exact(int fd, std::uint8_t* buf, std::size_t n,
                const SteadyClock::time_point* deadline = nullptr) {
  std::size_t got = 0;
  while (got < n) {
    if (deadline) {
      pollfd p{fd, POLLIN, 0};
      const int ready = ::poll(&p, 1, remaining_ms(*deadline));
      if (ready == 0) return false;
      if (ready < 0 && errno != EINTR) throw Error(ErrorCode::kPeerClosed, std::strerror(errno));
      if (ready < 0) continue;
    }
    const ssize_t r = ::recv(fd, buf + got, n - got, 0);
    if (r == 0) throw Error(ErrorCode::kPeerClosed, "connection closed by peer");
    if (r < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kPeerClosed, std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

void write_all(int fd, const std::vector<std::uint8_t>& bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t w = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kPeerClosed, std::string("write failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(w);
  }
}

// Returns nullopt on timeout.
std::optional<Frame> read_frame(int fd, const SteadyClock::time_point* deadline) {
  std::uint8_t header[kFrameHeaderBytes];
  if (!read_exact(fd, header, kFrameHeaderBytes, deadline)) return std::nullopt;
  const FrameHeader h = parse_frame_header(header);
  Frame f;
  f.session_id = h.session_id;
  f.step = h.step;
  f.type = h.type;
  f.payload.resize(h.length);
  if (h.length > 0 && !read_exact(fd, f.payload.data(), h.length, deadline)) return std::nullopt;
  return f;
}

Frame start_frame(std::uint64_t session, Role self) {
  return Frame{session, 0, MsgType::kControl,
               {static_cast<std::uint8_t>(ControlKind::kStart), static_cast<std::uint8_t>(self)}};
}

// Validates a Control(Start) frame and returns the announced role.
std::optional<Role> check_start(const Frame& f, std::uint64_t session) {
  if (f.type != MsgType::kControl || f.payload.size() != 2 ||
      f.payload[0] != static_cast<std::uint8_t>(ControlKind::kStart) || f.session_id != session ||
      f.payload[1] >= kRoleCount) {
    return std::nullopt;
  }
  return static_cast<Role>(f.payload[1]);
}

sockaddr_in resolve(const HostPort& hp) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(hp.port);
  if (hp.host.empty() || hp.host == "*") {
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    return addr;
  }
  if (::inet_pton(AF_INET, hp.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(hp.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw Error(ErrorCode::kInvalidConfig, "cannot resolve host '" + hp.host + "'");
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

HostPort parse_host_port(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::kInvalidConfig, "address '" + text + "' lacks a port");
  HostPort hp;
  hp.host = text.substr(0, colon);
  const std::string port = text.substr(colon + 1);
  char* end = nullptr;
  const long v = std::strtol(port.c_str(), &end, 10);
  if (port.empty() || *end != '\0' || v < 0 || v > 65535) {
    throw Error(ErrorCode::kInvalidConfig, "bad port in '" + text + "'");
  }
  hp.port = static_cast<std::uint16_t>(v);
  return hp;
}

TcpListener TcpListener::bind(const std::string& address) {
  HostPort hp = parse_host_port(address);
  if (const char* env = std::getenv("SPNN_BIND_ADDR"); env != nullptr && *env != '\0') hp.host = env;
  const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw Error(ErrorCode::kIo, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = resolve(hp);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd, 16) != 0) {
    const std::string why = std::strerror(errno);
    ::close(fd);
    throw Error(ErrorCode::kIo, "cannot listen on " + address + ": " + why);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  return TcpListener(fd, ntohs(addr.sin_port));
}

TcpListener::TcpListener(TcpListener&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), port_(other.port_) {}

TcpListener& TcpListener::operator=(TcpListener&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = std::exchange(other.fd_, -1);
    port_ = other.port_;
  }
  return *this;
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

int TcpListener::release() { return std::exchange(fd_, -1); }

TcpEndpoint::TcpEndpoint(Role self, TcpListener listener, const std::map<Role, std::string>& endpoints,
                         TcpOptions opts, std::vector<Role> peers)
    : self_(self), opts_(opts), started_(SteadyClock::now()) {
  if (peers.empty()) {
    for (Role r : kAllRoles) {
      if (r != self) peers.push_back(r);
    }
  }
  const auto deadline = SteadyClock::now() + opts_.handshake_timeout;
  const int listen_fd = listener.release();
  struct ListenGuard {
    int fd;
    ~ListenGuard() {
      if (fd >= 0) ::close(fd);
    }
  } guard{listen_fd};

  try {
    // Dial lower-numbered peers.
    for (Role peer : peers) {
      if (peer >= self) continue;
      auto it = endpoints.find(peer);
      if (it == endpoints.end()) {
        throw Error(ErrorCode::kInvalidConfig, "no endpoint for " + std::string(role_name(peer)));
      }
      const sockaddr_in addr = resolve(parse_host_port(it->second));
      int fd = -1;
      for (;;) {
        fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
        if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) break;
        const int err = errno;
        ::close(fd);
        fd = -1;
        if (SteadyClock::now() >= deadline) {
          throw Error(ErrorCode::kConnectRefused, "cannot reach " + std::string(role_name(peer)) +
                                                      " at " + it->second + ": " + std::strerror(err));
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      }
      set_nodelay(fd);
      auto c = std::make_unique<Connection>();
      c->fd = fd;
      conns_[peer] = std::move(c);
      write_all(fd, frame_encode(start_frame(opts_.session_id, self)));
      std::optional<Frame> reply;
      try {
        reply = read_frame(fd, &deadline);
      } catch (const Error&) {
        reply.reset();
      }
      if (!reply || check_start(*reply, opts_.session_id) != peer) {
        throw Error(ErrorCode::kHandshakeTimeout,
                    "no valid Start reply from " + std::string(role_name(peer)));
      }
    }

    // Accept higher-numbered peers.
    std::set<Role> pending;
    for (Role peer : peers) {
      if (peer > self) pending.insert(peer);
    }
    while (!pending.empty()) {
      pollfd p{listen_fd, POLLIN, 0};
      const int ready = ::poll(&p, 1, remaining_ms(deadline));
      if (ready == 0) {
        throw Error(ErrorCode::kHandshakeTimeout,
                    "peers did not complete the handshake with " + std::string(role_name(self)));
      }
      if (ready < 0) continue;
      const int fd = ::accept4(listen_fd, nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) continue;
      set_nodelay(fd);
      std::optional<Frame> hello;
      try {
        hello = read_frame(fd, &deadline);
      } catch (const Error&) {
        hello.reset();
      }
      const auto who = hello ? check_start(*hello, opts_.session_id) : std::nullopt;
      if (!who || !pending.contains(*who)) {
        ::close(fd);
        continue;
      }
      write_all(fd, frame_encode(start_frame(opts_.session_id, self)));
      auto c = std::make_unique<Connection>();
      c->fd = fd;
      conns_[*who] = std::move(c);
      pending.erase(*who);
    }
  } catch (...) {
    for (auto& [peer, c] : conns_) ::close(c->fd);
    conns_.clear();
    throw;
  }

  for (auto& [peer, c] : conns_) {
    Connection& ref = *c;
    const Role p = peer;
    c->reader = std::thread([this, p, &ref] { reader_loop(p, ref); });
  }
}

TcpEndpoint::~TcpEndpoint() { close(); }

void TcpEndpoint::close() {
  for (auto& [peer, c] : conns_) {
    if (c->fd >= 0) ::shutdown(c->fd, SHUT_RDWR);
  }
  for (auto& [peer, c] : conns_) {
    if (c->reader.joinable()) c->reader.join();
    if (c->fd >= 0) {
      ::close(c->fd);
      c->fd = -1;
    }
  }
}

void TcpEndpoint::reader_loop(Role, Connection& c) {
  try {
    for (;;) {
      std::optional<Frame> f = read_frame(c.fd, nullptr);
      std::lock_guard lock(c.mu);
      c.stats.bytes_received += frame_wire_bytes(*f);
      c.inbox.push_back(std::move(*f));
      c.cv.notify_all();
    }
  } catch (const std::exception& e) {
    std::lock_guard lock(c.mu);
    c.closed = true;
    c.close_reason = e.what();
    c.cv.notify_all();
  }
}

TcpEndpoint::Connection& TcpEndpoint::conn(Role peer) {
  auto it = conns_.find(peer);
  if (it == conns_.end()) {
    throw Error(ErrorCode::kLinkClosed, "no connection to " + std::string(role_name(peer)));
  }
  return *it->second;
}

void TcpEndpoint::send(Role to, Frame frame) {
  Connection& c = conn(to);
  const auto bytes = frame_encode(frame);
  std::lock_guard lock(c.write_mu);
  write_all(c.fd, bytes);
  std::lock_guard stats_lock(c.mu);
  c.stats.bytes_sent += bytes.size();
  c.stats.frames += 1;
}

bool TcpEndpoint::poll(Role from, Frame& out) {
  Connection& c = conn(from);
  std::unique_lock lock(c.mu);
  c.cv.wait(lock, [&] { return !c.inbox.empty() || c.closed; });
  if (c.inbox.empty()) {
    throw Error(ErrorCode::kPeerClosed,
                std::string(role_name(from)) + " closed the connection (" + c.close_reason + ")");
  }
  out = std::move(c.inbox.front());
  c.inbox.pop_front();
  lock.unlock();
  if (inbound_tap) inbound_tap(from, out);
  return true;
}

double TcpEndpoint::now() const {
  return std::chrono::duration<double>(SteadyClock::now() - started_).count();
}

LinkStats TcpEndpoint::stats(Role peer) const {
  auto it = conns_.find(peer);
  if (it == conns_.end()) return {};
  std::lock_guard lock(it->second->mu);
  return it->second->stats;
}

}  // namespace spnn
