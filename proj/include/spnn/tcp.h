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

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "spnn/transport.h"

namespace spnn {

// "host:port". The host may be a name, IPv4 literal or empty (any address).
struct HostPort {
  std::string host;
  std::uint16_t port = 0;
};
HostPort parse_host_port(const std::string& text);

// A bound, listening TCP socket. SPNN_BIND_ADDR, when set, replaces the host
// part of the address given here.
class TcpListener {
 public:
  static TcpListener bind(const std::string& address);

  TcpListener(TcpListener&& other) noexcept;
  TcpListener& operator=(TcpListener&& other) noexcept;
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener();

  std::uint16_t port() const { return port_; }
  int release();

 private:
  TcpListener(int fd, std::uint16_t port) : fd_(fd), port_(port) {}
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

struct TcpOptions {
  std::uint64_t session_id = 0;
  std::chrono::milliseconds handshake_timeout{10000};
};

// Full-mesh socket transport. Each role dials every lower-numbered role and
// accepts every higher-numbered one; each connection opens with a
// Control(Start) exchange that must agree on the session id. A reader thread
// per connection drains the socket into a queue, so writers never block on a
// peer that is itself blocked writing.
class TcpEndpoint final : public Endpoint {
 public:
  TcpEndpoint(Role self, TcpListener listener, const std::map<Role, std::string>& endpoints,
              TcpOptions opts, std::vector<Role> peers = {});
  ~TcpEndpoint() override;

  Role self() const override { return self_; }
  void send(Role to, Frame frame) override;
  bool poll(Role from, Frame& out) override;
  void wait(Role, std::coroutine_handle<>) override {}
  double now() const override;

  LinkStats stats(Role peer) const;
  void close();

 private:
  struct Connection {
    int fd = -1;
    std::mutex write_mu;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Frame> inbox;
    bool closed = false;
    std::string close_reason;
    LinkStats stats;
    std::thread reader;
  };

  void reader_loop(Role peer, Connection& c);
  Connection& conn(Role peer);

  Role self_;
  TcpOptions opts_;
  std::map<Role, std::unique_ptr<Connection>> conns_;
  std::chrono::steady_clock::time_point started_;
};

}  // namespace spnn
