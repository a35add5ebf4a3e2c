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

#include <array>
#include <chrono>
#include <coroutine>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spnn/prg.h"
#include "spnn/task.h"

namespace spnn {

enum class Role : std::uint8_t { kCoordinator = 0, kServer = 1, kClientA = 2, kClientB = 3 };
inline constexpr std::size_t kRoleCount = 4;
inline constexpr std::array<Role, kRoleCount> kAllRoles = {Role::kCoordinator, Role::kServer,
                                                          Role::kClientA, Role::kClientB};

std::string_view role_name(Role r);
Role parse_role(std::string_view name);
inline std::size_t role_index(Role r) { return static_cast<std::size_t>(r); }

enum class MsgType : std::uint8_t {
  kTripleDeal = 1,
  kShareTransfer = 2,
  kHiddenLayerUp = 3,
  kLastHiddenToA = 4,
  kHeadGradDown = 5,
  kInputGradDown = 6,
  kControl = 7,
  kCiphertextTransfer = 8,
  kKeyDistribution = 9,
};

std::string_view msg_type_name(MsgType t);
bool is_valid_msg_type(std::uint8_t raw);

struct Frame {
  std::uint64_t session_id = 0;
  std::uint64_t step = 0;
  MsgType type = MsgType::kControl;
  std::vector<std::uint8_t> payload;

  friend bool operator==(const Frame&, const Frame&) = default;
};

// Wire layout: the four bytes "SPNN" (0x53504E4E read big-endian), u32 payload
// length, u64 session id, u64 step, u8 message type, payload. Integers are
// little-endian.
inline constexpr std::size_t kFrameHeaderBytes = 25;
inline constexpr std::uint32_t kFrameMagic = 0x53504E4E;
inline constexpr std::uint64_t kMaxPayloadBytes = std::uint64_t{1} << 31;

struct FrameHeader {
  std::uint32_t length = 0;
  std::uint64_t session_id = 0;
  std::uint64_t step = 0;
  MsgType type = MsgType::kControl;
};

std::vector<std::uint8_t> frame_encode(const Frame& frame);
// Whole-buffer decode: the buffer must hold exactly one frame.
Frame frame_decode(std::span<const std::uint8_t> bytes);
FrameHeader parse_frame_header(std::span<const std::uint8_t> header);
inline std::size_t frame_wire_bytes(const Frame& f) { return kFrameHeaderBytes + f.payload.size(); }

// Control frames carry a one-byte subtype followed by subtype-specific bytes.
enum class ControlKind : std::uint8_t {
  kStart = 1,
  kStop = 2,
  kConfig = 3,
  kEpochStart = 4,
  kEpochReport = 5,
  kDecision = 6,
};

std::string_view control_kind_name(ControlKind k);

struct NetworkConfig {
  double bandwidth_bps = 100e6;
  double latency_s = 0.0;
  double loss_rate = 0.0;

  void validate() const;
};

// Parses "100K", "2.5M", "1G" or a plain number of bits per second.
double parse_bandwidth(std::string_view text);

struct LinkStats {
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_received = 0;
  std::uint64_t frames = 0;
  std::uint64_t retransmissions = 0;
  double busy_seconds = 0.0;       // serialisation time spent on this link
  double simulated_elapsed = 0.0;  // delivery time of the latest frame

  LinkStats& operator+=(const LinkStats& o);
};

using LinkKey = std::pair<Role, Role>;  // (from, to)

// A role's view of the network. recv() is awaited inside role coroutines.
class Endpoint {
 public:
  virtual ~Endpoint() = default;

  virtual Role self() const = 0;
  virtual void send(Role to, Frame frame) = 0;
  // Non-blocking for the simulator. Blocking transports wait here and return
  // true, so awaiting never suspends.
  virtual bool poll(Role from, Frame& out) = 0;
  // Called when poll failed; the transport resumes `h` once a frame from
  // `from` is available.
  virtual void wait(Role from, std::coroutine_handle<> h) = 0;
  virtual void on_resume() {}
  // Timestamps a named point (used for epoch timing in simulated runs).
  virtual void mark(std::string_view label) { (void)label; }
  // Simulated seconds for this role, or wall seconds since construction.
  virtual double now() const = 0;

  struct RecvAwaiter {
    Endpoint& ep;
    Role from;
    Frame frame;
    bool got = false;
    bool await_ready() { return got = ep.poll(from, frame); }
    void await_suspend(std::coroutine_handle<> h) { ep.wait(from, h); }
    Frame await_resume() {
      if (!got) got = ep.poll(from, frame);
      ep.on_resume();
      return std::move(frame);
    }
  };

  RecvAwaiter recv(Role from) { return RecvAwaiter{*this, from, {}, false}; }

  // Optional observer of every frame this endpoint receives (before the role
  // sees it). Used for audits.
  std::function<void(Role from, const Frame&)> inbound_tap;
};

// Per-role event log of a simulated run: enough to recompute timings under a
// different network without re-running the computation.
struct TraceEvent {
  enum class Kind : std::uint8_t { kCompute, kSend, kRecv, kMark } kind;
  Role peer = Role::kCoordinator;
  std::uint64_t bytes = 0;
  std::uint32_t attempts = 1;  // transmissions needed for a send (loss model)
  double seconds = 0.0;
  std::string label;
};

struct Trace {
  std::array<std::vector<TraceEvent>, kRoleCount> events;
};

struct TimingResult {
  std::array<double, kRoleCount> finish{};                       // per-role clocks
  std::vector<std::pair<std::string, double>> marks;             // (label, time) in order
  std::map<LinkKey, LinkStats> links;
  double makespan() const;
  // Difference between two marks with the given labels (first occurrence
  // of `end` after `begin`).
  double between(std::string_view begin, std::string_view end) const;
};

// Recomputes all clocks of a recorded trace under `net`.
TimingResult replay(const Trace& trace, const NetworkConfig& net);

// Single-threaded discrete-event network. Roles run as coroutines; each has
// its own simulated clock. A frame sent at local time t on link (a, b)
// starts transmission at max(t, link free time), occupies the link for
// bytes * 8 / bandwidth seconds and is delivered `latency` later.
class SimNetwork {
 public:
  struct Options {
    NetworkConfig net;
    bool measure_compute = false;  // charge wall-clock compute to role clocks
    std::uint64_t loss_seed = 0;
  };

  explicit SimNetwork(Options opts);
  ~SimNetwork();
  SimNetwork(const SimNetwork&) = delete;
  SimNetwork& operator=(const SimNetwork&) = delete;

  Endpoint& endpoint(Role r);

  // Runs the given role coroutines to completion. Rethrows the first role
  // failure; throws Error(kDeadlock) if every unfinished role is blocked.
  void run(std::vector<std::pair<Role, Task<void>*>> roles);

  const std::map<LinkKey, LinkStats>& links() const { return links_; }
  LinkStats link(Role from, Role to) const;
  double clock(Role r) const { return clocks_[role_index(r)]; }
  // Charges simulated compute time to a role (model-driven timing).
  void advance(Role r, double seconds) { add_compute(r, seconds); }
  const Trace& trace() const { return trace_; }
  TimingResult timing() const;

 private:
  class SimEndpoint;
  friend class SimEndpoint;

  struct InFlight {
    Frame frame;
    double arrival;
  };

  void deliver(Role from, Role to, Frame frame);
  bool take(Role to, Role from, Frame& out);
  void add_compute(Role r, double seconds);

  Options opts_;
  Prg loss_rng_;
  std::array<double, kRoleCount> clocks_{};
  std::map<LinkKey, double> link_free_;
  std::map<LinkKey, std::deque<InFlight>> queues_;
  std::map<LinkKey, LinkStats> links_;
  std::map<LinkKey, std::coroutine_handle<>> waiters_;
  std::deque<std::pair<Role, std::coroutine_handle<>>> ready_;
  std::vector<std::pair<std::string, double>> marks_;
  Trace trace_;
  std::array<std::unique_ptr<SimEndpoint>, kRoleCount> endpoints_;
};

}  // namespace spnn
