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

#include "spnn/transport.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string>

#include "spnn/error.h"

namespace spnn {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{p[i]} << (8 * i);
  return v;
}
std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

using Clock = std::chrono::steady_clock;

double transmission_seconds(std::uint64_t bytes, const NetworkConfig& net) {
  return static_cast<double>(bytes) * 8.0 / net.bandwidth_bps;
}

}  // namespace

std::string_view role_name(Role r) {
  switch (r) {
    case Role::kCoordinator: return "coordinator";
    case Role::kServer: return "server";
    case Role::kClientA: return "client_a";
    case Role::kClientB: return "client_b";
  }
  return "unknown";
}

Role parse_role(std::string_view name) {
  for (Role r : kAllRoles) {
    if (role_name(r) == name) return r;
  }
  if (name == "a" || name == "A") return Role::kClientA;
  if (name == "b" || name == "B") return Role::kClientB;
  throw Error(ErrorCode::kInvalidConfig, "unknown role '" + std::string(name) + "'");
}

std::string_view msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::kTripleDeal: return "TripleDeal";
    case MsgType::kShareTransfer: return "ShareTransfer";
    case MsgType::kHiddenLayerUp: return "HiddenLayerUp";
    case MsgType::kLastHiddenToA: return "LastHiddenToA";
    case MsgType::kHeadGradDown: return "HeadGradDown";
    case MsgType::kInputGradDown: return "InputGradDown";
    case MsgType::kControl: return "Control";
    case MsgType::kCiphertextTransfer: return "CiphertextTransfer";
    case MsgType::kKeyDistribution: return "KeyDistribution";
  }
  return "Unknown";
}

bool is_valid_msg_type(std::uint8_t raw) { return raw >= 1 && raw <= 9; }

std::string_view control_kind_name(ControlKind k) {
  switch (k) {
    case ControlKind::kStart: return "Start";
    case ControlKind::kStop: return "Stop";
    case ControlKind::kConfig: return "Config";
    case ControlKind::kEpochStart: return "EpochStart";
    case ControlKind::kEpochReport: return "EpochReport";
    case ControlKind::kDecision: return "Decision";
  }
  return "Unknown";
}

std::vector<std::uint8_t> frame_encode(const Frame& frame) {
  if (frame.payload.size() > kMaxPayloadBytes) {
    throw Error(ErrorCode::kFrameTooLarge,
                "payload of " + std::to_string(frame.payload.size()) + " bytes");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kFrameHeaderBytes + frame.payload.size());
  for (char c : {'S', 'P', 'N', 'N'}) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, static_cast<std::uint32_t>(frame.payload.size()));
  put_u64(out, frame.session_id);
  put_u64(out, frame.step);
  out.push_back(static_cast<std::uint8_t>(frame.type));
  out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  return out;
}

FrameHeader parse_frame_header(std::span<const std::uint8_t> h) {
  if (h.size() < kFrameHeaderBytes) throw Error(ErrorCode::kFrameCorrupt, "truncated frame header");
  if (h[0] != 'S' || h[1] != 'P' || h[2] != 'N' || h[3] != 'N') {
    throw Error(ErrorCode::kFrameCorrupt, "bad frame magic");
  }
  FrameHeader out;
  out.length = get_u32(h.data() + 4);
  out.session_id = get_u64(h.data() + 8);
  out.step = get_u64(h.data() + 16);
  if (!is_valid_msg_type(h[24])) {
    throw Error(ErrorCode::kFrameCorrupt, "unknown message type " + std::to_string(h[24]));
  }
  out.type = static_cast<MsgType>(h[24]);
  if (out.length > kMaxPayloadBytes) throw Error(ErrorCode::kFrameTooLarge, "declared payload too large");
  return out;
}

Frame frame_decode(std::span<const std::uint8_t> bytes) {
  const FrameHeader h = parse_frame_header(bytes);
  if (bytes.size() != kFrameHeaderBytes + h.length) {
    throw Error(ErrorCode::kFrameCorrupt, "frame length does not match buffer");
  }
  Frame f;
  f.session_id = h.session_id;
  f.step = h.step;
  f.type = h.type;
  f.payload.assign(bytes.begin() + kFrameHeaderBytes, bytes.end());
  return f;
}

void NetworkConfig::validate() const {
  if (!(bandwidth_bps > 0.0) || !std::isfinite(bandwidth_bps)) {
    throw Error(ErrorCode::kInvalidConfig, "bandwidth must be positive");
  }
  if (!(latency_s >= 0.0) || !std::isfinite(latency_s)) {
    throw Error(ErrorCode::kInvalidConfig, "latency must be non-negative");
  }
  if (!(loss_rate >= 0.0 && loss_rate < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "loss rate must lie in [0, 1)");
  }
}

double parse_bandwidth(std::string_view text) {
  if (text.empty()) throw Error(ErrorCode::kInvalidConfig, "empty bandwidth");
  double scale = 1.0;
  std::string body(text);
  if (body.size() > 3 && (body.ends_with("bps") || body.ends_with("Bps"))) body.resize(body.size() - 3);
  switch (body.back()) {
    case 'k': case 'K': scale = 1e3; body.pop_back(); break;
    case 'm': case 'M': scale = 1e6; body.pop_back(); break;
    case 'g': case 'G': scale = 1e9; body.pop_back(); break;
    default: break;
  }
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), value);
  if (ec != std::errc() || ptr != body.data() + body.size() || !(value > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "cannot parse bandwidth '" + std::string(text) + "'");
  }
  return value * scale;
}

LinkStats& LinkStats::operator+=(const LinkStats& o) {
  bytes_sent += o.bytes_sent;
  bytes_received += o.bytes_received;
  frames += o.frames;
  retransmissions += o.retransmissions;
  busy_seconds += o.busy_seconds;
  simulated_elapsed = std::max(simulated_elapsed, o.simulated_elapsed);
  return *this;
}

double TimingResult::makespan() const { return *std::max_element(finish.begin(), finish.end()); }

double TimingResult::between(std::string_view begin, std::string_view end) const {
  for (std::size_t i = 0; i < marks.size(); ++i) {
    if (marks[i].first != begin) continue;
    for (std::size_t j = i + 1; j < marks.size(); ++j) {
      if (marks[j].first == end) return marks[j].second - marks[i].second;
    }
  }
  throw Error(ErrorCode::kInvalidConfig,
              "no mark pair " + std::string(begin) + " .. " + std::string(end));
}

namespace {

// Shared store-and-forward arithmetic for the simulator and replay.
struct LinkModel {
  const NetworkConfig& net;

  // Returns the arrival time and updates the link's free time and stats.
  double transmit(double send_time, double& free_at, std::uint64_t bytes, std::uint32_t attempts,
                  LinkStats& stats) const {
    const double start = std::max(send_time, free_at);
    const double tx = transmission_seconds(bytes, net);
    const double retries = static_cast<double>(attempts - 1);
    free_at = start + static_cast<double>(attempts) * tx + retries * 2.0 * net.latency_s;
    const double arrival = free_at + net.latency_s;
    stats.bytes_sent += bytes;
    stats.frames += 1;
    stats.retransmissions += attempts - 1;
    stats.busy_seconds += static_cast<double>(attempts) * tx;
    stats.simulated_elapsed = std::max(stats.simulated_elapsed, arrival);
    return arrival;
  }
};

}  // namespace

class SimNetwork::SimEndpoint final : public Endpoint {
 public:
  SimEndpoint(SimNetwork& net, Role self) : net_(net), self_(self) {}

  Role self() const override { return self_; }

  void send(Role to, Frame frame) override {
    charge();
    net_.deliver(self_, to, std::move(frame));
  }

  bool poll(Role from, Frame& out) override {
    charge();
    if (!net_.take(self_, from, out)) return false;
    if (inbound_tap) inbound_tap(from, out);
    return true;
  }

  void wait(Role from, std::coroutine_handle<> h) override {
    net_.waiters_[{from, self_}] = h;
  }

  void on_resume() override { checkpoint_ = Clock::now(); }

  void mark(std::string_view label) override {
    charge();
    const double t = net_.clocks_[role_index(self_)];
    net_.marks_.emplace_back(std::string(label), t);
    net_.trace_.events[role_index(self_)].push_back(
        TraceEvent{TraceEvent::Kind::kMark, self_, 0, 1, 0.0, std::string(label)});
  }

  double now() const override { return net_.clocks_[role_index(self_)]; }

  void charge() {
    const auto t = Clock::now();
    if (net_.opts_.measure_compute) {
      net_.add_compute(self_, std::chrono::duration<double>(t - checkpoint_).count());
    }
    checkpoint_ = t;
  }

 private:
  SimNetwork& net_;
  Role self_;
  Clock::time_point checkpoint_ = Clock::now();
};

SimNetwork::SimNetwork(Options opts) : opts_(opts), loss_rng_(opts.loss_seed, 0x6c6f7373) {
  opts_.net.validate();
  for (Role r : kAllRoles) endpoints_[role_index(r)] = std::make_unique<SimEndpoint>(*this, r);
}

SimNetwork::~SimNetwork() = default;

Endpoint& SimNetwork::endpoint(Role r) { return *endpoints_[role_index(r)]; }

void SimNetwork::add_compute(Role r, double seconds) {
  if (seconds <= 0.0) return;
  clocks_[role_index(r)] += seconds;
  auto& ev = trace_.events[role_index(r)];
  if (!ev.empty() && ev.back().kind == TraceEvent::Kind::kCompute) {
    ev.back().seconds += seconds;
  } else {
    ev.push_back(TraceEvent{TraceEvent::Kind::kCompute, r, 0, 1, seconds, {}});
  }
}

void SimNetwork::deliver(Role from, Role to, Frame frame) {
  if (from == to) throw Error(ErrorCode::kLinkClosed, "a role cannot send to itself");
  const LinkKey key{from, to};
  const std::uint64_t bytes = frame_wire_bytes(frame);
  std::uint32_t attempts = 1;
  if (opts_.net.loss_rate > 0.0) {
    while (loss_rng_.uniform_real() < opts_.net.loss_rate) ++attempts;
  }
  const double arrival = LinkModel{opts_.net}.transmit(clocks_[role_index(from)], link_free_[key],
                                                       bytes, attempts, links_[key]);
  trace_.events[role_index(from)].push_back(
      TraceEvent{TraceEvent::Kind::kSend, to, bytes, attempts, 0.0, {}});
  queues_[key].push_back(InFlight{std::move(frame), arrival});
  auto w = waiters_.find(key);
  if (w != waiters_.end()) {
    ready_.emplace_back(to, w->second);
    waiters_.erase(w);
  }
}

bool SimNetwork::take(Role to, Role from, Frame& out) {
  const LinkKey key{from, to};
  auto q = queues_.find(key);
  if (q == queues_.end() || q->second.empty()) return false;
  InFlight item = std::move(q->second.front());
  q->second.pop_front();
  double& clock = clocks_[role_index(to)];
  clock = std::max(clock, item.arrival);
  links_[key].bytes_received += frame_wire_bytes(item.frame);
  trace_.events[role_index(to)].push_back(TraceEvent{TraceEvent::Kind::kRecv, from, 0, 1, 0.0, {}});
  out = std::move(item.frame);
  return true;
}

void SimNetwork::run(std::vector<std::pair<Role, Task<void>*>> roles) {
  for (auto& [role, task] : roles) {
    auto& ep = *endpoints_[role_index(role)];
    ep.on_resume();
    task->start();
    ep.charge();
  }
  while (!ready_.empty()) {
    auto [role, h] = ready_.front();
    ready_.pop_front();
    auto& ep = *endpoints_[role_index(role)];
    ep.on_resume();
    h.resume();
    ep.charge();
  }
  for (auto& [role, task] : roles) {
    if (task->failed()) std::rethrow_exception(task->error());
  }
  std::string blocked;
  for (auto& [role, task] : roles) {
    if (!task->done()) blocked += std::string(blocked.empty() ? "" : ", ") + std::string(role_name(role));
  }
  if (!blocked.empty()) throw Error(ErrorCode::kDeadlock, "roles blocked forever: " + blocked);
}

LinkStats SimNetwork::link(Role from, Role to) const {
  auto it = links_.find({from, to});
  return it == links_.end() ? LinkStats{} : it->second;
}

TimingResult SimNetwork::timing() const {
  TimingResult out;
  out.finish = clocks_;
  out.marks = marks_;
  out.links = links_;
  return out;
}

TimingResult replay(const Trace& trace, const NetworkConfig& net) {
  net.validate();
  TimingResult out;
  std::array<std::size_t, kRoleCount> next{};
  std::map<LinkKey, double> free_at;
  std::map<LinkKey, std::vector<double>> arrivals;
  std::map<LinkKey, std::size_t> consumed;
  const LinkModel model{net};
  bool progress = true;
  while (progress) {
    progress = false;
    for (Role r : kAllRoles) {
      const auto& events = trace.events[role_index(r)];
      double& clock = out.finish[role_index(r)];
      auto& i = next[role_index(r)];
      while (i < events.size()) {
        const auto& ev = events[i];
        if (ev.kind == TraceEvent::Kind::kCompute) {
          clock += ev.seconds;
        } else if (ev.kind == TraceEvent::Kind::kSend) {
          const LinkKey key{r, ev.peer};
          arrivals[key].push_back(model.transmit(clock, free_at[key], ev.bytes, ev.attempts, out.links[key]));
        } else if (ev.kind == TraceEvent::Kind::kRecv) {
          const LinkKey key{ev.peer, r};
          auto& k = consumed[key];
          const auto& arr = arrivals[key];
          if (k >= arr.size()) break;
          clock = std::max(clock, arr[k]);
          ++k;
        } else {
          out.marks.emplace_back(ev.label, clock);
        }
        ++i;
        progress = true;
      }
    }
  }
  for (Role r : kAllRoles) {
    if (next[role_index(r)] != trace.events[role_index(r)].size()) {
      throw Error(ErrorCode::kDeadlock, "trace replay stalled at role " + std::string(role_name(r)));
    }
  }
  for (auto& [key, stats] : out.links) stats.bytes_received = stats.bytes_sent;
  return out;
}

}  // namespace spnn
