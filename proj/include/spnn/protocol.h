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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spnn/fixedpoint.h"
#include "spnn/neural.h"
#include "spnn/secretshare.h"
#include "spnn/task.h"
#include "spnn/transport.h"

namespace spnn {

// kFloat runs the first layer in plain doubles (A's partial sum continued by
// B). Test-only: it exposes A's partial product to B.
enum class ProtocolMode : std::uint8_t { kSecretSharing = 0, kHomomorphic = 1, kFloat = 2 };

std::string_view mode_name(ProtocolMode m);
ProtocolMode parse_mode(std::string_view name);

// Which parameters the SGLD optimizer perturbs. Parameters outside the scope
// take plain SGD steps with the same schedule.
enum class SgldScope : std::uint8_t { kServer = 0, kAll = 1 };

std::string_view sgld_scope_name(SgldScope s);
SgldScope parse_sgld_scope(std::string_view name);

struct NetSpec {
  std::size_t input_a = 0;  // features held by client A
  std::size_t input_b = 0;  // features held by client B
  std::vector<std::size_t> hidden;
  std::vector<Activation> activations;  // one per hidden layer
  std::size_t classes = 2;              // 1 selects a sigmoid head
  // Zero hidden layers is rejected unless this is set; the plan is then
  // flagged as degenerate (identity server stack, no head parameters).
  bool allow_identity_stack = false;

  friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

// Placement of the computation graph. Layer indices follow the monolithic
// network: 0 is the joint first layer, 1..k-1 the server stack, k the head.
struct PartitionPlan {
  std::size_t input_a = 0;
  std::size_t input_b = 0;
  std::size_t first_width = 0;  // m
  Activation first_activation = Activation::kIdentity;
  std::vector<std::size_t> server_dims;  // h1, ..., hk
  std::vector<Activation> server_activations;
  std::size_t classes = 2;
  bool head = true;
  bool degenerate = false;

  std::size_t input_width() const { return input_a + input_b; }
  std::size_t head_in() const { return server_dims.back(); }
  std::size_t layer_count() const { return server_dims.size() + (head ? 1 : 0); }

  std::string to_json() const;
  static PartitionPlan from_json(std::string_view text);
  friend bool operator==(const PartitionPlan&, const PartitionPlan&) = default;
};

PartitionPlan split_graph(const NetSpec& spec);

struct TrainConfig {
  ProtocolMode mode = ProtocolMode::kSecretSharing;
  NetSpec net;
  OptimizerConfig optimizer;
  SgldScope sgld_scope = SgldScope::kServer;
  std::size_t epochs = 1;  // T
  std::uint64_t seed = 1;
  std::uint64_t session_id = 1;
  int frac_bits = 16;
  int key_bits = 2048;
  bool he_packing = true;
  double early_stop_loss = 0.0;  // stop once the epoch train loss falls below; 0 disables
  bool evaluate = true;          // test pass after every epoch

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(std::string_view text);
};

// Row order at epoch `epoch`: Fisher-Yates from the session seed.
std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::uint64_t epoch,
                                           std::size_t rows);

// Number of mini-batches covering `rows`.
std::size_t batch_count(std::size_t rows, std::size_t batch_size);

// Initial weights of the monolithic network for a plan (layer tags = indices).
Mlp initial_model(const PartitionPlan& plan, std::uint64_t seed);

// Generator for the SGLD noise of one parameter block. part 0: weights (rows
// of client A for layer 0), 1: rows of client B, 2: bias.
Prg noise_stream(const OptimizerConfig& opt, std::size_t layer, std::size_t part);

// Frame step numbers are (protocol step << 16) | per-link counter. Steps
// below kFirstEpochStep are session setup.
inline constexpr std::uint64_t kFirstEpochStep = 4;
inline std::uint64_t protocol_step(const Frame& f) { return f.step >> 16; }

// -- payload codecs ---------------------------------------------------------

std::vector<std::uint8_t> encode_ring_matrix(const RingMatrix& m);
RingMatrix decode_ring_matrix(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> control_payload(ControlKind kind, std::string_view body);
std::vector<std::uint8_t> control_payload(ControlKind kind, std::span<const std::uint8_t> body);
ControlKind control_kind(const Frame& f);
std::string control_body(const Frame& f);

// -- data and results -------------------------------------------------------

struct ClientData {
  Tensor train;
  Tensor test;
};

struct LabelData {
  std::vector<int> train;
  std::vector<int> test;
};

struct SessionData {
  ClientData a;
  ClientData b;
  LabelData labels;  // held by client A
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double train_loss = 0.0;
  std::optional<double> test_loss;
  std::optional<double> test_auc;
};

struct BatchInfo {
  std::size_t epoch = 0;
  bool train = true;
  std::size_t batch = 0;
  std::uint64_t step = 0;
  std::size_t rows = 0;
};

// In-process observers. Calls happen on the thread running the role.
struct SessionHooks {
  std::function<void(Role from, Role to, const Frame&)> on_send;
  std::function<void(Role from, Role to, const Frame&)> on_receive;
  // First hidden layer as the server computes it (pre- and post-activation).
  std::function<void(const BatchInfo&, const Tensor& pre, const Tensor& post)> on_server_h1;
};

struct RoleOptions {
  std::uint64_t session_id = 1;
  // Seed for role-private randomness (masks, key generation, encryption,
  // triples). Drawn from the OS when absent.
  std::optional<std::uint64_t> private_seed;
  SessionHooks* hooks = nullptr;
};

// Control-plane role: splits the graph, deals Beaver triples, broadcasts the
// epoch permutation and decides when to stop.
class CoordinatorRole {
 public:
  CoordinatorRole(Endpoint& ep, TrainConfig cfg, RoleOptions opts = {});
  ~CoordinatorRole();
  Task<void> run();

  const PartitionPlan& plan() const;
  const std::vector<EpochMetrics>& epochs() const;
  bool early_stopped() const;
  std::uint64_t triples_dealt() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Hidden-stack owner: reconstructs or decrypts h1, runs layers 1..k-1 and
// routes gradients.
class ServerRole {
 public:
  ServerRole(Endpoint& ep, RoleOptions opts = {});
  ~ServerRole();
  Task<void> run();

  const Tensor& first_bias() const;
  const Mlp& stack() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Data holder. Client A additionally holds the labels and the head.
class ClientRole {
 public:
  ClientRole(Role role, Endpoint& ep, ClientData data, std::optional<LabelData> labels,
             RoleOptions opts = {});
  ~ClientRole();
  Task<void> run();

  // Plaintext first-layer rows (HE and float modes).
  const Tensor& theta() const;
  // This party's share of the full d x m first-layer matrix (SS mode).
  const RingMatrix& theta_share() const;
  const Mlp& head() const;
  const std::vector<double>& test_scores() const;
  std::uint64_t triples_consumed() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct SessionResult {
  PartitionPlan plan;
  std::vector<EpochMetrics> epochs;
  bool early_stopped = false;
  std::vector<double> test_scores;  // final positive-class scores at A
  Mlp model;                        // reassembled for evaluation only
  std::map<LinkKey, LinkStats> links;
  TimingResult timing;
  Trace trace;
  std::uint64_t triples_consumed = 0;
  double wall_seconds = 0.0;
};

struct SimSessionOptions {
  NetworkConfig net;
  bool measure_compute = false;
  std::uint64_t loss_seed = 0;
};

// Runs all four roles on the in-process simulator. Private seeds derive from
// cfg.seed so the run is reproducible.
SessionResult run_session(const TrainConfig& cfg, const SessionData& data,
                          const SimSessionOptions& opts = {}, SessionHooks* hooks = nullptr);

// Bytes over all links; dealer traffic (coordinator to clients) optional.
std::uint64_t total_bytes(const std::map<LinkKey, LinkStats>& links, bool include_dealer);

// Simulated seconds from the coordinator opening epoch `epoch` to the last
// role finishing its training steps.
double epoch_train_seconds(const TimingResult& timing, std::size_t epoch);

// Plaintext trainer with the same initialisation, permutation, noise streams
// and update order as the protocol.
struct ReferenceResult {
  Mlp model;
  std::vector<EpochMetrics> epochs;
  bool early_stopped = false;
  std::vector<double> test_scores;
};

// `steps` limits the number of training steps (0 = run every epoch).
ReferenceResult train_reference(const TrainConfig& cfg, const SessionData& data,
                                std::size_t steps = 0);

// Evaluates a reassembled model on the concatenated test features.
std::vector<double> predict_scores(const Mlp& model, const Tensor& xa, const Tensor& xb);

// -- single-batch first layer -----------------------------------------------

struct FirstHiddenResult {
  Tensor pre;   // reconstructed or decrypted X * theta
  Tensor post;  // after the server-side activation
  std::map<LinkKey, LinkStats> links;
  std::vector<Frame> server_inbound;
};

FirstHiddenResult first_hidden_ss(const Tensor& xa, const Tensor& xb, const Tensor& theta_a,
                                  const Tensor& theta_b, Activation act, std::uint64_t seed,
                                  int frac_bits = 16);
FirstHiddenResult first_hidden_he(const Tensor& xa, const Tensor& xb, const Tensor& theta_a,
                                  const Tensor& theta_b, Activation act, std::uint64_t seed,
                                  int key_bits, bool packing = true, int frac_bits = 16);

// -- audits -------------------------------------------------------------------

struct SentFrame {
  Role from;
  Role to;
  Frame frame;
};

// Checks every training step against
// TripleDeal* -> (ShareTransfer | CiphertextTransfer)* -> HiddenLayerUp+ ->
// LastHiddenToA -> HeadGradDown -> InputGradDown+ (evaluation steps stop
// after LastHiddenToA). Throws Error(kSequenceViolation).
void check_message_grammar(const std::vector<SentFrame>& log);

// Structural residency check: the server only ever receives Control,
// HiddenLayerUp and HeadGradDown frames. Throws Error(kSequenceViolation).
void check_server_inbound(const std::vector<SentFrame>& log);

}  // namespace spnn
