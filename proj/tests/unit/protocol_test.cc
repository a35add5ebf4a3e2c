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

#include "spnn/protocol.h"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <thread>

#include "spnn/error.h"
#include "spnn/tcp.h"

namespace spnn {
namespace {

Tensor normal_tensor(std::size_t r, std::size_t c, Prg& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

// Plain triple loop, independent of the library's matmul.
Tensor oracle_product(const Tensor& xa, const Tensor& xb, const Tensor& ta, const Tensor& tb) {
  Tensor out(xa.rows(), ta.cols());
  for (std::size_t i = 0; i < xa.rows(); ++i) {
    for (std::size_t j = 0; j < ta.cols(); ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < xa.cols(); ++k) s += (long double)xa.at(i, k) * ta.at(k, j);
      for (std::size_t k = 0; k < xb.cols(); ++k) s += (long double)xb.at(i, k) * tb.at(k, j);
      out.at(i, j) = static_cast<double>(s);
    }
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.rows(), b.rows());
  EXPECT_EQ(a.cols(), b.cols());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// Two informative features per client; label is the sign of their sum.
SessionData toy_data(std::size_t n, std::size_t n_test, std::uint64_t seed, std::size_t da = 2,
                     std::size_t db = 2) {
  Prg rng(seed);
  SessionData d;
  d.a.train = normal_tensor(n, da, rng);
  d.b.train = normal_tensor(n, db, rng);
  d.a.test = normal_tensor(n_test, da, rng);
  d.b.test = normal_tensor(n_test, db, rng);
  auto label = [](const Tensor& a, const Tensor& b) {
    std::vector<int> y(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) y[i] = a.at(i, 0) + a.at(i, 1) - b.at(i, 0) + b.at(i, 1) > 0;
    return y;
  };
  d.labels.train = label(d.a.train, d.b.train);
  d.labels.test = label(d.a.test, d.b.test);
  return d;
}

TrainConfig toy_config(ProtocolMode mode, std::size_t da = 2, std::size_t db = 2) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.net.input_a = da;
  cfg.net.input_b = db;
  cfg.net.hidden = {8, 4};
  cfg.net.activations = {Activation::kSigmoid, Activation::kSigmoid};
  cfg.optimizer.learning_rate = 0.5;
  cfg.optimizer.batch_size = 16;
  cfg.epochs = 2;
  cfg.seed = 11;
  cfg.key_bits = 512;
  return cfg;
}

// -- plan ---------------------------------------------------------------------------

TEST(SplitGraphTest, SixLayerNetworkPlacement) {
  NetSpec spec;
  spec.input_a = 32;
  spec.input_b = 32;
  spec.hidden = {256, 512, 256, 64};
  spec.activations.assign(4, Activation::kRelu);
  spec.classes = 2;
  const PartitionPlan plan = split_graph(spec);
  EXPECT_EQ(plan.input_width(), 64u);
  EXPECT_EQ(plan.first_width, 256u);
  EXPECT_EQ(plan.server_dims, (std::vector<std::size_t>{256, 512, 256, 64}));
  EXPECT_EQ(plan.head_in(), 64u);
  EXPECT_TRUE(plan.head);
  EXPECT_FALSE(plan.degenerate);
  const Mlp m = initial_model(plan, 3);
  ASSERT_EQ(m.layers().size(), 5u);
  EXPECT_EQ(m.layers()[0].weights.rows(), 64u);
  EXPECT_EQ(m.layers()[0].weights.cols(), 256u);
  EXPECT_EQ(m.layers()[1].weights.rows(), 256u);
  EXPECT_EQ(m.layers()[3].weights.cols(), 64u);
  EXPECT_EQ(m.layers()[4].weights.rows(), 64u);
  EXPECT_EQ(m.layers()[4].weights.cols(), 2u);
}

TEST(SplitGraphTest, OneHiddenLayerLeavesEmptyServerStack) {
  NetSpec spec{3, 4, {5}, {Activation::kSigmoid}, 2, false};
  const PartitionPlan plan = split_graph(spec);
  EXPECT_EQ(plan.server_dims, (std::vector<std::size_t>{5}));
  EXPECT_TRUE(plan.server_activations.empty());
  EXPECT_EQ(initial_model(plan, 1).layers().size(), 2u);
}

TEST(SplitGraphTest, PlanSerializationRoundTrips) {
  NetSpec spec{6, 2, {8, 8}, {Activation::kSigmoid, Activation::kRelu}, 2, false};
  const PartitionPlan plan = split_graph(spec);
  EXPECT_EQ(PartitionPlan::from_json(plan.to_json()), plan);
}

TEST(SplitGraphTest, RejectsBadSpecs) {
  auto code = [](const NetSpec& s) {
    try {
      (void)split_graph(s);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kIo;
  };
  EXPECT_EQ(code(NetSpec{0, 2, {4}, {Activation::kRelu}, 2, false}), ErrorCode::kInvalidSpec);
  EXPECT_EQ(code(NetSpec{2, 2, {4}, {}, 2, false}), ErrorCode::kInvalidSpec);
  EXPECT_EQ(code(NetSpec{2, 2, {}, {}, 2, false}), ErrorCode::kInvalidSpec);
  const PartitionPlan deg = split_graph(NetSpec{2, 2, {}, {}, 2, true});
  EXPECT_TRUE(deg.degenerate);
  EXPECT_FALSE(deg.head);
}

TEST(TrainConfigTest, ZeroEpochsRejected) {
  TrainConfig cfg = toy_config(ProtocolMode::kSecretSharing);
  cfg.epochs = 0;
  try {
    cfg.validate();
    FAIL() << "T = 0 accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidConfig);
  }
}

TEST(TrainConfigTest, JsonRoundTrip) {
  TrainConfig cfg = toy_config(ProtocolMode::kHomomorphic);
  cfg.optimizer.kind = OptimizerKind::kSgld;
  cfg.sgld_scope = SgldScope::kAll;
  cfg.early_stop_loss = 0.25;
  const TrainConfig back = TrainConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  EXPECT_EQ(back.net, cfg.net);
}

TEST(EpochPermutationTest, IsAPermutationAndSeeded) {
  auto p = epoch_permutation(5, 0, 100);
  auto q = epoch_permutation(5, 1, 100);
  EXPECT_EQ(p, epoch_permutation(5, 0, 100));
  EXPECT_NE(p, q);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], i);
}

// -- first hidden layer -----------------------------------------------------------

TEST(FirstHiddenTest, SecretSharedMatchesConcatenatedProduct) {
  Prg rng(21);
  const Tensor xa = normal_tensor(8, 5, rng), xb = normal_tensor(8, 5, rng);
  const Tensor ta = normal_tensor(5, 7, rng, 0.5), tb = normal_tensor(5, 7, rng, 0.5);
  const auto r = first_hidden_ss(xa, xb, ta, tb, Activation::kIdentity, 4);
  EXPECT_LE(max_abs_diff(r.pre, oracle_product(xa, xb, ta, tb)), 8 * std::ldexp(1.0, -15));
}

TEST(FirstHiddenTest, HomomorphicMatchesConcatenatedProduct) {
  Prg rng(22);
  const Tensor xa = normal_tensor(8, 4, rng), xb = normal_tensor(8, 4, rng);
  const Tensor ta = normal_tensor(4, 6, rng, 0.5), tb = normal_tensor(4, 6, rng, 0.5);
  for (bool packing : {true, false}) {
    const auto r = first_hidden_he(xa, xb, ta, tb, Activation::kIdentity, 4, 512, packing);
    EXPECT_LE(max_abs_diff(r.pre, oracle_product(xa, xb, ta, tb)), 8 * std::ldexp(1.0, -15));
  }
}

TEST(FirstHiddenTest, BackendsAgree) {
  Prg rng(23);
  const Tensor xa = normal_tensor(16, 6, rng), xb = normal_tensor(16, 6, rng);
  const Tensor ta = normal_tensor(6, 5, rng, 0.3), tb = normal_tensor(6, 5, rng, 0.3);
  const auto ss = first_hidden_ss(xa, xb, ta, tb, Activation::kSigmoid, 9);
  const auto he = first_hidden_he(xa, xb, ta, tb, Activation::kSigmoid, 9, 512);
  EXPECT_LE(max_abs_diff(ss.pre, he.pre), std::ldexp(1.0, -14));
  EXPECT_LE(max_abs_diff(ss.post, he.post), std::ldexp(1.0, -14));
}

TEST(FirstHiddenTest, ZeroInputsGiveZero) {
  const Tensor xa(4, 3), xb(4, 3);
  Prg rng(1);
  const Tensor ta = normal_tensor(3, 2, rng), tb = normal_tensor(3, 2, rng);
  const auto ss = first_hidden_ss(xa, xb, ta, tb, Activation::kIdentity, 1);
  const auto he = first_hidden_he(xa, xb, ta, tb, Activation::kIdentity, 1, 512);
  for (double v : ss.pre.data()) EXPECT_EQ(v, 0.0);
  for (double v : he.pre.data()) EXPECT_EQ(v, 0.0);
}

TEST(FirstHiddenTest, OnePartyDegenerateCase) {
  Prg rng(24);
  const Tensor xa = normal_tensor(8, 4, rng), ta = normal_tensor(4, 3, rng);
  const Tensor xb(8, 4), tb(4, 3);
  const auto r = first_hidden_ss(xa, xb, ta, tb, Activation::kIdentity, 2);
  Tensor expect(8, 3);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) expect.at(i, j) += xa.at(i, k) * ta.at(k, j);
  EXPECT_LE(max_abs_diff(r.pre, expect), 8 * std::ldexp(1.0, -15));
}

TEST(FirstHiddenTest, RowMismatchRejected) {
  Prg rng(2);
  try {
    (void)first_hidden_ss(normal_tensor(4, 2, rng), normal_tensor(5, 2, rng), normal_tensor(2, 2, rng),
                          normal_tensor(2, 2, rng), Activation::kIdentity, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRowCountMismatch);
  }
}

// The server's two shares of a fixed h1 should each look uniform: bucket the
// top 4 bits of every received word and run a chi-square test.
TEST(FirstHiddenTest, ServerSharesAreUniform) {
  Prg rng(25);
  const Tensor xa = normal_tensor(4, 2, rng), xb = normal_tensor(4, 2, rng);
  const Tensor ta = normal_tensor(2, 4, rng), tb = normal_tensor(2, 4, rng);
  std::array<std::array<double, 16>, 2> counts{};
  std::size_t total = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto r = first_hidden_ss(xa, xb, ta, tb, Activation::kIdentity, 1000 + seed);
    ASSERT_EQ(r.server_inbound.size(), 2u);
    for (std::size_t p = 0; p < 2; ++p) {
      const RingMatrix m = decode_ring_matrix(r.server_inbound[p].payload);
      for (auto v : m.data()) counts[p][v >> 60] += 1;
    }
    total += 16;
  }
  // 15 degrees of freedom; 37.7 is the 0.999 quantile.
  for (const auto& c : counts) {
    double chi = 0;
    const double expect = static_cast<double>(total) / 16.0;
    for (double o : c) chi += (o - expect) * (o - expect) / expect;
    EXPECT_LT(chi, 37.7);
  }
}

// -- sessions --------------------------------------------------------------------

TEST(SessionTest, FloatPathIsBitExactWithMonolithicTrainer) {
  const SessionData data = toy_data(160, 0, 3);
  TrainConfig cfg = toy_config(ProtocolMode::kFloat);
  cfg.epochs = 1;  // 160 / 16 = 10 steps
  const auto r = run_session(cfg, data);
  const auto ref = train_reference(cfg, data, 10);
  ASSERT_EQ(r.model.layers().size(), ref.model.layers().size());
  for (std::size_t l = 0; l < r.model.layers().size(); ++l) {
    EXPECT_EQ(r.model.layers()[l].weights, ref.model.layers()[l].weights) << "layer " << l;
    EXPECT_EQ(r.model.layers()[l].bias, ref.model.layers()[l].bias) << "layer " << l;
  }
}

TEST(SessionTest, FloatPathBitExactUnderSgldEverywhere) {
  const SessionData data = toy_data(96, 32, 4);
  TrainConfig cfg = toy_config(ProtocolMode::kFloat);
  cfg.optimizer.kind = OptimizerKind::kSgld;
  cfg.optimizer.learning_rate = 0.01;
  cfg.optimizer.noise_seed = 77;
  cfg.sgld_scope = SgldScope::kAll;
  const auto r = run_session(cfg, data);
  const auto ref = train_reference(cfg, data);
  for (std::size_t l = 0; l < r.model.layers().size(); ++l) {
    EXPECT_EQ(r.model.layers()[l].weights, ref.model.layers()[l].weights) << "layer " << l;
  }
  ASSERT_EQ(r.epochs.size(), ref.epochs.size());
  EXPECT_EQ(r.epochs.back().train_loss, ref.epochs.back().train_loss);
  EXPECT_EQ(r.test_scores, ref.test_scores);
}

TEST(SessionTest, SecureModesTrackReferenceAfterOneStep) {
  const SessionData data = toy_data(16, 0, 5);
  for (auto mode : {ProtocolMode::kSecretSharing, ProtocolMode::kHomomorphic}) {
    TrainConfig cfg = toy_config(mode);
    cfg.epochs = 1;
    const auto r = run_session(cfg, data);
    const auto ref = train_reference(cfg, data);
    const Mlp init = initial_model(r.plan, cfg.seed);
    for (std::size_t l = 0; l < r.model.layers().size(); ++l) {
      const auto& a = r.model.layers()[l].weights;
      const auto& b = ref.model.layers()[l].weights;
      const auto& w0 = init.layers()[l].weights;
      double num = 0, den = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs((a.data()[i] - w0.data()[i]) - (b.data()[i] - w0.data()[i])));
        den = std::max(den, std::abs(b.data()[i] - w0.data()[i]));
      }
      // update error relative to the update, plus the fixed-point floor
      EXPECT_LE(num, 1e-3 * den + std::ldexp(1.0, -12)) << mode_name(mode) << " layer " << l;
    }
  }
}

TEST(SessionTest, PredictionsMatchMonolithicModel) {
  const SessionData data = toy_data(64, 40, 6);
  for (auto mode : {ProtocolMode::kSecretSharing, ProtocolMode::kHomomorphic}) {
    const auto r = run_session(toy_config(mode), data);
    // The scores were produced by the protocol; the reassembled model is the
    // monolithic oracle with identical concatenated weights.
    const auto oracle = predict_scores(r.model, data.a.test, data.b.test);
    ASSERT_EQ(oracle.size(), r.test_scores.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(r.test_scores[i], oracle[i], 1e-3);
  }
}

TEST(SessionTest, ZeroWeightNetworkPredictsUniform) {
  NetSpec spec{2, 2, {3}, {Activation::kSigmoid}, 2, false};
  Mlp zero = initial_model(split_graph(spec), 1);
  for (auto& l : zero.layers()) {
    for (auto& v : l.weights.data()) v = 0;
    for (auto& v : l.bias.data()) v = 0;
  }
  Prg rng(3);
  for (double s : predict_scores(zero, normal_tensor(5, 2, rng), normal_tensor(5, 2, rng))) EXPECT_EQ(s, 0.5);
}

TEST(SessionTest, ZeroLearningRateLeavesParametersUnchanged) {
  const SessionData data = toy_data(48, 0, 7);
  for (auto mode : {ProtocolMode::kSecretSharing, ProtocolMode::kFloat}) {
    TrainConfig cfg = toy_config(mode);
    cfg.optimizer.learning_rate = 1e-300;  // gradient steps vanish below any resolution
    const auto r = run_session(cfg, data);
    const Mlp init = initial_model(r.plan, cfg.seed);
    const FixedPointCodec codec(64, cfg.frac_bits);
    for (std::size_t l = 0; l < init.layers().size(); ++l) {
      for (std::size_t i = 0; i < init.layers()[l].weights.size(); ++i) {
        const double w0 = init.layers()[l].weights.data()[i];
        const double expect = (mode == ProtocolMode::kSecretSharing && l == 0)
                                  ? codec.decode(codec.encode(w0))
                                  : w0;
        EXPECT_EQ(r.model.layers()[l].weights.data()[i], expect);
      }
    }
  }
}

TEST(SessionTest, LossHalvesOnSeparableToySet) {
  const SessionData data = toy_data(400, 0, 8);
  TrainConfig cfg = toy_config(ProtocolMode::kSecretSharing);
  cfg.optimizer.batch_size = 40;
  cfg.epochs = 20;  // 200 steps
  cfg.optimizer.learning_rate = 1.0;
  const auto r = run_session(cfg, data);
  ASSERT_EQ(r.epochs.size(), 20u);
  EXPECT_LE(r.epochs.back().train_loss, 0.5 * r.epochs.front().train_loss);
}

TEST(SessionTest, SameSeedIsDeterministic) {
  const SessionData data = toy_data(64, 32, 9);
  const TrainConfig cfg = toy_config(ProtocolMode::kSecretSharing);
  const auto a = run_session(cfg, data);
  const auto b = run_session(cfg, data);
  EXPECT_EQ(a.test_scores, b.test_scores);
  EXPECT_EQ(a.model.layers()[0].weights, b.model.layers()[0].weights);
  EXPECT_EQ(total_bytes(a.links, true), total_bytes(b.links, true));
}

TEST(SessionTest, EarlyStopEndsBeforeT) {
  const SessionData data = toy_data(64, 0, 10);
  TrainConfig cfg = toy_config(ProtocolMode::kFloat);
  cfg.epochs = 10;
  cfg.early_stop_loss = 5.0;
  const auto r = run_session(cfg, data);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.epochs.size(), 1u);
}

TEST(SessionTest, TripleCountMatchesBatches) {
  const SessionData data = toy_data(50, 20, 11);
  TrainConfig cfg = toy_config(ProtocolMode::kSecretSharing);
  const auto r = run_session(cfg, data);
  // 4 train batches + 2 eval batches per epoch, two triples each.
  EXPECT_EQ(r.triples_consumed, 2u * (4 + 2) * cfg.epochs);
}

TEST(SessionTest, MismatchedClientRowsAbort) {
  SessionData data = toy_data(32, 0, 12);
  data.b.train = Tensor(31, 2);
  try {
    (void)run_session(toy_config(ProtocolMode::kSecretSharing), data);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRowCountMismatch);
  }
}

TEST(SessionTest, FeatureCountMismatchAborts) {
  const SessionData data = toy_data(32, 0, 13, 3, 2);
  try {
    (void)run_session(toy_config(ProtocolMode::kSecretSharing), data);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(SessionTest, DegenerateIdentityStackTrains) {
  const SessionData data = toy_data(64, 16, 14);
  TrainConfig cfg = toy_config(ProtocolMode::kSecretSharing);
  cfg.net.hidden.clear();
  cfg.net.activations.clear();
  cfg.net.allow_identity_stack = true;
  cfg.epochs = 5;
  const auto r = run_session(cfg, data);
  EXPECT_TRUE(r.plan.degenerate);
  EXPECT_EQ(r.model.layers().size(), 1u);
  EXPECT_LT(r.epochs.back().train_loss, r.epochs.front().train_loss);
}

// -- audits -----------------------------------------------------------------------

std::vector<SentFrame> record(const TrainConfig& cfg, const SessionData& data) {
  std::vector<SentFrame> log;
  SessionHooks hooks;
  hooks.on_send = [&](Role from, Role to, const Frame& f) { log.push_back({from, to, f}); };
  (void)run_session(cfg, data, {}, &hooks);
  return log;
}

TEST(AuditTest, GrammarHoldsInEveryMode) {
  const SessionData data = toy_data(40, 20, 15);
  for (auto mode : {ProtocolMode::kSecretSharing, ProtocolMode::kHomomorphic, ProtocolMode::kFloat}) {
    const auto log = record(toy_config(mode), data);
    EXPECT_NO_THROW(check_message_grammar(log)) << mode_name(mode);
    EXPECT_NO_THROW(check_server_inbound(log)) << mode_name(mode);
  }
}

TEST(AuditTest, GrammarRejectsReorderedStep) {
  const SessionData data = toy_data(40, 0, 16);
  auto log = record(toy_config(ProtocolMode::kSecretSharing), data);
  for (std::size_t i = 0; i + 1 < log.size(); ++i) {
    if (log[i].frame.type == MsgType::kHiddenLayerUp && log[i + 1].frame.type == MsgType::kHiddenLayerUp) {
      // move a later LastHiddenToA in front of the uploads
      for (std::size_t j = i + 2; j < log.size(); ++j) {
        if (log[j].frame.type == MsgType::kLastHiddenToA) {
          std::swap(log[i], log[j]);
          break;
        }
      }
      break;
    }
  }
  EXPECT_THROW(check_message_grammar(log), Error);
}

TEST(AuditTest, ServerInboundRejectsRawFeatures) {
  std::vector<SentFrame> log{{Role::kClientA, Role::kServer, Frame{1, 5, MsgType::kShareTransfer, {}}}};
  EXPECT_THROW(check_server_inbound(log), Error);
}

TEST(AuditTest, StepsIncreasePerDirection) {
  const auto log = record(toy_config(ProtocolMode::kSecretSharing), toy_data(40, 20, 17));
  std::map<LinkKey, std::uint64_t> last;
  for (const auto& s : log) {
    const LinkKey k{s.from, s.to};
    if (last.count(k)) EXPECT_GT(s.frame.step, last[k]);
    last[k] = s.frame.step;
  }
}

TEST(AuditTest, SecondSessionIdRejected) {
  SimNetwork sim({});
  RoleOptions o1, o2;
  o1.session_id = 1;
  o2.session_id = 2;
  o1.private_seed = o2.private_seed = 1;
  const SessionData data = toy_data(16, 0, 18);
  CoordinatorRole c(sim.endpoint(Role::kCoordinator), toy_config(ProtocolMode::kFloat), o1);
  ServerRole s(sim.endpoint(Role::kServer), o2);
  ClientRole a(Role::kClientA, sim.endpoint(Role::kClientA), data.a, data.labels, o1);
  ClientRole b(Role::kClientB, sim.endpoint(Role::kClientB), data.b, std::nullopt, o1);
  Task<void> tc = c.run(), ts = s.run(), ta = a.run(), tb = b.run();
  EXPECT_THROW(sim.run({{Role::kCoordinator, &tc}, {Role::kServer, &ts}, {Role::kClientA, &ta},
                        {Role::kClientB, &tb}}),
               Error);
  ASSERT_TRUE(tc.failed());
  try {
    tc.take();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSequenceViolation);
  }
}

// -- TCP --------------------------------------------------------------------------

TEST(TcpSessionTest, MatchesSimulatorRun) {
  const SessionData data = toy_data(48, 16, 19);
  const TrainConfig cfg = toy_config(ProtocolMode::kSecretSharing);
  const auto sim = run_session(cfg, data);

  std::vector<TcpListener> listeners;
  std::map<Role, std::string> addresses;
  for (Role r : kAllRoles) {
    listeners.push_back(TcpListener::bind("127.0.0.1:0"));
    addresses[r] = "127.0.0.1:" + std::to_string(listeners.back().port());
  }
  const TcpOptions tcp_opts{cfg.session_id, std::chrono::milliseconds(10000)};
  auto opts = [&](Role r) {
    RoleOptions o;
    o.private_seed = mix_seed(cfg.seed, 0x1000 + role_index(r));
    return o;
  };
  std::vector<double> scores;
  std::vector<std::thread> threads;
  std::array<std::exception_ptr, kRoleCount> errors{};
  for (Role r : kAllRoles) {
    threads.emplace_back([&, r] {
      try {
        auto ep = std::make_unique<TcpEndpoint>(r, std::move(listeners[role_index(r)]), addresses, tcp_opts);
        Task<void> task;
        std::unique_ptr<CoordinatorRole> c;
        std::unique_ptr<ServerRole> s;
        std::unique_ptr<ClientRole> cl;
        switch (r) {
          case Role::kCoordinator: c = std::make_unique<CoordinatorRole>(*ep, cfg, opts(r)); task = c->run(); break;
          case Role::kServer: s = std::make_unique<ServerRole>(*ep, opts(r)); task = s->run(); break;
          case Role::kClientA:
            cl = std::make_unique<ClientRole>(r, *ep, data.a, data.labels, opts(r));
            task = cl->run();
            break;
          case Role::kClientB:
            cl = std::make_unique<ClientRole>(r, *ep, data.b, std::nullopt, opts(r));
            task = cl->run();
            break;
        }
        task.start();
        task.take();
        if (r == Role::kClientA) scores = cl->test_scores();
      } catch (...) {
        errors[role_index(r)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  EXPECT_EQ(scores, sim.test_scores);
}

}  // namespace
}  // namespace spnn
