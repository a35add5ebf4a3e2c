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

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <exception>
#include <set>
#include <utility>

#include "json.hpp"
#include "spnn/error.h"
#include "spnn/paillier.h"

namespace spnn {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kSubStepBits = 16;
constexpr std::uint64_t kPermTag = 0x5045524d;
constexpr std::uint64_t kNoiseTag = 0x4e4f4953;

// -- byte helpers -----------------------------------------------------------

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[off_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[off_ + i]} << (8 * i);
    off_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[off_ + i]} << (8 * i);
    off_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::span<const std::uint8_t> bytes() const { return bytes_; }
  std::size_t& offset() { return off_; }
  std::size_t remaining() const { return bytes_.size() - off_; }
  void finish() const {
    if (off_ != bytes_.size()) throw Error(ErrorCode::kFrameCorrupt, "trailing payload bytes");
  }

 private:
  void need(std::size_t n) const {
    if (off_ + n > bytes_.size()) throw Error(ErrorCode::kFrameCorrupt, "payload truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t off_ = 0;
};

void write_ring_matrix(std::vector<std::uint8_t>& out, const RingMatrix& m) {
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  out.reserve(out.size() + 8 * m.size());
  for (auto v : m.data()) put_u64(out, v);
}

RingMatrix read_ring_matrix(Reader& in) {
  const std::size_t rows = in.u32(), cols = in.u32();
  if (in.remaining() / 8 < rows * cols) throw Error(ErrorCode::kFrameCorrupt, "ring matrix truncated");
  RingMatrix m(rows, cols);
  for (auto& v : m.data()) v = in.u64();
  return m;
}

void write_tensor(std::vector<std::uint8_t>& out, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(t.rows()));
  put_u32(out, static_cast<std::uint32_t>(t.cols()));
  out.reserve(out.size() + 8 * t.size());
  for (auto v : t.data()) put_f64(out, v);
}

Tensor read_tensor(Reader& in) {
  const std::size_t rows = in.u32(), cols = in.u32();
  if (in.remaining() / 8 < rows * cols) throw Error(ErrorCode::kFrameCorrupt, "tensor truncated");
  Tensor t(rows, cols);
  for (auto& v : t.data()) v = in.f64();
  return t;
}

std::string shape_of(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

void expect_shape(std::size_t r, std::size_t c, std::size_t er, std::size_t ec, const char* what) {
  if (r != er || c != ec) {
    throw Error(ErrorCode::kShapeMismatch,
                std::string(what) + " is " + shape_of(r, c) + ", expected " + shape_of(er, ec));
  }
}

RingMatrix encode_matrix(const FixedPointCodec& codec, const Tensor& t) {
  RingMatrix out(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.size(); ++i) out.data()[i] = codec.encode(t.data()[i]).value;
  return out;
}

Tensor decode_matrix(const FixedPointCodec& codec, const RingMatrix& m) {
  Tensor out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = codec.decode({m.data()[i]});
  return out;
}

Prg private_rng(const RoleOptions& opts) {
  return opts.private_seed ? Prg(*opts.private_seed) : Prg::from_entropy();
}

// -- per-role messaging -----------------------------------------------------

struct StopInfo {
  bool abort = false;
  std::string reason;
};

// Stamps outgoing frames with (step << 16 | per-link counter) and checks
// session, type and step of incoming ones.
class RoleIo {
 public:
  RoleIo(Endpoint& ep, std::uint64_t session, SessionHooks* hooks)
      : ep_(ep), session_(session), hooks_(hooks) {}

  Role self() const { return ep_.self(); }
  Endpoint& endpoint() { return ep_; }
  void set_step(std::uint64_t t) { step_ = t; }
  std::uint64_t step() const { return step_; }
  void mark(const std::string& what) {
    ep_.mark(std::string(role_name(self())) + ":" + what);
  }

  void send(Role to, MsgType type, std::vector<std::uint8_t> payload) {
    auto& last = sent_[role_index(to)];
    std::uint64_t sub = 0;
    if (last.has && last.step == step_) {
      sub = last.sub + 1;
    } else if (last.has && last.step > step_) {
      throw Error(ErrorCode::kSequenceViolation, "outgoing step went backwards");
    }
    if (sub >= (std::uint64_t{1} << kSubStepBits)) {
      throw Error(ErrorCode::kSequenceViolation, "too many frames in one step");
    }
    last = {true, step_, sub};
    Frame f{session_, (step_ << kSubStepBits) | sub, type, std::move(payload)};
    if (hooks_ && hooks_->on_send) hooks_->on_send(self(), to, f);
    ep_.send(to, std::move(f));
  }

  void send_control(Role to, ControlKind kind, std::string_view body) {
    send(to, MsgType::kControl, control_payload(kind, body));
  }

  Task<Frame> recv(Role from, MsgType type) {
    Frame f = co_await ep_.recv(from);
    if (hooks_ && hooks_->on_receive) hooks_->on_receive(from, self(), f);
    if (f.session_id != session_) {
      throw Error(ErrorCode::kSequenceViolation,
                  "frame for session " + std::to_string(f.session_id) + " in session " +
                      std::to_string(session_));
    }
    if (f.type == MsgType::kControl && control_kind(f) == ControlKind::kStop) {
      const auto info = parse_stop(f);
      if (info.abort || type != MsgType::kControl) {
        throw Error(ErrorCode::kPeerClosed,
                    "session stopped by " + std::string(role_name(from)) + ": " + info.reason);
      }
    }
    if (f.type != type) {
      throw Error(ErrorCode::kSequenceViolation,
                  "expected " + std::string(msg_type_name(type)) + " from " +
                      std::string(role_name(from)) + ", got " + std::string(msg_type_name(f.type)));
    }
    auto& last = received_[role_index(from)];
    if (last.has && f.step <= last.step) {
      throw Error(ErrorCode::kSequenceViolation, "step number from " +
                                                     std::string(role_name(from)) +
                                                     " did not increase");
    }
    if ((f.step >> kSubStepBits) != step_) {
      throw Error(ErrorCode::kSequenceViolation,
                  std::string(msg_type_name(type)) + " for step " +
                      std::to_string(f.step >> kSubStepBits) + " arrived during step " +
                      std::to_string(step_));
    }
    last = {true, f.step, 0};
    co_return f;
  }

  // Receives a control frame of the given kind and returns its body.
  Task<std::string> recv_control(Role from, ControlKind kind) {
    Frame f = co_await recv(from, MsgType::kControl);
    if (control_kind(f) != kind) {
      throw Error(ErrorCode::kSequenceViolation,
                  "expected control " + std::string(control_kind_name(kind)) + ", got " +
                      std::string(control_kind_name(control_kind(f))));
    }
    co_return control_body(f);
  }

  static StopInfo parse_stop(const Frame& f) {
    StopInfo info;
    try {
      const auto j = json::parse(control_body(f));
      info.abort = j.value("abort", false);
      info.reason = j.value("reason", "");
    } catch (const json::exception&) {
      info.abort = true;
      info.reason = "unreadable stop";
    }
    return info;
  }

  void stop(Role to, bool abort, const std::string& reason) {
    send_control(to, ControlKind::kStop, json{{"abort", abort}, {"reason", reason}}.dump());
  }

  // Best effort: peers may already be gone.
  void broadcast_abort(const std::string& reason) noexcept {
    for (Role r : kAllRoles) {
      if (r == self()) continue;
      try {
        stop(r, true, reason);
      } catch (...) {
      }
    }
  }

 private:
  struct LinkSeq {
    bool has = false;
    std::uint64_t step = 0;
    std::uint64_t sub = 0;
  };
  Endpoint& ep_;
  std::uint64_t session_;
  SessionHooks* hooks_;
  std::uint64_t step_ = 0;
  std::array<LinkSeq, kRoleCount> sent_{};
  std::array<LinkSeq, kRoleCount> received_{};
};

std::string describe(std::exception_ptr e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& ex) {
    return ex.what();
  } catch (...) {
    return "unknown failure";
  }
}

// -- secret-sharing first layer ---------------------------------------------

struct SsParty {
  int party = 0;
  Role self = Role::kClientA;
  Role other = Role::kClientB;
  FixedPointCodec codec;
  RingMatrix theta_share;  // d x m
  RingMatrix x_share;      // n x d of the current batch
  std::uint64_t triples_consumed = 0;
  // Common stream of A and B; re-randomizes the truncated output shares so
  // each one the server sees is uniform over the ring.
  std::optional<Prg> zero_share;
};

std::vector<BeaverTriple> read_triples(std::span<const std::uint8_t> payload, int party) {
  Reader in(payload);
  const std::uint32_t count = in.u32();
  std::vector<BeaverTriple> out(count);
  for (auto& t : out) {
    t.party = party;
    t.u = read_ring_matrix(in);
    t.v = read_ring_matrix(in);
    t.w = read_ring_matrix(in);
  }
  in.finish();
  return out;
}

std::vector<std::uint8_t> write_triples(const std::vector<const BeaverTriple*>& triples) {
  std::vector<std::uint8_t> out;
  put_u32(out, static_cast<std::uint32_t>(triples.size()));
  for (const auto* t : triples) {
    write_ring_matrix(out, t->u);
    write_ring_matrix(out, t->v);
    write_ring_matrix(out, t->w);
  }
  return out;
}

void deal_triples(RoleIo& io, std::size_t rows, std::size_t d, std::size_t m, const Ring& ring,
                  Prg& rng) {
  auto pairs = dealer_gen_triples(2, rows, d, m, ring, rng);
  io.send(Role::kClientA, MsgType::kTripleDeal, write_triples({&pairs[0][0], &pairs[1][0]}));
  io.send(Role::kClientB, MsgType::kTripleDeal, write_triples({&pairs[0][1], &pairs[1][1]}));
}

// Setup: each client splits its own encoded rows and sends the other half.
Task<void> ss_share_theta(RoleIo& io, SsParty& st, const Tensor& theta_own, Prg& rng) {
  const Ring& ring = st.codec.ring();
  const RingMatrix own = encode_matrix(st.codec, theta_own);
  const RingMatrix mask = random_ring_matrix(own.rows(), own.cols(), ring, rng);
  const RingMatrix kept = ring_sub(own, mask, ring);
  io.send(st.other, MsgType::kShareTransfer, encode_ring_matrix(mask));
  if (st.party == 0) {
    const RingMatrix seed = random_ring_matrix(1, 1, ring, rng);
    io.send(st.other, MsgType::kShareTransfer, encode_ring_matrix(seed));
    st.zero_share.emplace(seed.data()[0]);
  }
  Frame f = co_await io.recv(st.other, MsgType::kShareTransfer);
  RingMatrix theirs = decode_ring_matrix(f.payload);
  if (st.party == 1) {
    Frame g = co_await io.recv(st.other, MsgType::kShareTransfer);
    const RingMatrix seed = decode_ring_matrix(g.payload);
    if (seed.size() != 1) throw Error(ErrorCode::kFrameCorrupt, "bad re-randomization seed");
    st.zero_share.emplace(seed.data()[0]);
  }
  if (theirs.cols() != own.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "first-layer share width differs between clients");
  }
  st.theta_share = st.party == 0 ? ring_vconcat(kept, theirs) : ring_vconcat(theirs, kept);
}

// One batch of the joint first layer: share X, open the two cross terms in one
// message, send this party's share of X * theta to the server.
Task<void> ss_first_layer(RoleIo& io, SsParty& st, const Tensor& x_own, Prg& rng) {
  const Ring& ring = st.codec.ring();
  const std::size_t n = x_own.rows();
  const std::size_t d = st.theta_share.rows(), m = st.theta_share.cols();

  Frame deal = co_await io.recv(Role::kCoordinator, MsgType::kTripleDeal);
  auto triples = read_triples(deal.payload, st.party);
  if (triples.size() < 2) {
    throw Error(ErrorCode::kTripleExhausted, "step needs two triples, dealer sent " +
                                                 std::to_string(triples.size()));
  }
  for (auto& t : triples) check_triple_shape(t, n, d, m);

  const RingMatrix ex = encode_matrix(st.codec, x_own);
  const RingMatrix mask = random_ring_matrix(n, ex.cols(), ring, rng);
  const RingMatrix kept = ring_sub(ex, mask, ring);
  io.send(st.other, MsgType::kShareTransfer, encode_ring_matrix(mask));
  Frame f = co_await io.recv(st.other, MsgType::kShareTransfer);
  RingMatrix theirs = decode_ring_matrix(f.payload);
  if (theirs.rows() != n) {
    throw Error(ErrorCode::kRowCountMismatch, "peer batch has " + std::to_string(theirs.rows()) +
                                                  " rows, expected " + std::to_string(n));
  }
  st.x_share = st.party == 0 ? ring_hconcat(kept, theirs) : ring_hconcat(theirs, kept);
  if (st.x_share.cols() != d) {
    throw Error(ErrorCode::kShapeMismatch, "shared batch width does not match first layer");
  }

  const ShareMatrix x{st.party, st.x_share};
  const ShareMatrix w{st.party, st.theta_share};
  std::array<BeaverTriple*, 2> pair{&triples[0], &triples[1]};
  CrossTermOpening open = cross_terms_open(x, w, pair, ring);
  io.send(st.other, MsgType::kShareTransfer,
          encode_ring_matrix(RingMatrix(1, open.words.size(), open.words)));
  Frame g = co_await io.recv(st.other, MsgType::kShareTransfer);
  RingMatrix words = decode_ring_matrix(g.payload);
  if (words.size() != open.words.size()) {
    throw Error(ErrorCode::kShapeMismatch, "opening from peer has wrong length");
  }
  std::vector<std::uint64_t> theirs_words(words.data().begin(), words.data().end());
  ShareMatrix z = cross_terms_finish(x, w, open, theirs_words, pair, st.codec);
  st.triples_consumed += 2;
  const RingMatrix r = random_ring_matrix(n, m, ring, *st.zero_share);
  z.value = st.party == 0 ? ring_add(z.value, r, ring) : ring_sub(z.value, r, ring);
  io.send(Role::kServer, MsgType::kHiddenLayerUp, encode_ring_matrix(z.value));
}

Task<Tensor> ss_server_first_layer(RoleIo& io, const FixedPointCodec& codec, std::size_t rows,
                                   std::size_t m) {
  Frame fa = co_await io.recv(Role::kClientA, MsgType::kHiddenLayerUp);
  Frame fb = co_await io.recv(Role::kClientB, MsgType::kHiddenLayerUp);
  RingMatrix s0 = decode_ring_matrix(fa.payload);
  RingMatrix s1 = decode_ring_matrix(fb.payload);
  expect_shape(s0.rows(), s0.cols(), rows, m, "share from client_a");
  expect_shape(s1.rows(), s1.cols(), rows, m, "share from client_b");
  co_return decode_matrix(codec, ring_add(s0, s1, codec.ring()));
}

// Share-times-public gradient step on this party's share of theta:
// g = trunc(<X>^T enc(dz)), delta = trunc_s(k * g) with k = round(scale * 2^s).
void ss_update(SsParty& st, const Tensor& dz, double scale, double noise_var, Prg& rng) {
  const Ring& ring = st.codec.ring();
  const RingMatrix gz = encode_matrix(st.codec, dz);
  RingMatrix raw = ring_matmul(ring_transpose(st.x_share), gz, ring);
  for (auto& v : raw.data()) v = st.codec.truncate_share(st.party, v);
  int s = 0;
  while (std::ldexp(scale, s) < 2048.0 && s < 40) ++s;
  const auto k = static_cast<std::uint64_t>(std::llround(std::ldexp(scale, s)));
  const double sd = std::sqrt(noise_var);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    std::uint64_t delta = st.codec.truncate_share(st.party, ring.mul(k, raw.data()[i]), s);
    if (noise_var > 0.0) delta = ring.add(delta, st.codec.encode(sd * rng.normal()).value);
    st.theta_share.data()[i] = ring.sub(st.theta_share.data()[i], delta);
  }
}

// -- homomorphic first layer ------------------------------------------------

struct HeParty {
  Role self = Role::kClientA;
  std::optional<paillier::PublicKey> pk;
  std::optional<paillier::SlotPacker> packer;
  std::optional<paillier::SignedEncoder> encoder;
  bool packed = true;
  FixedPointCodec codec;

  void set_key(paillier::PublicKey key, int frac_bits) {
    pk = std::move(key);
    packer.emplace(*pk, 62, 2);
    encoder.emplace(*pk, frac_bits);
  }
};

std::vector<std::int64_t> fixed_product(const FixedPointCodec& codec, const Tensor& x,
                                        const Tensor& theta) {
  const RingMatrix prod =
      ring_matmul(encode_matrix(codec, x), encode_matrix(codec, theta), codec.ring());
  std::vector<std::int64_t> out(prod.size());
  for (std::size_t i = 0; i < prod.size(); ++i) {
    out[i] = codec.ring().to_signed(codec.truncate({prod.data()[i]}).value);
  }
  return out;
}

struct CipherMatrix {
  std::size_t rows = 0, cols = 0;
  bool packed = true;
  std::uint64_t fingerprint = 0;
  std::vector<paillier::Ciphertext> cts;
};

std::vector<std::uint8_t> write_ciphers(const CipherMatrix& c) {
  std::vector<std::uint8_t> out;
  put_u32(out, static_cast<std::uint32_t>(c.rows));
  put_u32(out, static_cast<std::uint32_t>(c.cols));
  put_u8(out, c.packed ? 1 : 0);
  put_u64(out, c.fingerprint);
  put_u32(out, static_cast<std::uint32_t>(c.cts.size()));
  for (const auto& ct : c.cts) paillier::append_bigint(out, ct.value);
  return out;
}

CipherMatrix read_ciphers(std::span<const std::uint8_t> payload) {
  Reader in(payload);
  CipherMatrix c;
  c.rows = in.u32();
  c.cols = in.u32();
  c.packed = in.u8() != 0;
  c.fingerprint = in.u64();
  const std::uint32_t count = in.u32();
  c.cts.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    c.cts.push_back({paillier::read_bigint(in.bytes(), in.offset()), c.fingerprint});
  }
  in.finish();
  return c;
}

std::size_t cipher_count(std::size_t values, bool packed, std::size_t slots) {
  return packed ? (values + slots - 1) / slots : values;
}

CipherMatrix encrypt_values(const HeParty& he, const std::vector<std::int64_t>& values,
                            std::size_t rows, std::size_t cols, Prg& rng) {
  CipherMatrix c{rows, cols, he.packed, he.pk->fingerprint, {}};
  if (he.packed) {
    const std::size_t slots = he.packer->slots();
    for (std::size_t i = 0; i < values.size(); i += slots) {
      const std::size_t len = std::min(slots, values.size() - i);
      const mpz_class m = he.packer->pack(std::span<const std::int64_t>(values).subspan(i, len));
      c.cts.push_back(paillier::encrypt(*he.pk, m, rng));
    }
  } else {
    for (auto v : values) c.cts.push_back(paillier::encrypt(*he.pk, he.encoder->encode_fixed(v), rng));
  }
  return c;
}

void check_ciphers(const CipherMatrix& c, const paillier::PublicKey& pk, std::size_t rows,
                   std::size_t cols, bool packed, std::size_t slots) {
  if (c.fingerprint != pk.fingerprint) {
    throw Error(ErrorCode::kKeyMismatch, "ciphertexts encrypted under another public key");
  }
  expect_shape(c.rows, c.cols, rows, cols, "encrypted product");
  if (c.packed != packed || c.cts.size() != cipher_count(rows * cols, packed, slots)) {
    throw Error(ErrorCode::kMalformedCiphertext, "unexpected ciphertext count or layout");
  }
}

// A encrypts X_A theta_A and hands it to B; B adds its own encrypted product
// and forwards the sum to the server.
Task<void> he_first_layer(RoleIo& io, HeParty& he, const Tensor& x_own, const Tensor& theta_own,
                          Prg& rng) {
  const std::size_t n = x_own.rows(), m = theta_own.cols();
  const auto values = fixed_product(he.codec, x_own, theta_own);
  CipherMatrix mine = encrypt_values(he, values, n, m, rng);
  if (he.self == Role::kClientA) {
    io.send(Role::kClientB, MsgType::kCiphertextTransfer, write_ciphers(mine));
    co_return;
  }
  Frame f = co_await io.recv(Role::kClientA, MsgType::kCiphertextTransfer);
  CipherMatrix theirs = read_ciphers(f.payload);
  check_ciphers(theirs, *he.pk, n, m, he.packed, he.packer->slots());
  for (std::size_t i = 0; i < mine.cts.size(); ++i) {
    mine.cts[i] = paillier::add_ct(*he.pk, mine.cts[i], theirs.cts[i]);
  }
  io.send(Role::kServer, MsgType::kHiddenLayerUp, write_ciphers(mine));
}

Task<Tensor> he_server_first_layer(RoleIo& io, const paillier::Keypair& key, bool packed,
                                   const FixedPointCodec& codec, std::size_t rows, std::size_t m) {
  Frame f = co_await io.recv(Role::kClientB, MsgType::kHiddenLayerUp);
  CipherMatrix c = read_ciphers(f.payload);
  const paillier::SlotPacker packer(key.pk, 62, 2);
  const paillier::SignedEncoder encoder(key.pk, codec.frac_bits());
  check_ciphers(c, key.pk, rows, m, packed, packer.slots());
  Tensor z(rows, m);
  auto out = z.data();
  std::size_t pos = 0;
  for (const auto& ct : c.cts) {
    const mpz_class plain = paillier::decrypt(key, ct);
    if (packed) {
      const std::size_t len = std::min(packer.slots(), out.size() - pos);
      for (auto v : packer.unpack(plain, len, 2)) out[pos++] = codec.decode_signed(v);
    } else {
      const mpz_class v = encoder.decode_fixed(plain);
      if (!v.fits_slong_p()) throw Error(ErrorCode::kRange, "decrypted value exceeds 64 bits");
      out[pos++] = codec.decode_signed(v.get_si());
    }
  }
  co_return z;
}

// -- float first layer (test-only) ------------------------------------------

Task<void> float_first_layer(RoleIo& io, Role self, const Tensor& x_own, const Tensor& theta_own) {
  if (self == Role::kClientA) {
    io.send(Role::kClientB, MsgType::kCiphertextTransfer, encode_tensor(matmul(x_own, theta_own)));
    co_return;
  }
  Frame f = co_await io.recv(Role::kClientA, MsgType::kCiphertextTransfer);
  Tensor partial = decode_tensor(f.payload);
  expect_shape(partial.rows(), partial.cols(), x_own.rows(), theta_own.cols(), "partial product");
  io.send(Role::kServer, MsgType::kHiddenLayerUp,
          encode_tensor(matmul_continue(std::move(partial), x_own, theta_own)));
}

// -- control payloads ---------------------------------------------------------

struct EpochStart {
  std::uint32_t epoch = 0;
  bool train = true;
  std::uint32_t rows = 0;
  std::vector<std::size_t> order;  // empty for the server and for evaluation
};

std::vector<std::uint8_t> write_epoch_start(const EpochStart& e, bool with_order) {
  std::vector<std::uint8_t> body;
  put_u32(body, e.epoch);
  put_u8(body, e.train ? 0 : 1);
  put_u32(body, e.rows);
  put_u8(body, with_order ? 1 : 0);
  if (with_order) {
    for (auto i : e.order) put_u32(body, static_cast<std::uint32_t>(i));
  }
  return control_payload(ControlKind::kEpochStart, std::span<const std::uint8_t>(body));
}

EpochStart read_epoch_start(std::span<const std::uint8_t> body) {
  Reader in(body);
  EpochStart e;
  e.epoch = in.u32();
  e.train = in.u8() == 0;
  e.rows = in.u32();
  if (in.u8() != 0) {
    e.order.resize(e.rows);
    for (auto& i : e.order) i = in.u32();
  }
  in.finish();
  return e;
}

std::span<const std::uint8_t> control_bytes(const Frame& f) {
  return std::span<const std::uint8_t>(f.payload).subspan(1);
}

json opt_double(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_opt_double(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

OptimizerConfig resolve_likelihood(OptimizerConfig opt, std::size_t rows) {
  if (opt.likelihood_scale == 0.0) opt.likelihood_scale = static_cast<double>(rows);
  return opt;
}

OptimizerConfig scoped(const OptimizerConfig& opt, bool in_scope) {
  OptimizerConfig out = opt;
  if (!in_scope) out.kind = OptimizerKind::kSgd;
  return out;
}

struct SessionShape {
  TrainConfig cfg;
  PartitionPlan plan;
  std::size_t rows_train = 0;
  std::size_t rows_test = 0;

  bool has_eval() const { return cfg.evaluate && rows_test > 0; }
};

SessionShape read_session_config(const std::string& body) {
  try {
    const auto j = json::parse(body);
    SessionShape s;
    s.cfg = TrainConfig::from_json(j.at("config").dump());
    s.plan = PartitionPlan::from_json(j.at("plan").dump());
    s.rows_train = j.at("rows_train").get<std::size_t>();
    s.rows_test = j.at("rows_test").get<std::size_t>();
    s.cfg.optimizer = resolve_likelihood(s.cfg.optimizer, s.rows_train);
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("session config: ") + e.what());
  }
}

std::vector<std::size_t> batch_rows(const std::vector<std::size_t>& order, std::size_t batch,
                                    std::size_t batch_size) {
  const std::size_t begin = batch * batch_size;
  const std::size_t end = std::min(order.size(), begin + batch_size);
  return {order.begin() + static_cast<std::ptrdiff_t>(begin),
          order.begin() + static_cast<std::ptrdiff_t>(end)};
}

Tensor slice_rows_copy(const Tensor& a, std::size_t begin, std::size_t end) {
  Tensor out(end - begin, a.cols());
  std::copy(a.data().begin() + static_cast<std::ptrdiff_t>(begin * a.cols()),
            a.data().begin() + static_cast<std::ptrdiff_t>(end * a.cols()), out.data().begin());
  return out;
}

std::vector<std::size_t> identity_order(std::size_t n) {
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& y, const std::vector<std::size_t>& rows) {
  std::vector<int> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = y[rows[i]];
  return out;
}

std::optional<double> safe_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  try {
    return auc(scores, labels);
  } catch (const Error&) {
    return std::nullopt;
  }
}

// First steps of every session: 0 hello, 1 config, 2 keys or shares, 3 ready.
constexpr std::uint64_t kStepHello = 0;
constexpr std::uint64_t kStepConfig = 1;
constexpr std::uint64_t kStepSetup = 2;
constexpr std::uint64_t kStepReady = 3;

}  // namespace

// -- names ----------------------------------------------------------------------

std::string_view mode_name(ProtocolMode m) {
  switch (m) {
    case ProtocolMode::kSecretSharing: return "ss";
    case ProtocolMode::kHomomorphic: return "he";
    case ProtocolMode::kFloat: return "float";
  }
  return "unknown";
}

ProtocolMode parse_mode(std::string_view name) {
  if (name == "ss" || name == "SS") return ProtocolMode::kSecretSharing;
  if (name == "he" || name == "HE") return ProtocolMode::kHomomorphic;
  if (name == "float") return ProtocolMode::kFloat;
  throw Error(ErrorCode::kInvalidConfig, "unknown protocol mode '" + std::string(name) + "'");
}

std::string_view sgld_scope_name(SgldScope s) { return s == SgldScope::kAll ? "all" : "server"; }

SgldScope parse_sgld_scope(std::string_view name) {
  if (name == "server") return SgldScope::kServer;
  if (name == "all") return SgldScope::kAll;
  throw Error(ErrorCode::kInvalidConfig, "unknown SGLD scope '" + std::string(name) + "'");
}

// -- plan ---------------------------------------------------------------------

PartitionPlan split_graph(const NetSpec& spec) {
  if (spec.input_a == 0 || spec.input_b == 0) {
    throw Error(ErrorCode::kInvalidSpec, "both clients must hold at least one feature");
  }
  if (spec.classes == 0) throw Error(ErrorCode::kInvalidSpec, "head needs at least one output");
  if (spec.activations.size() != spec.hidden.size()) {
    throw Error(ErrorCode::kInvalidSpec, "one activation per hidden layer required");
  }
  for (auto h : spec.hidden) {
    if (h == 0) throw Error(ErrorCode::kInvalidSpec, "hidden layer of width zero");
  }
  PartitionPlan plan;
  plan.input_a = spec.input_a;
  plan.input_b = spec.input_b;
  plan.classes = spec.classes;
  if (spec.hidden.empty()) {
    if (!spec.allow_identity_stack) {
      throw Error(ErrorCode::kInvalidSpec,
                  "no hidden layers: the server stack would be the identity");
    }
    plan.first_width = spec.classes;
    plan.first_activation = Activation::kIdentity;
    plan.server_dims = {spec.classes};
    plan.head = false;
    plan.degenerate = true;
    return plan;
  }
  plan.first_width = spec.hidden.front();
  plan.first_activation = spec.activations.front();
  plan.server_dims = spec.hidden;
  plan.server_activations.assign(spec.activations.begin() + 1, spec.activations.end());
  return plan;
}

std::string PartitionPlan::to_json() const {
  json acts = json::array();
  for (auto a : server_activations) acts.push_back(std::string(activation_name(a)));
  json j{{"input_a", input_a},
         {"input_b", input_b},
         {"first_width", first_width},
         {"first_activation", std::string(activation_name(first_activation))},
         {"server_dims", server_dims},
         {"server_activations", acts},
         {"classes", classes},
         {"head", head},
         {"degenerate", degenerate},
         {"owners",
          {{"first_layer", "client_a+client_b"}, {"stack", "server"}, {"head", "client_a"}}}};
  return j.dump();
}

PartitionPlan PartitionPlan::from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    PartitionPlan p;
    p.input_a = j.at("input_a").get<std::size_t>();
    p.input_b = j.at("input_b").get<std::size_t>();
    p.first_width = j.at("first_width").get<std::size_t>();
    p.first_activation = parse_activation(j.at("first_activation").get<std::string>());
    p.server_dims = j.at("server_dims").get<std::vector<std::size_t>>();
    for (const auto& a : j.at("server_activations")) {
      p.server_activations.push_back(parse_activation(a.get<std::string>()));
    }
    p.classes = j.at("classes").get<std::size_t>();
    p.head = j.at("head").get<bool>();
    p.degenerate = j.at("degenerate").get<bool>();
    if (p.server_dims.empty() || p.server_dims.front() != p.first_width ||
        p.server_activations.size() + 1 != p.server_dims.size()) {
      throw Error(ErrorCode::kInvalidSpec, "inconsistent partition plan");
    }
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("partition plan: ") + e.what());
  }
}

// -- config ---------------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::kInvalidConfig, "T must be at least 1");
  optimizer.validate();
  if (frac_bits < 1 || frac_bits > 31) {
    throw Error(ErrorCode::kInvalidConfig, "fractional bits must lie in [1, 31]");
  }
  if (mode == ProtocolMode::kHomomorphic &&
      (key_bits < paillier::kMinTestBits || key_bits % 2 != 0)) {
    throw Error(ErrorCode::kInvalidConfig, "Paillier modulus must be even and >= 512 bits");
  }
  if (early_stop_loss < 0.0 || !std::isfinite(early_stop_loss)) {
    throw Error(ErrorCode::kInvalidConfig, "early-stop threshold must be finite and >= 0");
  }
  (void)split_graph(net);
}

std::string TrainConfig::to_json() const {
  json acts = json::array();
  for (auto a : net.activations) acts.push_back(std::string(activation_name(a)));
  json j{{"protocol_mode", std::string(mode_name(mode))},
         {"net",
          {{"input_a", net.input_a},
           {"input_b", net.input_b},
           {"hidden", net.hidden},
           {"activations", acts},
           {"classes", net.classes},
           {"allow_identity_stack", net.allow_identity_stack}}},
         {"optimizer",
          {{"kind", std::string(optimizer_name(optimizer.kind))},
           {"learning_rate", optimizer.learning_rate},
           {"batch_size", optimizer.batch_size},
           {"schedule_gamma", optimizer.schedule_gamma},
           {"schedule_tau", optimizer.schedule_tau},
           {"noise_seed", optimizer.noise_seed},
           {"likelihood_scale", optimizer.likelihood_scale}}},
         {"sgld_scope", std::string(sgld_scope_name(sgld_scope))},
         {"epochs", epochs},
         {"seed", seed},
         {"session_id", session_id},
         {"frac_bits", frac_bits},
         {"key_bits", key_bits},
         {"he_packing", he_packing},
         {"early_stop_loss", early_stop_loss},
         {"evaluate", evaluate}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    TrainConfig c;
    if (j.contains("protocol_mode")) c.mode = parse_mode(j.at("protocol_mode").get<std::string>());
    if (j.contains("net")) {
      const auto& n = j.at("net");
      c.net.input_a = n.value("input_a", std::size_t{0});
      c.net.input_b = n.value("input_b", std::size_t{0});
      c.net.hidden = n.value("hidden", std::vector<std::size_t>{});
      if (n.contains("activations")) {
        for (const auto& a : n.at("activations")) {
          c.net.activations.push_back(parse_activation(a.get<std::string>()));
        }
      }
      c.net.classes = n.value("classes", std::size_t{2});
      c.net.allow_identity_stack = n.value("allow_identity_stack", false);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      if (o.contains("kind")) c.optimizer.kind = parse_optimizer(o.at("kind").get<std::string>());
      c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
      c.optimizer.batch_size = o.value("batch_size", c.optimizer.batch_size);
      c.optimizer.schedule_gamma = o.value("schedule_gamma", c.optimizer.schedule_gamma);
      c.optimizer.schedule_tau = o.value("schedule_tau", c.optimizer.schedule_tau);
      c.optimizer.noise_seed = o.value("noise_seed", c.optimizer.noise_seed);
      c.optimizer.likelihood_scale = o.value("likelihood_scale", c.optimizer.likelihood_scale);
    }
    if (j.contains("sgld_scope")) c.sgld_scope = parse_sgld_scope(j.at("sgld_scope").get<std::string>());
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.session_id = j.value("session_id", c.session_id);
    c.frac_bits = j.value("frac_bits", c.frac_bits);
    c.key_bits = j.value("key_bits", c.key_bits);
    c.he_packing = j.value("he_packing", c.he_packing);
    c.early_stop_loss = j.value("early_stop_loss", c.early_stop_loss);
    c.evaluate = j.value("evaluate", c.evaluate);
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("train config: ") + e.what());
  }
}

std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::uint64_t epoch,
                                           std::size_t rows) {
  std::vector<std::size_t> order = identity_order(rows);
  Prg rng(mix_seed(seed, kPermTag), epoch);
  for (std::size_t i = rows; i > 1; --i) {
    const std::size_t j = rng.uniform(i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::size_t batch_count(std::size_t rows, std::size_t batch_size) {
  return (rows + batch_size - 1) / batch_size;
}

Mlp initial_model(const PartitionPlan& plan, std::uint64_t seed) {
  std::vector<AffineLayer> layers;
  layers.push_back(
      init_layer(plan.input_width(), plan.first_width, plan.first_activation, seed, 0));
  for (std::size_t l = 1; l < plan.server_dims.size(); ++l) {
    layers.push_back(init_layer(plan.server_dims[l - 1], plan.server_dims[l],
                                plan.server_activations[l - 1], seed, l));
  }
  if (plan.head) {
    layers.push_back(init_layer(plan.head_in(), plan.classes, Activation::kIdentity, seed,
                                plan.server_dims.size()));
  }
  return Mlp(std::move(layers));
}

Prg noise_stream(const OptimizerConfig& opt, std::size_t layer, std::size_t part) {
  return Prg(mix_seed(mix_seed(opt.noise_seed, kNoiseTag), layer), part);
}

// -- codecs -------------------------------------------------------------------

std::vector<std::uint8_t> encode_ring_matrix(const RingMatrix& m) {
  std::vector<std::uint8_t> out;
  write_ring_matrix(out, m);
  return out;
}

RingMatrix decode_ring_matrix(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  RingMatrix m = read_ring_matrix(in);
  in.finish();
  return m;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::vector<std::uint8_t> out;
  write_tensor(out, t);
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  Tensor t = read_tensor(in);
  in.finish();
  return t;
}

std::vector<std::uint8_t> control_payload(ControlKind kind, std::string_view body) {
  std::vector<std::uint8_t> out;
  out.reserve(body.size() + 1);
  out.push_back(static_cast<std::uint8_t>(kind));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

std::vector<std::uint8_t> control_payload(ControlKind kind, std::span<const std::uint8_t> body) {
  std::vector<std::uint8_t> out;
  out.reserve(body.size() + 1);
  out.push_back(static_cast<std::uint8_t>(kind));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

ControlKind control_kind(const Frame& f) {
  if (f.type != MsgType::kControl || f.payload.empty()) {
    throw Error(ErrorCode::kFrameCorrupt, "not a control frame");
  }
  const auto k = f.payload[0];
  if (k < 1 || k > 6) throw Error(ErrorCode::kFrameCorrupt, "unknown control kind");
  return static_cast<ControlKind>(k);
}

std::string control_body(const Frame& f) {
  if (f.payload.empty()) throw Error(ErrorCode::kFrameCorrupt, "empty control frame");
  return std::string(f.payload.begin() + 1, f.payload.end());
}

// -- coordinator ----------------------------------------------------------------

struct CoordinatorRole::Impl {
  Impl(Endpoint& ep, TrainConfig c, RoleOptions o)
      : io(ep, c.session_id, o.hooks), cfg(std::move(c)), opts(o), rng(private_rng(o)) {}

  RoleIo io;
  TrainConfig cfg;
  RoleOptions opts;
  Prg rng;
  PartitionPlan plan;
  std::vector<EpochMetrics> epochs;
  bool early_stopped = false;
  std::uint64_t triples = 0;

  Task<void> body() {
    cfg.validate();
    plan = split_graph(cfg.net);
    const Role peers[] = {Role::kServer, Role::kClientA, Role::kClientB};

    io.set_step(kStepHello);
    std::array<json, kRoleCount> hello;
    for (Role r : peers) {
      hello[role_index(r)] = json::parse(co_await io.recv_control(r, ControlKind::kStart));
    }
    const auto& ha = hello[role_index(Role::kClientA)];
    const auto& hb = hello[role_index(Role::kClientB)];
    const std::size_t rows_train = ha.at("rows_train").get<std::size_t>();
    const std::size_t rows_test = ha.at("rows_test").get<std::size_t>();
    if (hb.at("rows_train").get<std::size_t>() != rows_train ||
        hb.at("rows_test").get<std::size_t>() != rows_test) {
      throw Error(ErrorCode::kRowCountMismatch, "clients hold different numbers of rows");
    }
    if (ha.at("features").get<std::size_t>() != plan.input_a ||
        hb.at("features").get<std::size_t>() != plan.input_b) {
      throw Error(ErrorCode::kShapeMismatch, "client feature counts do not match the network");
    }
    if (rows_train == 0) throw Error(ErrorCode::kEmptyDataset, "no training rows");

    io.set_step(kStepConfig);
    const std::string config = json{{"config", json::parse(cfg.to_json())},
                                    {"plan", json::parse(plan.to_json())},
                                    {"rows_train", rows_train},
                                    {"rows_test", rows_test}}
                                   .dump();
    for (Role r : peers) io.send_control(r, ControlKind::kConfig, config);

    io.set_step(kStepReady);
    for (Role r : peers) (void)co_await io.recv_control(r, ControlKind::kStart);

    const bool ss = cfg.mode == ProtocolMode::kSecretSharing;
    const bool eval = cfg.evaluate && rows_test > 0;
    const std::size_t bs = cfg.optimizer.batch_size;
    const std::size_t d = plan.input_width(), m = plan.first_width;
    const Ring ring(64);
    auto deal_phase = [&](std::uint64_t& t, std::size_t rows) {
      for (std::size_t b = 0; b < batch_count(rows, bs); ++b) {
        io.set_step(t++);
        if (ss) {
          deal_triples(io, std::min(bs, rows - b * bs), d, m, ring, rng);
          triples += 2;
        }
      }
    };

    std::uint64_t t = kFirstEpochStep;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      io.set_step(t++);
      io.mark("epoch_begin:" + std::to_string(e));
      EpochStart start{static_cast<std::uint32_t>(e), true, static_cast<std::uint32_t>(rows_train),
                       epoch_permutation(cfg.seed, e, rows_train)};
      io.send(Role::kServer, MsgType::kControl, write_epoch_start(start, false));
      io.send(Role::kClientA, MsgType::kControl, write_epoch_start(start, true));
      io.send(Role::kClientB, MsgType::kControl, write_epoch_start(start, true));
      deal_phase(t, rows_train);
      if (eval) {
        io.set_step(t++);
        EpochStart ev{static_cast<std::uint32_t>(e), false, static_cast<std::uint32_t>(rows_test), {}};
        for (Role r : peers) io.send(r, MsgType::kControl, write_epoch_start(ev, false));
        deal_phase(t, rows_test);
      }
      io.set_step(t++);
      const auto report = json::parse(co_await io.recv_control(Role::kClientA, ControlKind::kEpochReport));
      EpochMetrics em;
      em.epoch = e;
      em.steps = report.at("steps").get<std::size_t>();
      em.train_loss = report.at("train_loss").get<double>();
      em.test_loss = read_opt_double(report, "test_loss");
      em.test_auc = read_opt_double(report, "test_auc");
      epochs.push_back(em);
      if (cfg.early_stop_loss > 0.0 && em.train_loss < cfg.early_stop_loss &&
          e + 1 < cfg.epochs) {
        early_stopped = true;
        break;
      }
    }
    io.set_step(t);
    for (Role r : peers) io.stop(r, false, early_stopped ? "early stop" : "complete");
  }
};

CoordinatorRole::CoordinatorRole(Endpoint& ep, TrainConfig cfg, RoleOptions opts)
    : impl_(std::make_unique<Impl>(ep, std::move(cfg), opts)) {}
CoordinatorRole::~CoordinatorRole() = default;

Task<void> CoordinatorRole::run() {
  std::exception_ptr err;
  try {
    co_await impl_->body();
  } catch (...) {
    err = std::current_exception();
  }
  if (err) {
    impl_->io.broadcast_abort(describe(err));
    std::rethrow_exception(err);
  }
}

const PartitionPlan& CoordinatorRole::plan() const { return impl_->plan; }
const std::vector<EpochMetrics>& CoordinatorRole::epochs() const { return impl_->epochs; }
bool CoordinatorRole::early_stopped() const { return impl_->early_stopped; }
std::uint64_t CoordinatorRole::triples_dealt() const { return impl_->triples; }

// -- server -----------------------------------------------------------------------

struct ServerRole::Impl {
  Impl(Endpoint& ep, RoleOptions o) : io(ep, o.session_id, o.hooks), opts(o), rng(private_rng(o)) {}

  RoleIo io;
  RoleOptions opts;
  Prg rng;
  SessionShape shape;
  FixedPointCodec codec{64, 16};
  Tensor b1;
  Mlp stack;
  std::optional<paillier::Keypair> key;
  std::vector<Prg> noise;  // b1, then weights and bias of each stack layer
  std::uint64_t train_step = 0;

  Task<void> body() {
    io.set_step(kStepHello);
    io.send_control(Role::kCoordinator, ControlKind::kStart,
                    json{{"phase", "hello"}, {"role", "server"}}.dump());
    io.set_step(kStepConfig);
    shape = read_session_config(co_await io.recv_control(Role::kCoordinator, ControlKind::kConfig));
    const auto& cfg = shape.cfg;
    const auto& plan = shape.plan;
    codec = FixedPointCodec(64, cfg.frac_bits);

    Mlp init = initial_model(plan, cfg.seed);
    b1 = init.layers()[0].bias;
    std::vector<AffineLayer> layers(init.layers().begin() + 1,
                                    init.layers().begin() + static_cast<std::ptrdiff_t>(plan.server_dims.size()));
    stack = Mlp(std::move(layers));
    noise.push_back(noise_stream(cfg.optimizer, 0, 2));
    for (std::size_t l = 1; l < plan.server_dims.size(); ++l) {
      noise.push_back(noise_stream(cfg.optimizer, l, 0));
      noise.push_back(noise_stream(cfg.optimizer, l, 2));
    }

    io.set_step(kStepSetup);
    if (cfg.mode == ProtocolMode::kHomomorphic) {
      key = paillier::keygen(cfg.key_bits, rng);
      const auto pk = paillier::serialize_public_key(key->pk);
      io.send(Role::kClientA, MsgType::kKeyDistribution, pk);
      io.send(Role::kClientB, MsgType::kKeyDistribution, pk);
    }
    io.set_step(kStepReady);
    io.send_control(Role::kCoordinator, ControlKind::kStart, json{{"phase", "ready"}}.dump());

    std::uint64_t t = kFirstEpochStep;
    for (;;) {
      io.set_step(t++);
      Frame f = co_await io.recv(Role::kCoordinator, MsgType::kControl);
      if (control_kind(f) == ControlKind::kStop) break;
      const EpochStart start = read_epoch_start(control_bytes(f));
      co_await phase(t, start);
      io.mark("train_end:" + std::to_string(start.epoch));
      if (shape.has_eval()) {
        io.set_step(t++);
        Frame g = co_await io.recv(Role::kCoordinator, MsgType::kControl);
        co_await phase(t, read_epoch_start(control_bytes(g)));
      }
      ++t;  // epoch report (client A to coordinator)
    }
  }

  Task<void> phase(std::uint64_t& t, const EpochStart& start) {
    const std::size_t bs = shape.cfg.optimizer.batch_size;
    for (std::size_t b = 0; b < batch_count(start.rows, bs); ++b) {
      io.set_step(t);
      BatchInfo info{start.epoch, start.train, b, t, std::min(bs, start.rows - b * bs)};
      co_await batch(info);
      ++t;
    }
  }

  Task<Tensor> first_layer(std::size_t rows) {
    const std::size_t m = shape.plan.first_width;
    switch (shape.cfg.mode) {
      case ProtocolMode::kSecretSharing:
        co_return co_await ss_server_first_layer(io, codec, rows, m);
      case ProtocolMode::kHomomorphic:
        co_return co_await he_server_first_layer(io, *key, shape.cfg.he_packing, codec, rows, m);
      case ProtocolMode::kFloat: {
        Frame f = co_await io.recv(Role::kClientB, MsgType::kHiddenLayerUp);
        Tensor z = decode_tensor(f.payload);
        expect_shape(z.rows(), z.cols(), rows, m, "first-layer product");
        co_return z;
      }
    }
    throw Error(ErrorCode::kInvalidConfig, "unknown protocol mode");
  }

  Task<void> batch(const BatchInfo& info) {
    const auto& cfg = shape.cfg;
    const auto& plan = shape.plan;
    Tensor pre = co_await first_layer(info.rows);
    add_row_vector(pre, b1);
    Tensor post(pre.rows(), pre.cols());
    apply_activation(plan.first_activation, pre.data(), post.data());
    if (opts.hooks && opts.hooks->on_server_h1) opts.hooks->on_server_h1(info, pre, post);

    ForwardCache cache;
    const Tensor h_last = stack.forward(post, &cache);
    io.send(Role::kClientA, MsgType::kLastHiddenToA, encode_tensor(h_last));
    if (!info.train) co_return;

    Frame g = co_await io.recv(Role::kClientA, MsgType::kHeadGradDown);
    const Tensor d_last = decode_tensor(g.payload);
    expect_shape(d_last.rows(), d_last.cols(), h_last.rows(), h_last.cols(), "head gradient");
    Gradients grads = stack.backward(cache, d_last);
    const Tensor dz = activation_backward(plan.first_activation, pre, post, grads.input);
    io.send(Role::kClientA, MsgType::kInputGradDown, encode_tensor(dz));
    io.send(Role::kClientB, MsgType::kInputGradDown, encode_tensor(dz));

    const OptimizerConfig opt = cfg.optimizer;
    const std::uint64_t t = train_step++;
    optimizer_step(b1, column_sums(dz), opt, t, info.rows, noise[0]);
    auto& layers = stack.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      optimizer_step(layers[l].weights, grads.layers[l].weights, opt, t, info.rows, noise[1 + 2 * l]);
      optimizer_step(layers[l].bias, grads.layers[l].bias, opt, t, info.rows, noise[2 + 2 * l]);
    }
  }
};

ServerRole::ServerRole(Endpoint& ep, RoleOptions opts) : impl_(std::make_unique<Impl>(ep, opts)) {}
ServerRole::~ServerRole() = default;

Task<void> ServerRole::run() {
  std::exception_ptr err;
  try {
    co_await impl_->body();
  } catch (...) {
    err = std::current_exception();
  }
  if (err) {
    impl_->io.broadcast_abort(describe(err));
    std::rethrow_exception(err);
  }
}

const Tensor& ServerRole::first_bias() const { return impl_->b1; }
const Mlp& ServerRole::stack() const { return impl_->stack; }

// -- clients ----------------------------------------------------------------------

struct ClientRole::Impl {
  Impl(Role r, Endpoint& ep, ClientData d, std::optional<LabelData> l, RoleOptions o)
      : role(r), io(ep, o.session_id, o.hooks), data(std::move(d)), labels(std::move(l)), opts(o),
        rng(private_rng(o)) {
    if (r != Role::kClientA && r != Role::kClientB) {
      throw Error(ErrorCode::kInvalidConfig, "client role must be client_a or client_b");
    }
    if (r == Role::kClientA && !labels) {
      throw Error(ErrorCode::kInvalidConfig, "client_a holds the labels");
    }
    if (r == Role::kClientB && labels) {
      throw Error(ErrorCode::kInvalidConfig, "labels must stay with client_a");
    }
    if (labels && (labels->train.size() != data.train.rows() || labels->test.size() != data.test.rows())) {
      throw Error(ErrorCode::kRowCountMismatch, "labels and features differ in row count");
    }
    if (data.test.rows() > 0 && data.test.cols() != data.train.cols()) {
      throw Error(ErrorCode::kShapeMismatch, "train and test feature widths differ");
    }
    ss.party = r == Role::kClientA ? 0 : 1;
    ss.self = r;
    ss.other = r == Role::kClientA ? Role::kClientB : Role::kClientA;
    he.self = r;
  }

  Role role;
  RoleIo io;
  ClientData data;
  std::optional<LabelData> labels;
  RoleOptions opts;
  Prg rng;
  SessionShape shape;
  SsParty ss;
  HeParty he;
  Tensor theta;  // own rows (HE and float), initial rows in SS mode
  Mlp head;
  Prg theta_noise{0};
  std::vector<Prg> head_noise;
  std::uint64_t train_step = 0;
  std::vector<double> test_scores;

  bool is_a() const { return role == Role::kClientA; }

  Task<void> body() {
    io.set_step(kStepHello);
    io.send_control(Role::kCoordinator, ControlKind::kStart,
                    json{{"phase", "hello"},
                         {"role", std::string(role_name(role))},
                         {"rows_train", data.train.rows()},
                         {"rows_test", data.test.rows()},
                         {"features", data.train.cols()}}
                        .dump());
    io.set_step(kStepConfig);
    shape = read_session_config(co_await io.recv_control(Role::kCoordinator, ControlKind::kConfig));
    const auto& cfg = shape.cfg;
    const auto& plan = shape.plan;
    const std::size_t d = plan.input_width(), m = plan.first_width;
    const std::size_t begin = is_a() ? 0 : plan.input_a;
    const std::size_t end = is_a() ? plan.input_a : d;
    theta = init_weight_rows(d, m, begin, end, cfg.seed, 0);
    theta_noise = noise_stream(cfg.optimizer, 0, is_a() ? 0 : 1);
    ss.codec = FixedPointCodec(64, cfg.frac_bits);
    he.codec = ss.codec;
    he.packed = cfg.he_packing;
    if (is_a() && plan.head) {
      Mlp init = initial_model(plan, cfg.seed);
      head = Mlp({init.layers().back()});
      const std::size_t k = plan.server_dims.size();
      head_noise = {noise_stream(cfg.optimizer, k, 0), noise_stream(cfg.optimizer, k, 2)};
    }

    io.set_step(kStepSetup);
    if (cfg.mode == ProtocolMode::kHomomorphic) {
      Frame f = co_await io.recv(Role::kServer, MsgType::kKeyDistribution);
      he.set_key(paillier::deserialize_public_key(f.payload), cfg.frac_bits);
    } else if (cfg.mode == ProtocolMode::kSecretSharing) {
      co_await ss_share_theta(io, ss, theta, rng);
    }
    io.set_step(kStepReady);
    io.send_control(Role::kCoordinator, ControlKind::kStart, json{{"phase", "ready"}}.dump());

    std::uint64_t t = kFirstEpochStep;
    for (;;) {
      io.set_step(t++);
      Frame f = co_await io.recv(Role::kCoordinator, MsgType::kControl);
      if (control_kind(f) == ControlKind::kStop) break;
      const EpochStart start = read_epoch_start(control_bytes(f));
      if (start.rows != data.train.rows() || start.order.size() != start.rows) {
        throw Error(ErrorCode::kRowCountMismatch, "epoch order does not cover the training rows");
      }
      const double train_loss = co_await phase(t, start, data.train);
      io.mark("train_end:" + std::to_string(start.epoch));
      std::optional<double> test_loss, test_auc;
      if (shape.has_eval()) {
        io.set_step(t++);
        Frame g = co_await io.recv(Role::kCoordinator, MsgType::kControl);
        EpochStart ev = read_epoch_start(control_bytes(g));
        ev.order = identity_order(ev.rows);
        if (is_a()) test_scores.clear();
        test_loss = co_await phase(t, ev, data.test);
        if (is_a()) test_auc = safe_auc(test_scores, labels->test);
      }
      io.set_step(t++);
      if (is_a()) {
        io.send_control(Role::kCoordinator, ControlKind::kEpochReport,
                        json{{"epoch", start.epoch},
                             {"steps", batch_count(start.rows, cfg.optimizer.batch_size)},
                             {"train_loss", train_loss},
                             {"test_loss", opt_double(shape.has_eval() ? test_loss : std::nullopt)},
                             {"test_auc", opt_double(test_auc)}}
                            .dump());
      }
    }
  }

  // Runs one pass over `x` in the given order; returns the mean loss at A.
  Task<double> phase(std::uint64_t& t, const EpochStart& start, const Tensor& x) {
    const std::size_t bs = shape.cfg.optimizer.batch_size;
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batch_count(start.rows, bs); ++b) {
      io.set_step(t);
      const auto rows = batch_rows(start.order, b, bs);
      loss_sum += co_await batch(start.train, rows, x) * static_cast<double>(rows.size());
      ++t;
    }
    co_return start.rows > 0 ? loss_sum / static_cast<double>(start.rows) : 0.0;
  }

  Task<double> batch(bool train, const std::vector<std::size_t>& rows, const Tensor& x) {
    const auto& cfg = shape.cfg;
    const Tensor xb = gather_rows(x, rows);
    switch (cfg.mode) {
      case ProtocolMode::kSecretSharing: co_await ss_first_layer(io, ss, xb, rng); break;
      case ProtocolMode::kHomomorphic: co_await he_first_layer(io, he, xb, theta, rng); break;
      case ProtocolMode::kFloat: co_await float_first_layer(io, role, xb, theta); break;
    }

    double loss = 0.0;
    if (is_a()) {
      Frame f = co_await io.recv(Role::kServer, MsgType::kLastHiddenToA);
      const Tensor h_last = decode_tensor(f.payload);
      expect_shape(h_last.rows(), h_last.cols(), rows.size(), shape.plan.head_in(), "last hidden layer");
      ForwardCache cache;
      const Tensor logits = head.forward(h_last, &cache);
      const Tensor probs = probabilities_from_logits(logits);
      const std::vector<int> y = gather_labels(train ? labels->train : labels->test, rows);
      loss = cross_entropy(probs, y);
      if (!train) {
        const auto scores = positive_scores(probs);
        test_scores.insert(test_scores.end(), scores.begin(), scores.end());
        co_return loss;
      }
      Gradients g = head.backward(cache, cross_entropy_logit_grad(probs, y));
      io.send(Role::kServer, MsgType::kHeadGradDown, encode_tensor(g.input));
      if (!head.empty()) {
        const OptimizerConfig opt = scoped(cfg.optimizer, cfg.sgld_scope == SgldScope::kAll);
        auto& layer = head.layers()[0];
        optimizer_step(layer.weights, g.layers[0].weights, opt, train_step, rows.size(), head_noise[0]);
        optimizer_step(layer.bias, g.layers[0].bias, opt, train_step, rows.size(), head_noise[1]);
      }
    }
    if (!train) co_return loss;

    Frame f = co_await io.recv(Role::kServer, MsgType::kInputGradDown);
    const Tensor dz = decode_tensor(f.payload);
    expect_shape(dz.rows(), dz.cols(), rows.size(), shape.plan.first_width, "first-layer gradient");
    const bool noisy = cfg.optimizer.kind == OptimizerKind::kSgld && cfg.sgld_scope == SgldScope::kAll;
    const double alpha = cfg.optimizer.alpha(train_step);
    if (cfg.mode == ProtocolMode::kSecretSharing) {
      const double factor = noisy ? alpha / 2.0 * cfg.optimizer.likelihood_scale : alpha;
      // Each party adds half of the Langevin variance to its share.
      ss_update(ss, dz, factor / static_cast<double>(rows.size()), noisy ? alpha / 2.0 : 0.0, rng);
    } else {
      const OptimizerConfig opt = scoped(cfg.optimizer, noisy);
      optimizer_step(theta, matmul_tn(xb, dz), opt, train_step, rows.size(), theta_noise);
    }
    ++train_step;
    co_return loss;
  }
};

ClientRole::ClientRole(Role role, Endpoint& ep, ClientData data, std::optional<LabelData> labels,
                       RoleOptions opts)
    : impl_(std::make_unique<Impl>(role, ep, std::move(data), std::move(labels), opts)) {}
ClientRole::~ClientRole() = default;

Task<void> ClientRole::run() {
  std::exception_ptr err;
  try {
    co_await impl_->body();
  } catch (...) {
    err = std::current_exception();
  }
  if (err) {
    impl_->io.broadcast_abort(describe(err));
    std::rethrow_exception(err);
  }
}

const Tensor& ClientRole::theta() const { return impl_->theta; }
const RingMatrix& ClientRole::theta_share() const { return impl_->ss.theta_share; }
const Mlp& ClientRole::head() const { return impl_->head; }
const std::vector<double>& ClientRole::test_scores() const { return impl_->test_scores; }
std::uint64_t ClientRole::triples_consumed() const { return impl_->ss.triples_consumed; }

// -- session runner -----------------------------------------------------------------

namespace {

// Prefers the failure that started an abort cascade over the peers' reports.
[[noreturn]] void rethrow_root(std::exception_ptr fallback, const std::vector<Task<void>*>& tasks) {
  std::exception_ptr first;
  for (auto* t : tasks) {
    auto e = t->error();
    if (!e) continue;
    if (!first) first = e;
    try {
      std::rethrow_exception(e);
    } catch (const Error& err) {
      if (err.code() != ErrorCode::kPeerClosed) std::rethrow_exception(e);
    } catch (...) {
      std::rethrow_exception(e);
    }
  }
  std::rethrow_exception(first ? first : fallback);
}

Mlp assemble(const PartitionPlan& plan, std::uint64_t seed, const Tensor& theta, const Tensor& b1,
             const Mlp& stack, const Mlp& head) {
  Mlp model = initial_model(plan, seed);
  auto& layers = model.layers();
  layers[0].weights = theta;
  layers[0].bias = b1;
  for (std::size_t l = 0; l < stack.layers().size(); ++l) layers[1 + l] = stack.layers()[l];
  if (plan.head) layers.back() = head.layers()[0];
  return model;
}

}  // namespace

SessionResult run_session(const TrainConfig& cfg, const SessionData& data,
                          const SimSessionOptions& opts, SessionHooks* hooks) {
  cfg.validate();
  SimNetwork sim({opts.net, opts.measure_compute, opts.loss_seed});
  auto role_opts = [&](Role r) {
    RoleOptions o;
    o.session_id = cfg.session_id;
    o.private_seed = mix_seed(cfg.seed, 0x1000 + role_index(r));
    o.hooks = hooks;
    return o;
  };
  CoordinatorRole coord(sim.endpoint(Role::kCoordinator), cfg, role_opts(Role::kCoordinator));
  ServerRole server(sim.endpoint(Role::kServer), role_opts(Role::kServer));
  ClientRole a(Role::kClientA, sim.endpoint(Role::kClientA), data.a, data.labels,
               role_opts(Role::kClientA));
  ClientRole b(Role::kClientB, sim.endpoint(Role::kClientB), data.b, std::nullopt,
               role_opts(Role::kClientB));

  Task<void> tc = coord.run(), ts = server.run(), ta = a.run(), tb = b.run();
  const auto wall0 = std::chrono::steady_clock::now();
  try {
    sim.run({{Role::kCoordinator, &tc}, {Role::kServer, &ts}, {Role::kClientA, &ta},
             {Role::kClientB, &tb}});
  } catch (...) {
    rethrow_root(std::current_exception(), {&tc, &ts, &ta, &tb});
  }

  SessionResult out;
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  out.plan = coord.plan();
  out.epochs = coord.epochs();
  out.early_stopped = coord.early_stopped();
  out.test_scores = a.test_scores();
  Tensor theta;
  if (cfg.mode == ProtocolMode::kSecretSharing) {
    const FixedPointCodec codec(64, cfg.frac_bits);
    theta = decode_matrix(codec, reconstruct(ShareMatrix{0, a.theta_share()},
                                             ShareMatrix{1, b.theta_share()}, codec.ring()));
  } else {
    theta = vconcat(a.theta(), b.theta());
  }
  out.model = assemble(out.plan, cfg.seed, theta, server.first_bias(), server.stack(), a.head());
  out.links = sim.links();
  out.timing = sim.timing();
  out.trace = sim.trace();
  out.triples_consumed = a.triples_consumed();
  return out;
}

std::uint64_t total_bytes(const std::map<LinkKey, LinkStats>& links, bool include_dealer) {
  std::uint64_t total = 0;
  for (const auto& [key, stats] : links) {
    if (!include_dealer && key.first == Role::kCoordinator) continue;
    total += stats.bytes_sent;
  }
  return total;
}

double epoch_train_seconds(const TimingResult& timing, std::size_t epoch) {
  const std::string e = std::to_string(epoch);
  std::optional<double> begin;
  double end = 0.0;
  for (const auto& [label, time] : timing.marks) {
    if (label == "coordinator:epoch_begin:" + e && !begin) begin = time;
    const auto pos = label.find(":train_end:");
    if (pos != std::string::npos && label.substr(pos + 11) == e) end = std::max(end, time);
  }
  if (!begin) throw Error(ErrorCode::kInvalidConfig, "no timing marks for epoch " + e);
  return end - *begin;
}

// -- reference trainer --------------------------------------------------------------

std::vector<double> predict_scores(const Mlp& model, const Tensor& xa, const Tensor& xb) {
  return positive_scores(probabilities_from_logits(model.forward(hconcat(xa, xb))));
}

ReferenceResult train_reference(const TrainConfig& cfg, const SessionData& data,
                                std::size_t steps) {
  cfg.validate();
  const PartitionPlan plan = split_graph(cfg.net);
  const std::size_t n = data.a.train.rows();
  if (data.b.train.rows() != n || data.labels.train.size() != n) {
    throw Error(ErrorCode::kRowCountMismatch, "parties hold different numbers of rows");
  }
  ReferenceResult out;
  out.model = initial_model(plan, cfg.seed);
  auto& layers = out.model.layers();
  const std::size_t k = plan.server_dims.size();
  const bool all = cfg.sgld_scope == SgldScope::kAll;
  const OptimizerConfig server_opt = resolve_likelihood(cfg.optimizer, n);
  const OptimizerConfig client_opt = scoped(server_opt, all);

  Prg noise_a = noise_stream(cfg.optimizer, 0, 0), noise_b = noise_stream(cfg.optimizer, 0, 1);
  std::vector<std::array<Prg, 2>> noise;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    noise.push_back({noise_stream(cfg.optimizer, l, 0), noise_stream(cfg.optimizer, l, 2)});
  }

  const Tensor x_train = hconcat(data.a.train, data.b.train);
  const Tensor x_test = data.a.test.rows() > 0 ? hconcat(data.a.test, data.b.test) : Tensor();
  const std::size_t bs = cfg.optimizer.batch_size;
  std::uint64_t t = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto order = epoch_permutation(cfg.seed, e, n);
    double loss_sum = 0.0;
    const std::size_t batches = batch_count(n, bs);
    for (std::size_t b = 0; b < batches; ++b) {
      if (steps > 0 && t >= steps) return out;
      const auto rows = batch_rows(order, b, bs);
      const Tensor xb = gather_rows(x_train, rows);
      const auto y = gather_labels(data.labels.train, rows);
      ForwardCache cache;
      const Tensor probs = probabilities_from_logits(out.model.forward(xb, &cache));
      loss_sum += cross_entropy(probs, y) * static_cast<double>(rows.size());
      Gradients g = out.model.backward(cache, cross_entropy_logit_grad(probs, y));
      const std::size_t r = rows.size();
      // Layer 0: client rows A and B, bias at the server.
      Tensor wa = slice_rows_copy(layers[0].weights, 0, plan.input_a);
      Tensor wb = slice_rows_copy(layers[0].weights, plan.input_a, plan.input_width());
      optimizer_step(wa, slice_rows_copy(g.layers[0].weights, 0, plan.input_a), client_opt, t, r, noise_a);
      optimizer_step(wb, slice_rows_copy(g.layers[0].weights, plan.input_a, plan.input_width()),
                     client_opt, t, r, noise_b);
      layers[0].weights = vconcat(wa, wb);
      optimizer_step(layers[0].bias, g.layers[0].bias, server_opt, t, r, noise[0][1]);
      for (std::size_t l = 1; l < layers.size(); ++l) {
        const OptimizerConfig& opt = (plan.head && l == k) ? client_opt : server_opt;
        optimizer_step(layers[l].weights, g.layers[l].weights, opt, t, r, noise[l][0]);
        optimizer_step(layers[l].bias, g.layers[l].bias, opt, t, r, noise[l][1]);
      }
      ++t;
    }
    EpochMetrics em;
    em.epoch = e;
    em.steps = batches;
    em.train_loss = loss_sum / static_cast<double>(n);
    if (cfg.evaluate && x_test.rows() > 0) {
      const auto order_test = identity_order(x_test.rows());
      double test_sum = 0.0;
      out.test_scores.clear();
      for (std::size_t b = 0; b < batch_count(x_test.rows(), bs); ++b) {
        const auto rows = batch_rows(order_test, b, bs);
        const Tensor probs = probabilities_from_logits(out.model.forward(gather_rows(x_test, rows)));
        test_sum += cross_entropy(probs, gather_labels(data.labels.test, rows)) *
                    static_cast<double>(rows.size());
        const auto s = positive_scores(probs);
        out.test_scores.insert(out.test_scores.end(), s.begin(), s.end());
      }
      em.test_loss = test_sum / static_cast<double>(x_test.rows());
      em.test_auc = safe_auc(out.test_scores, data.labels.test);
    }
    out.epochs.push_back(em);
    if (cfg.early_stop_loss > 0.0 && em.train_loss < cfg.early_stop_loss && e + 1 < cfg.epochs) {
      out.early_stopped = true;
      break;
    }
  }
  return out;
}

// -- single-batch helpers ---------------------------------------------------------

namespace {

struct MiniSession {
  SimNetwork sim{SimNetwork::Options{}};
  SessionHooks hooks;
  std::vector<Frame> server_inbound;
  std::array<std::unique_ptr<RoleIo>, kRoleCount> io;

  MiniSession() {
    hooks.on_receive = [this](Role, Role to, const Frame& f) {
      if (to == Role::kServer) server_inbound.push_back(f);
    };
    for (Role r : kAllRoles) io[role_index(r)] = std::make_unique<RoleIo>(sim.endpoint(r), 1, &hooks);
  }
  RoleIo& of(Role r) { return *io[role_index(r)]; }

  void run(Task<void>& c, Task<void>& s, Task<void>& a, Task<void>& b) {
    try {
      sim.run({{Role::kCoordinator, &c}, {Role::kServer, &s}, {Role::kClientA, &a}, {Role::kClientB, &b}});
    } catch (...) {
      rethrow_root(std::current_exception(), {&c, &s, &a, &b});
    }
  }
};

void check_first_inputs(const Tensor& xa, const Tensor& xb, const Tensor& ta, const Tensor& tb) {
  if (xa.rows() != xb.rows()) throw Error(ErrorCode::kRowCountMismatch, "clients hold different batches");
  if (xa.cols() != ta.rows() || xb.cols() != tb.rows() || ta.cols() != tb.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "first-layer blocks do not match the features");
  }
}

Tensor activate(Activation act, const Tensor& pre) {
  Tensor post(pre.rows(), pre.cols());
  apply_activation(act, pre.data(), post.data());
  return post;
}

}  // namespace

FirstHiddenResult first_hidden_ss(const Tensor& xa, const Tensor& xb, const Tensor& theta_a,
                                  const Tensor& theta_b, Activation act, std::uint64_t seed,
                                  int frac_bits) {
  check_first_inputs(xa, xb, theta_a, theta_b);
  MiniSession ms;
  const FixedPointCodec codec(64, frac_bits);
  Prg dealer(mix_seed(seed, 1)), rng_a(mix_seed(seed, 2)), rng_b(mix_seed(seed, 3));
  SsParty pa{0, Role::kClientA, Role::kClientB, codec, {}, {}, 0, {}};
  SsParty pb{1, Role::kClientB, Role::kClientA, codec, {}, {}, 0, {}};
  Tensor pre;

  auto coord = [&]() -> Task<void> {
    ms.of(Role::kCoordinator).set_step(1);
    deal_triples(ms.of(Role::kCoordinator), xa.rows(), xa.cols() + xb.cols(), theta_a.cols(),
                 codec.ring(), dealer);
    co_return;
  };
  auto server = [&]() -> Task<void> {
    ms.of(Role::kServer).set_step(1);
    pre = co_await ss_server_first_layer(ms.of(Role::kServer), codec, xa.rows(), theta_a.cols());
  };
  auto client = [&](SsParty& st, const Tensor& x, const Tensor& theta, Prg& rng) -> Task<void> {
    RoleIo& io = ms.of(st.self);
    io.set_step(0);
    co_await ss_share_theta(io, st, theta, rng);
    io.set_step(1);
    co_await ss_first_layer(io, st, x, rng);
  };
  Task<void> tc = coord(), ts = server(), ta = client(pa, xa, theta_a, rng_a),
             tb = client(pb, xb, theta_b, rng_b);
  ms.run(tc, ts, ta, tb);
  FirstHiddenResult out{pre, activate(act, pre), ms.sim.links(), std::move(ms.server_inbound)};
  return out;
}

FirstHiddenResult first_hidden_he(const Tensor& xa, const Tensor& xb, const Tensor& theta_a,
                                  const Tensor& theta_b, Activation act, std::uint64_t seed,
                                  int key_bits, bool packing, int frac_bits) {
  check_first_inputs(xa, xb, theta_a, theta_b);
  MiniSession ms;
  const FixedPointCodec codec(64, frac_bits);
  Prg rng_s(mix_seed(seed, 1)), rng_a(mix_seed(seed, 2)), rng_b(mix_seed(seed, 3));
  HeParty ha, hb;
  ha.self = Role::kClientA;
  hb.self = Role::kClientB;
  ha.codec = hb.codec = codec;
  ha.packed = hb.packed = packing;
  Tensor pre;

  auto coord = []() -> Task<void> { co_return; };
  auto server = [&]() -> Task<void> {
    RoleIo& io = ms.of(Role::kServer);
    io.set_step(0);
    const auto key = paillier::keygen(key_bits, rng_s);
    const auto pk = paillier::serialize_public_key(key.pk);
    io.send(Role::kClientA, MsgType::kKeyDistribution, pk);
    io.send(Role::kClientB, MsgType::kKeyDistribution, pk);
    io.set_step(1);
    pre = co_await he_server_first_layer(io, key, packing, codec, xa.rows(), theta_a.cols());
  };
  auto client = [&](HeParty& he, const Tensor& x, const Tensor& theta, Prg& rng) -> Task<void> {
    RoleIo& io = ms.of(he.self);
    io.set_step(0);
    Frame f = co_await io.recv(Role::kServer, MsgType::kKeyDistribution);
    he.set_key(paillier::deserialize_public_key(f.payload), frac_bits);
    io.set_step(1);
    co_await he_first_layer(io, he, x, theta, rng);
  };
  Task<void> tc = coord(), ts = server(), ta = client(ha, xa, theta_a, rng_a),
             tb = client(hb, xb, theta_b, rng_b);
  ms.run(tc, ts, ta, tb);
  FirstHiddenResult out{pre, activate(act, pre), ms.sim.links(), std::move(ms.server_inbound)};
  return out;
}

// -- audits -----------------------------------------------------------------------

void check_message_grammar(const std::vector<SentFrame>& log) {
  std::map<std::uint64_t, std::vector<const SentFrame*>> by_step;
  for (const auto& s : log) by_step[s.frame.step >> kSubStepBits].push_back(&s);
  auto fail = [](std::uint64_t step, const std::string& why) {
    throw Error(ErrorCode::kSequenceViolation, "step " + std::to_string(step) + ": " + why);
  };
  for (const auto& [step, frames] : by_step) {
    bool batch = false;
    for (const auto* s : frames) batch |= s->frame.type == MsgType::kHiddenLayerUp;
    if (!batch) {
      for (const auto* s : frames) {
        const auto t = s->frame.type;
        if (t != MsgType::kControl && t != MsgType::kKeyDistribution && t != MsgType::kShareTransfer &&
            t != MsgType::kTripleDeal) {
          fail(step, std::string(msg_type_name(t)) + " outside a batch step");
        }
      }
      continue;
    }
    // Rank of each type in the grammar; frames must appear in non-decreasing
    // rank order and the mandatory ones must be present.
    auto rank = [](MsgType t) -> int {
      switch (t) {
        case MsgType::kTripleDeal: return 0;
        case MsgType::kShareTransfer:
        case MsgType::kCiphertextTransfer: return 1;
        case MsgType::kHiddenLayerUp: return 2;
        case MsgType::kLastHiddenToA: return 3;
        case MsgType::kHeadGradDown: return 4;
        case MsgType::kInputGradDown: return 5;
        default: return -1;
      }
    };
    int prev = 0;
    std::array<int, 6> counts{};
    for (const auto* s : frames) {
      const int r = rank(s->frame.type);
      if (r < 0) fail(step, std::string(msg_type_name(s->frame.type)) + " inside a batch step");
      if (r < prev) {
        fail(step, std::string(msg_type_name(s->frame.type)) + " after a later message type");
      }
      prev = r;
      ++counts[static_cast<std::size_t>(r)];
    }
    if (counts[3] != 1) fail(step, "expected exactly one LastHiddenToA");
    const bool train = counts[4] > 0;
    if (train && (counts[4] != 1 || counts[5] != 2)) {
      fail(step, "training step needs one HeadGradDown and two InputGradDown");
    }
    if (!train && counts[5] != 0) fail(step, "InputGradDown without HeadGradDown");
  }
}

void check_server_inbound(const std::vector<SentFrame>& log) {
  for (const auto& s : log) {
    if (s.to != Role::kServer) continue;
    const auto t = s.frame.type;
    if (t != MsgType::kControl && t != MsgType::kHiddenLayerUp && t != MsgType::kHeadGradDown) {
      throw Error(ErrorCode::kSequenceViolation,
                  std::string(msg_type_name(t)) + " from " + std::string(role_name(s.from)) +
                      " addressed to the server");
    }
    if (t == MsgType::kHeadGradDown && s.from != Role::kClientA) {
      throw Error(ErrorCode::kSequenceViolation, "head gradient from a non-label party");
    }
  }
}

}  // namespace spnn
