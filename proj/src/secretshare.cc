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

#include "spnn/secretshare.h"

#include <string>

#include "spnn/error.h"

namespace spnn {
namespace {

void require_same_shape(const RingMatrix& a, const RingMatrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(what) + ": " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                    "x" + std::to_string(b.cols()));
  }
}

std::string shape(const RingMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// Zero share held by the party that does not own an operand of a cross term.
ShareMatrix zero_share(int party, std::size_t rows, std::size_t cols) {
  return {party, RingMatrix(rows, cols)};
}

std::vector<std::uint64_t> pack_opening(const MaskedOpening& o) {
  std::vector<std::uint64_t> words;
  words.reserve(o.e.size() + o.f.size());
  words.insert(words.end(), o.e.data().begin(), o.e.data().end());
  words.insert(words.end(), o.f.data().begin(), o.f.data().end());
  return words;
}

MaskedOpening unpack_opening(const std::vector<std::uint64_t>& words,
                             const MaskedOpening& like) {
  if (words.size() != like.e.size() + like.f.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "masked opening has wrong length");
  }
  MaskedOpening o{RingMatrix(like.e.rows(), like.e.cols()),
                  RingMatrix(like.f.rows(), like.f.cols())};
  std::copy(words.begin(), words.begin() + like.e.size(), o.e.data().begin());
  std::copy(words.begin() + like.e.size(), words.end(), o.f.data().begin());
  return o;
}

}  // namespace

std::pair<Share, Share> shr_with_mask(RingElement secret, RingElement r,
                                      const Ring& ring) {
  return {Share{0, {ring.sub(secret.value, r.value)}}, Share{1, {ring.reduce(r.value)}}};
}

std::pair<Share, Share> shr(RingElement secret, const Ring& ring, Prg& rng) {
  return shr_with_mask(secret, RingElement{ring.reduce(rng())}, ring);
}

RingElement rec(const Share& s0, const Share& s1, const Ring& ring) {
  if (s0.party == s1.party) {
    throw Error(ErrorCode::kPartyMismatch,
                "both shares belong to party " + std::to_string(s0.party));
  }
  return {ring.add(s0.value.value, s1.value.value)};
}

RingMatrix::RingMatrix(std::size_t rows, std::size_t cols,
                       std::vector<std::uint64_t> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorCode::kDimensionMismatch, "ring matrix data length mismatch");
  }
}

RingMatrix ring_matmul(const RingMatrix& a, const RingMatrix& b, const Ring& ring) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "ring_matmul inner dimensions " + shape(a) + " * " + shape(b));
  }
  RingMatrix out(a.rows(), b.cols());
  const std::size_t n = a.rows(), d = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t* row = &out.at(i, 0);
    for (std::size_t k = 0; k < d; ++k) {
      const std::uint64_t aik = a.at(i, k);
      const std::uint64_t* brow = b.data().data() + k * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += aik * brow[j];
    }
    for (std::size_t j = 0; j < m; ++j) row[j] = ring.reduce(row[j]);
  }
  return out;
}

RingMatrix ring_add(const RingMatrix& a, const RingMatrix& b, const Ring& ring) {
  require_same_shape(a, b, "ring_add");
  RingMatrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = ring.add(a.data()[i], b.data()[i]);
  return out;
}

RingMatrix ring_sub(const RingMatrix& a, const RingMatrix& b, const Ring& ring) {
  require_same_shape(a, b, "ring_sub");
  RingMatrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = ring.sub(a.data()[i], b.data()[i]);
  return out;
}

RingMatrix ring_hconcat(const RingMatrix& a, const RingMatrix& b) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorCode::kRowCountMismatch,
                "hconcat " + shape(a) + " | " + shape(b));
  }
  RingMatrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) out.at(i, a.cols() + j) = b.at(i, j);
  }
  return out;
}

RingMatrix ring_vconcat(const RingMatrix& a, const RingMatrix& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "vconcat " + shape(a) + " ; " + shape(b));
  }
  std::vector<std::uint64_t> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return RingMatrix(a.rows() + b.rows(), a.cols(), std::move(data));
}

RingMatrix ring_transpose(const RingMatrix& a) {
  RingMatrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

RingMatrix random_ring_matrix(std::size_t rows, std::size_t cols, const Ring& ring,
                              Prg& rng) {
  RingMatrix out(rows, cols);
  for (auto& x : out.data()) x = ring.reduce(rng());
  return out;
}

SharedPair share_matrix(const RingMatrix& secret, const Ring& ring, Prg& rng) {
  RingMatrix r = random_ring_matrix(secret.rows(), secret.cols(), ring, rng);
  return {ShareMatrix{0, ring_sub(secret, r, ring)}, ShareMatrix{1, std::move(r)}};
}

RingMatrix reconstruct(const ShareMatrix& s0, const ShareMatrix& s1, const Ring& ring) {
  if (s0.party == s1.party) {
    throw Error(ErrorCode::kPartyMismatch, "reconstruct needs one share per party");
  }
  return ring_add(s0.value, s1.value, ring);
}

ShareMatrix add_shared(const ShareMatrix& a, const ShareMatrix& b, const Ring& ring) {
  if (a.party != b.party) {
    throw Error(ErrorCode::kPartyMismatch, "add_shared operands from different parties");
  }
  return {a.party, ring_add(a.value, b.value, ring)};
}

TriplePair dealer_gen_triple(std::size_t n, std::size_t d, std::size_t m,
                             const Ring& ring, Prg& rng) {
  RingMatrix u = random_ring_matrix(n, d, ring, rng);
  RingMatrix v = random_ring_matrix(d, m, ring, rng);
  RingMatrix w = ring_matmul(u, v, ring);
  SharedPair us = share_matrix(u, ring, rng);
  SharedPair vs = share_matrix(v, ring, rng);
  SharedPair ws = share_matrix(w, ring, rng);
  TriplePair out;
  for (int p = 0; p < 2; ++p) {
    out[p].party = p;
    out[p].u = std::move(us[p].value);
    out[p].v = std::move(vs[p].value);
    out[p].w = std::move(ws[p].value);
  }
  return out;
}

std::vector<TriplePair> dealer_gen_triples(std::size_t count, std::size_t n,
                                           std::size_t d, std::size_t m,
                                           const Ring& ring, Prg& rng) {
  std::vector<TriplePair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(dealer_gen_triple(n, d, m, ring, rng));
  return out;
}

void PairwiseChannel::send(int from_party, std::vector<std::uint64_t> words) {
  if (closed_) throw Error(ErrorCode::kChannelClosed, "send on closed channel");
  bytes_sent_[from_party] += words.size() * element_bytes_;
  ++messages_sent_[from_party];
  queues_[1 - from_party].push_back(std::move(words));
}

std::vector<std::uint64_t> PairwiseChannel::recv(int to_party) {
  auto& q = queues_[to_party];
  if (closed_ || q.empty()) {
    throw Error(ErrorCode::kChannelClosed,
                "party " + std::to_string(to_party) + " has nothing to receive");
  }
  auto words = std::move(q.front());
  q.pop_front();
  return words;
}

void check_triple_shape(const BeaverTriple& t, std::size_t n, std::size_t d,
                        std::size_t m) {
  if (t.u.rows() != n || t.u.cols() != d || t.v.rows() != d || t.v.cols() != m ||
      t.w.rows() != n || t.w.cols() != m) {
    throw Error(ErrorCode::kTripleShapeMismatch,
                "triple (" + shape(t.u) + ", " + shape(t.v) + ", " + shape(t.w) +
                    ") does not fit product " + std::to_string(n) + "x" +
                    std::to_string(d) + " * " + std::to_string(d) + "x" +
                    std::to_string(m));
  }
}

MaskedOpening beaver_mask(const ShareMatrix& x, const ShareMatrix& y,
                          const BeaverTriple& triple, const Ring& ring) {
  if (triple.consumed) throw Error(ErrorCode::kTripleReuse, "Beaver triple already consumed");
  if (x.party != y.party || x.party != triple.party) {
    throw Error(ErrorCode::kPartyMismatch, "operands and triple from different parties");
  }
  if (x.cols() != y.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "shared product " + shape(x.value) + " * " + shape(y.value));
  }
  check_triple_shape(triple, x.rows(), x.cols(), y.cols());
  return {ring_sub(x.value, triple.u, ring), ring_sub(y.value, triple.v, ring)};
}

ShareMatrix beaver_combine(const ShareMatrix& x, const ShareMatrix& y,
                           const RingMatrix& e, const RingMatrix& f,
                           BeaverTriple& triple, const Ring& ring) {
  if (triple.consumed) throw Error(ErrorCode::kTripleReuse, "Beaver triple already consumed");
  RingMatrix z = ring_add(ring_matmul(e, y.value, ring), ring_matmul(x.value, f, ring), ring);
  z = ring_add(z, triple.w, ring);
  if (x.party == 1) z = ring_sub(z, ring_matmul(e, f, ring), ring);
  triple.consumed = true;
  return {x.party, std::move(z)};
}

std::pair<Share, Share> beaver_mul(const std::pair<Share, Share>& a,
                                   const std::pair<Share, Share>& b,
                                   TriplePair& triple, PairwiseChannel& ch,
                                   const Ring& ring) {
  SharedPair xs{ShareMatrix{0, RingMatrix(1, 1, {a.first.value.value})},
                ShareMatrix{1, RingMatrix(1, 1, {a.second.value.value})}};
  SharedPair ys{ShareMatrix{0, RingMatrix(1, 1, {b.first.value.value})},
                ShareMatrix{1, RingMatrix(1, 1, {b.second.value.value})}};
  SharedPair z = matmul_shared_raw(xs, ys, triple, ch, ring);
  return {Share{0, {z[0].value.at(0, 0)}}, Share{1, {z[1].value.at(0, 0)}}};
}

SharedPair matmul_shared_raw(const SharedPair& x, const SharedPair& w,
                             TriplePair& triple, PairwiseChannel& ch,
                             const Ring& ring) {
  std::array<MaskedOpening, 2> mine;
  for (int p = 0; p < 2; ++p) {
    mine[p] = beaver_mask(x[p], w[p], triple[p], ring);
    ch.send(p, pack_opening(mine[p]));
  }
  SharedPair out;
  for (int p = 0; p < 2; ++p) {
    MaskedOpening theirs = unpack_opening(ch.recv(p), mine[p]);
    RingMatrix e = ring_add(mine[p].e, theirs.e, ring);
    RingMatrix f = ring_add(mine[p].f, theirs.f, ring);
    out[p] = beaver_combine(x[p], w[p], e, f, triple[p], ring);
  }
  return out;
}

CrossTermOpening cross_terms_open(const ShareMatrix& x, const ShareMatrix& w,
                                  std::array<BeaverTriple*, 2> triples,
                                  const Ring& ring) {
  const int p = x.party;
  if (w.party != p) throw Error(ErrorCode::kPartyMismatch, "cross-term operands");
  if (x.cols() != w.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "shared product " + shape(x.value) + " * " + shape(w.value));
  }
  const std::size_t n = x.rows(), d = x.cols(), m = w.cols();
  // Term 0 is x_0 * w_1, term 1 is x_1 * w_0. The party that does not own an
  // operand of a term contributes a zero share for it.
  CrossTermOpening out;
  for (int t = 0; t < 2; ++t) {
    const bool owns_x = (t == 0) == (p == 0);
    ShareMatrix xt = owns_x ? x : zero_share(p, n, d);
    ShareMatrix wt = owns_x ? zero_share(p, d, m) : w;
    out.mine[t] = beaver_mask(xt, wt, *triples[t], ring);
    auto packed = pack_opening(out.mine[t]);
    out.words.insert(out.words.end(), packed.begin(), packed.end());
  }
  return out;
}

ShareMatrix cross_terms_finish(const ShareMatrix& x, const ShareMatrix& w,
                               const CrossTermOpening& mine,
                               const std::vector<std::uint64_t>& theirs,
                               std::array<BeaverTriple*, 2> triples,
                               const FixedPointCodec& codec) {
  const Ring& ring = codec.ring();
  const int p = x.party;
  const std::size_t n = x.rows(), d = x.cols(), m = w.cols();
  const std::size_t per_term = n * d + d * m;
  if (theirs.size() != 2 * per_term) {
    throw Error(ErrorCode::kDimensionMismatch, "cross-term opening has wrong length");
  }
  RingMatrix acc = ring_matmul(x.value, w.value, ring);
  for (int t = 0; t < 2; ++t) {
    const bool owns_x = (t == 0) == (p == 0);
    ShareMatrix xt = owns_x ? x : zero_share(p, n, d);
    ShareMatrix wt = owns_x ? zero_share(p, d, m) : w;
    std::vector<std::uint64_t> part(theirs.begin() + t * per_term,
                                    theirs.begin() + (t + 1) * per_term);
    MaskedOpening other = unpack_opening(part, mine.mine[t]);
    RingMatrix e = ring_add(mine.mine[t].e, other.e, ring);
    RingMatrix f = ring_add(mine.mine[t].f, other.f, ring);
    acc = ring_add(acc, beaver_combine(xt, wt, e, f, *triples[t], ring).value, ring);
  }
  for (auto& v : acc.data()) v = codec.truncate_share(p, v);
  return {p, std::move(acc)};
}

SharedPair matmul_shared(const SharedPair& x, const SharedPair& w,
                         std::array<TriplePair, 2>& cross_triples,
                         PairwiseChannel& ch, const FixedPointCodec& codec) {
  const Ring& ring = codec.ring();
  for (int p = 0; p < 2; ++p) {
    if (x[p].party != p || w[p].party != p) {
      throw Error(ErrorCode::kPartyMismatch, "shared pair out of party order");
    }
  }
  require_same_shape(x[0].value, x[1].value, "matmul_shared x shares");
  require_same_shape(w[0].value, w[1].value, "matmul_shared w shares");

  std::array<CrossTermOpening, 2> mine;
  for (int p = 0; p < 2; ++p) {
    mine[p] = cross_terms_open(x[p], w[p], {&cross_triples[0][p], &cross_triples[1][p]}, ring);
    ch.send(p, mine[p].words);
  }
  SharedPair out;
  for (int p = 0; p < 2; ++p) {
    out[p] = cross_terms_finish(x[p], w[p], mine[p], ch.recv(p),
                                {&cross_triples[0][p], &cross_triples[1][p]}, codec);
  }
  return out;
}

}  // namespace spnn
