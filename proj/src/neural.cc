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

#include "spnn/neural.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

#include "spnn/error.h"

namespace spnn {
namespace {

std::string shape(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

constexpr double kProbabilityFloor = 1e-12;

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorCode::kDimensionMismatch, "tensor data length mismatch");
  }
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  return matmul_continue(Tensor(a.rows(), b.cols()), a, b);
}

Tensor matmul_continue(Tensor acc, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "matmul " + shape(a) + " * " + shape(b));
  }
  if (acc.rows() != a.rows() || acc.cols() != b.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "accumulator " + shape(acc) + " for " + shape(a) +
                                                   " * " + shape(b));
  }
  const std::size_t n = a.rows(), d = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double sum = acc.at(i, j);
      for (std::size_t k = 0; k < d; ++k) sum += a.at(i, k) * b.at(k, j);
      acc.at(i, j) = sum;
    }
  }
  return acc;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "matmul_tn " + shape(a) + "^T * " + shape(b));
  }
  Tensor out(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k) acc += a.at(k, i) * b.at(k, j);
      out.at(i, j) = acc;
    }
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "matmul_nt " + shape(a) + " * " + shape(b) + "^T");
  }
  Tensor out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(j, k);
      out.at(i, j) = acc;
    }
  }
  return out;
}

Tensor hconcat(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorCode::kRowCountMismatch, "hconcat " + shape(a) + " | " + shape(b));
  }
  Tensor out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) out.at(i, a.cols() + j) = b.at(i, j);
  }
  return out;
}

Tensor vconcat(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "vconcat " + shape(a) + " ; " + shape(b));
  }
  std::vector<double> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor(a.rows() + b.rows(), a.cols(), std::move(data));
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "column slice out of range");
  }
  Tensor out(a.rows(), end - begin);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = begin; j < end; ++j) out.at(i, j - begin) = a.at(i, j);
  return out;
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  Tensor out(rows.size(), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.rows()) throw Error(ErrorCode::kDimensionMismatch, "row index out of range");
    std::copy_n(a.row(rows[i]).begin(), a.cols(), &out.at(i, 0));
  }
  return out;
}

Tensor column_sums(const Tensor& a) {
  Tensor out(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(0, j) += a.at(i, j);
  return out;
}

void add_row_vector(Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "bias " + shape(row) + " vs " + shape(a));
  }
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) a.at(i, j) += row.at(0, j);
}

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kRelu: return "relu";
  }
  return "unknown";
}

Activation parse_activation(std::string_view name) {
  if (name == "identity" || name == "linear") return Activation::kIdentity;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "relu") return Activation::kRelu;
  throw Error(ErrorCode::kInvalidSpec, "unknown activation '" + std::string(name) + "'");
}

double sigmoid(double x) {
  // Kept strictly inside (0, 1) so log(p) and log(1 - p) stay finite.
  constexpr double kLow = 0x1p-1022;
  constexpr double kHigh = 1.0 - 0x1p-53;
  if (x >= 0) return std::min(1.0 / (1.0 + std::exp(-x)), kHigh);
  const double e = std::exp(x);
  return std::max(e / (1.0 + e), kLow);
}

void apply_activation(Activation act, std::span<const double> pre, std::span<double> post) {
  switch (act) {
    case Activation::kIdentity:
      std::copy(pre.begin(), pre.end(), post.begin());
      break;
    case Activation::kSigmoid:
      std::transform(pre.begin(), pre.end(), post.begin(), sigmoid);
      break;
    case Activation::kRelu:
      std::transform(pre.begin(), pre.end(), post.begin(),
                     [](double v) { return v > 0 ? v : 0.0; });
      break;
  }
}

Tensor activation_backward(Activation act, const Tensor& pre, const Tensor& post,
                           const Tensor& grad_post) {
  if (grad_post.rows() != pre.rows() || grad_post.cols() != pre.cols()) {
    throw Error(ErrorCode::kStaleCache,
                "gradient " + shape(grad_post) + " vs cached " + shape(pre));
  }
  Tensor out(pre.rows(), pre.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double g = grad_post.data()[i];
    switch (act) {
      case Activation::kIdentity: out.data()[i] = g; break;
      case Activation::kSigmoid: {
        const double s = post.data()[i];
        out.data()[i] = g * s * (1.0 - s);
        break;
      }
      case Activation::kRelu: out.data()[i] = pre.data()[i] > 0 ? g : 0.0; break;
    }
  }
  return out;
}

Tensor init_weight_rows(std::size_t in_dim, std::size_t out_dim, std::size_t row_begin,
                        std::size_t row_end, std::uint64_t seed, std::uint64_t layer_tag) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  Tensor w(row_end - row_begin, out_dim);
  for (std::size_t r = row_begin; r < row_end; ++r) {
    Prg rng(mix_seed(seed, layer_tag), r);
    for (std::size_t c = 0; c < out_dim; ++c) {
      w.at(r - row_begin, c) = (2.0 * rng.uniform_real() - 1.0) * limit;
    }
  }
  return w;
}

AffineLayer init_layer(std::size_t in_dim, std::size_t out_dim, Activation act,
                       std::uint64_t seed, std::uint64_t layer_tag) {
  return AffineLayer{init_weight_rows(in_dim, out_dim, 0, in_dim, seed, layer_tag),
                     Tensor(1, out_dim), act};
}

Mlp::Mlp(std::vector<AffineLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.rows() != 1 || l.bias.cols() != l.out_dim()) {
      throw Error(ErrorCode::kDimensionMismatch, "layer " + std::to_string(i) + " bias shape");
    }
    if (i > 0 && layers_[i - 1].out_dim() != l.in_dim()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "layer " + std::to_string(i) + " does not chain onto its predecessor");
    }
  }
}

std::size_t Mlp::in_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
std::size_t Mlp::out_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

Tensor Mlp::forward(const Tensor& x, ForwardCache* cache) const {
  if (cache) cache->layers.clear();
  if (!layers_.empty() && x.cols() != in_dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "input " + shape(x) + " for network with input width " +
                    std::to_string(in_dim()));
  }
  Tensor h = x;
  for (const auto& layer : layers_) {
    Tensor pre = matmul(h, layer.weights);
    add_row_vector(pre, layer.bias);
    Tensor post(pre.rows(), pre.cols());
    apply_activation(layer.activation, pre.data(), post.data());
    if (cache) cache->layers.push_back(LayerCache{h, pre, post});
    h = std::move(post);
  }
  return h;
}

Gradients Mlp::backward(const ForwardCache& cache, const Tensor& grad_output) const {
  if (cache.layers.size() != layers_.size()) {
    throw Error(ErrorCode::kStaleCache, "cache depth does not match network");
  }
  Gradients grads;
  grads.layers.resize(layers_.size());
  Tensor g = grad_output;
  for (std::size_t idx = layers_.size(); idx-- > 0;) {
    const auto& layer = layers_[idx];
    const auto& c = cache.layers[idx];
    if (c.pre.cols() != layer.out_dim() || c.input.cols() != layer.in_dim()) {
      throw Error(ErrorCode::kStaleCache, "cache shapes do not match layer " + std::to_string(idx));
    }
    Tensor dpre = activation_backward(layer.activation, c.pre, c.post, g);
    grads.layers[idx].weights = matmul_tn(c.input, dpre);
    grads.layers[idx].bias = column_sums(dpre);
    g = matmul_nt(dpre, layer.weights);
  }
  grads.input = std::move(g);
  return grads;
}

Tensor softmax(const Tensor& logits) {
  Tensor out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < logits.cols(); ++j) mx = std::max(mx, logits.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      out.at(i, j) = std::exp(logits.at(i, j) - mx);
      sum += out.at(i, j);
    }
    for (std::size_t j = 0; j < logits.cols(); ++j) out.at(i, j) /= sum;
  }
  return out;
}

Tensor probabilities_from_logits(const Tensor& logits) {
  if (logits.cols() >= 2) return softmax(logits);
  Tensor out(logits.rows(), logits.cols());
  std::transform(logits.data().begin(), logits.data().end(), out.data().begin(), sigmoid);
  return out;
}

Tensor predict_head(const Tensor& h_last, const AffineLayer& head) {
  if (h_last.cols() != head.in_dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "head input " + shape(h_last) + " vs weights " + shape(head.weights));
  }
  Tensor logits = matmul(h_last, head.weights);
  add_row_vector(logits, head.bias);
  return probabilities_from_logits(logits);
}

double cross_entropy(const Tensor& probs, std::span<const int> labels) {
  if (probs.rows() != labels.size()) {
    throw Error(ErrorCode::kRowCountMismatch, "labels do not match prediction rows");
  }
  if (probs.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double p;
    if (probs.cols() == 1) {
      p = labels[i] == 1 ? probs.at(i, 0) : 1.0 - probs.at(i, 0);
    } else {
      p = probs.at(i, static_cast<std::size_t>(labels[i]));
    }
    total -= std::log(std::max(p, kProbabilityFloor));
  }
  return total / static_cast<double>(probs.rows());
}

Tensor cross_entropy_logit_grad(const Tensor& probs, std::span<const int> labels) {
  if (probs.rows() != labels.size()) {
    throw Error(ErrorCode::kRowCountMismatch, "labels do not match prediction rows");
  }
  Tensor g = probs;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    if (probs.cols() == 1) {
      g.at(i, 0) -= labels[i] == 1 ? 1.0 : 0.0;
    } else {
      g.at(i, static_cast<std::size_t>(labels[i])) -= 1.0;
    }
  }
  return g;
}

std::vector<double> positive_scores(const Tensor& probs) {
  std::vector<double> out(probs.rows());
  const std::size_t col = probs.cols() == 1 ? 0 : 1;
  for (std::size_t i = 0; i < probs.rows(); ++i) out[i] = probs.at(i, col);
  return out;
}

double OptimizerConfig::alpha(std::uint64_t t) const {
  if (schedule_gamma == 0.0) return learning_rate;
  return learning_rate * std::pow(1.0 + static_cast<double>(t) / schedule_tau, -schedule_gamma);
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::kInvalidConfig, "learning rate must be positive");
  }
  if (batch_size == 0) throw Error(ErrorCode::kInvalidConfig, "batch size must be positive");
  if (schedule_gamma < 0.0 || !(schedule_tau > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "invalid learning-rate schedule");
  }
  if (!(likelihood_scale >= 0.0) || !std::isfinite(likelihood_scale)) {
    throw Error(ErrorCode::kInvalidConfig, "likelihood scale must be finite and >= 0");
  }
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "sgld") return OptimizerKind::kSgld;
  throw Error(ErrorCode::kInvalidConfig, "unknown optimizer '" + std::string(name) + "'");
}

std::string_view optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::kSgd ? "sgd" : "sgld";
}

void sgd_step(Tensor& theta, const Tensor& grad_sum, double alpha, std::size_t batch) {
  if (theta.rows() != grad_sum.rows() || theta.cols() != grad_sum.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "parameter " + shape(theta) + " vs gradient " +
                                               shape(grad_sum));
  }
  const double step = alpha / static_cast<double>(batch);
  for (std::size_t i = 0; i < theta.size(); ++i) theta.data()[i] -= step * grad_sum.data()[i];
}

void sgld_step(Tensor& theta, const Tensor& grad_sum, double alpha_t, std::size_t batch,
               Prg& rng, double likelihood_scale) {
  if (theta.rows() != grad_sum.rows() || theta.cols() != grad_sum.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "parameter " + shape(theta) + " vs gradient " +
                                               shape(grad_sum));
  }
  const double half = alpha_t / 2.0 * likelihood_scale / static_cast<double>(batch);
  const double sd = std::sqrt(alpha_t);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    theta.data()[i] -= half * grad_sum.data()[i] + sd * rng.normal();
  }
}

void optimizer_step(Tensor& theta, const Tensor& grad_sum, const OptimizerConfig& cfg,
                    std::uint64_t t, std::size_t batch, Prg& rng) {
  if (cfg.kind == OptimizerKind::kSgd) {
    sgd_step(theta, grad_sum, cfg.alpha(t), batch);
  } else {
    sgld_step(theta, grad_sum, cfg.alpha(t), batch, rng, cfg.likelihood_scale);
  }
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorCode::kRowCountMismatch, "scores and labels differ in length");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw Error(ErrorCode::kDegenerateLabels, "AUC needs both positive and negative labels");
  }
  const double p = static_cast<double>(positives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

namespace {

template <typename T>
void write_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));  // host is little-endian (x86-64, aarch64)
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw Error(ErrorCode::kParseError, "truncated checkpoint");
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

constexpr char kCheckpointMagic[4] = {'S', 'P', 'N', 'N'};
constexpr std::uint16_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const Mlp& model, std::ostream& out) {
  out.write(kCheckpointMagic, 4);
  write_le<std::uint16_t>(out, kCheckpointVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.layers().size()));
  for (const auto& layer : model.layers()) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(layer.in_dim()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(layer.out_dim()));
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(layer.activation));
    for (double v : layer.weights.data()) write_le<double>(out, v);
    for (double v : layer.bias.data()) write_le<double>(out, v);
  }
}

Mlp load_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw Error(ErrorCode::kParseError, "not an SPNN checkpoint");
  }
  const auto version = read_le<std::uint16_t>(in);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kParseError, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = read_le<std::uint32_t>(in);
  std::vector<AffineLayer> layers;
  for (std::uint32_t l = 0; l < count; ++l) {
    const auto in_dim = read_le<std::uint32_t>(in);
    const auto out_dim = read_le<std::uint32_t>(in);
    const auto act = read_le<std::uint8_t>(in);
    if (act > 2) throw Error(ErrorCode::kParseError, "unknown activation tag");
    AffineLayer layer{Tensor(in_dim, out_dim), Tensor(1, out_dim), static_cast<Activation>(act)};
    for (double& v : layer.weights.data()) v = read_le<double>(in);
    for (double& v : layer.bias.data()) v = read_le<double>(in);
    layers.push_back(std::move(layer));
  }
  return Mlp(std::move(layers));
}

}  // namespace spnn
