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
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spnn/prg.h"

namespace spnn {

// Dense row-major matrix of reals.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a * b. Inner accumulation runs k = 0..d-1 starting from 0.0.
Tensor matmul(const Tensor& a, const Tensor& b);
// acc + a * b, continuing each element's running sum over k = 0..d-1. Splitting
// the inner dimension across two calls reproduces matmul bit-for-bit.
Tensor matmul_continue(Tensor acc, const Tensor& a, const Tensor& b);
// a^T * b without materialising the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// a * b^T.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor hconcat(const Tensor& a, const Tensor& b);
Tensor vconcat(const Tensor& a, const Tensor& b);
// Columns [begin, end).
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
// Rows of a selected by index, in the given order.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
Tensor column_sums(const Tensor& a);
void add_row_vector(Tensor& a, const Tensor& row);

enum class Activation : std::uint8_t { kIdentity = 0, kSigmoid = 1, kRelu = 2 };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);

double sigmoid(double x);
void apply_activation(Activation act, std::span<const double> pre, std::span<double> post);
// dL/dpre given dL/dpost and the cached pre and post activations.
Tensor activation_backward(Activation act, const Tensor& pre, const Tensor& post,
                           const Tensor& grad_post);

struct AffineLayer {
  Tensor weights;  // in_dim x out_dim
  Tensor bias;     // 1 x out_dim
  Activation activation = Activation::kIdentity;

  std::size_t in_dim() const { return weights.rows(); }
  std::size_t out_dim() const { return weights.cols(); }
};

// Glorot-uniform weights, zero bias. Row r of the weight matrix is drawn from
// its own stream keyed by (seed, layer_tag, r), so a party holding rows
// [begin, end) of a split layer reproduces exactly those rows.
AffineLayer init_layer(std::size_t in_dim, std::size_t out_dim, Activation act,
                       std::uint64_t seed, std::uint64_t layer_tag);
Tensor init_weight_rows(std::size_t in_dim, std::size_t out_dim, std::size_t row_begin,
                        std::size_t row_end, std::uint64_t seed, std::uint64_t layer_tag);

struct LayerCache {
  Tensor input;
  Tensor pre;
  Tensor post;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
};

struct LayerGrad {
  Tensor weights;
  Tensor bias;
};

struct Gradients {
  std::vector<LayerGrad> layers;
  Tensor input;  // dL/d(network input)
};

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<AffineLayer> layers);

  const std::vector<AffineLayer>& layers() const { return layers_; }
  std::vector<AffineLayer>& layers() { return layers_; }
  bool empty() const { return layers_.empty(); }
  std::size_t in_dim() const;
  std::size_t out_dim() const;

  // h_{l+1} = f_l(h_l * W_l + b_l). With an empty layer list the output is x.
  Tensor forward(const Tensor& x, ForwardCache* cache = nullptr) const;

  // grad_output is dL/d(output). Gradients are sums over the batch when
  // grad_output holds per-sample (unaveraged) terms.
  Gradients backward(const ForwardCache& cache, const Tensor& grad_output) const;

 private:
  std::vector<AffineLayer> layers_;
};

// Row-wise softmax via log-sum-exp.
Tensor softmax(const Tensor& logits);

// Probabilities from head logits: softmax for k >= 2 columns, sigmoid for 1.
Tensor predict_head(const Tensor& h_last, const AffineLayer& head);
Tensor probabilities_from_logits(const Tensor& logits);

// Mean negative log-likelihood with probabilities clamped at 1e-12.
double cross_entropy(const Tensor& probs, std::span<const int> labels);
// Per-sample dL/dlogits (p - onehot) for the softmax or sigmoid head.
Tensor cross_entropy_logit_grad(const Tensor& probs, std::span<const int> labels);
// Positive-class score per row (column 1 of a softmax head, column 0 of sigmoid).
std::vector<double> positive_scores(const Tensor& probs);

enum class OptimizerKind : std::uint8_t { kSgd = 0, kSgld = 1 };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 0.01;
  std::size_t batch_size = 64;
  // alpha_t = learning_rate * (1 + t / schedule_tau)^(-schedule_gamma).
  double schedule_gamma = 0.0;
  double schedule_tau = 1.0;
  std::uint64_t noise_seed = 0;
  // SGLD only: factor on the mean gradient. 1 keeps the mean-loss form, N
  // (training rows) gives the summed-loss form; 0 asks the protocol to use N.
  double likelihood_scale = 1.0;

  double alpha(std::uint64_t t) const;
  void validate() const;
};

OptimizerKind parse_optimizer(std::string_view name);
std::string_view optimizer_name(OptimizerKind k);

// theta <- theta - (alpha / batch) * grad_sum.
void sgd_step(Tensor& theta, const Tensor& grad_sum, double alpha, std::size_t batch);
// theta <- theta - (alpha_t / 2 * grad_sum / batch + eta), eta ~ N(0, alpha_t I).
void sgld_step(Tensor& theta, const Tensor& grad_sum, double alpha_t, std::size_t batch,
               Prg& rng, double likelihood_scale = 1.0);
// Dispatches on cfg.kind; rng is used only for SGLD.
void optimizer_step(Tensor& theta, const Tensor& grad_sum, const OptimizerConfig& cfg,
                    std::uint64_t t, std::size_t batch, Prg& rng);

// Rank-based (Mann-Whitney) AUC with average ranks for ties.
double auc(std::span<const double> scores, std::span<const int> labels);

// Versioned binary checkpoint: "SPNN", u16 version, u32 layer count, then per
// layer u32 in, u32 out, u8 activation, f64 weights, f64 bias (little-endian).
void save_checkpoint(const Mlp& model, std::ostream& out);
Mlp load_checkpoint(std::istream& in);

}  // namespace spnn
