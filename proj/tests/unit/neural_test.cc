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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "spnn/error.h"

namespace spnn {
namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Prg& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (auto& v : t.data()) v = scale * (2.0 * rng.uniform_real() - 1.0);
  return t;
}

TEST(NeuralTest, IdentityLayerPassesInputThrough) {
  Tensor w(3, 3);
  for (std::size_t i = 0; i < 3; ++i) w.at(i, i) = 1.0;
  Mlp net({AffineLayer{w, Tensor(1, 3), Activation::kIdentity}});
  Prg rng(1);
  const Tensor x = random_tensor(4, 3, rng);
  EXPECT_EQ(net.forward(x), x);
}

TEST(NeuralTest, SigmoidOfZeroIsHalf) {
  Mlp net({AffineLayer{Tensor(2, 5), Tensor(1, 5), Activation::kSigmoid}});
  const Tensor out = net.forward(Tensor(3, 2));
  for (double v : out.data()) EXPECT_EQ(v, 0.5);
}

// Straight-line evaluation of a two-layer network, written without the
// library's matmul or activation helpers.
Tensor oracle_forward(const Tensor& x, const Mlp& net) {
  Tensor h = x;
  for (const auto& layer : net.layers()) {
    Tensor next(h.rows(), layer.out_dim());
    for (std::size_t i = 0; i < h.rows(); ++i) {
      for (std::size_t j = 0; j < layer.out_dim(); ++j) {
        double z = layer.bias.at(0, j);
        for (std::size_t k = 0; k < layer.in_dim(); ++k) z += h.at(i, k) * layer.weights.at(k, j);
        switch (layer.activation) {
          case Activation::kSigmoid: z = 1.0 / (1.0 + std::exp(-z)); break;
          case Activation::kRelu: z = std::max(z, 0.0); break;
          case Activation::kIdentity: break;
        }
        next.at(i, j) = z;
      }
    }
    h = next;
  }
  return h;
}

TEST(NeuralTest, ForwardMatchesIndependentOracle) {
  Prg rng(2);
  Mlp net({init_layer(5, 7, Activation::kSigmoid, 42, 0), init_layer(7, 3, Activation::kRelu, 42, 1)});
  for (auto& l : net.layers()) l.bias = random_tensor(1, l.out_dim(), rng);
  const Tensor x = random_tensor(6, 5, rng);
  const Tensor a = net.forward(x);
  const Tensor b = oracle_forward(x, net);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
  EXPECT_EQ(net.forward(x), a);
}

TEST(NeuralTest, DimensionErrors) {
  Mlp net({init_layer(4, 2, Activation::kSigmoid, 1, 0)});
  EXPECT_THROW(net.forward(Tensor(2, 3)), Error);
  EXPECT_THROW(Mlp({init_layer(4, 2, Activation::kSigmoid, 1, 0), init_layer(3, 2, Activation::kSigmoid, 1, 1)}),
               Error);
  EXPECT_THROW(matmul(Tensor(2, 3), Tensor(2, 3)), Error);
}

TEST(NeuralTest, InitRowsAreIndependentOfRange) {
  const Tensor full = init_weight_rows(10, 4, 0, 10, 9, 3);
  const Tensor tail = init_weight_rows(10, 4, 6, 10, 9, 3);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(tail.at(r, c), full.at(r + 6, c));
  const double limit = std::sqrt(6.0 / 14.0);
  for (double v : full.data()) EXPECT_LE(std::fabs(v), limit);
}

TEST(NeuralTest, SoftmaxProperties) {
  Tensor equal(2, 4, 3.0);
  const Tensor flat = softmax(equal);
  for (double v : flat.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  Prg rng(3);
  Tensor logits = random_tensor(20, 5, rng, 50.0);
  logits.at(0, 0) = 50.0;
  logits.at(0, 1) = -50.0;
  const Tensor p = softmax(logits);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (double v : p.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_TRUE(p.all_finite());
  for (double x : {-800.0, -50.0, 0.0, 50.0, 800.0}) {
    EXPECT_GT(sigmoid(x), 0.0);
    EXPECT_LT(sigmoid(x), 1.0);
  }
}

TEST(NeuralTest, SigmoidHeadMatchesTwoClassSoftmax) {
  Prg rng(4);
  const Tensor h = random_tensor(10, 3, rng);
  AffineLayer two{random_tensor(3, 2, rng), random_tensor(1, 2, rng), Activation::kIdentity};
  AffineLayer one{Tensor(3, 1), Tensor(1, 1), Activation::kIdentity};
  for (std::size_t k = 0; k < 3; ++k) one.weights.at(k, 0) = two.weights.at(k, 1) - two.weights.at(k, 0);
  one.bias.at(0, 0) = two.bias.at(0, 1) - two.bias.at(0, 0);
  const auto a = positive_scores(predict_head(h, two));
  const auto b = positive_scores(predict_head(h, one));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(NeuralTest, CrossEntropyValues) {
  Tensor perfect(2, 3);
  perfect.at(0, 1) = 1.0;
  perfect.at(1, 2) = 1.0;
  const std::vector<int> y = {1, 2};
  EXPECT_LE(cross_entropy(perfect, y), 1e-10);
  Tensor uniform(2, 3, 1.0 / 3.0);
  EXPECT_NEAR(cross_entropy(uniform, y), std::log(3.0), 1e-12);

  Prg rng(5);
  const Tensor p = softmax(random_tensor(30, 4, rng, 3.0));
  std::vector<int> labels(30);
  double oracle = 0.0;
  for (std::size_t i = 0; i < 30; ++i) {
    labels[i] = static_cast<int>(rng.uniform(4));
    oracle += -std::log(p.at(i, labels[i]));
  }
  EXPECT_NEAR(cross_entropy(p, labels), oracle / 30.0, 1e-12);
  EXPECT_GT(cross_entropy(Tensor(1, 2), std::vector<int>{0}), 27.0);
}

double loss_of(const Mlp& net, const AffineLayer& head, const Tensor& x, std::span<const int> y) {
  return cross_entropy(predict_head(net.forward(x), head), y) * static_cast<double>(x.rows());
}

// Compares every analytic gradient with central differences.
void check_gradients(Activation act, std::uint64_t seed) {
  Prg rng(seed);
  Mlp net({init_layer(4, 5, act, seed, 0), init_layer(5, 3, act, seed, 1)});
  for (auto& l : net.layers()) l.bias = random_tensor(1, l.out_dim(), rng, 0.5);
  AffineLayer head{random_tensor(3, 2, rng), random_tensor(1, 2, rng), Activation::kIdentity};
  Tensor x = random_tensor(6, 4, rng, 2.0);
  std::vector<int> y(6);
  for (auto& v : y) v = static_cast<int>(rng.uniform(2));

  ForwardCache cache;
  const Tensor h = net.forward(x, &cache);
  const Tensor p = predict_head(h, head);
  const Tensor dlogits = cross_entropy_logit_grad(p, y);
  const Tensor dh = matmul_nt(dlogits, head.weights);
  const Gradients g = net.backward(cache, dh);

  const double eps = 1e-5;
  auto rel = [](double a, double b) { return std::fabs(a - b) / std::max({1e-7, std::fabs(a), std::fabs(b)}); };
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    for (int which = 0; which < 2; ++which) {
      Tensor& param = which == 0 ? net.layers()[l].weights : net.layers()[l].bias;
      const Tensor& grad = which == 0 ? g.layers[l].weights : g.layers[l].bias;
      for (std::size_t i = 0; i < param.size(); ++i) {
        const double keep = param.data()[i];
        param.data()[i] = keep + eps;
        const double up = loss_of(net, head, x, y);
        param.data()[i] = keep - eps;
        const double down = loss_of(net, head, x, y);
        param.data()[i] = keep;
        const double fd = (up - down) / (2 * eps);
        if (act == Activation::kRelu && std::fabs(fd - grad.data()[i]) < 1e-8) continue;
        ASSERT_LT(rel(fd, grad.data()[i]), 1e-4) << activation_name(act) << " layer " << l << " param " << i;
      }
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + eps;
    const double up = loss_of(net, head, x, y);
    x.data()[i] = keep - eps;
    const double down = loss_of(net, head, x, y);
    x.data()[i] = keep;
    const double fd = (up - down) / (2 * eps);
    if (act == Activation::kRelu && std::fabs(fd - g.input.data()[i]) < 1e-8) continue;
    ASSERT_LT(rel(fd, g.input.data()[i]), 1e-4) << "input " << i;
  }
}

TEST(NeuralTest, FiniteDifferenceGradients) {
  for (std::uint64_t s = 1; s <= 20; ++s) {
    check_gradients(Activation::kSigmoid, s);
    check_gradients(Activation::kIdentity, s);
    check_gradients(Activation::kRelu, s);
  }
}

TEST(NeuralTest, ZeroLossGradientGivesZeroGradients) {
  Prg rng(6);
  Mlp net({init_layer(3, 4, Activation::kSigmoid, 1, 0), init_layer(4, 2, Activation::kRelu, 1, 1)});
  ForwardCache cache;
  net.forward(random_tensor(5, 3, rng), &cache);
  const Gradients g = net.backward(cache, Tensor(5, 2));
  for (const auto& l : g.layers) {
    for (double v : l.weights.data()) EXPECT_EQ(v, 0.0);
    for (double v : l.bias.data()) EXPECT_EQ(v, 0.0);
  }
  EXPECT_THROW(net.backward(cache, Tensor(5, 3)), Error);
  EXPECT_THROW(net.backward(ForwardCache{}, Tensor(5, 2)), Error);
}

TEST(NeuralTest, LinearSquaredLossClosedForm) {
  Prg rng(7);
  const Tensor x = random_tensor(8, 3, rng);
  const Tensor theta = random_tensor(3, 1, rng);
  const Tensor y = random_tensor(8, 1, rng);
  Mlp net({AffineLayer{theta, Tensor(1, 1), Activation::kIdentity}});
  ForwardCache cache;
  const Tensor out = net.forward(x, &cache);
  // L = sum (x theta - y)^2 / (2 |B|); dL/dout = (out - y) / |B|.
  Tensor dout(8, 1);
  for (std::size_t i = 0; i < 8; ++i) dout.at(i, 0) = (out.at(i, 0) - y.at(i, 0)) / 8.0;
  const Gradients g = net.backward(cache, dout);
  for (std::size_t k = 0; k < 3; ++k) {
    double expect = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      double pred = 0.0;
      for (std::size_t j = 0; j < 3; ++j) pred += x.at(i, j) * theta.at(j, 0);
      expect += x.at(i, k) * (pred - y.at(i, 0));
    }
    EXPECT_NEAR(g.layers[0].weights.at(k, 0), expect / 8.0, 1e-12);
  }
}

TEST(NeuralTest, SgdStep) {
  Tensor theta(2, 2, 1.0);
  sgd_step(theta, Tensor(2, 2), 0.5, 4);
  EXPECT_EQ(theta, Tensor(2, 2, 1.0));
  Tensor zero(1, 3);
  sgd_step(zero, Tensor(1, 3, {1.0, -2.0, 3.5}), 1.0, 1);
  EXPECT_EQ(zero, Tensor(1, 3, {-1.0, 2.0, -3.5}));
  EXPECT_THROW(sgd_step(zero, Tensor(3, 1), 1.0, 1), Error);
}

TEST(NeuralTest, SgdDescendsConvexQuadratic) {
  // f(theta) = 0.5 * |A theta - b|^2 with batch of 10 rows.
  Prg rng(8);
  const Tensor a = random_tensor(10, 4, rng);
  const Tensor b = random_tensor(10, 1, rng);
  Tensor theta(4, 1);
  auto loss = [&] {
    double s = 0.0;
    const Tensor r = matmul(a, theta);
    for (std::size_t i = 0; i < 10; ++i) s += 0.5 * (r.at(i, 0) - b.at(i, 0)) * (r.at(i, 0) - b.at(i, 0));
    return s;
  };
  double prev = loss();
  for (int step = 0; step < 100; ++step) {
    Tensor resid = matmul(a, theta);
    for (std::size_t i = 0; i < 10; ++i) resid.at(i, 0) -= b.at(i, 0);
    sgd_step(theta, matmul_tn(a, resid), 0.5, 10);
    const double now = loss();
    ASSERT_LE(now, prev + 1e-15);
    prev = now;
  }
}

TEST(NeuralTest, SgldNoiseVariance) {
  const double alpha = 0.01;
  Prg rng(9);
  const std::size_t n = 100000;
  Tensor theta(1, n);
  sgld_step(theta, Tensor(1, n), alpha, 32, rng);
  double mean = 0.0, var = 0.0;
  for (double v : theta.data()) mean += v;
  mean /= n;
  for (double v : theta.data()) var += (v - mean) * (v - mean);
  var /= (n - 1);
  EXPECT_NEAR(var / alpha, 1.0, 0.05);
}

TEST(NeuralTest, SgldDeterminismAndLimit) {
  Prg r1(10), r2(10), r3(11);
  Tensor a(3, 3, 1.0), b(3, 3, 1.0), c(3, 3, 1.0);
  const Tensor g(3, 3, 0.7);
  sgld_step(a, g, 0.1, 4, r1);
  sgld_step(b, g, 0.1, 4, r2);
  EXPECT_EQ(a, b);
  sgld_step(c, g, 1e-20, 4, r3);
  for (double v : c.data()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(NeuralTest, SgldWithoutNoiseEqualsSgd) {
  // With the noise term removed and alpha_t = 2 alpha, the SGLD drift is the SGD step.
  Prg rng(12);
  const Tensor g = random_tensor(4, 3, rng);
  Tensor a = random_tensor(4, 3, rng);
  Tensor b = a;
  sgd_step(a, g, 0.05, 8);
  const double half = 2 * 0.05 / 2.0 / 8.0;
  for (std::size_t i = 0; i < b.size(); ++i) b.data()[i] -= half * g.data()[i];
  EXPECT_EQ(a, b);
}

TEST(NeuralTest, AucCases) {
  const std::vector<double> sep = {0.1, 0.2, 0.8, 0.9};
  const std::vector<int> y = {0, 0, 1, 1};
  EXPECT_EQ(auc(sep, y), 1.0);
  const std::vector<double> flat = {0.3, 0.3, 0.3, 0.3};
  EXPECT_EQ(auc(flat, y), 0.5);
  EXPECT_THROW(auc(sep, std::vector<int>{1, 1, 1, 1}), Error);

  Prg rng(13);
  std::vector<double> s(50);
  std::vector<int> l(50);
  for (std::size_t i = 0; i < 50; ++i) {
    s[i] = static_cast<double>(rng.uniform(10)) / 10.0;
    l[i] = static_cast<int>(rng.uniform(2));
  }
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < 50; ++i)
    for (std::size_t j = 0; j < 50; ++j)
      if (l[i] == 1 && l[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  EXPECT_NEAR(auc(s, l), wins / pairs, 1e-12);
}

TEST(NeuralTest, OptimizerConfigValidation) {
  OptimizerConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.learning_rate = 0.1;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.batch_size = 4;
  cfg.schedule_gamma = 0.55;
  cfg.schedule_tau = 100.0;
  EXPECT_DOUBLE_EQ(cfg.alpha(0), 0.1);
  EXPECT_DOUBLE_EQ(cfg.alpha(100), 0.1 * std::pow(2.0, -0.55));
  EXPECT_EQ(parse_optimizer("sgld"), OptimizerKind::kSgld);
  EXPECT_THROW(parse_optimizer("adam"), Error);
}

TEST(NeuralTest, CheckpointRoundTrip) {
  Mlp net({init_layer(5, 4, Activation::kSigmoid, 3, 0), init_layer(4, 2, Activation::kRelu, 3, 1)});
  net.layers()[1].bias.at(0, 1) = -0.125;
  std::stringstream buf;
  save_checkpoint(net, buf);
  const std::string bytes = buf.str();
  EXPECT_EQ(bytes.substr(0, 4), "SPNN");
  EXPECT_EQ(bytes.size(), 4u + 2 + 4 + 2 * 9 + 8 * (20 + 4 + 8 + 2));
  const Mlp back = load_checkpoint(buf);
  ASSERT_EQ(back.layers().size(), 2u);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(back.layers()[l].weights, net.layers()[l].weights);
    EXPECT_EQ(back.layers()[l].bias, net.layers()[l].bias);
    EXPECT_EQ(back.layers()[l].activation, net.layers()[l].activation);
  }
  std::stringstream bad("SPNX");
  EXPECT_THROW(load_checkpoint(bad), Error);
}

}  // namespace
}  // namespace spnn
