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

#include "spnn/harness.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <filesystem>
#include <fstream>
#include <set>

#include "spnn/error.h"

namespace spnn {
namespace {

using nlohmann::json;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::kIo;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

ExperimentConfig small_config(ProtocolMode mode, std::size_t rows) {
  ExperimentConfig c;
  c.train.mode = mode;
  c.train.net.hidden = {8, 8};
  c.train.net.activations = {Activation::kSigmoid, Activation::kSigmoid};
  c.train.optimizer.learning_rate = 0.1;
  c.train.optimizer.batch_size = 64;
  c.train.epochs = 2;
  c.train.key_bits = 512;
  c.data.synth.rows = rows;
  c.seeds = {1};
  return c;
}

TEST(CsvTest, NumericValuesParseExactly) {
  const Dataset ds = parse_csv("x,y,label\n1,10,0\n2,20,1\n3,60,1\n", "label");
  ASSERT_EQ(ds.rows(), 3u);
  ASSERT_EQ(ds.features.cols(), 2u);
  EXPECT_EQ(ds.columns, (std::vector<std::string>{"x", "y"}));
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 1, 1}));
  EXPECT_EQ(ds.mean[0], 2.0);
  EXPECT_EQ(ds.mean[1], 30.0);
  const double raw[3][2] = {{1, 10}, {2, 20}, {3, 60}};
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_DOUBLE_EQ(ds.features.at(r, c) * ds.stddev[c] + ds.mean[c], raw[r][c]);
    }
  }
  EXPECT_DOUBLE_EQ(ds.stddev[0], std::sqrt(2.0 / 3.0));
}

TEST(CsvTest, CategoricalColumnIsOneHot) {
  const Dataset ds = parse_csv("k,v,label\nred,1,0\nblue,2,1\ngreen,3,0\nred,4,1\n", "label");
  EXPECT_EQ(ds.columns, (std::vector<std::string>{"k=blue", "k=green", "k=red", "v"}));
  // Each row has exactly one hot category: standardized values undo to 0/1.
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    double hot = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double raw = ds.features.at(r, c) * ds.stddev[c] + ds.mean[c];
      EXPECT_NEAR(raw * (1 - raw), 0.0, 1e-12);
      hot += raw;
    }
    EXPECT_NEAR(hot, 1.0, 1e-12);
  }
  EXPECT_NEAR(ds.features.at(0, 2) * ds.stddev[2] + ds.mean[2], 1.0, 1e-12);
}

TEST(CsvTest, StandardizedColumnsHaveUnitMoments) {
  Prg rng(3);
  std::string text = "a,b,c,label\n";
  for (int r = 0; r < 500; ++r) {
    text += std::to_string(1e3 + 50 * rng.normal()) + "," + std::to_string(rng.uniform_real()) + "," +
            std::to_string(-7 + 0.01 * rng.normal()) + "," + std::to_string(r % 2) + "\n";
  }
  const Dataset ds = parse_csv(text, "label");
  for (std::size_t c = 0; c < ds.features.cols(); ++c) {
    long double s = 0, ss = 0;
    for (std::size_t r = 0; r < ds.rows(); ++r) s += ds.features.at(r, c);
    const long double m = s / ds.rows();
    for (std::size_t r = 0; r < ds.rows(); ++r) ss += (ds.features.at(r, c) - m) * (ds.features.at(r, c) - m);
    EXPECT_NEAR(static_cast<double>(m), 0.0, 1e-10);
    EXPECT_NEAR(static_cast<double>(std::sqrt(ss / ds.rows())), 1.0, 1e-10);
  }
}

TEST(CsvTest, MissingRowsDroppedAndCounted) {
  const Dataset ds = parse_csv("x,label\n1,0\n,1\nNA,0\n4,1\n", "label");
  EXPECT_EQ(ds.rows(), 2u);
  EXPECT_EQ(ds.dropped_rows, 2u);
}

TEST(CsvTest, ParseErrorsCarryLocation) {
  EXPECT_EQ(code_of([] { parse_csv("x,label\n1,0\n2\n", "label"); }), ErrorCode::kParseError);
  EXPECT_NE(message_of([] { parse_csv("x,label\n1,0\n2\n", "label"); }).find("row 3"), std::string::npos);
  const auto msg = message_of([] { parse_csv("x,label\n1,0\n2,yes\n", "label"); });
  EXPECT_NE(msg.find("row 3, column 2"), std::string::npos) << msg;
  EXPECT_EQ(code_of([] { parse_csv("x,y\n1,0\n", "label"); }), ErrorCode::kParseError);
}

TEST(CsvTest, EmptyDatasetRejected) {
  EXPECT_EQ(code_of([] { parse_csv("x,label\n", "label"); }), ErrorCode::kEmptyDataset);
  EXPECT_EQ(code_of([] { parse_csv("x,label\n,1\n", "label"); }), ErrorCode::kEmptyDataset);
}

TEST(CsvTest, LoadIsAPureFunctionOfFileBytes) {
  const auto dir = std::filesystem::temp_directory_path() / "spnn_harness_test";
  std::filesystem::create_directories(dir);
  SynthConfig sc;
  sc.rows = 200;
  Dataset ds = gen_synth(sc);
  const auto path = (dir / "synth.csv").string();
  write_csv(ds, path);
  const Dataset a = load_csv(path, "label");
  const Dataset b = load_csv(path, "label");
  EXPECT_TRUE(std::equal(a.features.data().begin(), a.features.data().end(), b.features.data().begin()));
  EXPECT_EQ(a.labels, ds.labels);
  EXPECT_EQ(a.columns, ds.columns);
  EXPECT_EQ(code_of([&] { load_csv((dir / "absent.csv").string(), "label"); }), ErrorCode::kIo);
}

TEST(SplitTest, TrainCountUsesFloor) {
  EXPECT_EQ(train_row_count(284807, 0.8), 227845u);
  EXPECT_EQ(284807 - train_row_count(284807, 0.8), 56962u);
  EXPECT_EQ(train_row_count(10, 0.7), 7u);
  EXPECT_EQ(code_of([] { train_row_count(10, 1.5); }), ErrorCode::kInvalidSpec);
}

TEST(SplitTest, TrainTestIsASeededPartition) {
  SynthConfig sc;
  sc.rows = 1001;
  const Dataset ds = gen_synth(sc);
  const auto s = split_train_test(ds, 0.8, 9);
  EXPECT_EQ(s.train.rows(), 800u);
  EXPECT_EQ(s.test.rows(), 201u);
  std::set<std::size_t> all(s.train_rows.begin(), s.train_rows.end());
  all.insert(s.test_rows.begin(), s.test_rows.end());
  EXPECT_EQ(all.size(), 1001u);
  EXPECT_EQ(*all.rbegin(), 1000u);
  EXPECT_EQ(split_train_test(ds, 0.8, 9).train_rows, s.train_rows);
  EXPECT_NE(split_train_test(ds, 0.8, 10).train_rows, s.train_rows);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(s.train.features.at(i, 3), ds.features.at(s.train_rows[i], 3));
    EXPECT_EQ(s.train.labels[i], ds.labels[s.train_rows[i]]);
  }
}

TEST(SplitTest, EqualHalvesAndColumnLists) {
  const Dataset ds = gen_synth({});
  const VerticalSplit v = split_vertical(ds);
  EXPECT_EQ(v.a.cols(), 14u);
  EXPECT_EQ(v.b.cols(), 14u);
  EXPECT_EQ(v.labels, ds.labels);
  const VerticalSplit w = split_vertical(ds, {"b3", "amount"});
  EXPECT_EQ(w.columns_a, (std::vector<std::string>{"amount", "b3"}));
  EXPECT_EQ(w.b.cols(), 26u);
  EXPECT_EQ(w.a.at(7, 1), ds.features.at(7, ds.column_index("b3")));
  EXPECT_EQ(code_of([&] { split_vertical(ds, {"nope"}); }), ErrorCode::kInvalidSpec);
}

TEST(SynthTest, ShapeAndPlantedProperty) {
  const Dataset ds = gen_synth({});
  EXPECT_EQ(ds.rows(), 20000u);
  EXPECT_EQ(ds.features.cols(), 28u);
  EXPECT_EQ(ds.columns[13], "amount");
  const auto prop = binarize_property(ds, "amount");
  EXPECT_EQ(std::count(prop.begin(), prop.end(), 1), 10000);
  // The property follows A's first column.
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    const double x = ds.features.at(r, 0), y = ds.features.at(r, 13);
    sxy += x * y;
    sxx += x * x;
    syy += y * y;
  }
  EXPECT_GT(sxy / std::sqrt(sxx * syy), 0.6);
}

TEST(AttackTest, BinarizeRejectsConstantColumn) {
  const Dataset ds = parse_csv("x,c,label\n1,5,0\n2,5,1\n3,5,0\n", "label");
  EXPECT_EQ(code_of([&] { binarize_property(ds, "c"); }), ErrorCode::kDegenerateProperty);
  EXPECT_EQ(binarize_property(ds, "x"), (std::vector<int>{0, 0, 1}));
}

TEST(AttackTest, SetupFractionsMustSumToOne) {
  AttackSetup s;
  EXPECT_NO_THROW(s.validate());
  s.attack_test_fraction = 0.3;
  EXPECT_EQ(code_of([&] { s.validate(); }), ErrorCode::kInvalidSpec);
}

TEST(AttackTest, PureNoiseGivesChanceAuc) {
  Prg rng(11);
  auto noise = [&](std::size_t n) {
    Tensor t(n, 8);
    for (auto& v : t.data()) v = rng.normal();
    return t;
  };
  auto coin = [&](std::size_t n) {
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.uniform(2));
    return y;
  };
  const Tensor xtr = noise(4000), xte = noise(4000);
  const auto ytr = coin(4000), yte = coin(4000);
  const double a = auc(fit_logistic(xtr, ytr).predict(xte), yte);
  EXPECT_NEAR(a, 0.5, 0.05);
}

TEST(AttackTest, LogisticRecoversLinearSignal) {
  Prg rng(12);
  Tensor x(2000, 3);
  std::vector<int> y(2000);
  for (std::size_t r = 0; r < 2000; ++r) {
    for (std::size_t c = 0; c < 3; ++c) x.at(r, c) = rng.normal();
    y[r] = 2 * x.at(r, 0) - x.at(r, 2) + 0.3 * rng.normal() > 0;
  }
  const LogisticModel m = fit_logistic(x, y);
  EXPECT_GT(auc(m.predict(x), y), 0.95);
  EXPECT_GT(m.weights[0], 0);
  EXPECT_LT(m.weights[2], 0);
}

TEST(AttackTest, LeakageAttackSanity) {
  ExperimentConfig c = small_config(ProtocolMode::kFloat, 8000);
  c.train.epochs = 5;
  const Dataset ds = [&] {
    Dataset d = gen_synth(c.data.synth);
    standardize(d);
    return d;
  }();
  const VerticalSplit v = split_vertical(ds);
  TrainConfig t = c.train;
  const AttackResult r = leakage_attack(t, ds, v.columns_a, {});
  EXPECT_GE(r.attack_auc, 0.4);
  EXPECT_LE(r.attack_auc, 1.0);
  EXPECT_GE(r.shuffled_attack_auc, 0.45);
  EXPECT_LE(r.shuffled_attack_auc, 0.55);
  EXPECT_GT(r.task_auc, 0.6);
}

TEST(ExperimentTest, ConfigJsonRoundTripAndShorthands) {
  const json j = json::parse(R"({"mode":"he","lr":0.05,"batch_size":32,"T":3,"hidden":[16,4],
      "activation":"relu","repetitions":3,"network":{"bandwidth":"1M"},"data":{"max_rows":100}})");
  const ExperimentConfig c = ExperimentConfig::from_json(j);
  EXPECT_EQ(c.train.mode, ProtocolMode::kHomomorphic);
  EXPECT_EQ(c.train.optimizer.learning_rate, 0.05);
  EXPECT_EQ(c.train.optimizer.batch_size, 32u);
  EXPECT_EQ(c.train.epochs, 3u);
  EXPECT_EQ(c.train.net.activations, (std::vector<Activation>{Activation::kRelu, Activation::kRelu}));
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(c.network.bandwidth_bps, 1e6);
  EXPECT_EQ(c.data.max_rows, 100u);
  const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(code_of([] { ExperimentConfig::from_json(json::parse(R"({"seeds":"x"})")); }),
            ErrorCode::kParseError);
}

TEST(ExperimentTest, SeedFixedReportsAreIdentical) {
  ExperimentConfig c = small_config(ProtocolMode::kSecretSharing, 1500);
  const json a = run_experiment(c);
  const json b = run_experiment(c);
  EXPECT_EQ(a["report_hash"], b["report_hash"]);
  json sa = a, sb = b;
  for (auto* r : {&sa, &sb}) {
    for (auto& run : (*r)["runs"]) run.erase("timing");
  }
  EXPECT_EQ(sa.dump(), sb.dump());
  json changed = a;
  changed["runs"][0]["timing"]["wall_seconds"] = 123.0;
  EXPECT_EQ(report_hash(changed), a["report_hash"]);
  changed["summary"]["auc_mean"] = 0.0;
  EXPECT_NE(report_hash(changed), a["report_hash"]);
}

TEST(ExperimentTest, SecretSharedTracksBaseline) {
  ExperimentConfig c = small_config(ProtocolMode::kSecretSharing, 4000);
  c.train.epochs = 3;
  const json r = run_experiment(c);
  EXPECT_LE(r["summary"]["auc_gap"].get<double>(), 0.02);
  EXPECT_GT(r["summary"]["auc_mean"].get<double>(), 0.7);
  EXPECT_EQ(r["dataset"]["train_rows"], 3200);
  EXPECT_EQ(r["runs"][0]["triples_consumed"], 2 * (50 + 13) * 3);
}

TEST(SweepTest, LinearFitOfExactLine) {
  const LinearFit f = linear_fit({1, 2, 3, 4}, {3, 5, 7, 9});
  EXPECT_DOUBLE_EQ(f.slope, 2.0);
  EXPECT_DOUBLE_EQ(f.intercept, 1.0);
  EXPECT_DOUBLE_EQ(f.r2, 1.0);
  EXPECT_LT(linear_fit({1, 2, 3, 4}, {1, 3, 1, 3}).r2, 0.5);
  EXPECT_EQ(code_of([] { linear_fit({1}, {1}); }), ErrorCode::kInvalidConfig);
}

TEST(SweepTest, DoublingRowsDoublesTriples) {
  ExperimentConfig c = small_config(ProtocolMode::kSecretSharing, 4000);
  const json r = scale_sweep(c, {0.4, 0.8}, {ProtocolMode::kSecretSharing});
  const auto& counts = r["modes"]["ss"]["counts"];
  EXPECT_EQ(counts[0]["rows"], 1280);
  EXPECT_EQ(counts[1]["rows"], 2560);
  EXPECT_EQ(counts[0]["triples_consumed"], 2 * 20);
  EXPECT_EQ(counts[1]["triples_consumed"], 2 * counts[0]["triples_consumed"].get<int>());
  EXPECT_EQ(code_of([&] { scale_sweep(c, {0.0}, {ProtocolMode::kSecretSharing}); }), ErrorCode::kInvalidConfig);
}

TEST(SweepTest, SecretSharingSendsMoreBytesThanHomomorphic) {
  ExperimentConfig c = small_config(ProtocolMode::kSecretSharing, 800);
  c.train.key_bits = 1024;
  const json r = bandwidth_sweep(c, {1e5, 1e8});
  EXPECT_GT(r["modes"]["ss"]["bytes_per_epoch"].get<double>(), r["modes"]["he"]["bytes_per_epoch"].get<double>());
  EXPECT_TRUE(r["timing"]["ss_faster_at_max"].get<bool>());
}

TEST(SweepTest, CommunicationTimeScalesInverselyWithBandwidth) {
  ExperimentConfig c = small_config(ProtocolMode::kSecretSharing, 1000);
  PreparedData d = prepare_data(c.data);
  TrainConfig t = c.train;
  t.epochs = 1;
  t.net.input_a = d.columns_a.size();
  t.net.input_b = d.columns_b.size();
  const SessionResult r = run_session(t, d.session);
  NetworkConfig slow, fast;
  slow.bandwidth_bps = 1e5;
  fast.bandwidth_bps = 1e7;
  const double ts = replay(r.trace, slow).makespan();
  const double tf = replay(r.trace, fast).makespan();
  EXPECT_NEAR(ts / tf, 100.0, 1e-9 * 100.0);
}

}  // namespace
}  // namespace spnn
