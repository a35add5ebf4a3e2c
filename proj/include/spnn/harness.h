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
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "spnn/neural.h"
#include "spnn/protocol.h"

namespace spnn {

// -- ingestion ----------------------------------------------------------------

struct Dataset {
  Tensor features;                   // n x d
  std::vector<int> labels;           // n, values in {0, 1}
  std::vector<std::string> columns;  // d feature names (one-hot columns as "col=value")
  std::vector<double> mean;          // per-column standardization (empty if raw)
  std::vector<double> stddev;
  std::size_t dropped_rows = 0;      // rows skipped for missing values

  std::size_t rows() const { return features.rows(); }
  std::size_t column_index(std::string_view name) const;  // throws kInvalidSpec
};

// Parses CSV text with a header row. Numeric columns are kept, other columns
// are one-hot encoded (categories in sorted order), rows with an empty or NA
// field are dropped and counted, then every feature column is standardized.
Dataset parse_csv(std::string_view text, std::string_view label_column);
Dataset load_csv(const std::string& path, std::string_view label_column);
void write_csv(const Dataset& ds, const std::string& path, std::string_view label_column = "label");

// Centres and scales each column (population std; constant columns only centred).
void standardize(Dataset& ds);

struct VerticalSplit {
  Tensor a;
  Tensor b;
  std::vector<int> labels;  // stays with client A
  std::vector<std::string> columns_a;
  std::vector<std::string> columns_b;
};

// Columns named in `columns_a` go to client A (dataset order), the rest to B.
// Empty list: the first floor(d/2) columns go to A.
VerticalSplit split_vertical(const Dataset& ds, const std::vector<std::string>& columns_a = {});

struct TrainTestSplit {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> train_rows;  // indices into the input
  std::vector<std::size_t> test_rows;
};

// floor(fraction * n) training rows after a seeded shuffle.
std::size_t train_row_count(std::size_t rows, double fraction);
TrainTestSplit split_train_test(const Dataset& ds, double fraction, std::uint64_t seed);
Dataset select_rows(const Dataset& ds, const std::vector<std::size_t>& rows);

// -- synthetic data ---------------------------------------------------------------

struct SynthConfig {
  std::size_t rows = 20000;
  std::size_t features_a = 14;  // includes the property column
  std::size_t features_b = 14;
  std::uint64_t seed = 1;
  double separation = 0.25;  // std of the blob centres
  std::string property_column = "amount";
};

// Two Gaussian blobs per class over all features, plus a property column on
// client A's side that is correlated with A's first feature. Not standardized.
Dataset gen_synth(const SynthConfig& cfg);

// -- experiments --------------------------------------------------------------------

struct DataSource {
  std::string csv_path;  // empty: synthetic
  std::string label_column = "label";
  SynthConfig synth;
  std::vector<std::string> columns_a;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 1;
  std::size_t max_rows = 0;  // 0: all rows
};

struct ExperimentConfig {
  TrainConfig train;  // net.input_a / input_b are filled from the split
  DataSource data;
  std::vector<std::uint64_t> seeds{1};
  bool baseline = true;
  NetworkConfig network;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

struct PreparedData {
  SessionData session;
  std::vector<std::string> columns_a;
  std::vector<std::string> columns_b;
  std::size_t rows = 0;
  std::size_t dropped_rows = 0;
  Dataset train;  // full-width rows, for attacks
  Dataset test;
};

PreparedData prepare_data(const DataSource& src);
SessionData to_session(const Dataset& train, const Dataset& test, const std::vector<std::string>& columns_a);

// Trains with every seed, plus the plaintext baseline on identical splits.
nlohmann::json run_experiment(const ExperimentConfig& cfg);

// SS and HE epoch times under each bandwidth (bits/s), replayed from one
// recorded run per mode with measured compute.
nlohmann::json bandwidth_sweep(const ExperimentConfig& cfg, const std::vector<double>& bandwidths);

// Epoch time against training-set fraction; linear fit per mode.
nlohmann::json scale_sweep(const ExperimentConfig& cfg, const std::vector<double>& fractions,
                           const std::vector<ProtocolMode>& modes);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};
LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y);

// -- property attack ----------------------------------------------------------------

struct AttackSetup {
  double shadow_fraction = 0.5;
  double attack_train_fraction = 0.25;
  double attack_test_fraction = 0.25;
  std::string property_column = "amount";
  std::uint64_t seed = 1;

  void validate() const;
};

// Median split of a column: 1 above the median, 0 otherwise.
std::vector<int> binarize_property(const Dataset& ds, std::string_view column);

struct LogisticModel {
  std::vector<double> mean, scale;  // input standardization
  std::vector<double> weights;
  double bias = 0.0;

  std::vector<double> predict(const Tensor& x) const;
};

// Full-batch gradient descent on the mean log loss.
LogisticModel fit_logistic(const Tensor& x, const std::vector<int>& y, double lr = 0.1,
                           std::size_t epochs = 500);

struct AttackResult {
  double task_auc = 0.0;
  double attack_auc = 0.0;
  double shuffled_attack_auc = 0.0;
};

// Shadow training: the attacker trains an imitation model on the shadow split
// and a logistic-regression attack on its first hidden layer, then applies it
// to the hidden layer the server observes for the attack-test rows.
AttackResult leakage_attack(const TrainConfig& cfg, const Dataset& data, const std::vector<std::string>& columns_a,
                            const AttackSetup& setup);

// Runs the attack for every seed under the configured optimizer.
nlohmann::json run_attack(const ExperimentConfig& cfg, const AttackSetup& setup);

// SHA-256 over the report with every "timing" member removed.
std::string report_hash(const nlohmann::json& report);

}  // namespace spnn
