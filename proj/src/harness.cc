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

#include <sodium.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "spnn/error.h"

namespace spnn {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kSplitTag = 0x53504c54;
constexpr std::uint64_t kAttackTag = 0x41545441;
constexpr std::uint64_t kShadowNoiseTag = 0x53484457;

std::vector<std::string> split_csv_line(std::string_view line, std::size_t row) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) {
    throw Error(ErrorCode::kParseError, "row " + std::to_string(row) + ": unterminated quote");
  }
  out.push_back(std::move(cur));
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

bool is_missing(const std::string& v) {
  return v.empty() || v == "NA" || v == "na" || v == "NaN" || v == "nan" || v == "?";
}

std::optional<double> parse_number(const std::string& v) {
  double out = 0;
  const char* begin = v.data();
  const char* end = v.data() + v.size();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out)) return std::nullopt;
  return out;
}

std::string link_name(const LinkKey& k) {
  return std::string(role_name(k.first)) + "->" + std::string(role_name(k.second));
}

json links_json(const std::map<LinkKey, LinkStats>& links) {
  json out = json::object();
  for (const auto& [k, v] : links) out[link_name(k)] = v.bytes_sent;
  return out;
}

json epochs_json(const std::vector<EpochMetrics>& epochs) {
  json out = json::array();
  for (const auto& e : epochs) {
    out.push_back({{"epoch", e.epoch},
                   {"steps", e.steps},
                   {"train_loss", e.train_loss},
                   {"test_loss", e.test_loss ? json(*e.test_loss) : json(nullptr)},
                   {"test_auc", e.test_auc ? json(*e.test_auc) : json(nullptr)}});
  }
  return out;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
}

TrainConfig seeded(const TrainConfig& base, std::uint64_t seed) {
  TrainConfig c = base;
  c.seed = seed;
  c.optimizer.noise_seed = mix_seed(base.optimizer.noise_seed, seed);
  return c;
}

void fit_inputs(TrainConfig& cfg, const PreparedData& d) {
  cfg.net.input_a = d.columns_a.size();
  cfg.net.input_b = d.columns_b.size();
}

void strip_timing(json& j) {
  if (j.is_object()) {
    j.erase("timing");
    j.erase("report_hash");
    for (auto& [k, v] : j.items()) strip_timing(v);
  } else if (j.is_array()) {
    for (auto& v : j) strip_timing(v);
  }
}

double positive_rate(const std::vector<int>& y) {
  return y.empty() ? 0.0 : static_cast<double>(std::count(y.begin(), y.end(), 1)) / static_cast<double>(y.size());
}

}  // namespace

// -- ingestion ----------------------------------------------------------------------

std::size_t Dataset::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  throw Error(ErrorCode::kInvalidSpec, "no column named '" + std::string(name) + "'");
}

Dataset parse_csv(std::string_view text, std::string_view label_column) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl + 1;
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw Error(ErrorCode::kParseError, "row 1: missing header");

  std::vector<std::string> header = split_csv_line(lines[0], 1);
  for (auto& h : header) h = trim(h);
  std::size_t label_col = header.size();
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == label_column) label_col = c;
  }
  if (label_col == header.size()) {
    throw Error(ErrorCode::kParseError, "row 1: no label column '" + std::string(label_column) + "'");
  }

  Dataset ds;
  std::vector<std::vector<std::string>> rows;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    if (trim(lines[r]).empty()) continue;
    auto fields = split_csv_line(lines[r], r + 1);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::kParseError, "row " + std::to_string(r + 1) + ": expected " +
                                              std::to_string(header.size()) + " fields, found " +
                                              std::to_string(fields.size()));
    }
    bool missing = false;
    for (auto& f : fields) {
      f = trim(f);
      missing |= is_missing(f);
    }
    if (missing) {
      ++ds.dropped_rows;
      continue;
    }
    const auto label = parse_number(fields[label_col]);
    if (!label || (*label != 0.0 && *label != 1.0)) {
      throw Error(ErrorCode::kParseError, "row " + std::to_string(r + 1) + ", column " +
                                              std::to_string(label_col + 1) + ": label '" +
                                              fields[label_col] + "' is not 0 or 1");
    }
    ds.labels.push_back(static_cast<int>(*label));
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw Error(ErrorCode::kEmptyDataset, "no complete data rows");

  struct ColumnPlan {
    std::size_t source;
    bool numeric;
    std::vector<std::string> categories;
  };
  std::vector<ColumnPlan> plan;
  std::size_t width = 0;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == label_col) continue;
    ColumnPlan p{c, true, {}};
    for (const auto& row : rows) {
      if (!parse_number(row[c])) {
        p.numeric = false;
        break;
      }
    }
    if (!p.numeric) {
      std::set<std::string> cats;
      for (const auto& row : rows) cats.insert(row[c]);
      p.categories.assign(cats.begin(), cats.end());
      for (const auto& cat : p.categories) ds.columns.push_back(header[c] + "=" + cat);
      width += p.categories.size();
    } else {
      ds.columns.push_back(header[c]);
      ++width;
    }
    plan.push_back(std::move(p));
  }
  ds.features = Tensor(rows.size(), width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::size_t out = 0;
    for (const auto& p : plan) {
      if (p.numeric) {
        ds.features.at(r, out++) = *parse_number(rows[r][p.source]);
      } else {
        const auto it = std::lower_bound(p.categories.begin(), p.categories.end(), rows[r][p.source]);
        ds.features.at(r, out + static_cast<std::size_t>(it - p.categories.begin())) = 1.0;
        out += p.categories.size();
      }
    }
  }
  standardize(ds);
  return ds;
}

Dataset load_csv(const std::string& path, std::string_view label_column) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), label_column);
}

void write_csv(const Dataset& ds, const std::string& path, std::string_view label_column) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  for (const auto& c : ds.columns) out << c << ',';
  out << label_column << '\n';
  char buf[32];
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (std::size_t c = 0; c < ds.features.cols(); ++c) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, ds.features.at(r, c));
      out.write(buf, end - buf);
      out << ',';
    }
    out << ds.labels[r] << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
}

void standardize(Dataset& ds) {
  const std::size_t n = ds.rows(), d = ds.features.cols();
  ds.mean.assign(d, 0.0);
  ds.stddev.assign(d, 1.0);
  if (n == 0) return;
  for (std::size_t c = 0; c < d; ++c) {
    double m = 0;
    for (std::size_t r = 0; r < n; ++r) m += ds.features.at(r, c);
    m /= static_cast<double>(n);
    double v = 0;
    for (std::size_t r = 0; r < n; ++r) v += (ds.features.at(r, c) - m) * (ds.features.at(r, c) - m);
    const double sd = std::sqrt(v / static_cast<double>(n));
    const double scale = sd > 0.0 ? sd : 1.0;
    for (std::size_t r = 0; r < n; ++r) ds.features.at(r, c) = (ds.features.at(r, c) - m) / scale;
    ds.mean[c] = m;
    ds.stddev[c] = scale;
  }
}

VerticalSplit split_vertical(const Dataset& ds, const std::vector<std::string>& columns_a) {
  const std::size_t d = ds.features.cols();
  std::vector<bool> to_a(d, false);
  if (columns_a.empty()) {
    for (std::size_t c = 0; c < d / 2; ++c) to_a[c] = true;
  } else {
    for (const auto& name : columns_a) to_a[ds.column_index(name)] = true;
  }
  std::vector<std::size_t> ia, ib;
  for (std::size_t c = 0; c < d; ++c) (to_a[c] ? ia : ib).push_back(c);
  if (ia.empty() || ib.empty()) {
    throw Error(ErrorCode::kInvalidSpec, "each client needs at least one column");
  }
  VerticalSplit out;
  out.a = Tensor(ds.rows(), ia.size());
  out.b = Tensor(ds.rows(), ib.size());
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (std::size_t j = 0; j < ia.size(); ++j) out.a.at(r, j) = ds.features.at(r, ia[j]);
    for (std::size_t j = 0; j < ib.size(); ++j) out.b.at(r, j) = ds.features.at(r, ib[j]);
  }
  for (auto c : ia) out.columns_a.push_back(ds.columns[c]);
  for (auto c : ib) out.columns_b.push_back(ds.columns[c]);
  out.labels = ds.labels;
  return out;
}

std::size_t train_row_count(std::size_t rows, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidSpec, "train fraction must lie in (0, 1)");
  }
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(rows)));
}

Dataset select_rows(const Dataset& ds, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.features = gather_rows(ds.features, rows);
  out.labels.reserve(rows.size());
  for (auto r : rows) out.labels.push_back(ds.labels[r]);
  out.columns = ds.columns;
  out.mean = ds.mean;
  out.stddev = ds.stddev;
  return out;
}

TrainTestSplit split_train_test(const Dataset& ds, double fraction, std::uint64_t seed) {
  const std::size_t n = ds.rows();
  const std::size_t n_train = train_row_count(n, fraction);
  const auto order = epoch_permutation(mix_seed(seed, kSplitTag), 0, n);
  TrainTestSplit out;
  out.train_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  out.train = select_rows(ds, out.train_rows);
  out.test = select_rows(ds, out.test_rows);
  return out;
}

// -- synthetic ----------------------------------------------------------------------

Dataset gen_synth(const SynthConfig& cfg) {
  if (cfg.features_a < 2 || cfg.features_b < 1) {
    throw Error(ErrorCode::kInvalidSpec, "synthetic data needs >= 2 features for A and >= 1 for B");
  }
  if (cfg.rows == 0) throw Error(ErrorCode::kEmptyDataset, "zero rows requested");
  const std::size_t d = cfg.features_a + cfg.features_b;
  const std::size_t prop = cfg.features_a - 1;
  Prg rng(cfg.seed);
  Tensor centres(4, d);  // class c, blob k -> row 2c + k
  for (auto& v : centres.data()) v = cfg.separation * rng.normal();
  Dataset ds;
  ds.features = Tensor(cfg.rows, d);
  ds.labels.resize(cfg.rows);
  for (std::size_t r = 0; r < cfg.rows; ++r) {
    const int y = static_cast<int>(rng.uniform(2));
    const std::size_t blob = 2 * static_cast<std::size_t>(y) + rng.uniform(2);
    ds.labels[r] = y;
    for (std::size_t c = 0; c < d; ++c) ds.features.at(r, c) = centres.at(blob, c) + rng.normal();
    ds.features.at(r, prop) = 0.8 * ds.features.at(r, 0) + 0.6 * rng.normal();
  }
  for (std::size_t c = 0; c < d; ++c) {
    if (c == prop) {
      ds.columns.push_back(cfg.property_column);
    } else if (c < cfg.features_a) {
      ds.columns.push_back("a" + std::to_string(c));
    } else {
      ds.columns.push_back("b" + std::to_string(c - cfg.features_a));
    }
  }
  return ds;
}

// -- experiment config --------------------------------------------------------------

json ExperimentConfig::to_json() const {
  return json{{"train", json::parse(train.to_json())},
              {"data",
               {{"csv_path", data.csv_path},
                {"label_column", data.label_column},
                {"synth",
                 {{"rows", data.synth.rows},
                  {"features_a", data.synth.features_a},
                  {"features_b", data.synth.features_b},
                  {"seed", data.synth.seed},
                  {"separation", data.synth.separation},
                  {"property_column", data.synth.property_column}}},
                {"columns_a", data.columns_a},
                {"train_fraction", data.train_fraction},
                {"split_seed", data.split_seed},
                {"max_rows", data.max_rows}}},
              {"seeds", seeds},
              {"baseline", baseline},
              {"network", {{"bandwidth_bps", network.bandwidth_bps}, {"latency_s", network.latency_s}}}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  try {
    ExperimentConfig c;
    const json& t = j.contains("train") ? j.at("train") : j;
    c.train = TrainConfig::from_json(t.dump());
    if (t.contains("mode")) c.train.mode = parse_mode(t.at("mode").get<std::string>());
    if (t.contains("lr")) c.train.optimizer.learning_rate = t.at("lr").get<double>();
    if (t.contains("batch_size")) c.train.optimizer.batch_size = t.at("batch_size").get<std::size_t>();
    if (t.contains("T")) c.train.epochs = t.at("T").get<std::size_t>();
    if (t.contains("hidden")) c.train.net.hidden = t.at("hidden").get<std::vector<std::size_t>>();
    if (t.contains("activation")) {
      c.train.net.activations.assign(c.train.net.hidden.size(),
                                     parse_activation(t.at("activation").get<std::string>()));
    }
    if (c.train.net.activations.empty()) {
      c.train.net.activations.assign(c.train.net.hidden.size(), Activation::kSigmoid);
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.data.csv_path = d.value("csv_path", c.data.csv_path);
      c.data.label_column = d.value("label_column", c.data.label_column);
      c.data.columns_a = d.value("columns_a", c.data.columns_a);
      c.data.train_fraction = d.value("train_fraction", c.data.train_fraction);
      c.data.split_seed = d.value("split_seed", c.data.split_seed);
      c.data.max_rows = d.value("max_rows", c.data.max_rows);
      if (d.contains("synth")) {
        const auto& s = d.at("synth");
        c.data.synth.rows = s.value("rows", c.data.synth.rows);
        c.data.synth.features_a = s.value("features_a", c.data.synth.features_a);
        c.data.synth.features_b = s.value("features_b", c.data.synth.features_b);
        c.data.synth.seed = s.value("seed", c.data.synth.seed);
        c.data.synth.separation = s.value("separation", c.data.synth.separation);
        c.data.synth.property_column = s.value("property_column", c.data.synth.property_column);
      }
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("repetitions")) {
      c.seeds.clear();
      for (std::uint64_t s = 1; s <= j.at("repetitions").get<std::uint64_t>(); ++s) c.seeds.push_back(s);
    }
    if (c.seeds.empty()) throw Error(ErrorCode::kInvalidConfig, "at least one seed required");
    c.baseline = j.value("baseline", c.baseline);
    if (j.contains("network")) {
      const auto& n = j.at("network");
      if (n.contains("bandwidth")) {
        const auto& b = n.at("bandwidth");
        c.network.bandwidth_bps = b.is_string() ? parse_bandwidth(b.get<std::string>()) : b.get<double>();
      }
      c.network.bandwidth_bps = n.value("bandwidth_bps", c.network.bandwidth_bps);
      c.network.latency_s = n.value("latency_s", c.network.latency_s);
      if (n.contains("latency_ms")) c.network.latency_s = n.at("latency_ms").get<double>() / 1000.0;
    }
    c.network.validate();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("experiment config: ") + e.what());
  }
}

// -- data preparation ----------------------------------------------------------------

SessionData to_session(const Dataset& train, const Dataset& test, const std::vector<std::string>& columns_a) {
  const VerticalSplit tr = split_vertical(train, columns_a);
  SessionData out;
  out.a.train = tr.a;
  out.b.train = tr.b;
  out.labels.train = tr.labels;
  if (test.rows() > 0) {
    const VerticalSplit te = split_vertical(test, columns_a);
    out.a.test = te.a;
    out.b.test = te.b;
    out.labels.test = te.labels;
  } else {
    out.a.test = Tensor(0, tr.a.cols());
    out.b.test = Tensor(0, tr.b.cols());
  }
  return out;
}

namespace {

Dataset load_source(const DataSource& src) {
  Dataset ds;
  if (src.csv_path.empty()) {
    ds = gen_synth(src.synth);
    standardize(ds);
  } else {
    ds = load_csv(src.csv_path, src.label_column);
  }
  if (src.max_rows > 0 && src.max_rows < ds.rows()) {
    std::vector<std::size_t> rows(src.max_rows);
    std::iota(rows.begin(), rows.end(), 0);
    const std::size_t dropped = ds.dropped_rows;
    ds = select_rows(ds, rows);
    ds.dropped_rows = dropped;
  }
  return ds;
}

}  // namespace

PreparedData prepare_data(const DataSource& src) {
  const Dataset ds = load_source(src);
  TrainTestSplit split = split_train_test(ds, src.train_fraction, src.split_seed);
  PreparedData out;
  out.rows = ds.rows();
  out.dropped_rows = ds.dropped_rows;
  out.session = to_session(split.train, split.test, src.columns_a);
  const VerticalSplit v = split_vertical(split.train, src.columns_a);
  out.columns_a = v.columns_a;
  out.columns_b = v.columns_b;
  out.train = std::move(split.train);
  out.test = std::move(split.test);
  return out;
}

// -- experiments ----------------------------------------------------------------------

json run_experiment(const ExperimentConfig& cfg) {
  const PreparedData data = prepare_data(cfg.data);
  json runs = json::array();
  std::vector<double> aucs, base_aucs;
  for (auto seed : cfg.seeds) {
    TrainConfig train = seeded(cfg.train, seed);
    fit_inputs(train, data);
    const SessionResult r = run_session(train, data.session, {cfg.network, false, 0});
    json run{{"seed", seed},
             {"epochs", epochs_json(r.epochs)},
             {"early_stopped", r.early_stopped},
             {"bytes",
              {{"links", links_json(r.links)},
               {"total", total_bytes(r.links, true)},
               {"excluding_dealer", total_bytes(r.links, false)}}},
             {"triples_consumed", r.triples_consumed}};
    const auto auc_final = r.epochs.empty() ? std::nullopt : r.epochs.back().test_auc;
    run["final_test_auc"] = auc_final ? json(*auc_final) : json(nullptr);
    if (auc_final) aucs.push_back(*auc_final);
    json timing{{"wall_seconds", r.wall_seconds}, {"simulated_seconds", r.timing.makespan()}};
    if (cfg.baseline) {
      const auto t0 = std::chrono::steady_clock::now();
      const ReferenceResult ref = train_reference(train, data.session);
      timing["baseline_wall_seconds"] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const auto b = ref.epochs.empty() ? std::nullopt : ref.epochs.back().test_auc;
      run["baseline"] = {{"epochs", epochs_json(ref.epochs)},
                         {"final_test_auc", b ? json(*b) : json(nullptr)}};
      if (b) base_aucs.push_back(*b);
    }
    run["timing"] = timing;
    runs.push_back(std::move(run));
  }
  json report{{"config", cfg.to_json()},
              {"dataset",
               {{"rows", data.rows},
                {"dropped_rows", data.dropped_rows},
                {"train_rows", data.train.rows()},
                {"test_rows", data.test.rows()},
                {"columns_a", data.columns_a},
                {"columns_b", data.columns_b},
                {"train_positive_rate", positive_rate(data.session.labels.train)}}},
              {"runs", runs}};
  json summary;
  const auto [m, s] = mean_std(aucs);
  summary["auc_mean"] = m;
  summary["auc_std"] = s;
  if (cfg.baseline) {
    const auto [bm, bs] = mean_std(base_aucs);
    summary["baseline_auc_mean"] = bm;
    summary["baseline_auc_std"] = bs;
    summary["auc_gap"] = std::abs(m - bm);
  }
  report["summary"] = summary;
  report["report_hash"] = report_hash(report);
  return report;
}

namespace {

struct EpochRun {
  SessionResult result;
  std::uint64_t epoch_bytes = 0;   // epoch-phase frames, dealer excluded
  std::uint64_t dealer_bytes = 0;  // epoch-phase frames from the coordinator
};

EpochRun timed_epoch(TrainConfig train, const SessionData& data, const NetworkConfig& net) {
  train.epochs = 1;
  train.evaluate = false;
  train.early_stop_loss = 0.0;
  EpochRun out;
  SessionHooks hooks;
  hooks.on_send = [&](Role from, Role, const Frame& f) {
    if (protocol_step(f) < kFirstEpochStep) return;
    (from == Role::kCoordinator ? out.dealer_bytes : out.epoch_bytes) += frame_wire_bytes(f);
  };
  out.result = run_session(train, data, {net, true, 0}, &hooks);
  return out;
}

SessionData head_rows(const SessionData& d, std::size_t rows) {
  std::vector<std::size_t> idx(rows);
  std::iota(idx.begin(), idx.end(), 0);
  SessionData out;
  out.a.train = gather_rows(d.a.train, idx);
  out.b.train = gather_rows(d.b.train, idx);
  out.a.test = Tensor(0, d.a.train.cols());
  out.b.test = Tensor(0, d.b.train.cols());
  out.labels.train.assign(d.labels.train.begin(), d.labels.train.begin() + static_cast<std::ptrdiff_t>(rows));
  return out;
}

}  // namespace

json bandwidth_sweep(const ExperimentConfig& cfg, const std::vector<double>& bandwidths) {
  if (bandwidths.empty()) throw Error(ErrorCode::kInvalidConfig, "no bandwidths given");
  const PreparedData data = prepare_data(cfg.data);
  std::vector<double> bws = bandwidths;
  std::sort(bws.begin(), bws.end());
  json modes = json::object();
  std::map<ProtocolMode, std::vector<double>> times;
  for (auto mode : {ProtocolMode::kSecretSharing, ProtocolMode::kHomomorphic}) {
    TrainConfig train = seeded(cfg.train, cfg.seeds.front());
    train.mode = mode;
    fit_inputs(train, data);
    const EpochRun run = timed_epoch(train, data.session, cfg.network);
    json points = json::array();
    for (double bw : bws) {
      NetworkConfig net = cfg.network;
      net.bandwidth_bps = bw;
      const TimingResult t = replay(run.result.trace, net);
      const double secs = epoch_train_seconds(t, 0);
      times[mode].push_back(secs);
      points.push_back({{"bandwidth_bps", bw}, {"epoch_seconds", secs}});
    }
    double compute = 0;
    for (const auto& ev : run.result.trace.events) {
      for (const auto& e : ev) {
        if (e.kind == TraceEvent::Kind::kCompute) compute += e.seconds;
      }
    }
    modes[std::string(mode_name(mode))] = {{"bytes_per_epoch", run.epoch_bytes},
                                           {"dealer_bytes_per_epoch", run.dealer_bytes},
                                           {"steps", batch_count(data.session.a.train.rows(), train.optimizer.batch_size)},
                                           {"timing", {{"points", points}, {"compute_seconds", compute}}}};
  }
  // Crossover: first adjacent pair where the faster mode flips, interpolated in
  // log-bandwidth.
  json crossover = nullptr;
  const auto& ss = times[ProtocolMode::kSecretSharing];
  const auto& he = times[ProtocolMode::kHomomorphic];
  for (std::size_t i = 0; i + 1 < bws.size(); ++i) {
    const double d0 = ss[i] - he[i], d1 = ss[i + 1] - he[i + 1];
    if (d0 >= 0 && d1 < 0) {
      const double l0 = std::log(bws[i]), l1 = std::log(bws[i + 1]);
      const double at = d0 == d1 ? l0 : l0 + (l1 - l0) * d0 / (d0 - d1);
      crossover = {{"bandwidth_bps", std::exp(at)}, {"bracket", {bws[i], bws[i + 1]}}};
      break;
    }
  }
  json report{{"config", cfg.to_json()},
              {"rows", data.session.a.train.rows()},
              {"modes", modes},
              {"timing", {{"crossover", crossover},
                          {"ss_faster_at_max", ss.back() < he.back()},
                          {"he_faster_or_equal_at_min", he.front() <= ss.front()}}}};
  report["report_hash"] = report_hash(report);
  return report;
}

LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error(ErrorCode::kInvalidConfig, "linear fit needs two or more paired points");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0) throw Error(ErrorCode::kInvalidConfig, "linear fit over a single x value");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.intercept + f.slope * x[i]);
    res += e * e;
  }
  f.r2 = syy > 0 ? 1.0 - res / syy : (res == 0 ? 1.0 : 0.0);
  return f;
}

json scale_sweep(const ExperimentConfig& cfg, const std::vector<double>& fractions,
                 const std::vector<ProtocolMode>& modes) {
  if (fractions.empty()) throw Error(ErrorCode::kInvalidConfig, "no fractions given");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw Error(ErrorCode::kInvalidConfig, "fractions must lie in (0, 1]");
  }
  const PreparedData data = prepare_data(cfg.data);
  const std::size_t n = data.session.a.train.rows();
  json out = json::object();
  for (auto mode : modes) {
    TrainConfig train = seeded(cfg.train, cfg.seeds.front());
    train.mode = mode;
    fit_inputs(train, data);
    std::vector<double> xs, ys;
    json points = json::array();
    json triples = json::array();
    for (double f : fractions) {
      const auto rows = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(f * static_cast<double>(n))));
      const EpochRun run = timed_epoch(train, head_rows(data.session, rows), cfg.network);
      const double secs = epoch_train_seconds(run.result.timing, 0);
      xs.push_back(static_cast<double>(rows));
      ys.push_back(secs);
      triples.push_back({{"fraction", f}, {"rows", rows}, {"triples_consumed", run.result.triples_consumed},
                         {"bytes", run.epoch_bytes}});
      points.push_back({{"fraction", f}, {"rows", rows}, {"epoch_seconds", secs}});
    }
    const LinearFit fit = linear_fit(xs, ys);
    out[std::string(mode_name(mode))] = {
        {"counts", triples},
        {"timing", {{"points", points}, {"slope", fit.slope}, {"intercept", fit.intercept}, {"r2", fit.r2}}}};
  }
  json report{{"config", cfg.to_json()}, {"train_rows", n}, {"modes", out}};
  report["report_hash"] = report_hash(report);
  return report;
}

// -- attack -----------------------------------------------------------------------

void AttackSetup::validate() const {
  const double fr[] = {shadow_fraction, attack_train_fraction, attack_test_fraction};
  for (double f : fr) {
    if (!(f > 0.0 && f < 1.0)) throw Error(ErrorCode::kInvalidSpec, "attack fractions must lie in (0, 1)");
  }
  if (std::abs(shadow_fraction + attack_train_fraction + attack_test_fraction - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidSpec, "attack fractions must sum to 1");
  }
}

std::vector<int> binarize_property(const Dataset& ds, std::string_view column) {
  const std::size_t c = ds.column_index(column);
  std::vector<double> v(ds.rows());
  for (std::size_t r = 0; r < ds.rows(); ++r) v[r] = ds.features.at(r, c);
  if (v.empty()) throw Error(ErrorCode::kEmptyDataset, "no rows");
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) out[r] = v[r] > median ? 1 : 0;
  const auto ones = std::count(out.begin(), out.end(), 1);
  if (ones == 0 || ones == static_cast<std::ptrdiff_t>(n)) {
    throw Error(ErrorCode::kDegenerateProperty, "column '" + std::string(column) + "' has no spread around its median");
  }
  return out;
}

std::vector<double> LogisticModel::predict(const Tensor& x) const {
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double z = bias;
    for (std::size_t c = 0; c < x.cols(); ++c) z += weights[c] * (x.at(r, c) - mean[c]) / scale[c];
    out[r] = sigmoid(z);
  }
  return out;
}

LogisticModel fit_logistic(const Tensor& x, const std::vector<int>& y, double lr, std::size_t epochs) {
  if (x.rows() != y.size() || x.rows() == 0) {
    throw Error(ErrorCode::kRowCountMismatch, "logistic regression needs one label per row");
  }
  const std::size_t n = x.rows(), d = x.cols();
  LogisticModel m;
  m.mean.assign(d, 0.0);
  m.scale.assign(d, 1.0);
  for (std::size_t c = 0; c < d; ++c) {
    double s = 0, ss = 0;
    for (std::size_t r = 0; r < n; ++r) s += x.at(r, c);
    const double mu = s / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) ss += (x.at(r, c) - mu) * (x.at(r, c) - mu);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    m.mean[c] = mu;
    m.scale[c] = sd > 0 ? sd : 1.0;
  }
  Tensor z(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) z.at(r, c) = (x.at(r, c) - m.mean[c]) / m.scale[c];
  m.weights.assign(d, 0.0);
  std::vector<double> grad(d);
  for (std::size_t e = 0; e < epochs; ++e) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double gb = 0;
    for (std::size_t r = 0; r < n; ++r) {
      double s = m.bias;
      for (std::size_t c = 0; c < d; ++c) s += m.weights[c] * z.at(r, c);
      const double err = sigmoid(s) - y[r];
      for (std::size_t c = 0; c < d; ++c) grad[c] += err * z.at(r, c);
      gb += err;
    }
    for (std::size_t c = 0; c < d; ++c) m.weights[c] -= lr * grad[c] / static_cast<double>(n);
    m.bias -= lr * gb / static_cast<double>(n);
  }
  return m;
}

AttackResult leakage_attack(const TrainConfig& cfg, const Dataset& data, const std::vector<std::string>& columns_a,
                            const AttackSetup& setup) {
  setup.validate();
  const std::vector<int> property = binarize_property(data, setup.property_column);
  const std::size_t n = data.rows();
  const auto order = epoch_permutation(mix_seed(setup.seed, kAttackTag), 0, n);
  const auto n_shadow = static_cast<std::size_t>(std::floor(setup.shadow_fraction * static_cast<double>(n)));
  const auto n_train = static_cast<std::size_t>(std::floor(setup.attack_train_fraction * static_cast<double>(n)));
  if (n_shadow == 0 || n_train == 0 || n_shadow + n_train >= n) {
    throw Error(ErrorCode::kEmptyDataset, "too few rows for the attack splits");
  }
  auto range = [&](std::size_t b, std::size_t e) {
    return std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(b),
                                    order.begin() + static_cast<std::ptrdiff_t>(e));
  };
  const auto shadow_rows = range(0, n_shadow);
  const auto train_rows = range(n_shadow, n_shadow + n_train);
  const auto test_rows = range(n_shadow + n_train, n);
  const Dataset shadow = select_rows(data, shadow_rows);
  const Dataset atrain = select_rows(data, train_rows);
  const Dataset atest = select_rows(data, test_rows);

  // Victim: trains on the attack-train rows; the server's view of h1 for the
  // attack-test rows comes from the final evaluation pass.
  TrainConfig victim = cfg;
  victim.evaluate = true;
  victim.early_stop_loss = 0.0;
  const SessionData vdata = to_session(atrain, atest, columns_a);
  victim.net.input_a = vdata.a.train.cols();
  victim.net.input_b = vdata.b.train.cols();
  std::map<std::size_t, std::vector<Tensor>> seen;
  SessionHooks hooks;
  hooks.on_server_h1 = [&](const BatchInfo& info, const Tensor&, const Tensor& post) {
    if (!info.train) seen[info.epoch].push_back(post);
  };
  const SessionResult r = run_session(victim, vdata, {}, &hooks);
  const auto& batches = seen.rbegin()->second;
  Tensor target_h1 = batches.front();
  for (std::size_t i = 1; i < batches.size(); ++i) target_h1 = vconcat(target_h1, batches[i]);

  // Shadow: same architecture, initialisation and optimizer; the attacker
  // cannot reproduce the victim's Langevin noise.
  TrainConfig imitation = victim;
  imitation.optimizer.noise_seed = mix_seed(cfg.optimizer.noise_seed, kShadowNoiseTag);
  imitation.evaluate = false;
  const Dataset no_rows = select_rows(data, {});
  const SessionData sdata = to_session(shadow, no_rows,
                                       columns_a);
  const ReferenceResult shadow_model = train_reference(imitation, sdata);
  const Mlp first({shadow_model.model.layers()[0]});
  const SessionData adata = to_session(atrain, no_rows,
                                       columns_a);
  const Tensor shadow_h1 = first.forward(hconcat(adata.a.train, adata.b.train));

  std::vector<int> y_train(train_rows.size()), y_test(test_rows.size());
  for (std::size_t i = 0; i < train_rows.size(); ++i) y_train[i] = property[train_rows[i]];
  for (std::size_t i = 0; i < test_rows.size(); ++i) y_test[i] = property[test_rows[i]];

  AttackResult out;
  out.task_auc = r.epochs.back().test_auc.value_or(0.5);
  out.attack_auc = auc(fit_logistic(shadow_h1, y_train).predict(target_h1), y_test);
  // Null control: property labels permuted over all rows before the split,
  // so they are independent of the features on both sides.
  std::vector<int> permuted = property;
  Prg rng(mix_seed(setup.seed, kAttackTag + 1));
  for (std::size_t i = permuted.size(); i > 1; --i) std::swap(permuted[i - 1], permuted[rng.uniform(i)]);
  std::vector<int> s_train(train_rows.size()), s_test(test_rows.size());
  for (std::size_t i = 0; i < train_rows.size(); ++i) s_train[i] = permuted[train_rows[i]];
  for (std::size_t i = 0; i < test_rows.size(); ++i) s_test[i] = permuted[test_rows[i]];
  out.shuffled_attack_auc = auc(fit_logistic(shadow_h1, s_train).predict(target_h1), s_test);
  return out;
}

json run_attack(const ExperimentConfig& cfg, const AttackSetup& setup) {
  const Dataset ds = load_source(cfg.data);
  const VerticalSplit v = split_vertical(ds, cfg.data.columns_a);
  json runs = json::array();
  std::vector<double> task, attack, shuffled;
  for (auto seed : cfg.seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    AttackSetup s = setup;
    s.seed = seed;
    const AttackResult r = leakage_attack(seeded(cfg.train, seed), ds, v.columns_a, s);
    task.push_back(r.task_auc);
    attack.push_back(r.attack_auc);
    shuffled.push_back(r.shuffled_attack_auc);
    runs.push_back({{"seed", seed},
                    {"task_auc", r.task_auc},
                    {"attack_auc", r.attack_auc},
                    {"shuffled_attack_auc", r.shuffled_attack_auc},
                    {"timing", {{"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}}}});
  }
  json report{{"config", cfg.to_json()},
              {"attack",
               {{"optimizer", std::string(optimizer_name(cfg.train.optimizer.kind))},
                {"sgld_scope", std::string(sgld_scope_name(cfg.train.sgld_scope))},
                {"property", setup.property_column},
                {"shadow_fraction", setup.shadow_fraction},
                {"attack_train_fraction", setup.attack_train_fraction},
                {"attack_test_fraction", setup.attack_test_fraction}}},
              {"runs", runs},
              {"summary",
               {{"task_auc_mean", mean_std(task).first},
                {"attack_auc_mean", mean_std(attack).first},
                {"attack_auc_std", mean_std(attack).second},
                {"shuffled_attack_auc_mean", mean_std(shuffled).first}}}};
  report["report_hash"] = report_hash(report);
  return report;
}

std::string report_hash(const json& report) {
  json copy = report;
  strip_timing(copy);
  const std::string text = copy.dump();
  unsigned char digest[crypto_hash_sha256_BYTES];
  crypto_hash_sha256(digest, reinterpret_cast<const unsigned char*>(text.data()), text.size());
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char b : digest) {
    out.push_back(hex[b >> 4]);
    out.push_back(hex[b & 15]);
  }
  return out;
}

}  // namespace spnn
