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

// Command line front end: training runs, sweeps, the property attack and the
// synthetic data generator. Reports go to stdout or --out; failures print a
// JSON error object on stderr and exit nonzero.

#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "spnn/error.h"
#include "spnn/harness.h"
#include "spnn/tcp.h"

namespace {

using nlohmann::json;
using namespace spnn;

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

ExperimentConfig load_config(const std::string& path) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kIo, "cannot open config " + path);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParseError, path + ": " + e.what());
    }
  }
  ExperimentConfig c = ExperimentConfig::from_json(j);
  if (c.train.net.hidden.empty() && !c.train.net.allow_identity_stack) {
    c.train.net.hidden = {8, 8};
    c.train.net.activations.assign(2, Activation::kSigmoid);
  }
  return c;
}

void emit(const json& report, const std::string& out) {
  const std::string text = report.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(out, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + out);
  f << text;
}

int fail(std::string_view code, const std::string& message) {
  std::cerr << json{{"error", {{"code", code}, {"message", message}}}}.dump() << "\n";
  return 1;
}

// One role of a session over TCP. Every data holder derives its own columns
// from the shared data source; the server and coordinator load nothing.
json run_tcp_role(const ExperimentConfig& cfg, Role role, const std::string& listen,
                  const std::map<Role, std::string>& addresses, std::chrono::milliseconds timeout,
                  std::optional<std::uint64_t> private_seed) {
  TrainConfig train = cfg.train;
  train.seed = cfg.seeds.front();
  std::optional<PreparedData> data;
  if (role == Role::kClientA || role == Role::kClientB || role == Role::kCoordinator) {
    data = prepare_data(cfg.data);
    train.net.input_a = data->columns_a.size();
    train.net.input_b = data->columns_b.size();
  }
  TcpEndpoint ep(role, TcpListener::bind(listen), addresses, TcpOptions{train.session_id, timeout});
  RoleOptions opts;
  opts.session_id = train.session_id;
  opts.private_seed = private_seed;
  json out{{"role", std::string(role_name(role))}, {"mode", std::string(mode_name(train.mode))}};
  switch (role) {
    case Role::kCoordinator: {
      CoordinatorRole c(ep, train, opts);
      auto task = c.run();
      task.start();
      task.take();
      json epochs = json::array();
      for (const auto& e : c.epochs()) {
        epochs.push_back({{"epoch", e.epoch}, {"steps", e.steps}, {"train_loss", e.train_loss}});
      }
      out["epochs"] = epochs;
      out["early_stopped"] = c.early_stopped();
      out["triples_dealt"] = c.triples_dealt();
      break;
    }
    case Role::kServer: {
      ServerRole s(ep, opts);
      auto task = s.run();
      task.start();
      task.take();
      break;
    }
    case Role::kClientA:
    case Role::kClientB: {
      const bool a = role == Role::kClientA;
      ClientRole cl(role, ep, a ? data->session.a : data->session.b,
                    a ? std::optional<LabelData>(data->session.labels) : std::nullopt, opts);
      auto task = cl.run();
      task.start();
      task.take();
      if (a && !cl.test_scores().empty()) {
        out["test_auc"] = auc(cl.test_scores(), data->session.labels.test);
      }
      out["triples_consumed"] = cl.triples_consumed();
      break;
    }
  }
  json links = json::object();
  for (Role peer : kAllRoles) {
    if (peer == role) continue;
    const LinkStats s = ep.stats(peer);
    links[std::string(role_name(peer))] = {{"bytes_sent", s.bytes_sent}, {"bytes_received", s.bytes_received}, {"frames", s.frames}};
  }
  out["links"] = links;
  ep.close();
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Split neural network training over vertically partitioned data"};
  app.require_subcommand(1);

  std::string config_path, out_path;

  auto* train = app.add_subcommand("train", "Train with every configured seed and report test AUC");
  std::string role_text, listen, peers_text, mode_text;
  std::optional<std::uint64_t> private_seed;
  int timeout_ms = 10000;
  train->add_option("--config", config_path, "Experiment config (JSON)");
  train->add_option("--out", out_path, "Write the report here instead of stdout");
  train->add_option("--mode", mode_text, "Override the protocol mode: ss, he or float");
  train->add_option("--role", role_text, "Run one role over TCP: coordinator, server, client_a, client_b");
  train->add_option("--listen", listen, "Address this role listens on (host:port)");
  train->add_option("--peers", peers_text,
                    "Addresses of all four roles: coordinator=h:p,server=h:p,client_a=h:p,client_b=h:p");
  train->add_option("--timeout-ms", timeout_ms, "Handshake timeout");
  train->add_option("--private-seed", private_seed, "Fixed seed for this role's private randomness");

  auto* bw = app.add_subcommand("sweep-bandwidth", "Epoch time of SS and HE modes across bandwidths");
  std::string bandwidths_text = "50K,100K,300K,1M,3M,10M,100M";
  bw->add_option("--config", config_path, "Experiment config (JSON)");
  bw->add_option("--bandwidths", bandwidths_text, "Comma separated, with K/M/G suffixes");
  bw->add_option("--out", out_path, "Write the report here instead of stdout");

  auto* scale = app.add_subcommand("sweep-scale", "Epoch time against training-set fraction");
  std::string fractions_text = "0.2,0.4,0.6,0.8,1.0", modes_text = "ss";
  scale->add_option("--config", config_path, "Experiment config (JSON)");
  scale->add_option("--fractions", fractions_text, "Comma separated fractions in (0, 1]");
  scale->add_option("--modes", modes_text, "Comma separated protocol modes");
  scale->add_option("--out", out_path, "Write the report here instead of stdout");

  auto* attack = app.add_subcommand("attack", "Shadow-model property attack on the server's hidden features");
  std::string optimizer_text, property = "amount", scope_text;
  std::optional<double> lr;
  attack->add_option("--config", config_path, "Experiment config (JSON)");
  attack->add_option("--optimizer", optimizer_text, "sgd or sgld")->check(CLI::IsMember({"sgd", "sgld"}));
  attack->add_option("--property", property, "Column whose median split is attacked");
  attack->add_option("--lr", lr, "Override the learning rate");
  attack->add_option("--sgld-scope", scope_text, "server or all");
  attack->add_option("--out", out_path, "Write the report here instead of stdout");

  auto* synth = app.add_subcommand("gen-synth", "Write the synthetic planted-property dataset as CSV");
  SynthConfig sc;
  std::string synth_dir = ".";
  synth->add_option("--rows", sc.rows, "Rows");
  synth->add_option("--features-a", sc.features_a, "Columns for client A (including the property)");
  synth->add_option("--features-b", sc.features_b, "Columns for client B");
  synth->add_option("--seed", sc.seed, "Generator seed");
  synth->add_option("--separation", sc.separation, "Spread of the class blob centres");
  synth->add_option("--out", synth_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("UsageError", e.what()) + 1;
  }

  try {
    if (*synth) {
      const Dataset ds = gen_synth(sc);
      std::filesystem::create_directories(synth_dir);
      const auto path = (std::filesystem::path(synth_dir) / "synth.csv").string();
      write_csv(ds, path);
      const VerticalSplit v = split_vertical(ds);
      emit(json{{"path", path},
                {"rows", ds.rows()},
                {"columns_a", v.columns_a},
                {"columns_b", v.columns_b},
                {"label_column", "label"},
                {"property_column", sc.property_column}},
           "");
      return 0;
    }

    ExperimentConfig cfg = load_config(config_path);
    if (*train) {
      if (!mode_text.empty()) cfg.train.mode = parse_mode(mode_text);
      if (!role_text.empty()) {
        std::map<Role, std::string> addresses;
        for (const auto& item : split_list(peers_text)) {
          const auto eq = item.find('=');
          if (eq == std::string::npos) throw Error(ErrorCode::kInvalidConfig, "peer entry needs role=host:port");
          addresses[parse_role(item.substr(0, eq))] = item.substr(eq + 1);
        }
        const Role role = parse_role(role_text);
        if (listen.empty() && addresses.count(role)) listen = addresses[role];
        addresses[role] = listen;
        if (addresses.size() != kRoleCount) {
          throw Error(ErrorCode::kInvalidConfig, "--peers must name all four roles");
        }
        emit(run_tcp_role(cfg, role, listen, addresses, std::chrono::milliseconds(timeout_ms), private_seed),
             out_path);
        return 0;
      }
      emit(run_experiment(cfg), out_path);
    } else if (*bw) {
      std::vector<double> bws;
      for (const auto& b : split_list(bandwidths_text)) bws.push_back(parse_bandwidth(b));
      emit(bandwidth_sweep(cfg, bws), out_path);
    } else if (*scale) {
      std::vector<double> fr;
      for (const auto& f : split_list(fractions_text)) {
        try {
          fr.push_back(std::stod(f));
        } catch (const std::exception&) {
          throw Error(ErrorCode::kInvalidConfig, "bad fraction '" + f + "'");
        }
      }
      std::vector<ProtocolMode> modes;
      for (const auto& m : split_list(modes_text)) modes.push_back(parse_mode(m));
      emit(scale_sweep(cfg, fr, modes), out_path);
    } else if (*attack) {
      if (!optimizer_text.empty()) cfg.train.optimizer.kind = parse_optimizer(optimizer_text);
      if (lr) cfg.train.optimizer.learning_rate = *lr;
      if (!scope_text.empty()) cfg.train.sgld_scope = parse_sgld_scope(scope_text);
      AttackSetup setup;
      setup.property_column = property;
      emit(run_attack(cfg, setup), out_path);
    }
    return 0;
  } catch (const Error& e) {
    return fail(error_code_name(e.code()), e.detail());
  } catch (const std::exception& e) {
    return fail("Internal", e.what());
  }
}
