// tfm: one binary for the whole pipeline. Subcommands generate micro-world
// data, ingest SUMO FCD dumps, train the model, roll it forward, evaluate
// logs, check gradients against finite differences, and plot metrics. Every
// command drops a manifest next to its artifacts so runs can be reproduced
// and diffed byte for byte.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tfm/checkpoint.hpp"
#include "tfm/engine.hpp"
#include "tfm/errors.hpp"
#include "tfm/evaluation.hpp"
#include "tfm/event_io.hpp"
#include "tfm/graph.hpp"
#include "tfm/microworld.hpp"
#include "tfm/model.hpp"
#include "tfm/rollout.hpp"
#include "tfm/tape.hpp"
#include "tfm/training.hpp"
#include "tfm/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

int exit_code(tfm::ErrorClass cls) { return 2 + int(cls); }

// ---- config ------------------------------------------------------------

struct DemandSpec {
  std::string kind = "uniform"; // uniform | ramp | file
  int count = 20;
  double desired_speed = 13.9;
  double interval = 5.0; // uniform: seconds between departures
  double t_end = 300.0;  // ramp: last departure time
  std::string file;      // file: demand JSON
};

struct ScenarioSpec {
  std::string topology = "ring"; // ring | grid | file
  double circumference = 1000.0;
  int segments = 4;
  int rows = 2;
  int cols = 2;
  double block_length = 200.0;
  std::string network_file;
  int steps = 200;
  double follow_threshold = 100.0;
  double empty_lane_speed = 13.9;
  DemandSpec demand;
};

struct EvalSpec {
  double bin_seconds = 60.0;
  std::int64_t from_step = -1; // next-state MSE starts here; -1: everything
  bool svg = true;
  std::string plot_x = "density";
  std::string plot_y = "mean_speed";
};

struct PathsSpec {
  std::string data;
  std::string checkpoint;
  std::string out = "out";
};

struct RunConfig {
  std::uint64_t seed = 0;
  tfm::model::ModelConfig model;
  tfm::model::TrainConfig train;
  tfm::model::RolloutConfig rollout;
  std::int64_t rollout_from = 0; // reference step the rollout branches from
  tfm::micro::OracleConfig oracle;
  ScenarioSpec scenario;
  EvalSpec eval;
  PathsSpec paths;
};

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object())
    throw tfm::bad_args("config: " + where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) { ok = true; break; }
    if (!ok) throw tfm::bad_args("unknown key \"" + key + "\" in " + where);
  }
}

ordered_json to_json(const RunConfig& cfg) {
  ordered_json j;
  j["seed"] = cfg.seed;
  j["model"] = tfm::model::to_json(cfg.model);
  j["train"] = tfm::model::to_json(cfg.train);
  j["rollout"] = tfm::model::to_json(cfg.rollout);
  j["rollout"]["from_step"] = cfg.rollout_from;
  j["oracle"] = tfm::micro::to_json(cfg.oracle);
  j["scenario"] = ordered_json{
      {"topology", cfg.scenario.topology},
      {"circumference", cfg.scenario.circumference},
      {"segments", cfg.scenario.segments},
      {"rows", cfg.scenario.rows},
      {"cols", cfg.scenario.cols},
      {"block_length", cfg.scenario.block_length},
      {"network_file", cfg.scenario.network_file},
      {"steps", cfg.scenario.steps},
      {"follow_threshold", cfg.scenario.follow_threshold},
      {"empty_lane_speed", cfg.scenario.empty_lane_speed},
      {"demand",
       ordered_json{{"kind", cfg.scenario.demand.kind},
                    {"count", cfg.scenario.demand.count},
                    {"desired_speed", cfg.scenario.demand.desired_speed},
                    {"interval", cfg.scenario.demand.interval},
                    {"t_end", cfg.scenario.demand.t_end},
                    {"file", cfg.scenario.demand.file}}}};
  j["eval"] = ordered_json{{"bin_seconds", cfg.eval.bin_seconds},
                           {"from_step", cfg.eval.from_step},
                           {"svg", cfg.eval.svg},
                           {"plot_x", cfg.eval.plot_x},
                           {"plot_y", cfg.eval.plot_y}};
  j["paths"] = ordered_json{{"data", cfg.paths.data},
                            {"checkpoint", cfg.paths.checkpoint},
                            {"out", cfg.paths.out}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  try {
    check_keys(j, {"seed", "model", "train", "rollout", "oracle", "scenario",
                   "eval", "paths"},
               "config");
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("model"))
      cfg.model = tfm::model::model_config_from_json(j.at("model"));

    json t = j.contains("train") ? j.at("train") : json::object();
    if (t.is_object() && !t.contains("seed")) t["seed"] = cfg.seed;
    cfg.train = tfm::model::train_config_from_json(t);

    json r = j.contains("rollout") ? j.at("rollout") : json::object();
    if (r.is_object() && r.contains("from_step")) {
      cfg.rollout_from = r.at("from_step").get<std::int64_t>();
      if (cfg.rollout_from < 0)
        throw tfm::bad_args("config: rollout.from_step must be >= 0");
      r.erase("from_step");
    }
    if (r.is_object() && !r.contains("seed")) r["seed"] = cfg.seed;
    cfg.rollout = tfm::model::rollout_config_from_json(r);

    if (j.contains("oracle"))
      cfg.oracle = tfm::micro::oracle_config_from_json(j.at("oracle"));

    if (j.contains("scenario")) {
      const json& s = j.at("scenario");
      check_keys(s,
                 {"topology", "circumference", "segments", "rows", "cols",
                  "block_length", "network_file", "steps", "follow_threshold",
                  "empty_lane_speed", "demand"},
                 "scenario");
      auto& sc = cfg.scenario;
      if (s.contains("topology")) sc.topology = s.at("topology").get<std::string>();
      if (sc.topology != "ring" && sc.topology != "grid" && sc.topology != "file")
        throw tfm::bad_args("config: scenario.topology must be ring, grid or file");
      if (s.contains("circumference")) sc.circumference = s.at("circumference").get<double>();
      if (s.contains("segments")) sc.segments = s.at("segments").get<int>();
      if (s.contains("rows")) sc.rows = s.at("rows").get<int>();
      if (s.contains("cols")) sc.cols = s.at("cols").get<int>();
      if (s.contains("block_length")) sc.block_length = s.at("block_length").get<double>();
      if (s.contains("network_file")) sc.network_file = s.at("network_file").get<std::string>();
      if (s.contains("steps")) sc.steps = s.at("steps").get<int>();
      if (sc.steps < 1) throw tfm::bad_args("config: scenario.steps must be >= 1");
      if (s.contains("follow_threshold"))
        sc.follow_threshold = s.at("follow_threshold").get<double>();
      if (s.contains("empty_lane_speed"))
        sc.empty_lane_speed = s.at("empty_lane_speed").get<double>();
      if (s.contains("demand")) {
        const json& d = s.at("demand");
        check_keys(d, {"kind", "count", "desired_speed", "interval", "t_end", "file"},
                   "scenario.demand");
        auto& dm = sc.demand;
        if (d.contains("kind")) dm.kind = d.at("kind").get<std::string>();
        if (dm.kind != "uniform" && dm.kind != "ramp" && dm.kind != "file")
          throw tfm::bad_args(
              "config: scenario.demand.kind must be uniform, ramp or file");
        if (d.contains("count")) dm.count = d.at("count").get<int>();
        if (dm.count < 0)
          throw tfm::bad_args("config: scenario.demand.count must be >= 0");
        if (d.contains("desired_speed")) dm.desired_speed = d.at("desired_speed").get<double>();
        if (d.contains("interval")) dm.interval = d.at("interval").get<double>();
        if (d.contains("t_end")) dm.t_end = d.at("t_end").get<double>();
        if (d.contains("file")) dm.file = d.at("file").get<std::string>();
      }
    }

    if (j.contains("eval")) {
      const json& e = j.at("eval");
      check_keys(e, {"bin_seconds", "from_step", "svg", "plot_x", "plot_y"},
                 "eval");
      if (e.contains("bin_seconds")) cfg.eval.bin_seconds = e.at("bin_seconds").get<double>();
      if (e.contains("from_step")) cfg.eval.from_step = e.at("from_step").get<std::int64_t>();
      if (e.contains("svg")) cfg.eval.svg = e.at("svg").get<bool>();
      if (e.contains("plot_x")) cfg.eval.plot_x = e.at("plot_x").get<std::string>();
      if (e.contains("plot_y")) cfg.eval.plot_y = e.at("plot_y").get<std::string>();
    }

    if (j.contains("paths")) {
      const json& p = j.at("paths");
      check_keys(p, {"data", "checkpoint", "out"}, "paths");
      if (p.contains("data")) cfg.paths.data = p.at("data").get<std::string>();
      if (p.contains("checkpoint"))
        cfg.paths.checkpoint = p.at("checkpoint").get<std::string>();
      if (p.contains("out")) cfg.paths.out = p.at("out").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw tfm::bad_args(std::string("config: ") + e.what());
  }
  cfg.model.validate();
  return cfg;
}

json load_json(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw tfm::io_error(std::string(what) + " file not found: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw tfm::bad_args(std::string(what) + " " + path + ": " + e.what());
  }
}

// ---- manifest ----------------------------------------------------------

struct Manifest {
  std::string command;
  ordered_json config;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;    // path -> sha256
  std::map<std::string, std::string> artifacts; // path -> sha256
};

void write_manifest(const fs::path& out_dir, const Manifest& m) {
  ordered_json j;
  j["command"] = m.command;
  j["seed"] = m.seed;
  j["inputs"] = ordered_json::object();
  for (const auto& [p, h] : m.inputs) j["inputs"][p] = h;
  j["artifacts"] = ordered_json::object();
  for (const auto& [p, h] : m.artifacts) j["artifacts"][p] = h;
  j["config"] = m.config;
  fs::path path = out_dir / (m.command + "-manifest.json");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw tfm::io_error("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

void add_artifact(Manifest& m, const fs::path& p) {
  m.artifacts[p.filename().string()] = tfm::sha256_file_hex(p.string());
}

void add_input(Manifest& m, const std::string& p) {
  if (!p.empty()) m.inputs[p] = tfm::sha256_file_hex(p);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw tfm::io_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out.good()) throw tfm::io_error("failed writing '" + path.string() + "'");
}

// ---- scenario assembly ---------------------------------------------------

tfm::micro::RoadNetwork build_network(const ScenarioSpec& sc, Manifest& m) {
  using namespace tfm::micro;
  if (sc.topology == "ring") return ring_network(sc.circumference, sc.segments);
  if (sc.topology == "grid") return grid_network(sc.rows, sc.cols, sc.block_length);
  if (sc.network_file.empty())
    throw tfm::bad_args("scenario.topology is \"file\" but network_file is empty");
  json nj = load_json(sc.network_file, "network");
  add_input(m, sc.network_file);
  return network_from_json(nj);
}

tfm::micro::DemandSchedule build_demand(const tfm::micro::RoadNetwork& net,
                                        const DemandSpec& dm, Manifest& m) {
  using namespace tfm::micro;
  if (dm.kind == "uniform")
    return uniform_demand(net, dm.count, dm.desired_speed, dm.interval);
  if (dm.kind == "ramp")
    return ramp_demand(net, dm.count, dm.desired_speed, dm.t_end);
  if (dm.file.empty())
    throw tfm::bad_args("scenario.demand.kind is \"file\" but file is empty");
  json dj = load_json(dm.file, "demand");
  add_input(m, dm.file);
  return demand_from_json(dj);
}

// ---- commands ------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, Manifest& m, const fs::path& out) {
  using namespace tfm::micro;
  RoadNetwork net = build_network(cfg.scenario, m);
  DemandSchedule demand = build_demand(net, cfg.scenario.demand, m);
  OracleResult res = run_oracle(net, demand, cfg.scenario.steps, cfg.oracle);
  tfm::graph::EventLog log = to_graph_events(
      res, net, cfg.scenario.follow_threshold, cfg.scenario.empty_lane_speed);

  fs::path events = out / "events.jsonl";
  tfm::graph::write_event_log(events.string(), log);
  add_artifact(m, events);
  fs::path netfile = out / "network.json";
  write_text(netfile, to_json(net).dump(2) + "\n");
  add_artifact(m, netfile);

  for (const auto& msg : res.delayed) std::cerr << "note: " << msg << "\n";
  std::cout << "wrote " << events.string() << " (" << log.events.size()
            << " events, " << res.vehicles.size() << " vehicles, "
            << tfm::format_double(net.total_lane_km()) << " lane-km)\n";
  return 0;
}

int cmd_import_fcd(const RunConfig& cfg, Manifest& m, const fs::path& out) {
  using namespace tfm::micro;
  if (cfg.paths.data.empty())
    throw tfm::bad_args("import-fcd needs an input file (positional or paths.data)");
  OracleResult res = import_fcd(cfg.paths.data);
  add_input(m, cfg.paths.data);
  RoadNetwork net = skeleton_network(res);
  tfm::graph::EventLog log = to_graph_events(
      res, net, cfg.scenario.follow_threshold, cfg.scenario.empty_lane_speed);

  fs::path events = out / "events.jsonl";
  tfm::graph::write_event_log(events.string(), log);
  add_artifact(m, events);
  fs::path netfile = out / "network.json";
  write_text(netfile, to_json(net).dump(2) + "\n");
  add_artifact(m, netfile);

  std::cout << "imported " << cfg.paths.data << ": " << res.vehicles.size()
            << " vehicles, " << log.events.size() << " events, tick "
            << tfm::format_double(res.tick) << " s\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, Manifest& m, const fs::path& out) {
  using namespace tfm;
  if (cfg.paths.data.empty())
    throw bad_args("train needs an event log (positional or paths.data)");
  graph::EventLog log = graph::read_event_log(cfg.paths.data);
  add_input(m, cfg.paths.data);

  num::ParamStore ps;
  Rng rng(cfg.train.seed);
  model::init_model_params(ps, rng, cfg.model);
  if (!cfg.paths.checkpoint.empty()) {
    num::load_checkpoint(cfg.paths.checkpoint, ps); // warm start
    add_input(m, cfg.paths.checkpoint);
  }

  fs::path best = out / "best.ckpt";
  model::TrainResult res = model::train(ps, log, cfg.model, cfg.train, best.string());

  num::CheckpointMeta meta;
  meta.model_config = model::to_json(cfg.model);
  meta.seed = cfg.train.seed;
  meta.training_step = res.global_step;
  fs::path final_ckpt = out / "model.ckpt";
  num::save_checkpoint(final_ckpt.string(), ps, meta);
  add_artifact(m, final_ckpt);
  if (fs::exists(best)) add_artifact(m, best);

  fs::path hist = out / "history.csv";
  model::write_history_csv(hist.string(), res.history);
  add_artifact(m, hist);

  const auto& first = res.history.front();
  const auto& last = res.history.back();
  std::cout << "trained " << res.history.size() << " epochs on " << res.n_train
            << "+" << res.n_val << " transitions (skipped edges: "
            << res.skipped_edges << ")\n"
            << "total loss " << format_double(first.total) << " -> "
            << format_double(last.total) << ", best val "
            << format_double(res.best_val) << " at epoch " << res.best_epoch
            << "\n"
            << "wrote " << final_ckpt.string() << "\n";
  if (res.state_warning)
    std::cerr << "note: some transitions had no overlapping nodes for the "
                 "state loss\n";
  return 0;
}

int cmd_simulate(const RunConfig& cfg, Manifest& m, const fs::path& out) {
  using namespace tfm;
  if (cfg.paths.checkpoint.empty())
    throw bad_args("simulate needs --checkpoint (or paths.checkpoint)");
  if (cfg.paths.data.empty())
    throw bad_args("simulate needs a reference event log (positional or paths.data)");

  num::ParamStore ps;
  num::CheckpointMeta meta = num::load_checkpoint(cfg.paths.checkpoint, ps);
  add_input(m, cfg.paths.checkpoint);
  model::ModelConfig mcfg = model::model_config_from_json(meta.model_config);

  graph::EventLog ref = graph::read_event_log(cfg.paths.data);
  add_input(m, cfg.paths.data);
  graph::Snapshot start = graph::replay(ref, cfg.rollout_from, mcfg.window);
  model::Lifecycle lc = model::extract_lifecycle(ref, cfg.rollout_from);

  graph::EventLog rolled = model::simulate(ps, start, mcfg, cfg.rollout, lc);
  fs::path events = out / "rollout.jsonl";
  graph::write_event_log(events.string(), rolled);
  add_artifact(m, events);

  std::cout << "rolled out " << cfg.rollout.steps << " steps from step "
            << cfg.rollout_from << " (" << rolled.events.size()
            << " events, " << lc.inserts.size() << " arrivals, "
            << lc.removes.size() << " departures replayed)\n"
            << "wrote " << events.string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, Manifest& m, const fs::path& out) {
  using namespace tfm;
  if (cfg.paths.data.empty())
    throw bad_args("eval needs an event log (positional or paths.data)");
  graph::EventLog log = graph::read_event_log(cfg.paths.data);
  add_input(m, cfg.paths.data);

  micro::RoadNetwork net = build_network(cfg.scenario, m);
  auto mfd = eval::compute_mfd(log, net.total_lane_km(), cfg.eval.bin_seconds);
  fs::path mfd_path = out / "mfd.csv";
  write_text(mfd_path, eval::mfd_csv(mfd));
  add_artifact(m, mfd_path);
  std::cout << "wrote " << mfd_path.string() << " (" << mfd.size() << " bins)\n";

  if (cfg.eval.svg) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : mfd) pts.emplace_back(p.density, p.mean_speed);
    fs::path svg = out / "mfd.svg";
    eval::write_scatter_svg(svg.string(), "fundamental diagram",
                            "density [veh/lane-km]", "mean speed [m/s]", pts);
    add_artifact(m, svg);
    std::cout << "wrote " << svg.string() << "\n";
  }

  if (!cfg.paths.checkpoint.empty()) {
    num::ParamStore ps;
    num::CheckpointMeta meta = num::load_checkpoint(cfg.paths.checkpoint, ps);
    add_input(m, cfg.paths.checkpoint);
    model::ModelConfig mcfg = model::model_config_from_json(meta.model_config);
    eval::MseReport rep = eval::next_state_mse(ps, log, mcfg, cfg.eval.from_step);
    fs::path mse_path = out / "mse.csv";
    write_text(mse_path, eval::mse_csv(rep));
    add_artifact(m, mse_path);
    std::cout << "next-state MSE over " << rep.node_steps
              << " node-steps: model " << format_double(rep.model_mse)
              << ", persistence " << format_double(rep.baseline_mse) << "\n"
              << "wrote " << mse_path.string() << "\n";
  }
  return 0;
}

// six nodes, two steps: enough structure to light up every parameter
tfm::graph::EventLog gradcheck_fixture() {
  using namespace tfm::graph;
  EventLog log;
  log.events = {
      NodeAdd{0, 0, 0, NodeKind::Vehicle, make_vehicle_state(12.0, 0.4, 30.0)},
      NodeAdd{0, 1, 1, NodeKind::Vehicle, make_vehicle_state(9.5, -0.2, 55.0)},
      NodeAdd{0, 2, 2, NodeKind::Vehicle, make_vehicle_state(14.0, 0.0, 80.0)},
      NodeAdd{0, 3, 3, NodeKind::Vehicle, make_vehicle_state(6.0, 1.0, 5.0)},
      NodeAdd{0, 4, 4, NodeKind::Lane, make_lane_state(11.0, 24.0)},
      NodeAdd{0, 5, 5, NodeKind::Light, make_light_state(true, 12.0)},
      EdgeAdd{1, 0, RelKind::OnLane, 0, 4},
      EdgeAdd{1, 1, RelKind::Follows, 0, 1},
      EdgeAdd{1, 2, RelKind::Controls, 5, 4},
      StateUpdate{1, 3, 0, make_vehicle_state(12.4, 0.4, 42.3)},
      StateUpdate{1, 4, 1, make_vehicle_state(9.3, -0.2, 64.4)},
      StateUpdate{1, 5, 2, make_vehicle_state(14.0, 0.0, 94.0)},
      StateUpdate{1, 6, 3, make_vehicle_state(7.0, 1.0, 11.5)},
      StateUpdate{1, 7, 4, make_lane_state(10.7, 26.0)},
      StateUpdate{1, 8, 5, make_light_state(true, 13.0)},
  };
  return log;
}

int cmd_gradcheck(const RunConfig& cfg, Manifest& m, const fs::path& out) {
  using namespace tfm;
  graph::EventLog log;
  if (!cfg.paths.data.empty()) {
    log = graph::read_event_log(cfg.paths.data);
    add_input(m, cfg.paths.data);
  } else {
    log = gradcheck_fixture();
  }
  auto transitions = model::build_transitions(log, cfg.model.window);
  if (transitions.empty())
    throw bad_data("gradcheck needs at least two macro steps");

  num::ParamStore ps;
  Rng rng(cfg.seed);
  model::init_model_params(ps, rng, cfg.model);

  auto loss_at = [&]() {
    double total = 0;
    for (const auto& tr : transitions) {
      num::ValueEngine eng(ps);
      auto l = model::transition_loss(eng, tr, cfg.model);
      total += eng.scalar(l.total);
    }
    return total;
  };

  ps.zero_grad();
  for (const auto& tr : transitions) {
    num::Tape tape(ps);
    auto l = model::transition_loss(tape, tr, cfg.model);
    tape.backward(l.total);
  }

  const double h = 1e-5;
  double worst = 0;
  std::string worst_name;
  std::size_t checked = 0, failing = 0;
  std::string csv = "param,size,max_abs_diff,max_rel_err\n";
  for (auto& [name, e] : ps.entries()) {
    double max_abs = 0, max_rel = 0;
    for (std::size_t i = 0; i < e.value.data.size(); ++i) {
      double saved = e.value.data[i];
      e.value.data[i] = saved + h;
      double lp = loss_at();
      e.value.data[i] = saved - h;
      double lm = loss_at();
      e.value.data[i] = saved;
      double fd = (lp - lm) / (2 * h);
      double g = e.grad[i];
      double abs_diff = std::abs(g - fd);
      double rel = abs_diff / std::max({1.0, std::abs(g), std::abs(fd)});
      max_abs = std::max(max_abs, abs_diff);
      max_rel = std::max(max_rel, rel);
      ++checked;
      if (rel > 1e-4) ++failing;
    }
    if (max_rel > worst) {
      worst = max_rel;
      worst_name = name;
    }
    csv += name + "," + std::to_string(e.value.data.size()) + "," +
           format_double(max_abs) + "," + format_double(max_rel) + "\n";
  }
  fs::path report = out / "gradcheck.csv";
  write_text(report, csv);
  add_artifact(m, report);
  write_manifest(out, m);

  std::cout << "checked " << checked << " parameters across "
            << transitions.size() << " transitions\n"
            << "max relative error " << format_double(worst) << " ("
            << worst_name << "), threshold 1e-4\n";
  if (failing > 0) {
    std::cerr << "gradcheck FAILED: " << failing
              << " parameters disagree with finite differences\n";
    return exit_code(ErrorClass::Numeric);
  }
  std::cout << "gradcheck OK\n";
  return 0;
}

int cmd_plot(const RunConfig& cfg, Manifest& m, const fs::path& out) {
  using namespace tfm;
  if (cfg.paths.data.empty())
    throw bad_args("plot needs a metrics CSV (positional or paths.data)");
  std::ifstream in(cfg.paths.data, std::ios::binary);
  if (!in) throw io_error("metrics file not found: " + cfg.paths.data);
  add_input(m, cfg.paths.data);

  auto split = [](const std::string& s) {
    std::vector<std::string> out_;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out_.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur += c;
      }
    }
    out_.push_back(cur);
    return out_;
  };

  std::string header;
  if (!std::getline(in, header))
    throw bad_data(cfg.paths.data + ": empty metrics file");
  auto cols = split(header);
  auto col_of = [&](const std::string& name) {
    for (std::size_t i = 0; i < cols.size(); ++i)
      if (cols[i] == name) return i;
    throw bad_data(cfg.paths.data + ": no column named \"" + name + "\"");
  };
  std::size_t xi = col_of(cfg.eval.plot_x), yi = col_of(cfg.eval.plot_y);

  std::vector<std::pair<double, double>> pts;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = split(line);
    if (f.size() != cols.size())
      throw bad_data(cfg.paths.data + ": line " + std::to_string(line_no) +
                     ": expected " + std::to_string(cols.size()) + " fields");
    try {
      pts.emplace_back(std::stod(f[xi]), std::stod(f[yi]));
    } catch (const std::exception&) {
      throw bad_data(cfg.paths.data + ": line " + std::to_string(line_no) +
                     ": non-numeric value");
    }
  }

  fs::path svg = out / "plot.svg";
  eval::write_scatter_svg(svg.string(), cfg.eval.plot_y + " vs " + cfg.eval.plot_x,
                          cfg.eval.plot_x, cfg.eval.plot_y, pts);
  add_artifact(m, svg);
  std::cout << "wrote " << svg.string() << " (" << pts.size() << " points)\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"transportation foundation model pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path, input_path;
  std::uint64_t seed_flag = 0;
  app.add_option("--config", config_path, "run configuration JSON");
  app.add_option("--out", out_dir, "output directory (default: out)");
  app.add_option("--seed", seed_flag, "seed override");
  app.add_option("--checkpoint", checkpoint_path, "model checkpoint path");

  const char* names[] = {"gen-data", "import-fcd", "train", "simulate",
                         "eval",     "gradcheck",  "plot"};
  const char* descs[] = {
      "run the micro-world oracle and write an event log",
      "convert a SUMO FCD XML dump into an event log",
      "train the model on an event log",
      "roll the trained model forward from a reference log",
      "compute MFD and next-state metrics for an event log",
      "compare analytic gradients against finite differences",
      "scatter-plot two columns of a metrics CSV"};
  for (std::size_t i = 0; i < 7; ++i) {
    auto* sub = app.add_subcommand(names[i], descs[i]);
    sub->fallthrough();
    sub->add_option("input", input_path, "input file (overrides paths.data)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  std::string command = app.get_subcommands().front()->get_name();

  try {
    json j = config_path.empty() ? json::object()
                                 : load_json(config_path, "config");
    if (!j.is_object()) throw tfm::bad_args("config: expected a JSON object");
    if (j.contains("paths") && !j["paths"].is_object())
      throw tfm::bad_args("config: paths must be an object");
    if (app.count("--seed")) j["seed"] = seed_flag;
    if (!out_dir.empty()) j["paths"]["out"] = out_dir;
    if (!checkpoint_path.empty()) j["paths"]["checkpoint"] = checkpoint_path;
    if (!input_path.empty()) j["paths"]["data"] = input_path;

    RunConfig cfg = run_config_from_json(j);

    Manifest m;
    m.command = command;
    m.config = to_json(cfg);
    m.seed = cfg.seed;
    if (!config_path.empty()) add_input(m, config_path);

    fs::path out(cfg.paths.out);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw tfm::io_error("cannot create output directory '" +
                                out.string() + "': " + ec.message());

    int rc = 0;
    if (command == "gen-data") rc = cmd_gen_data(cfg, m, out);
    else if (command == "import-fcd") rc = cmd_import_fcd(cfg, m, out);
    else if (command == "train") rc = cmd_train(cfg, m, out);
    else if (command == "simulate") rc = cmd_simulate(cfg, m, out);
    else if (command == "eval") rc = cmd_eval(cfg, m, out);
    else if (command == "gradcheck") return cmd_gradcheck(cfg, m, out);
    else if (command == "plot") rc = cmd_plot(cfg, m, out);
    write_manifest(out, m);
    return rc;
  } catch (const tfm::Error& e) {
    std::cerr << "tfm " << command << ": " << e.what() << "\n";
    return exit_code(e.error_class());
  } catch (const std::exception& e) {
    std::cerr << "tfm " << command << ": " << e.what() << "\n";
    return 1;
  }
}
