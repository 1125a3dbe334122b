#include "tfm/rollout.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "tfm/encoder.hpp"
#include "tfm/engine.hpp"
#include "tfm/errors.hpp"
#include "tfm/generator.hpp"
#include "tfm/updater.hpp"

namespace tfm::model {

using namespace tfm::graph;
using nlohmann::json;
using nlohmann::ordered_json;

ordered_json to_json(const RolloutConfig& cfg) {
  return ordered_json{
      {"steps", cfg.steps}, {"seed", cfg.seed}, {"record_states", cfg.record_states}};
}

RolloutConfig rollout_config_from_json(const json& j) {
  if (!j.is_object()) throw bad_data("rollout: expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "steps" && it.key() != "seed" && it.key() != "record_states")
      throw bad_data("rollout: unknown key '" + it.key() + "'");
  RolloutConfig cfg;
  if (j.contains("steps")) {
    if (!j.at("steps").is_number_integer() || j.at("steps").get<int>() < 1)
      throw bad_data("rollout: 'steps' must be a positive integer");
    cfg.steps = j.at("steps").get<int>();
  }
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("record_states")) {
    if (!j.at("record_states").is_boolean())
      throw bad_data("rollout: 'record_states' must be a boolean");
    cfg.record_states = j.at("record_states").get<bool>();
  }
  return cfg;
}

Lifecycle extract_lifecycle(const EventLog& log, std::int64_t after_step) {
  std::map<NodeId, NodeKind> kind;
  for (const auto& e : log.events)
    if (auto* na = std::get_if<NodeAdd>(&e)) kind[na->node] = na->kind;

  Lifecycle lc;
  std::map<NodeId, std::size_t> open; // inserts waiting for their OnLane edge
  for (const auto& e : log.events) {
    std::int64_t s = step_for_time(event_time(e), log.step_duration);
    if (s <= after_step) continue;
    if (auto* na = std::get_if<NodeAdd>(&e)) {
      if (na->kind != NodeKind::Vehicle) continue;
      open[na->node] = lc.inserts.size();
      lc.inserts.push_back({s, na->node, na->s, 0, false});
    } else if (auto* ea = std::get_if<EdgeAdd>(&e)) {
      auto it = open.find(ea->u);
      if (ea->rel == RelKind::OnLane && it != open.end() &&
          lc.inserts[it->second].step == s && !lc.inserts[it->second].has_lane) {
        lc.inserts[it->second].lane = ea->v;
        lc.inserts[it->second].has_lane = true;
      }
    } else if (auto* nr = std::get_if<NodeRemove>(&e)) {
      auto kit = kind.find(nr->node);
      if (kit != kind.end() && kit->second == NodeKind::Vehicle)
        lc.removes.push_back({s, nr->node});
    }
  }
  return lc;
}

std::string snapshot_digest(const Snapshot& g) {
  std::ostringstream out;
  out << "step=" << g.step << ";dt=" << format_double(g.dt) << ";window=" << g.window
      << ";";
  for (const auto& [id, rec] : g.nodes) {
    out << "n:" << id << "," << to_string(rec.kind);
    for (double x : rec.state) out << "," << format_double(x);
    out << ";";
  }
  for (const auto& e : g.edges)
    out << "e:" << format_double(e.t) << "," << e.ordinal << "," << to_string(e.rel)
        << "," << e.u << "," << e.v << ";";
  return sha256_hex(out.str());
}

std::vector<Event> rollout_step(const num::ParamStore& ps, Snapshot& g,
                                const ModelConfig& mcfg, const Lifecycle& lc,
                                Rng* rng) {
  num::ValueEngine eng(ps);
  Embeddings z = encode(eng, g, mcfg);
  auto gen = generate_step(eng, g, std::move(z), mcfg, rng);

  std::vector<Event> events;
  events.reserve(gen.edges.size() + g.nodes.size());
  for (const auto& e : gen.edges) events.push_back(e);

  auto h = message_pass(eng, g, gen.edges, mcfg);
  auto pred = update_states(eng, g, h, gen.z_final, g.dt, mcfg);

  double t_next = double(g.step + 1) * g.dt;
  std::int64_t s_next = g.step + 1;
  int ord = int(gen.edges.size());
  for (const auto& [id, val] : pred) {
    const std::vector<double>& s = eng.value(val);
    for (double x : s)
      if (!std::isfinite(x))
        throw numeric_error("non-finite predicted state for node " + std::to_string(id) +
                            " at step " + std::to_string(s_next));
    events.push_back(StateUpdate{t_next, ord++, id, s});
  }

  for (const auto& ins : lc.inserts)
    if (ins.step == s_next) {
      if (g.alive(ins.node) || g.used_ids.count(ins.node))
        throw bad_data("lifecycle reuses node id " + std::to_string(ins.node));
      events.push_back(NodeAdd{t_next, ord++, ins.node, NodeKind::Vehicle, ins.state});
    }
  for (const auto& ins : lc.inserts)
    if (ins.step == s_next)
      events.push_back(StateUpdate{t_next, ord++, ins.node, ins.state});
  for (const auto& ins : lc.inserts)
    if (ins.step == s_next && ins.has_lane)
      events.push_back(EdgeAdd{t_next, ord++, RelKind::OnLane, ins.node, ins.lane});
  for (const auto& rm : lc.removes)
    if (rm.step == s_next && g.alive(rm.node))
      events.push_back(NodeRemove{t_next, ord++, rm.node});

  apply_events_inplace(g, events);
  return events;
}

std::vector<Event> bootstrap_events(const Snapshot& g) {
  std::vector<Event> out;
  if (g.nodes.empty()) return out;
  std::int64_t s0 = g.step;
  for (const auto& e : g.edges) s0 = std::min(s0, step_for_time(e.t, g.dt) - 1);
  double t0 = double(s0) * g.dt;
  int ord = 0;
  for (const auto& [id, rec] : g.nodes)
    out.push_back(NodeAdd{t0, ord++, id, rec.kind, rec.state});
  // windowed edges replay in their stored (t, ordinal) order; ordinals are
  // renumbered per timestamp, which keeps the recency tie-breaks intact
  double prev_t = t0;
  ord = 0;
  for (const auto& e : g.edges) {
    if (e.t != prev_t) {
      ord = 0;
      prev_t = e.t;
    }
    out.push_back(EdgeAdd{e.t, ord++, e.rel, e.u, e.v});
  }
  return out;
}

EventLog simulate(const num::ParamStore& ps, const Snapshot& start,
                  const ModelConfig& mcfg, const RolloutConfig& rcfg,
                  const Lifecycle& lc) {
  mcfg.validate();
  if (rcfg.steps < 1) throw bad_args("rollout: steps must be >= 1");

  Snapshot g = start;
  EventLog log;
  log.step_duration = g.dt;
  log.events = bootstrap_events(g);

  Rng rng(rcfg.seed);
  Rng* rp = mcfg.gen.mode == GenMode::Sample ? &rng : nullptr;
  for (int s = 0; s < rcfg.steps; ++s) {
    std::vector<Event> events = rollout_step(ps, g, mcfg, lc, rp);
    for (auto& e : events) {
      if (!rcfg.record_states && std::holds_alternative<StateUpdate>(e)) continue;
      log.events.push_back(std::move(e));
    }
  }
  return log;
}

} // namespace tfm::model
