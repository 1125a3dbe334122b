#include "tfm/graph.hpp"

#include <algorithm>
#include <cmath>

#include "tfm/errors.hpp"

namespace tfm::graph {

const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Vehicle: return "vehicle";
    case NodeKind::Lane: return "lane";
    case NodeKind::Road: return "road";
    case NodeKind::Light: return "light";
  }
  return "?";
}

const char* to_string(RelKind r) {
  switch (r) {
    case RelKind::Follows: return "follows";
    case RelKind::OnLane: return "on_lane";
    case RelKind::LaneOfRoad: return "lane_of_road";
    case RelKind::Controls: return "controls";
    case RelKind::AdjacentLane: return "adjacent_lane";
  }
  return "?";
}

NodeKind parse_node_kind(const std::string& s) {
  if (s == "vehicle") return NodeKind::Vehicle;
  if (s == "lane") return NodeKind::Lane;
  if (s == "road") return NodeKind::Road;
  if (s == "light") return NodeKind::Light;
  throw bad_data("unknown node kind: " + s);
}

RelKind parse_rel_kind(const std::string& s) {
  if (s == "follows") return RelKind::Follows;
  if (s == "on_lane") return RelKind::OnLane;
  if (s == "lane_of_road") return RelKind::LaneOfRoad;
  if (s == "controls") return RelKind::Controls;
  if (s == "adjacent_lane") return RelKind::AdjacentLane;
  throw bad_data("unknown relation: " + s);
}

State make_vehicle_state(double speed, double accel, double pos) {
  return {speed, accel, pos, 1, 0, 0, 0, 0};
}

State make_lane_state(double mean_speed, double occupancy) {
  return {mean_speed, occupancy, 0, 0, 1, 0, 0, 0};
}

State make_road_state(double flow) {
  return {flow, 0, 0, 0, 0, 1, 0, 0};
}

State make_light_state(bool green, double time_in_phase) {
  return {green ? 1.0 : 0.0, green ? 0.0 : 1.0, time_in_phase, 0, 0, 0, 1, 0};
}

double event_time(const Event& e) {
  return std::visit([](const auto& x) { return x.t; }, e);
}

int event_ordinal(const Event& e) {
  return std::visit([](const auto& x) { return x.ordinal; }, e);
}

std::int64_t step_for_time(double t, double dt) {
  return static_cast<std::int64_t>(std::ceil(t / dt - 1e-9));
}

const NodeRecord& Snapshot::node(NodeId id) const {
  auto it = nodes.find(id);
  if (it == nodes.end())
    throw bad_data("node " + std::to_string(id) + " is not alive");
  return it->second;
}

namespace {

void apply_one(Snapshot& g, const Event& e) {
  double t = event_time(e);
  if (t < g.last_time - 1e-9)
    throw bad_data("event at t=" + std::to_string(t) +
                   " precedes already applied t=" + std::to_string(g.last_time));
  g.last_time = std::max(g.last_time, t);

  if (const auto* a = std::get_if<NodeAdd>(&e)) {
    if (g.used_ids.count(a->node))
      throw bad_data("node id " + std::to_string(a->node) +
                     (g.alive(a->node) ? " added twice" : " reused after removal"));
    g.used_ids.insert(a->node);
    g.nodes[a->node] = NodeRecord{a->kind, a->s, t, t};
  } else if (const auto* r = std::get_if<NodeRemove>(&e)) {
    if (!g.alive(r->node))
      throw bad_data("removal of node " + std::to_string(r->node) +
                     " which is not alive");
    g.nodes.erase(r->node);
    NodeId id = r->node;
    g.edges.erase(std::remove_if(g.edges.begin(), g.edges.end(),
                                 [&](const TimedEdge& te) {
                                   return te.u == id || te.v == id;
                                 }),
                  g.edges.end());
  } else if (const auto* ed = std::get_if<EdgeAdd>(&e)) {
    if (ed->u == ed->v)
      throw bad_data("self edge on node " + std::to_string(ed->u));
    if (!g.alive(ed->u) || !g.alive(ed->v))
      throw bad_data("edge " + std::string(to_string(ed->rel)) + " " +
                     std::to_string(ed->u) + "->" + std::to_string(ed->v) +
                     " references a node that is not alive");
    g.edges.push_back(TimedEdge{t, ed->ordinal, ed->rel, ed->u, ed->v});
  } else if (const auto* s = std::get_if<StateUpdate>(&e)) {
    auto it = g.nodes.find(s->node);
    if (it == g.nodes.end())
      throw bad_data("state update for node " + std::to_string(s->node) +
                     " which is not alive");
    if (!it->second.state.empty() && it->second.state.size() != s->s.size())
      throw bad_data("state dimension changed for node " + std::to_string(s->node));
    it->second.state = s->s;
    it->second.t_state = t;
  }
}

void expire_edges(Snapshot& g) {
  // keep edges of steps (step-window, step]
  double min_time = (double(g.step - g.window) + 1e-9) * g.dt;
  if (!g.edges.empty() && g.edges.front().t < min_time)
    g.edges.erase(std::remove_if(g.edges.begin(), g.edges.end(),
                                 [&](const TimedEdge& e) { return e.t < min_time; }),
                  g.edges.end());
}

} // namespace

void apply_events_inplace(Snapshot& g, const Event* begin, const Event* end) {
  if (begin == end) {
    g.step += 1;
  } else {
    for (const Event* e = begin; e != end; ++e) apply_one(g, *e);
    g.step = std::max(g.step, step_for_time(g.last_time, g.dt));
  }
  expire_edges(g);
}

void apply_events_inplace(Snapshot& g, const std::vector<Event>& events) {
  apply_events_inplace(g, events.data(), events.data() + events.size());
}

Snapshot apply_events(const Snapshot& g, const std::vector<Event>& events) {
  Snapshot out = g;
  apply_events_inplace(out, events);
  return out;
}

std::vector<StepBatch> split_by_step(const EventLog& log) {
  std::vector<StepBatch> out;
  for (const Event& e : log.events) {
    std::int64_t s = step_for_time(event_time(e), log.step_duration);
    if (out.empty() || out.back().step != s) {
      if (!out.empty() && out.back().step > s)
        throw bad_data("event log is not time ordered");
      out.push_back(StepBatch{s, {}});
    }
    out.back().events.push_back(e);
  }
  return out;
}

Snapshot replay(const EventLog& log, std::int64_t upto_step, int window) {
  Snapshot g(log.step_duration, window);
  for (const StepBatch& b : split_by_step(log)) {
    if (upto_step >= 0 && b.step > upto_step) break;
    apply_events_inplace(g, b.events);
  }
  while (upto_step >= 0 && g.step < upto_step) apply_events_inplace(g, {});
  return g;
}

namespace {

bool contains_other(const std::vector<Neighbor>& list, NodeId other) {
  for (const Neighbor& n : list)
    if (n.other == other) return true;
  return false;
}

} // namespace

std::vector<Neighbor> temporal_neighbors(const Snapshot& g, NodeId v, int K) {
  std::vector<Neighbor> out;
  if (!g.alive(v)) return out;
  for (auto it = g.edges.rbegin(); it != g.edges.rend(); ++it) {
    if (int(out.size()) >= K) break;
    if (it->u != v && it->v != v) continue;
    NodeId other = it->u == v ? it->v : it->u;
    if (!g.alive(other)) continue;
    if (contains_other(out, other)) continue;
    out.push_back(Neighbor{other, it->rel, it->u == v, it->t, it->ordinal});
  }
  return out;
}

std::map<NodeId, std::vector<Neighbor>> neighbor_lists(const Snapshot& g, int K) {
  std::map<NodeId, std::vector<Neighbor>> out;
  for (const auto& [id, rec] : g.nodes) out[id] = {};
  for (auto it = g.edges.rbegin(); it != g.edges.rend(); ++it) {
    if (!g.alive(it->u) || !g.alive(it->v)) continue;
    auto& lu = out[it->u];
    if (int(lu.size()) < K && !contains_other(lu, it->v))
      lu.push_back(Neighbor{it->v, it->rel, true, it->t, it->ordinal});
    auto& lv = out[it->v];
    if (int(lv.size()) < K && !contains_other(lv, it->u))
      lv.push_back(Neighbor{it->u, it->rel, false, it->t, it->ordinal});
  }
  return out;
}

std::vector<Neighbor> temporal_neighbors(const EventLog& log, NodeId v,
                                         double t_n, int K) {
  std::set<NodeId> alive;
  std::vector<TimedEdge> edges;
  for (const Event& e : log.events) {
    if (event_time(e) > t_n + 1e-9) break;
    if (const auto* a = std::get_if<NodeAdd>(&e)) alive.insert(a->node);
    if (const auto* r = std::get_if<NodeRemove>(&e)) alive.erase(r->node);
    if (const auto* ed = std::get_if<EdgeAdd>(&e))
      edges.push_back(TimedEdge{ed->t, ed->ordinal, ed->rel, ed->u, ed->v});
  }
  if (!alive.count(v))
    throw bad_data("node " + std::to_string(v) + " is not alive at t=" +
                   std::to_string(t_n));
  std::vector<Neighbor> out;
  for (auto it = edges.rbegin(); it != edges.rend(); ++it) {
    if (int(out.size()) >= K) break;
    if (it->u != v && it->v != v) continue;
    NodeId other = it->u == v ? it->v : it->u;
    if (!alive.count(other)) continue;
    if (contains_other(out, other)) continue;
    out.push_back(Neighbor{other, it->rel, it->u == v, it->t, it->ordinal});
  }
  return out;
}

std::vector<Violation> validate_log(const EventLog& log) {
  std::vector<Violation> out;
  Snapshot g(log.step_duration);
  double prev_t = -std::numeric_limits<double>::infinity();
  int prev_ord = -1;
  std::size_t dim = 0;
  for (std::size_t idx = 0; idx < log.events.size(); ++idx) {
    const Event& e = log.events[idx];
    double t = event_time(e);
    int ord = event_ordinal(e);
    bool order_ok = true;
    if (t < prev_t - 1e-9) {
      out.push_back({idx, "time goes backwards"});
      order_ok = false;
    } else if (std::abs(t - prev_t) <= 1e-9 && ord <= prev_ord) {
      out.push_back({idx, "ordinal does not increase within t=" + std::to_string(t)});
      order_ok = false;
    } else if (t > prev_t + 1e-9 && ord != 0) {
      out.push_back({idx, "first event at a new time must have i=0"});
      order_ok = false;
    }
    if (order_ok) {
      prev_t = t;
      prev_ord = ord;
    }

    const State* s = nullptr;
    if (const auto* a = std::get_if<NodeAdd>(&e)) s = &a->s;
    if (const auto* u = std::get_if<StateUpdate>(&e)) s = &u->s;
    if (s) {
      if (dim == 0) dim = s->size();
      if (s->empty() || s->size() != dim) {
        out.push_back({idx, "state dimension mismatch"});
        continue;
      }
    }
    try {
      apply_one(g, e);
    } catch (const Error& err) {
      out.push_back({idx, err.what()});
    }
    g.step = std::max(g.step, step_for_time(g.last_time, g.dt));
  }
  return out;
}

} // namespace tfm::graph
