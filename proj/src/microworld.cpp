#include "tfm/microworld.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tfm/errors.hpp"

namespace tfm::micro {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// network

const LaneSpec* RoadNetwork::find_lane(const std::string& name) const {
  for (const auto& l : lanes)
    if (l.name == name) return &l;
  return nullptr;
}

const LaneSpec& RoadNetwork::lane(const std::string& name) const {
  const LaneSpec* l = find_lane(name);
  if (!l) throw bad_data("unknown lane '" + name + "'");
  return *l;
}

double RoadNetwork::total_lane_km() const {
  double m = 0;
  for (const auto& l : lanes) m += l.length;
  return m / 1000.0;
}

void RoadNetwork::validate() const {
  std::set<std::string> names;
  auto claim = [&](const std::string& n, const char* what) {
    if (n.empty()) throw bad_data(std::string(what) + " with empty name");
    if (!names.insert(n).second)
      throw bad_data("duplicate network name '" + n + "'");
  };
  std::map<std::string, const RoadSpec*> road_by;
  std::map<std::string, std::size_t> lane_by;
  for (const auto& r : roads) {
    claim(r.name, "road");
    if (!(r.length > 0)) throw bad_data("road '" + r.name + "': length must be positive");
    road_by[r.name] = &r;
  }
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    claim(lanes[i].name, "lane");
    if (!(lanes[i].length > 0))
      throw bad_data("lane '" + lanes[i].name + "': length must be positive");
    lane_by[lanes[i].name] = i;
  }
  for (const auto& r : roads)
    for (const auto& ln : r.lanes) {
      auto it = lane_by.find(ln);
      if (it == lane_by.end())
        throw bad_data("road '" + r.name + "': unknown lane '" + ln + "'");
      if (lanes[it->second].road != r.name)
        throw bad_data("lane '" + ln + "': road link does not match '" + r.name + "'");
    }
  for (const auto& l : lanes) {
    auto rit = road_by.find(l.road);
    if (rit == road_by.end())
      throw bad_data("lane '" + l.name + "': unknown road '" + l.road + "'");
    if (std::find(rit->second->lanes.begin(), rit->second->lanes.end(), l.name) ==
        rit->second->lanes.end())
      throw bad_data("road '" + l.road + "' does not list lane '" + l.name + "'");
    for (const auto& s : l.successors)
      if (!lane_by.count(s))
        throw bad_data("lane '" + l.name + "': unknown successor '" + s + "'");
  }
  for (const auto& tl : lights) {
    claim(tl.name, "light");
    if (tl.lanes.empty())
      throw bad_data("light '" + tl.name + "' controls no lane");
    for (const auto& ln : tl.lanes)
      if (!lane_by.count(ln))
        throw bad_data("light '" + tl.name + "': unknown lane '" + ln + "'");
    if (!(tl.green > 0) || !(tl.red > 0))
      throw bad_data("light '" + tl.name + "': phase durations must be positive");
    if (!(tl.offset >= 0) || !std::isfinite(tl.offset))
      throw bad_data("light '" + tl.name + "': bad offset");
  }
  // successor graph connected, direction ignored
  if (lanes.size() > 1) {
    std::vector<std::vector<std::size_t>> adj(lanes.size());
    for (std::size_t i = 0; i < lanes.size(); ++i)
      for (const auto& s : lanes[i].successors) {
        std::size_t j = lane_by.at(s);
        adj[i].push_back(j);
        adj[j].push_back(i);
      }
    std::vector<char> seen(lanes.size(), 0);
    std::vector<std::size_t> stack{0};
    seen[0] = 1;
    std::size_t reached = 1;
    while (!stack.empty()) {
      std::size_t v = stack.back();
      stack.pop_back();
      for (std::size_t w : adj[v])
        if (!seen[w]) {
          seen[w] = 1;
          ++reached;
          stack.push_back(w);
        }
    }
    if (reached != lanes.size())
      throw bad_data("lane successor graph is disconnected");
  }
}

RoadNetwork ring_network(double circumference, int segments) {
  if (!(circumference > 0)) throw bad_args("ring: circumference must be positive");
  if (segments < 1) throw bad_args("ring: need at least one segment");
  RoadNetwork net;
  double len = circumference / segments;
  for (int i = 0; i < segments; ++i) {
    std::string rn = "r" + std::to_string(i);
    std::string ln = rn + "_l0";
    std::string next = "r" + std::to_string((i + 1) % segments) + "_l0";
    net.roads.push_back({rn, len, {ln}});
    net.lanes.push_back({ln, len, rn, {next}});
  }
  net.validate();
  return net;
}

RoadNetwork grid_network(int rows, int cols, double block_length) {
  if (rows < 1 || cols < 1) throw bad_args("grid: rows and cols must be >= 1");
  if (!(block_length > 0)) throw bad_args("grid: block length must be positive");
  RoadNetwork net;
  auto h = [&](int r, int c) {
    return "h" + std::to_string(r) + "_" + std::to_string(c);
  };
  auto v = [&](int r, int c) {
    return "v" + std::to_string(r) + "_" + std::to_string(c);
  };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      // eastbound block r,c ends at corner (r, c+1); straight first, then turn
      std::string hn = h(r, c), hl = hn + "_l0";
      net.roads.push_back({hn, block_length, {hl}});
      net.lanes.push_back({hl, block_length, hn,
                           {h(r, (c + 1) % cols) + "_l0", v(r, (c + 1) % cols) + "_l0"}});
      std::string vn = v(r, c), vl = vn + "_l0";
      net.roads.push_back({vn, block_length, {vl}});
      net.lanes.push_back({vl, block_length, vn,
                           {v((r + 1) % rows, c) + "_l0", h((r + 1) % rows, c) + "_l0"}});
      net.lights.push_back({"tl" + hn, {hl}, 30, 30, 0});
      net.lights.push_back({"tl" + vn, {vl}, 30, 30, 30});
    }
  net.validate();
  return net;
}

namespace {

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw bad_data(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys)
      if (it.key() == k) { known = true; break; }
    if (!known) throw bad_data(where + ": unknown key '" + it.key() + "'");
  }
}

const json& require(const json& j, const std::string& where, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw bad_data(where + ": missing key '" + key + "'");
  return *it;
}

double num(const json& j, const std::string& where, const char* key) {
  const json& v = require(j, where, key);
  if (!v.is_number()) throw bad_data(where + ": '" + std::string(key) + "' must be a number");
  return v.get<double>();
}

std::string str(const json& j, const std::string& where, const char* key) {
  const json& v = require(j, where, key);
  if (!v.is_string()) throw bad_data(where + ": '" + std::string(key) + "' must be a string");
  return v.get<std::string>();
}

std::vector<std::string> str_list(const json& v, const std::string& where) {
  if (!v.is_array()) throw bad_data(where + ": expected an array of strings");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw bad_data(where + ": expected an array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

} // namespace

ordered_json to_json(const RoadNetwork& net) {
  ordered_json j;
  j["roads"] = ordered_json::array();
  for (const auto& r : net.roads)
    j["roads"].push_back({{"name", r.name}, {"length", r.length}, {"lanes", r.lanes}});
  j["lanes"] = ordered_json::array();
  for (const auto& l : net.lanes)
    j["lanes"].push_back({{"name", l.name},
                          {"length", l.length},
                          {"road", l.road},
                          {"successors", l.successors}});
  j["lights"] = ordered_json::array();
  for (const auto& t : net.lights)
    j["lights"].push_back({{"name", t.name},
                           {"lanes", t.lanes},
                           {"green", t.green},
                           {"red", t.red},
                           {"offset", t.offset}});
  return j;
}

RoadNetwork network_from_json(const json& j) {
  check_keys(j, "network", {"roads", "lanes", "lights"});
  RoadNetwork net;
  for (const auto& r : require(j, "network", "roads")) {
    check_keys(r, "network.roads[]", {"name", "length", "lanes"});
    net.roads.push_back({str(r, "road", "name"), num(r, "road", "length"),
                         str_list(require(r, "road", "lanes"), "road.lanes")});
  }
  for (const auto& l : require(j, "network", "lanes")) {
    check_keys(l, "network.lanes[]", {"name", "length", "road", "successors"});
    LaneSpec ls{str(l, "lane", "name"), num(l, "lane", "length"),
                str(l, "lane", "road"), {}};
    if (l.contains("successors"))
      ls.successors = str_list(l.at("successors"), "lane.successors");
    net.lanes.push_back(std::move(ls));
  }
  if (j.contains("lights"))
    for (const auto& t : j.at("lights")) {
      check_keys(t, "network.lights[]", {"name", "lanes", "green", "red", "offset"});
      LightSpec ts{str(t, "light", "name"),
                   str_list(require(t, "light", "lanes"), "light.lanes"),
                   num(t, "light", "green"), num(t, "light", "red"), 0};
      if (t.contains("offset")) ts.offset = num(t, "light", "offset");
      net.lights.push_back(std::move(ts));
    }
  net.validate();
  return net;
}

ordered_json to_json(const DemandSchedule& d) {
  ordered_json j = ordered_json::array();
  for (const auto& e : d)
    j.push_back({{"depart", e.depart},
                 {"origin", e.origin},
                 {"dest", e.dest},
                 {"desired_speed", e.desired_speed}});
  return j;
}

DemandSchedule demand_from_json(const json& j) {
  if (!j.is_array()) throw bad_data("demand: expected an array");
  DemandSchedule d;
  for (const auto& e : j) {
    check_keys(e, "demand[]", {"depart", "origin", "dest", "desired_speed"});
    d.push_back({num(e, "demand entry", "depart"), str(e, "demand entry", "origin"),
                 str(e, "demand entry", "dest"), num(e, "demand entry", "desired_speed")});
  }
  return d;
}

DemandSchedule uniform_demand(const RoadNetwork& net, int count,
                              double desired_speed, double interval) {
  if (net.lanes.empty()) throw bad_data("demand: network has no lanes");
  DemandSchedule d;
  for (int i = 0; i < count; ++i) {
    const std::string& ln = net.lanes[std::size_t(i) % net.lanes.size()].name;
    d.push_back({i * interval, ln, ln, desired_speed});
  }
  return d;
}

DemandSchedule ramp_demand(const RoadNetwork& net, int count,
                           double desired_speed, double t_end) {
  if (net.lanes.empty()) throw bad_data("demand: network has no lanes");
  if (!(t_end > 0)) throw bad_args("demand: t_end must be positive");
  DemandSchedule d;
  for (int i = 0; i < count; ++i) {
    // departure rate grows linearly in t
    double depart = t_end * std::sqrt(double(i + 1) / count);
    const std::string& ln = net.lanes[std::size_t(i) % net.lanes.size()].name;
    d.push_back({depart, ln, ln, desired_speed});
  }
  return d;
}

ordered_json to_json(const OracleConfig& cfg) {
  return ordered_json{{"accel_max", cfg.accel_max},
                      {"decel_comfort", cfg.decel_comfort},
                      {"gap_min", cfg.gap_min},
                      {"headway", cfg.headway},
                      {"v_max", cfg.v_max},
                      {"tick", cfg.tick},
                      {"substeps", cfg.substeps},
                      {"look_ahead", cfg.look_ahead}};
}

OracleConfig oracle_config_from_json(const json& j) {
  check_keys(j, "oracle", {"accel_max", "decel_comfort", "gap_min", "headway",
                           "v_max", "tick", "substeps", "look_ahead"});
  OracleConfig cfg;
  auto get = [&](const char* key, double& slot) {
    if (j.contains(key)) slot = num(j, "oracle", key);
  };
  get("accel_max", cfg.accel_max);
  get("decel_comfort", cfg.decel_comfort);
  get("gap_min", cfg.gap_min);
  get("headway", cfg.headway);
  get("v_max", cfg.v_max);
  get("tick", cfg.tick);
  get("look_ahead", cfg.look_ahead);
  if (j.contains("substeps")) {
    const json& v = j.at("substeps");
    if (!v.is_number_integer() || v.get<int>() < 1)
      throw bad_data("oracle: 'substeps' must be a positive integer");
    cfg.substeps = v.get<int>();
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// oracle

namespace {

struct PhaseState {
  bool green = true;
  double time_in_phase = 0;
};

PhaseState phase_at(const LightSpec& tl, double t) {
  double cycle = tl.green + tl.red;
  double tau = std::fmod(t - tl.offset, cycle);
  if (tau < 0) tau += cycle;
  if (tau < tl.green) return {true, tau};
  return {false, tau - tl.green};
}

struct LaneRT {
  double len = 0;
  std::vector<std::size_t> succ;
  int light = -1; // stop line at this lane's end
};

struct VehRT {
  std::vector<std::size_t> route; // route[rpos] is the current lane
  std::size_t rpos = 0;
  bool circulate = false;
  std::size_t lane = 0;
  double pos = 0, speed = 0, accel = 0;
  double v0 = 0;
  bool active = false, done = false;
  bool was_delayed = false;
  double first_block = 0;
};

struct LeaderInfo {
  bool found = false;
  double gap = 0;
  double speed = 0;
};

} // namespace

OracleResult run_oracle(const RoadNetwork& net, const DemandSchedule& demand,
                        int steps, const OracleConfig& cfg) {
  net.validate();
  if (steps < 0) throw bad_args("oracle: steps must be >= 0");
  if (!(cfg.tick > 0) || cfg.substeps < 1 || !(cfg.v_max > 0) ||
      !(cfg.accel_max > 0) || !(cfg.decel_comfort > 0) || !(cfg.gap_min > 0) ||
      !(cfg.headway >= 0) || !(cfg.look_ahead > 0))
    throw bad_args("oracle: invalid config");

  std::map<std::string, std::size_t> lane_by;
  for (std::size_t i = 0; i < net.lanes.size(); ++i) lane_by[net.lanes[i].name] = i;
  std::vector<LaneRT> L(net.lanes.size());
  for (std::size_t i = 0; i < net.lanes.size(); ++i) {
    L[i].len = net.lanes[i].length;
    for (const auto& s : net.lanes[i].successors) L[i].succ.push_back(lane_by.at(s));
  }
  for (std::size_t t = 0; t < net.lights.size(); ++t)
    for (const auto& ln : net.lights[t].lanes) {
      LaneRT& lr = L[lane_by.at(ln)];
      if (lr.light < 0) lr.light = int(t);
    }

  for (std::size_t i = 0; i < demand.size(); ++i) {
    const DemandEntry& e = demand[i];
    std::string where = "demand entry " + std::to_string(i);
    if (!lane_by.count(e.origin)) throw bad_data(where + ": unknown origin '" + e.origin + "'");
    if (!lane_by.count(e.dest)) throw bad_data(where + ": unknown dest '" + e.dest + "'");
    if (!(e.desired_speed > 0)) throw bad_data(where + ": desired speed must be positive");
    if (!(e.depart >= 0) || !std::isfinite(e.depart))
      throw bad_data(where + ": bad departure time");
    if (i > 0 && e.depart < demand[i - 1].depart - 1e-12)
      throw bad_data(where + ": departure times must be non-decreasing");
  }

  std::vector<VehRT> veh(demand.size());
  for (std::size_t i = 0; i < demand.size(); ++i) {
    VehRT& v = veh[i];
    std::size_t o = lane_by.at(demand[i].origin), d = lane_by.at(demand[i].dest);
    v.v0 = std::min(demand[i].desired_speed, cfg.v_max);
    if (o == d) {
      v.circulate = true;
      v.route = {o};
    } else {
      // shortest-hop route, fixed at departure
      std::vector<int> parent(L.size(), -1);
      std::vector<std::size_t> queue{o};
      parent[o] = int(o);
      for (std::size_t q = 0; q < queue.size() && parent[d] < 0; ++q)
        for (std::size_t s : L[queue[q]].succ)
          if (parent[s] < 0) {
            parent[s] = int(queue[q]);
            queue.push_back(s);
          }
      if (parent[d] < 0)
        throw bad_data("demand entry " + std::to_string(i) + ": no route from '" +
                       demand[i].origin + "' to '" + demand[i].dest + "'");
      for (std::size_t cur = d; cur != o; cur = std::size_t(parent[cur]))
        v.route.push_back(cur);
      v.route.push_back(o);
      std::reverse(v.route.begin(), v.route.end());
    }
    v.lane = o;
  }

  OracleResult res;
  res.tick = cfg.tick;
  res.vehicles.resize(demand.size());
  for (std::size_t i = 0; i < demand.size(); ++i)
    res.vehicles[i].id = "veh" + std::to_string(i);
  res.lights.resize(net.lights.size());
  for (std::size_t i = 0; i < net.lights.size(); ++i)
    res.lights[i].name = net.lights[i].name;

  // lane occupancy, rebuilt per substep: (pos, vehicle) ascending
  std::vector<std::vector<std::pair<double, std::size_t>>> occ(L.size());
  auto rebuild_occ = [&]() {
    for (auto& o : occ) o.clear();
    for (std::size_t i = 0; i < veh.size(); ++i)
      if (veh[i].active) occ[veh[i].lane].emplace_back(veh[i].pos, i);
    for (auto& o : occ) std::sort(o.begin(), o.end());
  };

  // the lane after `cur` on this vehicle's path; npos when the path ends
  const std::size_t kNone = std::size_t(-1);
  auto next_lane = [&](const VehRT& v, std::size_t cur, std::size_t rpos) {
    if (v.circulate) return L[cur].succ.empty() ? kNone : L[cur].succ[0];
    return rpos + 1 < v.route.size() ? v.route[rpos + 1] : kNone;
  };

  auto red_at_end = [&](std::size_t lane, double t) {
    return L[lane].light >= 0 && !phase_at(net.lights[L[lane].light], t).green;
  };

  auto find_leader = [&](std::size_t i, double t) {
    const VehRT& v = veh[i];
    LeaderInfo out;
    const auto& same = occ[v.lane];
    auto it = std::upper_bound(same.begin(), same.end(), std::make_pair(v.pos, i));
    if (it != same.end()) {
      out = {true, it->first - v.pos, veh[it->second].speed};
      return out.gap < cfg.look_ahead ? out : LeaderInfo{};
    }
    double dist = L[v.lane].len - v.pos;
    std::size_t cur = v.lane, rpos = v.rpos;
    for (int hops = 0; hops < 1024; ++hops) {
      if (red_at_end(cur, t))
        return dist < cfg.look_ahead ? LeaderInfo{true, dist, 0} : LeaderInfo{};
      std::size_t nxt = next_lane(v, cur, rpos);
      if (nxt == kNone || dist >= cfg.look_ahead) return LeaderInfo{};
      if (!occ[nxt].empty()) {
        double gap = dist + occ[nxt].front().first;
        return gap < cfg.look_ahead
                   ? LeaderInfo{true, gap, veh[occ[nxt].front().second].speed}
                   : LeaderInfo{};
      }
      dist += L[nxt].len;
      cur = nxt;
      ++rpos;
    }
    return LeaderInfo{};
  };

  double sqrt_ab = std::sqrt(cfg.accel_max * cfg.decel_comfort);
  double decel_cap = std::max(cfg.accel_max, cfg.decel_comfort);
  auto idm = [&](const VehRT& v, const LeaderInfo& lead) {
    double free = std::pow(v.speed / v.v0, 4.0);
    double inter = 0;
    if (lead.found) {
      double s_star = cfg.gap_min +
                      std::max(0.0, v.speed * cfg.headway +
                                        v.speed * (v.speed - lead.speed) / (2 * sqrt_ab));
      double s = std::max(lead.gap, 1e-3);
      inter = (s_star / s) * (s_star / s);
    }
    double a = cfg.accel_max * (1.0 - free - inter);
    return std::min(std::max(a, -decel_cap), cfg.accel_max);
  };

  std::size_t pending = 0; // demand entries before this are placed or given up
  double dts = cfg.tick / cfg.substeps;

  for (int k = 0; k <= steps; ++k) {
    double t = k * cfg.tick;

    rebuild_occ();
    for (std::size_t i = pending; i < demand.size(); ++i) {
      if (demand[i].depart > t + 1e-9) break;
      VehRT& v = veh[i];
      if (v.active || v.done) continue;
      bool blocked = false;
      for (const auto& [p, j] : occ[lane_by.at(demand[i].origin)])
        if (p < cfg.gap_min) { blocked = true; (void)j; break; }
      if (blocked) {
        if (!v.was_delayed) {
          v.was_delayed = true;
          v.first_block = t;
        }
        continue;
      }
      v.active = true;
      v.lane = v.route[0];
      v.rpos = 0;
      v.pos = 0;
      v.speed = 0;
      v.accel = 0;
      occ[v.lane].insert(occ[v.lane].begin(), {0.0, i});
      if (v.was_delayed) {
        std::ostringstream msg;
        msg << res.vehicles[i].id << " delayed from t=" << v.first_block << " to t=" << t;
        res.delayed.push_back(msg.str());
      }
    }
    while (pending < veh.size() && (veh[pending].active || veh[pending].done)) ++pending;

    res.sample_times.push_back(t);
    for (std::size_t i = 0; i < veh.size(); ++i)
      if (veh[i].active)
        res.vehicles[i].points.push_back(
            {t, net.lanes[veh[i].lane].name, veh[i].pos, veh[i].speed, veh[i].accel});
    for (std::size_t i = 0; i < net.lights.size(); ++i) {
      PhaseState p = phase_at(net.lights[i], t);
      res.lights[i].points.push_back({t, p.green, p.time_in_phase});
    }
    if (k == steps) break;

    for (int sub = 0; sub < cfg.substeps; ++sub) {
      double ts = t + sub * dts;
      rebuild_occ();
      std::vector<double> acc(veh.size(), 0);
      for (std::size_t i = 0; i < veh.size(); ++i)
        if (veh[i].active) acc[i] = idm(veh[i], find_leader(i, ts));
      for (std::size_t i = 0; i < veh.size(); ++i) {
        VehRT& v = veh[i];
        if (!v.active) continue;
        double v_old = v.speed;
        v.speed = std::min(std::max(v.speed + acc[i] * dts, 0.0), cfg.v_max);
        v.accel = std::min(std::max((v.speed - v_old) / dts, -decel_cap), cfg.accel_max);
        v.pos += v.speed * dts;
        while (v.pos >= L[v.lane].len - 1e-12) {
          if (red_at_end(v.lane, ts + dts)) {
            // stop line holds on red; braking normally prevents reaching it
            v.pos = std::max(L[v.lane].len - 0.5 * cfg.gap_min, 0.0);
            v.speed = 0;
            v.accel = std::max(-decel_cap, std::min(v.accel, 0.0));
            break;
          }
          std::size_t nxt = next_lane(v, v.lane, v.rpos);
          if (nxt == kNone) { // past the destination lane
            v.active = false;
            v.done = true;
            break;
          }
          v.pos -= L[v.lane].len;
          v.lane = nxt;
          if (!v.circulate) ++v.rpos;
        }
      }
      // positional guard: same-lane gaps stay >= gap_min / 2
      rebuild_occ();
      for (auto& o : occ)
        for (std::size_t q = o.size(); q-- > 1;) {
          VehRT& f = veh[o[q - 1].second];
          const VehRT& l = veh[o[q].second];
          double cap = l.pos - 0.5 * cfg.gap_min;
          if (f.pos > cap) {
            f.pos = std::max(cap, 0.0);
            f.speed = std::min(f.speed, l.speed);
            o[q - 1].first = f.pos;
          }
        }
      // same guard across the lane boundary for each lane's front vehicle
      for (auto& o : occ) {
        if (o.empty()) continue;
        VehRT& f = veh[o.back().second];
        std::size_t nxt = next_lane(f, f.lane, f.rpos);
        if (nxt == kNone || occ[nxt].empty()) continue;
        const VehRT& l = veh[occ[nxt].front().second];
        double cap = L[f.lane].len + occ[nxt].front().first - 0.5 * cfg.gap_min;
        if (f.pos > cap) {
          f.pos = std::max(cap, 0.0);
          f.speed = std::min(f.speed, l.speed);
        }
      }
    }
  }

  for (std::size_t i = pending; i < veh.size(); ++i)
    if (!veh[i].active && !veh[i].done && veh[i].was_delayed)
      res.delayed.push_back(res.vehicles[i].id + " not inserted by end of run (origin full)");
  return res;
}

// ---------------------------------------------------------------------------
// event-log conversion

namespace {

struct TickVeh { // one vehicle's point at a sample time
  double pos;
  std::size_t track;
  double speed;
};

} // namespace

graph::EventLog to_graph_events(const OracleResult& result, const RoadNetwork& net,
                                double follow_threshold, double empty_lane_speed) {
  using namespace graph;
  if (!(result.tick > 0)) throw bad_data("conversion: tick must be positive");

  std::map<std::string, std::size_t> lane_by, road_by;
  for (std::size_t i = 0; i < net.lanes.size(); ++i) lane_by[net.lanes[i].name] = i;
  for (std::size_t i = 0; i < net.roads.size(); ++i) road_by[net.roads[i].name] = i;

  NodeId next_id = 0;
  std::vector<NodeId> road_id(net.roads.size()), lane_id(net.lanes.size()),
      light_id(net.lights.size());
  for (auto& id : road_id) id = next_id++;
  for (auto& id : lane_id) id = next_id++;
  for (auto& id : light_id) id = next_id++;
  std::vector<NodeId> veh_id(result.vehicles.size());
  for (auto& id : veh_id) id = next_id++;

  // sample times: the oracle's own list, or the union of point times
  std::vector<double> times = result.sample_times;
  if (times.empty()) {
    std::set<double> ts;
    for (const auto& tr : result.vehicles)
      for (const auto& p : tr.points) ts.insert(p.t);
    for (const auto& lt : result.lights)
      for (const auto& p : lt.points) ts.insert(p.t);
    times.assign(ts.begin(), ts.end());
  }

  // per track: cursor into points; validated lanes
  for (const auto& tr : result.vehicles)
    for (const auto& p : tr.points)
      if (!lane_by.count(p.lane))
        throw bad_data("conversion: trajectory of " + tr.id + " uses unknown lane '" +
                       p.lane + "'");

  EventLog log;
  log.step_duration = result.tick;
  int ord = 0;
  auto push = [&](Event e) { log.events.push_back(std::move(e)); };

  // infrastructure at t=0; states reflect the first sample when there is one
  auto lane_state_at = [&](std::size_t li, const std::vector<TickVeh>& on) {
    double len_km = net.lanes[li].length / 1000.0;
    if (on.empty()) return make_lane_state(empty_lane_speed, 0.0);
    double sum = 0;
    for (const auto& tv : on) sum += tv.speed;
    return make_lane_state(sum / double(on.size()), double(on.size()) / len_km);
  };
  auto road_state_at = [&](std::size_t ri, double speed_sum, int count) {
    if (count == 0) return make_road_state(0.0);
    return make_road_state(speed_sum * 3600.0 / net.roads[ri].length);
  };

  // resolve per-time vehicle placement lazily while scanning times in order
  std::vector<std::size_t> cursor(result.vehicles.size(), 0);
  std::vector<bool> added(result.vehicles.size(), false), removed(result.vehicles.size(), false);
  std::vector<std::string> prev_lane(result.vehicles.size());

  for (std::size_t ti = 0; ti < times.size(); ++ti) {
    double t = times[ti];
    ord = 0;

    // collect points at t, keyed by lane, plus per-vehicle lookup
    std::vector<const TrajPoint*> here(result.vehicles.size(), nullptr);
    std::map<std::size_t, std::vector<TickVeh>> by_lane; // lane index -> sorted
    for (std::size_t vi = 0; vi < result.vehicles.size(); ++vi) {
      const auto& pts = result.vehicles[vi].points;
      std::size_t& c = cursor[vi];
      while (c < pts.size() && pts[c].t < t - 1e-9) ++c;
      if (c < pts.size() && std::abs(pts[c].t - t) <= 1e-9) {
        here[vi] = &pts[c];
        by_lane[lane_by.at(pts[c].lane)].push_back({pts[c].pos, vi, pts[c].speed});
      }
    }
    for (auto& [li, on] : by_lane)
      std::sort(on.begin(), on.end(), [](const TickVeh& a, const TickVeh& b) {
        return a.pos != b.pos ? a.pos < b.pos : a.track < b.track;
      });

    if (ti == 0) {
      // static topology first
      for (std::size_t ri = 0; ri < net.roads.size(); ++ri) {
        double sum = 0;
        int cnt = 0;
        for (const auto& ln : net.roads[ri].lanes) {
          auto it = by_lane.find(lane_by.at(ln));
          if (it == by_lane.end()) continue;
          for (const auto& tv : it->second) { sum += tv.speed; ++cnt; }
        }
        push(NodeAdd{t, ord++, road_id[ri], NodeKind::Road, road_state_at(ri, sum, cnt)});
      }
      for (std::size_t li = 0; li < net.lanes.size(); ++li) {
        auto it = by_lane.find(li);
        push(NodeAdd{t, ord++, lane_id[li], NodeKind::Lane,
                     lane_state_at(li, it == by_lane.end() ? std::vector<TickVeh>{}
                                                           : it->second)});
      }
      for (std::size_t gi = 0; gi < net.lights.size(); ++gi) {
        bool green = true;
        double tip = 0;
        if (gi < result.lights.size() && !result.lights[gi].points.empty()) {
          green = result.lights[gi].points[0].green;
          tip = result.lights[gi].points[0].time_in_phase;
        }
        push(NodeAdd{t, ord++, light_id[gi], NodeKind::Light, make_light_state(green, tip)});
      }
      for (std::size_t li = 0; li < net.lanes.size(); ++li)
        push(EdgeAdd{t, ord++, RelKind::LaneOfRoad, lane_id[li],
                     road_id[road_by.at(net.lanes[li].road)]});
      for (std::size_t gi = 0; gi < net.lights.size(); ++gi)
        for (const auto& ln : net.lights[gi].lanes)
          push(EdgeAdd{t, ord++, RelKind::Controls, light_id[gi], lane_id[lane_by.at(ln)]});
    }

    // vehicles entering at this sample
    for (std::size_t vi = 0; vi < result.vehicles.size(); ++vi)
      if (here[vi] && !added[vi]) {
        const TrajPoint& p = *here[vi];
        push(NodeAdd{t, ord++, veh_id[vi], NodeKind::Vehicle,
                     make_vehicle_state(p.speed, p.accel, p.pos)});
        added[vi] = true;
      }
    // every trajectory point becomes exactly one state update
    for (std::size_t vi = 0; vi < result.vehicles.size(); ++vi)
      if (here[vi])
        push(StateUpdate{t, ord++, veh_id[vi],
                         make_vehicle_state(here[vi]->speed, here[vi]->accel, here[vi]->pos)});
    if (ti > 0) {
      for (std::size_t li = 0; li < net.lanes.size(); ++li) {
        auto it = by_lane.find(li);
        push(StateUpdate{t, ord++, lane_id[li],
                         lane_state_at(li, it == by_lane.end() ? std::vector<TickVeh>{}
                                                               : it->second)});
      }
      for (std::size_t ri = 0; ri < net.roads.size(); ++ri) {
        double sum = 0;
        int cnt = 0;
        for (const auto& ln : net.roads[ri].lanes) {
          auto it = by_lane.find(lane_by.at(ln));
          if (it == by_lane.end()) continue;
          for (const auto& tv : it->second) { sum += tv.speed; ++cnt; }
        }
        push(StateUpdate{t, ord++, road_id[ri], road_state_at(ri, sum, cnt)});
      }
      for (std::size_t gi = 0; gi < result.lights.size() && gi < net.lights.size(); ++gi) {
        const auto& pts = result.lights[gi].points;
        const PhasePoint* pp = nullptr;
        for (const auto& p : pts)
          if (std::abs(p.t - t) <= 1e-9) { pp = &p; break; }
        if (pp)
          push(StateUpdate{t, ord++, light_id[gi], make_light_state(pp->green, pp->time_in_phase)});
      }
    }

    // OnLane on entry and on lane change
    for (std::size_t vi = 0; vi < result.vehicles.size(); ++vi)
      if (here[vi] && here[vi]->lane != prev_lane[vi]) {
        push(EdgeAdd{t, ord++, RelKind::OnLane, veh_id[vi], lane_id[lane_by.at(here[vi]->lane)]});
        prev_lane[vi] = here[vi]->lane;
      }

    // Follows: nearest vehicle ahead within follow_threshold, chasing
    // successor lanes breadth-first by accumulated distance
    for (std::size_t vi = 0; vi < result.vehicles.size(); ++vi) {
      if (!here[vi]) continue;
      std::size_t li = lane_by.at(here[vi]->lane);
      const auto& same = by_lane.at(li);
      std::size_t lead = std::size_t(-1);
      double best = follow_threshold;
      for (const auto& tv : same)
        if (tv.pos > here[vi]->pos || (tv.pos == here[vi]->pos && tv.track > vi)) {
          double gap = tv.pos - here[vi]->pos;
          if (gap < best) { best = gap; lead = tv.track; }
          break; // sorted: the first ahead is the nearest
        }
      if (lead == std::size_t(-1)) {
        // expand over successors, nearest first
        std::vector<std::pair<double, std::size_t>> frontier{
            {net.lanes[li].length - here[vi]->pos, li}};
        std::set<std::size_t> seen{li};
        for (std::size_t f = 0; f < frontier.size(); ++f) {
          auto [dist, cur] = frontier[f];
          if (dist >= best) continue;
          for (const auto& sn : net.lanes[cur].successors) {
            std::size_t s = lane_by.at(sn);
            if (!seen.insert(s).second) continue;
            auto it = by_lane.find(s);
            if (it != by_lane.end() && !it->second.empty()) {
              double gap = dist + it->second.front().pos;
              if (gap < best) { best = gap; lead = it->second.front().track; }
            } else {
              frontier.emplace_back(dist + net.lanes[s].length, s);
            }
          }
          std::sort(frontier.begin() + long(f) + 1, frontier.end());
        }
      }
      if (lead != std::size_t(-1))
        push(EdgeAdd{t, ord++, RelKind::Follows, veh_id[vi], veh_id[lead]});
    }

    // departures: a track that ended earlier is removed at the next sample
    for (std::size_t vi = 0; vi < result.vehicles.size(); ++vi)
      if (added[vi] && !removed[vi] && !here[vi]) {
        push(NodeRemove{t, ord++, veh_id[vi]});
        removed[vi] = true;
      }
  }
  return log;
}

// ---------------------------------------------------------------------------
// SUMO floating-car-data import

namespace {

struct XmlTag {
  std::string name;
  std::map<std::string, std::string> attrs;
  bool closing = false;
  bool self_closing = false;
  std::size_t line = 0;
};

class XmlScanner {
public:
  XmlScanner(std::string text, std::string path)
      : s_(std::move(text)), path_(std::move(path)) {}

  // next element tag, skipping prolog/comments; false at end of input
  bool next(XmlTag& tag) {
    for (;;) {
      skip_ws();
      if (i_ >= s_.size()) return false;
      if (s_[i_] != '<') fail("text outside of tags");
      if (starts_with("<?")) {
        skip_until("?>");
        continue;
      }
      if (starts_with("<!--")) {
        skip_until("-->");
        continue;
      }
      break;
    }
    tag = XmlTag{};
    tag.line = line_;
    ++i_; // '<'
    if (i_ < s_.size() && s_[i_] == '/') {
      tag.closing = true;
      ++i_;
    }
    tag.name = read_name();
    if (tag.name.empty()) fail("missing tag name");
    for (;;) {
      skip_ws();
      if (i_ >= s_.size()) fail("unexpected end of file inside tag");
      if (s_[i_] == '>') {
        ++i_;
        return true;
      }
      if (s_[i_] == '/') {
        ++i_;
        if (i_ >= s_.size() || s_[i_] != '>') fail("expected '>' after '/'");
        ++i_;
        tag.self_closing = true;
        return true;
      }
      if (tag.closing) fail("attributes on a closing tag");
      std::string key = read_name();
      if (key.empty()) fail("malformed attribute");
      skip_ws();
      if (i_ >= s_.size() || s_[i_] != '=') fail("attribute '" + key + "' missing '='");
      ++i_;
      skip_ws();
      if (i_ >= s_.size() || (s_[i_] != '"' && s_[i_] != '\'')) fail("attribute value must be quoted");
      char q = s_[i_++];
      std::string val;
      while (i_ < s_.size() && s_[i_] != q) {
        if (s_[i_] == '\n') ++line_;
        val.push_back(s_[i_++]);
      }
      if (i_ >= s_.size()) fail("unterminated attribute value");
      ++i_;
      tag.attrs[key] = std::move(val);
    }
  }

  [[noreturn]] void fail(const std::string& msg, std::size_t line = 0) const {
    throw bad_data(path_ + ": line " + std::to_string(line ? line : line_) +
                   ": malformed xml: " + msg);
  }

  [[noreturn]] void missing(const std::string& elem, const std::string& attr,
                            std::size_t line) const {
    throw bad_data(path_ + ": line " + std::to_string(line) + ": <" + elem +
                   "> missing attribute '" + attr + "'");
  }

  const std::string& path() const { return path_; }

private:
  void skip_ws() {
    while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) {
      if (s_[i_] == '\n') ++line_;
      ++i_;
    }
  }

  bool starts_with(const char* p) const { return s_.compare(i_, std::strlen(p), p) == 0; }

  void skip_until(const char* end) {
    std::size_t at = s_.find(end, i_);
    if (at == std::string::npos) fail(std::string("unterminated '") + end + "'");
    for (std::size_t k = i_; k < at; ++k)
      if (s_[k] == '\n') ++line_;
    i_ = at + std::strlen(end);
  }

  std::string read_name() {
    std::string out;
    while (i_ < s_.size() &&
           (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_' ||
            s_[i_] == '-' || s_[i_] == ':' || s_[i_] == '.'))
      out.push_back(s_[i_++]);
    return out;
  }

  std::string s_;
  std::string path_;
  std::size_t i_ = 0;
  std::size_t line_ = 1;
};

double parse_attr_num(const XmlScanner& sc, const XmlTag& tag, const char* key) {
  auto it = tag.attrs.find(key);
  if (it == tag.attrs.end()) sc.missing(tag.name, key, tag.line);
  const std::string& v = it->second;
  char* end = nullptr;
  double out = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || v.empty() || !std::isfinite(out))
    sc.fail("attribute '" + std::string(key) + "' is not a number: '" + v + "'", tag.line);
  return out;
}

const std::string& parse_attr_str(const XmlScanner& sc, const XmlTag& tag, const char* key) {
  auto it = tag.attrs.find(key);
  if (it == tag.attrs.end()) sc.missing(tag.name, key, tag.line);
  return it->second;
}

} // namespace

OracleResult import_fcd(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  XmlScanner sc(buf.str(), path);

  OracleResult res;
  std::map<std::string, std::size_t> track_by;
  std::set<std::string> in_step;
  std::vector<std::string> stack;
  bool in_timestep = false;
  double t_cur = 0;
  bool have_root = false;

  XmlTag tag;
  while (sc.next(tag)) {
    if (tag.closing) {
      if (stack.empty() || stack.back() != tag.name)
        sc.fail("mismatched closing tag '" + tag.name + "'", tag.line);
      stack.pop_back();
      if (tag.name == "timestep") in_timestep = false;
      continue;
    }
    if (!have_root) {
      have_root = true;
      if (!tag.self_closing) stack.push_back(tag.name);
      continue;
    }
    if (stack.empty()) sc.fail("content after the root element", tag.line);
    if (tag.name == "timestep") {
      if (in_timestep) sc.fail("nested timestep", tag.line);
      double t = parse_attr_num(sc, tag, "time");
      if (!res.sample_times.empty() && t <= res.sample_times.back() + 1e-12)
        throw bad_data(path + ": line " + std::to_string(tag.line) +
                       ": timestep times must increase");
      res.sample_times.push_back(t);
      t_cur = t;
      in_step.clear();
      if (!tag.self_closing) {
        stack.push_back(tag.name);
        in_timestep = true;
      }
    } else if (tag.name == "vehicle" && in_timestep) {
      const std::string& id = parse_attr_str(sc, tag, "id");
      if (!in_step.insert(id).second)
        throw bad_data(path + ": line " + std::to_string(tag.line) +
                       ": duplicate vehicle '" + id + "' in timestep");
      double speed = parse_attr_num(sc, tag, "speed");
      const std::string& lane = parse_attr_str(sc, tag, "lane");
      double pos = parse_attr_num(sc, tag, "pos");
      auto [it, fresh] = track_by.try_emplace(id, res.vehicles.size());
      if (fresh) res.vehicles.push_back({id, {}});
      res.vehicles[it->second].points.push_back({t_cur, lane, pos, speed, 0});
      if (!tag.self_closing) stack.push_back(tag.name);
    } else {
      // unknown elements are ignored, but must still nest properly
      if (!tag.self_closing) stack.push_back(tag.name);
    }
  }
  if (!stack.empty()) sc.fail("unexpected end of file: <" + stack.back() + "> is still open");
  if (!have_root) sc.fail("empty document");

  // accelerations by finite-differencing speeds; the last point repeats the
  // previous slope
  for (auto& tr : res.vehicles) {
    auto& p = tr.points;
    for (std::size_t i = 0; i + 1 < p.size(); ++i)
      p[i].accel = (p[i + 1].speed - p[i].speed) / (p[i + 1].t - p[i].t);
    if (p.size() > 1) p.back().accel = p[p.size() - 2].accel;
  }
  if (res.sample_times.size() > 1) {
    double tick = res.sample_times[1] - res.sample_times[0];
    for (std::size_t i = 2; i < res.sample_times.size(); ++i)
      tick = std::min(tick, res.sample_times[i] - res.sample_times[i - 1]);
    res.tick = tick;
  }
  return res;
}

RoadNetwork skeleton_network(const OracleResult& result, double lane_length) {
  RoadNetwork net;
  std::set<std::string> seen;
  for (const auto& tr : result.vehicles)
    for (const auto& p : tr.points)
      if (seen.insert(p.lane).second) {
        std::string rn = p.lane + "_road";
        net.roads.push_back({rn, lane_length, {p.lane}});
        net.lanes.push_back({p.lane, lane_length, rn, {}});
      }
  return net;
}

} // namespace tfm::micro
