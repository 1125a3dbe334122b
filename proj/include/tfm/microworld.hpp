#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tfm/graph.hpp"

namespace tfm::micro {

// Desk-scale road network. Names are the identifiers; lanes are one-way and
// chain through `successors`. A light sits at the end of each lane it
// controls (the stop line).
struct RoadSpec {
  std::string name;
  double length = 0;
  std::vector<std::string> lanes;
};

struct LaneSpec {
  std::string name;
  double length = 0;
  std::string road;
  std::vector<std::string> successors;
};

struct LightSpec {
  std::string name;
  std::vector<std::string> lanes;
  double green = 30, red = 30;
  double offset = 0; // shifts the cycle start; green comes first
};

struct RoadNetwork {
  std::vector<RoadSpec> roads;
  std::vector<LaneSpec> lanes;
  std::vector<LightSpec> lights;

  const LaneSpec* find_lane(const std::string& name) const;
  const LaneSpec& lane(const std::string& name) const; // throws BadData
  double total_lane_km() const;
  // Unique names, consistent road/lane links, positive lengths, lights on
  // existing lanes, successor graph connected (ignoring direction).
  void validate() const;
};

RoadNetwork ring_network(double circumference, int segments);
// rows x cols torus of one-way streets: eastbound rows, southbound columns,
// right/straight turns at every corner, signals alternating by approach
RoadNetwork grid_network(int rows, int cols, double block_length);

nlohmann::ordered_json to_json(const RoadNetwork& net);
RoadNetwork network_from_json(const nlohmann::json& j);

struct DemandEntry {
  double depart = 0;
  std::string origin;
  std::string dest; // dest == origin keeps the vehicle circulating
  double desired_speed = 13.9;
};
using DemandSchedule = std::vector<DemandEntry>;

nlohmann::ordered_json to_json(const DemandSchedule& d);
DemandSchedule demand_from_json(const nlohmann::json& j);

// count vehicles spaced `interval` seconds apart, origins round-robin over
// the network's lanes, circulating
DemandSchedule uniform_demand(const RoadNetwork& net, int count,
                              double desired_speed, double interval);
// departures densifying linearly in rate until t_end (ramping demand)
DemandSchedule ramp_demand(const RoadNetwork& net, int count,
                           double desired_speed, double t_end);

// Car-following oracle constants (IDM-style; see run_oracle).
struct OracleConfig {
  double accel_max = 1.5;      // a, m/s^2
  double decel_comfort = 2.0;  // b, m/s^2
  double gap_min = 2.0;        // s0, m
  double headway = 1.5;        // T, s
  double v_max = 13.9;         // m/s
  double tick = 1.0;           // s, = the event-log step duration
  int substeps = 10;           // integration substeps per tick
  double look_ahead = 100.0;   // m, leader search horizon
};

nlohmann::ordered_json to_json(const OracleConfig& cfg);
OracleConfig oracle_config_from_json(const nlohmann::json& j);

struct TrajPoint {
  double t = 0;
  std::string lane;
  double pos = 0, speed = 0, accel = 0;
};

struct VehicleTrack {
  std::string id;
  std::vector<TrajPoint> points;
};

struct PhasePoint {
  double t = 0;
  bool green = true;
  double time_in_phase = 0;
};

struct LightTrack {
  std::string name;
  std::vector<PhasePoint> points;
};

struct OracleResult {
  double tick = 1.0;
  std::vector<double> sample_times;  // ascending; tick boundaries for the oracle
  std::vector<VehicleTrack> vehicles; // demand order
  std::vector<LightTrack> lights;    // network order
  std::vector<std::string> delayed;  // delayed-insertion reports
};

// Deterministic rule-based simulation: IDM acceleration
//   a_free = a [1 - (v/v0)^4 - (s*/s)^2],  s* = s0 + max(0, vT + v dv / (2 sqrt(ab)))
// with v0 = min(desired, v_max), clamped to [-max(a,b), a]; red lights act as
// a standing leader at the stop line; a positional guard keeps gaps >= s0/2.
// Vehicles enter at their origin lane start (speed 0; blocked entries retry
// next tick and are reported) and leave past the end of their destination
// lane. Trajectories sample every tick boundary 0..steps.
OracleResult run_oracle(const RoadNetwork& net, const DemandSchedule& demand,
                        int steps, const OracleConfig& cfg);

// Event-log conversion: infrastructure nodes with LaneOfRoad/Controls edges
// at t=0, then per tick vehicle adds/updates, OnLane on lane change, Follows
// to the leader within follow_threshold, per-tick lane/road/light state
// updates, removals last. empty_lane_speed fills the mean-speed slot of
// unoccupied lanes.
graph::EventLog to_graph_events(const OracleResult& result,
                                const RoadNetwork& net,
                                double follow_threshold = 100.0,
                                double empty_lane_speed = 13.9);

// SUMO floating-car-data ingestion:
//   <timestep time="..."><vehicle id="..." speed="..." lane="..." pos="..."/>
// Unknown attributes are ignored; accelerations come from finite-differenced
// speeds. Errors carry 1-based line numbers.
OracleResult import_fcd(const std::string& path);

// One road/lane per lane name seen in the trajectories (default length
// 100 m), for converting imported data without a network file.
RoadNetwork skeleton_network(const OracleResult& result,
                             double lane_length = 100.0);

} // namespace tfm::micro
