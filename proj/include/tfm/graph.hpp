#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace tfm::graph {

using NodeId = std::uint32_t;

enum class NodeKind { Vehicle, Lane, Road, Light };
enum class RelKind { Follows, OnLane, LaneOfRoad, Controls, AdjacentLane };

constexpr int kNodeKinds = 4;
constexpr int kRelKinds = 5;

// Shared state layout, D = 8. Slots 0..2 are kind-specific, 3..6 the kind
// one-hot (vehicle, lane, road, light), 7 padding.
//   Vehicle: [speed m/s, accel m/s^2, position m, 1,0,0,0, 0]
//   Lane:    [mean speed, occupancy veh/km, 0,   0,1,0,0, 0]
//   Road:    [flow veh/h, 0, 0,                  0,0,1,0, 0]
//   Light:   [green, red, time-in-phase s,       0,0,0,1, 0]
constexpr int kStateDim = 8;

const char* to_string(NodeKind k);
const char* to_string(RelKind r);
NodeKind parse_node_kind(const std::string& s);
RelKind parse_rel_kind(const std::string& s);

using State = std::vector<double>;

State make_vehicle_state(double speed, double accel, double pos);
State make_lane_state(double mean_speed, double occupancy);
State make_road_state(double flow);
State make_light_state(bool green, double time_in_phase);

// Events carry the absolute time t and the ordinal i of the line within
// that timestamp; (t, i) orders every event in a log totally.
struct NodeAdd {
  double t = 0;
  int ordinal = 0;
  NodeId node = 0;
  NodeKind kind = NodeKind::Vehicle;
  State s;
};

struct NodeRemove {
  double t = 0;
  int ordinal = 0;
  NodeId node = 0;
};

struct EdgeAdd {
  double t = 0;
  int ordinal = 0;
  RelKind rel = RelKind::Follows;
  NodeId u = 0;
  NodeId v = 0;
};

struct StateUpdate {
  double t = 0;
  int ordinal = 0;
  NodeId node = 0;
  State s;
};

using Event = std::variant<NodeAdd, NodeRemove, EdgeAdd, StateUpdate>;

double event_time(const Event& e);
int event_ordinal(const Event& e);

struct EventLog {
  std::vector<Event> events;
  double step_duration = 1.0;
};

struct NodeRecord {
  NodeKind kind = NodeKind::Vehicle;
  State state;
  double t_add = 0;
  double t_state = 0; // time of the most recent state write
};

struct TimedEdge {
  double t = 0;
  int ordinal = 0;
  RelKind rel = RelKind::Follows;
  NodeId u = 0;
  NodeId v = 0;
};

// Discrete step index covering time t when steps last dt seconds. Events in
// ((n-1)*dt, n*dt] belong to step n.
std::int64_t step_for_time(double t, double dt);

struct Snapshot {
  double dt = 1.0;
  int window = 5; // edges older than `window` steps expire
  std::int64_t step = -1;
  double last_time = -std::numeric_limits<double>::infinity();
  std::map<NodeId, NodeRecord> nodes;
  std::vector<TimedEdge> edges; // kept in (t, ordinal) order, windowed
  std::set<NodeId> used_ids;

  explicit Snapshot(double step_duration = 1.0, int recency_window = 5)
      : dt(step_duration), window(recency_window) {}

  double now() const { return double(step) * dt; }
  bool alive(NodeId id) const { return nodes.count(id) != 0; }
  const NodeRecord& node(NodeId id) const;
};

// Applies one step batch in place. An empty batch advances the step counter
// by one; a nonempty batch moves the step to cover the latest event time.
// Edges that fall out of the recency window are dropped. Applying the same
// events one by one or in a single call yields the same snapshot.
void apply_events_inplace(Snapshot& g, const Event* begin, const Event* end);
void apply_events_inplace(Snapshot& g, const std::vector<Event>& events);

// Pure form: the input snapshot is left untouched.
Snapshot apply_events(const Snapshot& g, const std::vector<Event>& events);

struct StepBatch {
  std::int64_t step = 0;
  std::vector<Event> events;
};

// Groups a log into per-step batches (only steps that have events appear).
std::vector<StepBatch> split_by_step(const EventLog& log);

// Replays a log from scratch. upto_step < 0 means the whole log.
Snapshot replay(const EventLog& log, std::int64_t upto_step = -1,
                int window = 5);

struct Neighbor {
  NodeId other = 0;
  RelKind rel = RelKind::Follows;
  bool outgoing = false; // true when the queried node is the edge's u
  double t = 0;
  int ordinal = 0;
};

// The K most recent distinct live neighbors of v among the snapshot's
// (already windowed) edges, newest first. A neighbor reached through several
// edges contributes only its latest interaction; ties in t break on the
// ordinal (higher is later).
std::vector<Neighbor> temporal_neighbors(const Snapshot& g, NodeId v, int K);

// Same neighborhoods for every live node in one pass over the edge list.
std::map<NodeId, std::vector<Neighbor>> neighbor_lists(const Snapshot& g, int K);

// Log-wide query: K most recent distinct neighbors of v over all events with
// time <= t_n, ignoring any recency window. Throws if v is not alive at t_n.
std::vector<Neighbor> temporal_neighbors(const EventLog& log, NodeId v,
                                         double t_n, int K);

struct Violation {
  std::size_t index = 0; // 0-based position in log.events
  std::string message;
};

// Full replay with error collection; offending events are skipped so later
// events are still checked. Empty result means the log is valid.
std::vector<Violation> validate_log(const EventLog& log);

} // namespace tfm::graph
