#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tfm/graph.hpp"
#include "tfm/model.hpp"
#include "tfm/params.hpp"
#include "tfm/util.hpp"

namespace tfm::model {

struct RolloutConfig {
  int steps = 100;
  std::uint64_t seed = 0;
  bool record_states = true; // log every node's predicted state each step
};

nlohmann::ordered_json to_json(const RolloutConfig& cfg);
RolloutConfig rollout_config_from_json(const nlohmann::json& j);

// Exogenous vehicle lifecycle: the model generates edges and states, never
// nodes, so arrivals and departures are replayed from a reference log.
struct LifecycleInsert {
  std::int64_t step = 0;
  graph::NodeId node = 0;
  graph::State state;
  graph::NodeId lane = 0;
  bool has_lane = false;
};

struct LifecycleRemove {
  std::int64_t step = 0;
  graph::NodeId node = 0;
};

struct Lifecycle {
  std::vector<LifecycleInsert> inserts; // log order
  std::vector<LifecycleRemove> removes;
};

// Vehicle arrivals/departures of `log` with step > after_step.
Lifecycle extract_lifecycle(const graph::EventLog& log, std::int64_t after_step = 0);

// Hash of the model-visible snapshot content: step counter, node kinds and
// states, windowed edges. Bookkeeping that cannot influence a prediction
// (node add times, last-write times, retired ids) is excluded.
std::string snapshot_digest(const graph::Snapshot& g);

// One autoregressive step: encode, decode the interaction edges, update all
// states, then apply the exogenous lifecycle for the new step. Returns the
// full event record (already applied to g). rng may be null for greedy
// decoding; sampling mode requires it.
std::vector<graph::Event> rollout_step(const num::ParamStore& ps, graph::Snapshot& g,
                                       const ModelConfig& mcfg, const Lifecycle& lc,
                                       Rng* rng);

// Events that rebuild g from scratch: every live node materializes with its
// current state one step before the oldest windowed edge, then the windowed
// edges replay verbatim. Prepending this makes a continuation log
// self-contained.
std::vector<graph::Event> bootstrap_events(const graph::Snapshot& g);

// steps iterations of rollout_step from a copy of `start`, prefixed with the
// bootstrap block. The returned log validates standalone. With
// record_states=false, per-node StateUpdate events are omitted from the log
// (the internal snapshot still advances with them).
graph::EventLog simulate(const num::ParamStore& ps, const graph::Snapshot& start,
                         const ModelConfig& mcfg, const RolloutConfig& rcfg,
                         const Lifecycle& lc);

} // namespace tfm::model
