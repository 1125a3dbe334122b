#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tfm/graph.hpp"
#include "tfm/model.hpp"
#include "tfm/params.hpp"

namespace tfm::eval {

// One time bin of the macroscopic fundamental diagram. Units: density in
// vehicles per lane-km, speed in m/s, flow = density * speed * 3600 (spatial
// flow in vehicle-meters per lane-km-hour).
struct MfdPoint {
  double bin_start = 0;     // s
  double density = 0;       // mean vehicle count / total lane-km
  double mean_speed = 0;    // over vehicle StateUpdates in the bin
  double flow = 0;          // density * mean_speed * 3600
  double speed_variance = 0; // population variance within the bin
  std::size_t samples = 0;  // vehicle StateUpdates in the bin
};

// Whole-network MFD. Bins cover [k*bin_seconds, (k+1)*bin_seconds); bins
// without any vehicle StateUpdate are omitted. Density averages the live
// vehicle count over the log's steps that fall in the bin. Throws BadData
// when the log carries no vehicle StateUpdates at all.
std::vector<MfdPoint> compute_mfd(const graph::EventLog& log, double total_lane_km,
                                  double bin_seconds = 60.0);

struct ProfilePoint {
  double t = 0;
  double speed = 0;
  double accel = 0;
};

// Per-vehicle time series from the state slots, in log order. Throws BadData
// when the node has no vehicle StateUpdates.
std::vector<ProfilePoint> micro_profile(const graph::EventLog& log,
                                        graph::NodeId vehicle);

// The no-change forecast S_{n+1} = S_n.
std::map<graph::NodeId, graph::State> persistence_baseline(const graph::Snapshot& g);

struct MseStep {
  std::int64_t step = 0;   // the step being predicted
  double model_mse = 0;    // mean squared error per node
  double baseline_mse = 0;
  std::size_t nodes = 0;   // intersection of predicted and observed nodes
};

struct MseReport {
  std::vector<MseStep> per_step;
  double model_mse = 0; // aggregates: mean per node-step
  double baseline_mse = 0;
  std::size_t node_steps = 0;
};

// One-step teacher-forced state prediction versus persistence over the log's
// transitions (those with step >= from_step when from_step >= 0). Model and
// baseline are scored on identical node-step sets. Throws BadData when the
// log yields no transitions.
MseReport next_state_mse(const num::ParamStore& ps, const graph::EventLog& log,
                         const model::ModelConfig& mcfg, std::int64_t from_step = -1);

std::string mfd_csv(const std::vector<MfdPoint>& points);
std::string profile_csv(const std::vector<ProfilePoint>& points);
std::string mse_csv(const MseReport& report);

// Minimal standalone scatter plot: axes, tick labels, points.
void write_scatter_svg(const std::string& path, const std::string& title,
                       const std::string& xlabel, const std::string& ylabel,
                       const std::vector<std::pair<double, double>>& points);

} // namespace tfm::eval
