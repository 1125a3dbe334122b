#include "tfm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "tfm/encoder.hpp"
#include "tfm/engine.hpp"
#include "tfm/errors.hpp"
#include "tfm/generator.hpp"
#include "tfm/training.hpp"
#include "tfm/updater.hpp"
#include "tfm/util.hpp"

namespace tfm::eval {

using namespace tfm::graph;

std::vector<MfdPoint> compute_mfd(const EventLog& log, double total_lane_km,
                                  double bin_seconds) {
  if (!(bin_seconds > 0)) throw bad_args("mfd: bin_seconds must be positive");
  if (!(total_lane_km > 0)) throw bad_args("mfd: total_lane_km must be positive");
  if (log.events.empty()) throw bad_data("mfd: no vehicle data in log");

  double dt = log.step_duration;
  std::map<NodeId, NodeKind> kind;
  std::map<NodeId, std::pair<double, double>> alive; // add time, remove time
  for (const auto& e : log.events) {
    if (auto* na = std::get_if<NodeAdd>(&e)) {
      kind[na->node] = na->kind;
      if (na->kind == NodeKind::Vehicle)
        alive[na->node] = {na->t, std::numeric_limits<double>::infinity()};
    } else if (auto* nr = std::get_if<NodeRemove>(&e)) {
      auto it = alive.find(nr->node);
      if (it != alive.end()) it->second.second = nr->t;
    }
  }

  std::int64_t s_min = step_for_time(event_time(log.events.front()), dt);
  std::int64_t s_max = step_for_time(event_time(log.events.back()), dt);

  // live vehicle count per step via a difference array
  std::vector<double> diff(std::size_t(s_max - s_min + 2), 0.0);
  auto first_step_at_or_after = [&](double t) {
    return std::int64_t(std::ceil(t / dt - 1e-9));
  };
  for (const auto& [id, span] : alive) {
    std::int64_t a = std::max(first_step_at_or_after(span.first), s_min);
    std::int64_t b = std::isfinite(span.second)
                         ? std::min(first_step_at_or_after(span.second), s_max + 1)
                         : s_max + 1;
    if (a >= b) continue;
    diff[std::size_t(a - s_min)] += 1;
    diff[std::size_t(b - s_min)] -= 1;
  }

  struct BinAcc {
    double speed_sum = 0, speed_sq = 0;
    std::size_t samples = 0;
    double count_sum = 0;
    std::int64_t steps = 0;
  };
  std::map<std::int64_t, BinAcc> bins;
  auto bin_of = [&](double t) { return std::int64_t(std::floor(t / bin_seconds)); };

  double running = 0;
  for (std::int64_t s = s_min; s <= s_max; ++s) {
    running += diff[std::size_t(s - s_min)];
    BinAcc& b = bins[bin_of(double(s) * dt)];
    b.count_sum += running;
    b.steps += 1;
  }
  bool any = false;
  for (const auto& e : log.events)
    if (auto* su = std::get_if<StateUpdate>(&e)) {
      auto it = kind.find(su->node);
      if (it == kind.end() || it->second != NodeKind::Vehicle) continue;
      any = true;
      BinAcc& b = bins[bin_of(su->t)];
      double v = su->s.at(0);
      b.speed_sum += v;
      b.speed_sq += v * v;
      b.samples += 1;
    }
  if (!any) throw bad_data("mfd: no vehicle data in log");

  std::vector<MfdPoint> out;
  for (const auto& [idx, b] : bins) {
    if (b.samples == 0) continue; // empty bins are omitted
    MfdPoint p;
    p.bin_start = double(idx) * bin_seconds;
    p.density = b.count_sum / double(b.steps) / total_lane_km;
    p.mean_speed = b.speed_sum / double(b.samples);
    p.flow = p.density * p.mean_speed * 3600.0;
    p.speed_variance = b.speed_sq / double(b.samples) - p.mean_speed * p.mean_speed;
    if (p.speed_variance < 0) p.speed_variance = 0; // rounding guard
    p.samples = b.samples;
    out.push_back(p);
  }
  return out;
}

std::vector<ProfilePoint> micro_profile(const EventLog& log, NodeId vehicle) {
  bool is_vehicle = false;
  for (const auto& e : log.events)
    if (auto* na = std::get_if<NodeAdd>(&e))
      if (na->node == vehicle && na->kind == NodeKind::Vehicle) is_vehicle = true;

  std::vector<ProfilePoint> out;
  for (const auto& e : log.events)
    if (auto* su = std::get_if<StateUpdate>(&e))
      if (su->node == vehicle && is_vehicle)
        out.push_back({su->t, su->s.at(0), su->s.at(1)});
  if (out.empty())
    throw bad_data("unknown vehicle " + std::to_string(vehicle));
  return out;
}

std::map<NodeId, State> persistence_baseline(const Snapshot& g) {
  std::map<NodeId, State> out;
  for (const auto& [id, rec] : g.nodes) out.emplace(id, rec.state);
  return out;
}

MseReport next_state_mse(const num::ParamStore& ps, const EventLog& log,
                         const model::ModelConfig& mcfg, std::int64_t from_step) {
  using namespace tfm::model;
  mcfg.validate();
  std::vector<TransitionData> transitions = build_transitions(log, mcfg.window);
  MseReport rep;
  double model_se = 0, base_se = 0;
  for (const auto& tr : transitions) {
    if (from_step >= 0 && tr.step < from_step) continue;
    num::ValueEngine eng(ps);
    Embeddings z = encode(eng, tr.before, mcfg);
    auto tf = teacher_forced(eng, tr.before, std::move(z), mcfg, tr.forced);
    auto h = message_pass(eng, tr.before, tr.forced, mcfg);
    auto pred = update_states(eng, tr.before, h, tf.z_final, tr.before.dt, mcfg);

    MseStep st;
    st.step = tr.step + 1;
    double mse_m = 0, mse_b = 0;
    for (const auto& [id, val] : pred) {
      auto truth = tr.next_states.find(id);
      if (truth == tr.next_states.end()) continue;
      const std::vector<double>& p = eng.value(val);
      const State& prev = tr.before.node(id).state;
      for (std::size_t i = 0; i < truth->second.size(); ++i) {
        double dm = p.at(i) - truth->second[i];
        double db = prev.at(i) - truth->second[i];
        mse_m += dm * dm;
        mse_b += db * db;
      }
      st.nodes += 1;
    }
    if (st.nodes == 0) continue;
    model_se += mse_m;
    base_se += mse_b;
    rep.node_steps += st.nodes;
    st.model_mse = mse_m / double(st.nodes);
    st.baseline_mse = mse_b / double(st.nodes);
    rep.per_step.push_back(st);
  }
  if (rep.node_steps == 0)
    throw bad_data("insufficient data: no transitions to evaluate");
  rep.model_mse = model_se / double(rep.node_steps);
  rep.baseline_mse = base_se / double(rep.node_steps);
  return rep;
}

std::string mfd_csv(const std::vector<MfdPoint>& points) {
  std::string out = "bin_start,density,mean_speed,flow,speed_variance,samples\n";
  for (const auto& p : points)
    out += format_double(p.bin_start) + "," + format_double(p.density) + "," +
           format_double(p.mean_speed) + "," + format_double(p.flow) + "," +
           format_double(p.speed_variance) + "," + std::to_string(p.samples) + "\n";
  return out;
}

std::string profile_csv(const std::vector<ProfilePoint>& points) {
  std::string out = "t,speed,accel\n";
  for (const auto& p : points)
    out += format_double(p.t) + "," + format_double(p.speed) + "," +
           format_double(p.accel) + "\n";
  return out;
}

std::string mse_csv(const MseReport& report) {
  std::string out = "step,model_mse,baseline_mse,nodes\n";
  for (const auto& s : report.per_step)
    out += std::to_string(s.step) + "," + format_double(s.model_mse) + "," +
           format_double(s.baseline_mse) + "," + std::to_string(s.nodes) + "\n";
  return out;
}

namespace {

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

} // namespace

void write_scatter_svg(const std::string& path, const std::string& title,
                       const std::string& xlabel, const std::string& ylabel,
                       const std::vector<std::pair<double, double>>& points) {
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!points.empty()) {
    xmin = xmax = points[0].first;
    ymin = ymax = points[0].second;
    for (const auto& [x, y] : points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmax == xmin) { xmax += 1; xmin -= 1; }
  if (ymax == ymin) { ymax += 1; ymin -= 1; }
  double xpad = 0.05 * (xmax - xmin), ypad = 0.05 * (ymax - ymin);
  xmin -= xpad; xmax += xpad; ymin -= ypad; ymax += ypad;

  const double w = 640, h = 480, ml = 70, mr = 20, mt = 40, mb = 50;
  auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
  auto sy = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\""
      << h << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << title << "</text>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr
      << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << h - mb << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double fx = xmin + (xmax - xmin) * i / 4.0;
    double fy = ymin + (ymax - ymin) * i / 4.0;
    svg << "<text x=\"" << sx(fx) << "\" y=\"" << h - mb + 18
        << "\" text-anchor=\"middle\" font-size=\"11\">" << tick_label(fx)
        << "</text>\n"
        << "<text x=\"" << ml - 8 << "\" y=\"" << sy(fy) + 4
        << "\" text-anchor=\"end\" font-size=\"11\">" << tick_label(fy) << "</text>\n";
  }
  svg << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 12
      << "\" text-anchor=\"middle\" font-size=\"13\">" << xlabel << "</text>\n"
      << "<text x=\"16\" y=\"" << (mt + h - mb) / 2
      << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
      << (mt + h - mb) / 2 << ")\">" << ylabel << "</text>\n";
  for (const auto& [x, y] : points)
    svg << "<circle cx=\"" << sx(x) << "\" cy=\"" << sy(y)
        << "\" r=\"3\" fill=\"steelblue\" fill-opacity=\"0.7\"/>\n";
  svg << "</svg>\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write '" + path + "'");
  out << svg.str();
  if (!out.good()) throw io_error("failed writing '" + path + "'");
}

} // namespace tfm::eval
