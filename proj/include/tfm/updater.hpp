#pragma once

#include <map>
#include <vector>

#include "tfm/generator.hpp"

namespace tfm::model {

// One round of message passing over the step's new edges. Every live node
// starts from its scaled state vector zero-padded to message width; a node
// touched by new edges is replaced by the mean of the incoming edge messages,
// all evaluated against the initial values (order within the step does not
// matter here; the sequential signal lives in the generator's refresh).
template <class E>
std::map<graph::NodeId, num::Val> message_pass(
    E& eng, const graph::Snapshot& g,
    const std::vector<graph::EdgeAdd>& new_edges, const ModelConfig& cfg) {
  std::map<graph::NodeId, num::Val> h;
  std::size_t d = cfg.msg_width();
  for (const auto& [id, rec] : g.nodes)
    h.emplace(id, eng.input(padded_scaled_state(rec.kind, rec.state, d)));

  std::map<graph::NodeId, std::vector<num::Val>> inbox;
  for (const auto& e : new_edges) {
    if (!g.alive(e.u) || !g.alive(e.v)) continue;
    inbox[e.v].push_back(edge_message(eng, h.at(e.u), h.at(e.v), e.rel, true));
    inbox[e.u].push_back(edge_message(eng, h.at(e.v), h.at(e.u), e.rel, false));
  }
  for (auto& [id, msgs] : inbox) {
    num::Val w = eng.constant(1.0 / double(msgs.size()), msgs.size());
    h.at(id) = eng.weighted_sum(w, msgs);
  }
  return h;
}

namespace detail {

// max(lo, min(x, hi)) built from relu so the kink subgradients match the
// forward choice exactly
template <class E>
num::Val clamp_scalar(E& eng, num::Val x, double lo, double hi) {
  num::Val a = eng.relu(eng.sub(x, eng.constant(lo)));
  num::Val b = eng.relu(eng.sub(x, eng.constant(hi)));
  return eng.add(eng.constant(lo), eng.sub(a, b));
}

} // namespace detail

// Recurrent state update: GRU over [h_v || phi(dt)] with the final refreshed
// embedding as hidden state, then a linear head in scaled units, unscaled to
// raw units. Predictions replace the previous state outright. Vehicle speed
// and acceleration are clamped to their physical ranges.
template <class E>
std::map<graph::NodeId, num::Val> update_states(
    E& eng, const graph::Snapshot& g,
    const std::map<graph::NodeId, num::Val>& h, const Embeddings& z_final,
    double delta_t, [[maybe_unused]] const ModelConfig& cfg) {
  num::Val phi = num::time_encode(eng, "upd.time", delta_t);
  std::map<graph::NodeId, num::Val> out;
  for (const auto& [id, rec] : g.nodes) {
    num::Val x = eng.concat({h.at(id), phi});
    num::Val hidden = num::gru_cell(eng, "upd.gru", x, z_final.at(id));
    num::Val pred = num::affine(eng, "upd.head", hidden);
    num::Val raw = eng.mul(pred, eng.input(std::vector<double>(
                                     state_scale(rec.kind).begin(),
                                     state_scale(rec.kind).end())));
    if (rec.kind == graph::NodeKind::Vehicle) {
      std::vector<num::Val> parts;
      parts.push_back(detail::clamp_scalar(eng, eng.pick(raw, 0), 0.0,
                                           kVehicleSpeedMax));
      parts.push_back(detail::clamp_scalar(eng, eng.pick(raw, 1),
                                           -kVehicleAccelMax, kVehicleAccelMax));
      for (std::size_t i = 2; i < graph::kStateDim; ++i)
        parts.push_back(eng.pick(raw, i));
      raw = eng.stack(parts);
    }
    out.emplace(id, raw);
  }
  return out;
}

} // namespace tfm::model
