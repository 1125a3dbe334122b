#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "tfm/checkpoint.hpp"
#include "tfm/encoder.hpp"
#include "tfm/generator.hpp"
#include "tfm/updater.hpp"

namespace tfm::model {

struct TrainConfig {
  std::size_t epochs = 50;
  double lr = 1e-3;
  double clip_norm = 5.0;
  double split = 0.8; // temporal prefix fraction used for training
  std::uint64_t seed = 0;
};

nlohmann::ordered_json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// One macro-step transition G_n -> G_{n+1}: the snapshot before, the next
// step's interaction edges in log order, and the raw states afterwards.
// Edges whose endpoints were not alive at step n (insertions happening within
// step n+1) cannot be scored by the generator and are counted in `skipped`.
struct TransitionData {
  std::int64_t step = 0; // n of the pair
  graph::Snapshot before{1.0, 5};
  std::vector<graph::EdgeAdd> forced;
  std::map<graph::NodeId, graph::State> next_states;
  std::size_t skipped = 0;
};

std::vector<TransitionData> build_transitions(const graph::EventLog& log,
                                              int window);

struct LossBreakdown {
  double struct_loss = 0;
  double state_loss = 0;
  double total = 0;
  bool state_warning = false; // no overlap between predicted and next nodes
};

// Sum of squared state errors over the nodes present on both sides.
template <class E>
num::Val state_loss(E& eng, const std::map<graph::NodeId, num::Val>& predicted,
                    const std::map<graph::NodeId, graph::State>& truth,
                    bool* warning = nullptr) {
  std::vector<num::Val> terms;
  for (const auto& [id, pv] : predicted) {
    auto it = truth.find(id);
    if (it == truth.end()) continue;
    num::Val diff = eng.sub(pv, eng.input(it->second));
    terms.push_back(eng.dot(diff, diff));
  }
  if (warning) *warning = terms.empty();
  if (terms.empty()) return eng.constant(0.0);
  return eng.sum(eng.stack(terms));
}

template <class E>
struct TransitionLoss {
  num::Val structure, state, total;
  LossBreakdown breakdown;
};

// encode -> teacher-forced structure NLL (event chain + relation heads) ->
// message pass over the forced edges -> state predictions scored against the
// raw next states; total = structure + lambda * state.
template <class E>
TransitionLoss<E> transition_loss(E& eng, const TransitionData& tr,
                                  const ModelConfig& cfg) {
  auto z = encode(eng, tr.before, cfg);
  auto tf = teacher_forced(eng, tr.before, z, cfg, tr.forced);
  num::Val structure =
      eng.scale(eng.add(tf.log_prob, tf.rel_log_prob), -1.0);
  auto h = message_pass(eng, tr.before, tr.forced, cfg);
  auto pred = update_states(eng, tr.before, h, tf.z_final, tr.before.dt, cfg);
  TransitionLoss<E> out;
  out.structure = structure;
  out.state =
      state_loss(eng, pred, tr.next_states, &out.breakdown.state_warning);
  out.total = eng.add(out.structure, eng.scale(out.state, cfg.lambda));
  out.breakdown.struct_loss = eng.scalar(out.structure);
  out.breakdown.state_loss = eng.scalar(out.state);
  out.breakdown.total = eng.scalar(out.total);
  return out;
}

struct EpochStats {
  double struct_loss = 0;
  double state_loss = 0;
  double total = 0;
  double val_total = 0;
};

struct TrainResult {
  std::vector<EpochStats> history; // one entry per epoch (means)
  std::size_t best_epoch = 0;      // 1-based
  double best_val = std::numeric_limits<double>::infinity();
  long long global_step = 0;
  std::size_t n_train = 0, n_val = 0;
  std::size_t skipped_edges = 0;
  bool state_warning = false;
};

// Per-transition SGD over the temporal-prefix training split, one epoch at a
// time, with validation on the held-out suffix after every epoch. When
// best_path is nonempty the parameters are checkpointed there whenever the
// validation total improves. With a single transition there is nothing to
// hold out; validation then mirrors the training loss.
TrainResult train(num::ParamStore& ps, const graph::EventLog& log,
                  const ModelConfig& mcfg, const TrainConfig& tcfg,
                  const std::string& best_path = "");

void write_history_csv(const std::string& path,
                       const std::vector<EpochStats>& history);

} // namespace tfm::model
