#include "tfm/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "tfm/errors.hpp"
#include "tfm/util.hpp"

namespace tfm::model {

namespace {

void check_keys(const nlohmann::json& j,
                std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) { ok = true; break; }
    if (!ok) throw bad_args("unknown key \"" + key + "\" in " + where);
  }
}

} // namespace

nlohmann::ordered_json to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"lr", cfg.lr},
          {"clip_norm", cfg.clip_norm},
          {"split", cfg.split},
          {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  check_keys(j, {"epochs", "lr", "clip_norm", "split", "seed"}, "train");
  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<std::size_t>();
  if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
  if (j.contains("clip_norm")) cfg.clip_norm = j.at("clip_norm").get<double>();
  if (j.contains("split")) cfg.split = j.at("split").get<double>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (cfg.epochs < 1) throw bad_args("train.epochs must be >= 1");
  if (cfg.lr <= 0) throw bad_args("train.lr must be > 0");
  if (cfg.clip_norm <= 0) throw bad_args("train.clip_norm must be > 0");
  if (!(cfg.split > 0.0 && cfg.split < 1.0))
    throw bad_args("train.split must lie in (0, 1)");
  return cfg;
}

std::vector<TransitionData> build_transitions(const graph::EventLog& log,
                                              int window) {
  auto batches = split_by_step(log);
  if (batches.empty()) return {};
  std::map<std::int64_t, const graph::StepBatch*> by_step;
  for (const auto& b : batches) by_step[b.step] = &b;
  std::int64_t first = batches.front().step;
  std::int64_t last = batches.back().step;

  // not replay(log, first, ...): first can legitimately be negative (rollout
  // bootstrap blocks), which replay would read as its whole-log sentinel
  graph::Snapshot g(log.step_duration, window);
  graph::apply_events_inplace(g, batches.front().events);
  std::vector<TransitionData> out;
  for (std::int64_t n = first; n < last; ++n) {
    TransitionData tr;
    tr.step = n;
    tr.before = g;
    auto it = by_step.find(n + 1);
    if (it != by_step.end()) {
      for (const auto& ev : it->second->events)
        if (const auto* ea = std::get_if<graph::EdgeAdd>(&ev)) {
          if (tr.before.alive(ea->u) && tr.before.alive(ea->v))
            tr.forced.push_back(*ea);
          else
            ++tr.skipped;
        }
      graph::apply_events_inplace(g, it->second->events);
    } else {
      graph::apply_events_inplace(g, {});
    }
    for (const auto& [id, rec] : g.nodes) tr.next_states[id] = rec.state;
    out.push_back(std::move(tr));
  }
  return out;
}

TrainResult train(num::ParamStore& ps, const graph::EventLog& log,
                  const ModelConfig& mcfg, const TrainConfig& tcfg,
                  const std::string& best_path) {
  mcfg.validate();
  if (tcfg.epochs < 1) throw bad_args("train.epochs must be >= 1");
  if (!(tcfg.split > 0.0 && tcfg.split < 1.0))
    throw bad_args("train.split must lie in (0, 1)");
  auto violations = graph::validate_log(log);
  if (!violations.empty())
    throw bad_data("training log invalid at event " +
                   std::to_string(violations.front().index) + ": " +
                   violations.front().message);

  auto transitions = build_transitions(log, mcfg.window);
  if (transitions.empty())
    throw bad_data("insufficient data: training needs at least two macro steps");

  TrainResult res;
  std::size_t n = transitions.size();
  res.n_train = n == 1 ? 1
                       : std::clamp<std::size_t>(
                             std::size_t(std::floor(tcfg.split * double(n))),
                             1, n - 1);
  res.n_val = n - res.n_train;
  for (const auto& tr : transitions) res.skipped_edges += tr.skipped;

  num::AdamConfig adam;
  adam.lr = tcfg.lr;
  num::CheckpointMeta meta;
  meta.model_config = to_json(mcfg);
  meta.seed = tcfg.seed;

  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    EpochStats es;
    for (std::size_t i = 0; i < res.n_train; ++i) {
      try {
        ps.zero_grad();
        num::Tape tape(ps);
        auto loss = transition_loss(tape, transitions[i], mcfg);
        tape.backward(loss.total);
        ps.clip_global_norm(tcfg.clip_norm);
        ps.adam_step(adam, ++res.global_step);
        es.struct_loss += loss.breakdown.struct_loss;
        es.state_loss += loss.breakdown.state_loss;
        es.total += loss.breakdown.total;
        res.state_warning |= loss.breakdown.state_warning;
      } catch (const Error& e) {
        if (e.error_class() != ErrorClass::Numeric) throw;
        throw numeric_error("non-finite loss at epoch " +
                            std::to_string(epoch) + ", transition " +
                            std::to_string(i) + ": " + e.what());
      }
    }
    es.struct_loss /= double(res.n_train);
    es.state_loss /= double(res.n_train);
    es.total /= double(res.n_train);

    if (res.n_val > 0) {
      double vt = 0;
      for (std::size_t i = res.n_train; i < n; ++i) {
        num::ValueEngine eng(ps);
        vt += transition_loss(eng, transitions[i], mcfg).breakdown.total;
      }
      es.val_total = vt / double(res.n_val);
    } else {
      es.val_total = es.total;
    }
    res.history.push_back(es);

    if (es.val_total < res.best_val) {
      res.best_val = es.val_total;
      res.best_epoch = epoch;
      if (!best_path.empty()) {
        meta.training_step = res.global_step;
        num::save_checkpoint(best_path, ps, meta);
      }
    }
  }
  return res;
}

void write_history_csv(const std::string& path,
                       const std::vector<EpochStats>& history) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << "epoch,struct_loss,state_loss,total,val_total\n";
  for (std::size_t i = 0; i < history.size(); ++i)
    out << (i + 1) << ',' << format_double(history[i].struct_loss) << ','
        << format_double(history[i].state_loss) << ','
        << format_double(history[i].total) << ','
        << format_double(history[i].val_total) << '\n';
  if (!out.flush()) throw io_error("failed writing " + path);
}

} // namespace tfm::model
