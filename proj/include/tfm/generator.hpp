#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "tfm/encoder.hpp"
#include "tfm/errors.hpp"
#include "tfm/model.hpp"
#include "tfm/util.hpp"

namespace tfm::model {

// Directed kind compatibility of a relation, used only when kind_mask is on.
bool rel_compatible(graph::NodeKind ku, graph::NodeKind kv, graph::RelKind r);
bool any_rel_compatible(graph::NodeKind ku, graph::NodeKind kv);

// Message applied to a receiver embedding when the edge (u, v, rel) appears;
// shared between the generator's per-event refresh and the state updater.
// Input order is [other || receiver || relation embedding]; the embedding is
// direction-aware (fwd: receiver is v, rev: receiver is u).
template <class E>
num::Val edge_message(E& eng, num::Val other, num::Val receiver,
                      graph::RelKind rel, bool receiver_is_target) {
  std::string emb = "upd.rel_emb." + rel_suffix(rel) +
                    (receiver_is_target ? ".fwd" : ".rev");
  return num::mlp2(eng, "upd.msg",
                   eng.concat({other, receiver, eng.param(emb)}));
}

// Working-graph context for one macro step: live nodes, refreshed embeddings
// and cached source logits. Nodes never change within a step (the generator
// emits edges only), so the candidate list is fixed.
template <class E>
class Generator {
 public:
  struct Source {
    std::vector<graph::NodeId> nodes; // eligible sources; STOP is entry nodes.size()
    num::Val logp;                    // log probabilities, length nodes.size()+1
    std::vector<graph::NodeId> masked; // sources dropped for lack of a valid target
  };
  struct Target {
    std::vector<graph::NodeId> nodes;
    num::Val logp;
  };

  Generator(E& eng, const graph::Snapshot& g, Embeddings z, const ModelConfig& cfg)
      : eng_(eng), g_(&g), z_(std::move(z)), cfg_(&cfg) {
    for (const auto& [id, rec] : g.nodes) nodes_.push_back(id);
  }

  const Embeddings& embeddings() const { return z_; }

  Source source_dist() {
    Source out;
    std::vector<num::Val> logits;
    for (graph::NodeId id : nodes_) {
      if (count_targets(id) == 0) {
        out.masked.push_back(id);
        continue;
      }
      out.nodes.push_back(id);
      logits.push_back(src_logit(id));
    }
    if (!stop_logit_.ok())
      stop_logit_ = eng_.pick(
          num::mlp2(eng_, "gen.src", eng_.param("gen.stop_emb")), 0);
    logits.push_back(stop_logit_);
    out.logp = log_dist(logits);
    return out;
  }

  Target target_dist(graph::NodeId u) {
    Target out;
    std::vector<num::Val> logits;
    num::Val zu = z_.at(u);
    graph::NodeKind ku = g_->node(u).kind;
    for (graph::NodeId id : nodes_) {
      if (id == u) continue;
      if (cfg_->gen.kind_mask && !any_rel_compatible(ku, g_->node(id).kind))
        continue;
      out.nodes.push_back(id);
      logits.push_back(
          eng_.pick(num::mlp2(eng_, "gen.tgt", eng_.concat({zu, z_.at(id)})), 0));
    }
    if (logits.empty()) throw bad_data("generator: no valid target for source");
    out.logp = log_dist(logits);
    return out;
  }

  // log distribution over relation kinds for a chosen pair; tempered like
  // the rest of the chain so the tau -> 0 limit reproduces greedy edges
  num::Val rel_log_dist(graph::NodeId u, graph::NodeId v) {
    num::Val logits =
        num::mlp2(eng_, "gen.rel", eng_.concat({z_.at(u), z_.at(v)}));
    return log_dist_of(logits);
  }

  // Per-event embedding refresh: both endpoints of the new edge receive the
  // updater's edge message, computed from the pre-refresh embeddings.
  void refresh(graph::NodeId u, graph::NodeId v, graph::RelKind rel) {
    num::Val zu = z_.at(u);
    num::Val zv = z_.at(v);
    z_.at(v) = edge_message(eng_, zu, zv, rel, true);
    z_.at(u) = edge_message(eng_, zv, zu, rel, false);
    src_cache_.erase(u);
    src_cache_.erase(v);
  }

 private:
  std::size_t count_targets(graph::NodeId u) const {
    if (!cfg_->gen.kind_mask) return nodes_.size() - 1;
    std::size_t n = 0;
    graph::NodeKind ku = g_->node(u).kind;
    for (graph::NodeId id : nodes_)
      if (id != u && any_rel_compatible(ku, g_->node(id).kind)) ++n;
    return n;
  }

  num::Val src_logit(graph::NodeId id) {
    auto it = src_cache_.find(id);
    if (it != src_cache_.end()) return it->second;
    num::Val l = eng_.pick(num::mlp2(eng_, "gen.src", z_.at(id)), 0);
    src_cache_.emplace(id, l);
    return l;
  }

  num::Val log_dist(const std::vector<num::Val>& logits) {
    return log_dist_of(eng_.stack(logits));
  }

  num::Val log_dist_of(num::Val logits) {
    return eng_.log_softmax(eng_.scale(logits, 1.0 / cfg_->gen.temperature));
  }

  E& eng_;
  const graph::Snapshot* g_;
  Embeddings z_;
  const ModelConfig* cfg_;
  std::vector<graph::NodeId> nodes_;
  std::map<graph::NodeId, num::Val> src_cache_;
  num::Val stop_logit_;
};

namespace detail {

// index selection from a log distribution: argmax for greedy (first maximum),
// inverse-CDF draw for sampling
template <class E>
std::size_t choose(E& eng, num::Val logp, GenMode mode, Rng* rng) {
  const auto& lp = eng.value(logp);
  if (mode == GenMode::Greedy || rng == nullptr) {
    return std::size_t(std::max_element(lp.begin(), lp.end()) - lp.begin());
  }
  double u = rng->uniform();
  double acc = 0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    acc += std::exp(lp[i]);
    if (u < acc) return i;
  }
  return lp.size() - 1;
}

template <class E>
num::Val sum_terms(E& eng, const std::vector<num::Val>& terms) {
  if (terms.empty()) return eng.constant(0.0);
  return eng.sum(eng.stack(terms));
}

} // namespace detail

template <class E>
struct GeneratedStep {
  std::vector<graph::EdgeAdd> edges; // t and ordinal filled for step n+1
  num::Val log_prob;                 // chosen source/target factors (+ STOP if chosen)
  bool stopped = false;              // STOP chosen before the event cap
  Embeddings z_final;
};

// Autoregressive decoding of one macro step's interaction edges.
template <class E>
GeneratedStep<E> generate_step(E& eng, const graph::Snapshot& g, Embeddings z,
                               const ModelConfig& cfg, Rng* rng) {
  Generator<E> gen(eng, g, std::move(z), cfg);
  GeneratedStep<E> out;
  std::vector<num::Val> terms;
  std::size_t cap = cfg.max_events(g.nodes.size());
  double t_next = double(g.step + 1) * g.dt;
  for (std::size_t i = 0; i < cap; ++i) {
    auto src = gen.source_dist();
    std::size_t si = detail::choose(eng, src.logp, cfg.gen.mode, rng);
    terms.push_back(eng.pick(src.logp, si));
    if (si == src.nodes.size()) {
      out.stopped = true;
      break;
    }
    graph::NodeId u = src.nodes[si];
    auto tgt = gen.target_dist(u);
    std::size_t ti = detail::choose(eng, tgt.logp, cfg.gen.mode, rng);
    terms.push_back(eng.pick(tgt.logp, ti));
    graph::NodeId v = tgt.nodes[ti];
    num::Val rlp = gen.rel_log_dist(u, v);
    auto rel = graph::RelKind(detail::choose(eng, rlp, cfg.gen.mode, rng));
    out.edges.push_back({t_next, int(out.edges.size()), rel, u, v});
    gen.refresh(u, v, rel);
  }
  out.log_prob = detail::sum_terms(eng, terms);
  out.z_final = gen.embeddings();
  return out;
}

struct TeacherForcedResult {
  num::Val log_prob;     // source/target chain + final STOP
  num::Val rel_log_prob; // relation-head factors, for the structure loss
  Embeddings z_final;
};

// Scores a forced event sequence under the model, refreshing embeddings
// after each event exactly as generate_step does.
template <class E>
TeacherForcedResult teacher_forced(E& eng, const graph::Snapshot& g, Embeddings z,
                                   const ModelConfig& cfg,
                                   const std::vector<graph::EdgeAdd>& forced) {
  Generator<E> gen(eng, g, std::move(z), cfg);
  std::vector<num::Val> uv, rel;
  for (const auto& e : forced) {
    if (!g.alive(e.u) || !g.alive(e.v))
      throw bad_data("teacher forcing: event references a node outside the snapshot");
    auto src = gen.source_dist();
    auto su = std::find(src.nodes.begin(), src.nodes.end(), e.u);
    if (su == src.nodes.end())
      throw bad_data("teacher forcing: forced source is masked");
    uv.push_back(eng.pick(src.logp, std::size_t(su - src.nodes.begin())));
    auto tgt = gen.target_dist(e.u);
    auto tv = std::find(tgt.nodes.begin(), tgt.nodes.end(), e.v);
    if (tv == tgt.nodes.end())
      throw bad_data("teacher forcing: forced target is masked");
    uv.push_back(eng.pick(tgt.logp, std::size_t(tv - tgt.nodes.begin())));
    rel.push_back(eng.pick(gen.rel_log_dist(e.u, e.v), std::size_t(e.rel)));
    gen.refresh(e.u, e.v, e.rel);
  }
  auto src = gen.source_dist();
  uv.push_back(eng.pick(src.logp, src.nodes.size())); // STOP closes the step
  TeacherForcedResult out;
  out.log_prob = detail::sum_terms(eng, uv);
  out.rel_log_prob = detail::sum_terms(eng, rel);
  out.z_final = gen.embeddings();
  return out;
}

} // namespace tfm::model
