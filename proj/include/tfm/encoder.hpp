#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "tfm/engine.hpp"
#include "tfm/model.hpp"
#include "tfm/nn.hpp"

namespace tfm::model {

// Embedding matrix Z: one d_model vector per live node, keyed by id.
using Embeddings = std::map<graph::NodeId, num::Val>;

// Optional capture of every attention distribution computed during a call
// (one entry per node per layer with a non-empty neighborhood).
using AlphaSink = std::vector<std::vector<double>>;

// Layer-0 embedding: shared state MLP plus a per-kind bias.
template <class E>
num::Val embed_initial(E& eng, graph::NodeKind kind, const graph::State& s) {
  num::Val x = eng.input(scaled_state(kind, s));
  return eng.add(num::mlp2(eng, "enc.embed", x),
                 eng.param("enc.kind_bias." + kind_suffix(kind)));
}

// One attended vector for a node given its temporal neighborhood and the
// previous layer's embeddings. Scores are (W_Q q)·(W_K k_u)/sqrt(d_q) with
// q = [z_v || phi(0)], k_u = [z_u || phi(t_n - t)]; the relation embedding
// is added to z_u on the value path only. Paper mode divides the attended
// sum by |N| on top of the softmax.
template <class E>
num::Val attention_layer(E& eng, const std::string& lp, num::Val zv,
                         const std::vector<graph::Neighbor>& nbrs,
                         const Embeddings& prev, double t_n, num::Val phi0,
                         const EncoderConfig& ec, AlphaSink* alphas) {
  if (nbrs.empty()) return eng.constant(0.0, ec.d_model);
  num::Val wq = eng.param(lp + ".wq");
  num::Val wk = eng.param(lp + ".wk");
  num::Val wv = eng.param(lp + ".wv");
  std::size_t in = ec.d_model + ec.d_w;
  num::Val q = eng.matvec(wq, eng.concat({zv, phi0}), ec.d_q, in);
  double inv_sqrt_dq = 1.0 / std::sqrt(double(ec.d_q));
  std::vector<num::Val> scores, values;
  scores.reserve(nbrs.size());
  values.reserve(nbrs.size());
  for (const auto& nb : nbrs) {
    num::Val zu = prev.at(nb.other);
    num::Val phi = num::time_encode(eng, "enc.time", t_n - nb.t);
    num::Val key = eng.matvec(wk, eng.concat({zu, phi}), ec.d_q, in);
    num::Val zrel = eng.add(zu, eng.param("enc.rel_emb." + rel_suffix(nb.rel)));
    values.push_back(eng.matvec(wv, eng.concat({zrel, phi}), ec.d_model, in));
    scores.push_back(eng.scale(eng.dot(q, key), inv_sqrt_dq));
  }
  num::Val alpha = eng.softmax(eng.stack(scores));
  if (alphas) alphas->push_back(eng.value(alpha));
  num::Val zt = eng.weighted_sum(alpha, values);
  if (ec.attn_mode == AttentionMode::Paper)
    zt = eng.scale(zt, 1.0 / double(nbrs.size()));
  return zt;
}

// Full encode over a snapshot: layer 0 from states, then L rounds of
// z_v <- MLP(z_v || attn(...)) using the previous layer's embeddings of the
// K most recent distinct neighbors.
template <class E>
Embeddings encode(E& eng, const graph::Snapshot& g, const ModelConfig& cfg,
                  AlphaSink* alphas = nullptr) {
  Embeddings z;
  for (const auto& [id, rec] : g.nodes)
    z.emplace(id, embed_initial(eng, rec.kind, rec.state));
  if (z.empty()) return z;

  auto nbrs = graph::neighbor_lists(g, int(cfg.enc.k_neighbors));
  double t_n = g.now();
  num::Val phi0 = num::time_encode(eng, "enc.time", 0.0);
  for (std::size_t l = 1; l <= cfg.enc.layers; ++l) {
    std::string lp = "enc.l" + std::to_string(l);
    Embeddings next;
    for (const auto& [id, zv] : z) {
      num::Val zt =
          attention_layer(eng, lp, zv, nbrs[id], z, t_n, phi0, cfg.enc, alphas);
      next.emplace(id, num::mlp2(eng, lp + ".mlp", eng.concat({zv, zt})));
    }
    z = std::move(next);
  }
  return z;
}

} // namespace tfm::model
