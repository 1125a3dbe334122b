#include "tfm/model.hpp"

#include "tfm/errors.hpp"

namespace tfm::model {

std::string to_string(AttentionMode m) {
  return m == AttentionMode::Paper ? "paper" : "standard";
}

std::string to_string(GenMode m) { return m == GenMode::Greedy ? "greedy" : "sample"; }

AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "paper") return AttentionMode::Paper;
  if (s == "standard") return AttentionMode::Standard;
  throw bad_args("unknown attention mode: " + s);
}

GenMode parse_gen_mode(const std::string& s) {
  if (s == "greedy") return GenMode::Greedy;
  if (s == "sample") return GenMode::Sample;
  throw bad_args("unknown generator mode: " + s);
}

void ModelConfig::validate() const {
  if (enc.layers < 1) throw bad_args("encoder.layers must be >= 1");
  if (enc.d_model < 1 || enc.d_w < 1 || enc.d_q < 1 || enc.k_neighbors < 1)
    throw bad_args("encoder dimensions must be >= 1");
  if (gen.temperature <= 0) throw bad_args("generator.temperature must be > 0");
  if (lambda < 0) throw bad_args("lambda must be >= 0");
  if (window < 1) throw bad_args("window must be >= 1");
  if (msg_width() != enc.d_model)
    throw bad_args("updater.d_msg must equal encoder.d_model (the per-event "
                   "embedding refresh applies the message MLP to embeddings)");
  if (msg_width() < graph::kStateDim)
    throw bad_args("updater.d_msg must be >= the state dimension");
}

namespace {

// rejects keys outside `allowed`, so config typos fail loudly
void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) { ok = true; break; }
    if (!ok) throw bad_args("unknown key \"" + key + "\" in " + where);
  }
}

template <class T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace

nlohmann::ordered_json to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["encoder"] = {{"layers", cfg.enc.layers},
                  {"d_model", cfg.enc.d_model},
                  {"d_w", cfg.enc.d_w},
                  {"d_q", cfg.enc.d_q},
                  {"k_neighbors", cfg.enc.k_neighbors},
                  {"attn_mode", to_string(cfg.enc.attn_mode)}};
  j["generator"] = {{"max_events", cfg.gen.max_events},
                    {"temperature", cfg.gen.temperature},
                    {"mode", to_string(cfg.gen.mode)},
                    {"kind_mask", cfg.gen.kind_mask}};
  j["updater"] = {{"d_msg", cfg.upd.d_msg}};
  j["lambda"] = cfg.lambda;
  j["window"] = cfg.window;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  check_keys(j, {"encoder", "generator", "updater", "lambda", "window"}, "model");
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    check_keys(e, {"layers", "d_model", "d_w", "d_q", "k_neighbors", "attn_mode"},
               "model.encoder");
    maybe(e, "layers", cfg.enc.layers);
    maybe(e, "d_model", cfg.enc.d_model);
    maybe(e, "d_w", cfg.enc.d_w);
    maybe(e, "d_q", cfg.enc.d_q);
    maybe(e, "k_neighbors", cfg.enc.k_neighbors);
    if (e.contains("attn_mode"))
      cfg.enc.attn_mode = parse_attention_mode(e.at("attn_mode").get<std::string>());
  }
  if (j.contains("generator")) {
    const auto& g = j.at("generator");
    check_keys(g, {"max_events", "temperature", "mode", "kind_mask"},
               "model.generator");
    maybe(g, "max_events", cfg.gen.max_events);
    maybe(g, "temperature", cfg.gen.temperature);
    maybe(g, "kind_mask", cfg.gen.kind_mask);
    if (g.contains("mode"))
      cfg.gen.mode = parse_gen_mode(g.at("mode").get<std::string>());
  }
  if (j.contains("updater")) {
    const auto& u = j.at("updater");
    check_keys(u, {"d_msg"}, "model.updater");
    maybe(u, "d_msg", cfg.upd.d_msg);
  }
  maybe(j, "lambda", cfg.lambda);
  maybe(j, "window", cfg.window);
  cfg.validate();
  return cfg;
}

const std::array<double, graph::kStateDim>& state_scale(graph::NodeKind k) {
  // divisors bringing typical raw magnitudes near [0, 1]
  static const std::array<std::array<double, graph::kStateDim>, graph::kNodeKinds>
      scales = {{
          {20.0, 5.0, 100.0, 1, 1, 1, 1, 1},  // vehicle: speed, accel, position
          {20.0, 100.0, 1, 1, 1, 1, 1, 1},    // lane: mean speed, occupancy veh/km
          {2000.0, 1, 1, 1, 1, 1, 1, 1},      // road: flow veh/h
          {1, 1, 120.0, 1, 1, 1, 1, 1},       // light: green, red, phase seconds
      }};
  return scales[static_cast<std::size_t>(k)];
}

std::vector<double> scaled_state(graph::NodeKind k, const graph::State& s) {
  const auto& div = state_scale(k);
  std::vector<double> out(graph::kStateDim, 0.0);
  for (std::size_t i = 0; i < s.size() && i < out.size(); ++i) out[i] = s[i] / div[i];
  return out;
}

std::vector<double> padded_scaled_state(graph::NodeKind k, const graph::State& s,
                                        std::size_t d) {
  auto out = scaled_state(k, s);
  out.resize(d, 0.0);
  return out;
}

std::string kind_suffix(graph::NodeKind k) { return graph::to_string(k); }
std::string rel_suffix(graph::RelKind r) { return graph::to_string(r); }

void init_model_params(num::ParamStore& ps, Rng& rng, const ModelConfig& cfg) {
  cfg.validate();
  std::size_t d = cfg.enc.d_model;
  std::size_t dw = cfg.enc.d_w;
  std::size_t m = cfg.msg_width();

  num::init_mlp2(ps, rng, "enc.embed", graph::kStateDim, d, d);
  for (int k = 0; k < graph::kNodeKinds; ++k)
    ps.add("enc.kind_bias." + kind_suffix(static_cast<graph::NodeKind>(k)), {d});
  num::init_time_encoding(ps, rng, "enc.time", dw);
  for (int r = 0; r < graph::kRelKinds; ++r)
    num::init_uniform(ps, rng,
                      "enc.rel_emb." + rel_suffix(static_cast<graph::RelKind>(r)),
                      {d}, -0.1, 0.1);
  for (std::size_t l = 1; l <= cfg.enc.layers; ++l) {
    std::string lp = "enc.l" + std::to_string(l);
    double rqk = std::sqrt(6.0 / double(d + dw + cfg.enc.d_q));
    double rv = std::sqrt(6.0 / double(d + dw + d));
    num::init_uniform(ps, rng, lp + ".wq", {cfg.enc.d_q, d + dw}, -rqk, rqk);
    num::init_uniform(ps, rng, lp + ".wk", {cfg.enc.d_q, d + dw}, -rqk, rqk);
    num::init_uniform(ps, rng, lp + ".wv", {d, d + dw}, -rv, rv);
    num::init_mlp2(ps, rng, lp + ".mlp", 2 * d, d, d);
  }

  num::init_uniform(ps, rng, "gen.stop_emb", {d}, -0.1, 0.1);
  num::init_mlp2(ps, rng, "gen.src", d, d, 1);
  num::init_mlp2(ps, rng, "gen.tgt", 2 * d, d, 1);
  num::init_mlp2(ps, rng, "gen.rel", 2 * d, d, graph::kRelKinds);

  num::init_mlp2(ps, rng, "upd.msg", 3 * m, m, m);
  for (int r = 0; r < graph::kRelKinds; ++r) {
    std::string base = "upd.rel_emb." + rel_suffix(static_cast<graph::RelKind>(r));
    num::init_uniform(ps, rng, base + ".fwd", {m}, -0.1, 0.1);
    num::init_uniform(ps, rng, base + ".rev", {m}, -0.1, 0.1);
  }
  num::init_time_encoding(ps, rng, "upd.time", dw);
  num::init_gru(ps, rng, "upd.gru", m + dw, d);
  num::init_affine(ps, rng, "upd.head", graph::kStateDim, d);
}

bool rel_compatible(graph::NodeKind ku, graph::NodeKind kv, graph::RelKind r) {
  using K = graph::NodeKind;
  switch (r) {
    case graph::RelKind::Follows: return ku == K::Vehicle && kv == K::Vehicle;
    case graph::RelKind::OnLane: return ku == K::Vehicle && kv == K::Lane;
    case graph::RelKind::LaneOfRoad: return ku == K::Lane && kv == K::Road;
    case graph::RelKind::Controls: return ku == K::Light && kv == K::Lane;
    case graph::RelKind::AdjacentLane: return ku == K::Lane && kv == K::Lane;
  }
  return false;
}

bool any_rel_compatible(graph::NodeKind ku, graph::NodeKind kv) {
  for (int r = 0; r < graph::kRelKinds; ++r)
    if (rel_compatible(ku, kv, static_cast<graph::RelKind>(r))) return true;
  return false;
}

} // namespace tfm::model
