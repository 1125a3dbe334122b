#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "tfm/graph.hpp"
#include "tfm/params.hpp"
#include "tfm/util.hpp"

namespace tfm::model {

enum class AttentionMode { Paper, Standard };
enum class GenMode { Greedy, Sample };

std::string to_string(AttentionMode m);
std::string to_string(GenMode m);
AttentionMode parse_attention_mode(const std::string& s);
GenMode parse_gen_mode(const std::string& s);

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t d_model = 64;
  std::size_t d_w = 16;
  std::size_t d_q = 64;
  std::size_t k_neighbors = 20;
  // Paper: softmax attention weights additionally averaged by 1/|N|;
  // Standard drops the mean factor.
  AttentionMode attn_mode = AttentionMode::Paper;
};

struct GeneratorConfig {
  std::size_t max_events = 0; // 0: 4 * |V_n|
  double temperature = 1.0;
  GenMode mode = GenMode::Greedy;
  bool kind_mask = false;
};

struct UpdaterConfig {
  std::size_t d_msg = 0; // 0: d_model
};

struct ModelConfig {
  EncoderConfig enc;
  GeneratorConfig gen;
  UpdaterConfig upd;
  double lambda = 1.0; // state-loss weight in the total
  int window = 5;      // snapshot recency window, in steps

  std::size_t msg_width() const { return upd.d_msg ? upd.d_msg : enc.d_model; }
  std::size_t max_events(std::size_t n_nodes) const {
    return gen.max_events ? gen.max_events : 4 * n_nodes;
  }
  // Throws BadArgs on inconsistent dimensions. The per-event embedding
  // refresh reuses the updater message MLP on embeddings, which requires
  // d_msg == d_model.
  void validate() const;
};

nlohmann::ordered_json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Fixed per-kind feature scaling: raw states are divided elementwise before
// entering the networks, and state-head outputs are multiplied back. Loss is
// computed in raw units.
const std::array<double, graph::kStateDim>& state_scale(graph::NodeKind k);

std::vector<double> scaled_state(graph::NodeKind k, const graph::State& s);

// scaled state zero-padded to width d (message space init h_v = s_v)
std::vector<double> padded_scaled_state(graph::NodeKind k, const graph::State& s,
                                        std::size_t d);

// clamp bounds applied to predicted vehicle states
inline constexpr double kVehicleSpeedMax = 50.0;
inline constexpr double kVehicleAccelMax = 10.0;

std::string kind_suffix(graph::NodeKind k); // "vehicle" ...
std::string rel_suffix(graph::RelKind r);   // "follows" ...

// Creates every model parameter with seeded initialization. Call order is
// fixed, so a given seed always produces the same values.
void init_model_params(num::ParamStore& ps, Rng& rng, const ModelConfig& cfg);

} // namespace tfm::model
