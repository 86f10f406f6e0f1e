#pragma once

#include "json.hpp"

namespace motb::model {

// Seeded initialisation choices. Defaults give a model that learns to copy
// reference cells within a few hundred steps.
struct InitScheme {
  // Generation-expert layers start as copies of the understanding expert.
  bool expert_copy = true;
  // Key projections start equal to the query projections, so attention
  // initially favours tokens with similar embeddings (same position).
  bool tie_qk = true;
  bool zero_head = true;
  double query_gain = 1.5;
  double position_std = 3.0;
  double image_std = 0.1;
  // When both are positive, subject cell embeddings are the sum of a colour
  // and a shape vector, and the colour/shape text tokens reuse those vectors.
  int attribute_shapes = 4;
  int attribute_colors = 4;
  bool operator==(const InitScheme&) const = default;
};

struct ModelConfig {
  int d_model = 32;
  int n_layers = 8;
  int n_heads = 2;
  int d_ff = 64;
  int text_vocab = 19;
  int cell_vocab = 20;
  int d_latent = 20;
  int max_positions = 384;
  int max_images = 4;
  // Layer whose post-block states feed the relevance scoring, and the
  // inclusive layer range whose Target->reference logits receive the mask.
  int mask_source_layer = 2;
  int masked_layer_lo = 3;
  int masked_layer_hi = 5;
  // Also mask the latent tokens of each reference image with the mask
  // computed from its understanding tokens.
  bool mask_visgen = true;
  int bos_id = 0;
  int eos_id = 1;
  InitScheme init;

  int head_dim() const { return d_model / n_heads; }

  // Throws ConfigError on a violated invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
// Missing keys keep their defaults; the result is validated.
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace motb::model
