#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "motb/bridge/bridge.hpp"
#include "motb/model/weights.hpp"
#include "motb/synthworld/world.hpp"

namespace motb::model {

enum class MaskPolicy { Inactive, Active };

struct SamplerOptions {
  int steps = 8;
  MaskPolicy policy = MaskPolicy::Active;
  double tau = 0.88;
  bool fallback = true;
  std::uint64_t seed = 0;
};

struct Generation {
  world::Scene scene;
  Tensor<float> latents;
  std::optional<bridge::SemanticMask> mask;
};

// Euler integration of the learned velocity field from unit-Gaussian latents
// over t = 0, 1/steps, ..., then nearest-codeword decoding. With an active
// mask policy the mask is recomputed at every step and must match the
// first step's mask exactly (context states do not depend on the latents).
Generation sample_generate(const std::vector<world::Scene>& references, const std::vector<int>& instruction,
                           const SamplerOptions& opts, const Weights<float>& weights,
                           const world::WorldConfig& world_cfg);

}  // namespace motb::model
