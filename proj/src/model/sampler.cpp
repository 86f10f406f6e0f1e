#include "motb/model/sampler.hpp"

#include <random>

#include "motb/errors.hpp"
#include "motb/model/model.hpp"
#include "motb/synthworld/codec.hpp"

namespace motb::model {

Generation sample_generate(const std::vector<world::Scene>& references, const std::vector<int>& instruction,
                           const SamplerOptions& opts, const Weights<float>& weights,
                           const world::WorldConfig& world_cfg) {
  if (opts.steps < 1) throw PreconditionError("sample_generate needs at least one step");
  const ModelConfig& cfg = weights.config;
  const WeightLayout layout(cfg);
  const world::Codec codec(world_cfg);
  const std::size_t cells = static_cast<std::size_t>(world_cfg.rows * world_cfg.cols);

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Tensor<float> x({cells, static_cast<std::size_t>(cfg.d_latent)});
  for (auto& v : x.storage()) v = normal(rng);

  Generation out;
  const float dt = 1.0f / static_cast<float>(opts.steps);
  for (int step = 0; step < opts.steps; ++step) {
    const float t = static_cast<float>(step) * dt;
    ad::Tape<float> tape(false);
    const auto bound = bind(tape, layout, weights);
    const auto streams = sample_streams(tape, bound, cfg, world_cfg, references, instruction, x, t);
    MaskSpec spec;
    if (opts.policy == MaskPolicy::Active) {
      spec.tau = opts.tau;
      spec.fallback = opts.fallback;
    }
    const auto f = forward_var(tape, bound, cfg, streams, spec);
    if (opts.policy == MaskPolicy::Active) {
      if (!out.mask) {
        out.mask = f.mask;
      } else if (!(*out.mask == *f.mask)) {
        throw Error("semantic mask changed between sampling steps");
      }
    }
    const Tensor<float>& v = tape.value(*f.flow);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += dt * v[i];
  }
  out.scene = codec.decode(x, world_cfg.rows, world_cfg.cols);
  out.latents = std::move(x);
  return out;
}

}  // namespace motb::model
