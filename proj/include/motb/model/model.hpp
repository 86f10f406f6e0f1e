#pragma once

// Mixture-of-transformer-experts backbone.
//
// Every token is routed by modality to one of two expert parameter sets:
// Text and VisUnd tokens use the understanding expert, VisGen and Target
// tokens the generation expert. All tokens share one self-attention per
// layer. Context tokens (everything except Target) never attend to Target
// tokens, so their states do not depend on the noisy latents being denoised.
//
// Internally the sequence is laid out as [understanding-routed streams |
// generation-routed streams], each group in caller order.

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "motb/bridge/bridge.hpp"
#include "motb/model/config.hpp"
#include "motb/model/weights.hpp"
#include "motb/numkit/autograd.hpp"
#include "motb/numkit/tensor.hpp"
#include "motb/synthworld/world.hpp"

namespace motb::model {

enum class Modality : std::uint8_t { Text, VisUnd, VisGen, Target };

std::string_view modality_name(Modality m);

constexpr Expert route(Modality m) {
  return (m == Modality::Text || m == Modality::VisUnd) ? Expert::Understanding
                                                        : Expert::Generation;
}

template <typename T>
struct TokenStream {
  Modality modality = Modality::Text;
  Tensor<T> vectors;  // n x d_model
  std::vector<int> positions;
  std::optional<int> source_image_index;
  std::vector<int> token_ids;  // Text streams only
  std::size_t length() const { return positions.size(); }
};

// Stream metadata without the vectors.
struct StreamInfo {
  Modality modality = Modality::Text;
  std::size_t length = 0;
  std::optional<int> source_image_index;
  std::vector<int> token_ids;
};

// Post-block hidden states, states[layer][stream] in caller stream order.
template <typename T>
struct LayerActivations {
  std::vector<StreamInfo> streams;
  std::vector<std::vector<Tensor<T>>> states;
};

// Where each caller stream lives in the internal concatenated sequence.
struct SequenceLayout {
  std::vector<std::size_t> offset;  // per caller stream
  std::vector<std::size_t> length;
  std::size_t total = 0;
  std::size_t understanding_rows = 0;  // rows [0, understanding_rows) use the und expert
};

struct MaskSpec {
  // Either a precomputed mask ...
  const bridge::SemanticMask* fixed = nullptr;
  // ... or compute one inside the pass from mask_source_layer states.
  std::optional<double> tau;
  bool fallback = true;
};

struct ForwardOptions {
  bool record_attention = false;
};

template <typename T>
struct ForwardResult {
  LayerActivations<T> activations;
  Tensor<T> flow;  // target_len x d_latent
  SequenceLayout layout;
  std::optional<bridge::SemanticMask> mask;
  // attention[layer][head], total x total post-softmax weights (internal order)
  std::vector<std::vector<Tensor<T>>> attention;
};

// Tape-level pieces, used by training and gradient checks.
template <typename T>
struct BoundWeights {
  const WeightLayout* layout = nullptr;
  std::vector<ad::Var> vars;
  ad::Var operator[](std::size_t i) const { return vars[i]; }
};

// trainable[i] marks which parameters become gradient leaves; empty means all.
template <typename T>
BoundWeights<T> bind(ad::Tape<T>& tape, const WeightLayout& layout, const Weights<T>& w,
                     const std::vector<bool>& trainable = {});

template <typename T>
struct StreamVar {
  StreamInfo info;
  ad::Var vectors;
  std::vector<int> positions;
};

template <typename T>
struct TapeForward {
  std::vector<StreamInfo> streams;
  std::vector<ad::Var> layer_states;  // full sequence per layer, internal order
  std::optional<ad::Var> flow;
  SequenceLayout layout;
  std::optional<bridge::SemanticMask> mask;
  std::vector<std::vector<Tensor<T>>> attention;
};

template <typename T>
StreamVar<T> embed_text_var(ad::Tape<T>& tape, const BoundWeights<T>& w, const ModelConfig& cfg,
                            const std::vector<int>& tokens);
template <typename T>
StreamVar<T> embed_cells_var(ad::Tape<T>& tape, const BoundWeights<T>& w, const ModelConfig& cfg,
                             const std::vector<int>& cell_classes, int image_index);
template <typename T>
StreamVar<T> embed_latents_var(ad::Tape<T>& tape, const BoundWeights<T>& w, const ModelConfig& cfg,
                               const Tensor<T>& latents, int image_index);
// Target stream: projected noisy latents plus a timestep embedding.
template <typename T>
StreamVar<T> embed_target_var(ad::Tape<T>& tape, const BoundWeights<T>& w, const ModelConfig& cfg,
                              const Tensor<T>& latents, T t);
template <typename T>
StreamVar<T> constant_stream(ad::Tape<T>& tape, const TokenStream<T>& s);

template <typename T>
TapeForward<T> forward_var(ad::Tape<T>& tape, const BoundWeights<T>& w, const ModelConfig& cfg,
                           const std::vector<StreamVar<T>>& streams, const MaskSpec& mask = {},
                           const ForwardOptions& opts = {});

// Value-level API.
template <typename T>
TokenStream<T> embed_text(const std::vector<int>& tokens, const Weights<T>& w);
template <typename T>
TokenStream<T> embed_scene_und(const world::Scene& scene, int image_index, const Weights<T>& w,
                               const world::WorldConfig& world_cfg);
template <typename T>
TokenStream<T> embed_scene_gen(const Tensor<T>& latents, int image_index, const Weights<T>& w);
template <typename T>
TokenStream<T> embed_target(const Tensor<T>& latents, T t, const Weights<T>& w);

template <typename T>
ForwardResult<T> forward(const std::vector<TokenStream<T>>& streams, const Weights<T>& w,
                         const MaskSpec& mask = {}, const ForwardOptions& opts = {});

// Stream list for one sample: Text, then VisUnd per reference, VisGen per
// reference, then Target.
template <typename T>
std::vector<StreamVar<T>> sample_streams(ad::Tape<T>& tape, const BoundWeights<T>& w,
                                         const ModelConfig& cfg, const world::WorldConfig& world_cfg,
                                         const std::vector<world::Scene>& references,
                                         const std::vector<int>& instruction,
                                         const Tensor<T>& target_latents, T t);

// Gathers Text (minus sentinels) and VisUnd states at the source layer and
// builds the semantic mask. Empty VisUnd yields an empty mask.
template <typename T>
bridge::SemanticMask compute_mask_from_activations(const LayerActivations<T>& acts,
                                                   const ModelConfig& cfg, double tau,
                                                   bool fallback = true);

// Concatenated states of every stream with the given modality at a layer;
// for Text, sentinel tokens are dropped.
template <typename T>
Tensor<T> gather_states(const LayerActivations<T>& acts, int layer, Modality modality,
                        const ModelConfig& cfg);

}  // namespace motb::model
