#pragma once

// Helpers shared by the unit and acceptance tests: stream construction for a
// sample and an independent recomputation of attention logits.

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "motb/model/model.hpp"
#include "motb/numkit/ops.hpp"
#include "motb/synthworld/codec.hpp"

namespace motb::testkit {

// Small random model; init shortcuts off so every weight is random.
inline model::ModelConfig random_model_config(int layers, int d_model) {
  model::ModelConfig cfg;
  cfg.n_layers = layers;
  cfg.d_model = d_model;
  cfg.d_ff = 2 * d_model;
  cfg.mask_source_layer = layers >= 4 ? 1 : 0;
  cfg.masked_layer_lo = cfg.mask_source_layer + 1;
  cfg.masked_layer_hi = layers - 1;
  cfg.init.expert_copy = false;
  cfg.init.tie_qk = false;
  cfg.init.zero_head = false;
  return cfg;
}

template <typename T>
std::vector<model::TokenStream<T>> sample_streams(const world::Sample& s, const model::Weights<T>& w,
                                                  const world::WorldConfig& wc, std::uint64_t noise_seed,
                                                  T t = T(0.5)) {
  const world::Codec codec(wc);
  std::vector<model::TokenStream<T>> out;
  out.push_back(model::embed_text(s.instruction, w));
  for (std::size_t k = 0; k < s.references.size(); ++k)
    out.push_back(model::embed_scene_und(s.references[k], static_cast<int>(k), w, wc));
  for (std::size_t k = 0; k < s.references.size(); ++k)
    out.push_back(model::embed_scene_gen(codec.render<T>(s.references[k]), static_cast<int>(k), w));
  Tensor<T> noise({static_cast<std::size_t>(wc.rows * wc.cols), static_cast<std::size_t>(codec.latent_dim())});
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : noise.storage()) v = static_cast<T>(n(rng));
  out.push_back(model::embed_target(noise, t, w));
  return out;
}

// Rows of the internal sequence that belong to Target.
template <typename T>
std::vector<bool> target_rows(const model::ForwardResult<T>& r) {
  std::vector<bool> rows(r.layout.total, false);
  for (std::size_t k = 0; k < r.activations.streams.size(); ++k) {
    if (r.activations.streams[k].modality != model::Modality::Target) continue;
    for (std::size_t i = 0; i < r.layout.length[k]; ++i) rows[r.layout.offset[k] + i] = true;
  }
  return rows;
}

// Internal columns hidden from Target by the mask: VisUnd tokens with a -inf
// bias and, when mask_visgen is on, the VisGen tokens of the same image.
template <typename T>
std::vector<bool> masked_columns(const model::ForwardResult<T>& r, const bridge::SemanticMask& mask,
                                 const model::ModelConfig& cfg) {
  std::vector<bool> cols(r.layout.total, false);
  const auto& streams = r.activations.streams;
  std::size_t slot = 0;
  for (std::size_t k = 0; k < streams.size(); ++k) {
    if (streams[k].modality != model::Modality::VisUnd) continue;
    const std::size_t first = slot;
    for (std::size_t i = 0; i < r.layout.length[k]; ++i, ++slot)
      cols[r.layout.offset[k] + i] = !mask.visible(slot);
    if (!cfg.mask_visgen) continue;
    for (std::size_t g = 0; g < streams.size(); ++g) {
      if (streams[g].modality != model::Modality::VisGen ||
          streams[g].source_image_index != streams[k].source_image_index)
        continue;
      for (std::size_t i = 0; i < r.layout.length[g] && i < r.layout.length[k]; ++i)
        cols[r.layout.offset[g] + i] = !mask.visible(first + i);
    }
  }
  return cols;
}

// Pre-softmax logits of every head at `layer`, recomputed from the layer input
// (embeddings for layer 0, the previous post-block states otherwise) with
// only the context-cannot-see-Target bias applied.
template <typename T>
std::vector<Tensor<T>> recompute_logits(const std::vector<model::TokenStream<T>>& streams,
                                        const model::ForwardResult<T>& r, const model::Weights<T>& w, int layer) {
  const auto& cfg = w.config;
  const model::WeightLayout L(cfg);
  const std::size_t n = r.layout.total, d = static_cast<std::size_t>(cfg.d_model);
  Tensor<T> x({n, d});
  for (std::size_t k = 0; k < streams.size(); ++k) {
    const Tensor<T>& src = layer == 0 ? streams[k].vectors : r.activations.states[static_cast<std::size_t>(layer - 1)][k];
    for (std::size_t i = 0; i < r.layout.length[k]; ++i)
      for (std::size_t c = 0; c < d; ++c) x(r.layout.offset[k] + i, c) = src(i, c);
  }
  const auto& idx = L.layers[static_cast<std::size_t>(layer)];
  Tensor<T> q({n, d}), kk({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = idx[i < r.layout.understanding_rows ? 0 : 1];
    Tensor<T> row({1, d});
    for (std::size_t c = 0; c < d; ++c) row(0, c) = x(i, c);
    const Tensor<T> h = layernorm(row, w.tensors[e.ln1_gain], w.tensors[e.ln1_bias]);
    const Tensor<T> qi = matmul(h, w.tensors[e.wq]), ki = matmul(h, w.tensors[e.wk]);
    for (std::size_t c = 0; c < d; ++c) {
      q(i, c) = qi(0, c);
      kk(i, c) = ki(0, c);
    }
  }
  const auto rows = target_rows(r);
  const std::size_t heads = static_cast<std::size_t>(cfg.n_heads), dh = d / heads;
  std::vector<Tensor<T>> out;
  for (std::size_t hd = 0; hd < heads; ++hd) {
    Tensor<T> lg({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (!rows[i] && rows[j]) {
          lg(i, j) = -std::numeric_limits<T>::infinity();
          continue;
        }
        T acc = 0;
        for (std::size_t c = 0; c < dh; ++c) acc += q(i, hd * dh + c) * kk(j, hd * dh + c);
        lg(i, j) = acc / std::sqrt(static_cast<T>(dh));
      }
    out.push_back(std::move(lg));
  }
  return out;
}

// Softmax of one logit row restricted to the columns where keep[j] holds.
template <typename T>
std::vector<double> restricted_softmax(const Tensor<T>& logits, std::size_t row, const std::vector<bool>& keep) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < logits.cols(); ++j)
    if (keep[j]) mx = std::max(mx, static_cast<double>(logits(row, j)));
  std::vector<double> p(logits.cols(), 0.0);
  double z = 0.0;
  for (std::size_t j = 0; j < logits.cols(); ++j)
    if (keep[j] && std::isfinite(static_cast<double>(logits(row, j)))) z += p[j] = std::exp(logits(row, j) - mx);
  for (auto& v : p) v /= z;
  return p;
}

}  // namespace motb::testkit
