#include "motb/model/model.hpp"

#include <cmath>
#include <string>

#include "motb/errors.hpp"
#include "motb/synthworld/codec.hpp"

namespace motb::model {

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::Text: return "text";
    case Modality::VisUnd: return "vis_und";
    case Modality::VisGen: return "vis_gen";
    case Modality::Target: return "target";
  }
  return "?";
}

template <typename T>
BoundWeights<T> bind(ad::Tape<T>& tape, const WeightLayout& layout, const Weights<T>& w,
                     const std::vector<bool>& trainable) {
  if (w.tensors.size() != layout.size()) {
    throw DimensionError("weights hold " + std::to_string(w.tensors.size()) + " tensors, layout expects " +
                         std::to_string(layout.size()));
  }
  BoundWeights<T> b;
  b.layout = &layout;
  b.vars.reserve(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const bool grad = trainable.empty() || trainable[i];
    b.vars.push_back(tape.leaf(w.tensors[i], grad));
  }
  return b;
}

namespace {

std::vector<int> iota_positions(std::size_t n, const ModelConfig& cfg) {
  if (n > static_cast<std::size_t>(cfg.max_positions)) {
    throw CapacityError("stream of " + std::to_string(n) + " tokens exceeds max_positions " +
                        std::to_string(cfg.max_positions));
  }
  std::vector<int> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<int>(i);
  return p;
}

template <typename T>
ad::Var add_positions(ad::Tape<T>& tape, const BoundWeights<T>& w, ad::Var x,
                      const std::vector<int>& positions) {
  std::vector<std::size_t> ids(positions.begin(), positions.end());
  return ad::add(tape, x, ad::gather_rows(tape, w[w.layout->position_embedding], ids));
}

template <typename T>
ad::Var add_image(ad::Tape<T>& tape, const BoundWeights<T>& w, ad::Var x, std::size_t n, int slot) {
  std::vector<std::size_t> ids(n, static_cast<std::size_t>(slot));
  return ad::add(tape, x, ad::gather_rows(tape, w[w.layout->image_embedding], ids));
}

template <typename T>
void check_image_index(int image_index, const ModelConfig& cfg) {
  if (image_index < 0 || image_index >= cfg.max_images) {
    throw CapacityError("image index " + std::to_string(image_index) + " outside [0, " +
                        std::to_string(cfg.max_images) + ")");
  }
}

template <typename T>
Tensor<T> timestep_features(T t, int d) {
  Tensor<T> f({1, static_cast<std::size_t>(d)});
  const int half = d / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(1000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double angle = 1000.0 * static_cast<double>(t) * freq;
    f(0, static_cast<std::size_t>(i)) = static_cast<T>(std::sin(angle));
    f(0, static_cast<std::size_t>(half + i)) = static_cast<T>(std::cos(angle));
  }
  return f;
}

}  // namespace

template <typename T>
StreamVar<T> embed_text_var(ad::Tape<T>& tape, const BoundWeights<T>& w, const ModelConfig& cfg,
                            const std::vector<int>& tokens) {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (int id : tokens) {
    if (id < 0 || id >= cfg.text_vocab) {
      throw VocabularyError("text token " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(cfg.text_vocab));
    }
    ids.push_back(static_cast<std::size_t>(id));
  }
  StreamVar<T> s;
  s.positions = iota_positions(tokens.size(), cfg);
  s.info = StreamInfo{Modality::Text, tokens.size(), std::nullopt, tokens};
  s.vectors = add_positions(tape, w, ad::gather_rows(tape, w[w.layout->text_embedding], ids), s.positions);
  return s;
}

template <typename T>
StreamVar<T> embed_cells_var(ad::Tape<T>& tape, const BoundWeights<T>& w, const ModelConfig& cfg,
                             const std::vector<int>& cell_classes, int image_index) {
  check_image_index<T>(image_index, cfg);
  std::vector<std::size_t> ids;
  for (int c : cell_classes) {
    if (c < 0 || c >= cfg.cell_vocab) throw VocabularyError("cell class " + std::to_string(c) + " outside codebook");
    ids.push_back(static_cast<std::size_t>(c));
  }
  StreamVar<T> s;
  s.positions = iota_positions(ids.size(), cfg);
  s.info = StreamInfo{Modality::VisUnd, ids.size(), image_index, {}};
  ad::Var x = ad::gather_rows(tape, w[w.layout->cell_embedding], ids);
  x = add_positions(tape, w, x, s.positions);
  s.vectors = add_image(tape, w, x, ids.size(), image_index);
  return s;
}

template <typename T>
StreamVar<T> embed_latents_var(ad::Tape<T>& tape, const BoundWeights<T>& w, const ModelConfig& cfg,
                               const Tensor<T>& latents, int image_index) {
  check_image_index<T>(image_index, cfg);
  if (latents.cols() != static_cast<std::size_t>(cfg.d_latent)) {
    throw DimensionError("latent width " + std::to_string(latents.cols()) + " != d_latent");
  }
  StreamVar<T> s;
  s.positions = iota_positions(latents.rows(), cfg);
  s.info = StreamInfo{Modality::VisGen, latents.rows(), image_index, {}};
  ad::Var x = ad::matmul(tape, tape.leaf(latents), w[w.layout->latent_in_w]);
  x = ad::add_row(tape, x, w[w.layout->latent_in_b]);
  x = add_positions(tape, w, x, s.positions);
  s.vectors = add_image(tape, w, x, latents.rows(), image_index);
  return s;
}

template <typename T>
StreamVar<T> embed_target_var(ad::Tape<T>& tape, const BoundWeights<T>& w, const ModelConfig& cfg,
                              const Tensor<T>& latents, T t) {
  if (latents.cols() != static_cast<std::size_t>(cfg.d_latent)) {
    throw DimensionError("latent width " + std::to_string(latents.cols()) + " != d_latent");
  }
  const std::size_t n = latents.rows();
  StreamVar<T> s;
  s.positions = iota_positions(n, cfg);
  s.info = StreamInfo{Modality::Target, n, std::nullopt, {}};
  ad::Var x = ad::matmul(tape, tape.leaf(latents), w[w.layout->latent_in_w]);
  x = ad::add_row(tape, x, w[w.layout->latent_in_b]);
  x = add_positions(tape, w, x, s.positions);
  x = add_image(tape, w, x, n, cfg.max_images);
  ad::Var temb = ad::matmul(tape, tape.leaf(timestep_features(t, cfg.d_model)), w[w.layout->time_w]);
  temb = ad::add_row(tape, temb, w[w.layout->time_b]);
  std::vector<std::size_t> zeros(n, 0);
  s.vectors = ad::add(tape, x, ad::gather_rows(tape, temb, zeros));
  return s;
}

template <typename T>
StreamVar<T> constant_stream(ad::Tape<T>& tape, const TokenStream<T>& s) {
  if (s.vectors.rows() != s.positions.size() && !(s.positions.empty() && s.vectors.size() == 0)) {
    throw DimensionError("token stream vectors/positions length mismatch");
  }
  for (std::size_t i = 1; i < s.positions.size(); ++i) {
    if (s.positions[i] <= s.positions[i - 1]) throw PreconditionError("stream positions must increase");
  }
  StreamVar<T> v;
  v.info = StreamInfo{s.modality, s.length(), s.source_image_index, s.token_ids};
  v.positions = s.positions;
  v.vectors = tape.leaf(s.vectors);
  return v;
}

namespace {

template <typename T>
struct Plan {
  std::vector<std::size_t> order;  // internal position -> caller stream index
  SequenceLayout layout;
  std::size_t gen_rows = 0;
  std::vector<bool> is_target_row;
  std::vector<std::size_t> visund_rows;  // global VisUnd token index -> internal row
  // For every row, index into mask bias or -1 when the row is never masked.
  std::vector<long> mask_slot;
  std::size_t target_offset = 0, target_length = 0;
  bool has_target = false;
};

template <typename T>
Plan<T> plan_sequence(const std::vector<StreamVar<T>>& streams, const ModelConfig& cfg) {
  Plan<T> p;
  for (std::size_t i = 0; i < streams.size(); ++i)
    if (route(streams[i].info.modality) == Expert::Understanding) p.order.push_back(i);
  for (std::size_t i = 0; i < streams.size(); ++i)
    if (route(streams[i].info.modality) == Expert::Generation) p.order.push_back(i);

  p.layout.offset.assign(streams.size(), 0);
  p.layout.length.assign(streams.size(), 0);
  std::size_t off = 0;
  for (std::size_t k : p.order) {
    p.layout.offset[k] = off;
    p.layout.length[k] = streams[k].info.length;
    if (route(streams[k].info.modality) == Expert::Understanding) p.layout.understanding_rows = off + streams[k].info.length;
    off += streams[k].info.length;
  }
  p.layout.total = off;
  p.gen_rows = off - p.layout.understanding_rows;
  if (off > static_cast<std::size_t>(cfg.max_positions)) {
    throw CapacityError("combined sequence of " + std::to_string(off) + " tokens exceeds max_positions " +
                        std::to_string(cfg.max_positions));
  }

  p.is_target_row.assign(off, false);
  p.mask_slot.assign(off, -1);
  std::size_t targets = 0;
  // VisUnd tokens in caller order define the mask index space.
  std::vector<std::pair<int, std::size_t>> visund_start;  // (image, first mask slot)
  for (std::size_t k = 0; k < streams.size(); ++k) {
    const auto& info = streams[k].info;
    if (info.modality == Modality::Target) {
      ++targets;
      p.has_target = true;
      p.target_offset = p.layout.offset[k];
      p.target_length = info.length;
      for (std::size_t r = 0; r < info.length; ++r) p.is_target_row[p.layout.offset[k] + r] = true;
    } else if (info.modality == Modality::VisUnd) {
      visund_start.emplace_back(info.source_image_index.value_or(-1), p.visund_rows.size());
      for (std::size_t r = 0; r < info.length; ++r) {
        p.mask_slot[p.layout.offset[k] + r] = static_cast<long>(p.visund_rows.size());
        p.visund_rows.push_back(p.layout.offset[k] + r);
      }
    }
  }
  if (targets > 1) throw StreamError("at most one Target stream per forward pass");
  if (cfg.mask_visgen) {
    for (std::size_t k = 0; k < streams.size(); ++k) {
      const auto& info = streams[k].info;
      if (info.modality != Modality::VisGen) continue;
      const int image = info.source_image_index.value_or(-1);
      for (const auto& [img, first] : visund_start) {
        if (img != image) continue;
        for (std::size_t r = 0; r < info.length; ++r) {
          if (first + r < p.visund_rows.size()) p.mask_slot[p.layout.offset[k] + r] = static_cast<long>(first + r);
        }
      }
    }
  }
  return p;
}

template <typename T>
bridge::SemanticMask mask_from_sequence(const Tensor<T>& seq, const std::vector<StreamInfo>& streams,
                                        const SequenceLayout& layout, const ModelConfig& cfg, int layer,
                                        double tau, bool fallback) {
  const std::size_t d = seq.cols();
  std::vector<T> text, vis;
  bool has_text = false;
  for (std::size_t k = 0; k < streams.size(); ++k) {
    const auto& info = streams[k];
    if (info.modality == Modality::Text) {
      has_text = true;
      for (std::size_t r = 0; r < info.length; ++r) {
        const int id = r < info.token_ids.size() ? info.token_ids[r] : -1;
        if (id == cfg.bos_id || id == cfg.eos_id) continue;
        const auto row = seq.row(layout.offset[k] + r);
        text.insert(text.end(), row.begin(), row.end());
      }
    } else if (info.modality == Modality::VisUnd) {
      for (std::size_t r = 0; r < info.length; ++r) {
        const auto row = seq.row(layout.offset[k] + r);
        vis.insert(vis.end(), row.begin(), row.end());
      }
    }
  }
  bridge::SemanticMask m;
  if (vis.empty()) {
    m.threshold = tau;
  } else {
    if (!has_text) throw StreamError("mask computation needs a Text stream");
    const std::size_t nt = text.size() / d, nv = vis.size() / d;
    const Tensor<T> tv({nt, d}, std::move(text));
    const Tensor<T> vv({nv, d}, std::move(vis));
    m = bridge::build_mask(bridge::relevance_from_states(vv, tv), tau, fallback);
  }
  m.source_layer = layer;
  return m;
}

template <typename T>
Tensor<T> make_bias(const Plan<T>& plan, const bridge::SemanticMask* mask) {
  const std::size_t n = plan.layout.total;
  Tensor<T> bias({n, n});
  const T neg_inf = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!plan.is_target_row[i] && plan.is_target_row[j]) {
        bias(i, j) = neg_inf;
      } else if (mask && plan.is_target_row[i] && plan.mask_slot[j] >= 0) {
        bias(i, j) = static_cast<T>(mask->bias[static_cast<std::size_t>(plan.mask_slot[j])]);
      }
    }
  }
  return bias;
}

template <typename T>
void check_mask(const bridge::SemanticMask& mask, const Plan<T>& plan) {
  if (mask.size() != plan.visund_rows.size()) {
    throw MaskShapeError("mask has " + std::to_string(mask.size()) + " entries but the sequence holds " +
                         std::to_string(plan.visund_rows.size()) + " reference visual tokens");
  }
  if (mask.size() > 0 && mask.visible_count() == 0 && plan.has_target) {
    throw DegenerateRowError("every reference visual token is masked for Target queries");
  }
}

// Applies f_und to understanding rows and f_gen to generation rows.
template <typename T, typename F>
ad::Var routed(ad::Tape<T>& tape, ad::Var x, std::size_t und_rows, std::size_t gen_rows, F&& f) {
  std::vector<ad::Var> parts;
  if (und_rows > 0) parts.push_back(f(ad::row_slice(tape, x, 0, und_rows), Expert::Understanding));
  if (gen_rows > 0) parts.push_back(f(ad::row_slice(tape, x, und_rows, gen_rows), Expert::Generation));
  if (parts.size() == 1) return parts[0];
  return ad::concat_rows<T>(tape, parts);
}

}  // namespace

template <typename T>
TapeForward<T> forward_var(ad::Tape<T>& tape, const BoundWeights<T>& w, const ModelConfig& cfg,
                           const std::vector<StreamVar<T>>& streams, const MaskSpec& mask_spec,
                           const ForwardOptions& opts) {
  const WeightLayout& L = *w.layout;
  Plan<T> plan = plan_sequence(streams, cfg);
  TapeForward<T> out;
  for (const auto& s : streams) out.streams.push_back(s.info);
  out.layout = plan.layout;
  if (plan.layout.total == 0) throw StreamError("forward needs at least one token");

  std::optional<bridge::SemanticMask> mask;
  if (mask_spec.fixed) {
    check_mask(*mask_spec.fixed, plan);
    mask = *mask_spec.fixed;
  }

  std::vector<ad::Var> parts;
  for (std::size_t k : plan.order) {
    if (streams[k].info.length > 0) parts.push_back(streams[k].vectors);
  }
  ad::Var x = parts.size() == 1 ? parts[0] : ad::concat_rows<T>(tape, parts);

  const std::size_t nu = plan.layout.understanding_rows, ng = plan.gen_rows;
  const std::size_t heads = static_cast<std::size_t>(cfg.n_heads);
  const std::size_t dh = static_cast<std::size_t>(cfg.head_dim());
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(dh));
  const Tensor<T> plain_bias = make_bias(plan, nullptr);
  std::optional<Tensor<T>> masked_bias;
  if (mask) masked_bias = make_bias(plan, &*mask);

  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& idx = L.layers[static_cast<std::size_t>(l)];
    auto ex = [&](Expert e) -> const ExpertLayerIndex& { return idx[static_cast<std::size_t>(e)]; };

    ad::Var h = routed<T>(tape, x, nu, ng, [&](ad::Var part, Expert e) {
      return ad::layernorm(tape, part, w[ex(e).ln1_gain], w[ex(e).ln1_bias]);
    });
    auto project = [&](std::size_t ExpertLayerIndex::*which) {
      return routed<T>(tape, h, nu, ng,
                       [&](ad::Var part, Expert e) { return ad::matmul(tape, part, w[ex(e).*which]); });
    };
    const ad::Var q = project(&ExpertLayerIndex::wq);
    const ad::Var k = project(&ExpertLayerIndex::wk);
    const ad::Var v = project(&ExpertLayerIndex::wv);

    const bool apply_mask = mask && l >= cfg.masked_layer_lo && l <= cfg.masked_layer_hi;
    const Tensor<T>& bias = apply_mask ? *masked_bias : plain_bias;

    std::vector<ad::Var> head_out;
    std::vector<Tensor<T>> probs;
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const ad::Var qh = ad::col_slice(tape, q, hd * dh, dh);
      const ad::Var kh = ad::col_slice(tape, k, hd * dh, dh);
      const ad::Var vh = ad::col_slice(tape, v, hd * dh, dh);
      ad::Var logits = ad::scale(tape, ad::matmul_nt(tape, qh, kh), inv_sqrt);
      logits = ad::add_const(tape, logits, bias);
      const ad::Var p = ad::softmax_rows(tape, logits);
      if (opts.record_attention) probs.push_back(tape.value(p));
      head_out.push_back(ad::matmul(tape, p, vh));
    }
    if (opts.record_attention) out.attention.push_back(std::move(probs));
    const ad::Var o = heads == 1 ? head_out[0] : ad::concat_cols<T>(tape, head_out);
    const ad::Var attn = routed<T>(tape, o, nu, ng, [&](ad::Var part, Expert e) {
      return ad::matmul(tape, part, w[ex(e).wo]);
    });
    x = ad::add(tape, x, attn);

    const ad::Var ffn = routed<T>(tape, x, nu, ng, [&](ad::Var part, Expert e) {
      const auto& p = ex(e);
      ad::Var y = ad::layernorm(tape, part, w[p.ln2_gain], w[p.ln2_bias]);
      y = ad::add_row(tape, ad::matmul(tape, y, w[p.w1]), w[p.b1]);
      y = ad::gelu(tape, y);
      return ad::add_row(tape, ad::matmul(tape, y, w[p.w2]), w[p.b2]);
    });
    x = ad::add(tape, x, ffn);
    out.layer_states.push_back(x);

    if (l == cfg.mask_source_layer && !mask && mask_spec.tau) {
      mask = mask_from_sequence(tape.value(x), out.streams, plan.layout, cfg, l, *mask_spec.tau,
                                mask_spec.fallback);
      check_mask(*mask, plan);
      masked_bias = make_bias(plan, &*mask);
    }
  }

  if (plan.has_target && plan.target_length > 0) {
    ad::Var tgt = ad::row_slice(tape, x, plan.target_offset, plan.target_length);
    tgt = ad::layernorm(tape, tgt, w[L.head_ln_gain], w[L.head_ln_bias]);
    out.flow = ad::add_row(tape, ad::matmul(tape, tgt, w[L.head_w]), w[L.head_b]);
  }
  out.mask = std::move(mask);
  return out;
}

template <typename T>
TokenStream<T> embed_text(const std::vector<int>& tokens, const Weights<T>& w) {
  const WeightLayout layout(w.config);
  ad::Tape<T> tape(false);
  const auto b = bind(tape, layout, w);
  const auto s = embed_text_var(tape, b, w.config, tokens);
  return TokenStream<T>{Modality::Text, tape.value(s.vectors), s.positions, std::nullopt, tokens};
}

template <typename T>
TokenStream<T> embed_scene_und(const world::Scene& scene, int image_index, const Weights<T>& w,
                               const world::WorldConfig& world_cfg) {
  if (scene.rows * scene.cols > w.config.max_positions) {
    throw CapacityError("scene of " + std::to_string(scene.rows * scene.cols) + " cells exceeds max_positions");
  }
  const WeightLayout layout(w.config);
  ad::Tape<T> tape(false);
  const auto b = bind(tape, layout, w);
  const world::Codec codec(world_cfg);
  const auto s = embed_cells_var(tape, b, w.config, codec.cell_classes(scene), image_index);
  return TokenStream<T>{Modality::VisUnd, tape.value(s.vectors), s.positions, image_index, {}};
}

template <typename T>
TokenStream<T> embed_scene_gen(const Tensor<T>& latents, int image_index, const Weights<T>& w) {
  const WeightLayout layout(w.config);
  ad::Tape<T> tape(false);
  const auto b = bind(tape, layout, w);
  const auto s = embed_latents_var(tape, b, w.config, latents, image_index);
  return TokenStream<T>{Modality::VisGen, tape.value(s.vectors), s.positions, image_index, {}};
}

template <typename T>
TokenStream<T> embed_target(const Tensor<T>& latents, T t, const Weights<T>& w) {
  const WeightLayout layout(w.config);
  ad::Tape<T> tape(false);
  const auto b = bind(tape, layout, w);
  const auto s = embed_target_var(tape, b, w.config, latents, t);
  return TokenStream<T>{Modality::Target, tape.value(s.vectors), s.positions, std::nullopt, {}};
}

namespace {

template <typename T>
LayerActivations<T> collect(const ad::Tape<T>& tape, const TapeForward<T>& f) {
  LayerActivations<T> acts;
  acts.streams = f.streams;
  for (ad::Var state : f.layer_states) {
    const Tensor<T>& seq = tape.value(state);
    const std::size_t d = seq.cols();
    std::vector<Tensor<T>> per_stream;
    for (std::size_t k = 0; k < f.streams.size(); ++k) {
      const std::size_t n = f.layout.length[k], off = f.layout.offset[k];
      std::vector<T> data(seq.storage().begin() + static_cast<std::ptrdiff_t>(off * d),
                          seq.storage().begin() + static_cast<std::ptrdiff_t>((off + n) * d));
      per_stream.emplace_back(std::vector<std::size_t>{n, d}, std::move(data));
    }
    acts.states.push_back(std::move(per_stream));
  }
  return acts;
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const std::vector<TokenStream<T>>& streams, const Weights<T>& w,
                         const MaskSpec& mask, const ForwardOptions& opts) {
  const WeightLayout layout(w.config);
  ad::Tape<T> tape(false);
  const auto b = bind(tape, layout, w);
  std::vector<StreamVar<T>> vars;
  for (const auto& s : streams) {
    if (s.vectors.size() > 0 && s.vectors.cols() != static_cast<std::size_t>(w.config.d_model)) {
      throw DimensionError("stream width differs from d_model");
    }
    vars.push_back(constant_stream(tape, s));
    if (s.length() == 0) vars.back().vectors = tape.leaf(Tensor<T>({0, static_cast<std::size_t>(w.config.d_model)}));
  }
  auto f = forward_var(tape, b, w.config, vars, mask, opts);
  ForwardResult<T> r;
  r.activations = collect(tape, f);
  r.layout = f.layout;
  r.mask = f.mask;
  r.attention = std::move(f.attention);
  if (f.flow) {
    r.flow = tape.value(*f.flow);
  } else {
    r.flow = Tensor<T>({0, static_cast<std::size_t>(w.config.d_latent)});
  }
  return r;
}

template <typename T>
std::vector<StreamVar<T>> sample_streams(ad::Tape<T>& tape, const BoundWeights<T>& w,
                                         const ModelConfig& cfg, const world::WorldConfig& world_cfg,
                                         const std::vector<world::Scene>& references,
                                         const std::vector<int>& instruction,
                                         const Tensor<T>& target_latents, T t) {
  const world::Codec codec(world_cfg);
  std::vector<StreamVar<T>> streams;
  streams.push_back(embed_text_var(tape, w, cfg, instruction));
  for (std::size_t k = 0; k < references.size(); ++k) {
    streams.push_back(embed_cells_var(tape, w, cfg, codec.cell_classes(references[k]), static_cast<int>(k)));
  }
  for (std::size_t k = 0; k < references.size(); ++k) {
    streams.push_back(embed_latents_var(tape, w, cfg, codec.render<T>(references[k]), static_cast<int>(k)));
  }
  streams.push_back(embed_target_var(tape, w, cfg, target_latents, t));
  return streams;
}

template <typename T>
Tensor<T> gather_states(const LayerActivations<T>& acts, int layer, Modality modality,
                        const ModelConfig& cfg) {
  if (layer < 0 || static_cast<std::size_t>(layer) >= acts.states.size()) {
    throw PreconditionError("layer " + std::to_string(layer) + " not captured");
  }
  const auto& per_stream = acts.states[static_cast<std::size_t>(layer)];
  std::vector<T> data;
  std::size_t d = static_cast<std::size_t>(cfg.d_model);
  for (std::size_t k = 0; k < acts.streams.size(); ++k) {
    const auto& info = acts.streams[k];
    if (info.modality != modality) continue;
    for (std::size_t r = 0; r < info.length; ++r) {
      if (modality == Modality::Text) {
        const int id = r < info.token_ids.size() ? info.token_ids[r] : -1;
        if (id == cfg.bos_id || id == cfg.eos_id) continue;
      }
      const auto row = per_stream[k].row(r);
      data.insert(data.end(), row.begin(), row.end());
    }
  }
  const std::size_t n = data.size() / d;
  return Tensor<T>({n, d}, std::move(data));
}

template <typename T>
bridge::SemanticMask compute_mask_from_activations(const LayerActivations<T>& acts,
                                                   const ModelConfig& cfg, double tau, bool fallback) {
  bool has_text = false;
  for (const auto& s : acts.streams) has_text = has_text || s.modality == Modality::Text;
  const Tensor<T> vis = gather_states(acts, cfg.mask_source_layer, Modality::VisUnd, cfg);
  bridge::SemanticMask m;
  if (vis.rows() == 0) {
    m.threshold = tau;
  } else {
    if (!has_text) throw StreamError("mask computation needs a Text stream");
    const Tensor<T> text = gather_states(acts, cfg.mask_source_layer, Modality::Text, cfg);
    m = bridge::build_mask(bridge::relevance_from_states(vis, text), tau, fallback);
  }
  m.source_layer = cfg.mask_source_layer;
  return m;
}

#define MOTB_INSTANTIATE(T)                                                                                \
  template BoundWeights<T> bind(ad::Tape<T>&, const WeightLayout&, const Weights<T>&, const std::vector<bool>&); \
  template StreamVar<T> embed_text_var(ad::Tape<T>&, const BoundWeights<T>&, const ModelConfig&,          \
                                       const std::vector<int>&);                                           \
  template StreamVar<T> embed_cells_var(ad::Tape<T>&, const BoundWeights<T>&, const ModelConfig&,         \
                                        const std::vector<int>&, int);                                     \
  template StreamVar<T> embed_latents_var(ad::Tape<T>&, const BoundWeights<T>&, const ModelConfig&,       \
                                          const Tensor<T>&, int);                                          \
  template StreamVar<T> embed_target_var(ad::Tape<T>&, const BoundWeights<T>&, const ModelConfig&,        \
                                         const Tensor<T>&, T);                                             \
  template StreamVar<T> constant_stream(ad::Tape<T>&, const TokenStream<T>&);                             \
  template TapeForward<T> forward_var(ad::Tape<T>&, const BoundWeights<T>&, const ModelConfig&,           \
                                      const std::vector<StreamVar<T>>&, const MaskSpec&,                   \
                                      const ForwardOptions&);                                              \
  template TokenStream<T> embed_text(const std::vector<int>&, const Weights<T>&);                          \
  template TokenStream<T> embed_scene_und(const world::Scene&, int, const Weights<T>&,                     \
                                          const world::WorldConfig&);                                      \
  template TokenStream<T> embed_scene_gen(const Tensor<T>&, int, const Weights<T>&);                       \
  template TokenStream<T> embed_target(const Tensor<T>&, T, const Weights<T>&);                            \
  template ForwardResult<T> forward(const std::vector<TokenStream<T>>&, const Weights<T>&,                 \
                                    const MaskSpec&, const ForwardOptions&);                               \
  template std::vector<StreamVar<T>> sample_streams(ad::Tape<T>&, const BoundWeights<T>&,                  \
                                                    const ModelConfig&, const world::WorldConfig&,         \
                                                    const std::vector<world::Scene>&,                      \
                                                    const std::vector<int>&, const Tensor<T>&, T);         \
  template Tensor<T> gather_states(const LayerActivations<T>&, int, Modality, const ModelConfig&);         \
  template bridge::SemanticMask compute_mask_from_activations(const LayerActivations<T>&,                  \
                                                              const ModelConfig&, double, bool);

MOTB_INSTANTIATE(float)
MOTB_INSTANTIATE(double)

#undef MOTB_INSTANTIATE

}  // namespace motb::model
