#include "motb/model/weights.hpp"

#include <array>
#include <cmath>
#include <random>

#include "motb/errors.hpp"

namespace motb::model {

std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::Understanding: return "understanding";
    case ParamGroup::Generation: return "generation";
    case ParamGroup::SharedEmbeddings: return "shared_embeddings";
    case ParamGroup::FlowHead: return "flow_head";
  }
  return "?";
}

ParamGroup parse_group(std::string_view name) {
  for (ParamGroup g : kAllGroups) {
    if (group_name(g) == name) return g;
  }
  throw ConfigError("unknown parameter group '" + std::string(name) + "'");
}

std::size_t WeightLayout::add(std::string name, ParamGroup group, std::vector<std::size_t> shape) {
  specs_.push_back(ParamSpec{std::move(name), group, std::move(shape)});
  return specs_.size() - 1;
}

WeightLayout::WeightLayout(const ModelConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto ff = static_cast<std::size_t>(cfg.d_ff);
  const auto lat = static_cast<std::size_t>(cfg.d_latent);
  using G = ParamGroup;

  text_embedding = add("embed.text", G::SharedEmbeddings, {static_cast<std::size_t>(cfg.text_vocab), d});
  cell_embedding = add("embed.cell", G::SharedEmbeddings, {static_cast<std::size_t>(cfg.cell_vocab), d});
  position_embedding =
      add("embed.position", G::SharedEmbeddings, {static_cast<std::size_t>(cfg.max_positions), d});
  image_embedding =
      add("embed.image", G::SharedEmbeddings, {static_cast<std::size_t>(cfg.max_images) + 1, d});
  latent_in_w = add("gen.latent_in.w", G::Generation, {lat, d});
  latent_in_b = add("gen.latent_in.b", G::Generation, {d});
  time_w = add("gen.time.w", G::Generation, {d, d});
  time_b = add("gen.time.b", G::Generation, {d});

  constexpr const char* kExpertPrefix[] = {"und", "gen"};
  constexpr G kExpertGroup[] = {G::Understanding, G::Generation};
  for (int l = 0; l < cfg.n_layers; ++l) {
    std::array<ExpertLayerIndex, 2> entry{};
    for (int e = 0; e < 2; ++e) {
      const std::string p = std::string(kExpertPrefix[e]) + ".layer" + std::to_string(l) + ".";
      const G g = kExpertGroup[e];
      auto& x = entry[static_cast<std::size_t>(e)];
      x.ln1_gain = add(p + "ln1.gain", g, {d});
      x.ln1_bias = add(p + "ln1.bias", g, {d});
      x.wq = add(p + "attn.wq", g, {d, d});
      x.wk = add(p + "attn.wk", g, {d, d});
      x.wv = add(p + "attn.wv", g, {d, d});
      x.wo = add(p + "attn.wo", g, {d, d});
      x.ln2_gain = add(p + "ln2.gain", g, {d});
      x.ln2_bias = add(p + "ln2.bias", g, {d});
      x.w1 = add(p + "ffn.w1", g, {d, ff});
      x.b1 = add(p + "ffn.b1", g, {ff});
      x.w2 = add(p + "ffn.w2", g, {ff, d});
      x.b2 = add(p + "ffn.b2", g, {d});
    }
    layers.push_back(entry);
  }

  head_ln_gain = add("head.ln.gain", G::FlowHead, {d});
  head_ln_bias = add("head.ln.bias", G::FlowHead, {d});
  head_w = add("head.w", G::FlowHead, {d, lat});
  head_b = add("head.b", G::FlowHead, {lat});
}

std::size_t WeightLayout::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : specs_) {
    std::size_t k = 1;
    for (auto e : s.shape) k *= e;
    n += k;
  }
  return n;
}

std::size_t WeightLayout::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (specs_[i].name == name) return i;
  }
  throw Error("no parameter named '" + std::string(name) + "'");
}

template <typename T>
Weights<T> Weights<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  const WeightLayout layout(cfg);
  const InitScheme& scheme = cfg.init;
  std::mt19937_64 rng(seed);
  Weights<T> w;
  w.config = cfg;
  const double residual_scale = 1.0 / std::sqrt(2.0 * cfg.n_layers);
  for (const auto& spec : layout.specs()) {
    Tensor<T> t(spec.shape);
    const std::string& n = spec.name;
    auto starts_with = [&](std::string_view prefix) { return n.rfind(prefix, 0) == 0; };
    auto ends_with = [&](std::string_view suffix) {
      return n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    double stddev = 0.0;
    if (ends_with(".gain")) {
      for (auto& v : t.storage()) v = T{1};
    } else if (ends_with(".bias") || ends_with(".b") || ends_with(".b1") || ends_with(".b2")) {
      // zero
    } else if (starts_with("embed.position")) {
      stddev = scheme.position_std;
    } else if (starts_with("embed.image")) {
      stddev = scheme.image_std;
    } else if (starts_with("embed.")) {
      stddev = 1.0;
    } else if (n == "head.w" && scheme.zero_head) {
      // zero
    } else {
      stddev = 1.0 / std::sqrt(static_cast<double>(spec.shape[0]));
      if (ends_with("attn.wo") || ends_with("ffn.w2")) stddev *= residual_scale;
      if (ends_with("attn.wq")) stddev *= scheme.query_gain;
    }

    if (scheme.expert_copy && starts_with("gen.layer")) {
      t = w.tensors[layout.index_of("und" + n.substr(3))];
    } else if (scheme.tie_qk && ends_with("attn.wk")) {
      t = w.tensors[layout.index_of(n.substr(0, n.size() - 2) + "wq")];
    } else if (stddev > 0.0) {
      std::normal_distribution<double> dist(0.0, stddev);
      for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
    }
    w.tensors.push_back(std::move(t));
  }

  const int ns = scheme.attribute_shapes, nc = scheme.attribute_colors;
  if (ns > 0 && nc > 0) {
    // Cell class nc + s * nc + c is shape s in colour c; text token layout
    // follows the instruction vocabulary (3 + max_images + c, then shapes).
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    std::normal_distribution<double> dist(0.0, std::sqrt(0.5));
    auto draw = [&](int count) {
      std::vector<std::vector<double>> out(static_cast<std::size_t>(count), std::vector<double>(d));
      for (auto& v : out)
        for (auto& x : v) x = dist(rng);
      return out;
    };
    const auto colour = draw(nc);
    const auto shape = draw(ns);
    auto& cell = w.tensors[layout.cell_embedding];
    auto& text = w.tensors[layout.text_embedding];
    const std::size_t colour_base = static_cast<std::size_t>(3 + cfg.max_images);
    for (std::size_t s = 0; s < shape.size(); ++s) {
      for (std::size_t c = 0; c < colour.size(); ++c) {
        const std::size_t row = colour.size() + s * colour.size() + c;
        for (std::size_t k = 0; k < d; ++k) cell(row, k) = static_cast<T>(colour[c][k] + shape[s][k]);
      }
    }
    const double lift = std::sqrt(2.0);
    for (std::size_t c = 0; c < colour.size(); ++c)
      for (std::size_t k = 0; k < d; ++k) text(colour_base + c, k) = static_cast<T>(colour[c][k] * lift);
    for (std::size_t s = 0; s < shape.size(); ++s)
      for (std::size_t k = 0; k < d; ++k) text(colour_base + colour.size() + s, k) = static_cast<T>(shape[s][k] * lift);
  }
  return w;
}

template struct Weights<float>;
template struct Weights<double>;

}  // namespace motb::model
