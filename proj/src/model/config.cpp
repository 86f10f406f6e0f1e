#include "motb/model/config.hpp"

#include <string>

#include "motb/errors.hpp"

namespace motb::model {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0) fail("sizes must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (text_vocab <= 0 || cell_vocab <= 0 || d_latent <= 0) fail("vocabularies must be nonempty");
  if (max_positions <= 0 || max_images <= 0) fail("capacities must be positive");
  if (init.query_gain <= 0.0 || init.position_std <= 0.0 || init.image_std <= 0.0) {
    fail("init scales must be positive");
  }
  if (init.attribute_shapes < 0 || init.attribute_colors < 0) fail("attribute counts must be >= 0");
  if (init.attribute_shapes > 0 && init.attribute_colors > 0) {
    const int ns = init.attribute_shapes, nc = init.attribute_colors;
    if (cell_vocab < nc + ns * nc || text_vocab < 3 + max_images + nc + ns) {
      fail("attribute init does not fit the vocabularies");
    }
  }
  if (!(0 <= mask_source_layer && mask_source_layer < masked_layer_lo &&
        masked_layer_lo <= masked_layer_hi && masked_layer_hi < n_layers)) {
    fail("require 0 <= mask_source_layer < masked_layer_lo <= masked_layer_hi < n_layers");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},
          {"text_vocab", c.text_vocab},
          {"cell_vocab", c.cell_vocab},
          {"d_latent", c.d_latent},
          {"max_positions", c.max_positions},
          {"max_images", c.max_images},
          {"mask_source_layer", c.mask_source_layer},
          {"masked_layer_lo", c.masked_layer_lo},
          {"masked_layer_hi", c.masked_layer_hi},
          {"mask_visgen", c.mask_visgen},
          {"bos_id", c.bos_id},
          {"eos_id", c.eos_id},
          {"init",
           {{"expert_copy", c.init.expert_copy},
            {"tie_qk", c.init.tie_qk},
            {"zero_head", c.init.zero_head},
            {"query_gain", c.init.query_gain},
            {"position_std", c.init.position_std},
            {"image_std", c.init.image_std},
            {"attribute_shapes", c.init.attribute_shapes},
            {"attribute_colors", c.init.attribute_colors}}}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("d_model", c.d_model);
  get("n_layers", c.n_layers);
  get("n_heads", c.n_heads);
  get("d_ff", c.d_ff);
  get("text_vocab", c.text_vocab);
  get("cell_vocab", c.cell_vocab);
  get("d_latent", c.d_latent);
  get("max_positions", c.max_positions);
  get("max_images", c.max_images);
  get("mask_source_layer", c.mask_source_layer);
  get("masked_layer_lo", c.masked_layer_lo);
  get("masked_layer_hi", c.masked_layer_hi);
  get("mask_visgen", c.mask_visgen);
  get("bos_id", c.bos_id);
  get("eos_id", c.eos_id);
  if (j.contains("init")) {
    const auto& i = j.at("init");
    auto geti = [&](const char* key, auto& field) {
      if (i.contains(key)) field = i.at(key).get<std::decay_t<decltype(field)>>();
    };
    geti("expert_copy", c.init.expert_copy);
    geti("tie_qk", c.init.tie_qk);
    geti("zero_head", c.init.zero_head);
    geti("query_gain", c.init.query_gain);
    geti("position_std", c.init.position_std);
    geti("image_std", c.init.image_std);
    geti("attribute_shapes", c.init.attribute_shapes);
    geti("attribute_colors", c.init.attribute_colors);
  }
  c.validate();
  return c;
}

}  // namespace motb::model
