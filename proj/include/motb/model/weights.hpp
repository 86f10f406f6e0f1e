#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "motb/model/config.hpp"
#include "motb/numkit/tensor.hpp"

namespace motb::model {

// Freezing operates on these groups.
enum class ParamGroup : std::uint8_t { Understanding, Generation, SharedEmbeddings, FlowHead };

inline constexpr ParamGroup kAllGroups[] = {ParamGroup::Understanding, ParamGroup::Generation,
                                            ParamGroup::SharedEmbeddings, ParamGroup::FlowHead};

std::string_view group_name(ParamGroup g);
ParamGroup parse_group(std::string_view name);

enum class Expert : std::uint8_t { Understanding = 0, Generation = 1 };

struct ParamSpec {
  std::string name;
  ParamGroup group;
  std::vector<std::size_t> shape;
};

// Per-expert parameter indices for one transformer layer.
struct ExpertLayerIndex {
  std::size_t ln1_gain, ln1_bias;
  std::size_t wq, wk, wv, wo;
  std::size_t ln2_gain, ln2_bias;
  std::size_t w1, b1, w2, b2;
};

// Parameter names, groups, shapes and their fixed order; a pure function of
// the config.
class WeightLayout {
 public:
  explicit WeightLayout(const ModelConfig& cfg);

  const std::vector<ParamSpec>& specs() const { return specs_; }
  std::size_t size() const { return specs_.size(); }
  std::size_t parameter_count() const;
  std::size_t index_of(std::string_view name) const;

  std::size_t text_embedding, cell_embedding, position_embedding, image_embedding;
  std::size_t latent_in_w, latent_in_b, time_w, time_b;
  std::size_t head_ln_gain, head_ln_bias, head_w, head_b;
  // layers[l][expert]
  std::vector<std::array<ExpertLayerIndex, 2>> layers;

 private:
  std::size_t add(std::string name, ParamGroup group, std::vector<std::size_t> shape);
  std::vector<ParamSpec> specs_;
};

template <typename T>
struct Weights {
  ModelConfig config;
  std::vector<Tensor<T>> tensors;  // parallel to WeightLayout(config).specs()

  // Seeded initialisation.
  static Weights init(const ModelConfig& cfg, std::uint64_t seed);

  template <typename U>
  Weights<U> cast() const {
    Weights<U> out;
    out.config = config;
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }

  bool operator==(const Weights&) const = default;
};

}  // namespace motb::model
