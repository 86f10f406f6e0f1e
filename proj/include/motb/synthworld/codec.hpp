#pragma once

#include <vector>

#include "motb/numkit/tensor.hpp"
#include "motb/synthworld/world.hpp"

namespace motb::world {

// Invertible stand-in for an image autoencoder. Every cell class owns a fixed
// orthonormal codevector (the standard basis), so decoding is exact nearest
// codeword lookup followed by 4-connected grouping.
//
// Classes: [0, n_colors) background colours, then one class per
// (shape, colour) pair.
class Codec {
 public:
  explicit Codec(const WorldConfig& cfg) : cfg_(cfg) {}

  int num_classes() const { return cfg_.n_colors + cfg_.n_shapes * cfg_.n_colors; }
  int latent_dim() const { return num_classes(); }
  int background_class(int color) const { return color; }
  int subject_class(int shape, int color) const {
    return cfg_.n_colors + shape * cfg_.n_colors + color;
  }
  bool is_background(int cls) const { return cls < cfg_.n_colors; }

  // Row-major class id per cell.
  std::vector<int> cell_classes(const Scene& scene) const;

  template <typename T>
  Tensor<T> codebook() const;

  template <typename T>
  Tensor<T> render(const Scene& scene) const;

  // Nearest class per latent row by Euclidean distance, ties to lowest id.
  template <typename T>
  std::vector<int> nearest_classes(const Tensor<T>& latents) const;

  template <typename T>
  Scene decode(const Tensor<T>& latents, int rows, int cols) const;

  Scene from_classes(const std::vector<int>& classes, int rows, int cols) const;

 private:
  WorldConfig cfg_;
};

}  // namespace motb::world
