#include "motb/synthworld/codec.hpp"

#include <algorithm>
#include <limits>

namespace motb::world {

std::vector<int> Codec::cell_classes(const Scene& scene) const {
  std::vector<int> classes(static_cast<std::size_t>(scene.rows * scene.cols),
                           background_class(scene.background));
  for (const auto& s : scene.subjects) {
    for (const auto& c : s.footprint) {
      classes[static_cast<std::size_t>(c.row * scene.cols + c.col)] =
          subject_class(s.shape_id, s.color_id);
    }
  }
  return classes;
}

template <typename T>
Tensor<T> Codec::codebook() const {
  return Tensor<T>::identity(static_cast<std::size_t>(num_classes()));
}

template <typename T>
Tensor<T> Codec::render(const Scene& scene) const {
  const auto classes = cell_classes(scene);
  const auto dim = static_cast<std::size_t>(latent_dim());
  Tensor<T> out({classes.size(), dim});
  for (std::size_t i = 0; i < classes.size(); ++i) out(i, static_cast<std::size_t>(classes[i])) = T{1};
  return out;
}

template <typename T>
std::vector<int> Codec::nearest_classes(const Tensor<T>& latents) const {
  if (latents.cols() != static_cast<std::size_t>(latent_dim())) {
    throw DimensionError("decode: latent width " + std::to_string(latents.cols()) +
                         " != " + std::to_string(latent_dim()));
  }
  // With unit codevectors e_k, |x - e_k|^2 = |x|^2 - 2 x_k + 1, so the
  // nearest codeword is the largest coordinate (first on ties).
  std::vector<int> out(latents.rows());
  for (std::size_t i = 0; i < latents.rows(); ++i) {
    const auto row = latents.row(i);
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k) {
      if (row[k] > row[best]) best = k;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

template <typename T>
Scene Codec::decode(const Tensor<T>& latents, int rows, int cols) const {
  if (latents.rows() != static_cast<std::size_t>(rows * cols)) {
    throw DimensionError("decode: expected " + std::to_string(rows * cols) + " cells");
  }
  return from_classes(nearest_classes(latents), rows, cols);
}

Scene Codec::from_classes(const std::vector<int>& classes, int rows, int cols) const {
  Scene scene;
  scene.rows = rows;
  scene.cols = cols;
  std::vector<int> bg_count(static_cast<std::size_t>(cfg_.n_colors), 0);
  for (int c : classes) {
    if (is_background(c)) ++bg_count[static_cast<std::size_t>(c)];
  }
  scene.background = static_cast<int>(std::max_element(bg_count.begin(), bg_count.end()) -
                                      bg_count.begin());

  std::vector<bool> seen(classes.size(), false);
  std::vector<Cell> stack;
  for (int start = 0; start < rows * cols; ++start) {
    const int cls = classes[static_cast<std::size_t>(start)];
    if (seen[static_cast<std::size_t>(start)] || is_background(cls)) continue;
    Subject subject;
    subject.shape_id = (cls - cfg_.n_colors) / cfg_.n_colors;
    subject.color_id = (cls - cfg_.n_colors) % cfg_.n_colors;
    stack.assign(1, Cell{start / cols, start % cols});
    seen[static_cast<std::size_t>(start)] = true;
    while (!stack.empty()) {
      const Cell c = stack.back();
      stack.pop_back();
      subject.footprint.push_back(c);
      constexpr int dr[] = {-1, 1, 0, 0};
      constexpr int dc[] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int r = c.row + dr[k], q = c.col + dc[k];
        if (r < 0 || r >= rows || q < 0 || q >= cols) continue;
        const auto idx = static_cast<std::size_t>(r * cols + q);
        if (seen[idx] || classes[idx] != cls) continue;
        seen[idx] = true;
        stack.push_back(Cell{r, q});
      }
    }
    scene.subjects.push_back(std::move(subject));
  }
  canonicalize(scene);
  return scene;
}

template Tensor<float> Codec::codebook<float>() const;
template Tensor<double> Codec::codebook<double>() const;
template Tensor<float> Codec::render<float>(const Scene&) const;
template Tensor<double> Codec::render<double>(const Scene&) const;
template std::vector<int> Codec::nearest_classes<float>(const Tensor<float>&) const;
template std::vector<int> Codec::nearest_classes<double>(const Tensor<double>&) const;
template Scene Codec::decode<float>(const Tensor<float>&, int, int) const;
template Scene Codec::decode<double>(const Tensor<double>&, int, int) const;

}  // namespace motb::world
