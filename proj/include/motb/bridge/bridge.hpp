#pragma once

// Relevance scoring of reference visual tokens against instruction tokens and
// the binary attention mask derived from it.
//
//   normalize_hidden    h / |h|_2 per row
//   similarity_matrix   S = Hv_hat * Ht_hat^T  (cosine similarities)
//   relevance_scores    s_i = mean_j S_ij
//   build_mask          bias_i = 0 if s_i > tau else -inf
//   apply_mask_bias     A_ki + bias_i on Target -> reference logits

#include <limits>
#include <span>
#include <vector>

#include "json.hpp"
#include "motb/numkit/tensor.hpp"

namespace motb::bridge {

inline constexpr double kMasked = -std::numeric_limits<double>::infinity();

struct SemanticMask {
  std::vector<double> bias;       // exactly 0 or -inf per reference visual token
  std::vector<double> relevance;  // s_i
  double threshold = 0.0;
  int source_layer = -1;
  bool fallback_applied = false;

  std::size_t size() const { return bias.size(); }
  bool visible(std::size_t i) const { return bias[i] == 0.0; }
  std::size_t visible_count() const;
  bool operator==(const SemanticMask&) const = default;
};

// Row-wise L2 normalisation; a row with norm <= 1e-12 raises ZeroVectorError
// naming the row.
template <typename T>
Tensor<T> normalize_hidden(const Tensor<T>& hidden);

// Inputs must be row-normalised to 1e-4 (PreconditionError otherwise).
template <typename T>
Tensor<T> similarity_matrix(const Tensor<T>& visual_hat, const Tensor<T>& text_hat);

// Nv row means; zero text columns raise EmptyInputError.
template <typename T>
Tensor<T> relevance_scores(const Tensor<T>& similarity);

// Strict s_i > tau keeps a token visible. When nothing passes and
// fallback is enabled, the first argmax stays visible.
SemanticMask build_mask(std::span<const double> relevance, double tau, bool fallback = true);

template <typename T>
Tensor<T> apply_mask_bias(const Tensor<T>& logits, const SemanticMask& mask);

// normalize_hidden -> similarity_matrix -> relevance_scores as doubles.
template <typename T>
std::vector<double> relevance_from_states(const Tensor<T>& visual, const Tensor<T>& text);

// One record of the optional mask dump.
nlohmann::json to_json(const SemanticMask& mask);

}  // namespace motb::bridge
