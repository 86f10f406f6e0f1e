#include "motb/bridge/bridge.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "motb/errors.hpp"
#include "motb/numkit/autograd.hpp"
#include "motb/numkit/kernels.hpp"

namespace motb::bridge {

std::size_t SemanticMask::visible_count() const {
  return static_cast<std::size_t>(std::count(bias.begin(), bias.end(), 0.0));
}

template <typename T>
Tensor<T> normalize_hidden(const Tensor<T>& hidden) {
  ad::Tape<T> tape(false);
  return tape.value(ad::l2_normalize_rows(tape, tape.leaf(hidden), T(1e-12)));
}

namespace {

template <typename T>
void require_unit_rows(const Tensor<T>& x, const char* which) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double sq = 0.0;
    for (T v : x.row(i)) sq += static_cast<double>(v) * static_cast<double>(v);
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-4) {
      throw PreconditionError(std::string("similarity_matrix: ") + which + " row " +
                              std::to_string(i) + " is not unit-normalised");
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> similarity_matrix(const Tensor<T>& visual_hat, const Tensor<T>& text_hat) {
  if (visual_hat.cols() != text_hat.cols() && visual_hat.rows() > 0 && text_hat.rows() > 0) {
    throw DimensionError("similarity_matrix: hidden widths differ");
  }
  require_unit_rows(visual_hat, "visual");
  require_unit_rows(text_hat, "text");
  const std::size_t nv = visual_hat.rows(), nt = text_hat.rows();
  Tensor<T> s({nv, nt});
  if (nv > 0 && nt > 0) {
    kernels::matmul_nt<T>(visual_hat.data(), text_hat.data(), s.data(), nv, visual_hat.cols(), nt);
  }
  return s;
}

template <typename T>
Tensor<T> relevance_scores(const Tensor<T>& similarity) {
  const std::size_t nv = similarity.rows(), nt = similarity.cols();
  if (nt == 0) throw EmptyInputError("relevance_scores: no text tokens");
  Tensor<T> s({nv});
  for (std::size_t i = 0; i < nv; ++i) {
    T acc = 0;
    for (std::size_t j = 0; j < nt; ++j) acc += similarity(i, j);
    s[i] = acc / static_cast<T>(nt);
  }
  return s;
}

SemanticMask build_mask(std::span<const double> relevance, double tau, bool fallback) {
  SemanticMask m;
  m.threshold = tau;
  m.relevance.assign(relevance.begin(), relevance.end());
  m.bias.assign(relevance.size(), kMasked);
  bool any = false;
  for (std::size_t i = 0; i < relevance.size(); ++i) {
    if (relevance[i] > tau) {
      m.bias[i] = 0.0;
      any = true;
    }
  }
  if (!any && fallback && !relevance.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < relevance.size(); ++i) {
      if (relevance[i] > relevance[best]) best = i;
    }
    m.bias[best] = 0.0;
    m.fallback_applied = true;
  }
  return m;
}

template <typename T>
Tensor<T> apply_mask_bias(const Tensor<T>& logits, const SemanticMask& mask) {
  if (logits.cols() != mask.size()) {
    throw MaskShapeError("apply_mask_bias: " + std::to_string(logits.cols()) +
                         " columns vs mask of " + std::to_string(mask.size()));
  }
  Tensor<T> out = logits;
  for (std::size_t k = 0; k < out.rows(); ++k)
    for (std::size_t i = 0; i < out.cols(); ++i) out(k, i) += static_cast<T>(mask.bias[i]);
  return out;
}

template <typename T>
std::vector<double> relevance_from_states(const Tensor<T>& visual, const Tensor<T>& text) {
  if (text.rows() == 0) throw EmptyInputError("relevance: no text tokens");
  if (visual.rows() == 0) return {};
  const auto s = relevance_scores(similarity_matrix(normalize_hidden(visual), normalize_hidden(text)));
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = static_cast<double>(s[i]);
  return out;
}

nlohmann::json to_json(const SemanticMask& mask) {
  std::vector<bool> visible(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) visible[i] = mask.visible(i);
  return {{"relevance", mask.relevance},
          {"tau", mask.threshold},
          {"bias_visible", visible},
          {"fallback_applied", mask.fallback_applied},
          {"source_layer", mask.source_layer}};
}

template Tensor<float> normalize_hidden(const Tensor<float>&);
template Tensor<double> normalize_hidden(const Tensor<double>&);
template Tensor<float> similarity_matrix(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> similarity_matrix(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> relevance_scores(const Tensor<float>&);
template Tensor<double> relevance_scores(const Tensor<double>&);
template Tensor<float> apply_mask_bias(const Tensor<float>&, const SemanticMask&);
template Tensor<double> apply_mask_bias(const Tensor<double>&, const SemanticMask&);
template std::vector<double> relevance_from_states(const Tensor<float>&, const Tensor<float>&);
template std::vector<double> relevance_from_states(const Tensor<double>&, const Tensor<double>&);

}  // namespace motb::bridge
