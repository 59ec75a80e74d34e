#pragma once

#include "box.hpp"
#include "foundation.hpp"

namespace m3pt {

// Decoded head output: box in search-image pixels plus the normalized score
// map on the search grid.
struct HeadOutput {
  BoundingBox box;
  Tensor<float> score_map;  // [grid_h, grid_w], values in [0, 1]
};

// Decode from post-activation maps:
//   score   [gh, gw]   in [0, 1]
//   offset  [2, gh, gw]  sub-cell offsets in cell units, (x, y)
//   size    [2, gh, gw]  box size in patch units, (w, h)
// Argmax ties break to the first maximum in row-major order. Box center is
// ((j + off_x) * patch, (i + off_y) * patch); the result is clamped into
// [0, img_w] x [0, img_h].
template <typename S>
HeadOutput decode_box(const Tensor<S>& score, const Tensor<S>& offset,
                      const Tensor<S>& size, int64_t patch, int64_t img_w,
                      int64_t img_h) {
  int64_t gh = score.dim(0), gw = score.dim(1);
  int64_t bi = 0, bj = 0;
  S best = score.at(0, 0);
  for (int64_t i = 0; i < gh; ++i)
    for (int64_t j = 0; j < gw; ++j)
      if (score.at(i, j) > best) {
        best = score.at(i, j);
        bi = i;
        bj = j;
      }
  double cx = (static_cast<double>(bj) + static_cast<double>(offset.at(0, bi, bj))) *
              static_cast<double>(patch);
  double cy = (static_cast<double>(bi) + static_cast<double>(offset.at(1, bi, bj))) *
              static_cast<double>(patch);
  double bw = static_cast<double>(size.at(0, bi, bj)) * static_cast<double>(patch);
  double bh = static_cast<double>(size.at(1, bi, bj)) * static_cast<double>(patch);
  HeadOutput out;
  out.box = clamp_box({cx - bw / 2.0, cy - bh / 2.0, bw, bh},
                      static_cast<double>(img_w), static_cast<double>(img_h));
  out.score_map = Tensor<float>({gh, gw});
  for (int64_t i = 0; i < gh; ++i)
    for (int64_t j = 0; j < gw; ++j)
      out.score_map.at(i, j) = static_cast<float>(score.at(i, j));
  return out;
}

// Activations applied to the raw head branches. Sizes are sigmoid-scaled to
// the grid extent so a full-confidence cell can cover the whole image.
template <typename S>
struct HeadMaps {
  Tensor<S> score;   // [gh, gw] sigmoid probabilities
  Tensor<S> offset;  // [2, gh, gw] in (0, 1)
  Tensor<S> size;    // [2, gh, gw] in patch units
};

template <typename S>
HeadMaps<S> activate_head_maps(const Tensor<S>& score_logits,
                               const Tensor<S>& offset_raw,
                               const Tensor<S>& size_raw, int64_t gh, int64_t gw) {
  auto sigmoid = [](S v) { return S(1) / (S(1) + std::exp(-v)); };
  HeadMaps<S> m;
  m.score = Tensor<S>({gh, gw});
  m.offset = Tensor<S>({2, gh, gw});
  m.size = Tensor<S>({2, gh, gw});
  for (int64_t i = 0; i < gh; ++i)
    for (int64_t j = 0; j < gw; ++j) {
      int64_t tok = i * gw + j;
      m.score.at(i, j) = sigmoid(score_logits.at(tok, 0));
      m.offset.at(0, i, j) = sigmoid(offset_raw.at(tok, 0));
      m.offset.at(1, i, j) = sigmoid(offset_raw.at(tok, 1));
      m.size.at(0, i, j) = sigmoid(size_raw.at(tok, 0)) * static_cast<S>(gw);
      m.size.at(1, i, j) = sigmoid(size_raw.at(tok, 1)) * static_cast<S>(gh);
    }
  return m;
}

}  // namespace m3pt
