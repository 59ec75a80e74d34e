#pragma once

#include "box.hpp"
#include "foundation.hpp"
#include "head.hpp"

namespace m3pt {

struct LossWeights {
  double lambda_giou = 2.0;
  double lambda_l1 = 5.0;
  double focal_alpha = 2.0;
  double focal_beta = 4.0;

  void validate() const {
    if (lambda_giou < 0 || lambda_l1 < 0)
      fail(ErrorKind::Config, "loss weights must be >= 0");
  }
};

struct LossParts {
  double total = 0, cls = 0, giou = 0, l1 = 0;
};

// Gaussian center target on the score grid, peak forced to exactly 1 at the
// cell nearest the ground-truth center. Cell (i, j) sits at pixel
// ((j + 0.5) * patch, (i + 0.5) * patch).
template <typename S>
Tensor<S> gaussian_center_target(const BoundingBox& gt, int64_t patch, int64_t gh,
                                 int64_t gw) {
  double jc = gt.cx() / static_cast<double>(patch) - 0.5;
  double ic = gt.cy() / static_cast<double>(patch) - 0.5;
  double sigma = std::max(0.5, (gt.w + gt.h) / (8.0 * static_cast<double>(patch)));
  Tensor<S> y({gh, gw});
  for (int64_t i = 0; i < gh; ++i)
    for (int64_t j = 0; j < gw; ++j) {
      double d2 = (static_cast<double>(j) - jc) * (static_cast<double>(j) - jc) +
                  (static_cast<double>(i) - ic) * (static_cast<double>(i) - ic);
      y.at(i, j) = static_cast<S>(std::exp(-d2 / (2.0 * sigma * sigma)));
    }
  int64_t i0 = std::clamp<int64_t>(static_cast<int64_t>(std::lround(ic)), 0, gh - 1);
  int64_t j0 = std::clamp<int64_t>(static_cast<int64_t>(std::lround(jc)), 0, gw - 1);
  y.at(i0, j0) = S(1);
  return y;
}

inline void center_cell_of(const BoundingBox& gt, int64_t patch, int64_t gh,
                           int64_t gw, int64_t& i0, int64_t& j0) {
  double jc = gt.cx() / static_cast<double>(patch) - 0.5;
  double ic = gt.cy() / static_cast<double>(patch) - 0.5;
  i0 = std::clamp<int64_t>(static_cast<int64_t>(std::lround(ic)), 0, gh - 1);
  j0 = std::clamp<int64_t>(static_cast<int64_t>(std::lround(jc)), 0, gw - 1);
}

// Penalty-reduced focal loss against the Gaussian target, on probabilities.
template <typename S>
double focal_loss(const Tensor<S>& probs, const Tensor<S>& target, double alpha,
                  double beta) {
  double acc = 0.0;
  int64_t npos = 0;
  for (int64_t k = 0; k < probs.numel(); ++k) {
    double p = std::clamp(static_cast<double>(probs[k]), 1e-12, 1.0 - 1e-12);
    double y = static_cast<double>(target[k]);
    if (y >= 1.0) {
      acc += std::pow(1.0 - p, alpha) * std::log(p);
      ++npos;
    } else {
      acc += std::pow(1.0 - y, beta) * std::pow(p, alpha) * std::log(1.0 - p);
    }
  }
  return -acc / static_cast<double>(std::max<int64_t>(1, npos));
}

// L = L_cls + lambda_giou * L_giou + lambda_l1 * L_l1.
// Boxes are in search-image pixels; the L1 term works on (cx, cy, w, h)
// normalized by the search size.
template <typename S>
LossParts compute_loss(const BoundingBox& pred, const Tensor<S>& score_map,
                       const BoundingBox& gt, const LossWeights& weights,
                       int64_t patch, int64_t search_w, int64_t search_h) {
  weights.validate();
  if (gt.w <= 0 || gt.h <= 0)
    fail(ErrorKind::Data, "degenerate ground-truth box (w or h <= 0)");
  LossParts parts;
  Tensor<S> target = gaussian_center_target<S>(gt, patch, score_map.dim(0),
                                               score_map.dim(1));
  parts.cls = focal_loss(score_map, target, weights.focal_alpha, weights.focal_beta);
  parts.giou = 1.0 - box_giou(pred, gt);
  double sw = static_cast<double>(search_w), sh = static_cast<double>(search_h);
  parts.l1 = (std::abs(pred.cx() - gt.cx()) / sw + std::abs(pred.cy() - gt.cy()) / sh +
              std::abs(pred.w - gt.w) / sw + std::abs(pred.h - gt.h) / sh) /
             4.0;
  parts.total = parts.cls + weights.lambda_giou * parts.giou +
                weights.lambda_l1 * parts.l1;
  return parts;
}

// ---------------------------------------------------------------------------
// Tape-level training loss. The classification term shapes the whole score
// map; the box terms are taken at the ground-truth center cell so that the
// offset/size heads receive gradient regardless of where the argmax sits.
// ---------------------------------------------------------------------------

struct LossNodes {
  int total = -1, cls = -1, giou = -1, l1 = -1;
};

template <typename S>
LossNodes training_loss_node(Tape<S>& tape, const HeadNodes<S>& head,
                             const BoundingBox& gt, const LossWeights& weights,
                             const FoundationConfig& fc) {
  if (gt.w <= 0 || gt.h <= 0)
    fail(ErrorKind::Data, "degenerate ground-truth box (w or h <= 0)");
  int64_t gh = fc.search_grid_h(), gw = fc.search_grid_w();
  int64_t patch = fc.patch_size;

  // focal term in logit space: log p = -softplus(-z), log(1-p) = -softplus(z)
  Tensor<S> target = gaussian_center_target<S>(gt, patch, gh, gw);
  Tensor<S> pos_mask({gh * gw, 1});
  Tensor<S> neg_coef({gh * gw, 1});
  int64_t npos = 0;
  for (int64_t i = 0; i < gh; ++i)
    for (int64_t j = 0; j < gw; ++j) {
      int64_t k = i * gw + j;
      if (target.at(i, j) >= S(1)) {
        pos_mask.at(k, 0) = S(1);
        ++npos;
      } else {
        neg_coef.at(k, 0) =
            std::pow(S(1) - target.at(i, j), static_cast<S>(weights.focal_beta));
      }
    }
  int z = head.score_logits;
  int p = op_sigmoid(tape, z);
  int one_minus_p = op_sigmoid(tape, op_neg(tape, z));
  int log_p = op_neg(tape, op_softplus(tape, op_neg(tape, z)));
  int log_1mp = op_neg(tape, op_softplus(tape, z));
  S alpha = static_cast<S>(weights.focal_alpha);
  int pos_terms = op_mul(tape, op_pow_const(tape, one_minus_p, alpha), log_p);
  int neg_terms = op_mul(tape, op_pow_const(tape, p, alpha), log_1mp);
  int pos_sum = op_sum(tape, op_mul(tape, tape.leaf(pos_mask), pos_terms));
  int neg_sum = op_sum(tape, op_mul(tape, tape.leaf(neg_coef), neg_terms));
  int cls = op_scale(tape, op_add(tape, pos_sum, neg_sum),
                     S(-1) / static_cast<S>(std::max<int64_t>(1, npos)));

  // box decoded at the ground-truth center cell
  int64_t i0, j0;
  center_cell_of(gt, patch, gh, gw, i0, j0);
  int64_t tok = i0 * gw + j0;
  int off = op_sigmoid(tape, op_gather(tape, head.offset_raw, {tok * 2, tok * 2 + 1}));
  int siz = op_sigmoid(tape, op_gather(tape, head.size_raw, {tok * 2, tok * 2 + 1}));
  Tensor<S> size_scale({2});
  size_scale[0] = static_cast<S>(gw * patch);
  size_scale[1] = static_cast<S>(gh * patch);
  int size_px = op_mul(tape, siz, tape.leaf(size_scale));
  Tensor<S> cell_base({2});
  cell_base[0] = static_cast<S>(j0);
  cell_base[1] = static_cast<S>(i0);
  int center_px = op_scale(
      tape, op_add(tape, off, tape.leaf(cell_base)), static_cast<S>(patch));
  // corners: lo = center - size/2, hi = center + size/2, as [2] tensors (x, y)
  int half = op_scale(tape, size_px, S(0.5));
  int lo = op_sub(tape, center_px, half);
  int hi = op_add(tape, center_px, half);

  Tensor<S> gt_lo({2}), gt_hi({2});
  gt_lo[0] = static_cast<S>(gt.x);
  gt_lo[1] = static_cast<S>(gt.y);
  gt_hi[0] = static_cast<S>(gt.x + gt.w);
  gt_hi[1] = static_cast<S>(gt.y + gt.h);
  int glo = tape.leaf(gt_lo);
  int ghi = tape.leaf(gt_hi);
  int zero2 = tape.leaf(Tensor<S>({2}));

  int inter_lo = op_maximum(tape, lo, glo);
  int inter_hi = op_minimum(tape, hi, ghi);
  int inter_wh = op_maximum(tape, op_sub(tape, inter_hi, inter_lo), zero2);
  int inter = op_mul(tape, op_gather(tape, inter_wh, {0}),
                     op_gather(tape, inter_wh, {1}));
  int pred_area = op_mul(tape, op_gather(tape, size_px, {0}),
                         op_gather(tape, size_px, {1}));
  Tensor<S> gt_area_t({1});
  gt_area_t[0] = static_cast<S>(gt.w * gt.h);
  int uni = op_sub(tape, op_add(tape, pred_area, tape.leaf(gt_area_t)), inter);
  int iou = op_div(tape, inter, uni);
  int enc_lo = op_minimum(tape, lo, glo);
  int enc_hi = op_maximum(tape, hi, ghi);
  int enc_wh = op_sub(tape, enc_hi, enc_lo);
  int enc = op_mul(tape, op_gather(tape, enc_wh, {0}), op_gather(tape, enc_wh, {1}));
  int giou = op_sub(tape, iou, op_div(tape, op_sub(tape, enc, uni), enc));
  int giou_loss = op_add_scalar(tape, op_neg(tape, giou), S(1));

  // normalized L1 on (cx, cy, w, h)
  Tensor<S> gt_center({2}), norm_c({2}), norm_s({2});
  gt_center[0] = static_cast<S>(gt.cx());
  gt_center[1] = static_cast<S>(gt.cy());
  norm_c[0] = S(1) / static_cast<S>(fc.search_w);
  norm_c[1] = S(1) / static_cast<S>(fc.search_h);
  norm_s = norm_c;
  Tensor<S> gt_size({2});
  gt_size[0] = static_cast<S>(gt.w);
  gt_size[1] = static_cast<S>(gt.h);
  int dc = op_mul(tape, op_abs(tape, op_sub(tape, center_px, tape.leaf(gt_center))),
                  tape.leaf(norm_c));
  int ds = op_mul(tape, op_abs(tape, op_sub(tape, size_px, tape.leaf(gt_size))),
                  tape.leaf(norm_s));
  int l1 = op_scale(tape, op_add(tape, op_sum(tape, dc), op_sum(tape, ds)), S(0.25));

  int total = op_add(
      tape, cls,
      op_add(tape, op_scale(tape, giou_loss, static_cast<S>(weights.lambda_giou)),
             op_scale(tape, l1, static_cast<S>(weights.lambda_l1))));
  return LossNodes{total, cls, giou_loss, l1};
}

}  // namespace m3pt
