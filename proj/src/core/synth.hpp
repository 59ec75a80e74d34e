#pragma once

#include <vector>

#include "box.hpp"
#include "pipeline.hpp"
#include "rng.hpp"

namespace m3pt {

// One synthetic training sample: aligned template/search pairs plus the
// ground-truth box in search coordinates.
struct SyntheticSample {
  ModalFramePair templates;
  ModalFramePair searches;
  BoundingBox gt;       // in search-image pixels
  int degrade = 0;      // 0 none, 1 visible washed out, 2 thermal flat
};

namespace detail {

inline Tensor<float> render_frame(int64_t h, int64_t w, double bg, double bg_noise,
                                  const BoundingBox& target, double fg,
                                  double fg_noise, Rng& rng) {
  Tensor<float> img({h, w, 3});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      bool inside = j >= target.x && j < target.x + target.w && i >= target.y &&
                    i < target.y + target.h;
      double base = inside ? fg : bg;
      double noise = inside ? fg_noise : bg_noise;
      for (int64_t c = 0; c < 3; ++c) {
        double v = base + rng.normal(0.0, noise);
        img.at(i, j, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return img;
}

}  // namespace detail

// Deterministic scene generator. Every third sample degrades one modality so
// the fusion weights have signal to learn: index % 3 == 1 washes out the
// visible frame (near-constant), index % 3 == 2 flattens the thermal one.
inline std::vector<SyntheticSample> generate_synthetic(uint64_t seed, int64_t n_pairs,
                                                       const FoundationConfig& cfg) {
  if (n_pairs < 1) fail(ErrorKind::Config, "generate_synthetic: n_pairs must be >= 1");
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<size_t>(n_pairs));
  Rng root(seed * 0x9E3779B97F4A7C15ULL + 0x1234ABCDULL);
  for (int64_t idx = 0; idx < n_pairs; ++idx) {
    Rng rng = root.fork(static_cast<uint64_t>(idx) + 1);
    SyntheticSample s;
    s.degrade = static_cast<int>(idx % 3);

    double tw = rng.uniform(0.2, 0.45) * static_cast<double>(cfg.search_w);
    double th = rng.uniform(0.2, 0.45) * static_cast<double>(cfg.search_h);
    double cx = rng.uniform(tw / 2 + 1, static_cast<double>(cfg.search_w) - tw / 2 - 1);
    double cy = rng.uniform(th / 2 + 1, static_cast<double>(cfg.search_h) - th / 2 - 1);
    s.gt = {cx - tw / 2, cy - th / 2, tw, th};

    // template: the same target centered in the template frame
    double zw = std::min(tw, static_cast<double>(cfg.template_w) * 0.6);
    double zh = std::min(th, static_cast<double>(cfg.template_h) * 0.6);
    BoundingBox zbox{(static_cast<double>(cfg.template_w) - zw) / 2,
                     (static_cast<double>(cfg.template_h) - zh) / 2, zw, zh};

    double vis_fg = rng.uniform(0.65, 0.95), vis_bg = rng.uniform(0.05, 0.35);
    double thr_fg = rng.uniform(0.7, 0.95), thr_bg = rng.uniform(0.05, 0.3);
    double vis_noise = 0.03, thr_noise = 0.03;
    if (s.degrade == 1) {  // visible washed out: no contrast, almost no texture
      vis_fg = vis_bg = 0.5;
      vis_noise = 0.002;
    } else if (s.degrade == 2) {  // thermal flat
      thr_fg = thr_bg = 0.5;
      thr_noise = 0.002;
    }

    s.templates.visible = detail::render_frame(cfg.template_h, cfg.template_w,
                                               vis_bg, vis_noise, zbox, vis_fg,
                                               vis_noise, rng);
    s.templates.thermal = detail::render_frame(cfg.template_h, cfg.template_w,
                                               thr_bg, thr_noise, zbox, thr_fg,
                                               thr_noise, rng);
    s.searches.visible = detail::render_frame(cfg.search_h, cfg.search_w, vis_bg,
                                              vis_noise, s.gt, vis_fg, vis_noise, rng);
    s.searches.thermal = detail::render_frame(cfg.search_h, cfg.search_w, thr_bg,
                                              thr_noise, s.gt, thr_fg, thr_noise, rng);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace m3pt
