#pragma once

#include "pipeline.hpp"
#include "sequence.hpp"

namespace m3pt {

// Runs the tracker over one ingested sequence. The template pair is cropped
// around the first ground-truth box; each subsequent frame is searched in a
// region centered on the previous prediction. Frame 0 reports the init box.
template <typename S>
std::vector<BoundingBox> run_sequence(const Foundation<S>& foundation,
                                      const PrompterBank<S>& bank,
                                      const IngestedSequence& seq) {
  const TrackerConfig& cfg = bank.cfg();
  const FoundationConfig& fc = foundation.cfg();
  const BoundingBox& init = seq.record.gt_visible.at(0);
  if (init.w <= 0 || init.h <= 0)
    fail(ErrorKind::Data, "sequence " + seq.record.name +
                              ": first ground-truth box is degenerate");

  double tmpl_side = std::sqrt(init.w * init.h) * cfg.template_factor;
  ModalFramePair templates;
  templates.visible = crop_resize(read_image(seq.visible_frames[0]), init.cx(),
                                  init.cy(), tmpl_side, fc.template_h, fc.template_w);
  templates.thermal = crop_resize(read_image(seq.infrared_frames[0]), init.cx(),
                                  init.cy(), tmpl_side, fc.template_h, fc.template_w);

  std::vector<BoundingBox> out;
  out.push_back(init);
  BoundingBox prev = init;
  for (size_t f = 1; f < seq.visible_frames.size(); ++f) {
    double side = std::sqrt(std::max(1.0, prev.w * prev.h)) * cfg.search_factor;
    ModalFramePair searches;
    searches.visible = crop_resize(read_image(seq.visible_frames[f]), prev.cx(),
                                   prev.cy(), side, fc.search_h, fc.search_w);
    searches.thermal = crop_resize(read_image(seq.infrared_frames[f]), prev.cx(),
                                   prev.cy(), side, fc.search_h, fc.search_w);
    HeadOutput res = track(foundation, bank, templates, searches);
    // map from search-crop coordinates back to image coordinates
    double scale = side / static_cast<double>(fc.search_w);
    double scale_y = side / static_cast<double>(fc.search_h);
    BoundingBox b;
    b.w = res.box.w * scale;
    b.h = res.box.h * scale_y;
    b.x = (prev.cx() - side / 2.0) + res.box.x * scale;
    b.y = (prev.cy() - side / 2.0) + res.box.y * scale_y;
    out.push_back(b);
    prev = b;
    if (prev.w < 2) prev.w = 2;
    if (prev.h < 2) prev.h = 2;
  }
  return out;
}

}  // namespace m3pt
