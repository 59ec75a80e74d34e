#pragma once

#include <algorithm>
#include <cmath>

namespace m3pt {

// Axis-aligned box, top-left corner + size, image pixels.
// The all-zero box is the "target absent" annotation.
struct BoundingBox {
  double x = 0, y = 0, w = 0, h = 0;

  double cx() const { return x + w / 2.0; }
  double cy() const { return y + h / 2.0; }
  double area() const { return w * h; }
  bool absent() const { return x == 0 && y == 0 && w == 0 && h == 0; }

  bool operator==(const BoundingBox& o) const {
    return x == o.x && y == o.y && w == o.w && h == o.h;
  }
};

inline double box_iou(const BoundingBox& a, const BoundingBox& b) {
  double ix0 = std::max(a.x, b.x);
  double iy0 = std::max(a.y, b.y);
  double ix1 = std::min(a.x + a.w, b.x + b.w);
  double iy1 = std::min(a.y + a.h, b.y + b.h);
  double iw = std::max(0.0, ix1 - ix0);
  double ih = std::max(0.0, iy1 - iy0);
  double inter = iw * ih;
  double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Generalized IoU: IoU - (C - U) / C with C the smallest enclosing box.
inline double box_giou(const BoundingBox& a, const BoundingBox& b) {
  double ix0 = std::max(a.x, b.x);
  double iy0 = std::max(a.y, b.y);
  double ix1 = std::min(a.x + a.w, b.x + b.w);
  double iy1 = std::min(a.y + a.h, b.y + b.h);
  double inter = std::max(0.0, ix1 - ix0) * std::max(0.0, iy1 - iy0);
  double uni = a.area() + b.area() - inter;
  double iou = uni > 0.0 ? inter / uni : 0.0;
  double cx0 = std::min(a.x, b.x);
  double cy0 = std::min(a.y, b.y);
  double cx1 = std::max(a.x + a.w, b.x + b.w);
  double cy1 = std::max(a.y + a.h, b.y + b.h);
  double c = (cx1 - cx0) * (cy1 - cy0);
  if (c <= 0.0) return iou;
  return iou - (c - uni) / c;
}

inline double center_error_px(const BoundingBox& pred, const BoundingBox& gt) {
  double dx = pred.cx() - gt.cx();
  double dy = pred.cy() - gt.cy();
  return std::sqrt(dx * dx + dy * dy);
}

// Offsets normalized by the ground-truth box size before taking the norm.
inline double norm_center_error(const BoundingBox& pred, const BoundingBox& gt) {
  double dx = (pred.cx() - gt.cx()) / gt.w;
  double dy = (pred.cy() - gt.cy()) / gt.h;
  return std::sqrt(dx * dx + dy * dy);
}

inline BoundingBox clamp_box(BoundingBox b, double img_w, double img_h) {
  b.w = std::clamp(b.w, 0.0, img_w);
  b.h = std::clamp(b.h, 0.0, img_h);
  b.x = std::clamp(b.x, 0.0, img_w - b.w);
  b.y = std::clamp(b.y, 0.0, img_h - b.h);
  return b;
}

}  // namespace m3pt
