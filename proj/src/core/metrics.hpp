#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "box.hpp"
#include "error.hpp"

namespace m3pt {

// Attribute schemas of the two dual-annotation benchmark families.
inline const std::vector<std::string>& lasher_attributes() {
  static const std::vector<std::string> a = {
      "NO", "PO", "TO", "HO", "LI", "HI", "AIV", "OV", "LR", "DEF",
      "BC", "SA", "TC", "MB", "CM", "FL", "FM", "SV", "ARC"};
  return a;
}

inline const std::vector<std::string>& rgbt234_attributes() {
  static const std::vector<std::string> a = {
      "NO", "PO", "HO", "LI", "LR", "TC", "DEF", "FM", "SV", "MB", "CM", "BC"};
  return a;
}

struct SequenceRecord {
  std::string name;
  std::vector<BoundingBox> pred;
  std::vector<BoundingBox> gt_visible;
  std::vector<BoundingBox> gt_thermal;  // empty when the benchmark has one GT
  std::vector<int> attributes;          // 0/1 flags, schema-sized or empty

  bool has_thermal_gt() const { return !gt_thermal.empty(); }

  void validate() const {
    if (pred.size() != gt_visible.size())
      fail(ErrorKind::Data, "sequence " + name + ": prediction count " +
                                std::to_string(pred.size()) + " != gt count " +
                                std::to_string(gt_visible.size()));
    if (!gt_thermal.empty() && gt_thermal.size() != gt_visible.size())
      fail(ErrorKind::Data, "sequence " + name + ": thermal gt count " +
                                std::to_string(gt_thermal.size()) +
                                " != visible gt count " +
                                std::to_string(gt_visible.size()));
  }
};

// Threshold grid plus per-threshold score and a representative scalar.
struct MetricCurve {
  std::vector<double> thresholds;
  std::vector<double> values;
  double representative = 0.0;
  int64_t frames_used = 0;
  int64_t frames_excluded = 0;
};

struct EvalGrids {
  double precision_max = 50.0, precision_step = 1.0, precision_rep = 20.0;
  double norm_max = 0.5, norm_step = 0.01, norm_rep = 0.2;
  int64_t success_points = 21;  // 0..1 inclusive
  bool pr_uses_max_fusion = false;

  std::vector<double> precision_grid() const {
    std::vector<double> g;
    for (double t = 0.0; t <= precision_max + 1e-9; t += precision_step)
      g.push_back(t);
    return g;
  }
  std::vector<double> norm_grid() const {
    std::vector<double> g;
    for (double t = 0.0; t <= norm_max + 1e-9; t += norm_step) g.push_back(t);
    return g;
  }
  std::vector<double> success_grid() const {
    std::vector<double> g;
    for (int64_t i = 0; i < success_points; ++i)
      g.push_back(static_cast<double>(i) / static_cast<double>(success_points - 1));
    return g;
  }
};

// A frame is unscorable when its ground truth marks the target absent
// (all-zero box) or carries a degenerate extent.
inline bool gt_usable(const BoundingBox& gt) {
  return !gt.absent() && gt.w > 0 && gt.h > 0;
}

enum class GtSource { Visible, MaxFused };

namespace detail {

struct FrameScores {
  std::vector<double> center_err;
  std::vector<double> norm_err;
  std::vector<double> iou;
  int64_t excluded = 0;
};

// Pools per-frame scores over all sequences. A frame enters the denominator
// iff its visible ground truth is usable; with MaxFused a usable thermal
// annotation adds a second candidate and the better score wins. Gating both
// sources on the same frame set keeps MPR >= PR and MSR >= SR exact.
inline FrameScores collect_scores(const std::vector<SequenceRecord>& records,
                                  GtSource source) {
  FrameScores fs;
  for (const SequenceRecord& r : records) {
    r.validate();
    for (size_t i = 0; i < r.pred.size(); ++i) {
      const BoundingBox& gv = r.gt_visible[i];
      if (!gt_usable(gv)) {
        fs.excluded++;
        continue;
      }
      double ce = center_error_px(r.pred[i], gv);
      double ne = norm_center_error(r.pred[i], gv);
      double ov = box_iou(r.pred[i], gv);
      if (source == GtSource::MaxFused && r.has_thermal_gt() &&
          gt_usable(r.gt_thermal[i])) {
        const BoundingBox& gti = r.gt_thermal[i];
        ce = std::min(ce, center_error_px(r.pred[i], gti));
        ne = std::min(ne, norm_center_error(r.pred[i], gti));
        ov = std::max(ov, box_iou(r.pred[i], gti));
      }
      fs.center_err.push_back(ce);
      fs.norm_err.push_back(ne);
      fs.iou.push_back(ov);
    }
  }
  return fs;
}

inline MetricCurve precision_from(const std::vector<double>& errs,
                                  const std::vector<double>& grid, double rep,
                                  int64_t excluded) {
  if (errs.empty())
    fail(ErrorKind::Data, "empty evaluation: no valid frames after exclusion");
  MetricCurve c;
  c.thresholds = grid;
  c.frames_used = static_cast<int64_t>(errs.size());
  c.frames_excluded = excluded;
  for (double tau : grid) {
    int64_t hit = 0;
    for (double e : errs)
      if (e <= tau) ++hit;
    c.values.push_back(static_cast<double>(hit) / static_cast<double>(errs.size()));
  }
  for (size_t i = 0; i < grid.size(); ++i)
    if (std::abs(grid[i] - rep) < 1e-9) c.representative = c.values[i];
  return c;
}

inline MetricCurve success_from(const std::vector<double>& ious,
                                const std::vector<double>& grid, int64_t excluded) {
  if (ious.empty())
    fail(ErrorKind::Data, "empty evaluation: no valid frames after exclusion");
  MetricCurve c;
  c.thresholds = grid;
  c.frames_used = static_cast<int64_t>(ious.size());
  c.frames_excluded = excluded;
  double acc = 0.0;
  for (double theta : grid) {
    int64_t hit = 0;
    for (double v : ious)
      if (v > theta) ++hit;  // strict >
    double frac = static_cast<double>(hit) / static_cast<double>(ious.size());
    c.values.push_back(frac);
    acc += frac;
  }
  c.representative = acc / static_cast<double>(grid.size());  // mean = AUC
  return c;
}

}  // namespace detail

// LasHeR-style metrics against the visible ground truth.
inline MetricCurve precision_curve(const std::vector<SequenceRecord>& records,
                                   const EvalGrids& g = {},
                                   GtSource source = GtSource::Visible) {
  auto fs = detail::collect_scores(records, source);
  return detail::precision_from(fs.center_err, g.precision_grid(), g.precision_rep,
                                fs.excluded);
}

inline MetricCurve norm_precision_curve(const std::vector<SequenceRecord>& records,
                                        const EvalGrids& g = {},
                                        GtSource source = GtSource::Visible) {
  auto fs = detail::collect_scores(records, source);
  return detail::precision_from(fs.norm_err, g.norm_grid(), g.norm_rep, fs.excluded);
}

inline MetricCurve success_curve(const std::vector<SequenceRecord>& records,
                                 const EvalGrids& g = {},
                                 GtSource source = GtSource::Visible) {
  auto fs = detail::collect_scores(records, source);
  return detail::success_from(fs.iou, g.success_grid(), fs.excluded);
}

// Per-frame best against either ground truth. Falls back to single-GT scoring
// (with a warning flag) when thermal annotations are missing.
struct MaxFuseResult {
  MetricCurve mpr;
  MetricCurve msr;
  bool fell_back = false;
};

inline MaxFuseResult max_fuse(const std::vector<SequenceRecord>& records,
                              const EvalGrids& g = {}) {
  MaxFuseResult out;
  for (const SequenceRecord& r : records)
    if (!r.has_thermal_gt()) out.fell_back = true;
  out.mpr = precision_curve(records, g, GtSource::MaxFused);
  out.msr = success_curve(records, g, GtSource::MaxFused);
  return out;
}

// Attribute-wise tables: metrics over the subset of sequences carrying each
// flag. Attributes with an empty subset are reported absent, not zero.
struct AttributeTable {
  std::vector<std::string> schema;
  std::map<std::string, MetricCurve> pr;
  std::map<std::string, MetricCurve> sr;
};

inline AttributeTable attribute_breakdown(const std::vector<SequenceRecord>& records,
                                          const std::vector<std::string>& schema,
                                          const EvalGrids& g = {},
                                          GtSource source = GtSource::Visible) {
  AttributeTable table;
  table.schema = schema;
  for (const SequenceRecord& r : records)
    if (!r.attributes.empty() && r.attributes.size() != schema.size())
      fail(ErrorKind::Data, "sequence " + r.name + ": attribute vector length " +
                                std::to_string(r.attributes.size()) +
                                " does not match schema size " +
                                std::to_string(schema.size()));
  for (size_t a = 0; a < schema.size(); ++a) {
    std::vector<SequenceRecord> subset;
    for (const SequenceRecord& r : records)
      if (!r.attributes.empty() && r.attributes[a]) subset.push_back(r);
    if (subset.empty()) continue;
    table.pr[schema[a]] = precision_curve(subset, g, source);
    table.sr[schema[a]] = success_curve(subset, g, source);
  }
  return table;
}

}  // namespace m3pt
