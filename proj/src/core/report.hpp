#pragma once

#include <map>
#include <string>

#include "metrics.hpp"

namespace m3pt {

// Everything the eval command computed, ready to render.
struct EvalReport {
  MetricCurve pr, npr, sr;
  bool has_max_fused = false;
  bool max_fuse_fell_back = false;
  MetricCurve mpr, msr;
  AttributeTable attributes;
};

// Writes <out_dir>/curves.csv, <out_dir>/summary.txt and, when attribute data
// exists, <out_dir>/attributes.csv. Output bytes are deterministic.
void export_report(const EvalReport& report, const std::string& out_dir);

// Round-trip helper: reads a curves.csv back into (metric -> curve) form.
std::map<std::string, MetricCurve> read_curves_csv(const std::string& path);

std::string format_summary(const EvalReport& report);

}  // namespace m3pt
