#include "report.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace m3pt {

static void append_curve(std::ostream& os, const std::string& metric,
                         const MetricCurve& c) {
  char buf[160];
  for (size_t i = 0; i < c.thresholds.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f\n", metric.c_str(),
                  c.thresholds[i], c.values[i]);
    os << buf;
  }
}

std::string format_summary(const EvalReport& r) {
  std::ostringstream os;
  char buf[256];
  os << "PR@20 NPR@0.2 SR-AUC\n";
  std::snprintf(buf, sizeof buf, "%.3f %.3f %.3f\n", r.pr.representative,
                r.npr.representative, r.sr.representative);
  os << buf;
  std::snprintf(buf, sizeof buf, "frames_used=%lld frames_excluded=%lld\n",
                static_cast<long long>(r.pr.frames_used),
                static_cast<long long>(r.pr.frames_excluded));
  os << buf;
  if (r.has_max_fused) {
    os << "MPR@20 MSR-AUC\n";
    std::snprintf(buf, sizeof buf, "%.3f %.3f\n", r.mpr.representative,
                  r.msr.representative);
    os << buf;
    if (r.max_fuse_fell_back)
      os << "warning: thermal ground truth missing for some sequences; "
            "max-fused metrics fell back to visible-only scoring there\n";
  }
  return os.str();
}

void export_report(const EvalReport& report, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  std::ofstream curves(out_dir + "/curves.csv");
  if (!curves) fail(ErrorKind::Io, "cannot write " + out_dir + "/curves.csv");
  curves << "metric,threshold,value\n";
  append_curve(curves, "PR", report.pr);
  append_curve(curves, "NPR", report.npr);
  append_curve(curves, "SR", report.sr);
  if (report.has_max_fused) {
    append_curve(curves, "MPR", report.mpr);
    append_curve(curves, "MSR", report.msr);
  }
  if (!curves) fail(ErrorKind::Io, "write failed for curves.csv");
  curves.close();

  std::ofstream summary(out_dir + "/summary.txt");
  if (!summary) fail(ErrorKind::Io, "cannot write " + out_dir + "/summary.txt");
  summary << format_summary(report);
  summary.close();

  if (!report.attributes.pr.empty()) {
    std::ofstream attrs(out_dir + "/attributes.csv");
    if (!attrs) fail(ErrorKind::Io, "cannot write " + out_dir + "/attributes.csv");
    attrs << "attribute,PR_rep,SR_rep,frames\n";
    char buf[160];
    for (const std::string& name : report.attributes.schema) {
      auto it = report.attributes.pr.find(name);
      if (it == report.attributes.pr.end()) continue;  // empty subsets stay absent
      const MetricCurve& sr = report.attributes.sr.at(name);
      std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%lld\n", name.c_str(),
                    it->second.representative, sr.representative,
                    static_cast<long long>(it->second.frames_used));
      attrs << buf;
    }
  }
}

std::map<std::string, MetricCurve> read_curves_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::Io, "cannot open " + path);
  std::map<std::string, MetricCurve> out;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string metric, tok;
    std::getline(ls, metric, ',');
    MetricCurve& c = out[metric];
    std::getline(ls, tok, ',');
    c.thresholds.push_back(std::stod(tok));
    std::getline(ls, tok, ',');
    c.values.push_back(std::stod(tok));
  }
  return out;
}

}  // namespace m3pt
