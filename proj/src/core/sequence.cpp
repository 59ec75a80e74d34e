#include "sequence.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace m3pt {

namespace fs = std::filesystem;

Tensor<float> read_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot open image " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6" && magic != "P5")
    fail(ErrorKind::Io, "unsupported image format in " + path + " (want P5/P6)");
  auto next_token = [&is, &path]() {
    std::string tok;
    while (is >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(is, rest);
        continue;
      }
      return tok;
    }
    fail(ErrorKind::Io, "truncated image header in " + path);
  };
  int64_t w = std::stoll(next_token());
  int64_t h = std::stoll(next_token());
  int64_t maxval = std::stoll(next_token());
  if (maxval != 255) fail(ErrorKind::Io, "only 8-bit images supported: " + path);
  is.get();  // single whitespace after maxval
  int64_t channels = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> raw(static_cast<size_t>(w * h * channels));
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (is.gcount() != static_cast<std::streamsize>(raw.size()))
    fail(ErrorKind::Io, "truncated pixel data in " + path);
  Tensor<float> img({h, w, 3});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t c = 0; c < 3; ++c) {
        size_t k = static_cast<size_t>((i * w + j) * channels + (channels == 3 ? c : 0));
        img.at(i, j, c) = static_cast<float>(raw[k]) / 255.0f;
      }
  return img;
}

void write_image_ppm(const Tensor<float>& img, const std::string& path) {
  if (img.rank() != 3 || img.dim(2) != 3)
    fail(ErrorKind::Io, "write_image_ppm expects [H, W, 3]");
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
  os << "P6\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
  std::vector<unsigned char> raw(static_cast<size_t>(img.numel()));
  for (int64_t k = 0; k < img.numel(); ++k) {
    float v = std::clamp(img[k], 0.0f, 1.0f);
    raw[static_cast<size_t>(k)] =
        static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  os.write(reinterpret_cast<const char*>(raw.data()),
           static_cast<std::streamsize>(raw.size()));
  if (!os) fail(ErrorKind::Io, "write failed for " + path);
}

std::vector<BoundingBox> read_box_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::Io, "cannot open " + path);
  std::vector<BoundingBox> boxes;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    BoundingBox b;
    if (!(ls >> b.x >> b.y >> b.w >> b.h))
      fail(ErrorKind::Data, path + ":" + std::to_string(lineno) +
                                ": expected x,y,w,h");
    boxes.push_back(b);
  }
  return boxes;
}

void write_box_file(const std::vector<BoundingBox>& boxes, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
  char buf[128];
  for (const BoundingBox& b : boxes) {
    std::snprintf(buf, sizeof buf, "%.2f,%.2f,%.2f,%.2f\n", b.x, b.y, b.w, b.h);
    os << buf;
  }
  if (!os) fail(ErrorKind::Io, "write failed for " + path);
}

std::vector<int> read_attribute_file(const std::string& path, size_t expected) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::Io, "cannot open " + path);
  std::vector<int> flags;
  int v;
  while (is >> v) {
    if (v != 0 && v != 1)
      fail(ErrorKind::Data, path + ": attribute flags must be 0 or 1");
    flags.push_back(v);
  }
  if (expected != 0 && flags.size() != expected)
    fail(ErrorKind::Data, path + ": " + std::to_string(flags.size()) +
                              " attribute flags, schema expects " +
                              std::to_string(expected));
  return flags;
}

static std::vector<std::string> list_frames(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    if (ext == ".ppm" || ext == ".pgm") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

IngestedSequence ingest_sequence(const std::string& dir,
                                 const std::vector<std::string>& attribute_schema) {
  if (!fs::is_directory(dir)) fail(ErrorKind::Data, "no such sequence directory: " + dir);
  std::string vis_dir = dir + "/visible";
  std::string ir_dir = dir + "/infrared";
  if (!fs::is_directory(vis_dir)) fail(ErrorKind::Data, dir + ": missing visible/ directory");
  if (!fs::is_directory(ir_dir)) fail(ErrorKind::Data, dir + ": missing infrared/ directory");

  IngestedSequence seq;
  seq.record.name = fs::path(dir).filename().string();
  seq.visible_frames = list_frames(vis_dir);
  seq.infrared_frames = list_frames(ir_dir);
  if (seq.visible_frames.size() != seq.infrared_frames.size())
    fail(ErrorKind::Data, dir + ": frame count mismatch visible=" +
                              std::to_string(seq.visible_frames.size()) + " thermal=" +
                              std::to_string(seq.infrared_frames.size()));
  if (seq.visible_frames.empty()) fail(ErrorKind::Data, dir + ": no frames");

  std::string vis_gt = dir + "/visible.txt";
  if (!fs::exists(vis_gt)) fail(ErrorKind::Data, dir + ": missing visible.txt ground truth");
  seq.record.gt_visible = read_box_file(vis_gt);
  if (seq.record.gt_visible.size() != seq.visible_frames.size())
    fail(ErrorKind::Data, dir + ": frame count mismatch frames=" +
                              std::to_string(seq.visible_frames.size()) + " gt=" +
                              std::to_string(seq.record.gt_visible.size()));

  std::string ir_gt = dir + "/infrared.txt";
  if (fs::exists(ir_gt)) {
    seq.record.gt_thermal = read_box_file(ir_gt);
    if (seq.record.gt_thermal.size() != seq.visible_frames.size())
      fail(ErrorKind::Data, dir + ": frame count mismatch frames=" +
                                std::to_string(seq.visible_frames.size()) +
                                " infrared gt=" +
                                std::to_string(seq.record.gt_thermal.size()));
  }

  std::string attr = dir + "/attributes.txt";
  if (fs::exists(attr))
    seq.record.attributes = read_attribute_file(attr, attribute_schema.size());
  return seq;
}

std::vector<std::string> BenchmarkManifest::attribute_schema() const {
  if (schema_name == "lasher") return lasher_attributes();
  if (schema_name == "rgbt234") return rgbt234_attributes();
  return {};
}

BenchmarkManifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::Io, "cannot open manifest " + path);
  BenchmarkManifest m;
  m.schema_name = "none";
  std::string base = fs::path(path).parent_path().string();
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t h = line.find('#');
    if (h != std::string::npos) line.erase(h);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t'))
      line.pop_back();
    size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    line = line.substr(start);
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::Data, path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    if (key == "schema") {
      if (val != "lasher" && val != "rgbt234" && val != "none")
        fail(ErrorKind::Data, path + ": unknown schema '" + val + "'");
      m.schema_name = val;
    } else if (key == "seq") {
      m.sequence_dirs.push_back(base.empty() ? val : base + "/" + val);
    } else {
      fail(ErrorKind::Data, path + ":" + std::to_string(lineno) +
                                ": unknown manifest key '" + key + "'");
    }
  }
  if (m.sequence_dirs.empty()) fail(ErrorKind::Data, path + ": manifest lists no sequences");
  return m;
}

Tensor<float> crop_resize(const Tensor<float>& img, double cx, double cy,
                          double side, int64_t out_h, int64_t out_w) {
  int64_t h = img.dim(0), w = img.dim(1);
  // mean color pads out-of-frame samples
  double mean[3] = {0, 0, 0};
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t c = 0; c < 3; ++c) mean[c] += img.at(i, j, c);
  for (double& mc : mean) mc /= static_cast<double>(h * w);

  Tensor<float> out({out_h, out_w, 3});
  double x0 = cx - side / 2.0, y0 = cy - side / 2.0;
  double sx = side / static_cast<double>(out_w);
  double sy = side / static_cast<double>(out_h);
  auto sample = [&](double yy, double xx, int64_t c) -> double {
    if (xx < 0 || yy < 0 || xx > static_cast<double>(w - 1) ||
        yy > static_cast<double>(h - 1))
      return mean[c];
    int64_t xi = static_cast<int64_t>(xx), yi = static_cast<int64_t>(yy);
    int64_t xi1 = std::min(xi + 1, w - 1), yi1 = std::min(yi + 1, h - 1);
    double fx = xx - static_cast<double>(xi), fy = yy - static_cast<double>(yi);
    double a = img.at(yi, xi, c) * (1 - fx) + img.at(yi, xi1, c) * fx;
    double b = img.at(yi1, xi, c) * (1 - fx) + img.at(yi1, xi1, c) * fx;
    return a * (1 - fy) + b * fy;
  };
  for (int64_t i = 0; i < out_h; ++i)
    for (int64_t j = 0; j < out_w; ++j) {
      double yy = y0 + (static_cast<double>(i) + 0.5) * sy - 0.5;
      double xx = x0 + (static_cast<double>(j) + 0.5) * sx - 0.5;
      for (int64_t c = 0; c < 3; ++c)
        out.at(i, j, c) = static_cast<float>(sample(yy, xx, c));
    }
  return out;
}

}  // namespace m3pt
