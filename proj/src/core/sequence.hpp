#pragma once

#include <string>
#include <vector>

#include "box.hpp"
#include "metrics.hpp"
#include "tensor.hpp"

namespace m3pt {

// Binary PPM (P6) / PGM (P5), 8-bit. Pixels load as floats in [0, 1]; PGM
// replicates the gray channel so every frame is [H, W, 3].
Tensor<float> read_image(const std::string& path);
void write_image_ppm(const Tensor<float>& img, const std::string& path);

// One "x,y,w,h" line per frame; integers or decimals.
std::vector<BoundingBox> read_box_file(const std::string& path);
void write_box_file(const std::vector<BoundingBox>& boxes, const std::string& path);

// Single line of space-separated 0/1 flags.
std::vector<int> read_attribute_file(const std::string& path, size_t expected);

// Sequence directory layout:
//   <dir>/visible/    frame images (sorted by filename)
//   <dir>/infrared/   frame images
//   <dir>/visible.txt            ground truth (required)
//   <dir>/infrared.txt           ground truth (optional)
//   <dir>/attributes.txt         attribute flags (optional)
struct IngestedSequence {
  SequenceRecord record;  // gt + attributes filled; pred empty
  std::vector<std::string> visible_frames;
  std::vector<std::string> infrared_frames;
};

IngestedSequence ingest_sequence(const std::string& dir,
                                 const std::vector<std::string>& attribute_schema);

// Benchmark manifest: "schema=lasher|rgbt234|none" then one "seq=<relpath>"
// per sequence, resolved relative to the manifest location.
struct BenchmarkManifest {
  std::string schema_name;               // lasher, rgbt234 or none
  std::vector<std::string> sequence_dirs;
  std::vector<std::string> attribute_schema() const;
};

BenchmarkManifest read_manifest(const std::string& path);

// Center crop with mean-padding outside the frame, bilinear resize.
Tensor<float> crop_resize(const Tensor<float>& img, double cx, double cy,
                          double side, int64_t out_h, int64_t out_w);

}  // namespace m3pt
