#pragma once

#include <string>

#include "loss.hpp"
#include "metrics.hpp"
#include "tracker_config.hpp"
#include "train.hpp"

namespace m3pt {

// Single flat key=value configuration covering architecture, training and
// evaluation choices. Unknown keys are rejected; all diagnostics for a file
// are aggregated into one error. The hash is computed over the canonical
// serialized form, so semantically equal configs hash equal.
struct RunConfig {
  TrackerConfig tracker;
  TrainConfig train;
  LossWeights loss;
  EvalGrids eval;
  std::string weights_path;  // optional default archive for track

  std::string canonical_text() const;
  uint64_t hash() const;
  std::string hash_hex() const;
};

RunConfig parse_config_text(const std::string& text, const std::string& origin);
RunConfig parse_config_file(const std::string& path);
void apply_overrides(RunConfig& cfg,
                     const std::vector<std::pair<std::string, std::string>>& sets);
void write_config_file(const RunConfig& cfg, const std::string& path);

}  // namespace m3pt
