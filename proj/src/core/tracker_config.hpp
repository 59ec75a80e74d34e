#pragma once

#include <set>
#include <string>

#include "foundation.hpp"

namespace m3pt {

// Architecture choices for the two-stage middle-fusion tracker. The fusion
// location is the number of first-stage blocks N; the second stage holds the
// remaining M = L - N blocks.
struct TrackerConfig {
  FoundationConfig foundation;
  int64_t first_stage_blocks = 10;       // N, the fusion location
  std::set<int64_t> uep_layers = {2, 5, 8};
  int64_t prompt_tokens = 2;             // P per prompt table
  int64_t uep_low_dim = 8;
  int64_t ip_low_dim = 8;
  int64_t mfp_low_dim = 16;
  bool ip_per_direction = false;         // ablation switch: private IP per direction
  double template_factor = 2.0;          // crop scale around target for templates
  double search_factor = 4.0;            // crop scale for search regions

  int64_t second_stage_blocks() const {
    return foundation.num_blocks - first_stage_blocks;
  }

  void validate() const {
    foundation.validate();
    int64_t l = foundation.num_blocks;
    if (first_stage_blocks < 1 || first_stage_blocks > l - 1)
      fail(ErrorKind::Config,
           "first_stage_blocks=" + std::to_string(first_stage_blocks) +
               " violates 1 <= N <= L-1 (L=" + std::to_string(l) + ")");
    for (int64_t u : uep_layers)
      if (u < 1 || u > first_stage_blocks)
        fail(ErrorKind::Config, "uep layer " + std::to_string(u) +
                                    " outside 1..N (N=" +
                                    std::to_string(first_stage_blocks) + ")");
    if (prompt_tokens < 0) fail(ErrorKind::Config, "prompt_tokens must be >= 0");
    if (uep_low_dim < 1 || ip_low_dim < 1 || mfp_low_dim < 1)
      fail(ErrorKind::Config, "prompter low dims must be >= 1");
  }
};

}  // namespace m3pt
