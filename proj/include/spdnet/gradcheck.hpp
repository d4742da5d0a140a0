#pragma once

// Central finite-difference audit of every backward pass.

#include "spdnet/network.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace spdnet {

struct GradcheckOptions {
  std::uint64_t seed = 7;
  int instances = 10;
  double step = 1e-5;
  double layer_tol = 1e-4;
  double model_tol = 1e-3;
  int model_directions = 10;
  // Tiny model for the whole-network directional check.
  NetworkConfig model = [] {
    NetworkConfig c;
    c.backbone = {{8, 6}};
    c.smae_up = 6;
    c.smae_down = 4;
    c.depth = 5;
    return c;
  }();
};

struct GradcheckEntry {
  std::string name;
  std::string mode;  // "exact", "paper" or "alt" (alternative Phi)
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool fatal = true;  // paper and alt rows are informational

  bool passed() const { return max_rel_err < tol; }
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;

  bool ok() const;  // every fatal entry passed
  std::string format() const;
};

// |a - b| / max(|a|, |b|, 1e-12)
double relative_error(double a, double b);

GradcheckReport run_gradcheck(const GradcheckOptions& opts);

}  // namespace spdnet
