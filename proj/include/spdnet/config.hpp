#pragma once

// Run configuration: flat `key = value` text grouped in [sections]. Every key
// mirrors a RunConfig field; see write_config() for the full list.

#include "spdnet/data.hpp"
#include "spdnet/network.hpp"
#include "spdnet/optim.hpp"

#include <string>

namespace spdnet {

struct DataConfig {
  std::string train;  // SPDD file; empty = generate the synthetic benchmark
  std::string test;   // SPDD file; empty = hold out from the synthetic set
  SynthOptions synth;
  int n_train = 200;  // synthetic train/test split point
};

struct RunConfig {
  NetworkConfig network;
  OptimizerConfig optim;
  DataConfig data;
  std::string out_dir = "run";
  int flush_interval = 1;        // epochs between metrics flushes
  int checkpoint_interval = 50;  // epochs between checkpoints; 0 = final only

  // Throws ConfigError (or UnsupportedDepthError) naming the field.
  void validate() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string write_config(const RunConfig& config);
void save_config(const std::string& path, const RunConfig& config);

// Applies one `section.key = value` assignment; used by the parser and for
// command-line overrides.
void set_config_value(RunConfig& config, const std::string& section,
                      const std::string& key, const std::string& value);

}  // namespace spdnet
