#pragma once

// Model file: "SPDM", version u32, the NetworkConfig block, then every
// parameter tensor as (rows u32, cols u32, row-major f64). Little-endian.
// Tensor order: backbone weights, then per stage W_e1 and W_e2, then per
// stage the classifier weight (C x d_down^2) and bias (C x 1).

#include "spdnet/network.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace spdnet {

inline constexpr std::uint32_t kModelFormatVersion = 1;

struct Checkpoint {
  NetworkConfig config;
  ModelState state;
};

std::vector<std::uint8_t> encode_model(const NetworkConfig& config,
                                       const ModelState& state);
// Throws FormatError (with byte offset) on a malformed buffer.
Checkpoint decode_model(const std::vector<std::uint8_t>& bytes);

void save_model(const std::string& path, const NetworkConfig& config,
                const ModelState& state);
Checkpoint load_model(const std::string& path);

}  // namespace spdnet
