#pragma once

// Feature-map rendering for hidden SPD states.

#include "spdnet/manifold.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace spdnet {

// Binary PGM (P5) of |M|, linearly scaled so the largest entry maps to 255.
// An all-zero matrix renders black.
std::vector<std::uint8_t> render_pgm(const Matrix& m);
void write_pgm(const std::string& path, const Matrix& m);

// sum_i M_ii^2 / sum_ij M_ij^2, in [0, 1]. Zero matrix -> 0.
double diagonal_energy(const Matrix& m);

}  // namespace spdnet
