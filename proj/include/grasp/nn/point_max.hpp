#pragma once

#include <cstdint>
#include <vector>

#include "grasp/nn/tensor.hpp"

namespace grasp::nn {

/// For every cloud b and column f, the point p maximizing x_p . w_f, where
/// input is batch x points x in and weight is in x out. Scores are compared
/// in double precision and ties go to the lowest point index, so the choice
/// does not depend on point order or on the backend used for the coarse pass.
/// Returns batch x out indices.
template <typename T>
std::vector<std::uint32_t> argmax_points(const Tensor<T>& input, const MatrixRM<T>& weight);

/// Whether the bf16 tile backend is compiled in and usable on this machine.
bool tile_backend_available();

/// Tests use this to compare the tile backend against the plain one.
void set_tile_backend_enabled(bool enabled);

}  // namespace grasp::nn
