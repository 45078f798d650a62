#pragma once

#include "hfcr/gradcheck.hpp"

#include <cstdint>

namespace hfcr {

/// Finite-difference check through the whole model: 2-block encoder with 4
/// channels on 8×8 inputs (2×2 maps), parallel HFFP, all four HFRP branches and
/// the weighted head, on a 2-way 2-shot episode with one query per class.
/// Every trainable parameter is checked, λ₁..λ₄ and log τ included.
GradCheckResult pipeline_gradcheck(std::uint64_t seed, double eps = 1e-4);

}  // namespace hfcr
