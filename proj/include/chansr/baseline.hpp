#pragma once

#include <vector>

#include "chansr/characteristics.hpp"

namespace chansr {

enum class InterpMethod { Nearest, Bicubic };

/// Single-map LR -> HR interpolation baseline. Nearest replicates pixels;
/// bicubic is separable Catmull-Rom (a = -0.5) with edge clamping. LOS maps
/// only accept nearest.
std::vector<float> baseline_interpolate(const std::vector<float>& lr,
                                        int lr_size, int scale,
                                        InterpMethod method,
                                        const CharacteristicSpec& spec);

}  // namespace chansr
